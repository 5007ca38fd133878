//! Stage benchmarks comparing the sequential reference paths with the
//! rayon-parallel defaults (identical outputs, different schedules).
//!
//! Run with `cargo bench -p hmof-core`; build with
//! `--no-default-features` to benchmark the pure sequential build.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};

use hmof_core::autoencoder::AutoEncoderParams;
use hmof_core::descriptors::{DescriptorConfig, HmofConfig};
use hmof_core::flow::{estimate_flow, estimate_flow_seq, FlowConfig};
use hmof_core::foreground::{
    estimate_alpha, estimate_alpha_seq, patch_foreground_values, patch_foreground_values_seq,
    BackgroundModel,
};
use hmof_core::frame::{Frame, PatchGrid};
use hmof_core::gmm::{fit_em, EmSettings};
use hmof_core::synth::{generate, SynthConfig};

struct Fixture {
    prev: Frame,
    next: Frame,
    grid: PatchGrid,
    background: BackgroundModel,
    flow_cfg: FlowConfig,
}

fn fixture() -> Fixture {
    let cfg = SynthConfig {
        frames: 40,
        anomaly_window: (20, 39),
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let frames = out.sequence.frames();
    let background = BackgroundModel::new(&frames[0], 0.05).unwrap();
    Fixture {
        prev: frames[30].clone(),
        next: frames[31].clone(),
        grid: PatchGrid::partition(cfg.width, cfg.height, 20).unwrap(),
        background,
        flow_cfg: FlowConfig::default(),
    }
}

fn bench_flow(c: &mut Criterion) {
    let f = fixture();
    let mut group = c.benchmark_group("flow_320x240");
    group.sample_size(10).measurement_time(Duration::from_secs(8));
    group.bench_function("seq", |b| {
        b.iter(|| estimate_flow_seq(black_box(&f.prev), black_box(&f.next), &f.flow_cfg).unwrap())
    });
    #[cfg(feature = "parallel")]
    group.bench_function("par", |b| {
        b.iter(|| estimate_flow(black_box(&f.prev), black_box(&f.next), &f.flow_cfg).unwrap())
    });
    group.finish();
}

fn bench_foreground(c: &mut Criterion) {
    let f = fixture();
    let mut group = c.benchmark_group("foreground_320x240");
    group.bench_function("seq", |b| {
        b.iter(|| {
            let alpha = estimate_alpha_seq(&f.background, black_box(&f.next), 0.1).unwrap();
            patch_foreground_values_seq(&alpha, &f.next, &f.grid).unwrap()
        })
    });
    #[cfg(feature = "parallel")]
    group.bench_function("par", |b| {
        b.iter(|| {
            let alpha = estimate_alpha(&f.background, black_box(&f.next), 0.1).unwrap();
            patch_foreground_values(&alpha, &f.next, &f.grid).unwrap()
        })
    });
    group.finish();
}

fn bench_descriptors(c: &mut Criterion) {
    use hmof_core::descriptors::{extract_patches, extract_patches_seq};
    let f = fixture();
    let field = estimate_flow_seq(&f.prev, &f.next, &f.flow_cfg).unwrap();
    let ids: Vec<usize> = f.grid.ids().collect();
    let desc = DescriptorConfig::Hmof(HmofConfig {
        bins: 8,
        delta: 2.0,
        discard_fraction: 0.05,
    });
    let mut group = c.benchmark_group("descriptors_192_patches");
    group.bench_function("seq", |b| {
        b.iter(|| extract_patches_seq(black_box(&field), &f.grid, &ids, &desc).unwrap())
    });
    #[cfg(feature = "parallel")]
    group.bench_function("par", |b| {
        b.iter(|| extract_patches(black_box(&field), &f.grid, &ids, &desc).unwrap())
    });
    group.finish();
}

fn bench_scoring(c: &mut Criterion) {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let data: Vec<Vec<f64>> = (0..2000)
        .map(|_| (0..4).map(|_| rng.random_range(-0.9..0.9)).collect())
        .collect();
    let model = fit_em(
        &data,
        &EmSettings {
            components: 5,
            ..EmSettings::default()
        },
    )
    .unwrap()
    .model;
    let ae = AutoEncoderParams::init(8, 4, 1).unwrap();
    let features: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let mut v = vec![0.0f64; 8];
            for x in v.iter_mut() {
                *x = rng.random_range(0.0..0.25);
            }
            v
        })
        .collect();
    let mut group = c.benchmark_group("encode_and_score_2000");
    group.bench_function("seq", |b| {
        b.iter(|| {
            let mut scores = Vec::with_capacity(features.len());
            for x in &features {
                let z = ae.encode(black_box(x)).unwrap();
                scores.push(model.score(&z.values).unwrap());
            }
            scores
        })
    });
    #[cfg(feature = "parallel")]
    group.bench_function("par", |b| {
        b.iter(|| {
            let latents = hmof_core::autoencoder::encode_all(&ae, black_box(&features)).unwrap();
            model.score_all(&latents).unwrap()
        })
    });
    group.finish();
}

criterion_group!(stages, bench_flow, bench_foreground, bench_descriptors, bench_scoring);
criterion_main!(stages);
