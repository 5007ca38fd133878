//! Ground-truth files: a frame-label CSV plus optional per-frame PGM masks
//! (nonzero samples mark anomalous pixels).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Mask};
use crate::gmm::Verdict;

use super::pgm;

/// Mask filename for a frame index, shared by writers and readers.
pub fn mask_filename(frame_index: usize) -> String {
    format!("{frame_index:06}.pgm")
}

/// Write `frame_index,label` lines.
pub fn write_labels(path: &Path, labels: &[Verdict]) -> Result<()> {
    let mut out = String::new();
    for (i, label) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{label}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Write non-blank masks as `NNNNNN.pgm` under `dir`.
pub fn write_masks(dir: &Path, masks: &[Mask]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    for (i, mask) in masks.iter().enumerate() {
        if !mask.is_blank() {
            pgm::write(
                &dir.join(mask_filename(i)),
                mask.width(),
                mask.height(),
                &mask.to_bytes(),
            )?;
        }
    }
    Ok(())
}

/// Read labels from `gt_path`; when a sibling `gt_masks` directory exists,
/// per-frame masks are loaded from it (absent files mean a blank mask).
///
/// `frame_dims` is the expected mask size; a mask of any other size is an
/// error.
pub fn read_ground_truth(gt_path: &Path, frame_dims: (usize, usize)) -> Result<GroundTruth> {
    let text = fs::read_to_string(gt_path)
        .map_err(|e| Error::io(format!("reading {}", gt_path.display()), e))?;
    let mut labels_by_index: Vec<(usize, Verdict)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (index_str, label_str) = line.split_once(',').ok_or_else(|| {
            Error::GroundTruth(format!(
                "{}:{}: expected `frame_index,label`",
                gt_path.display(),
                lineno + 1
            ))
        })?;
        let index: usize = index_str.trim().parse().map_err(|_| {
            Error::GroundTruth(format!(
                "{}:{}: bad frame index `{index_str}`",
                gt_path.display(),
                lineno + 1
            ))
        })?;
        let label: Verdict = label_str.trim().parse().map_err(|_| {
            Error::GroundTruth(format!(
                "{}:{}: bad label `{label_str}`",
                gt_path.display(),
                lineno + 1
            ))
        })?;
        labels_by_index.push((index, label));
    }
    if labels_by_index.is_empty() {
        return Err(Error::GroundTruth(format!(
            "{}: no labels",
            gt_path.display()
        )));
    }
    labels_by_index.sort_by_key(|(i, _)| *i);
    for (pos, (index, _)) in labels_by_index.iter().enumerate() {
        if *index != pos {
            return Err(Error::GroundTruth(format!(
                "{}: frame indices must be consecutive from 0 (missing or duplicate {pos})",
                gt_path.display()
            )));
        }
    }
    let labels: Vec<Verdict> = labels_by_index.into_iter().map(|(_, l)| l).collect();

    let mask_dir = gt_path
        .parent()
        .map(|p| p.join("gt_masks"))
        .filter(|p| p.is_dir());
    let masks = match mask_dir {
        None => None,
        Some(dir) => {
            let (w, h) = frame_dims;
            let mut masks = Vec::with_capacity(labels.len());
            for i in 0..labels.len() {
                let path = dir.join(mask_filename(i));
                if path.is_file() {
                    let img = pgm::read(&path)?;
                    if img.width != w || img.height != h {
                        return Err(Error::GroundTruth(format!(
                            "{}: mask is {}x{}, frames are {w}x{h}",
                            path.display(),
                            img.width,
                            img.height
                        )));
                    }
                    masks.push(Mask::from_nonzero_bytes(w, h, &img.data)?);
                } else {
                    masks.push(Mask::empty(w, h));
                }
            }
            Some(masks)
        }
    };
    let gt = GroundTruth { labels, masks };
    gt.validate()?;
    Ok(gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        let labels = vec![Verdict::Normal, Verdict::Abnormal, Verdict::Normal];
        write_labels(&path, &labels).unwrap();
        let gt = read_ground_truth(&path, (8, 8)).unwrap();
        assert_eq!(gt.labels, labels);
        assert!(gt.masks.is_none());
    }

    #[test]
    fn masks_round_trip_with_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let gt_path = dir.path().join("gt.csv");
        let labels = vec![Verdict::Normal, Verdict::Abnormal];
        write_labels(&gt_path, &labels).unwrap();
        let mut abnormal_mask = Mask::empty(6, 4);
        abnormal_mask.set(2, 1, true);
        abnormal_mask.set(3, 3, true);
        let masks = vec![Mask::empty(6, 4), abnormal_mask.clone()];
        write_masks(&dir.path().join("gt_masks"), &masks).unwrap();
        let gt = read_ground_truth(&gt_path, (6, 4)).unwrap();
        let loaded = gt.masks.unwrap();
        assert!(loaded[0].is_blank());
        assert_eq!(loaded[1], abnormal_mask);
    }

    #[test]
    fn rejects_gaps_in_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        fs::write(&path, "0,normal\n2,abnormal\n").unwrap();
        assert!(read_ground_truth(&path, (4, 4)).is_err());
    }

    #[test]
    fn rejects_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        fs::write(&path, "0,weird\n").unwrap();
        let err = read_ground_truth(&path, (4, 4)).unwrap_err();
        assert!(err.to_string().contains("weird"));
    }

    #[test]
    fn rejects_mask_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let gt_path = dir.path().join("gt.csv");
        fs::write(&gt_path, "0,abnormal\n").unwrap();
        let mask_dir = dir.path().join("gt_masks");
        fs::create_dir(&mask_dir).unwrap();
        pgm::write(&mask_dir.join(mask_filename(0)), 3, 3, &[255; 9]).unwrap();
        assert!(read_ground_truth(&gt_path, (6, 4)).is_err());
    }
}
