//! File formats and ingestion: PGM images, frame directories, ground truth.

pub mod gt;
pub mod pgm;
pub mod sequence;

pub use sequence::{glob_match, load_sequence, save_frame};
