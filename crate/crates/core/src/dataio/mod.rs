//! Exams, ingestion, synthetic phantoms and leakage-safe partitioning.

mod exam;
mod folds;
mod image_io;
mod manifest;
mod metadata;
mod synth;

pub use exam::{Exam, ExamLabel, GrayImage, LesionKind, Malignancy, Mask, RoiFinding, Side, SplitOrigin, View};
pub use folds::{carve_validation, make_folds, FoldAssignment, FoldOptions};
pub use image_io::{read_gray_png, read_mask_png, write_gray_png, write_mask_png};
pub use manifest::{load_manifest, write_dataset, DatasetFiles};
pub use metadata::{load_metadata, BwcPolicy, IngestOptions};
pub use synth::{synth_dataset, synth_exam, SynthExam, SynthParams};
