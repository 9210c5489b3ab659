use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image_io::{read_gray_png, read_mask_png};
use super::{Exam, ExamLabel, GrayImage, LesionKind, Malignancy, RoiFinding, Side, SplitOrigin, View};
use crate::error::{Error, Result};

/// What to do with exams labeled benign-without-callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BwcPolicy {
    /// Cross-validation protocol.
    Drop,
    /// Original-division protocol.
    AsBenign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub bwc: BwcPolicy,
    pub require_two_views: bool,
}

impl IngestOptions {
    pub fn cv() -> Self {
        Self { bwc: BwcPolicy::Drop, require_two_views: true }
    }

    pub fn od() -> Self {
        Self { bwc: BwcPolicy::AsBenign, require_two_views: true }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    exam_id: String,
    patient_id: String,
    side: String,
    view: String,
    image_file: String,
    label: String,
    #[serde(default)]
    split: String,
    #[serde(default)]
    mask_file: String,
    #[serde(default)]
    kind: String,
    #[serde(default)]
    malignancy: String,
}

struct Pending {
    exam: Exam,
    csv_label: ExamLabel,
    image_files: HashMap<View, String>,
}

/// Reads the metadata CSV, one row per image, repeated once per ROI.
///
/// Rows sharing `(exam_id, view)` must name the same image file; the extra
/// rows only contribute ROIs. Paths are resolved against `image_root`.
pub fn load_metadata(csv_path: &Path, image_root: &Path, opts: IngestOptions) -> Result<Vec<Exam>> {
    let file = std::fs::File::open(csv_path).map_err(|e| Error::Ingest { path: csv_path.to_path_buf(), reason: e.to_string() })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    let mut image_cache: HashMap<String, GrayImage> = HashMap::new();

    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::CsvRow { line, reason: e.to_string() })?;
        let side: Side = row.side.parse()?;
        let view: View = row.view.parse()?;
        let label: ExamLabel = row.label.parse()?;
        let split: SplitOrigin = row.split.parse()?;

        let entry = pending.entry(row.exam_id.clone()).or_insert_with(|| {
            order.push(row.exam_id.clone());
            Pending {
                exam: Exam {
                    exam_id: row.exam_id.clone(),
                    patient_id: row.patient_id.clone(),
                    side,
                    images: BTreeMap::new(),
                    rois: Vec::new(),
                    label,
                    split_origin: split,
                },
                csv_label: label,
                image_files: HashMap::new(),
            }
        });
        if entry.exam.patient_id != row.patient_id || entry.exam.side != side {
            return Err(Error::validation(format!("line {line}: exam {} appears with different patient/side", row.exam_id)));
        }
        if entry.csv_label != label {
            return Err(Error::validation(format!("line {line}: exam {} has conflicting labels", row.exam_id)));
        }
        match entry.image_files.get(&view) {
            Some(f) if *f != row.image_file => {
                return Err(Error::validation(format!("line {line}: duplicate ({}, {view}) with a different image file", row.exam_id)));
            }
            Some(_) => {}
            None => {
                let img = match image_cache.get(&row.image_file) {
                    Some(img) => img.clone(),
                    None => {
                        let img = read_gray_png(&image_root.join(&row.image_file))?;
                        image_cache.insert(row.image_file.clone(), img.clone());
                        img
                    }
                };
                entry.image_files.insert(view, row.image_file.clone());
                entry.exam.images.insert(view, img);
            }
        }
        if !row.mask_file.is_empty() {
            let mask = read_mask_png(&image_root.join(&row.mask_file))?;
            let img = &entry.exam.images[&view];
            if (mask.h, mask.w) != (img.h, img.w) {
                return Err(Error::validation(format!(
                    "line {line}: mask {} is {}x{} but image {} is {}x{}",
                    row.mask_file, mask.h, mask.w, row.image_file, img.h, img.w
                )));
            }
            let kind: LesionKind = row.kind.parse()?;
            let malignancy: Malignancy = row.malignancy.parse()?;
            entry.exam.rois.push(RoiFinding { view, mask, kind, malignancy });
        }
    }

    let mut exams = Vec::with_capacity(order.len());
    for id in order {
        let Pending { mut exam, csv_label, .. } = pending.remove(&id).expect("tracked id");
        if csv_label == ExamLabel::BenignWithoutCallback && !exam.any_malignant_finding() {
            match opts.bwc {
                BwcPolicy::Drop => continue,
                BwcPolicy::AsBenign => exam.label = ExamLabel::Benign,
            }
        }
        // an exam with any malignant finding is malignant
        if exam.any_malignant_finding() {
            exam.label = ExamLabel::Malignant;
        }
        if opts.require_two_views && !exam.has_both_views() {
            continue;
        }
        exam.validate()?;
        exams.push(exam);
    }
    Ok(exams)
}
