//! On-disk layout of a generated dataset: PNG images and masks, a JSON
//! manifest and an equivalent metadata CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image_io::{read_gray_png, read_mask_png, write_gray_png, write_mask_png};
use super::{Exam, ExamLabel, LesionKind, Malignancy, RoiFinding, Side, SplitOrigin, SynthExam, View};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRoi {
    pub view: View,
    pub mask_file: String,
    pub kind: LesionKind,
    pub malignancy: Malignancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub exam_id: String,
    pub patient_id: String,
    pub side: Side,
    pub label: ExamLabel,
    pub split: SplitOrigin,
    pub images: BTreeMap<View, String>,
    pub rois: Vec<ManifestRoi>,
    /// Views that received the malignancy cue, synthetic data only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cue_views: Vec<View>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFiles {
    pub manifest: PathBuf,
    pub metadata_csv: PathBuf,
    pub n_exams: usize,
    pub n_images: usize,
    pub n_masks: usize,
}

/// Writes `images/`, `masks/`, `manifest.json` and `metadata.csv` under `dir`.
pub fn write_dataset(dir: &Path, exams: &[SynthExam]) -> Result<DatasetFiles> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut entries = Vec::with_capacity(exams.len());
    let mut csv = csv::Writer::from_path(dir.join("metadata.csv"))?;
    csv.write_record(["exam_id", "patient_id", "side", "view", "image_file", "label", "split", "mask_file", "kind", "malignancy"])?;
    let (mut n_images, mut n_masks) = (0, 0);
    for s in exams {
        let e = &s.exam;
        let mut images = BTreeMap::new();
        for (view, img) in &e.images {
            let rel = format!("images/{}_{view}.png", e.exam_id);
            write_gray_png(&dir.join(&rel), img)?;
            images.insert(*view, rel);
            n_images += 1;
        }
        let mut rois = Vec::new();
        for (i, roi) in e.rois.iter().enumerate() {
            let rel = format!("masks/{}_{}_{i}.png", e.exam_id, roi.view);
            write_mask_png(&dir.join(&rel), &roi.mask)?;
            rois.push(ManifestRoi { view: roi.view, mask_file: rel, kind: roi.kind, malignancy: roi.malignancy });
            n_masks += 1;
        }
        let label = enum_str(&e.label)?;
        let split = enum_str(&e.split_origin)?;
        for (view, file) in &images {
            let view_s = view.to_string();
            let side = e.side.to_string();
            let base =
                [e.exam_id.as_str(), e.patient_id.as_str(), side.as_str(), view_s.as_str(), file.as_str(), label.as_str(), split.as_str()];
            csv.write_record(base.iter().copied().chain(["", "", ""]))?;
            for r in rois.iter().filter(|r| r.view == *view) {
                let (kind, mal) = (enum_str(&r.kind)?, enum_str(&r.malignancy)?);
                csv.write_record(base.iter().copied().chain([r.mask_file.as_str(), kind.as_str(), mal.as_str()]))?;
            }
        }
        entries.push(ManifestEntry {
            exam_id: e.exam_id.clone(),
            patient_id: e.patient_id.clone(),
            side: e.side,
            label: e.label,
            split: e.split_origin,
            images,
            rois,
            cue_views: View::BOTH.into_iter().filter(|v| s.cue_views[v.index()]).collect(),
        });
    }
    csv.flush()?;
    let manifest = dir.join("manifest.json");
    std::fs::write(&manifest, serde_json::to_string_pretty(&entries)? + "\n")?;
    Ok(DatasetFiles { manifest, metadata_csv: dir.join("metadata.csv"), n_exams: exams.len(), n_images, n_masks })
}

fn enum_str<T: Serialize>(v: &T) -> Result<String> {
    match serde_json::to_value(v)? {
        serde_json::Value::String(s) => Ok(s),
        other => Err(Error::validation(format!("unexpected enum encoding {other}"))),
    }
}

/// Reads a manifest written by [`write_dataset`]; paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<Exam>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest { path: path.to_path_buf(), reason: e.to_string() })?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let root = path.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|m| {
            let mut images = BTreeMap::new();
            for (view, file) in &m.images {
                images.insert(*view, read_gray_png(&root.join(file))?);
            }
            let rois = m
                .rois
                .iter()
                .map(|r| {
                    Ok(RoiFinding { view: r.view, mask: read_mask_png(&root.join(&r.mask_file))?, kind: r.kind, malignancy: r.malignancy })
                })
                .collect::<Result<Vec<_>>>()?;
            let exam =
                Exam { exam_id: m.exam_id, patient_id: m.patient_id, side: m.side, images, rois, label: m.label, split_origin: m.split };
            exam.validate()?;
            Ok(exam)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{load_metadata, synth_dataset, IngestOptions, SynthParams};

    #[test]
    fn round_trip_through_manifest_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = SynthParams {
            n_exams: 4,
            image_height: 64,
            image_width: 64,
            mass_radius: (4.0, 5.0),
            calc_cluster_radius: 5.0,
            seed: 3,
            ..Default::default()
        };
        let exams = synth_dataset(&p).unwrap();
        let files = write_dataset(dir.path(), &exams).unwrap();
        assert_eq!((files.n_exams, files.n_images, files.n_masks), (4, 8, 8));

        let back = load_manifest(&files.manifest).unwrap();
        let orig: Vec<Exam> = exams.iter().map(|s| s.exam.clone()).collect();
        assert_eq!(back, orig);

        let via_csv = load_metadata(&files.metadata_csv, dir.path(), IngestOptions::od()).unwrap();
        assert_eq!(via_csv, orig);
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_dataset(dir.path(), &[]).unwrap();
        assert!(load_manifest(&files.manifest).unwrap().is_empty());
    }

    #[test]
    fn missing_manifest_is_ingest_error() {
        assert!(matches!(load_manifest(Path::new("/nonexistent/manifest.json")), Err(Error::Ingest { .. })));
    }
}
