//! Lesion-centred and background patch sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{write_gray_png, Exam, GrayImage, LesionKind, Malignancy, Mask, RoiFinding, View};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchLabel {
    Background,
    BenignCalcification,
    MalignantCalcification,
    BenignMass,
    MalignantMass,
}

impl PatchLabel {
    pub const ALL: [PatchLabel; 5] = [
        PatchLabel::Background,
        PatchLabel::BenignCalcification,
        PatchLabel::MalignantCalcification,
        PatchLabel::BenignMass,
        PatchLabel::MalignantMass,
    ];

    /// Class index used by the patch head.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub patch_size: usize,
    pub n_lesion: usize,
    pub n_background: usize,
    /// Per-axis displacement bound as a fraction of `patch_size`.
    pub jitter: f64,
    pub max_rejection_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { patch_size: 224, n_lesion: 10, n_background: 10, jitter: 0.10, max_rejection_attempts: 10_000 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("patch_size must be positive"));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::config(format!("jitter {} must lie in [0, 0.5)", self.jitter)));
        }
        if self.max_rejection_attempts == 0 {
            return Err(Error::config("max_rejection_attempts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub pixels: GrayImage,
    pub label: PatchLabel,
    pub source_exam_id: String,
    pub view: View,
    pub window_origin: (usize, usize),
    /// Requested window centre before clamping.
    pub center: (f64, f64),
}

/// Mean (row, col) of the foreground pixels.
pub fn mask_centroid(mask: &Mask) -> Result<(f64, f64)> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for r in 0..mask.h {
        for c in 0..mask.w {
            if mask.get(r, c) {
                sr += r as f64;
                sc += c as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("centroid of an empty mask"));
    }
    Ok((sr / n as f64, sc / n as f64))
}

pub fn label_patch(finding: &RoiFinding) -> PatchLabel {
    match (finding.kind, finding.malignancy) {
        (LesionKind::Mass, Malignancy::Benign) => PatchLabel::BenignMass,
        (LesionKind::Mass, Malignancy::Malignant) => PatchLabel::MalignantMass,
        (LesionKind::Calcification, Malignancy::Benign) => PatchLabel::BenignCalcification,
        (LesionKind::Calcification, Malignancy::Malignant) => PatchLabel::MalignantCalcification,
    }
}

fn check_fits(image: &GrayImage, s: usize) -> Result<()> {
    if image.h < s || image.w < s {
        return Err(Error::invalid(format!("{}x{} image is smaller than a {s}x{s} patch", image.h, image.w)));
    }
    Ok(())
}

/// Top-left corner of the window whose centre is nearest `center`, clamped
/// into the image.
fn origin_for(center: f64, s: usize, extent: usize) -> usize {
    let o = (center - (s as f64 - 1.0) / 2.0).round();
    o.clamp(0.0, (extent - s) as f64) as usize
}

/// `cfg.n_lesion` windows around the mask centroid, each centre displaced
/// uniformly by at most `jitter * S` per axis, then clamped inside the image.
pub fn sample_lesion_patches(
    image: &GrayImage,
    finding: &RoiFinding,
    cfg: &SamplerConfig,
    exam_id: &str,
    rng: &mut Rng,
) -> Result<Vec<PatchSample>> {
    let s = cfg.patch_size;
    check_fits(image, s)?;
    let (cr, cc) = mask_centroid(&finding.mask)?;
    let bound = cfg.jitter * s as f64;
    let label = label_patch(finding);
    Ok((0..cfg.n_lesion)
        .map(|_| {
            let (dr, dc) = if bound > 0.0 { (rng.random_range(-bound..=bound), rng.random_range(-bound..=bound)) } else { (0.0, 0.0) };
            let center = (cr + dr, cc + dc);
            let origin = (origin_for(center.0, s, image.h), origin_for(center.1, s, image.w));
            PatchSample {
                pixels: image.crop(origin.0, origin.1, s),
                label,
                source_exam_id: exam_id.to_string(),
                view: finding.view,
                window_origin: origin,
                center,
            }
        })
        .collect())
}

/// Summed-area table of a mask union, `(h+1) x (w+1)`.
struct Integral {
    w1: usize,
    sums: Vec<u32>,
}

impl Integral {
    fn of_union(h: usize, w: usize, masks: &[&Mask]) -> Self {
        let w1 = w + 1;
        let mut sums = vec![0u32; (h + 1) * w1];
        for r in 0..h {
            let mut row = 0u32;
            for c in 0..w {
                row += u32::from(masks.iter().any(|m| m.get(r, c)));
                sums[(r + 1) * w1 + c + 1] = sums[r * w1 + c + 1] + row;
            }
        }
        Self { w1, sums }
    }

    fn window(&self, r: usize, c: usize, s: usize) -> u32 {
        let w1 = self.w1;
        self.sums[(r + s) * w1 + c + s] + self.sums[r * w1 + c] - self.sums[r * w1 + c + s] - self.sums[(r + s) * w1 + c]
    }
}

/// `cfg.n_background` windows drawn uniformly over all origins and kept only
/// when they overlap no foreground pixel of any mask.
pub fn sample_background_patches(
    image: &GrayImage,
    masks: &[&Mask],
    cfg: &SamplerConfig,
    exam_id: &str,
    view: View,
    rng: &mut Rng,
) -> Result<Vec<PatchSample>> {
    let s = cfg.patch_size;
    check_fits(image, s)?;
    for m in masks {
        if (m.h, m.w) != (image.h, image.w) {
            return Err(Error::shape(format!("mask {}x{} vs image {}x{}", m.h, m.w, image.h, image.w)));
        }
    }
    let integral = Integral::of_union(image.h, image.w, masks);
    let mut out = Vec::with_capacity(cfg.n_background);
    for _ in 0..cfg.n_background {
        let mut found = None;
        for _ in 0..cfg.max_rejection_attempts {
            let r = rng.random_range(0..=image.h - s);
            let c = rng.random_range(0..=image.w - s);
            if integral.window(r, c, s) == 0 {
                found = Some((r, c));
                break;
            }
        }
        let (r, c) = found.ok_or_else(|| Error::Saturation { exam_id: exam_id.to_string(), attempts: cfg.max_rejection_attempts })?;
        let half = (s as f64 - 1.0) / 2.0;
        out.push(PatchSample {
            pixels: image.crop(r, c, s),
            label: PatchLabel::Background,
            source_exam_id: exam_id.to_string(),
            view,
            window_origin: (r, c),
            center: (r as f64 + half, c as f64 + half),
        });
    }
    Ok(out)
}

/// Lesion and background patches for every ROI of every exam. Each ROI
/// draws from its own stream keyed by (seed, exam id, view, ROI index), so
/// the result does not depend on exam order or thread count.
pub fn sample_exam_patches(exams: &[&Exam], cfg: &SamplerConfig, seed: u64) -> Result<Vec<PatchSample>> {
    cfg.validate()?;
    let per_exam: Vec<Vec<PatchSample>> = exams
        .par_iter()
        .map(|exam| {
            let mut out = Vec::new();
            for view in View::BOTH {
                let Some(image) = exam.image(view) else { continue };
                let masks: Vec<&Mask> = exam.rois_in(view).map(|r| &r.mask).collect();
                for (i, roi) in exam.rois_in(view).enumerate() {
                    if roi.mask.count() == 0 {
                        continue;
                    }
                    let mut rng = rng::stream(seed, &[rng::tag(&exam.exam_id), view.index() as u64, i as u64]);
                    out.extend(sample_lesion_patches(image, roi, cfg, &exam.exam_id, &mut rng)?);
                    out.extend(sample_background_patches(image, &masks, cfg, &exam.exam_id, view, &mut rng)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_exam.into_iter().flatten().collect())
}

pub fn class_distribution(patches: &[PatchSample]) -> Result<BTreeMap<PatchLabel, f64>> {
    if patches.is_empty() {
        return Err(Error::invalid("class distribution of an empty patch list"));
    }
    let mut counts: BTreeMap<PatchLabel, usize> = BTreeMap::new();
    for p in patches {
        *counts.entry(p.label).or_default() += 1;
    }
    let n = patches.len() as f64;
    Ok(counts.into_iter().map(|(k, v)| (k, v as f64 / n)).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct PatchRecord {
    file: String,
    label: PatchLabel,
    source_exam_id: String,
    view: View,
    window_origin: (usize, usize),
    seed: u64,
}

/// Writes one PNG per patch plus `manifest.json`.
pub fn export_patches(dir: &Path, patches: &[PatchSample], seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(patches.len());
    for (i, p) in patches.iter().enumerate() {
        let file = format!("{i:06}_{}.png", serde_json::to_value(p.label)?.as_str().unwrap_or("patch"));
        write_gray_png(&dir.join(&file), &p.pixels)?;
        records.push(PatchRecord {
            file,
            label: p.label,
            source_exam_id: p.source_exam_id.clone(),
            view: p.view,
            window_origin: p.window_origin,
            seed,
        });
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&records)? + "\n")?;
    Ok(())
}
