//! Desk-scale two-view phantoms.
//!
//! Each exam is one breast with a single lesion placed at the same distance
//! from the chest wall in both views. Masses are smooth blobs unless they
//! carry the malignancy cue (irregular margin plus spicules); calcification
//! clusters are a few coarse round specks unless they carry the cue (many
//! fine specks). Malignant exams show the cue in both views, or with
//! probability `ambiguity_prob` in one randomly chosen view only.

use std::collections::BTreeMap;
use std::f32::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Exam, ExamLabel, GrayImage, LesionKind, Malignancy, Mask, RoiFinding, Side, SplitOrigin, View};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub n_exams: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub lesion_kinds: Vec<LesionKind>,
    pub ambiguity_prob: f64,
    pub malignant_prob: f64,
    /// Share of exams marked as the held-out test split.
    pub test_fraction: f64,
    pub tissue_level: (f32, f32),
    pub tissue_contrast: f32,
    pub noise_sigma: f32,
    pub mass_radius: (f32, f32),
    pub mass_contrast: f32,
    pub calc_cluster_radius: f32,
    pub calc_contrast: f32,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_exams: 200,
            image_height: 288,
            image_width: 224,
            lesion_kinds: vec![LesionKind::Mass, LesionKind::Calcification],
            ambiguity_prob: 0.5,
            malignant_prob: 0.5,
            test_fraction: 0.2,
            tissue_level: (70.0, 100.0),
            tissue_contrast: 22.0,
            noise_sigma: 4.0,
            mass_radius: (7.0, 11.0),
            mass_contrast: 50.0,
            calc_cluster_radius: 9.0,
            calc_contrast: 90.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self, total_stride: usize) -> Result<()> {
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::config("synthetic image dimensions must be positive"));
        }
        if total_stride > 0 && (self.image_height % total_stride != 0 || self.image_width % total_stride != 0) {
            return Err(Error::config(format!(
                "synthetic image {}x{} is not divisible by the backbone stride {total_stride}",
                self.image_height, self.image_width
            )));
        }
        if self.lesion_kinds.is_empty() {
            return Err(Error::config("at least one lesion kind must be enabled"));
        }
        for (name, p) in
            [("ambiguity_prob", self.ambiguity_prob), ("malignant_prob", self.malignant_prob), ("test_fraction", self.test_fraction)]
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.mass_radius.0 <= 0.0 || self.mass_radius.1 < self.mass_radius.0 || self.calc_cluster_radius <= 0.0 {
            return Err(Error::config("lesion radii must be positive and ordered"));
        }
        Ok(())
    }
}

/// A generated exam plus which views received the malignancy cue.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthExam {
    pub exam: Exam,
    /// Indexed by `View::index()`.
    pub cue_views: [bool; 2],
}

struct Region {
    center_row: f32,
    semi_rows: f32,
    semi_cols: f32,
    /// Pectoral triangle legs (cols, rows), MLO only.
    pectoral: Option<(f32, f32)>,
}

impl Region {
    fn draw(view: View, h: f32, w: f32, rng: &mut Rng) -> Self {
        match view {
            View::Cc => Region {
                center_row: h * rng.random_range(0.46..0.54),
                semi_rows: h * rng.random_range(0.40..0.46),
                semi_cols: w * rng.random_range(0.80..0.92),
                pectoral: None,
            },
            View::Mlo => Region {
                center_row: h * rng.random_range(0.50..0.58),
                semi_rows: h * rng.random_range(0.44..0.50),
                semi_cols: w * rng.random_range(0.78..0.90),
                pectoral: Some((w * rng.random_range(0.25..0.35), h * rng.random_range(0.35..0.50))),
            },
        }
    }

    /// Normalized elliptic radius with the chest wall at column 0.
    fn rho(&self, r: f32, depth: f32) -> f32 {
        (((r - self.center_row) / self.semi_rows).powi(2) + (depth / self.semi_cols).powi(2)).sqrt()
    }

    fn in_pectoral(&self, r: f32, depth: f32, margin: f32) -> bool {
        match self.pectoral {
            Some((pw, ph)) => depth / (pw + margin) + r / (ph + margin) < 1.0,
            None => false,
        }
    }
}

enum LesionShape {
    Mass { radius: f32, harmonics: Vec<(f32, f32, f32)>, spicules: Vec<(f32, f32)> },
    Calc { radius: f32, specks: Vec<(f32, f32, f32, f32)> },
}

impl LesionShape {
    /// Radius of the painted footprint.
    fn extent(&self) -> f32 {
        match self {
            LesionShape::Mass { spicules, .. } => spicules.iter().map(|s| s.1).fold(self.core(), f32::max),
            LesionShape::Calc { .. } => self.core(),
        }
    }

    /// Radius that must stay inside the breast; spicules may leave it.
    fn core(&self) -> f32 {
        match self {
            LesionShape::Mass { radius, .. } => radius * 1.3,
            LesionShape::Calc { radius, .. } => radius + 3.0,
        }
    }
}

fn draw_shape(p: &SynthParams, kind: LesionKind, cue: bool, radius: f32, rng: &mut Rng) -> LesionShape {
    match kind {
        LesionKind::Mass => {
            let amp = if cue { 0.22 } else { 0.06 };
            let harmonics = (0..3)
                .map(|_| (rng.random_range(2.0f32..7.0).floor(), rng.random_range(0.3..1.0) * amp, rng.random_range(0.0..2.0 * PI)))
                .collect();
            let spicules = if cue {
                let n = rng.random_range(10..=16);
                (0..n).map(|_| (rng.random_range(0.0..2.0 * PI), radius * rng.random_range(1.8..2.8))).collect()
            } else {
                Vec::new()
            };
            LesionShape::Mass { radius, harmonics, spicules }
        }
        LesionKind::Calcification => {
            let r = p.calc_cluster_radius;
            let (n, size, spread, amp) = if cue {
                (rng.random_range(14..=24), (0.5f32, 0.9f32), 0.75f32, 1.0f32)
            } else {
                (rng.random_range(3..=5), (1.6, 2.4), 0.9, 0.8)
            };
            let specks = (0..n)
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let d = r * spread * rng.random::<f32>().sqrt();
                    (d * a.sin(), d * a.cos(), rng.random_range(size.0..size.1), amp * rng.random_range(0.8..1.0))
                })
                .collect();
            LesionShape::Calc { radius: r, specks }
        }
    }
}

fn smoothstep(e0: f32, e1: f32, x: f32) -> f32 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Paints the lesion at `(row, col)` and returns its mask.
fn paint_lesion(canvas: &mut [f32], h: usize, w: usize, shape: &LesionShape, row: f32, col: f32, p: &SynthParams) -> Mask {
    let mut mask = Mask::empty(h, w);
    let ext = shape.extent() + 2.0;
    let (r0, r1) = ((row - ext).floor().max(0.0) as usize, ((row + ext).ceil() as usize).min(h - 1));
    let (c0, c1) = ((col - ext).floor().max(0.0) as usize, ((col + ext).ceil() as usize).min(w - 1));
    for r in r0..=r1 {
        for c in c0..=c1 {
            let (dy, dx) = (r as f32 - row, c as f32 - col);
            let dist = (dy * dy + dx * dx).sqrt();
            let mut add = 0.0;
            match shape {
                LesionShape::Mass { radius, harmonics, spicules } => {
                    let theta = dy.atan2(dx);
                    let wobble: f32 = harmonics.iter().map(|&(k, a, ph)| a * (k * theta + ph).sin()).sum();
                    let d = dist / (radius * (1.0 + wobble));
                    add += p.mass_contrast * (1.0 - smoothstep(0.75, 1.05, d));
                    if d <= 1.0 {
                        mask.set(r, c);
                    }
                    for &(angle, len) in spicules {
                        let (ux, uy) = (angle.cos(), angle.sin());
                        let t = dx * ux + dy * uy;
                        if t > 0.6 * radius && t < len {
                            let perp = (dx * uy - dy * ux).abs();
                            let line = (1.0 - perp).max(0.0) * (1.0 - t / len).sqrt();
                            add += 0.7 * p.mass_contrast * line;
                        }
                    }
                }
                LesionShape::Calc { radius, specks } => {
                    if dist <= *radius {
                        mask.set(r, c);
                    }
                    for &(sy, sx, size, amp) in specks {
                        let d2 = (dy - sy).powi(2) + (dx - sx).powi(2);
                        if d2 < 9.0 * size * size + 1.0 {
                            add += p.calc_contrast * amp * (-d2 / (2.0 * size * size)).exp();
                        }
                    }
                }
            }
            canvas[r * w + c] += add;
        }
    }
    mask
}

struct Placement {
    depth: f32,
    kind: LesionKind,
    radius: f32,
}

fn render_view(p: &SynthParams, view: View, side: Side, placement: &Placement, cue: bool, rng: &mut Rng) -> Result<(GrayImage, Mask)> {
    let (h, w) = (p.image_height, p.image_width);
    let region = Region::draw(view, h as f32, w as f32, rng);
    let shape = draw_shape(p, placement.kind, cue, placement.radius, rng);
    let margin = shape.core() + 1.0;

    // lesion row: inside the breast at the shared depth, clear of the muscle
    let depth = placement.depth;
    let mut lesion_row = None;
    for _ in 0..200 {
        let r = rng.random_range(0.0..h as f32);
        let rho_edge = region.rho(r + margin.copysign(r - region.center_row), depth + margin);
        if rho_edge < 0.97 && r > margin && r < h as f32 - margin && !region.in_pectoral(r, depth, margin) {
            lesion_row = Some(r);
            break;
        }
    }
    let row = lesion_row.ok_or_else(|| Error::Generation(format!("could not place a lesion at depth {depth:.1} in the {view} view")))?;

    let base = rng.random_range(p.tissue_level.0..=p.tissue_level.1);
    let bumps: Vec<(f32, f32, f32, f32)> = (0..8)
        .map(|_| {
            (
                rng.random_range(0.0..h as f32),
                rng.random_range(0.0..w as f32),
                rng.random_range(12.0f32..35.0),
                rng.random_range(-1.0f32..1.0) * p.tissue_contrast,
            )
        })
        .collect();
    let tissue_noise = Normal::new(0.0f32, p.noise_sigma.max(1e-6)).expect("valid sigma");
    let air_noise = Normal::new(0.0f32, 1.5).expect("valid sigma");
    let mut canvas = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let depth_c = c as f32;
            let rho = region.rho(r as f32, depth_c);
            let v = if rho < 1.0 {
                let mut t = base;
                for &(br, bc, s, a) in &bumps {
                    let d2 = (r as f32 - br).powi(2) + (c as f32 - bc).powi(2);
                    t += a * (-d2 / (2.0 * s * s)).exp();
                }
                if region.in_pectoral(r as f32, depth_c, 0.0) {
                    t += 40.0;
                }
                let edge = 1.0 - smoothstep(0.93, 1.0, rho);
                4.0 + (t - 4.0) * edge + tissue_noise.sample(rng)
            } else {
                4.0 + air_noise.sample(rng)
            };
            canvas[r * w + c] = v;
        }
    }
    let mask = paint_lesion(&mut canvas, h, w, &shape, row, depth, p);

    let mut data: Vec<u16> = canvas.iter().map(|&v| v.round().clamp(0.0, 255.0) as u16).collect();
    let mut mask = mask;
    if side == Side::Right {
        // chest wall on the right edge
        for r in 0..h {
            data[r * w..(r + 1) * w].reverse();
            mask.data[r * w..(r + 1) * w].reverse();
        }
    }
    Ok((GrayImage::new(h, w, data)?, mask))
}

/// Generates exam number `index`. Identifiers are derived from the index;
/// pixels depend only on `params` and the stream.
pub fn synth_exam(params: &SynthParams, index: usize, rng: &mut Rng) -> Result<SynthExam> {
    let malignant = rng.random_bool(params.malignant_prob);
    let kind = params.lesion_kinds[rng.random_range(0..params.lesion_kinds.len())];
    let cue_views = if !malignant {
        [false, false]
    } else if rng.random_bool(params.ambiguity_prob) {
        if rng.random_bool(0.5) {
            [true, false]
        } else {
            [false, true]
        }
    } else {
        [true, true]
    };
    let split = if rng.random_bool(params.test_fraction) { SplitOrigin::Test } else { SplitOrigin::Train };
    let radius = rng.random_range(params.mass_radius.0..=params.mass_radius.1);
    // keep the lesion core clear of the chest wall and of the skin line for
    // the smallest breast the region sampler can draw
    let w = params.image_width as f32;
    let core = (params.mass_radius.1 * 1.3).max(params.calc_cluster_radius + 3.0) + 1.0;
    let (lo, hi) = ((0.2 * w).max(core), (0.78 * 0.85 * w - core).min(0.65 * w));
    if hi <= lo {
        return Err(Error::Generation(format!("lesions of radius {core:.1} do not fit a {w}-pixel-wide breast")));
    }
    let placement = Placement { depth: rng.random_range(lo..hi), kind, radius };
    let side = if index % 2 == 0 { Side::Left } else { Side::Right };
    let malignancy = if malignant { Malignancy::Malignant } else { Malignancy::Benign };

    let mut images = BTreeMap::new();
    let mut rois = Vec::new();
    for view in View::BOTH {
        let (img, mask) = render_view(params, view, side, &placement, cue_views[view.index()], rng)?;
        images.insert(view, img);
        rois.push(RoiFinding { view, mask, kind, malignancy });
    }
    let exam = Exam {
        exam_id: format!("synth_{index:05}"),
        patient_id: format!("P{:05}", index / 2),
        side,
        images,
        rois,
        label: if malignant { ExamLabel::Malignant } else { ExamLabel::Benign },
        split_origin: split,
    };
    exam.validate()?;
    Ok(SynthExam { exam, cue_views })
}

/// `params.n_exams` exams, each from its own stream keyed by (seed, index).
pub fn synth_dataset(params: &SynthParams) -> Result<Vec<SynthExam>> {
    params.validate(0)?;
    (0..params.n_exams)
        .into_par_iter()
        .map(|i| synth_exam(params, i, &mut rng::stream(params.seed, &[rng::tag("synth"), i as u64])))
        .collect()
}
