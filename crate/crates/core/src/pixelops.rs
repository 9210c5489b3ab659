//! Preprocessing, training augmentation and the fixed test-time view set.
//!
//! Geometry convention: pixel `(row, col)` has its center at `(row, col)`
//! and the image center is `((h-1)/2, (w-1)/2)`. Resizing samples with
//! half-pixel centers, `src = (dst + 0.5) * in / out - 0.5`, clamped to the
//! valid range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel real-valued image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!("{}x{} plane needs {} values, got {}", h, w, h * w, data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, v: f32) -> Self {
        Self { h, w, data: vec![v; h * w] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.w + c]
    }

    pub fn flip_horizontal(&self) -> Plane {
        let mut out = self.clone();
        for r in 0..self.h {
            out.data[r * self.w..(r + 1) * self.w].reverse();
        }
        out
    }

    pub fn flip_vertical(&self) -> Plane {
        let mut out = Vec::with_capacity(self.data.len());
        for r in (0..self.h).rev() {
            out.extend_from_slice(&self.data[r * self.w..(r + 1) * self.w]);
        }
        Plane { h: self.h, w: self.w, data: out }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub zoom_frac: f64,
    pub shear_frac: f64,
    pub intensity_shift_frac: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::standard()
    }
}

impl AugmentParams {
    /// Rotation 25°, zoom 20%, shear 12%, intensity 20%, both flips.
    pub fn standard() -> Self {
        Self { rotation_deg: 25.0, zoom_frac: 0.20, shear_frac: 0.12, intensity_shift_frac: 0.20, hflip: true, vflip: true }
    }

    pub fn none() -> Self {
        Self { rotation_deg: 0.0, zoom_frac: 0.0, shear_frac: 0.0, intensity_shift_frac: 0.0, hflip: false, vflip: false }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.rotation_deg, self.zoom_frac, self.shear_frac, self.intensity_shift_frac];
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::config("augmentation bounds must be finite and non-negative"));
        }
        if self.zoom_frac >= 1.0 {
            return Err(Error::config("zoom_frac must be below 1"));
        }
        Ok(())
    }

    /// Draws one concrete transform. The stream consumption is the same
    /// whatever the bounds, so toggling one knob never reshuffles the others.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> AffineDraw {
        let mut sym = |b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { rng.random::<f64>() * 0.0 };
        let angle_deg = sym(self.rotation_deg);
        let zoom = 1.0 + sym(self.zoom_frac);
        let shear = sym(self.shear_frac);
        let intensity = 1.0 + sym(self.intensity_shift_frac);
        let h = rng.random_bool(0.5);
        let v = rng.random_bool(0.5);
        AffineDraw { angle_deg, zoom, shear, intensity, hflip: self.hflip && h, vflip: self.vflip && v }
    }
}

/// One concrete augmentation: geometry first, then a multiplicative
/// intensity factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDraw {
    pub angle_deg: f64,
    pub zoom: f64,
    pub shear: f64,
    pub intensity: f64,
    pub hflip: bool,
    pub vflip: bool,
}

impl AffineDraw {
    pub fn identity() -> Self {
        Self { angle_deg: 0.0, zoom: 1.0, shear: 0.0, intensity: 1.0, hflip: false, vflip: false }
    }

    /// Forward map on centered coordinates `(x, y) = (col - cx, row - cy)`:
    /// flip · zoom · rotation · shear, where shear adds `shear * y` to x and
    /// a positive angle turns +x toward +y.
    pub fn forward_matrix(&self) -> [[f64; 2]; 2] {
        let t = self.angle_deg.to_radians();
        let (s, c) = t.sin_cos();
        // rotation · shear
        let rs = [[c, c * self.shear - s], [s, s * self.shear + c]];
        let fx = if self.hflip { -1.0 } else { 1.0 } * self.zoom;
        let fy = if self.vflip { -1.0 } else { 1.0 } * self.zoom;
        [[fx * rs[0][0], fx * rs[0][1]], [fy * rs[1][0], fy * rs[1][1]]]
    }

    /// Where an input pixel lands in the output, as `(row, col)`.
    pub fn map_point(&self, h: usize, w: usize, row: f64, col: f64) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let m = self.forward_matrix();
        let (x, y) = (col - cx, row - cy);
        (m[1][0] * x + m[1][1] * y + cy, m[0][0] * x + m[0][1] * y + cx)
    }

    pub fn apply(&self, img: &Plane) -> Plane {
        let m = self.forward_matrix();
        let mut out = if m == [[1.0, 0.0], [0.0, 1.0]] {
            img.clone()
        } else {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
            let (cy, cx) = ((img.h as f64 - 1.0) / 2.0, (img.w as f64 - 1.0) / 2.0);
            let mut data = Vec::with_capacity(img.data.len());
            for r in 0..img.h {
                let y = r as f64 - cy;
                for c in 0..img.w {
                    let x = c as f64 - cx;
                    let sx = inv[0][0] * x + inv[0][1] * y + cx;
                    let sy = inv[1][0] * x + inv[1][1] * y + cy;
                    data.push(sample_reflect(img, sy, sx));
                }
            }
            Plane { h: img.h, w: img.w, data }
        };
        if self.intensity != 1.0 {
            let k = self.intensity as f32;
            out.data.iter_mut().for_each(|v| *v *= k);
        }
        out
    }
}

/// Half-sample symmetric reflection: `... c b a | a b c ... z | z y ...`.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn sample_reflect(img: &Plane, y: f64, x: f64) -> f32 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let (r0, r1) = (reflect(y0, img.h), reflect(y0 + 1, img.h));
    let (c0, c1) = (reflect(x0, img.w), reflect(x0 + 1, img.w));
    let top = img.at(r0, c0) * (1.0 - fx) + img.at(r0, c1) * fx;
    let bottom = img.at(r1, c0) * (1.0 - fx) + img.at(r1, c1) * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn augment<R: rand::Rng + ?Sized>(img: &Plane, p: &AugmentParams, rng: &mut R) -> Plane {
    p.sample(rng).apply(img)
}

/// Identity, horizontal flip, vertical flip, both flips, in that order.
pub fn tta_views(img: &Plane) -> Vec<Plane> {
    let h = img.flip_horizontal();
    let hv = h.flip_vertical();
    vec![img.clone(), h, img.flip_vertical(), hv]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocSpec {
    pub target_height: usize,
    pub target_width: usize,
    pub train_mean: f64,
}

/// Mean over every pixel of every image. Only ever pass training images.
pub fn compute_train_mean<'a, I>(images: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Plane>,
{
    let (mut sum, mut n) = (0.0f64, 0usize);
    for p in images {
        sum += p.data.iter().map(|&v| v as f64).sum::<f64>();
        n += p.data.len();
    }
    if n == 0 {
        return Err(Error::invalid("training mean over an empty image set"));
    }
    Ok(sum / n as f64)
}

pub fn resize_bilinear(img: &Plane, out_h: usize, out_w: usize) -> Result<Plane> {
    if img.h == 0 || img.w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid("cannot resize a zero-sized image"));
    }
    if img.h == out_h && img.w == out_w {
        return Ok(img.clone());
    }
    let coord = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, n_in as f64 - 1.0);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (s - i0 as f64) as f32)
    };
    let cols: Vec<_> = (0..out_w).map(|c| coord(c, img.w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (r0, r1, fy) = coord(r, img.h, out_h);
        for &(c0, c1, fx) in &cols {
            let top = img.at(r0, c0) * (1.0 - fx) + img.at(r0, c1) * fx;
            let bottom = img.at(r1, c0) * (1.0 - fx) + img.at(r1, c1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(Plane { h: out_h, w: out_w, data })
}

/// Bilinear resize to the target size, then training-mean subtraction.
pub fn preprocess(img: &Plane, spec: &PreprocSpec) -> Result<Plane> {
    let mut out = resize_bilinear(img, spec.target_height, spec.target_width)?;
    let m = spec.train_mean as f32;
    if m != 0.0 {
        out.data.iter_mut().for_each(|v| *v -= m);
    }
    Ok(out)
}
