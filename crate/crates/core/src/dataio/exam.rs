use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pixelops::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "MLO")]
    Mlo,
}

impl View {
    pub const BOTH: [View; 2] = [View::Cc, View::Mlo];

    pub fn index(self) -> usize {
        match self {
            View::Cc => 0,
            View::Mlo => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExamLabel {
    Benign,
    Malignant,
    BenignWithoutCallback,
}

impl ExamLabel {
    /// 1 for malignant, 0 otherwise.
    pub fn binary(self) -> u8 {
        u8::from(self == ExamLabel::Malignant)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitOrigin {
    Train,
    Test,
    Unassigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionKind {
    Mass,
    Calcification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Malignancy {
    Benign,
    Malignant,
}

macro_rules! parse_enum {
    ($ty:ty, $what:literal, { $($($s:literal)|+ => $v:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($($s)|+ => Ok($v),)+
                    other => Err(Error::validation(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

parse_enum!(Side, "side", { "left" | "l" => Side::Left, "right" | "r" => Side::Right });
parse_enum!(View, "view", { "cc" => View::Cc, "mlo" => View::Mlo });
parse_enum!(ExamLabel, "label", {
    "benign" => ExamLabel::Benign,
    "malignant" => ExamLabel::Malignant,
    "benign_without_callback" => ExamLabel::BenignWithoutCallback,
});
parse_enum!(SplitOrigin, "split", {
    "train" | "training" => SplitOrigin::Train,
    "test" => SplitOrigin::Test,
    "" | "unassigned" => SplitOrigin::Unassigned,
});
parse_enum!(LesionKind, "lesion kind", { "mass" => LesionKind::Mass, "calcification" | "calc" => LesionKind::Calcification });
parse_enum!(Malignancy, "malignancy", { "benign" => Malignancy::Benign, "malignant" => Malignancy::Malignant });

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Cc => "CC",
            View::Mlo => "MLO",
        })
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// Integer-intensity grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u16>,
}

impl GrayImage {
    pub fn new(h: usize, w: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!("{h}x{w} image needs {} pixels, got {}", h * w, data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn to_plane(&self) -> Plane {
        Plane { h: self.h, w: self.w, data: self.data.iter().map(|&v| v as f32).collect() }
    }

    /// Square crop with its top-left corner at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size: usize) -> GrayImage {
        let mut data = Vec::with_capacity(size * size);
        for r in row..row + size {
            data.extend_from_slice(&self.data[r * self.w + col..r * self.w + col + size]);
        }
        GrayImage { h: size, w: size, data }
    }
}

/// Binary mask; any nonzero byte is foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!("{h}x{w} mask needs {} pixels, got {}", h * w, data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0; h * w] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c] != 0
    }

    pub fn set(&mut self, r: usize, c: usize) {
        self.data[r * self.w + c] = 1;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Number of foreground pixels inside a square window.
    pub fn window_sum(&self, row: usize, col: usize, size: usize) -> usize {
        (row..row + size).map(|r| self.data[r * self.w + col..r * self.w + col + size].iter().filter(|&&v| v != 0).count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiFinding {
    pub view: View,
    pub mask: Mask,
    pub kind: LesionKind,
    pub malignancy: Malignancy,
}

/// One breast: both standard views, their lesion masks and the pathology.
#[derive(Debug, Clone, PartialEq)]
pub struct Exam {
    pub exam_id: String,
    pub patient_id: String,
    pub side: Side,
    pub images: BTreeMap<View, GrayImage>,
    pub rois: Vec<RoiFinding>,
    pub label: ExamLabel,
    pub split_origin: SplitOrigin,
}

impl Exam {
    pub fn image(&self, view: View) -> Option<&GrayImage> {
        self.images.get(&view)
    }

    pub fn has_both_views(&self) -> bool {
        View::BOTH.iter().all(|v| self.images.contains_key(v))
    }

    pub fn rois_in(&self, view: View) -> impl Iterator<Item = &RoiFinding> {
        self.rois.iter().filter(move |r| r.view == view)
    }

    /// Key used to keep one breast on a single side of every split.
    pub fn breast_key(&self) -> (String, Side) {
        (self.patient_id.clone(), self.side)
    }

    pub fn any_malignant_finding(&self) -> bool {
        self.rois.iter().any(|r| r.malignancy == Malignancy::Malignant)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::validation(format!("exam {} has no images", self.exam_id)));
        }
        for roi in &self.rois {
            let img = self
                .images
                .get(&roi.view)
                .ok_or_else(|| Error::validation(format!("exam {}: ROI on missing {} view", self.exam_id, roi.view)))?;
            if (roi.mask.h, roi.mask.w) != (img.h, img.w) {
                return Err(Error::validation(format!(
                    "exam {} {}: mask {}x{} does not match image {}x{}",
                    self.exam_id, roi.view, roi.mask.h, roi.mask.w, img.h, img.w
                )));
            }
            if roi.mask.count() == 0 {
                return Err(Error::validation(format!("exam {} {}: empty ROI mask", self.exam_id, roi.view)));
            }
        }
        let malignant = self.label == ExamLabel::Malignant;
        if malignant != self.any_malignant_finding() && !self.rois.is_empty() {
            return Err(Error::validation(format!("exam {}: label {:?} disagrees with its findings", self.exam_id, self.label)));
        }
        if malignant && self.rois.is_empty() {
            return Err(Error::validation(format!("exam {} is malignant but has no findings", self.exam_id)));
        }
        Ok(())
    }
}
