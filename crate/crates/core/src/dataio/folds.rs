use std::borrow::Borrow;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Exam, ExamLabel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldOptions {
    /// Balance malignant groups across folds.
    pub stratify: bool,
    /// Group by patient instead of by breast (patient + side).
    pub group_by_patient: bool,
}

impl Default for FoldOptions {
    fn default() -> Self {
        Self { stratify: true, group_by_patient: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold_of(&self, exam_id: &str) -> Option<usize> {
        self.assignment.get(exam_id).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(id, _)| id.as_str()).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in self.assignment.values() {
            s[f] += 1;
        }
        s
    }
}

/// Grouped, optionally stratified k-fold assignment.
///
/// Groups are shuffled with the seed, malignant groups are placed first,
/// each into the fold with the fewest malignant exams (then fewest exams,
/// then lowest index); benign groups follow into the fold with the fewest
/// exams. With one exam per group this keeps fold sizes and per-fold
/// malignant counts within one of each other.
pub fn make_folds<E: Borrow<Exam>>(exams: &[E], k: usize, seed: u64, opts: FoldOptions) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let mut groups: BTreeMap<String, (Vec<&str>, bool)> = BTreeMap::new();
    for e in exams {
        let e = e.borrow();
        if e.images.is_empty() {
            return Err(Error::invalid(format!("exam {} has no images", e.exam_id)));
        }
        let key = if opts.group_by_patient { e.patient_id.clone() } else { format!("{}\u{1f}{}", e.patient_id, e.side) };
        let g = groups.entry(key).or_default();
        g.0.push(&e.exam_id);
        g.1 |= e.label == ExamLabel::Malignant;
    }
    if k > groups.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} available groups", groups.len())));
    }
    let mut groups: Vec<(Vec<&str>, bool)> = groups.into_values().collect();
    let mut r = rng::stream(seed, &[rng::tag("folds")]);
    groups.shuffle(&mut r);
    if opts.stratify {
        // stable: malignant groups first, shuffled order kept within strata
        groups.sort_by_key(|g| !g.1);
    }

    let mut total = vec![0usize; k];
    let mut malignant = vec![0usize; k];
    let mut assignment = BTreeMap::new();
    for (ids, is_malignant) in groups {
        let fold = (0..k)
            .min_by_key(|&f| if opts.stratify && is_malignant { (malignant[f], total[f], f) } else { (total[f], 0, f) })
            .expect("k >= 2");
        total[fold] += ids.len();
        if is_malignant {
            malignant[fold] += ids.len();
        }
        for id in ids {
            assignment.insert(id.to_string(), fold);
        }
    }
    Ok(FoldAssignment { k, assignment, seed })
}

/// Seeded exam-level split into `(train, validation)` with
/// `round(fraction * n)` validation items. Input order is preserved.
pub fn carve_validation<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction {fraction} must be in (0, 1)")));
    }
    let n_val = (fraction * items.len() as f64).round() as usize;
    if n_val == 0 || n_val == items.len() {
        return Err(Error::invalid(format!("validation fraction {fraction} of {} items leaves an empty side", items.len())));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::tag("validation")]));
    let mut is_val = vec![false; items.len()];
    for &i in &idx[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (item, v) in items.iter().zip(is_val) {
        if v {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, val))
}
