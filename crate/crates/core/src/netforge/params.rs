use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// Learned weights versus statistics that only calibration may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Weight,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub group: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

pub type ParamId = usize;

/// Flat, insertion-ordered parameter storage with per-group trainable flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub tensors: Vec<NamedTensor<T>>,
    /// Group name and whether it is trainable, in creation order.
    pub groups: Vec<(String, bool)>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { tensors: Vec::new(), groups: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: String, group: &str, role: Role, shape: Vec<usize>, data: Vec<T>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        if !self.groups.iter().any(|(g, _)| g == group) {
            self.groups.push((group.to_string(), true));
        }
        self.tensors.push(NamedTensor { name, group: group.to_string(), role, shape, data });
        self.tensors.len() - 1
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.tensors[id].data
    }

    pub fn group_trainable(&self, group: &str) -> bool {
        self.groups.iter().find(|(g, _)| g == group).is_some_and(|(_, t)| *t)
    }

    /// Per tensor: is it a weight in a trainable group.
    pub fn trainable_mask(&self) -> Vec<bool> {
        self.tensors.iter().map(|t| t.role == Role::Weight && self.group_trainable(&t.group)).collect()
    }

    /// Groups whose name matches `selector`; see [`glob_match`].
    pub fn select(&self, selector: &str) -> Vec<String> {
        self.groups.iter().filter(|(g, _)| glob_match(selector, g)).map(|(g, _)| g.clone()).collect()
    }

    /// Sets the trainable flag of every group matched by `selector`.
    pub fn set_trainable(&mut self, selector: &str, trainable: bool) -> Result<usize> {
        let mut n = 0;
        for (g, t) in &mut self.groups {
            if glob_match(selector, g) {
                *t = trainable;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::config(format!("selector {selector:?} matches no layer group")));
        }
        Ok(n)
    }

    pub fn trainable_groups(&self) -> BTreeSet<String> {
        self.groups.iter().filter(|(_, t)| *t).map(|(g, _)| g.clone()).collect()
    }

    pub fn n_weights(&self) -> usize {
        self.tensors.iter().filter(|t| t.role == Role::Weight).map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    group: t.group.clone(),
                    role: t.role,
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::of(v.f64())).collect(),
                })
                .collect(),
            groups: self.groups.clone(),
        }
    }
}

/// Pattern match where `*` stands for any run of characters, including dots.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let (p, t) = (pattern.as_bytes(), text.as_bytes());
    let (mut pi, mut ti) = (0, 0);
    let (mut star, mut mark) = (None, 0);
    while ti < t.len() {
        if pi < p.len() && p[pi] != b'*' && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == b'*' {
            star = Some(pi);
            pi += 1;
            mark = ti;
        } else if let Some(s) = star {
            pi = s + 1;
            mark += 1;
            ti = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == b'*' {
        pi += 1;
    }
    pi == p.len()
}

/// Gradient buffers aligned with a [`ParamStore`]; only tensors flagged in
/// `want` are allocated and accumulated.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub want: Vec<bool>,
    pub g: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn new(store: &ParamStore<T>, want: Vec<bool>) -> Self {
        let g = store.tensors.iter().zip(&want).map(|(t, &w)| if w { vec![T::zero(); t.data.len()] } else { Vec::new() }).collect();
        Self { want, g }
    }

    #[inline]
    pub fn wants(&self, id: ParamId) -> bool {
        self.want[id]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.g.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.g.iter().flatten().all(|v| v.is_finite())
    }

    pub fn zero(&mut self) {
        for v in self.g.iter_mut().flatten() {
            *v = T::zero();
        }
    }
}
