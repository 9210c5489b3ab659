use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ModelGraph, Scalar};
use crate::error::{Error, Result};

/// Group-level outcome of a weight transfer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub copied: Vec<String>,
    pub initialized: Vec<String>,
    pub dropped: Vec<String>,
}

impl TransferReport {
    pub fn copied_fraction(&self) -> f64 {
        let n = self.copied.len() + self.initialized.len();
        if n == 0 {
            0.0
        } else {
            self.copied.len() as f64 / n as f64
        }
    }
}

const TOWER_PREFIXES: [&str; 3] = ["tower_cc.", "tower_mlo.", "tower."];

fn strip_tower(name: &str) -> &str {
    TOWER_PREFIXES.iter().find_map(|p| name.strip_prefix(p)).unwrap_or(name)
}

/// Backbone groups must always find a source; head groups may be new.
fn is_backbone_group(group: &str) -> bool {
    let g = strip_tower(group);
    g == "stem" || g == "top" || g.starts_with("blocks.")
}

/// Copies every parameter (weights and running statistics) of `dst` that
/// has a counterpart in `src`. Names match exactly, or after removing a
/// tower prefix, so each two-view tower receives the single-view backbone.
pub fn transfer_weights<T: Scalar>(src: &ModelGraph<T>, dst: &mut ModelGraph<T>) -> Result<TransferReport> {
    let mut by_name: BTreeMap<&str, usize> = BTreeMap::new();
    let mut by_canonical: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, t) in src.params.tensors.iter().enumerate() {
        by_name.insert(&t.name, i);
        by_canonical.entry(strip_tower(&t.name)).or_insert(i);
    }
    let mut used_src_groups = BTreeSet::new();
    let mut group_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut plan = Vec::new();
    for (j, t) in dst.params.tensors.iter().enumerate() {
        let hit = by_name.get(t.name.as_str()).or_else(|| by_canonical.get(strip_tower(&t.name))).copied();
        let e = group_hits.entry(t.group.clone()).or_default();
        e.1 += 1;
        if let Some(i) = hit {
            let s = &src.params.tensors[i];
            if s.shape != t.shape {
                return Err(Error::Transfer {
                    layer: t.name.clone(),
                    reason: format!("source shape {:?} vs destination {:?}", s.shape, t.shape),
                });
            }
            e.0 += 1;
            used_src_groups.insert(s.group.clone());
            plan.push((j, i));
        }
    }
    let mut report = TransferReport::default();
    for (group, _) in &dst.params.groups {
        let (hit, total) = group_hits[group];
        if hit == 0 && is_backbone_group(group) {
            return Err(Error::Transfer { layer: group.clone(), reason: "no matching source group".into() });
        }
        if hit != 0 && hit != total {
            return Err(Error::Transfer { layer: group.clone(), reason: format!("only {hit} of {total} tensors found in source") });
        }
        if hit == 0 {
            report.initialized.push(group.clone());
        } else {
            report.copied.push(group.clone());
        }
    }
    for (group, _) in &src.params.groups {
        if !used_src_groups.contains(group) {
            report.dropped.push(group.clone());
        }
    }
    for (j, i) in plan {
        dst.params.tensors[j].data.clone_from(&src.params.tensors[i].data);
    }
    Ok(report)
}
