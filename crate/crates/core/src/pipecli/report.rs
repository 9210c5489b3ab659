use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cascade::{FoldOutcome, StageSummary, TestMetrics};
use super::config::{PipelineConfig, Protocol};
use crate::error::Result;
use crate::evalstat::{cv_aggregate, EerMetrics};

/// Hash of the library sources, fixed at build time.
pub const CODE_HASH: &str = env!("MAMMOCASCADE_CODE_HASH");

/// sha256 over the source hash and the canonical config JSON.
pub fn code_config_hash(cfg: &PipelineConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(CODE_HASH.as_bytes());
    h.update([0u8]);
    h.update(cfg.canonical_json()?.as_bytes());
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Per-fold values with mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Metric {
    pub fn of(values: Vec<f64>) -> Result<Self> {
        let (mean, std) = match values.len() {
            0 => (f64::NAN, f64::NAN),
            1 => (values[0], 0.0),
            _ => {
                let a = cv_aggregate(&values)?;
                (a.mean, a.std)
            }
        };
        Ok(Self { per_fold: values, mean, std })
    }
}

/// Scores pooled over the test sets of every fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub auc: f64,
    pub se: f64,
    pub eer: EerMetrics,
    pub scores_csv: String,
    pub roc_svg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub patch_val_accuracy: Metric,
    pub single_view_auc: Metric,
    pub two_view_auc: Metric,
    /// Held-out AUC of extra fusion variants, keyed by stage name.
    pub ablations: BTreeMap<String, Metric>,
    /// Mean two-view AUC minus mean single-view AUC.
    pub two_view_gain: f64,
    pub pooled: BTreeMap<String, Pooled>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub code_config_hash: String,
    pub config: PipelineConfig,
    pub n_exams: usize,
    pub folds: Vec<FoldOutcome>,
    pub summary: RunSummary,
}

fn test_of(s: &StageSummary) -> Option<&TestMetrics> {
    s.test.as_ref()
}

pub fn summarize(folds: &[FoldOutcome], pooled: BTreeMap<String, Pooled>) -> Result<RunSummary> {
    let collect = |f: &dyn Fn(&FoldOutcome) -> Option<f64>| folds.iter().filter_map(f).collect::<Vec<f64>>();
    let single = Metric::of(collect(&|f| test_of(&f.single).map(|t| t.auc)))?;
    let two = Metric::of(collect(&|f| test_of(&f.two_view).map(|t| t.auc)))?;
    let mut ablations = BTreeMap::new();
    if let Some(first) = folds.first() {
        for (i, a) in first.ablations.iter().enumerate() {
            let vals = collect(&|f| f.ablations.get(i).and_then(test_of).map(|t| t.auc));
            ablations.insert(a.stage.clone(), Metric::of(vals)?);
        }
    }
    Ok(RunSummary {
        patch_val_accuracy: Metric::of(collect(&|f| f.patch.best_val))?,
        two_view_gain: two.mean - single.mean,
        single_view_auc: single,
        two_view_auc: two,
        ablations,
        pooled,
    })
}

fn pm(m: &Metric) -> String {
    format!("{:.4} ± {:.4}", m.mean, m.std)
}

/// Plain-text digest of a report.
pub fn text_summary(r: &RunReport) -> String {
    let mut s = String::new();
    let proto = match r.config.protocol {
        Protocol::Cv => format!("{}-fold cross-validation", r.config.k),
        Protocol::Od => "fixed train/test split".to_string(),
    };
    let _ = writeln!(s, "{} exams, {proto}, seed {}", r.n_exams, r.config.seed);
    let _ = writeln!(s, "{:<6} {:>10} {:>12} {:>10}", "fold", "patch acc", "single AUC", "two AUC");
    for f in &r.folds {
        let auc = |st: &StageSummary| test_of(st).map_or("-".to_string(), |t| format!("{:.4}", t.auc));
        let acc = f.patch.best_val.map_or("-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(s, "{:<6} {:>10} {:>12} {:>10}", f.fold, acc, auc(&f.single), auc(&f.two_view));
    }
    let m = &r.summary;
    let _ = writeln!(s, "patch validation accuracy {}", pm(&m.patch_val_accuracy));
    let _ = writeln!(s, "single-view AUC {}", pm(&m.single_view_auc));
    let _ = writeln!(s, "two-view AUC {}", pm(&m.two_view_auc));
    for (k, v) in &m.ablations {
        let _ = writeln!(s, "{k} AUC {}", pm(v));
    }
    if r.config.protocol == Protocol::Od {
        if let Some(t) = r.folds.first().and_then(|f| test_of(&f.two_view)) {
            let _ = writeln!(s, "two-view AUC {:.4} ± {:.4} (Hanley-McNeil)", t.auc, t.se);
        }
    }
    if let Some(p) = m.pooled.get("two_view") {
        let _ = writeln!(s, "two-view equal-error accuracy {:.4} at threshold {:.4}", p.eer.accuracy, p.eer.threshold);
    }
    let _ = writeln!(s, "code+config hash {}", r.code_config_hash);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub report: String,
    pub single_view_auc: f64,
    pub before_pool_auc: f64,
    pub after_pool_auc: f64,
    /// Before-pool minus after-pool.
    pub difference: f64,
    pub two_view_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub version: String,
    pub code_config_hash: String,
    pub runs: Vec<AblationRun>,
    pub patch_val_accuracy: Metric,
    pub single_view_auc: Metric,
    pub before_pool_auc: Metric,
    pub after_pool_auc: Metric,
    pub mean_difference: f64,
    pub mean_two_view_gain: f64,
}

pub fn ablation_text(r: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:>12} {:>12} {:>12} {:>10}", "seed", "single", "before-pool", "after-pool", "diff");
    for run in &r.runs {
        let _ = writeln!(
            s,
            "{:<6} {:>12.4} {:>12.4} {:>12.4} {:>+10.4}",
            run.seed, run.single_view_auc, run.before_pool_auc, run.after_pool_auc, run.difference
        );
    }
    let _ = writeln!(s, "before-pool {}", pm(&r.before_pool_auc));
    let _ = writeln!(s, "after-pool {}", pm(&r.after_pool_auc));
    let _ = writeln!(s, "mean difference {:+.4}, mean two-view gain {:+.4}", r.mean_difference, r.mean_two_view_gain);
    s
}
