//! Command-line orchestration of the cascade: config, per-fold runs, leak
//! audit, reports and plots.

mod cascade;
pub mod cli;
mod config;
mod report;

pub use cascade::{
    audit_fold, load_dataset, load_exams, plan_folds, score_examples, AuditRecord, Cascade, Dataset, FoldOutcome, FoldPlan, StageName,
    StageSummary, TestMetrics,
};
pub use config::{
    apply_override, load_config, BackboneRef, BlockLayout, DatasetSource, HeadConfig, PipelineConfig, Protocol, ScheduleRef, StageConfig,
};
pub use report::{
    ablation_text, code_config_hash, summarize, text_summary, AblationReport, AblationRun, Metric, Pooled, RunReport, RunSummary, CODE_HASH,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{write_dataset, DatasetFiles, ExamLabel, SynthParams};
use crate::error::{Error, Result};
use crate::evalstat::{
    auc, cv_aggregate, eer_metrics, hanley_mcneil_se, read_scores_csv, roc_curve, roc_svg, write_roc_csv, write_scores_csv, Aggregate,
    EerMetrics, RocPoint, ScoreSet,
};
use crate::netforge::FusionMode;
use crate::patchkit::{class_distribution, export_patches, sample_exam_patches, PatchLabel};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Generates synthetic phantoms and writes images, masks, metadata CSV and
/// manifest into `out`.
pub fn cmd_synth(params: &SynthParams, out: &Path) -> Result<DatasetFiles> {
    params.validate(1)?;
    let exams = crate::dataio::synth_dataset(params)?;
    fs::create_dir_all(out)?;
    write_dataset(out, &exams)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub n_exams: usize,
    pub n_two_view: usize,
    pub n_images: usize,
    pub n_rois: usize,
    pub n_malignant: usize,
    pub n_benign: usize,
    pub n_train_split: usize,
    pub n_test_split: usize,
}

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    let exams = load_exams(cfg)?;
    for e in &exams {
        e.validate()?;
    }
    use crate::dataio::SplitOrigin;
    let count = |f: &dyn Fn(&crate::dataio::Exam) -> bool| exams.iter().filter(|e| f(e)).count();
    let s = IngestSummary {
        n_exams: exams.len(),
        n_two_view: count(&|e| e.has_both_views()),
        n_images: exams.iter().map(|e| e.images.len()).sum(),
        n_rois: exams.iter().map(|e| e.rois.len()).sum(),
        n_malignant: count(&|e| e.label == ExamLabel::Malignant),
        n_benign: count(&|e| e.label == ExamLabel::Benign),
        n_train_split: count(&|e| e.split_origin == SplitOrigin::Train),
        n_test_split: count(&|e| e.split_origin == SplitOrigin::Test),
    };
    write_json(&cfg.output_dir.join("ingest.json"), &s)?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSummary {
    pub n_patches: usize,
    pub distribution: BTreeMap<PatchLabel, f64>,
    pub dir: String,
}

/// Samples patches from the training exams of the first split and exports
/// them with a manifest.
pub fn cmd_patches(cfg: &PipelineConfig) -> Result<PatchSummary> {
    let data = load_dataset(cfg)?;
    let plans = plan_folds(cfg, &data.exams)?;
    let exams: Vec<_> = plans[0].train.iter().map(|id| data.exam(id)).collect();
    let seed = crate::rng::derive_seed(cfg.seed, &[crate::rng::tag("patches")]);
    let patches = sample_exam_patches(&exams, &cfg.sampler, seed)?;
    let dir = cfg.output_dir.join("patches");
    export_patches(&dir, &patches, seed)?;
    let distribution = if patches.is_empty() { BTreeMap::new() } else { class_distribution(&patches)? };
    Ok(PatchSummary { n_patches: patches.len(), distribution, dir: dir.to_string_lossy().into_owned() })
}

fn pooled(out: &Path, name: &str, stages: &[Option<&StageSummary>]) -> Result<Option<Pooled>> {
    let mut all = ScoreSet { ids: vec![], scores: vec![], labels: vec![] };
    for st in stages {
        let Some(t) = st.and_then(|s| s.test.as_ref()) else { return Ok(None) };
        let s = read_scores_csv(fs::File::open(out.join(&t.scores_csv))?)?;
        all.ids.extend(s.ids);
        all.scores.extend(s.scores);
        all.labels.extend(s.labels);
    }
    if all.n_pos() == 0 || all.n_neg() == 0 {
        return Ok(None);
    }
    let a = auc(&all)?;
    let roc = roc_curve(&all)?;
    let scores_csv = format!("scores_{name}.csv");
    let svg = format!("roc_{name}.svg");
    write_scores_csv(&all, fs::File::create(out.join(&scores_csv))?)?;
    write_roc_csv(&roc, fs::File::create(out.join(format!("roc_{name}.csv")))?)?;
    fs::write(out.join(&svg), roc_svg(&roc, &format!("pooled {name}"), a))?;
    Ok(Some(Pooled { auc: a, se: hanley_mcneil_se(a, all.n_pos(), all.n_neg())?, eer: eer_metrics(&all)?, scores_csv, roc_svg: svg }))
}

/// Full cascade on every split of the protocol. `extra_modes` adds fusion
/// variants trained from the same single-view models.
pub fn run_cascade(cfg: &PipelineConfig, from_stage: StageName, extra_modes: &[FusionMode]) -> Result<RunReport> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let plans = plan_folds(cfg, &data.exams)?;
    for p in &plans {
        audit_fold(p, &data.exams)?;
    }
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    let cascade =
        Cascade { cfg, data: &data, backbone: cfg.backbone.resolve()?, out: out.clone(), from_stage, extra_modes: extra_modes.to_vec() };
    let folds = plans.iter().map(|p| cascade.run_fold(p)).collect::<Result<Vec<_>>>()?;
    let mut pooled_map = BTreeMap::new();
    let mut columns: Vec<(String, Vec<Option<&StageSummary>>)> = vec![
        ("single".into(), folds.iter().map(|f| Some(&f.single)).collect()),
        ("two_view".into(), folds.iter().map(|f| Some(&f.two_view)).collect()),
    ];
    if let Some(first) = folds.first() {
        for (i, a) in first.ablations.iter().enumerate() {
            columns.push((a.stage.clone(), folds.iter().map(|f| f.ablations.get(i)).collect()));
        }
    }
    for (name, stages) in &columns {
        if let Some(p) = pooled(&out, name, stages)? {
            pooled_map.insert(name.clone(), p);
        }
    }
    let summary = summarize(&folds, pooled_map)?;
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        code_config_hash: code_config_hash(cfg)?,
        config: cfg.clone(),
        n_exams: data.exams.len(),
        folds,
        summary,
    };
    write_json(&out.join("report.json"), &report)?;
    fs::write(out.join("summary.txt"), text_summary(&report))?;
    Ok(report)
}

/// Runs the cascade once per seed (`cfg.seed`, `cfg.seed + 1`, ...) with
/// both fusion modes trained from the same single-view model.
pub fn cmd_ablate_fusion(cfg: &PipelineConfig, n_seeds: usize, from_stage: StageName) -> Result<AblationReport> {
    if n_seeds == 0 {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let mut runs = Vec::new();
    let other = match cfg.head.fusion {
        FusionMode::BeforePool => FusionMode::AfterPool,
        FusionMode::AfterPool => FusionMode::BeforePool,
    };
    for i in 0..n_seeds {
        let seed = cfg.seed + i as u64;
        let sub = format!("seed{seed}");
        let c = PipelineConfig { seed, output_dir: cfg.output_dir.join(&sub), ..cfg.clone() };
        let r = run_cascade(&c, from_stage, &[other])?;
        let main = r.summary.two_view_auc.mean;
        let alt = r.summary.ablations.values().next().map_or(f64::NAN, |m| m.mean);
        let (before, after) = match cfg.head.fusion {
            FusionMode::BeforePool => (main, alt),
            FusionMode::AfterPool => (alt, main),
        };
        runs.push(AblationRun {
            seed,
            report: format!("{sub}/report.json"),
            single_view_auc: r.summary.single_view_auc.mean,
            before_pool_auc: before,
            after_pool_auc: after,
            difference: before - after,
            two_view_gain: r.summary.two_view_gain,
        });
    }
    let m = |f: fn(&AblationRun) -> f64| Metric::of(runs.iter().map(f).collect());
    let n = runs.len() as f64;
    let report = AblationReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        code_config_hash: code_config_hash(cfg)?,
        patch_val_accuracy: Metric::of(
            runs.iter()
                .map(|r| {
                    let text = fs::read_to_string(cfg.output_dir.join(&r.report))?;
                    let rep: RunReport = serde_json::from_str(&text)?;
                    Ok(rep.summary.patch_val_accuracy.mean)
                })
                .collect::<Result<Vec<f64>>>()?,
        )?,
        single_view_auc: m(|r| r.single_view_auc)?,
        before_pool_auc: m(|r| r.before_pool_auc)?,
        after_pool_auc: m(|r| r.after_pool_auc)?,
        mean_difference: runs.iter().map(|r| r.difference).sum::<f64>() / n,
        mean_two_view_gain: runs.iter().map(|r| r.two_view_gain).sum::<f64>() / n,
        runs,
    };
    write_json(&cfg.output_dir.join("ablation.json"), &report)?;
    fs::write(cfg.output_dir.join("ablation.txt"), ablation_text(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: f64,
    pub se: f64,
    pub eer: EerMetrics,
    pub roc: Vec<RocPoint>,
}

/// Metrics, ROC CSV and ROC SVG for one score CSV.
pub fn cmd_eval(scores_csv: &Path, out: &Path) -> Result<EvalReport> {
    let file = fs::File::open(scores_csv).map_err(|e| Error::Ingest { path: scores_csv.to_path_buf(), reason: e.to_string() })?;
    let s = read_scores_csv(file)?;
    let a = auc(&s)?;
    let roc = roc_curve(&s)?;
    let r = EvalReport {
        n: s.len(),
        n_pos: s.n_pos(),
        n_neg: s.n_neg(),
        auc: a,
        se: hanley_mcneil_se(a, s.n_pos(), s.n_neg())?,
        eer: eer_metrics(&s)?,
        roc: roc.clone(),
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("metrics.json"), &r)?;
    write_roc_csv(&roc, fs::File::create(out.join("roc.csv"))?)?;
    let title = scores_csv.file_stem().map_or("scores".into(), |s| s.to_string_lossy().into_owned());
    fs::write(out.join("roc.svg"), roc_svg(&roc, &title, a))?;
    Ok(r)
}

/// Mean and population standard deviation of fold values.
pub fn cmd_aggregate(values: &[f64]) -> Result<Aggregate> {
    cv_aggregate(values)
}
