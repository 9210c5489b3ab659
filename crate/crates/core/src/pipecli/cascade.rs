use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, PipelineConfig, Protocol};
use crate::dataio::{carve_validation, load_manifest, load_metadata, make_folds, synth_dataset, Exam, IngestOptions, SplitOrigin, View};
use crate::error::{Error, Result};
use crate::evalstat::{
    auc, eer_metrics, hanley_mcneil_se, roc_curve, roc_svg, write_roc_csv, write_scores_csv, EerMetrics, ScoreSet, Scorer,
};
use crate::netforge::{
    attach_patch_head, attach_seeded, build_backbone, fuse_two_view, load_checkpoint, save_checkpoint, BackboneConfig, FusionMode,
    ModelGraph, ModelInput,
};
use crate::patchkit::sample_exam_patches;
use crate::pixelops::{compute_train_mean, resize_bilinear, tta_views, Plane};
use crate::rng::{derive_seed, tag};
use crate::trainloop::{prepare_input, train, Example, Selection, TrainHistory, TrainOptions};

/// Stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Patch,
    Single,
    TwoView,
}

impl StageName {
    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Patch => "patch",
            StageName::Single => "single",
            StageName::TwoView => "two_view",
        }
    }
}

/// Exams plus their planes resized to the model input size.
pub struct Dataset {
    pub exams: Vec<Exam>,
    pub planes: BTreeMap<String, [Plane; 2]>,
}

impl Dataset {
    pub fn exam(&self, id: &str) -> &Exam {
        &self.exams[self.exams.binary_search_by(|e| e.exam_id.as_str().cmp(id)).expect("known exam id")]
    }
}

pub fn load_exams(cfg: &PipelineConfig) -> Result<Vec<Exam>> {
    let exams = match &cfg.dataset {
        DatasetSource::Synth(p) => synth_dataset(p)?.into_iter().map(|s| s.exam).collect(),
        DatasetSource::Manifest(path) => load_manifest(path)?,
        DatasetSource::Metadata { csv, image_root } => {
            let opts = match cfg.protocol {
                Protocol::Cv => IngestOptions::cv(),
                Protocol::Od => IngestOptions::od(),
            };
            load_metadata(csv, image_root, opts)?
        }
    };
    Ok(exams)
}

/// Loads the configured dataset, keeps exams with both views and resizes
/// every view to the model input size.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let mut exams = load_exams(cfg)?;
    let before = exams.len();
    exams.retain(Exam::has_both_views);
    if exams.len() < before {
        log::warn!("dropped {} exams lacking a view", before - exams.len());
    }
    exams.sort_by(|a, b| a.exam_id.cmp(&b.exam_id));
    if exams.windows(2).any(|w| w[0].exam_id == w[1].exam_id) {
        return Err(Error::validation("duplicate exam ids"));
    }
    let planes = exams
        .par_iter()
        .map(|e| {
            let view = |v: View| resize_bilinear(&e.image(v).expect("both views").to_plane(), cfg.input_height, cfg.input_width);
            Ok((e.exam_id.clone(), [view(View::Cc)?, view(View::Mlo)?]))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(Dataset { exams, planes })
}

/// Exam ids of one train/test split. The training mean is computed over
/// `mean_set` only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub mean_set: Vec<String>,
}

pub fn plan_folds(cfg: &PipelineConfig, exams: &[Exam]) -> Result<Vec<FoldPlan>> {
    let split = |fold: usize, trainval: Vec<String>, test: Vec<String>| -> Result<FoldPlan> {
        let (train, val) = carve_validation(&trainval, cfg.val_fraction, derive_seed(cfg.seed, &[tag("val"), fold as u64]))?;
        Ok(FoldPlan { fold, mean_set: train.clone(), train, val, test })
    };
    match cfg.protocol {
        Protocol::Cv => {
            let folds = make_folds(exams, cfg.k, cfg.seed, cfg.folds)?;
            (0..cfg.k)
                .map(|f| {
                    let (test, trainval): (Vec<&Exam>, Vec<&Exam>) = exams.iter().partition(|e| folds.fold_of(&e.exam_id) == Some(f));
                    split(f, ids(&trainval), ids(&test))
                })
                .collect()
        }
        Protocol::Od => {
            let test: Vec<&Exam> = exams.iter().filter(|e| e.split_origin == SplitOrigin::Test).collect();
            let trainval: Vec<&Exam> = exams.iter().filter(|e| e.split_origin == SplitOrigin::Train).collect();
            if test.is_empty() || trainval.is_empty() {
                return Err(Error::validation("od protocol needs exams marked both train and test"));
            }
            Ok(vec![split(0, ids(&trainval), ids(&test))?])
        }
    }
}

fn ids(exams: &[&Exam]) -> Vec<String> {
    exams.iter().map(|e| e.exam_id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_mean: usize,
    pub test_in_train: usize,
    pub test_in_val: usize,
    pub test_in_mean: usize,
    /// Breasts with exams on both sides of the train/test boundary.
    pub straddling_breasts: usize,
}

/// Proves the test set is disjoint from every set used for fitting.
pub fn audit_fold(plan: &FoldPlan, exams: &[Exam]) -> Result<AuditRecord> {
    let test: BTreeSet<&str> = plan.test.iter().map(String::as_str).collect();
    let hits = |s: &[String]| s.iter().filter(|id| test.contains(id.as_str())).count();
    let by_id: BTreeMap<&str, &Exam> = exams.iter().map(|e| (e.exam_id.as_str(), e)).collect();
    let breast = |id: &str| by_id.get(id).map(|e| e.breast_key());
    let test_breasts: BTreeSet<_> = plan.test.iter().filter_map(|id| breast(id)).collect();
    let fit_breasts: BTreeSet<_> = plan.train.iter().chain(&plan.val).chain(&plan.mean_set).filter_map(|id| breast(id)).collect();
    let rec = AuditRecord {
        fold: plan.fold,
        n_train: plan.train.len(),
        n_val: plan.val.len(),
        n_test: plan.test.len(),
        n_mean: plan.mean_set.len(),
        test_in_train: hits(&plan.train),
        test_in_val: hits(&plan.val),
        test_in_mean: hits(&plan.mean_set),
        straddling_breasts: test_breasts.intersection(&fit_breasts).count(),
    };
    if rec.test_in_train + rec.test_in_val + rec.test_in_mean + rec.straddling_breasts > 0 {
        return Err(Error::Audit(format!("fold {}: {rec:?}", plan.fold)));
    }
    Ok(rec)
}

/// Held-out metrics of one model on the test exams of a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub auc: f64,
    pub se: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub eer: EerMetrics,
    pub scores_csv: String,
    pub roc_csv: String,
    pub roc_svg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    /// Validation accuracy (patch stage) or validation AUC.
    pub best_val: Option<f64>,
    pub history_csv: String,
    pub checkpoints: Vec<String>,
    pub test: Option<TestMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub audit: AuditRecord,
    pub train_mean: f64,
    pub n_patches_train: usize,
    pub n_patches_val: usize,
    pub patch: StageSummary,
    pub single: StageSummary,
    pub two_view: StageSummary,
    /// Extra fusion variants trained from the same single-view model.
    pub ablations: Vec<StageSummary>,
}

/// Run context shared by all folds.
pub struct Cascade<'a> {
    pub cfg: &'a PipelineConfig,
    pub data: &'a Dataset,
    pub backbone: BackboneConfig,
    /// Root that all artifact paths are relative to.
    pub out: PathBuf,
    pub from_stage: StageName,
    pub extra_modes: Vec<FusionMode>,
}

fn mode_name(m: FusionMode) -> &'static str {
    match m {
        FusionMode::BeforePool => "before_pool",
        FusionMode::AfterPool => "after_pool",
    }
}

struct Member<'m> {
    model: &'m ModelGraph<f32>,
    tta: bool,
}

impl Scorer for Member<'_> {
    fn malignant_prob(&self, input: &ModelInput) -> Result<f64> {
        let plain = |x: &ModelInput| Ok(self.model.predict(x)?[1] as f64);
        if self.tta {
            crate::evalstat::tta_score(&plain, input, tta_views)
        } else {
            plain(input)
        }
    }
}

/// Malignant-class scores of `models` (averaged) over `set`, with optional
/// test-time flips.
pub fn score_examples(models: &[&ModelGraph<f32>], set: &[Example], mean: f32, tta: bool) -> Result<ScoreSet> {
    let members: Vec<Member> = models.iter().map(|m| Member { model: m, tta }).collect();
    let opts = TrainOptions { mean, ..TrainOptions::plain(Selection::LastEpoch) };
    let scores = set
        .par_iter()
        .map(|ex| crate::evalstat::ensemble_score(&members, &prepare_input(&ex.input, &opts, None)))
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::with_ids(set.iter().map(|e| e.id.clone()).collect(), scores, set.iter().map(|e| e.label as u8).collect())
}

impl Cascade<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, bytes)?;
        Ok(())
    }

    fn opts(&self, mean: f32, selection: Selection) -> TrainOptions {
        TrainOptions { mean, augment: self.cfg.augment, selection, recalibrate: (self.cfg.recalibrate > 0).then_some(self.cfg.recalibrate) }
    }

    fn calibration_inputs(&self, set: &[Example], mean: f32) -> Vec<ModelInput> {
        let opts = TrainOptions { mean, ..TrainOptions::plain(Selection::LastEpoch) };
        set.iter().take(self.cfg.recalibrate.max(16)).map(|e| prepare_input(&e.input, &opts, None)).collect()
    }

    fn view_examples(&self, ids: &[String]) -> Vec<Example> {
        let mut out = Vec::with_capacity(ids.len() * 2);
        for id in ids {
            let label = self.data.exam(id).label.binary() as usize;
            for view in View::BOTH {
                out.push(Example {
                    id: format!("{id}_{view}"),
                    input: ModelInput::Single(self.data.planes[id][view.index()].clone()),
                    label,
                });
            }
        }
        out
    }

    fn pair_examples(&self, ids: &[String]) -> Vec<Example> {
        ids.iter()
            .map(|id| {
                let [cc, mlo] = self.data.planes[id].clone();
                Example { id: id.clone(), input: ModelInput::Pair { cc, mlo }, label: self.data.exam(id).label.binary() as usize }
            })
            .collect()
    }

    fn patch_examples(&self, ids: &[String], seed: u64) -> Result<Vec<Example>> {
        let exams: Vec<&Exam> = ids.iter().map(|id| self.data.exam(id)).collect();
        let patches = sample_exam_patches(&exams, &self.cfg.sampler, seed)?;
        Ok(patches
            .into_iter()
            .enumerate()
            .map(|(i, p)| Example {
                id: format!("{}_{}_{i}", p.source_exam_id, p.view),
                input: ModelInput::Single(p.pixels.to_plane()),
                label: p.label.index(),
            })
            .collect())
    }

    fn test_metrics(&self, dir: &str, name: &str, scores: &ScoreSet) -> Result<TestMetrics> {
        let a = auc(scores)?;
        let roc = roc_curve(scores)?;
        let scores_csv = format!("{dir}/scores_{name}.csv");
        let roc_csv = format!("{dir}/roc_{name}.csv");
        let svg = format!("{dir}/roc_{name}.svg");
        let mut buf = Vec::new();
        write_scores_csv(scores, &mut buf)?;
        self.write(&scores_csv, buf)?;
        let mut buf = Vec::new();
        write_roc_csv(&roc, &mut buf)?;
        self.write(&roc_csv, buf)?;
        self.write(&svg, roc_svg(&roc, &format!("{dir} {name}"), a))?;
        Ok(TestMetrics {
            auc: a,
            se: hanley_mcneil_se(a, scores.n_pos(), scores.n_neg())?,
            n_pos: scores.n_pos(),
            n_neg: scores.n_neg(),
            eer: eer_metrics(scores)?,
            scores_csv,
            roc_csv,
            roc_svg: svg,
        })
    }

    fn finish_stage(
        &self,
        dir: &str,
        name: &str,
        history: &TrainHistory,
        metric: fn(&crate::trainloop::EpochRecord) -> Option<f64>,
        checkpoints: Vec<String>,
        test: Option<TestMetrics>,
    ) -> Result<StageSummary> {
        let history_csv = format!("{dir}/history_{name}.csv");
        let mut buf = Vec::new();
        history.write_csv(&mut buf)?;
        self.write(&history_csv, buf)?;
        let best_val = history.best_epoch.and_then(|e| metric(&history.records[e]));
        let s = StageSummary {
            stage: name.into(),
            epochs: history.records.len(),
            best_epoch: history.best_epoch,
            best_val,
            history_csv,
            checkpoints,
            test,
        };
        self.write(&format!("{dir}/summary_{name}.json"), serde_json::to_string_pretty(&s)? + "\n")?;
        Ok(s)
    }

    fn load_stage(&self, dir: &str, name: &str) -> Result<(Vec<ModelGraph<f32>>, StageSummary)> {
        let p = self.path(&format!("{dir}/summary_{name}.json"));
        let text = fs::read_to_string(&p).map_err(|e| Error::Ingest { path: p.clone(), reason: e.to_string() })?;
        let s: StageSummary = serde_json::from_str(&text)?;
        let models = s.checkpoints.iter().map(|c| load_checkpoint(&self.path(c))).collect::<Result<_>>()?;
        Ok((models, s))
    }

    fn save(&self, rel: &str, model: &ModelGraph<f32>) -> Result<String> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        save_checkpoint(model, &p)?;
        Ok(rel.to_string())
    }

    /// Runs (or reloads, before `from_stage`) the three stages of one fold.
    pub fn run_fold(&self, plan: &FoldPlan) -> Result<FoldOutcome> {
        let audit = audit_fold(plan, &self.data.exams).map_err(|e| e.in_stage("audit"))?;
        let cfg = self.cfg;
        let dir = format!("fold{}", plan.fold);
        let fseed = derive_seed(cfg.seed, &[tag("fold"), plan.fold as u64]);
        let mean_planes: Vec<&Plane> = plan.mean_set.iter().flat_map(|id| self.data.planes[id].iter()).collect();
        let train_mean = compute_train_mean(mean_planes)?;
        let mean = train_mean as f32;

        // stage 1: patch classifier
        let t0 = Instant::now();
        let patch_train = self.patch_examples(&plan.train, derive_seed(fseed, &[tag("patches"), 0]))?;
        let patch_val = self.patch_examples(&plan.val, derive_seed(fseed, &[tag("patches"), 1]))?;
        let (patch_model, patch) = if self.from_stage > StageName::Patch {
            let (mut m, s) = self.load_stage(&dir, "patch").map_err(|e| e.in_stage("patch"))?;
            (m.remove(0), s)
        } else {
            let run = || -> Result<_> {
                let s = cfg.sampler.patch_size;
                let seed = derive_seed(fseed, &[tag("patch")]);
                let mut m = attach_patch_head(&build_backbone(&self.backbone, (s, s), seed)?, seed)?;
                m.calibrate(&self.calibration_inputs(&patch_train, mean), "*")?;
                let h = train(&mut m, &patch_train, &patch_val, &cfg.patch.resolve(seed)?, &self.opts(mean, Selection::ValAccuracy))?;
                let ck = self.save(&format!("{dir}/checkpoints/patch.ckpt"), &m)?;
                let s = self.finish_stage(&dir, "patch", &h, |r| r.val_accuracy, vec![ck], None)?;
                Ok((m, s))
            };
            run().map_err(|e| e.in_stage("patch"))?
        };
        log::info!("fold {} patch stage: val accuracy {:?} ({:.1?})", plan.fold, patch.best_val, t0.elapsed());

        // stage 2: single-view classifier
        let t0 = Instant::now();
        let view_train = self.view_examples(&plan.train);
        let view_val = self.view_examples(&plan.val);
        let view_test = self.view_examples(&plan.test);
        let (single_model, single) = if self.from_stage > StageName::Single {
            let (mut m, s) = self.load_stage(&dir, "single").map_err(|e| e.in_stage("single"))?;
            (m.remove(0), s)
        } else {
            let run = || -> Result<_> {
                let seed = derive_seed(fseed, &[tag("single")]);
                let base = patch_model.with_input_dims(cfg.input_height, cfg.input_width)?;
                let (mut m, report) = attach_seeded(&base, cfg.single_head(&self.backbone), seed)?;
                log::debug!("single-view transfer: {report:?}");
                m.calibrate(&self.calibration_inputs(&view_train, mean), "*")?;
                let h = train(&mut m, &view_train, &view_val, &cfg.single.resolve(seed)?, &self.opts(mean, Selection::ValAuc))?;
                let ck = self.save(&format!("{dir}/checkpoints/single.ckpt"), &m)?;
                let scores = score_examples(&[&m], &view_test, mean, cfg.tta)?;
                let test = self.test_metrics(&dir, "single", &scores)?;
                let s = self.finish_stage(&dir, "single", &h, |r| r.val_auc, vec![ck], Some(test))?;
                Ok((m, s))
            };
            run().map_err(|e| e.in_stage("single"))?
        };
        log::info!("fold {} single-view stage: test AUC {:?} ({:.1?})", plan.fold, single.test.as_ref().map(|t| t.auc), t0.elapsed());

        // stage 3: two-view fusion, plus any ablation variants
        let pair_train = self.pair_examples(&plan.train);
        let pair_val = self.pair_examples(&plan.val);
        let pair_test = self.pair_examples(&plan.test);
        let fuse = |mode: FusionMode, name: &str, members: usize| -> Result<StageSummary> {
            let t0 = Instant::now();
            let mut models = Vec::new();
            let mut first_history = None;
            let mut checkpoints = Vec::new();
            for j in 0..members {
                let seed = derive_seed(fseed, &[tag("two_view"), j as u64]);
                let (mut m, report) = fuse_two_view(&single_model, cfg.two_view_head(&self.backbone, mode), seed)?;
                log::debug!("two-view transfer: {report:?}");
                m.calibrate(&self.calibration_inputs(&pair_train, mean), "fusion.*")?;
                let h = train(&mut m, &pair_train, &pair_val, &cfg.two_view.resolve(seed)?, &self.opts(mean, Selection::ValAuc))?;
                let suffix = if members > 1 { format!("_{j}") } else { String::new() };
                checkpoints.push(self.save(&format!("{dir}/checkpoints/{name}{suffix}.ckpt"), &m)?);
                first_history.get_or_insert(h);
                models.push(m);
            }
            let refs: Vec<&ModelGraph<f32>> = models.iter().collect();
            let scores = score_examples(&refs, &pair_test, mean, cfg.tta)?;
            let test = self.test_metrics(&dir, name, &scores)?;
            let s = self.finish_stage(&dir, name, &first_history.expect("members >= 1"), |r| r.val_auc, checkpoints, Some(test))?;
            log::info!("fold {} {name}: test AUC {:.4} ({:.1?})", plan.fold, s.test.as_ref().map_or(f64::NAN, |t| t.auc), t0.elapsed());
            Ok(s)
        };
        let two_view = fuse(cfg.head.fusion, "two_view", cfg.ensemble_size).map_err(|e| e.in_stage("two_view"))?;
        let mut ablations = Vec::new();
        for &mode in &self.extra_modes {
            if mode == cfg.head.fusion {
                continue;
            }
            let name = format!("two_view_{}", mode_name(mode));
            ablations.push(fuse(mode, &name, 1).map_err(|e| e.in_stage(&name))?);
        }
        Ok(FoldOutcome {
            fold: plan.fold,
            audit,
            train_mean,
            n_patches_train: patch_train.len(),
            n_patches_val: patch_val.len(),
            patch,
            single,
            two_view,
            ablations,
        })
    }
}
