use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataio::{FoldOptions, SynthParams};
use crate::error::{Error, Result};
use crate::netforge::{BackboneConfig, BlockSpec, FusionMode, HeadSpec};
use crate::patchkit::SamplerConfig;
use crate::pixelops::AugmentParams;
use crate::trainloop::{named_plan, TrainPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Grouped k-fold cross-validation over all exams.
    Cv,
    /// The dataset's own train/test division.
    Od,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synth(SynthParams),
    /// A manifest written by the `synth` command.
    Manifest(PathBuf),
    /// Curated metadata CSV plus the directory its paths are relative to.
    Metadata {
        csv: PathBuf,
        image_root: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackboneRef {
    Name(String),
    Inline(BackboneConfig),
}

impl BackboneRef {
    pub fn resolve(&self) -> Result<BackboneConfig> {
        match self {
            BackboneRef::Name(n) => BackboneConfig::preset(n),
            BackboneRef::Inline(c) => {
                c.validate()?;
                Ok(c.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleRef {
    Name(String),
    Plan(TrainPlan),
}

/// Training plan of one stage: a registry name or an inline plan, with
/// optional rescaling for small compute budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub schedule: ScheduleRef,
    /// Caps the total epoch count (see `TrainPlan::capped`).
    #[serde(default)]
    pub max_epochs: Option<usize>,
    /// Multiplies every learning rate and cyclic amplitude.
    #[serde(default = "one")]
    pub lr_scale: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl StageConfig {
    fn named(name: &str, max_epochs: usize, lr_scale: f64) -> Self {
        Self { schedule: ScheduleRef::Name(name.into()), max_epochs: Some(max_epochs), lr_scale, batch_size: None }
    }

    pub fn resolve(&self, seed: u64) -> Result<TrainPlan> {
        let mut plan = match &self.schedule {
            ScheduleRef::Name(n) => named_plan(n)?,
            ScheduleRef::Plan(p) => p.clone(),
        };
        if let Some(m) = self.max_epochs {
            if m == 0 {
                return Err(Error::config("max_epochs must be positive"));
            }
            plan = plan.capped(m);
        }
        if !(self.lr_scale.is_finite() && self.lr_scale > 0.0) {
            return Err(Error::config(format!("lr_scale must be positive, got {}", self.lr_scale)));
        }
        for p in &mut plan.phases {
            p.schedule.base_lr *= self.lr_scale;
            p.schedule.delta *= self.lr_scale;
        }
        if let Some(b) = self.batch_size {
            plan.batch_size = b;
        }
        plan.seed = seed;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLayout {
    /// One stride-1 block.
    Cv,
    /// Two stride-2 blocks.
    Od,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    /// Defaults to the layout matching the protocol.
    pub layout: Option<BlockLayout>,
    pub expand_ratio: usize,
    pub fusion: FusionMode,
    pub tie_towers: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { layout: None, expand_ratio: 6, fusion: FusionMode::BeforePool, tie_towers: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub protocol: Protocol,
    /// Number of folds (cv only).
    pub k: usize,
    /// Fraction of each training split held out for model selection.
    pub val_fraction: f64,
    pub folds: FoldOptions,
    pub dataset: DatasetSource,
    pub input_height: usize,
    pub input_width: usize,
    pub sampler: SamplerConfig,
    /// `null` disables training augmentation.
    pub augment: Option<AugmentParams>,
    pub backbone: BackboneRef,
    pub head: HeadConfig,
    pub patch: StageConfig,
    pub single: StageConfig,
    pub two_view: StageConfig,
    /// Inputs used to re-estimate normalization statistics before each
    /// epoch; 0 keeps them fixed.
    pub recalibrate: usize,
    pub tta: bool,
    pub ensemble_size: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    /// Desk-scale run: synthetic phantoms, mini backbone, three folds and
    /// shortened, sped-up schedules.
    fn default() -> Self {
        Self {
            protocol: Protocol::Cv,
            k: 3,
            val_fraction: 0.15,
            folds: FoldOptions::default(),
            dataset: DatasetSource::Synth(SynthParams { n_exams: 210, ..SynthParams::default() }),
            input_height: 288,
            input_width: 224,
            sampler: SamplerConfig { patch_size: 64, n_lesion: 6, n_background: 6, ..SamplerConfig::default() },
            augment: Some(AugmentParams::standard()),
            backbone: BackboneRef::Name("mini".into()),
            head: HeadConfig { expand_ratio: 2, ..HeadConfig::default() },
            patch: StageConfig { batch_size: Some(16), ..StageConfig::named("patch_cv", 6, 10.0) },
            single: StageConfig { batch_size: Some(8), ..StageConfig::named("single_cv", 10, 100.0) },
            two_view: StageConfig { batch_size: Some(8), ..StageConfig::named("two_view_cv", 9, 10.0) },
            recalibrate: 32,
            tta: false,
            ensemble_size: 1,
            seed: 0,
            output_dir: PathBuf::from("runs/desk"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.protocol == Protocol::Cv && self.k < 2 {
            return Err(Error::config(format!("cv protocol needs k >= 2, got {}", self.k)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must be in (0, 1)"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("ensemble_size must be at least 1"));
        }
        let bb = self.backbone.resolve()?;
        bb.check_input(self.input_height, self.input_width)?;
        bb.check_input(self.sampler.patch_size, self.sampler.patch_size)?;
        self.sampler.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if let DatasetSource::Synth(p) = &self.dataset {
            p.validate(bb.total_stride())?;
        }
        if self.head.expand_ratio == 0 {
            return Err(Error::config("head expand_ratio must be positive"));
        }
        for s in [&self.patch, &self.single, &self.two_view] {
            s.resolve(0)?;
        }
        Ok(())
    }

    pub fn layout(&self) -> BlockLayout {
        self.head.layout.unwrap_or(match self.protocol {
            Protocol::Cv => BlockLayout::Cv,
            Protocol::Od => BlockLayout::Od,
        })
    }

    fn blocks(&self, channels: usize) -> Vec<BlockSpec> {
        match self.layout() {
            BlockLayout::Cv => HeadSpec::cv_blocks(channels, self.head.expand_ratio),
            BlockLayout::Od => HeadSpec::od_blocks(channels, self.head.expand_ratio),
        }
    }

    pub fn single_head(&self, bb: &BackboneConfig) -> HeadSpec {
        HeadSpec::single_view(self.blocks(bb.feature_channels))
    }

    pub fn two_view_head(&self, bb: &BackboneConfig, mode: FusionMode) -> HeadSpec {
        let mut h = HeadSpec::two_view(self.blocks(2 * bb.feature_channels), mode);
        h.tie_towers = self.head.tie_towers;
        h
    }

    /// Canonical JSON (sorted keys, no whitespace) used for hashing.
    pub fn canonical_json(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&v)?)
    }
}

/// Reads a JSON config (or the defaults when `path` is `None`) and applies
/// dotted overrides such as `("single.max_epochs", "4")`.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<PipelineConfig> {
    let mut v = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(PipelineConfig::default())?,
    };
    for (key, value) in overrides {
        apply_override(&mut v, key, value)?;
    }
    let cfg: PipelineConfig = serde_json::from_value(v).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Sets the value at a dotted path. The value is parsed as JSON when it
/// parses, otherwise taken as a string. Missing intermediate objects are
/// created.
pub fn apply_override(root: &mut Value, key: &str, value: &str) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("bad override key {key:?}")));
    }
    let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            return Err(Error::config(format!("override {key}: {} is not an object", parts[..i].join("."))));
        }
        let obj = cur.as_object_mut().expect("checked");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("non-empty key")
}
