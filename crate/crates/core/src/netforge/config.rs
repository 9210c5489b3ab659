use serde::{Deserialize, Serialize};

use super::layers::same_padding;
use crate::error::{Error, Result};

/// One group of MBConv blocks; `stride` applies to the first repeat only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub expand_ratio: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Squeeze-excite width as a fraction of the block input channels; 0 disables it.
    pub se_ratio: f64,
    pub repeats: usize,
}

impl BlockSpec {
    pub const fn new(expand_ratio: usize, out_channels: usize, kernel: usize, stride: usize, repeats: usize) -> Self {
        Self { expand_ratio, out_channels, kernel, stride, se_ratio: 0.25, repeats }
    }

    fn validate(&self, ctx: &str) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("{ctx}: {what}")));
        if self.expand_ratio == 0 {
            return bad("expand_ratio must be at least 1");
        }
        if self.out_channels == 0 {
            return bad("out_channels must be positive");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        if !(1..=2).contains(&self.stride) {
            return bad("stride must be 1 or 2");
        }
        if !(0.0..=1.0).contains(&self.se_ratio) {
            return bad("se_ratio must lie in [0, 1]");
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1");
        }
        Ok(())
    }
}

/// A single block after expanding repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockInstance {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expand_ratio: usize,
    pub kernel: usize,
    pub stride: usize,
    pub se_ratio: f64,
}

impl BlockInstance {
    pub fn expanded(&self) -> usize {
        self.in_channels * self.expand_ratio
    }

    pub fn se_width(&self) -> Option<usize> {
        (self.se_ratio > 0.0).then(|| ((self.in_channels as f64 * self.se_ratio).floor() as usize).max(1))
    }

    pub fn residual(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }
}

/// Expands block groups into individual blocks starting from `in_channels`.
pub fn expand_blocks(specs: &[BlockSpec], mut in_channels: usize) -> Vec<BlockInstance> {
    let mut out = Vec::new();
    for s in specs {
        for r in 0..s.repeats {
            out.push(BlockInstance {
                in_channels,
                out_channels: s.out_channels,
                expand_ratio: s.expand_ratio,
                kernel: s.kernel,
                stride: if r == 0 { s.stride } else { 1 },
                se_ratio: s.se_ratio,
            });
            in_channels = s.out_channels;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub name: String,
    /// Image channels; a grayscale plane is replicated into each.
    pub in_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_channels: usize,
    pub stages: Vec<BlockSpec>,
    /// Channels of the final 1x1 convolution.
    pub feature_channels: usize,
    pub declared_total_stride: usize,
}

impl BackboneConfig {
    /// EfficientNet-B0 layout, for shape checks.
    pub fn b0() -> Self {
        Self {
            name: "b0".into(),
            in_channels: 3,
            stem_kernel: 3,
            stem_stride: 2,
            stem_channels: 32,
            stages: vec![
                BlockSpec::new(1, 16, 3, 1, 1),
                BlockSpec::new(6, 24, 3, 2, 2),
                BlockSpec::new(6, 40, 5, 2, 2),
                BlockSpec::new(6, 80, 3, 2, 3),
                BlockSpec::new(6, 112, 5, 1, 3),
                BlockSpec::new(6, 192, 5, 2, 4),
                BlockSpec::new(6, 320, 3, 1, 1),
            ],
            feature_channels: 1280,
            declared_total_stride: 32,
        }
    }

    /// EfficientNet-B4 layout, for shape checks.
    pub fn b4() -> Self {
        Self {
            name: "b4".into(),
            in_channels: 3,
            stem_kernel: 3,
            stem_stride: 2,
            stem_channels: 48,
            stages: vec![
                BlockSpec::new(1, 24, 3, 1, 2),
                BlockSpec::new(6, 32, 3, 2, 4),
                BlockSpec::new(6, 56, 5, 2, 4),
                BlockSpec::new(6, 112, 3, 2, 6),
                BlockSpec::new(6, 160, 5, 1, 6),
                BlockSpec::new(6, 272, 5, 2, 8),
                BlockSpec::new(6, 448, 3, 1, 2),
            ],
            feature_channels: 1792,
            declared_total_stride: 32,
        }
    }

    /// Small backbone that trains on one CPU core.
    pub fn mini() -> Self {
        Self {
            name: "mini".into(),
            in_channels: 1,
            stem_kernel: 3,
            stem_stride: 2,
            stem_channels: 16,
            stages: vec![
                BlockSpec::new(1, 16, 3, 2, 1),
                BlockSpec::new(3, 24, 3, 2, 1),
                BlockSpec::new(3, 40, 5, 2, 1),
                BlockSpec::new(3, 64, 3, 2, 1),
                BlockSpec::new(3, 64, 3, 1, 1),
            ],
            feature_channels: 96,
            declared_total_stride: 32,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "b0" => Ok(Self::b0()),
            "b4" => Ok(Self::b4()),
            "mini" => Ok(Self::mini()),
            other => Err(Error::config(format!("unknown backbone preset {other:?}"))),
        }
    }

    pub fn blocks(&self) -> Vec<BlockInstance> {
        expand_blocks(&self.stages, self.stem_channels)
    }

    pub fn total_stride(&self) -> usize {
        self.stem_stride * self.stages.iter().map(|s| s.stride).product::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_channels == 0 || self.feature_channels == 0 {
            return Err(Error::config(format!("backbone {}: channel counts must be positive", self.name)));
        }
        if self.stem_kernel % 2 == 0 || !(1..=2).contains(&self.stem_stride) {
            return Err(Error::config(format!("backbone {}: stem needs an odd kernel and stride 1 or 2", self.name)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate(&format!("backbone {} stage {i}", self.name))?;
        }
        let total = self.total_stride();
        if total != self.declared_total_stride {
            return Err(Error::config(format!(
                "backbone {}: strides multiply to {total}, declared {}",
                self.name, self.declared_total_stride
            )));
        }
        Ok(())
    }

    /// Checks that the input divides evenly by the total stride.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        for (what, d) in [("height", h), ("width", w)] {
            if d == 0 || d % self.declared_total_stride != 0 {
                return Err(Error::config(format!(
                    "input {what} {d} is not divisible by the total stride {} of backbone {}",
                    self.declared_total_stride, self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Patch5,
    SingleView2,
    TwoView2,
}

/// Where the two towers meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Concatenate feature maps, run the fusion blocks, then pool.
    #[default]
    BeforePool,
    /// Pool each tower, concatenate, run the fusion blocks on 1x1 maps.
    AfterPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub new_blocks: Vec<BlockSpec>,
    pub dense_out: usize,
    #[serde(default)]
    pub fusion: FusionMode,
    /// Two-view only: both towers share one set of weights.
    #[serde(default)]
    pub tie_towers: bool,
}

impl HeadSpec {
    pub fn patch() -> Self {
        Self { kind: HeadKind::Patch5, new_blocks: vec![], dense_out: 5, fusion: FusionMode::BeforePool, tie_towers: false }
    }

    pub fn single_view(new_blocks: Vec<BlockSpec>) -> Self {
        Self { kind: HeadKind::SingleView2, new_blocks, dense_out: 2, fusion: FusionMode::BeforePool, tie_towers: false }
    }

    pub fn two_view(new_blocks: Vec<BlockSpec>, fusion: FusionMode) -> Self {
        Self { kind: HeadKind::TwoView2, new_blocks, dense_out: 2, fusion, tie_towers: false }
    }

    /// One stride-1 block that keeps `channels`.
    pub fn cv_blocks(channels: usize, expand_ratio: usize) -> Vec<BlockSpec> {
        vec![BlockSpec::new(expand_ratio, channels, 3, 1, 1)]
    }

    /// Two stride-2 blocks that keep `channels`.
    pub fn od_blocks(channels: usize, expand_ratio: usize) -> Vec<BlockSpec> {
        vec![BlockSpec::new(expand_ratio, channels, 3, 2, 1); 2]
    }

    pub fn n_new_blocks(&self) -> usize {
        self.new_blocks.iter().map(|b| b.repeats).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.new_blocks.iter().enumerate() {
            b.validate(&format!("head block {i}"))?;
        }
        match self.kind {
            HeadKind::Patch5 if !self.new_blocks.is_empty() || self.dense_out != 5 => {
                Err(Error::config("patch head takes no new blocks and five outputs"))
            }
            HeadKind::SingleView2 | HeadKind::TwoView2 if self.dense_out != 2 || self.n_new_blocks() > 2 => {
                Err(Error::config("view heads take at most two new blocks and two outputs"))
            }
            _ => Ok(()),
        }
    }
}

/// Layer name and output shape `(c, h, w)`.
pub type ShapeRow = (String, (usize, usize, usize));

/// Output shapes of every backbone layer without allocating activations.
pub fn plan_backbone(cfg: &BackboneConfig, h: usize, w: usize) -> Result<Vec<ShapeRow>> {
    cfg.validate()?;
    cfg.check_input(h, w)?;
    let (mut h, mut w) = (same_padding(h, cfg.stem_kernel, cfg.stem_stride).0, same_padding(w, cfg.stem_kernel, cfg.stem_stride).0);
    let mut rows = vec![("stem".to_string(), (cfg.stem_channels, h, w))];
    for (i, b) in cfg.blocks().iter().enumerate() {
        h = same_padding(h, b.kernel, b.stride).0;
        w = same_padding(w, b.kernel, b.stride).0;
        rows.push((format!("blocks.{i}"), (b.out_channels, h, w)));
    }
    rows.push(("top".to_string(), (cfg.feature_channels, h, w)));
    Ok(rows)
}

/// Shapes through new head blocks applied to `(c, h, w)` features.
pub fn plan_blocks(prefix: &str, blocks: &[BlockSpec], (c, mut h, mut w): (usize, usize, usize)) -> Result<Vec<ShapeRow>> {
    let mut rows = Vec::new();
    for (i, b) in expand_blocks(blocks, c).iter().enumerate() {
        if h == 0 || w == 0 {
            return Err(Error::config(format!("{prefix}.blocks.{i}: feature map is empty")));
        }
        h = same_padding(h, b.kernel, b.stride).0;
        w = same_padding(w, b.kernel, b.stride).0;
        rows.push((format!("{prefix}.blocks.{i}"), (b.out_channels, h, w)));
    }
    Ok(rows)
}

/// Shapes of a two-view model after the towers: concatenation, fusion
/// blocks and pooling input.
pub fn plan_two_view(cfg: &BackboneConfig, head: &HeadSpec, h: usize, w: usize) -> Result<Vec<ShapeRow>> {
    let tower = plan_backbone(cfg, h, w)?.last().expect("top").1;
    let (c, fh, fw) = tower;
    let concat = match head.fusion {
        FusionMode::BeforePool => (2 * c, fh, fw),
        FusionMode::AfterPool => (2 * c, 1, 1),
    };
    let mut rows = vec![("concat".to_string(), concat)];
    rows.extend(plan_blocks("fusion", &head.new_blocks, concat)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last(rows: &[ShapeRow]) -> (usize, usize, usize) {
        rows.last().unwrap().1
    }

    #[test]
    fn presets_are_consistent() {
        for cfg in [BackboneConfig::b0(), BackboneConfig::b4(), BackboneConfig::mini()] {
            cfg.validate().unwrap();
            assert_eq!(cfg.total_stride(), 32);
        }
        assert_eq!(BackboneConfig::b0().blocks().len(), 16);
        assert_eq!(BackboneConfig::b4().blocks().len(), 32);
        let mini = BackboneConfig::mini();
        assert!((4..=6).contains(&mini.blocks().len()));
        assert_eq!(mini.stem_channels, 16);
    }

    #[test]
    fn mini_plan_at_desk_resolution() {
        assert_eq!(last(&plan_backbone(&BackboneConfig::mini(), 288, 224).unwrap()), (96, 9, 7));
        let od = plan_blocks("single", &HeadSpec::od_blocks(96, 2), (96, 9, 7)).unwrap();
        assert_eq!(last(&od), (96, 3, 2));
    }

    #[test]
    fn declared_stride_is_enforced() {
        let mut cfg = BackboneConfig::mini();
        cfg.declared_total_stride = 16;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let err = BackboneConfig::mini().check_input(300, 224).unwrap_err();
        assert!(err.to_string().contains("300"));
    }

    #[test]
    fn se_width_and_residual() {
        let b = BackboneConfig::b0().blocks();
        assert_eq!(b[0].se_width(), Some(8));
        assert!(!b[1].residual() && b[2].residual());
    }

    #[test]
    fn invalid_heads() {
        assert!(HeadSpec { new_blocks: HeadSpec::cv_blocks(8, 1), ..HeadSpec::patch() }.validate().is_err());
        let three = vec![BlockSpec::new(1, 8, 3, 1, 3)];
        assert!(HeadSpec::single_view(three).validate().is_err());
    }
}
