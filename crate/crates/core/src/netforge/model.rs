use serde::{Deserialize, Serialize};

use super::config::{expand_blocks, BackboneConfig, BlockInstance, FusionMode, HeadKind, HeadSpec};
use super::layers::{
    global_avg_pool, global_avg_pool_backward, softmax, softmax_cross_entropy, swish_backward, swish_tensor, Calibration, Conv, Dense,
    DepthwiseConv, Init, Norm, SeCache, SqueezeExcite,
};
use super::params::{Grads, ParamId, ParamStore};
use super::{ModelInput, Scalar, Tensor};
use crate::dataio::View;
use crate::error::{Error, Result};

/// Which cascade stage a graph belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Backbone,
    Patch,
    SingleView,
    TwoView,
}

/// Everything needed to rebuild a graph's topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneConfig,
    pub input_height: usize,
    pub input_width: usize,
    pub head: Option<HeadSpec>,
}

impl ModelSpec {
    pub fn stage(&self) -> Stage {
        match self.head.as_ref().map(|h| h.kind) {
            None => Stage::Backbone,
            Some(HeadKind::Patch5) => Stage::Patch,
            Some(HeadKind::SingleView2) => Stage::SingleView,
            Some(HeadKind::TwoView2) => Stage::TwoView,
        }
    }
}

// ---------------------------------------------------------------- units

#[derive(Debug, Clone)]
struct ConvNormAct {
    conv: Conv,
    norm: Norm,
}

struct CnaCache<T> {
    pre: Tensor<T>,
    z: Tensor<T>,
}

impl ConvNormAct {
    fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        calib: Option<&mut Calibration>,
        keep: bool,
    ) -> (Tensor<T>, Option<CnaCache<T>>) {
        let pre = self.conv.forward(p, x);
        let z = self.norm.forward(p, &pre, calib);
        let y = swish_tensor(&z);
        (y, keep.then_some(CnaCache { pre, z }))
    }

    fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        c: &CnaCache<T>,
        dy: Tensor<T>,
        g: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let dz = swish_backward(&c.z, dy);
        let dpre = self.norm.backward(p, &c.pre, &dz, g, true).expect("requested");
        self.conv.backward(p, x, &dpre, g, need_dx)
    }
}

#[derive(Debug, Clone)]
struct MbBlock {
    expand: Option<ConvNormAct>,
    dw: DepthwiseConv,
    dw_norm: Norm,
    se: Option<SqueezeExcite>,
    project: Conv,
    proj_norm: Norm,
    residual: bool,
}

struct BlockCache<T> {
    expand: Option<(Tensor<T>, CnaCache<T>)>,
    d_pre: Tensor<T>,
    d_z: Tensor<T>,
    d: Tensor<T>,
    se: Option<SeCache<T>>,
    s: Tensor<T>,
    p_pre: Tensor<T>,
}

impl MbBlock {
    fn new<T: Scalar>(init: &mut Init<T>, group: &str, b: &BlockInstance) -> Self {
        let e = b.expanded();
        let expand = (b.expand_ratio != 1).then(|| ConvNormAct {
            conv: Conv::new(init, &format!("{group}.expand.conv"), group, b.in_channels, e, 1, 1),
            norm: Norm::new(init, &format!("{group}.expand.norm"), group, e),
        });
        Self {
            expand,
            dw: DepthwiseConv::new(init, &format!("{group}.dw.conv"), group, e, b.kernel, b.stride),
            dw_norm: Norm::new(init, &format!("{group}.dw.norm"), group, e),
            se: b.se_width().map(|r| SqueezeExcite::new(init, &format!("{group}.se"), group, e, r)),
            project: Conv::new(init, &format!("{group}.project.conv"), group, e, b.out_channels, 1, 1),
            proj_norm: Norm::new(init, &format!("{group}.project.norm"), group, b.out_channels),
            residual: b.residual(),
        }
    }

    fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        mut calib: Option<&mut Calibration>,
        keep: bool,
    ) -> (Tensor<T>, Option<BlockCache<T>>) {
        let expand = self.expand.as_ref().map(|e| e.forward(p, x, calib.as_deref_mut(), keep));
        let (e_out, e_cache) = match expand {
            Some((y, c)) => (Some(y), c),
            None => (None, None),
        };
        let e_ref = e_out.as_ref().unwrap_or(x);
        let d_pre = self.dw.forward(p, e_ref);
        let d_z = self.dw_norm.forward(p, &d_pre, calib.as_deref_mut());
        let d = swish_tensor(&d_z);
        let (s, se_cache) = match &self.se {
            Some(se) => {
                let (s, c) = se.forward(p, &d);
                (s, Some(c))
            }
            None => (d.clone(), None),
        };
        let p_pre = self.project.forward(p, &s);
        let mut y = self.proj_norm.forward(p, &p_pre, calib);
        if self.residual {
            for (a, &b) in y.data.iter_mut().zip(&x.data) {
                *a += b;
            }
        }
        let cache = keep.then(|| BlockCache { expand: e_out.zip(e_cache), d_pre, d_z, d, se: se_cache, s, p_pre });
        (y, cache)
    }

    fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        c: &BlockCache<T>,
        dy: Tensor<T>,
        g: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let dp = self.proj_norm.backward(p, &c.p_pre, &dy, g, true).expect("requested");
        let ds = self.project.backward(p, &c.s, &dp, g, true).expect("requested");
        let dd = match (&self.se, &c.se) {
            (Some(se), Some(sc)) => se.backward(p, &c.d, sc, &ds, g, true).expect("requested"),
            _ => ds,
        };
        let dz = swish_backward(&c.d_z, dd);
        let dpre = self.dw_norm.backward(p, &c.d_pre, &dz, g, true).expect("requested");
        let need_e = need_dx || self.expand.is_some();
        let e_in = c.expand.as_ref().map(|(e, _)| e).unwrap_or(x);
        let de = self.dw.backward(p, e_in, &dpre, g, need_e);
        let mut dx = match (&self.expand, &c.expand) {
            (Some(ex), Some((_, ec))) => ex.backward(p, x, ec, de.expect("requested"), g, need_dx),
            _ => de,
        };
        if self.residual {
            if let Some(dx) = dx.as_mut() {
                for (a, &b) in dx.data.iter_mut().zip(&dy.data) {
                    *a += b;
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
enum Unit {
    Cna(ConvNormAct),
    Block(MbBlock),
}

enum UnitCache<T> {
    Cna(CnaCache<T>),
    Block(BlockCache<T>),
}

impl Unit {
    fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        calib: Option<&mut Calibration>,
        keep: bool,
    ) -> (Tensor<T>, Option<UnitCache<T>>) {
        match self {
            Unit::Cna(u) => {
                let (y, c) = u.forward(p, x, calib, keep);
                (y, c.map(UnitCache::Cna))
            }
            Unit::Block(u) => {
                let (y, c) = u.forward(p, x, calib, keep);
                (y, c.map(UnitCache::Block))
            }
        }
    }

    fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        c: &UnitCache<T>,
        dy: Tensor<T>,
        g: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        match (self, c) {
            (Unit::Cna(u), UnitCache::Cna(c)) => u.backward(p, x, c, dy, g, need_dx),
            (Unit::Block(u), UnitCache::Block(c)) => u.backward(p, x, c, dy, g, need_dx),
            _ => unreachable!("cache kind follows unit kind"),
        }
    }
}

/// A chain of units plus the parameter ids each one owns.
#[derive(Debug, Clone, Default)]
struct Seq {
    units: Vec<Unit>,
    params: Vec<Vec<ParamId>>,
}

struct SeqCache<T> {
    start: usize,
    inputs: Vec<Tensor<T>>,
    caches: Vec<UnitCache<T>>,
}

impl Seq {
    fn push<T: Scalar>(&mut self, store: &ParamStore<T>, before: usize, unit: Unit) {
        self.units.push(unit);
        self.params.push((before..store.tensors.len()).collect());
    }

    fn has_wanted(&self, want: &[bool]) -> bool {
        self.params.iter().flatten().any(|&id| want[id])
    }

    /// Runs the chain. Caches are kept from the first unit that owns a
    /// wanted parameter on, or from the start when the input gradient is
    /// needed; earlier units run in inference mode.
    fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: Tensor<T>,
        want: Option<&[bool]>,
        need_input_grad: bool,
        mut calib: Option<&mut Calibration>,
    ) -> (Tensor<T>, Option<SeqCache<T>>) {
        let start = match want {
            None => self.units.len(),
            Some(_) if need_input_grad => 0,
            Some(w) => self.params.iter().position(|ids| ids.iter().any(|&id| w[id])).unwrap_or(self.units.len()),
        };
        let mut cache = SeqCache { start, inputs: Vec::new(), caches: Vec::new() };
        let mut cur = x;
        for (i, u) in self.units.iter().enumerate() {
            let keep = i >= start;
            let (y, c) = u.forward(p, &cur, calib.as_deref_mut(), keep);
            if let Some(c) = c {
                cache.inputs.push(cur);
                cache.caches.push(c);
            }
            cur = y;
        }
        (cur, want.map(|_| cache))
    }

    fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: SeqCache<T>,
        dy: Tensor<T>,
        g: &mut Grads<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let SeqCache { start, inputs, caches } = cache;
        let mut d = Some(dy);
        for (k, (x, c)) in inputs.iter().zip(&caches).enumerate().rev() {
            let i = start + k;
            let need_dx = i > start || need_input_grad;
            d = self.units[i].backward(p, x, c, d.expect("upstream gradient"), g, need_dx);
        }
        if caches.is_empty() {
            d.filter(|_| need_input_grad)
        } else {
            d
        }
    }
}

fn build_backbone_seq<T: Scalar>(init: &mut Init<T>, cfg: &BackboneConfig, prefix: &str) -> Seq {
    let mut seq = Seq::default();
    let before = init.store.tensors.len();
    let g = format!("{prefix}stem");
    let stem = ConvNormAct {
        conv: Conv::new(init, &format!("{g}.conv"), &g, cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride),
        norm: Norm::new(init, &format!("{g}.norm"), &g, cfg.stem_channels),
    };
    seq.push(init.store, before, Unit::Cna(stem));
    for (i, b) in cfg.blocks().iter().enumerate() {
        let before = init.store.tensors.len();
        let block = MbBlock::new(init, &format!("{prefix}blocks.{i}"), b);
        seq.push(init.store, before, Unit::Block(block));
    }
    let before = init.store.tensors.len();
    let g = format!("{prefix}top");
    let last = cfg.blocks().last().map_or(cfg.stem_channels, |b| b.out_channels);
    let top = ConvNormAct {
        conv: Conv::new(init, &format!("{g}.conv"), &g, last, cfg.feature_channels, 1, 1),
        norm: Norm::new(init, &format!("{g}.norm"), &g, cfg.feature_channels),
    };
    seq.push(init.store, before, Unit::Cna(top));
    seq
}

fn build_head_blocks<T: Scalar>(init: &mut Init<T>, blocks: &[BlockInstance], prefix: &str) -> Seq {
    let mut seq = Seq::default();
    for (i, b) in blocks.iter().enumerate() {
        let before = init.store.tensors.len();
        let block = MbBlock::new(init, &format!("{prefix}.blocks.{i}"), b);
        seq.push(init.store, before, Unit::Block(block));
    }
    seq
}

#[derive(Debug, Clone)]
enum Net {
    Backbone { backbone: Seq },
    Patch { backbone: Seq, dense: Dense },
    Single { backbone: Seq, blocks: Seq, dense: Dense },
    TwoView { towers: [Seq; 2], blocks: Seq, dense: Dense, mode: FusionMode },
}

/// Parameters, topology and trainable flags of one cascade model.
#[derive(Debug, Clone)]
pub struct ModelGraph<T: Scalar = f32> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds the topology for `spec` with freshly initialized parameters.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let cfg = &spec.backbone;
        cfg.validate()?;
        cfg.check_input(spec.input_height, spec.input_width)?;
        let mut store = ParamStore::default();
        let mut init = Init { store: &mut store, seed };
        let feat = cfg.feature_channels;
        let net = match &spec.head {
            None => Net::Backbone { backbone: build_backbone_seq(&mut init, cfg, "") },
            Some(head) => {
                head.validate()?;
                match head.kind {
                    HeadKind::Patch5 => {
                        let backbone = build_backbone_seq(&mut init, cfg, "");
                        let dense = Dense::new(&mut init, "patch.dense", "patch.dense", feat, head.dense_out);
                        Net::Patch { backbone, dense }
                    }
                    HeadKind::SingleView2 => {
                        let backbone = build_backbone_seq(&mut init, cfg, "");
                        let insts = expand_blocks(&head.new_blocks, feat);
                        let blocks = build_head_blocks(&mut init, &insts, "single");
                        let c = insts.last().map_or(feat, |b| b.out_channels);
                        let dense = Dense::new(&mut init, "single.dense", "single.dense", c, head.dense_out);
                        Net::Single { backbone, blocks, dense }
                    }
                    HeadKind::TwoView2 => {
                        let towers = if head.tie_towers {
                            let t = build_backbone_seq(&mut init, cfg, "tower.");
                            [t.clone(), t]
                        } else {
                            [build_backbone_seq(&mut init, cfg, "tower_cc."), build_backbone_seq(&mut init, cfg, "tower_mlo.")]
                        };
                        let insts = expand_blocks(&head.new_blocks, 2 * feat);
                        let blocks = build_head_blocks(&mut init, &insts, "fusion");
                        let c = insts.last().map_or(2 * feat, |b| b.out_channels);
                        let dense = Dense::new(&mut init, "fusion.dense", "fusion.dense", c, head.dense_out);
                        Net::TwoView { towers, blocks, dense, mode: head.fusion }
                    }
                }
            }
        };
        let g = Self { spec, params: store, net };
        g.check_feature_maps()?;
        Ok(g)
    }

    fn check_feature_maps(&self) -> Result<()> {
        if let Some(head) = &self.spec.head {
            let cfg = &self.spec.backbone;
            match head.kind {
                HeadKind::SingleView2 => {
                    let top = super::config::plan_backbone(cfg, self.spec.input_height, self.spec.input_width)?;
                    super::config::plan_blocks("single", &head.new_blocks, top.last().expect("top").1)?;
                }
                HeadKind::TwoView2 => {
                    super::config::plan_two_view(cfg, head, self.spec.input_height, self.spec.input_width)?;
                }
                HeadKind::Patch5 => {}
            }
        }
        Ok(())
    }

    pub fn stage(&self) -> Stage {
        self.spec.stage()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.head.as_ref().map_or(0, |h| h.dense_out)
    }

    pub fn set_trainable(&mut self, selector: &str, trainable: bool) -> Result<usize> {
        self.params.set_trainable(selector, trainable)
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph { spec: self.spec.clone(), params: self.params.cast(), net: self.net.clone() }
    }

    /// Replaces all parameter values, keeping topology; names and shapes
    /// must match exactly.
    pub(crate) fn with_params(spec: ModelSpec, params: ParamStore<T>) -> Result<Self> {
        let mut g = Self::build(spec, 0)?;
        if g.params.tensors.len() != params.tensors.len() {
            return Err(Error::shape(format!(
                "topology has {} tensors, stored parameters {}",
                g.params.tensors.len(),
                params.tensors.len()
            )));
        }
        for (a, b) in g.params.tensors.iter().zip(&params.tensors) {
            if a.name != b.name || a.shape != b.shape || a.group != b.group || a.role != b.role {
                return Err(Error::shape(format!("stored tensor {} does not match topology tensor {}", b.name, a.name)));
            }
        }
        g.params = params;
        Ok(g)
    }

    fn check_plane(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.spec.input_height, self.spec.input_width) {
            return Err(Error::shape(format!("model expects {}x{} inputs, got {h}x{w}", self.spec.input_height, self.spec.input_width)));
        }
        Ok(())
    }

    fn to_tensor(&self, plane: &crate::pixelops::Plane) -> Result<Tensor<T>> {
        self.check_plane(plane.h, plane.w)?;
        Ok(Tensor::from_plane(plane, self.spec.backbone.in_channels))
    }

    fn single_input<'a>(&self, input: &'a ModelInput) -> Result<&'a crate::pixelops::Plane> {
        match input {
            ModelInput::Single(p) => Ok(p),
            ModelInput::Pair { .. } => Err(Error::shape("this model takes one view, got a pair")),
        }
    }

    /// Logits for one input; with `want` set, also the caches for backward.
    fn run(&self, input: &ModelInput, want: Option<&[bool]>, mut calib: Option<&mut Calibration>) -> Result<(Vec<T>, Option<RunCache<T>>)> {
        let p = &self.params;
        match &self.net {
            Net::Backbone { .. } => Err(Error::invalid("a bare backbone has no classifier; use features()")),
            Net::Patch { backbone, dense } => {
                let x = self.to_tensor(self.single_input(input)?)?;
                let (f, bc) = backbone.forward(p, x, want, false, calib);
                let pooled = global_avg_pool(&f);
                let logits = dense.forward(p, &pooled);
                Ok((logits, bc.map(|bc| RunCache::Patch { bc, fshape: f.shape(), pooled })))
            }
            Net::Single { backbone, blocks, dense } => {
                let x = self.to_tensor(self.single_input(input)?)?;
                let head_grad = want.is_some_and(|w| backbone.has_wanted(w));
                let (f, bc) = backbone.forward(p, x, want, false, calib.as_deref_mut());
                let (h, hc) = blocks.forward(p, f, want, head_grad, calib);
                let pooled = global_avg_pool(&h);
                let logits = dense.forward(p, &pooled);
                let cache = bc.zip(hc).map(|(bc, hc)| RunCache::Single { bc, hc, hshape: h.shape(), pooled, head_grad });
                Ok((logits, cache))
            }
            Net::TwoView { towers, blocks, dense, mode } => {
                let (cc, mlo) = match input {
                    ModelInput::Pair { cc, mlo } => (cc, mlo),
                    ModelInput::Single(_) => return Err(Error::shape("two-view model takes a (CC, MLO) pair")),
                };
                let tower_grad = want.is_some_and(|w| towers.iter().any(|t| t.has_wanted(w)));
                let mut outs = Vec::with_capacity(2);
                let mut tcs = Vec::with_capacity(2);
                for (tower, plane) in towers.iter().zip([cc, mlo]) {
                    let x = self.to_tensor(plane)?;
                    let (f, tc) = tower.forward(p, x, want, false, calib.as_deref_mut());
                    outs.push(f);
                    tcs.push(tc);
                }
                let mlo_f = outs.pop().expect("two towers");
                let cc_f = outs.pop().expect("two towers");
                if cc_f.shape() != mlo_f.shape() {
                    return Err(Error::shape(format!("tower outputs differ: {:?} vs {:?}", cc_f.shape(), mlo_f.shape())));
                }
                let tshape = cc_f.shape();
                let joined = match mode {
                    FusionMode::BeforePool => cc_f.concat_channels(&mlo_f)?,
                    FusionMode::AfterPool => {
                        let mut v = global_avg_pool(&cc_f);
                        v.extend(global_avg_pool(&mlo_f));
                        Tensor::from_vec(v.len(), 1, 1, v)?
                    }
                };
                let (h, hc) = blocks.forward(p, joined, want, tower_grad, calib);
                let pooled = global_avg_pool(&h);
                let logits = dense.forward(p, &pooled);
                let mlo_c = tcs.pop().expect("two towers");
                let cc_c = tcs.pop().expect("two towers");
                let cache = match (cc_c, mlo_c, hc) {
                    (Some(a), Some(b), Some(hc)) => {
                        Some(RunCache::TwoView { tcs: [a, b], hc, hshape: h.shape(), pooled, tshape, tower_grad })
                    }
                    _ => None,
                };
                Ok((logits, cache))
            }
        }
    }

    /// Class probabilities for each input.
    pub fn forward(&self, batch: &[ModelInput]) -> Result<Vec<Vec<T>>> {
        batch.iter().map(|x| self.predict(x)).collect()
    }

    pub fn predict(&self, input: &ModelInput) -> Result<Vec<T>> {
        Ok(softmax(&self.run(input, None, None)?.0))
    }

    pub fn logits(&self, input: &ModelInput) -> Result<Vec<T>> {
        Ok(self.run(input, None, None)?.0)
    }

    /// Backbone (or, for two-view models, per-tower) feature maps.
    pub fn features(&self, input: &ModelInput) -> Result<Vec<Tensor<T>>> {
        let p = &self.params;
        match &self.net {
            Net::Backbone { backbone } | Net::Patch { backbone, .. } | Net::Single { backbone, .. } => {
                let x = self.to_tensor(self.single_input(input)?)?;
                Ok(vec![backbone.forward(p, x, None, false, None).0])
            }
            Net::TwoView { towers, .. } => {
                let (cc, mlo) = match input {
                    ModelInput::Pair { cc, mlo } => (cc, mlo),
                    ModelInput::Single(_) => return Err(Error::shape("two-view model takes a (CC, MLO) pair")),
                };
                let mut out = Vec::new();
                for (t, plane) in towers.iter().zip([cc, mlo]) {
                    out.push(t.forward(p, self.to_tensor(plane)?, None, false, None).0);
                }
                Ok(out)
            }
        }
    }

    /// The tensor fed to the fusion blocks of a two-view model.
    pub fn fusion_input(&self, input: &ModelInput) -> Result<Tensor<T>> {
        let Net::TwoView { mode, .. } = &self.net else {
            return Err(Error::invalid("not a two-view model"));
        };
        let f = self.features(input)?;
        match mode {
            FusionMode::BeforePool => f[0].concat_channels(&f[1]),
            FusionMode::AfterPool => {
                let mut v = global_avg_pool(&f[0]);
                v.extend(global_avg_pool(&f[1]));
                Tensor::from_vec(v.len(), 1, 1, v)
            }
        }
    }

    /// Logits from tower outputs, bypassing the towers.
    pub fn fusion_logits(&self, cc: &Tensor<T>, mlo: &Tensor<T>) -> Result<Vec<T>> {
        let Net::TwoView { blocks, dense, mode, .. } = &self.net else {
            return Err(Error::invalid("not a two-view model"));
        };
        let joined = match mode {
            FusionMode::BeforePool => cc.concat_channels(mlo)?,
            FusionMode::AfterPool => {
                let mut v = global_avg_pool(cc);
                v.extend(global_avg_pool(mlo));
                Tensor::from_vec(v.len(), 1, 1, v)?
            }
        };
        let (h, _) = blocks.forward(&self.params, joined, None, false, None);
        Ok(dense.forward(&self.params, &global_avg_pool(&h)))
    }

    /// Cross-entropy loss of one labeled input; gradients of wanted
    /// parameters are added into `grads`.
    pub fn loss_and_grad(&self, input: &ModelInput, label: usize, grads: &mut Grads<T>) -> Result<T> {
        if label >= self.num_classes() {
            return Err(Error::invalid(format!("label {label} out of range for {} classes", self.num_classes())));
        }
        let want = grads.want.clone();
        let (logits, cache) = self.run(input, Some(&want), None)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, label);
        let p = &self.params;
        match (&self.net, cache.expect("training run keeps caches")) {
            (Net::Patch { backbone, dense }, RunCache::Patch { bc, fshape, pooled }) => {
                let need = backbone.has_wanted(&want);
                if let Some(dv) = dense.backward(p, &pooled, &dlogits, grads, need) {
                    let df = global_avg_pool_backward(&dv, fshape.0, fshape.1, fshape.2);
                    backbone.backward(p, bc, df, grads, false);
                }
            }
            (Net::Single { backbone, blocks, dense }, RunCache::Single { bc, hc, hshape, pooled, head_grad }) => {
                let need = head_grad || blocks.has_wanted(&want);
                if let Some(dv) = dense.backward(p, &pooled, &dlogits, grads, need) {
                    let dh = global_avg_pool_backward(&dv, hshape.0, hshape.1, hshape.2);
                    if let Some(df) = blocks.backward(p, hc, dh, grads, head_grad) {
                        backbone.backward(p, bc, df, grads, false);
                    }
                }
            }
            (Net::TwoView { towers, blocks, dense, mode }, RunCache::TwoView { tcs, hc, hshape, pooled, tshape, tower_grad }) => {
                let need = tower_grad || blocks.has_wanted(&want);
                if let Some(dv) = dense.backward(p, &pooled, &dlogits, grads, need) {
                    let dh = global_avg_pool_backward(&dv, hshape.0, hshape.1, hshape.2);
                    if let Some(dj) = blocks.backward(p, hc, dh, grads, tower_grad) {
                        let c = tshape.0;
                        let (dcc, dmlo) = match mode {
                            FusionMode::BeforePool => dj.split_channels(c),
                            FusionMode::AfterPool => (
                                global_avg_pool_backward(&dj.data[..c], c, tshape.1, tshape.2),
                                global_avg_pool_backward(&dj.data[c..], c, tshape.1, tshape.2),
                            ),
                        };
                        let [tc_cc, tc_mlo] = tcs;
                        towers[0].backward(p, tc_cc, dcc, grads, false);
                        towers[1].backward(p, tc_mlo, dmlo, grads, false);
                    }
                }
            }
            _ => unreachable!("cache kind follows network kind"),
        }
        Ok(loss)
    }

    /// Gradient buffers for the currently trainable weights.
    pub fn new_grads(&self) -> Grads<T> {
        Grads::new(&self.params, self.params.trainable_mask())
    }

    /// Re-estimates the running statistics of every normalization layer in
    /// groups matched by `selector`, from `inputs`. Layers are visited in
    /// one pass; each sample is normalized by its own statistics at the
    /// calibrated layers.
    pub fn calibrate(&mut self, inputs: &[ModelInput], selector: &str) -> Result<usize> {
        let groups = self.params.select(selector);
        if groups.is_empty() {
            return Err(Error::config(format!("selector {selector:?} matches no layer group")));
        }
        let norms: Vec<Norm> = self.norms().into_iter().filter(|n| groups.contains(&self.params.tensors[n.mean].group)).collect();
        let targets: std::collections::HashSet<ParamId> = norms.iter().map(|n| n.mean).collect();
        // One pass settles every layer on spatial maps; each further pass
        // settles the next layer on 1×1 maps, in depth order.
        let mut pass = 0;
        loop {
            let mut calib = Calibration { targets: targets.clone(), ..Default::default() };
            for x in inputs {
                match &self.net {
                    Net::Backbone { backbone } => {
                        let t = self.to_tensor(self.single_input(x)?)?;
                        backbone.forward(&self.params, t, None, false, Some(&mut calib));
                    }
                    _ => {
                        self.run(x, None, Some(&mut calib))?;
                    }
                }
            }
            for n in &norms {
                n.apply_calibration(&mut self.params, &calib);
            }
            pass += 1;
            if pass > calib.pointwise.len().saturating_sub(1) {
                break;
            }
        }
        Ok(norms.len())
    }

    fn norms(&self) -> Vec<Norm> {
        fn seq_norms(s: &Seq, out: &mut Vec<Norm>) {
            for u in &s.units {
                match u {
                    Unit::Cna(c) => out.push(c.norm.clone()),
                    Unit::Block(b) => {
                        if let Some(e) = &b.expand {
                            out.push(e.norm.clone());
                        }
                        out.push(b.dw_norm.clone());
                        out.push(b.proj_norm.clone());
                    }
                }
            }
        }
        let mut out = Vec::new();
        match &self.net {
            Net::Backbone { backbone } | Net::Patch { backbone, .. } => seq_norms(backbone, &mut out),
            Net::Single { backbone, blocks, .. } => {
                seq_norms(backbone, &mut out);
                seq_norms(blocks, &mut out);
            }
            Net::TwoView { towers, blocks, .. } => {
                seq_norms(&towers[0], &mut out);
                if self.spec.head.as_ref().is_some_and(|h| !h.tie_towers) {
                    seq_norms(&towers[1], &mut out);
                }
                seq_norms(blocks, &mut out);
            }
        }
        out
    }
}

enum RunCache<T> {
    Patch {
        bc: SeqCache<T>,
        fshape: (usize, usize, usize),
        pooled: Vec<T>,
    },
    Single {
        bc: SeqCache<T>,
        hc: SeqCache<T>,
        hshape: (usize, usize, usize),
        pooled: Vec<T>,
        head_grad: bool,
    },
    TwoView {
        tcs: [SeqCache<T>; 2],
        hc: SeqCache<T>,
        hshape: (usize, usize, usize),
        pooled: Vec<T>,
        tshape: (usize, usize, usize),
        tower_grad: bool,
    },
}

/// Tower group prefix for a view.
pub fn tower_prefix(view: View, tied: bool) -> &'static str {
    match (tied, view) {
        (true, _) => "tower.",
        (false, View::Cc) => "tower_cc.",
        (false, View::Mlo) => "tower_mlo.",
    }
}
