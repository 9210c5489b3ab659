use mammocascade::netforge::{
    attach_patch_head, attach_seeded, build_backbone, fuse_two_view, BackboneConfig, BlockSpec, FusionMode, HeadSpec, ModelGraph,
    ModelInput, Role,
};
use mammocascade::pixelops::Plane;
use mammocascade::trainloop::{grad_check, grad_check_with, GradCheckable, LinearModel, ModelBatch};
use rand::Rng;

fn tiny() -> BackboneConfig {
    BackboneConfig {
        name: "tiny".into(),
        in_channels: 1,
        stem_kernel: 3,
        stem_stride: 2,
        stem_channels: 4,
        stages: vec![BlockSpec::new(2, 4, 3, 1, 1), BlockSpec::new(1, 6, 5, 2, 1)],
        feature_channels: 6,
        declared_total_stride: 4,
    }
}

fn plane(seed: u64, h: usize, w: usize) -> Plane {
    let mut rng = mammocascade::rng::stream(seed, &[]);
    Plane::new(h, w, (0..h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Moves every weight and running statistic off its initial value so no
/// term of the gradient is trivially zero.
fn jitter(m: &mut ModelGraph<f64>, seed: u64) {
    let mut rng = mammocascade::rng::stream(seed, &[99]);
    for t in &mut m.params.tensors {
        for v in &mut t.data {
            *v = match (t.role, t.name.ends_with(".var")) {
                (Role::Buffer, true) => rng.random_range(0.5..1.5),
                (Role::Buffer, false) => rng.random_range(-0.3..0.3),
                _ => *v + rng.random_range(-0.2..0.2),
            };
        }
    }
}

fn single_batch() -> Vec<(ModelInput, usize)> {
    vec![(ModelInput::Single(plane(1, 8, 8)), 1), (ModelInput::Single(plane(2, 8, 8)), 0)]
}

#[test]
fn linear_model_is_exact() {
    let mut m = LinearModel { w: vec![0.3, -1.2, 2.0], b: 0.1, xs: vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]], ys: vec![1.0, -2.0] };
    assert!(grad_check_with(&mut m, 1e-3).unwrap() < 1e-10);
}

#[test]
fn patch_model_gradients() {
    let bb = build_backbone::<f64>(&tiny(), (8, 8), 3).unwrap();
    let mut m = attach_patch_head(&bb, 4).unwrap();
    jitter(&mut m, 1);
    let batch = vec![(ModelInput::Single(plane(5, 8, 8)), 3)];
    let err = grad_check(&mut m, &batch, 1e-5).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn single_view_gradients() {
    let bb = build_backbone::<f64>(&tiny(), (8, 8), 3).unwrap();
    let (mut m, _) = attach_seeded(&bb, HeadSpec::single_view(vec![BlockSpec::new(2, 6, 3, 2, 1)]), 7).unwrap();
    jitter(&mut m, 2);
    let err = grad_check(&mut m, &single_batch(), 1e-4).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

fn two_view(mode: FusionMode, tied: bool) -> ModelGraph<f64> {
    let bb = build_backbone::<f64>(&tiny(), (8, 8), 3).unwrap();
    let (single, _) = attach_seeded(&bb, HeadSpec::single_view(vec![]), 7).unwrap();
    let mut head = HeadSpec::two_view(vec![BlockSpec::new(1, 8, 3, 1, 1)], mode);
    head.tie_towers = tied;
    let (mut m, _) = fuse_two_view(&single, head, 11).unwrap();
    jitter(&mut m, 3);
    m
}

fn pairs() -> Vec<(ModelInput, usize)> {
    vec![
        (ModelInput::Pair { cc: plane(8, 8, 8), mlo: plane(9, 8, 8) }, 1),
        (ModelInput::Pair { cc: plane(10, 8, 8), mlo: plane(11, 8, 8) }, 0),
    ]
}

#[test]
fn two_view_gradients_all_modes() {
    for (mode, tied) in [(FusionMode::BeforePool, false), (FusionMode::AfterPool, false), (FusionMode::BeforePool, true)] {
        let mut m = two_view(mode, tied);
        let err = grad_check(&mut m, &pairs(), 1e-4).unwrap();
        assert!(err < 1e-3, "{mode:?} tied={tied}: max relative error {err}");
    }
}

#[test]
fn partially_frozen_gradients() {
    let mut m = two_view(FusionMode::BeforePool, false);
    m.set_trainable("tower_cc.*", false).unwrap();
    m.set_trainable("tower_mlo.stem", false).unwrap();
    let err = grad_check(&mut m, &pairs(), 1e-4).unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

/// Wraps a model batch and scales the analytic gradient of one tensor.
struct Corrupted<'a> {
    inner: ModelBatch<'a>,
    tensor: String,
}

impl GradCheckable for Corrupted<'_> {
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }
    fn param(&self, i: usize) -> f64 {
        self.inner.param(i)
    }
    fn set_param(&mut self, i: usize, v: f64) {
        self.inner.set_param(i, v)
    }
    fn loss(&self) -> mammocascade::Result<f64> {
        self.inner.loss()
    }
    fn gradient(&self) -> mammocascade::Result<Vec<f64>> {
        let mut g = self.inner.gradient()?;
        for (i, v) in g.iter_mut().enumerate() {
            if self.inner.name_of(i) == self.tensor {
                *v *= 1.5;
            }
        }
        Ok(g)
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let bb = build_backbone::<f64>(&tiny(), (8, 8), 3).unwrap();
    let (mut m, _) = attach_seeded(&bb, HeadSpec::single_view(vec![]), 7).unwrap();
    jitter(&mut m, 4);
    let batch = single_batch();
    let mut c = Corrupted { inner: ModelBatch::new(&mut m, &batch), tensor: "blocks.0.dw.conv.weight".into() };
    assert!(grad_check_with(&mut c, 1e-4).unwrap() > 1e-1);
}
