use mammocascade::netforge::{
    attach_patch_head, attach_seeded, build_backbone, fuse_two_view, BackboneConfig, BlockSpec, FusionMode, HeadSpec, ModelGraph,
    ModelInput,
};
use mammocascade::pixelops::{AugmentParams, Plane};
use mammocascade::trainloop::{
    evaluate, lr_at, staged_plan_two_view_cv, train, Example, LrSchedule, Phase, Selection, TrainOptions, TrainPlan,
};
use mammocascade::Error;
use proptest::prelude::*;

fn tiny() -> BackboneConfig {
    BackboneConfig {
        name: "tiny".into(),
        in_channels: 1,
        stem_kernel: 3,
        stem_stride: 2,
        stem_channels: 4,
        stages: vec![BlockSpec::new(2, 4, 3, 1, 1), BlockSpec::new(2, 6, 3, 2, 1)],
        feature_channels: 8,
        declared_total_stride: 4,
    }
}

/// Bright centre square for label 1, dark for label 0, with a little texture.
fn blob(label: usize, salt: usize) -> Plane {
    let data = (0..64)
        .map(|i| {
            let (r, c) = (i / 8, i % 8);
            let inside = (2..6).contains(&r) && (2..6).contains(&c);
            let base = if inside && label == 1 { 1.0 } else { 0.0 };
            base + ((i * 7 + salt * 13) % 5) as f32 * 0.05
        })
        .collect();
    Plane::new(8, 8, data).unwrap()
}

fn blob_set(n: usize) -> Vec<Example> {
    (0..n).map(|i| Example { id: format!("e{i}"), input: ModelInput::Single(blob(i % 2, i)), label: i % 2 }).collect()
}

fn single_view(seed: u64) -> ModelGraph<f32> {
    let patch = attach_patch_head(&build_backbone::<f32>(&tiny(), (8, 8), seed).unwrap(), seed).unwrap();
    attach_seeded(&patch, HeadSpec::single_view(HeadSpec::cv_blocks(8, 2)), seed).unwrap().0
}

fn plan(lr: f64, epochs: usize, batch: usize, trainable: &str) -> TrainPlan {
    TrainPlan {
        phases: vec![Phase { epochs, schedule: LrSchedule::fixed(lr, epochs), trainable: trainable.into() }],
        batch_size: batch,
        seed: 3,
    }
}

fn changed(a: &ModelGraph<f32>, b: &ModelGraph<f32>) -> Vec<String> {
    let mut out: Vec<String> =
        a.params.tensors.iter().zip(&b.params.tensors).filter(|(x, y)| x.data != y.data).map(|(x, _)| x.group.clone()).collect();
    out.dedup();
    out
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let set = blob_set(8);
    let mut m = single_view(1);
    let before = m.clone();
    let opts = TrainOptions::plain(Selection::LastEpoch);
    let ev0 = evaluate(&m, &set, &opts).unwrap();
    train(&mut m, &set, &set, &plan(0.0, 2, 4, "*"), &opts).unwrap();
    assert_eq!(m.params, before.params);
    assert_eq!(evaluate(&m, &set, &opts).unwrap(), ev0);
}

#[test]
fn memorizes_one_sample() {
    let one = vec![Example { id: "x".into(), input: ModelInput::Single(blob(1, 0)), label: 1 }];
    let mut m = single_view(2);
    let h = train(&mut m, &one, &[], &plan(1e-2, 200, 1, "*"), &TrainOptions::plain(Selection::LastEpoch)).unwrap();
    let last = h.records.last().unwrap().train_loss;
    assert!(last < 0.01, "final loss {last}");
    assert_eq!(h.best_epoch, Some(199));
}

#[test]
fn loss_falls_on_a_separable_set() {
    let set = blob_set(16);
    let mut m = single_view(4);
    let opts = TrainOptions::plain(Selection::ValAuc);
    let before = evaluate(&m, &set, &opts).unwrap();
    let h = train(&mut m, &set, &set, &plan(3e-3, 15, 4, "*"), &opts).unwrap();
    let after = evaluate(&m, &set, &opts).unwrap();
    assert!(after.loss < before.loss, "{} -> {}", before.loss, after.loss);
    assert!(h.records.last().unwrap().train_loss < h.records[0].train_loss);
    assert!(after.auc.unwrap() > 0.9);
}

#[test]
fn training_is_deterministic() {
    let set = blob_set(10);
    let opts = TrainOptions { mean: 0.3, augment: Some(AugmentParams::standard()), selection: Selection::ValAuc, recalibrate: Some(4) };
    let run = || {
        let mut m = single_view(5);
        let h = train(&mut m, &set, &set[..4], &plan(1e-3, 3, 3, "*"), &opts).unwrap();
        (m.params, h)
    };
    let (pa, ha) = run();
    let (pb, hb) = run();
    assert_eq!(pa, pb);
    assert_eq!(ha, hb);
}

#[test]
fn frozen_groups_are_conserved() {
    let set = blob_set(6);
    let mut m = single_view(6);
    let before = m.clone();
    train(&mut m, &set, &[], &plan(1e-2, 2, 3, "single.*"), &TrainOptions::plain(Selection::LastEpoch)).unwrap();
    assert_eq!(changed(&before, &m), vec!["single.blocks.0", "single.dense"]);

    let single = single_view(7);
    let (mut two, _) = fuse_two_view(&single, HeadSpec::two_view(HeadSpec::cv_blocks(16, 2), FusionMode::BeforePool), 7).unwrap();
    let pairs: Vec<Example> = (0..4)
        .map(|i| Example { id: format!("p{i}"), input: ModelInput::Pair { cc: blob(i % 2, i), mlo: blob(i % 2, i + 1) }, label: i % 2 })
        .collect();
    let before = two.clone();
    train(&mut two, &pairs, &[], &plan(1e-2, 1, 4, "fusion.*"), &TrainOptions::plain(Selection::LastEpoch)).unwrap();
    let c = changed(&before, &two);
    assert!(c.iter().all(|g| g.starts_with("fusion.")), "{c:?}");
    assert!(!c.is_empty());
}

#[test]
fn unknown_selector_is_a_config_error() {
    let set = blob_set(2);
    let mut m = single_view(8);
    let err = train(&mut m, &set, &[], &plan(1e-3, 1, 2, "fusion.*"), &TrainOptions::plain(Selection::LastEpoch)).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn staged_plan_first_phase_trains_only_the_dense_layer() {
    let single = single_view(9);
    let (mut two, _) = fuse_two_view(&single, HeadSpec::two_view(HeadSpec::cv_blocks(16, 2), FusionMode::BeforePool), 9).unwrap();
    let staged = staged_plan_two_view_cv();
    two.set_trainable("*", false).unwrap();
    assert_eq!(two.set_trainable(&staged.phases[0].trainable, true).unwrap(), 1);
    let on: Vec<&str> = two.params.groups.iter().filter(|g| g.1).map(|g| g.0.as_str()).collect();
    assert_eq!(on, vec!["fusion.dense"]);

    let pairs: Vec<Example> = (0..4)
        .map(|i| Example { id: format!("p{i}"), input: ModelInput::Pair { cc: blob(i % 2, i), mlo: blob(1, i) }, label: i % 2 })
        .collect();
    let mut first = TrainPlan { phases: vec![staged.phases[0].clone()], ..staged.clone() };
    first.phases[0].epochs = 1;
    first.phases[0].schedule.total_epochs = 1;
    let before = two.clone();
    train(&mut two, &pairs, &[], &first, &TrainOptions::plain(Selection::LastEpoch)).unwrap();
    assert_eq!(changed(&before, &two), vec!["fusion.dense"]);
}

#[test]
fn history_follows_the_schedule() {
    let set = blob_set(4);
    let mut m = single_view(10);
    let p = TrainPlan {
        phases: vec![
            Phase { epochs: 5, schedule: LrSchedule::cyclic(1e-3, 2, 2, 1e-3, 5), trainable: "single.*".into() },
            Phase { epochs: 2, schedule: LrSchedule::fixed(1e-4, 2), trainable: "*".into() },
        ],
        batch_size: 2,
        seed: 0,
    };
    let h = train(&mut m, &set, &set, &p, &TrainOptions::plain(Selection::ValAuc)).unwrap();
    assert_eq!(h.records.len(), 7);
    for r in &h.records {
        assert_eq!(r.lr, lr_at(&p.phases[r.phase].schedule, r.phase_epoch).unwrap());
        assert_eq!(r.epoch, if r.phase == 0 { r.phase_epoch } else { 5 + r.phase_epoch });
        assert!(r.val_auc.is_some() && r.val_loss.is_some());
    }
    let mut csv = Vec::new();
    h.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.starts_with("epoch,phase,phase_epoch,lr,train_loss,val_loss,val_auc,val_accuracy"));
    assert!(h.to_json().unwrap().contains("\"best_epoch\""));
}

#[test]
fn selection_restores_the_best_epoch() {
    let set = blob_set(8);
    let mut m = single_view(11);
    let h = train(&mut m, &set, &set, &plan(5e-3, 6, 4, "*"), &TrainOptions::plain(Selection::ValAuc)).unwrap();
    let best = &h.records[h.best_epoch.unwrap()];
    let ev = evaluate(&m, &set, &TrainOptions::plain(Selection::ValAuc)).unwrap();
    assert_eq!(ev.auc, best.val_auc);
    assert!((ev.loss - best.val_loss.unwrap()).abs() < 1e-12);
    let top = h.records.iter().filter_map(|r| r.val_auc).fold(f64::MIN, f64::max);
    assert_eq!(best.val_auc, Some(top));
}

#[test]
fn non_finite_input_aborts_with_position() {
    let mut set = blob_set(4);
    for e in &mut set {
        if let ModelInput::Single(p) = &mut e.input {
            p.data[0] = f32::NAN;
        }
    }
    let mut m = single_view(12);
    match train(&mut m, &set, &[], &plan(1e-3, 2, 2, "*"), &TrainOptions::plain(Selection::LastEpoch)) {
        Err(Error::Training { epoch, batch, .. }) => assert_eq!((epoch, batch), (0, 0)),
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn empty_training_set_is_rejected() {
    let mut m = single_view(13);
    assert!(train(&mut m, &[], &[], &plan(1e-3, 1, 1, "*"), &TrainOptions::plain(Selection::LastEpoch)).is_err());
}

proptest! {
    #[test]
    fn cyclic_schedule_is_periodic(w in 1usize..8, p in 1usize..10, base in 1e-6f64..1e-2, delta in 0.0f64..1e-2, e in 0usize..60) {
        let s = LrSchedule::cyclic(base, w, p, delta, w + 100);
        let e = w + e;
        prop_assert_eq!(lr_at(&s, e).unwrap(), lr_at(&s, e + p).unwrap());
        prop_assert!((lr_at(&s, w).unwrap() - (base + delta)).abs() <= 1e-15);
        let lr = lr_at(&s, e).unwrap();
        prop_assert!(lr >= base * (1.0 - 1e-12) && lr <= (base + delta) * (1.0 + 1e-12));
    }

    #[test]
    fn warmup_rises_to_the_base_rate(w in 2usize..20, base in 1e-6f64..1e-2, delta in 0.0f64..1e-2) {
        let s = LrSchedule::cyclic(base, w, 3, delta, w + 5);
        for e in 1..w {
            prop_assert!(lr_at(&s, e).unwrap() > lr_at(&s, e - 1).unwrap());
        }
        prop_assert!((lr_at(&s, w - 1).unwrap() - base).abs() <= 1e-15 * base.max(1.0));
    }
}
