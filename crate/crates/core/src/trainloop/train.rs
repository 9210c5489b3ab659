use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lr_at;
use super::plan::{TrainPlan, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::error::{Error, Result};
use crate::evalstat::{auc, ScoreSet};
use crate::netforge::{Grads, ModelGraph, ModelInput, ParamStore, Scalar};
use crate::pixelops::{augment, AugmentParams, Plane};
use crate::rng::{self, Rng};

/// A labeled model input holding raw (not yet mean-subtracted) planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: ModelInput,
    pub label: usize,
}

/// How the returned parameters are chosen among epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ValAuc,
    ValAccuracy,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Subtracted from every pixel after augmentation.
    pub mean: f32,
    pub augment: Option<AugmentParams>,
    pub selection: Selection,
    /// When set, the normalization statistics of the groups trained in the
    /// current phase are re-estimated before every epoch from this many
    /// training inputs (taken in that epoch's order, not augmented).
    pub recalibrate: Option<usize>,
}

impl TrainOptions {
    pub fn plain(selection: Selection) -> Self {
        Self { mean: 0.0, augment: None, selection, recalibrate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub phase_epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_auc: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "phase", "phase_epoch", "lr", "train_loss", "val_loss", "val_auc", "val_accuracy"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                r.phase.to_string(),
                r.phase_epoch.to_string(),
                format!("{:?}", r.lr),
                format!("{:?}", r.train_loss),
                opt(r.val_loss),
                opt(r.val_auc),
                opt(r.val_accuracy),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn prepare_plane(p: &Plane, opts: &TrainOptions, rng: Option<&mut Rng>) -> Plane {
    let mut out = match (rng, &opts.augment) {
        (Some(rng), Some(a)) => augment(p, a, rng),
        _ => p.clone(),
    };
    if opts.mean != 0.0 {
        out.data.iter_mut().for_each(|v| *v -= opts.mean);
    }
    out
}

/// Mean subtraction plus, with a stream, augmentation (each view drawing
/// from its own stream).
pub fn prepare_input(x: &ModelInput, opts: &TrainOptions, stream: Option<(u64, &[u64])>) -> ModelInput {
    let rng_for = |view: u64| {
        stream.map(|(seed, path)| {
            let mut full = path.to_vec();
            full.push(view);
            rng::stream(seed, &full)
        })
    };
    match x {
        ModelInput::Single(p) => ModelInput::Single(prepare_plane(p, opts, rng_for(0).as_mut())),
        ModelInput::Pair { cc, mlo } => {
            ModelInput::Pair { cc: prepare_plane(cc, opts, rng_for(0).as_mut()), mlo: prepare_plane(mlo, opts, rng_for(1).as_mut()) }
        }
    }
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(grads: &Grads<T>) -> Self {
        let zeros = |g: &Vec<T>| vec![T::zero(); g.len()];
        Self { m: grads.g.iter().map(zeros).collect(), v: grads.g.iter().map(zeros).collect(), t: 0 }
    }

    fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
        for (i, g) in grads.g.iter().enumerate() {
            if !grads.want[i] {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in params.tensors[i].data.iter_mut().enumerate() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let step = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                *theta -= step;
            }
        }
    }
}

/// Loss, AUC (two-class models) and accuracy over a labeled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub auc: Option<f64>,
    pub accuracy: f64,
}

pub fn evaluate(model: &ModelGraph<f32>, set: &[Example], opts: &TrainOptions) -> Result<Evaluation> {
    let probs: Vec<Vec<f32>> = set.par_iter().map(|ex| model.predict(&prepare_input(&ex.input, opts, None))).collect::<Result<_>>()?;
    let n = set.len().max(1) as f64;
    let loss = set.iter().zip(&probs).map(|(ex, p)| -(p[ex.label].max(f32::MIN_POSITIVE) as f64).ln()).sum::<f64>() / n;
    let correct = set
        .iter()
        .zip(&probs)
        .filter(|(ex, p)| {
            let arg = p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best });
            arg == ex.label
        })
        .count();
    let auc = if model.num_classes() == 2 {
        let s = ScoreSet::new(probs.iter().map(|p| p[1] as f64).collect(), set.iter().map(|e| e.label as u8).collect())?;
        (s.n_pos() > 0 && s.n_neg() > 0).then(|| auc(&s)).transpose()?
    } else {
        None
    };
    Ok(Evaluation { loss, auc, accuracy: correct as f64 / n })
}

fn better(sel: Selection, cand: &EpochRecord, best: Option<&EpochRecord>) -> bool {
    let Some(best) = best else { return true };
    let key = |r: &EpochRecord| match sel {
        Selection::ValAuc => r.val_auc,
        Selection::ValAccuracy => r.val_accuracy,
        Selection::LastEpoch => None,
    };
    match (key(cand), key(best)) {
        (_, _) if sel == Selection::LastEpoch => true,
        (Some(a), Some(b)) if a != b => a > b,
        // ties and missing metrics fall back to validation loss
        _ => match (cand.val_loss, best.val_loss) {
            (Some(a), Some(b)) => a < b,
            _ => true,
        },
    }
}

/// Trains `model` in place and leaves it holding the parameters of the
/// selected epoch.
pub fn train(
    model: &mut ModelGraph<f32>,
    train_set: &[Example],
    val_set: &[Example],
    plan: &TrainPlan,
    opts: &TrainOptions,
) -> Result<TrainHistory> {
    plan.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let seed = plan.seed;
    let mut history = TrainHistory::default();
    let mut best: Option<(EpochRecord, ParamStore<f32>)> = None;
    let mut epoch = 0usize;
    for (pi, phase) in plan.phases.iter().enumerate() {
        model.set_trainable("*", false)?;
        model.set_trainable(&phase.trainable, true)?;
        let template = model.new_grads();
        let mut adam = Adam::new(&template);
        for pe in 0..phase.epochs {
            let lr = lr_at(&phase.schedule, pe)?;
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng::stream(seed, &[rng::tag("order"), epoch as u64]));
            if let Some(n) = opts.recalibrate {
                let probe: Vec<ModelInput> = order.iter().take(n.max(1)).map(|&i| prepare_input(&train_set[i].input, opts, None)).collect();
                model.calibrate(&probe, &phase.trainable)?;
            }
            let mut loss_sum = 0.0f64;
            for (bi, chunk) in order.chunks(plan.batch_size).enumerate() {
                let per_sample: Vec<(f32, Grads<f32>)> = chunk
                    .par_iter()
                    .map(|&i| {
                        let ex = &train_set[i];
                        let path = [rng::tag("augment"), epoch as u64, i as u64];
                        let x = prepare_input(&ex.input, opts, Some((seed, &path)));
                        let mut g = template.clone();
                        let loss = model.loss_and_grad(&x, ex.label, &mut g)?;
                        Ok((loss, g))
                    })
                    .collect::<Result<_>>()?;
                let mut iter = per_sample.into_iter();
                let (l0, mut grads) = iter.next().expect("non-empty batch");
                let mut batch_loss = l0 as f64;
                for (l, g) in iter {
                    batch_loss += l as f64;
                    grads.add_assign(&g);
                }
                grads.scale(1.0 / chunk.len() as f32);
                if !batch_loss.is_finite() || !grads.all_finite() {
                    return Err(Error::Training { epoch, batch: bi, reason: format!("non-finite loss or gradient ({batch_loss})") });
                }
                loss_sum += batch_loss;
                adam.step(&mut model.params, &grads, lr);
            }
            let mut rec = EpochRecord {
                epoch,
                phase: pi,
                phase_epoch: pe,
                lr,
                train_loss: loss_sum / train_set.len() as f64,
                val_loss: None,
                val_auc: None,
                val_accuracy: None,
            };
            if !val_set.is_empty() {
                let ev = evaluate(model, val_set, opts)?;
                rec.val_loss = Some(ev.loss);
                rec.val_auc = ev.auc;
                rec.val_accuracy = Some(ev.accuracy);
            }
            log::info!(
                "epoch {epoch} (phase {pi}) lr {lr:.3e} loss {:.4} val_loss {:?} val_auc {:?} val_acc {:?}",
                rec.train_loss,
                rec.val_loss,
                rec.val_auc,
                rec.val_accuracy
            );
            if better(opts.selection, &rec, best.as_ref().map(|b| &b.0)) {
                best = Some((rec.clone(), model.params.clone()));
            }
            history.records.push(rec);
            epoch += 1;
        }
    }
    if let Some((rec, params)) = best {
        history.best_epoch = Some(rec.epoch);
        // restore flags of the final phase, values of the best epoch
        for (t, b) in model.params.tensors.iter_mut().zip(params.tensors) {
            t.data = b.data;
        }
    }
    Ok(history)
}
