//! Per-stage optimization of the joint objective over the labeled pool.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{make_views, AugmentationConfig};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::{joint_loss_with_grad, LossBreakdown, LossWeights};
use crate::nn::{argmax, softmax, JointSession, Network};
use crate::rng;

const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Start every stage from a fresh initialization instead of the previous stage's weights.
    pub reinit_per_stage: bool,
    /// Keep the epoch with the best validation accuracy (needs a validation split).
    pub select_best_on_val: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 64,
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            reinit_per_stage: true,
            select_best_on_val: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and >= 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be finite and >= 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "train.batch_size",
                "must be at least 2: the cross-correlation matrix needs B >= 2 rows",
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("train.adam_beta", "betas must lie in [0, 1)"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("train.adam_epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// A labeled training or evaluation example.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub id: usize,
    pub image: &'a Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's mini-batches.
    pub loss: LossBreakdown,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

/// Stacks images into a `B × (C·H·W)` matrix in channel-major order.
pub fn images_to_rows(images: &[&Image]) -> Array2<f64> {
    let cols = images.first().map_or(0, |i| i.len());
    let mut out = Array2::zeros((images.len(), cols));
    for (mut row, img) in out.rows_mut().into_iter().zip(images) {
        img.write_chw(row.as_slice_mut().expect("standard layout"));
    }
    out
}

/// Latents and class probabilities for undistorted inputs.
#[derive(Debug, Clone)]
pub struct Inference {
    pub latent: Array2<f64>,
    pub probs: Array2<f64>,
}

pub fn infer(net: &Network, images: &[&Image]) -> Result<Inference> {
    let parts = images
        .par_chunks(INFERENCE_CHUNK)
        .map(|chunk| {
            let z = net.encode(&images_to_rows(chunk))?;
            let logits = net.logits(&z)?;
            Ok((z, softmax(&logits)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = images.len();
    let mut latent = Array2::zeros((n, net.latent_dim()));
    let mut probs = Array2::zeros((n, net.num_classes()));
    let mut row = 0;
    for (z, p) in parts {
        let len = z.nrows();
        latent.slice_mut(s![row..row + len, ..]).assign(&z);
        probs.slice_mut(s![row..row + len, ..]).assign(&p);
        row += len;
    }
    Ok(Inference { latent, probs })
}

/// Fraction of examples whose argmax prediction (ties to the lowest class)
/// equals the label.
pub fn evaluate(net: &Network, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::config("eval", "cannot evaluate on an empty set"));
    }
    let images: Vec<&Image> = examples.iter().map(|e| e.image).collect();
    let out = infer(net, &images)?;
    let correct = out
        .probs
        .rows()
        .into_iter()
        .zip(examples)
        .filter(|(row, e)| argmax(*row) == e.label)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

/// A fixed batch for one joint step: inputs, optional distorted views, labels.
#[derive(Debug, Clone)]
pub struct JointBatch {
    pub inputs: Array2<f64>,
    pub views: Option<(Array2<f64>, Array2<f64>)>,
    pub labels: Vec<usize>,
}

/// Loss breakdown, flat gradient and predictions for one batch.
pub fn loss_and_gradient(
    net: &Network,
    batch: &JointBatch,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>, Array2<f64>)> {
    let mut session = JointSession::new(net);
    let views = batch.views.as_ref().filter(|_| weights.gamma != 0.0);
    let out = session.forward(&batch.inputs, views.map(|(a, b)| (a, b)))?;
    let (loss, grads) = joint_loss_with_grad(
        &out.logits,
        &batch.labels,
        out.embeddings.as_ref().map(|(a, b)| (a, b)),
        weights,
    )?;
    let g = session.backward(&grads.logits, grads.embeddings.as_ref().map(|(a, b)| (a, b)))?;
    Ok((loss, g.flat_params(), out.probs))
}

/// Scalar joint loss for a fixed batch.
pub fn joint_objective(net: &Network, batch: &JointBatch, weights: &LossWeights) -> Result<f64> {
    let mut session = JointSession::new(net);
    let views = batch.views.as_ref().filter(|_| weights.gamma != 0.0);
    let out = session.forward(&batch.inputs, views.map(|(a, b)| (a, b)))?;
    let (loss, _) = joint_loss_with_grad(
        &out.logits,
        &batch.labels,
        out.embeddings.as_ref().map(|(a, b)| (a, b)),
        weights,
    )?;
    Ok(loss.total)
}

fn check_finite(loss: &LossBreakdown, epoch: usize, batch: usize) -> Result<()> {
    let terms = [
        ("ce", loss.ce),
        ("bt_invariance", loss.bt_invariance),
        ("bt_redundancy", loss.bt_redundancy),
        ("total", loss.total),
    ];
    match terms.iter().find(|(_, v)| !v.is_finite()) {
        Some((term, v)) => Err(Error::Numeric(format!(
            "non-finite loss term {term} = {v} at epoch {epoch}, batch {batch}"
        ))),
        None => Ok(()),
    }
}

/// Splits `n` shuffled indices into batches; a final short batch is kept if
/// it has at least 2 rows.
fn batches(order: &[usize], batch_size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(batch_size).filter(|c| c.len() >= 2)
}

fn build_batch(
    examples: &[Example],
    idx: &[usize],
    aug: &AugmentationConfig,
    with_views: bool,
    seed: u64,
    epoch: usize,
) -> Result<JointBatch> {
    let images: Vec<&Image> = idx.iter().map(|&i| examples[i].image).collect();
    let labels = idx.iter().map(|&i| examples[i].label).collect();
    let views = if with_views {
        let pairs = idx
            .par_iter()
            .map(|&i| {
                let e = &examples[i];
                let mut r = rng::stream(seed, "views", &[epoch as u64, e.id as u64]);
                make_views(e.image, aug, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        let v1: Vec<&Image> = pairs.iter().map(|p| &p.view1).collect();
        let v2: Vec<&Image> = pairs.iter().map(|p| &p.view2).collect();
        Some((images_to_rows(&v1), images_to_rows(&v2)))
    } else {
        None
    };
    Ok(JointBatch {
        inputs: images_to_rows(&images),
        views,
        labels,
    })
}

/// Trains `params` on `examples` for `cfg.epochs` epochs.
pub fn train_stage(
    params: Network,
    examples: &[Example],
    aug: &AugmentationConfig,
    weights: &LossWeights,
    cfg: &TrainConfig,
    val: Option<&[Example]>,
) -> Result<(Network, Vec<EpochLog>)> {
    cfg.validate()?;
    weights.validate()?;
    let mut net = params;
    let mut flat = net.flat_params();
    let mut opt = Optimizer::new(cfg, flat.len());
    let with_views = weights.gamma != 0.0;
    let track_val = cfg.select_best_on_val && val.is_some_and(|v| !v.is_empty());
    let mut best: Option<(f64, Network)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", &[epoch as u64]));
        let mut sum = LossBreakdown::default();
        let mut n_batches = 0usize;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (b, idx) in batches(&order, cfg.batch_size).enumerate() {
            let batch = build_batch(examples, idx, aug, with_views, cfg.seed, epoch)?;
            let (loss, mut grad, probs) = loss_and_gradient(&net, &batch, weights).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            check_finite(&loss, epoch, b)?;
            if cfg.weight_decay != 0.0 {
                for (g, w) in grad.iter_mut().zip(&flat) {
                    *g += cfg.weight_decay * w;
                }
            }
            opt.step(&mut flat, &grad);
            net.set_flat_params(&flat)?;

            sum.ce += loss.ce;
            sum.bt_invariance += loss.bt_invariance;
            sum.bt_redundancy += loss.bt_redundancy;
            sum.total += loss.total;
            n_batches += 1;
            correct += probs
                .rows()
                .into_iter()
                .zip(&batch.labels)
                .filter(|(row, &y)| argmax(*row) == y)
                .count();
            seen += batch.labels.len();
        }
        if !net.all_finite() {
            return Err(Error::Numeric(format!("parameters became non-finite in epoch {epoch}")));
        }
        let scale = 1.0 / n_batches.max(1) as f64;
        let loss = LossBreakdown {
            ce: sum.ce * scale,
            bt_invariance: sum.bt_invariance * scale,
            bt_redundancy: sum.bt_redundancy * scale,
            total: sum.total * scale,
        };
        let val_accuracy = match (track_val, val) {
            (true, Some(v)) => Some(evaluate(&net, v)?),
            _ => None,
        };
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, net.clone()));
            }
        }
        log::debug!(
            "epoch {epoch}: loss {:.6} (ce {:.6}, bt {:.6}/{:.6}), train acc {:.4}",
            loss.total,
            loss.ce,
            loss.bt_invariance,
            loss.bt_redundancy,
            if seen > 0 { correct as f64 / seen as f64 } else { 0.0 }
        );
        log.push(EpochLog {
            epoch,
            loss,
            train_accuracy: if seen > 0 { correct as f64 / seen as f64 } else { 0.0 },
            val_accuracy,
        });
    }
    if let Some((_, best_net)) = best {
        net = best_net;
    }
    Ok((net, log))
}

/// Largest `|a − b| / max(1e−8, |a| + |b|)` between `analytic` and central
/// differences of `f` around `x`, with the index where it occurs.
pub fn finite_difference_check(
    analytic: &[f64],
    x: &[f64],
    step: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<(f64, usize)> {
    if analytic.len() != x.len() {
        return Err(Error::Consistency("gradient and parameter lengths differ".into()));
    }
    let mut probe = x.to_vec();
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe)?;
        probe[i] = x[i] - step;
        let minus = f(&probe)?;
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub params_checked: usize,
}

/// Compares the analytic gradient of the joint loss on `batch` with central
/// differences for every parameter.
pub fn grad_check(net: &Network, batch: &JointBatch, weights: &LossWeights, step: f64) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&step) {
        return Err(Error::config("step", "finite-difference step must lie in [1e-6, 1e-4]"));
    }
    let (_, analytic, _) = loss_and_gradient(net, batch, weights)?;
    let x = net.flat_params();
    let mut probe = net.clone();
    let (max_rel_error, worst) = finite_difference_check(&analytic, &x, step, |p| {
        probe.set_flat_params(p)?;
        joint_objective(&probe, batch, weights)
    })?;
    let mut offset = 0;
    let mut worst_param = String::new();
    for t in net.named_tensors() {
        if worst < offset + t.data.len() {
            worst_param = format!("{}[{}]", t.name, worst - offset);
            break;
        }
        offset += t.data.len();
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_param,
        params_checked: x.len(),
    })
}
