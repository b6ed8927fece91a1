//! Cross-correlation matrix, redundancy-reduction loss, classifier loss and
//! their weighted sum, with analytic gradients.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to column norms so dead (all-zero) units give 0, not NaN.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight λ of the off-diagonal (redundancy) term.
    pub lambda_bt: f64,
    /// Weight γ of the whole redundancy-reduction loss in the joint objective.
    pub gamma: f64,
    /// Subtract column means before correlating.
    pub center_embeddings: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_bt: 0.005,
            gamma: 0.001,
            center_embeddings: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bt.is_finite() && self.lambda_bt > 0.0) {
            return Err(Error::config("loss.lambda_bt", "must be finite and > 0"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::config("loss.gamma", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `d × d` matrix of normalized correlations between the columns of two
/// embedding batches.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation(pub Array2<f64>);

impl CrossCorrelation {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

struct Normalized {
    unit: Array2<f64>,
    centered: Array2<f64>,
    norms: Array1<f64>,
}

fn normalize_columns(z: &Array2<f64>, center: bool) -> Normalized {
    let centered = if center {
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        z - &mean
    } else {
        z.clone()
    };
    let norms = centered.map_axis(Axis(0), |c| c.dot(&c).sqrt());
    let mut unit = centered.clone();
    for (mut col, &n) in unit.columns_mut().into_iter().zip(norms.iter()) {
        col /= n.max(NORM_EPS);
    }
    Normalized { unit, centered, norms }
}

fn check_pair(z1: &Array2<f64>, z2: &Array2<f64>) -> Result<()> {
    if z1.dim() != z2.dim() {
        return Err(Error::Consistency(format!(
            "embedding batches differ in shape: {:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    if z1.nrows() < 2 {
        return Err(Error::Degenerate(format!(
            "cross-correlation needs a batch of at least 2, got {}",
            z1.nrows()
        )));
    }
    Ok(())
}

/// `C_ij = Σ_b z1[b,i]·z2[b,j] / (‖z1[:,i]‖·‖z2[:,j]‖)`.
pub fn cross_correlation(z1: &Array2<f64>, z2: &Array2<f64>, center: bool) -> Result<CrossCorrelation> {
    check_pair(z1, z2)?;
    let a = normalize_columns(z1, center);
    let b = normalize_columns(z2, center);
    Ok(CrossCorrelation(a.unit.t().dot(&b.unit)))
}

/// `(Σ_i (1 − C_ii)², Σ_i Σ_{j≠i} C_ij²)`
pub fn barlow_twins_terms(c: &CrossCorrelation) -> (f64, f64) {
    let m = c.matrix();
    let mut invariance = 0.0;
    let mut redundancy = 0.0;
    for ((i, j), &v) in m.indexed_iter() {
        if i == j {
            invariance += (1.0 - v) * (1.0 - v);
        } else {
            redundancy += v * v;
        }
    }
    (invariance, redundancy)
}

pub fn barlow_twins_loss(c: &CrossCorrelation, lambda_bt: f64) -> f64 {
    let (inv, red) = barlow_twins_terms(c);
    inv + lambda_bt * red
}

fn check_labels(rows: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Consistency(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Consistency(format!("label {l} outside 0..{classes}")));
    }
    if rows == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under probability rows.
pub fn classifier_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(probs.nrows(), probs.ncols(), labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &y)| -probs[[b, y]].ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy computed from logits with log-sum-exp.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits.nrows(), logits.ncols(), labels)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Components of the joint objective. `bt_redundancy` already includes λ,
/// so `total = ce + γ·(bt_invariance + bt_redundancy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub bt_invariance: f64,
    pub bt_redundancy: f64,
    pub total: f64,
}

pub fn joint_loss(
    probs: &Array2<f64>,
    labels: &[usize],
    c: &CrossCorrelation,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let ce = classifier_loss(probs, labels)?;
    Ok(combine(ce, Some(c), weights))
}

fn combine(ce: f64, c: Option<&CrossCorrelation>, weights: &LossWeights) -> LossBreakdown {
    match c {
        Some(c) if weights.gamma != 0.0 => {
            let (inv, red) = barlow_twins_terms(c);
            let red = weights.lambda_bt * red;
            LossBreakdown {
                ce,
                bt_invariance: inv,
                bt_redundancy: red,
                total: ce + weights.gamma * (inv + red),
            }
        }
        _ => LossBreakdown {
            ce,
            total: ce,
            ..Default::default()
        },
    }
}

/// Backpropagates `dL/dÛ` through column normalization (and optional centering).
fn normalize_backward(n: &Normalized, dunit: &Array2<f64>, center: bool) -> Array2<f64> {
    let mut dz = Array2::zeros(dunit.raw_dim());
    for (j, &norm) in n.norms.iter().enumerate() {
        let du = dunit.column(j);
        let mut out = dz.column_mut(j);
        if norm < NORM_EPS {
            out.assign(&(&du / NORM_EPS));
            continue;
        }
        let a = n.centered.column(j);
        let proj = du.dot(&a) / (norm * norm * norm);
        for ((o, &g), &v) in out.iter_mut().zip(du.iter()).zip(a.iter()) {
            *o = g / norm - proj * v;
        }
    }
    if center {
        let mean = dz.mean_axis(Axis(0)).expect("non-empty batch");
        dz -= &mean;
    }
    dz
}

/// Gradients of the joint objective with respect to its inputs.
#[derive(Debug, Clone)]
pub struct JointGradients {
    pub logits: Array2<f64>,
    pub embeddings: Option<(Array2<f64>, Array2<f64>)>,
}

/// Joint loss from logits and (optionally) the two view embeddings, together
/// with its partial derivatives. With `gamma == 0` or no embeddings the
/// redundancy-reduction terms are not evaluated.
pub fn joint_loss_with_grad(
    logits: &Array2<f64>,
    labels: &[usize],
    embeddings: Option<(&Array2<f64>, &Array2<f64>)>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, JointGradients)> {
    let ce = cross_entropy(logits, labels)?;
    let batch = labels.len() as f64;
    let mut dlogits = crate::nn::softmax(logits);
    for (b, &y) in labels.iter().enumerate() {
        dlogits[[b, y]] -= 1.0;
    }
    dlogits /= batch;

    let Some((z1, z2)) = embeddings.filter(|_| weights.gamma != 0.0) else {
        return Ok((
            combine(ce, None, weights),
            JointGradients { logits: dlogits, embeddings: None },
        ));
    };
    check_pair(z1, z2)?;
    let a = normalize_columns(z1, weights.center_embeddings);
    let b = normalize_columns(z2, weights.center_embeddings);
    let c = CrossCorrelation(a.unit.t().dot(&b.unit));
    let breakdown = combine(ce, Some(&c), weights);

    // dL/dC, scaled by γ
    let mut g = c.0.mapv(|v| 2.0 * weights.lambda_bt * v);
    for i in 0..g.nrows() {
        g[[i, i]] = -2.0 * (1.0 - c.0[[i, i]]);
    }
    g *= weights.gamma;

    let dunit_a = b.unit.dot(&g.t());
    let dunit_b = a.unit.dot(&g);
    let dz1 = normalize_backward(&a, &dunit_a, weights.center_embeddings);
    let dz2 = normalize_backward(&b, &dunit_b, weights.center_embeddings);
    Ok((
        breakdown,
        JointGradients {
            logits: dlogits,
            embeddings: Some((dz1, dz2)),
        },
    ))
}
