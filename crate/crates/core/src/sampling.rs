//! Acquisition strategies.

use std::cmp::Ordering;
use std::fmt;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    WeibullMax,
    MinConfidence,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::WeibullMax => "weibull_max",
            Strategy::MinConfidence => "min_confidence",
            Strategy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    pub selected_ids: Vec<usize>,
    /// Score of each selected id, in the same order.
    pub scores: Option<Vec<f64>>,
}

/// The `b` smallest items under `cmp`, in order. Uses partial selection
/// before sorting only the kept prefix.
fn smallest_b(mut items: Vec<(usize, f64)>, b: usize, cmp: impl Fn(&(usize, f64), &(usize, f64)) -> Ordering) -> Vec<(usize, f64)> {
    let b = b.min(items.len());
    if b == 0 {
        return Vec::new();
    }
    if b < items.len() {
        items.select_nth_unstable_by(b - 1, &cmp);
        items.truncate(b);
    }
    items.sort_unstable_by(&cmp);
    items
}

fn check_finite(items: &[(usize, f64)]) -> Result<()> {
    match items.iter().find(|(_, s)| !s.is_finite()) {
        Some((id, s)) => Err(Error::Numeric(format!("score for id {id} is {s}"))),
        None => Ok(()),
    }
}

fn into_result(items: Vec<(usize, f64)>) -> AcquisitionResult {
    let (selected_ids, scores) = items.into_iter().unzip();
    AcquisitionResult { selected_ids, scores: Some(scores) }
}

/// The `b` ids with the largest score; ties go to the smaller id.
pub fn select_weibull_max(scores: &[(usize, f64)], b: usize) -> Result<AcquisitionResult> {
    check_finite(scores)?;
    let top = smallest_b(scores.to_vec(), b, |x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(into_result(top))
}

/// The `b` rows of `probs` with the lowest maximum probability; ties go to
/// the smaller id. `ids[i]` names row `i`.
pub fn select_min_confidence(ids: &[usize], probs: &Array2<f64>, b: usize) -> Result<AcquisitionResult> {
    if ids.len() != probs.nrows() {
        return Err(Error::Consistency(format!(
            "{} ids for {} probability rows",
            ids.len(),
            probs.nrows()
        )));
    }
    let conf: Vec<(usize, f64)> = ids
        .iter()
        .zip(probs.rows())
        .map(|(&id, row)| (id, row.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    check_finite(&conf)?;
    let low = smallest_b(conf, b, |x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    Ok(into_result(low))
}

/// Uniform sample of `min(b, |ids|)` ids without replacement.
pub fn select_random(ids: &[usize], b: usize, rng: &mut Rng) -> AcquisitionResult {
    let b = b.min(ids.len());
    let selected_ids = index::sample(rng, ids.len(), b).into_iter().map(|i| ids[i]).collect();
    AcquisitionResult { selected_ids, scores: None }
}
