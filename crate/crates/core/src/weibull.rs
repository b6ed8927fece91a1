//! Per-class Weibull models over latent-distance tails and the resulting
//! outlier score.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, Network};
use crate::trainer::{infer, Example};

const KAPPA_BRACKET: (f64, f64) = (0.01, 100.0);

/// Where the Weibull location τ sits relative to the fitted tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Location {
    /// τ = factor · min(tail).
    TailMinFraction(f64),
    /// τ fixed to the given value.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeibullFitConfig {
    /// Number of largest distances used for the fit; `None` uses all of them.
    pub eta: Option<usize>,
    pub min_class_samples: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub location: Location,
}

impl Default for WeibullFitConfig {
    fn default() -> Self {
        WeibullFitConfig {
            eta: Some(20),
            min_class_samples: 5,
            max_iterations: 200,
            tolerance: 1e-10,
            location: Location::TailMinFraction(0.99),
        }
    }
}

impl WeibullFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta.is_some_and(|e| e < 2) {
            return Err(Error::config("weibull.eta", "tail size must be at least 2"));
        }
        if self.min_class_samples < 2 {
            return Err(Error::config("weibull.min_class_samples", "must be at least 2"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("weibull.max_iterations", "must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("weibull.tolerance", "must be > 0"));
        }
        match self.location {
            Location::TailMinFraction(f) if !(0.0..1.0).contains(&f) => {
                Err(Error::config("weibull.location", "tail fraction must lie in [0, 1)"))
            }
            Location::Fixed(t) if !(t >= 0.0 && t.is_finite()) => {
                Err(Error::config("weibull.location", "fixed location must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullModel {
    pub tau: f64,
    pub lambda: f64,
    pub kappa: f64,
}

impl WeibullModel {
    pub fn new(tau: f64, lambda: f64, kappa: f64) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite() && lambda > 0.0 && lambda.is_finite() && kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Numeric(format!(
                "invalid Weibull parameters tau={tau} lambda={lambda} kappa={kappa}"
            )));
        }
        Ok(WeibullModel { tau, lambda, kappa })
    }

    pub fn cdf(&self, d: f64) -> f64 {
        weibull_cdf(self, d)
    }

    /// Log-likelihood of `distances` under the model; `-inf` if any value is
    /// at or below τ.
    pub fn log_likelihood(&self, distances: &[f64]) -> f64 {
        let (k, l) = (self.kappa, self.lambda);
        distances
            .iter()
            .map(|&d| {
                let x = d - self.tau;
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    k.ln() - l.ln() + (k - 1.0) * (x / l).ln() - (x / l).powf(k)
                }
            })
            .sum()
    }
}

/// `1 − exp(−(max(d − τ, 0)/λ)^κ)`. Saturates to exactly 1.0 in floating point
/// far in the tail.
pub fn weibull_cdf(model: &WeibullModel, d: f64) -> f64 {
    let x = (d - model.tau).max(0.0);
    -(-(x / model.lambda).powf(model.kappa)).exp_m1()
}

/// Result of a fit with the inputs it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullFit {
    pub model: WeibullModel,
    pub eta: usize,
    pub iterations: usize,
    /// Shape-equation residual at the returned κ.
    pub residual: f64,
}

struct ShapeEquation {
    ln_y: Vec<f64>,
    mean_ln: f64,
}

impl ShapeEquation {
    /// Works on values divided by their maximum; the equation is scale-free.
    fn new(x: &[f64]) -> Self {
        let max = x.iter().copied().fold(f64::MIN, f64::max);
        let ln_y: Vec<f64> = x.iter().map(|v| (v / max).ln()).collect();
        let mean_ln = ln_y.iter().sum::<f64>() / ln_y.len() as f64;
        ShapeEquation { ln_y, mean_ln }
    }

    /// g(κ) and g'(κ).
    fn eval(&self, k: f64) -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &l in &self.ln_y {
            let w = (k * l).exp();
            s0 += w;
            s1 += w * l;
            s2 += w * l * l;
        }
        let m1 = s1 / s0;
        let g = m1 - 1.0 / k - self.mean_ln;
        let dg = (s2 / s0 - m1 * m1) + 1.0 / (k * k);
        (g, dg)
    }

    /// `(mean y^κ)^{1/κ}`, to be rescaled by the maximum.
    fn unit_scale(&self, k: f64) -> f64 {
        let m = self.ln_y.iter().map(|l| (k * l).exp()).sum::<f64>() / self.ln_y.len() as f64;
        m.powf(1.0 / k)
    }
}

/// Maximum-likelihood Weibull fit to the `eta` largest distances, with the
/// location placed per `cfg.location`.
pub fn fit_weibull(distances: &[f64], cfg: &WeibullFitConfig) -> Result<WeibullFit> {
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::Numeric("distances must be finite and nonnegative".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let eta = cfg.eta.unwrap_or(sorted.len()).min(sorted.len());
    let tail = &sorted[sorted.len() - eta..];
    if tail.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 tail values, have {}", tail.len())));
    }
    if tail[0] == tail[tail.len() - 1] {
        return Err(Error::Degenerate("all tail distances are equal".into()));
    }
    let tau = match cfg.location {
        Location::TailMinFraction(f) => f * tail[0],
        Location::Fixed(t) => t,
    };
    let x: Vec<f64> = tail.iter().map(|d| d - tau).filter(|&v| v > 0.0).collect();
    if x.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 positive values after the location shift, have {}",
            x.len()
        )));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::Degenerate("shifted tail has zero variance".into()));
    }

    let eq = ShapeEquation::new(&x);
    let (mut lo, mut hi) = KAPPA_BRACKET;
    let (g_lo, _) = eq.eval(lo);
    let (g_hi, _) = eq.eval(hi);
    if !(g_lo < 0.0 && g_hi > 0.0) {
        return Err(Error::Numeric(format!(
            "shape equation has no root in [{lo}, {hi}] (g = {g_lo}, {g_hi})"
        )));
    }
    let mut k = 1.0;
    for iter in 1..=cfg.max_iterations {
        let (g, dg) = eq.eval(k);
        if !g.is_finite() {
            return Err(Error::Numeric(format!("shape equation not finite at kappa={k}")));
        }
        if g.abs() < cfg.tolerance {
            let max = x.iter().copied().fold(f64::MIN, f64::max);
            let model = WeibullModel::new(tau, max * eq.unit_scale(k), k)?;
            return Ok(WeibullFit { model, eta, iterations: iter, residual: g });
        }
        if g < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let newton = k - g / dg;
        k = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(Error::Numeric(format!(
        "shape equation did not converge in {} iterations",
        cfg.max_iterations
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCluster {
    pub class_id: usize,
    pub mean: Array1<f64>,
    /// Euclidean distances of the members to `mean`, ascending.
    pub distances: Vec<f64>,
}

/// Mean and sorted member distances; `None` for an empty set.
pub fn build_cluster(class_id: usize, latents: ArrayView2<f64>) -> Option<ClassCluster> {
    let mean = latents.mean_axis(Axis(0))?;
    let mut distances: Vec<f64> = latents.rows().into_iter().map(|z| euclidean(z, mean.view())).collect();
    distances.sort_by(f64::total_cmp);
    Some(ClassCluster { class_id, mean, distances })
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Latents of the correctly classified examples, grouped by true class.
pub fn collect_correct_latents(net: &Network, examples: &[Example]) -> Result<Vec<Array2<f64>>> {
    let k = net.num_classes();
    let d = net.latent_dim();
    let images: Vec<_> = examples.iter().map(|e| e.image).collect();
    let out = infer(net, &images)?;
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); k];
    for ((z, p), e) in out.latent.rows().into_iter().zip(out.probs.rows()).zip(examples) {
        if e.label < k && argmax(p) == e.label {
            rows[e.label].extend(z.iter());
        }
    }
    rows.into_iter()
        .map(|r| {
            let n = r.len() / d.max(1);
            Array2::from_shape_vec((n, d), r).map_err(|e| Error::Consistency(e.to_string()))
        })
        .collect()
}

/// Scoring entry for one class: its mean and the model applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub class_id: usize,
    pub mean: Array1<f64>,
    pub model: WeibullModel,
    pub eta: usize,
    pub support: usize,
    /// True when the global pooled model stands in for a per-class fit.
    pub uses_global: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetModel {
    pub classes: Vec<ClassModel>,
    pub global: Option<WeibullFit>,
}

/// Fits one model per class; classes with too few correct latents or a
/// failed fit use a model fit on all classes' distances pooled. Classes
/// without any correct latent are left out.
pub fn fit_open_set(per_class: &[Array2<f64>], cfg: &WeibullFitConfig) -> Result<OpenSetModel> {
    cfg.validate()?;
    let clusters: Vec<ClassCluster> = per_class
        .iter()
        .enumerate()
        .filter_map(|(c, z)| build_cluster(c, z.view()))
        .collect();
    let fits: Vec<Option<WeibullFit>> = clusters
        .par_iter()
        .map(|cl| {
            if cl.distances.len() < cfg.min_class_samples {
                return None;
            }
            match fit_weibull(&cl.distances, cfg) {
                Ok(f) => Some(f),
                Err(e) => {
                    log::warn!("class {} Weibull fit failed: {e}", cl.class_id);
                    None
                }
            }
        })
        .collect();

    let global = if fits.iter().any(Option::is_none) {
        let pooled: Vec<f64> = clusters.iter().flat_map(|c| c.distances.iter().copied()).collect();
        match fit_weibull(&pooled, cfg) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("global Weibull fit failed: {e}");
                None
            }
        }
    } else {
        None
    };

    let mut classes = Vec::new();
    for (cl, fit) in clusters.into_iter().zip(fits) {
        let (fit, uses_global) = match (fit, global) {
            (Some(f), _) => (f, false),
            (None, Some(g)) => (g, true),
            (None, None) => continue,
        };
        classes.push(ClassModel {
            class_id: cl.class_id,
            support: cl.distances.len(),
            mean: cl.mean,
            model: fit.model,
            eta: fit.eta,
            uses_global,
        });
    }
    if classes.is_empty() {
        return Err(Error::StrategyUnavailable("no class has a usable Weibull model".into()));
    }
    Ok(OpenSetModel { classes, global })
}

impl OpenSetModel {
    /// Minimum over classes of the CDF of the distance to each class mean.
    pub fn outlier_score(&self, z: ArrayView1<f64>) -> f64 {
        self.classes
            .iter()
            .map(|c| weibull_cdf(&c.model, euclidean(z, c.mean.view())))
            .fold(f64::INFINITY, f64::min)
    }

    /// Scores every row of `latents`.
    pub fn score_rows(&self, latents: &Array2<f64>) -> Vec<f64> {
        let rows: Vec<_> = latents.rows().into_iter().collect();
        rows.par_iter().map(|z| self.outlier_score(*z)).collect()
    }

    pub fn uses_global(&self) -> bool {
        self.classes.iter().any(|c| c.uses_global)
    }
}

/// Tab-separated records: class, tau, lambda, kappa, eta, support.
impl fmt::Display for OpenSetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "class\ttau\tlambda\tkappa\teta\tsupport")?;
        for c in &self.classes {
            let id = if c.uses_global { format!("{}*", c.class_id) } else { c.class_id.to_string() };
            writeln!(
                f,
                "{id}\t{}\t{}\t{}\t{}\t{}",
                c.model.tau, c.model.lambda, c.model.kappa, c.eta, c.support
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal, Weibull};

    fn all() -> WeibullFitConfig {
        WeibullFitConfig { eta: None, ..Default::default() }
    }

    fn draws(kappa: f64, lambda: f64, n: usize, seed: u64) -> Vec<f64> {
        let dist = Weibull::new(lambda, kappa).unwrap();
        let mut r = rng::stream(seed, "weibull-draws", &[]);
        (0..n).map(|_| dist.sample(&mut r)).collect()
    }

    /// Profile log-likelihood over a κ grid, with λ at its closed-form
    /// optimum for each κ, on values already shifted by τ.
    fn grid_best(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mut best = f64::NEG_INFINITY;
        for i in 10..=1000 {
            let k = i as f64 * 0.01;
            let lam = (x.iter().map(|v| v.powf(k)).sum::<f64>() / n).powf(1.0 / k);
            let ll: f64 = x
                .iter()
                .map(|v| k.ln() - lam.ln() + (k - 1.0) * (v / lam).ln() - (v / lam).powf(k))
                .sum();
            best = best.max(ll);
        }
        best
    }

    #[test]
    fn recovers_shape_and_scale() {
        for seed in 0..5 {
            let d = draws(2.0, 1.5, 10_000, seed);
            let fit = fit_weibull(&d, &all()).unwrap();
            let m = fit.model;
            assert!((m.kappa - 2.0).abs() / 2.0 < 0.05, "seed {seed}: kappa {}", m.kappa);
            assert!((m.lambda - 1.5).abs() / 1.5 < 0.03, "seed {seed}: lambda {}", m.lambda);
            assert!(fit.residual.abs() < 1e-10);
            let shifted: Vec<f64> = d.iter().map(|v| v - m.tau).collect();
            assert!(m.log_likelihood(&d) >= grid_best(&shifted) - 1e-6);
        }
    }

    #[test]
    fn exponential_shape_near_one() {
        let d = draws(1.0, 0.7, 10_000, 11);
        let k = fit_weibull(&d, &all()).unwrap().model.kappa;
        assert!((0.9..=1.1).contains(&k), "{k}");
    }

    #[test]
    fn fixed_location_is_the_plain_mle() {
        let d = draws(2.0, 1.5, 2_000, 3);
        let cfg = WeibullFitConfig { location: Location::Fixed(0.0), ..all() };
        let m = fit_weibull(&d, &cfg).unwrap().model;
        assert_eq!(m.tau, 0.0);
        assert!(m.log_likelihood(&d) >= grid_best(&d) - 1e-6);
    }

    #[test]
    fn tail_uses_largest_values() {
        let d: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let fit = fit_weibull(&d, &WeibullFitConfig::default()).unwrap();
        assert_eq!(fit.eta, 20);
        assert_abs_diff_eq!(fit.model.tau, 0.99 * 81.0, epsilon = 1e-12);
        let small = fit_weibull(&d[..7], &WeibullFitConfig::default()).unwrap();
        assert_eq!(small.eta, 7);
    }

    #[test]
    fn order_invariant() {
        let mut d = draws(1.7, 2.0, 300, 4);
        let a = fit_weibull(&d, &all()).unwrap();
        d.reverse();
        let b = fit_weibull(&d, &all()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_weibull(&[2.0; 10], &all()), Err(Error::Degenerate(_))));
        assert!(matches!(fit_weibull(&[1.0], &all()), Err(Error::Degenerate(_))));
        assert!(matches!(fit_weibull(&[], &all()), Err(Error::Degenerate(_))));
        assert!(matches!(fit_weibull(&[1.0, f64::NAN], &all()), Err(Error::Numeric(_))));
    }

    #[test]
    fn too_few_iterations_is_numeric() {
        let d = draws(3.0, 1.0, 200, 8);
        let cfg = WeibullFitConfig { max_iterations: 1, ..all() };
        assert!(matches!(fit_weibull(&d, &cfg), Err(Error::Numeric(_))));
    }

    #[test]
    fn cdf_closed_forms() {
        let m = WeibullModel::new(0.5, 2.0, 1.0).unwrap();
        assert_eq!(weibull_cdf(&m, 0.5), 0.0);
        assert_eq!(weibull_cdf(&m, 0.1), 0.0);
        assert_abs_diff_eq!(weibull_cdf(&m, 2.5), 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn cdf_monotone() {
        let mut r = rng::stream(0, "cdf", &[]);
        for _ in 0..50 {
            let m = WeibullModel::new(r.random_range(0.0..2.0), r.random_range(0.1..3.0), r.random_range(0.2..6.0)).unwrap();
            for _ in 0..1000 {
                let a: f64 = r.random_range(0.0..10.0);
                let b: f64 = r.random_range(0.0..10.0);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let (wl, wh) = (weibull_cdf(&m, lo), weibull_cdf(&m, hi));
                assert!(wl <= wh && (0.0..=1.0).contains(&wl));
            }
        }
    }

    #[test]
    fn cluster_examples() {
        let one = build_cluster(0, array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(one.mean, array![1.0, 2.0]);
        assert_eq!(one.distances, vec![0.0]);
        let two = build_cluster(1, array![[0.0, 0.0], [2.0, 0.0]].view()).unwrap();
        assert_eq!(two.mean, array![1.0, 0.0]);
        assert_eq!(two.distances, vec![1.0, 1.0]);
        assert!(build_cluster(2, Array2::<f64>::zeros((0, 2)).view()).is_none());
    }

    fn gaussian(n: usize, d: usize, center: f64, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, "latents", &[]);
        Array2::from_shape_simple_fn((n, d), || center + r.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn cluster_matches_naive() {
        let z = gaussian(50, 4, 0.0, 1);
        let cl = build_cluster(0, z.view()).unwrap();
        let mut mean = [0.0; 4];
        for i in 0..50 {
            for j in 0..4 {
                mean[j] += z[[i, j]] / 50.0;
            }
        }
        let mut naive: Vec<f64> = (0..50)
            .map(|i| (0..4).map(|j| (z[[i, j]] - mean[j]).powi(2)).sum::<f64>().sqrt())
            .collect();
        naive.sort_by(f64::total_cmp);
        for (a, b) in cl.distances.iter().zip(&naive) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    fn three_classes(seed: u64) -> Vec<Array2<f64>> {
        (0..3).map(|c| gaussian(40, 3, 4.0 * c as f64, seed + c as u64)).collect()
    }

    #[test]
    fn score_matches_composition() {
        let latents = three_classes(0);
        let model = fit_open_set(&latents, &WeibullFitConfig::default()).unwrap();
        assert!(!model.uses_global());
        for gx in -4..=12 {
            for gy in -4..=12 {
                let z = array![gx as f64, gy as f64, 0.5];
                let expected = latents
                    .iter()
                    .enumerate()
                    .map(|(c, l)| {
                        let cl = build_cluster(c, l.view()).unwrap();
                        let m = fit_weibull(&cl.distances, &WeibullFitConfig::default()).unwrap().model;
                        let d = (&z - &cl.mean).mapv(|v| v * v).sum().sqrt();
                        weibull_cdf(&m, d)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(model.outlier_score(z.view()), expected);
            }
        }
        let mean = model.classes[1].mean.clone();
        assert_eq!(model.outlier_score(mean.view()), 0.0);
        let far = array![1e6, 1e6, 1e6];
        assert!(model.outlier_score(far.view()) > 1.0 - 1e-12);
    }

    fn random_rotation(d: usize, seed: u64) -> Array2<f64> {
        let a = gaussian(d, d, 0.0, seed);
        let mut q = Array2::<f64>::zeros((d, d));
        for j in 0..d {
            let mut v = a.column(j).to_owned();
            for k in 0..j {
                let qk = q.column(k).to_owned();
                v = &v - &(&qk * qk.dot(&v));
            }
            let n = v.dot(&v).sqrt();
            q.column_mut(j).assign(&(v / n));
        }
        q
    }

    #[test]
    fn rotation_invariant() {
        let latents = three_classes(5);
        let probes = gaussian(100, 3, 4.0, 99);
        let base = fit_open_set(&latents, &WeibullFitConfig::default()).unwrap().score_rows(&probes);
        for seed in 0..5 {
            let q = random_rotation(3, 100 + seed);
            let rotated: Vec<Array2<f64>> = latents.iter().map(|l| l.dot(&q)).collect();
            let scores = fit_open_set(&rotated, &WeibullFitConfig::default()).unwrap().score_rows(&probes.dot(&q));
            for (a, b) in base.iter().zip(&scores) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn small_classes_use_global_model() {
        let mut latents = three_classes(2);
        latents[2] = latents[2].slice(ndarray::s![..3, ..]).to_owned();
        latents[1] = Array2::zeros((0, 3));
        let model = fit_open_set(&latents, &WeibullFitConfig::default()).unwrap();
        assert_eq!(model.classes.len(), 2);
        assert!(!model.classes[0].uses_global);
        assert!(model.classes[1].uses_global);
        assert_eq!(model.classes[1].class_id, 2);
        assert_eq!(model.classes[1].model, model.global.unwrap().model);
        assert!(model.to_string().contains("2*\t"));
    }

    #[test]
    fn no_usable_class() {
        let latents = vec![Array2::zeros((0, 2)), Array2::zeros((0, 2))];
        assert!(matches!(fit_open_set(&latents, &WeibullFitConfig::default()), Err(Error::StrategyUnavailable(_))));
        let single = vec![array![[1.0, 1.0]]];
        assert!(matches!(fit_open_set(&single, &WeibullFitConfig::default()), Err(Error::StrategyUnavailable(_))));
    }

    #[test]
    fn correct_latents_follow_predictions() {
        use crate::data::{random_class_means, synth_blobs};
        use crate::nn::ArchSpec;
        let means = random_class_means(2, 4, 0);
        let samples = synth_blobs(2, 4, 10, &means, 0.1, 0).unwrap();
        let ex: Vec<Example> = samples
            .iter()
            .map(|s| Example { id: s.id, image: &s.image, label: s.label.unwrap() })
            .collect();
        let mut net = Network::init(&ArchSpec::mlp((1, 1, 4), 8, 3, 0, 0, 2), 0).unwrap();
        net.classifier.weight.fill(0.0);
        net.classifier.bias = array![0.0, 1.0];
        let sets = collect_correct_latents(&net, &ex).unwrap();
        assert_eq!(sets[0].nrows(), 0);
        assert_eq!(sets[1].nrows(), 10);
        assert_eq!(sets[1].ncols(), 3);
    }
}
