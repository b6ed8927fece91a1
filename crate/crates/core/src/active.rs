//! The active-learning loop: train, fit, score, select, annotate, commit,
//! evaluate.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{load_dataset, Dataset, ExperimentConfig};
use crate::data::{inject_ood, make_splits, OracleSim, Pool, Sample};
use crate::error::{Error, Result};
use crate::nn::{ArchSpec, Network};
use crate::rng;
use crate::sampling::{select_min_confidence, select_random, select_weibull_max, AcquisitionResult, Strategy};
use crate::trainer::{evaluate, infer, train_stage, Example, TrainConfig};
use crate::weibull::{collect_correct_latents, fit_open_set};

/// One stage's record. Sizes are taken before the stage's labels are committed,
/// so `labeled_size` is the training-set size behind `test_accuracy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub strategy: Strategy,
    pub labeled_size: usize,
    pub unlabeled_size: usize,
    pub test_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
    pub selected_count: usize,
    pub ood_selected_count: usize,
    pub ood_rejected_count: usize,
    /// In-distribution share of the selection; 1 when nothing was selected.
    pub in_dist_precision: f64,
    pub ce_term: f64,
    pub bt_invariance: f64,
    pub bt_redundancy: f64,
    pub wall_time_s: f64,
    /// Weibull scoring was unavailable and random selection was used instead.
    pub weibull_fallback: bool,
}

/// Everything a stage needs that does not change between stages.
pub struct StageContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub arch: ArchSpec,
    pub samples: HashMap<usize, &'a Sample>,
    pub oracle: OracleSim,
    pub test: Vec<Example<'a>>,
    pub val: Vec<Example<'a>>,
    /// In-distribution training samples (labeled plus unlabeled).
    pub train_size: usize,
}

impl<'a> StageContext<'a> {
    fn example(&self, id: usize, label: usize) -> Result<Example<'a>> {
        let s = self
            .samples
            .get(&id)
            .ok_or_else(|| Error::Consistency(format!("no sample with id {id}")))?;
        Ok(Example { id, image: &s.image, label })
    }

    fn fresh_params(&self) -> Result<Network> {
        Network::init(&self.arch, rng::derive_seed(self.seed, "init", &[]))
    }
}

pub struct StageOutcome {
    pub pool: Pool,
    pub params: Network,
    pub metrics: StageMetrics,
}

/// Labeled size has reached the cap, the stage budget is used up, or there
/// is nothing left to select.
pub fn stopping_check(pool: &Pool, cfg: &ExperimentConfig, train_size: usize) -> bool {
    let cap = cfg.labeled_cap_fraction * train_size as f64;
    pool.stage() >= cfg.stages
        || pool.labeled().len() as f64 >= cap - 1e-9
        || pool.candidates(cfg.exclude_rejected).is_empty()
}

fn acquire(
    ctx: &StageContext,
    net: &Network,
    labeled: &[Example],
    candidates: &[usize],
    stage: usize,
) -> Result<(AcquisitionResult, bool)> {
    let cfg = ctx.cfg;
    let b = cfg.budget;
    let random = || select_random(candidates, b, &mut rng::stream(ctx.seed, "acquire", &[stage as u64]));
    let images = || {
        candidates
            .iter()
            .map(|id| ctx.samples.get(id).map(|s| &s.image))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Consistency("candidate id without a sample".into()))
    };
    match cfg.strategy {
        Strategy::Random => Ok((random(), false)),
        Strategy::MinConfidence => {
            let out = infer(net, &images()?)?;
            Ok((select_min_confidence(candidates, &out.probs, b)?, false))
        }
        Strategy::WeibullMax => {
            let per_class = collect_correct_latents(net, labeled)?;
            let model = match fit_open_set(&per_class, &cfg.weibull) {
                Ok(m) => m,
                Err(Error::StrategyUnavailable(msg)) => {
                    log::warn!("seed {} stage {stage}: {msg}; selecting at random", ctx.seed);
                    return Ok((random(), true));
                }
                Err(e) => return Err(e),
            };
            let out = infer(net, &images()?)?;
            let mut scored: Vec<(usize, f64)> = candidates.iter().copied().zip(model.score_rows(&out.latent)).collect();
            if let Some(t) = cfg.ood_reject_threshold {
                scored.retain(|(_, s)| *s <= t);
            }
            Ok((select_weibull_max(&scored, b)?, false))
        }
    }
}

/// Runs stage `t` from `pool` and the previous stage's parameters.
pub fn run_stage(ctx: &StageContext, pool: Pool, params: Network, t: usize) -> Result<StageOutcome> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let labeled: Vec<Example> = pool
        .labeled()
        .iter()
        .map(|(&id, &label)| ctx.example(id, label))
        .collect::<Result<_>>()?;
    let init = if cfg.train.reinit_per_stage { ctx.fresh_params()? } else { params };
    let train_cfg = TrainConfig {
        seed: rng::derive_seed(ctx.seed, "train", &[t as u64]),
        ..cfg.train.clone()
    };
    let val = (!ctx.val.is_empty()).then_some(ctx.val.as_slice());
    let (net, log) = train_stage(init, &labeled, &cfg.augment, &cfg.loss, &train_cfg, val)?;
    let last = log.last().map(|e| e.loss).unwrap_or_default();

    let candidates = pool.candidates(cfg.exclude_rejected);
    let (acq, weibull_fallback) = acquire(ctx, &net, &labeled, &candidates, t)?;
    let annotation = ctx.oracle.annotate(&pool, &acq.selected_ids)?;
    let ood_selected = acq
        .selected_ids
        .iter()
        .filter(|&&id| ctx.oracle.is_ood(id) == Some(true))
        .count();
    let labeled_size = pool.labeled().len();
    let unlabeled_size = pool.unlabeled().len();
    let pool = pool.commit_labels(&annotation.annotated, &annotation.rejected);
    if let Some(id) = pool.labeled_ids().find(|&id| ctx.oracle.is_ood(id) != Some(false)) {
        return Err(Error::Consistency(format!("out-of-distribution id {id} entered the labeled pool")));
    }

    let test_accuracy = evaluate(&net, &ctx.test)?;
    let val_accuracy = match val {
        Some(v) => Some(evaluate(&net, v)?),
        None => None,
    };
    let selected = acq.selected_ids.len();
    let metrics = StageMetrics {
        stage: t,
        strategy: cfg.strategy,
        labeled_size,
        unlabeled_size,
        test_accuracy,
        val_accuracy,
        selected_count: selected,
        ood_selected_count: ood_selected,
        ood_rejected_count: annotation.rejected.len(),
        in_dist_precision: if selected == 0 { 1.0 } else { (selected - ood_selected) as f64 / selected as f64 },
        ce_term: last.ce,
        bt_invariance: last.bt_invariance,
        bt_redundancy: last.bt_redundancy,
        wall_time_s: start.elapsed().as_secs_f64(),
        weibull_fallback,
    };
    log::info!(
        "seed {} stage {t}: labeled {labeled_size}, test acc {test_accuracy:.4}, selected {selected} ({ood_selected} ood)",
        ctx.seed
    );
    Ok(StageOutcome { pool, params: net, metrics })
}

/// Receives results as they are produced.
pub trait Observer {
    fn stage_finished(&mut self, _seed: u64, _metrics: &StageMetrics) -> Result<()> {
        Ok(())
    }
    fn seed_finished(&mut self, _seed: u64, _params: &Network) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Builds the context for one seed and returns it with the starting pool.
pub fn prepare_seed<'a>(cfg: &'a ExperimentConfig, ds: &'a Dataset, seed: u64) -> Result<(StageContext<'a>, Pool)> {
    let splits = make_splits(&ds.train, cfg.splits.sizes(), cfg.splits.stratified, seed)?;
    let pool = inject_ood(splits.pool, &ds.ood)?;
    let samples: HashMap<usize, &Sample> = ds.train.iter().chain(&ds.ood).map(|s| (s.id, s)).collect();
    let labeled_example = |s: &'a Sample| {
        s.label
            .map(|label| Example { id: s.id, image: &s.image, label })
            .ok_or_else(|| Error::Consistency(format!("evaluation sample {} has no label", s.id)))
    };
    let by_ids = |ids: &[usize]| -> Result<Vec<Example<'a>>> { ids.iter().map(|id| labeled_example(samples[id])).collect() };
    let test = if cfg.splits.test_size > 0 {
        by_ids(&splits.test_ids)?
    } else {
        ds.test.iter().map(labeled_example).collect::<Result<_>>()?
    };
    if test.is_empty() {
        return Err(Error::config("splits.test_size", "no test samples available"));
    }
    let val = by_ids(&splits.val_ids)?;
    let oracle = OracleSim::from_samples(ds.train.iter().chain(&ds.ood))?;
    let train_size = ds.train.len() - splits.val_ids.len() - splits.test_ids.len();
    let ctx = StageContext {
        cfg,
        seed,
        arch: cfg.arch.build(ds.input, ds.num_classes),
        samples,
        oracle,
        test,
        val,
        train_size,
    };
    Ok((ctx, pool))
}

fn run_seed(cfg: &ExperimentConfig, ds: &Dataset, seed: u64, observer: &mut dyn Observer) -> Result<Vec<StageMetrics>> {
    let (ctx, mut pool) = prepare_seed(cfg, ds, seed)?;
    let mut params = ctx.fresh_params()?;
    let mut stages = Vec::new();
    while !stopping_check(&pool, cfg, ctx.train_size) {
        let t = pool.stage();
        let out = run_stage(&ctx, pool, params, t)?;
        observer.stage_finished(seed, &out.metrics)?;
        stages.push(out.metrics);
        pool = out.pool;
        params = out.params;
    }
    observer.seed_finished(seed, &params)?;
    Ok(stages)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub stages: Vec<StageMetrics>,
    /// Set when the seed stopped early; `stages` then holds what finished.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub stage: usize,
    pub labeled_size: f64,
    pub mean_acc: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std_acc: f64,
    pub strategy: Strategy,
}

/// Mean and standard deviation of test accuracy per stage across runs.
pub fn summarize<'a>(runs: impl IntoIterator<Item = &'a [StageMetrics]>) -> Vec<SummaryRow> {
    let mut by_key: std::collections::BTreeMap<(String, usize), Vec<&StageMetrics>> = Default::default();
    for run in runs {
        for m in run {
            by_key.entry((m.strategy.to_string(), m.stage)).or_default().push(m);
        }
    }
    by_key
        .into_values()
        .map(|ms| {
            let n = ms.len() as f64;
            let mean = ms.iter().map(|m| m.test_accuracy).sum::<f64>() / n;
            let var = if ms.len() > 1 {
                ms.iter().map(|m| (m.test_accuracy - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SummaryRow {
                stage: ms[0].stage,
                labeled_size: ms.iter().map(|m| m.labeled_size as f64).sum::<f64>() / n,
                mean_acc: mean,
                std_acc: var.sqrt(),
                strategy: ms[0].strategy,
            }
        })
        .collect()
}

pub struct ExperimentReport {
    pub runs: Vec<SeedRun>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn complete(&self) -> bool {
        self.runs.iter().all(|r| r.error.is_none())
    }
}

/// Runs every seed in `cfg.seeds`. A failing seed keeps the stages it
/// finished and records its error; the other seeds still run.
pub fn run_experiment(cfg: &ExperimentConfig, observer: &mut dyn Observer) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset, cfg.ood.as_ref())?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let mut recorder = Recorder { inner: observer, stages: Vec::new() };
        let error = run_seed(cfg, &ds, seed, &mut recorder).err().map(|e| {
            log::error!("seed {seed} aborted: {e}");
            e.to_string()
        });
        runs.push(SeedRun { seed, stages: recorder.stages, error });
    }
    let summary = summarize(runs.iter().map(|r| r.stages.as_slice()));
    Ok(ExperimentReport { runs, summary })
}

struct Recorder<'a> {
    inner: &'a mut dyn Observer,
    stages: Vec<StageMetrics>,
}

impl Observer for Recorder<'_> {
    fn stage_finished(&mut self, seed: u64, metrics: &StageMetrics) -> Result<()> {
        self.stages.push(metrics.clone());
        self.inner.stage_finished(seed, metrics)
    }
    fn seed_finished(&mut self, seed: u64, params: &Network) -> Result<()> {
        self.inner.seed_finished(seed, params)
    }
}
