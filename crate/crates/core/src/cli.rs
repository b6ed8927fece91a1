//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array2;
use rand::Rng as _;

use crate::active::run_experiment;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{export_curves, RunWriter};
use crate::nn::{ArchSpec, LayerSpec, Network};
use crate::rng;
use crate::trainer::{grad_check, JointBatch};
use crate::weibull::{fit_weibull, WeibullFitConfig};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "dalbt", version, about = "Active learning with Barlow Twins regularization and Weibull outlier sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Aggregate run directories into a learning-curve CSV.
    ExportCurves {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the joint-loss gradient on a toy model.
    Gradcheck {
        /// input, latent, projection and class counts
        #[arg(long, value_delimiter = ',', default_values_t = [8, 6, 4, 3])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        batch: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a Weibull model to a one-column CSV of distances.
    FitWeibull {
        #[arg(long)]
        input: PathBuf,
        /// Tail size; all values by default.
        #[arg(long)]
        eta: Option<usize>,
    },
}

/// Runs a parsed command and returns the process exit code.
pub fn run_command(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, out, seed_override } => run(&config, &out, seed_override),
        Command::ExportCurves { runs, out } => {
            let rows = export_curves(&runs, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(0)
        }
        Command::Gradcheck { dims, batch, step, seed } => {
            let report = toy_grad_check(&dims, batch, step, seed)?;
            println!(
                "max relative error {:.3e} over {} parameters (worst: {})",
                report.max_rel_error, report.params_checked, report.worst_param
            );
            Ok(if report.max_rel_error < GRADCHECK_TOLERANCE { 0 } else { 1 })
        }
        Command::FitWeibull { input, eta } => {
            let distances = read_distances(&input)?;
            let cfg = WeibullFitConfig { eta, ..Default::default() };
            let fit = fit_weibull(&distances, &cfg)?;
            println!("tau={}", fit.model.tau);
            println!("lambda={}", fit.model.lambda);
            println!("kappa={}", fit.model.kappa);
            println!("eta={} n={}", fit.eta, distances.len());
            Ok(0)
        }
    }
}

fn run(config: &Path, out: &Path, seed_override: Option<u64>) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    let mut writer = RunWriter::create(out, &cfg)?;
    log::info!("run {} -> {}", writer.manifest().run_id, out.display());
    let report = run_experiment(&cfg, &mut writer)?;
    let manifest = writer.finish(&report)?;
    for row in &report.summary {
        println!(
            "{} stage {} labeled {:.0}: accuracy {:.4} ± {:.4}",
            row.strategy, row.stage, row.labeled_size, row.mean_acc, row.std_acc
        );
    }
    if manifest.complete {
        Ok(0)
    } else {
        eprintln!("run incomplete; see {}", out.join("manifest.json").display());
        Ok(1)
    }
}

/// Gradient check on a tanh encoder with a linear projector.
pub fn toy_grad_check(dims: &[usize], batch: usize, step: f64, seed: u64) -> Result<crate::trainer::GradCheckReport> {
    let &[input, latent, proj, classes] = dims else {
        return Err(Error::config("dims", "expected input,latent,projection,classes"));
    };
    if dims.contains(&0) || classes < 2 {
        return Err(Error::config("dims", "dimensions must be positive with at least 2 classes"));
    }
    if batch < 2 {
        return Err(Error::config("batch", "must be at least 2: the cross-correlation matrix needs B >= 2 rows"));
    }
    let arch = ArchSpec {
        input: (1, 1, input),
        encoder: vec![LayerSpec::Dense { units: latent }, LayerSpec::Tanh],
        projector: vec![LayerSpec::Dense { units: proj }],
        num_classes: classes,
    };
    let net = Network::init(&arch, seed)?;
    let mut r = rng::stream(seed, "gradcheck", &[]);
    let mut m = || Array2::from_shape_simple_fn((batch, input), || r.random_range(-1.0..1.0));
    let inputs = m();
    let views = Some((m(), m()));
    let labels = (0..batch).map(|i| i % classes).collect();
    let weights = LossWeights { gamma: 0.5, ..Default::default() };
    grad_check(&net, &JointBatch { inputs, views, labels }, &weights, step)
}

/// First column of a CSV as numbers; a non-numeric first row is a header.
pub fn read_distances(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let field = rec.get(0).unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Format(format!("{}: line {}: not a number: {field:?}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_toy_check_passes() {
        let r = toy_grad_check(&[8, 6, 4, 3], 5, 1e-5, 0).unwrap();
        assert!(r.max_rel_error < GRADCHECK_TOLERANCE);
        assert!(toy_grad_check(&[8, 6, 4], 5, 1e-5, 0).is_err());
    }

    #[test]
    fn distances_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "distance\n1.5\n2\n 3.25\n").unwrap();
        assert_eq!(read_distances(&p).unwrap(), vec![1.5, 2.0, 3.25]);
        std::fs::write(&p, "1\nx\n").unwrap();
        assert!(read_distances(&p).is_err());
    }
}
