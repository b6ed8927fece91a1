use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dalbt::active::{run_experiment, Observer, StageMetrics};
use dalbt::config::ExperimentConfig;
use dalbt::metrics::{read_metrics, RunManifest, RunWriter, SeedStatus};
use dalbt::nn::Network;
use dalbt::{rng, Error, Result};
use rand_distr::{Distribution, Weibull};

fn dalbt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dalbt"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn small_config(seeds: &[u64]) -> serde_json::Value {
    serde_json::json!({
        "dataset": {"kind": "synth_blobs", "dim": 6, "per_class": 30, "test_per_class": 10},
        "splits": {"initial_labeled": 9},
        "stages": 3, "budget": 6,
        "strategy": "min_confidence",
        "train": {"epochs": 3, "batch_size": 8},
        "arch": {"kind": "mlp", "hidden": 12, "latent": 6, "proj_hidden": 12, "proj_dim": 6},
        "seeds": seeds
    })
}

#[test]
fn gradcheck_passes_on_toy_model() {
    let out = dalbt(&["gradcheck"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let err: f64 = text.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{text}");

    let out = dalbt(&["gradcheck", "--dims", "5,4,3,2", "--batch", "7", "--step", "1e-6"]);
    assert!(out.status.success());
    assert!(!dalbt(&["gradcheck", "--step", "1e-2"]).status.success());
}

#[test]
fn fit_weibull_recovers_shape() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let dist = Weibull::new(1.0, 2.0).unwrap();
    let mut r = rng::stream(0, "cli-fit", &[]);
    let mut text = String::from("distance\n");
    for _ in 0..10_000 {
        text += &format!("{}\n", dist.sample(&mut r));
    }
    fs::write(&path, text).unwrap();
    let out = dalbt(&["fit-weibull", "--input", path.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let kappa: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("kappa="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((1.9..=2.1).contains(&kappa), "{stdout}");
    assert!(stdout.contains("eta=10000 n=10000"));

    let out = dalbt(&["fit-weibull", "--input", path.to_str().unwrap(), "--eta", "50"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("eta=50 "));
}

#[test]
fn run_and_export_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, small_config(&[0, 1, 2, 3, 4]).to_string()).unwrap();
    let run_dir = dir.path().join("run");
    let out = dalbt(&["run", "--config", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = RunManifest::read(&run_dir).unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.seeds.len(), 5);
    let mut records = 0;
    for entry in &manifest.seeds {
        assert_eq!(entry.status, SeedStatus::Complete);
        records += read_metrics(&run_dir.join(&entry.metrics_path)).unwrap().len();
        assert!(run_dir.join(&entry.checkpoint_path).exists());
    }
    assert_eq!(records, 15);
    let resolved = ExperimentConfig::from_json(&fs::read_to_string(run_dir.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved.hash(), manifest.config_hash);

    let csv = dir.path().join("curves.csv");
    let out = dalbt(&["export-curves", "--runs", run_dir.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "stage,labeled_size,mean_acc,std_acc,strategy");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,9.0,"));
    assert!(lines[3].ends_with(",min_confidence"));
    assert_eq!(text, fs::read_to_string(run_dir.join("summary.csv")).unwrap());

    let again = dir.path().join("again.csv");
    dalbt(&["export-curves", "--runs", run_dir.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(text, fs::read_to_string(&again).unwrap());
}

#[test]
fn seed_override_and_existing_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, small_config(&[0, 1]).to_string()).unwrap();
    let run_dir = dir.path().join("run");
    let args = ["run", "--config", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap(), "--seed-override", "9"];
    assert!(dalbt(&args).status.success());
    let manifest = RunManifest::read(&run_dir).unwrap();
    assert_eq!(manifest.config.seeds, vec![9]);
    assert!(run_dir.join("seed-9/metrics.jsonl").exists());
    assert!(!dalbt(&args).status.success());
}

#[test]
fn bad_config_fails_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let mut v = small_config(&[0]);
    v["train"]["batch_size"] = 1.into();
    fs::write(&cfg, v.to_string()).unwrap();
    let out = dalbt(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("train.batch_size") && err.contains("B >= 2"), "{err}");

    let out = dalbt(&["run", "--config", "/nonexistent.json", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_dalbt")).arg("gradcheck").env("DALBT_THREADS", "zero").output().unwrap();
    assert!(!out.status.success());
}

/// Forwards to a run writer, then fails once `stage` has been recorded.
struct CrashAfter {
    writer: RunWriter,
    stage: usize,
}

impl Observer for CrashAfter {
    fn stage_finished(&mut self, seed: u64, m: &StageMetrics) -> Result<()> {
        self.writer.stage_finished(seed, m)?;
        if m.stage == self.stage {
            return Err(Error::Numeric("simulated crash".into()));
        }
        Ok(())
    }
    fn seed_finished(&mut self, seed: u64, params: &Network) -> Result<()> {
        self.writer.seed_finished(seed, params)
    }
}

#[test]
fn crash_keeps_flushed_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small_config(&[0]);
    v["stages"] = 6.into();
    let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    let run_dir = dir.path().join("run");
    let mut obs = CrashAfter { writer: RunWriter::create(&run_dir, &cfg).unwrap(), stage: 2 };
    let report = run_experiment(&cfg, &mut obs).unwrap();
    assert_eq!(report.runs[0].stages.len(), 3);
    let manifest = obs.writer.finish(&report).unwrap();
    assert!(!manifest.complete);
    assert_eq!(manifest.seeds[0].status, SeedStatus::Partial);
    let records = read_metrics(&run_dir.join("seed-0/metrics.jsonl")).unwrap();
    assert_eq!(records.iter().map(|r| r.metrics.stage).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert!(!Path::new(&run_dir.join("seed-0/params.ckpt")).exists());
}
