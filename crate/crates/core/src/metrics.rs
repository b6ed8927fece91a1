//! Run directories: manifest, per-stage JSONL metrics, checkpoints and
//! learning-curve CSVs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::{summarize, ExperimentReport, Observer, StageMetrics, SummaryRow};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Network};

pub const SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: StageMetrics,
}

/// Append-only JSONL writer; every record is flushed as soon as it is written.
pub struct MetricsSink {
    file: File,
    run_id: String,
    seed: u64,
}

impl MetricsSink {
    pub fn create(path: &Path, run_id: &str, seed: u64) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsSink { file, run_id: run_id.to_string(), seed })
    }

    pub fn write(&mut self, metrics: &StageMetrics) -> Result<()> {
        let record = MetricsRecord {
            schema_version: SCHEMA_VERSION,
            run_id: self.run_id.clone(),
            seed: self.seed,
            metrics: metrics.clone(),
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStatus {
    Running,
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub status: SeedStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub run_id: String,
    pub config_hash: String,
    pub created_at: String,
    pub complete: bool,
    pub seeds: Vec<SeedEntry>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let now = chrono::Utc::now();
        let hash = cfg.hash();
        let run_id = format!("{}-{}", now.format("%Y%m%dT%H%M%SZ"), &hash[..12]);
        let seeds = cfg
            .seeds
            .iter()
            .map(|&seed| SeedEntry {
                seed,
                metrics_path: seed_dir(seed).join("metrics.jsonl"),
                checkpoint_path: seed_dir(seed).join("params.ckpt"),
                status: SeedStatus::Running,
                error: None,
            })
            .collect();
        RunManifest {
            artifact_version: ARTIFACT_VERSION.to_string(),
            run_id,
            config_hash: hash,
            created_at: now.to_rfc3339(),
            complete: false,
            seeds,
            config: cfg.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

fn seed_dir(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed-{seed}"))
}

/// Observer that writes one run directory.
pub struct RunWriter {
    dir: PathBuf,
    manifest: RunManifest,
    sinks: Vec<(u64, MetricsSink)>,
}

impl RunWriter {
    /// Creates `dir` with the manifest and the resolved config. Refuses to
    /// reuse a directory that already holds a manifest.
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        if dir.join("manifest.json").exists() {
            return Err(Error::Usage(format!("{} already contains a run", dir.display())));
        }
        fs::create_dir_all(dir)?;
        let manifest = RunManifest::new(cfg);
        fs::write(dir.join("config.resolved.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
        let mut sinks = Vec::new();
        for entry in &manifest.seeds {
            fs::create_dir_all(dir.join(seed_dir(entry.seed)))?;
            let path = dir.join(&entry.metrics_path);
            if path.exists() {
                fs::remove_file(&path)?;
            }
            sinks.push((entry.seed, MetricsSink::create(&path, &manifest.run_id, entry.seed)?));
        }
        manifest.write(dir)?;
        Ok(RunWriter { dir: dir.to_path_buf(), manifest, sinks })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Records per-seed status, writes the summary CSV and the final manifest.
    pub fn finish(mut self, report: &ExperimentReport) -> Result<RunManifest> {
        for run in &report.runs {
            if let Some(entry) = self.manifest.seeds.iter_mut().find(|e| e.seed == run.seed) {
                entry.status = if run.error.is_some() { SeedStatus::Partial } else { SeedStatus::Complete };
                entry.error = run.error.clone();
            }
        }
        self.manifest.complete = report.complete();
        write_curves(&self.dir.join("summary.csv"), &report.summary)?;
        self.manifest.write(&self.dir)?;
        Ok(self.manifest)
    }
}

impl Observer for RunWriter {
    fn stage_finished(&mut self, seed: u64, metrics: &StageMetrics) -> Result<()> {
        match self.sinks.iter_mut().find(|(s, _)| *s == seed) {
            Some((_, sink)) => sink.write(metrics),
            None => Err(Error::Consistency(format!("no metrics sink for seed {seed}"))),
        }
    }

    fn seed_finished(&mut self, seed: u64, params: &Network) -> Result<()> {
        checkpoint::save(params, self.dir.join(seed_dir(seed)).join("params.ckpt"))
    }
}

/// Writes `stage,labeled_size,mean_acc,std_acc,strategy` rows.
pub fn write_curves(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Aggregates the metrics files of every seed in each run directory.
pub fn export_curves(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    let mut runs: Vec<Vec<StageMetrics>> = Vec::new();
    for dir in run_dirs {
        let manifest = RunManifest::read(dir)?;
        for entry in &manifest.seeds {
            let path = dir.join(&entry.metrics_path);
            if !path.exists() {
                continue;
            }
            runs.push(read_metrics(&path)?.into_iter().map(|r| r.metrics).collect());
        }
    }
    if runs.iter().all(|r| r.is_empty()) {
        return Err(Error::Usage("no metrics records found in the given run directories".into()));
    }
    let rows = summarize(runs.iter().map(|r| r.as_slice()));
    write_curves(out, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::Strategy;

    fn metrics(stage: usize, acc: f64) -> StageMetrics {
        StageMetrics {
            stage,
            strategy: Strategy::WeibullMax,
            labeled_size: 20 + 20 * stage,
            unlabeled_size: 100,
            test_accuracy: acc,
            val_accuracy: None,
            selected_count: 20,
            ood_selected_count: 3,
            ood_rejected_count: 3,
            in_dist_precision: 0.85,
            ce_term: 0.1 + 0.2,
            bt_invariance: 1.0 / 3.0,
            bt_redundancy: 2.0f64.sqrt(),
            wall_time_s: 0.25,
            weibull_fallback: false,
        }
    }

    #[test]
    fn records_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut sink = MetricsSink::create(&path, "run", 7).unwrap();
        let m = StageMetrics { val_accuracy: Some(0.1 + 0.7), ..metrics(0, std::f64::consts::PI / 7.0) };
        sink.write(&m).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].metrics, m);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(serde_json::to_string(&back[0]).unwrap() + "\n", text);
        assert!(text.starts_with(r#"{"schema_version":1,"run_id":"run","seed":7,"stage":0,"strategy":"weibull_max""#));
    }

    #[test]
    fn every_line_parses_independently() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut sink = MetricsSink::create(&path, "r", 0).unwrap();
        for t in 0..3 {
            sink.write(&metrics(t, 0.5)).unwrap();
        }
        drop(sink);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        for line in text.lines() {
            serde_json::from_str::<MetricsRecord>(line).unwrap();
        }
        assert!(!text.contains("val_accuracy"));
    }

    #[test]
    fn curves_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let rows = summarize([vec![metrics(0, 0.5), metrics(1, 0.75)]].iter().map(|r| r.as_slice()));
        write_curves(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("stage,labeled_size,mean_acc,std_acc,strategy"));
        assert_eq!(lines.next(), Some("0,20.0,0.5,0.0,weibull_max"));
        assert_eq!(lines.next(), Some("1,40.0,0.75,0.0,weibull_max"));
    }

    #[test]
    fn manifest_ids() {
        let cfg = ExperimentConfig::from_json(r#"{"dataset": {"kind": "synth_blobs"}, "seeds": [3, 4]}"#).unwrap();
        let m = RunManifest::new(&cfg);
        assert!(m.run_id.ends_with(&cfg.hash()[..12]));
        assert_eq!(m.seeds[1].metrics_path, PathBuf::from("seed-4/metrics.jsonl"));
    }
}
