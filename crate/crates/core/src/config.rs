//! Experiment configuration: JSON schema, defaults, validation and dataset
//! materialization.
//!
//! | key | default |
//! |---|---|
//! | `dataset` | required; `synth_blobs`, `idx` or `cifar` |
//! | `dataset.num_classes` / `dim` / `per_class` / `test_per_class` / `noise_sigma` / `seed` (synth) | 3 / 16 / 100 / 50 / 0.1 / 0 |
//! | `ood` | none; `synth_blob` or `idx` |
//! | `splits.initial_labeled` / `val_size` / `test_size` / `stratified` | 20 / 0 / 0 / true |
//! | `stages` / `budget` / `strategy` | 5 / 20 / `weibull_max` |
//! | `labeled_cap_fraction` | 0.4 |
//! | `exclude_rejected` / `ood_reject_threshold` | false / none |
//! | `loss.gamma` / `lambda_bt` / `center_embeddings` | 0.001 / 0.005 / false |
//! | `train.learning_rate` / `weight_decay` / `batch_size` / `epochs` | 1e-3 / 1e-5 / 64 / 20 |
//! | `train.optimizer` / `reinit_per_stage` / `select_best_on_val` | `adam` / true / false |
//! | `augment.*` | see [`AugmentationConfig`] |
//! | `weibull.eta` / `min_class_samples` / `location` | 20 / 5 / 0.99 · tail minimum |
//! | `arch` | `mlp` (hidden 64, latent 16, projector 32 → 16) |
//! | `seeds` | `[0]` |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationConfig;
use crate::data::{assign_ids, load_cifar_binary, load_idx, load_idx_images, random_class_means, synth_blobs, synth_ood_blob, Origin, Sample, SplitSizes};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{ArchSpec, LayerSpec};
use crate::sampling::Strategy;
use crate::trainer::TrainConfig;
use crate::weibull::WeibullFitConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    SynthBlobs {
        #[serde(default = "defaults::num_classes")]
        num_classes: usize,
        #[serde(default = "defaults::dim")]
        dim: usize,
        #[serde(default = "defaults::per_class")]
        per_class: usize,
        #[serde(default = "defaults::test_per_class")]
        test_per_class: usize,
        #[serde(default = "defaults::noise_sigma")]
        noise_sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        train_files: Vec<PathBuf>,
        test_files: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSpec {
    SynthBlob {
        count: usize,
        /// Defaults to a constant 0.95 vector, outside the in-distribution mean range.
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "defaults::noise_sigma")]
        noise_sigma: f64,
        #[serde(default = "defaults::ood_name")]
        name: String,
        #[serde(default)]
        seed: u64,
    },
    Idx {
        images: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default = "defaults::ood_name")]
        name: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub initial_labeled: usize,
    pub val_size: usize,
    /// Carve a test set out of the training data instead of using the dataset's own.
    pub test_size: usize,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            initial_labeled: 20,
            val_size: 0,
            test_size: 0,
            stratified: true,
        }
    }
}

impl SplitConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            initial_labeled: self.initial_labeled,
            val_size: self.val_size,
            test_size: self.test_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchConfig {
    Mlp {
        #[serde(default = "defaults::hidden")]
        hidden: usize,
        #[serde(default = "defaults::latent")]
        latent: usize,
        #[serde(default = "defaults::proj_hidden")]
        proj_hidden: usize,
        #[serde(default = "defaults::proj_dim")]
        proj_dim: usize,
    },
    SmallConv {
        #[serde(default = "defaults::conv_latent")]
        latent: usize,
        #[serde(default = "defaults::conv_proj_hidden")]
        proj_hidden: usize,
        #[serde(default = "defaults::conv_latent")]
        proj_dim: usize,
    },
    Custom {
        encoder: Vec<LayerSpec>,
        #[serde(default)]
        projector: Vec<LayerSpec>,
    },
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig::Mlp {
            hidden: defaults::hidden(),
            latent: defaults::latent(),
            proj_hidden: defaults::proj_hidden(),
            proj_dim: defaults::proj_dim(),
        }
    }
}

impl ArchConfig {
    pub fn build(&self, input: (usize, usize, usize), num_classes: usize) -> ArchSpec {
        match self {
            ArchConfig::Mlp { hidden, latent, proj_hidden, proj_dim } => {
                ArchSpec::mlp(input, *hidden, *latent, *proj_hidden, *proj_dim, num_classes)
            }
            ArchConfig::SmallConv { latent, proj_hidden, proj_dim } => {
                ArchSpec::small_conv(input, *latent, *proj_hidden, *proj_dim, num_classes)
            }
            ArchConfig::Custom { encoder, projector } => ArchSpec {
                input,
                encoder: encoder.clone(),
                projector: projector.clone(),
                num_classes,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub ood: Option<OodSpec>,
    #[serde(default)]
    pub splits: SplitConfig,
    #[serde(default = "defaults::stages")]
    pub stages: usize,
    #[serde(default = "defaults::budget")]
    pub budget: usize,
    #[serde(default = "defaults::strategy")]
    pub strategy: Strategy,
    /// Stop once the labeled pool reaches this fraction of the training set.
    #[serde(default = "defaults::labeled_cap_fraction")]
    pub labeled_cap_fraction: f64,
    /// Keep ids the oracle rejected out of later selections.
    #[serde(default)]
    pub exclude_rejected: bool,
    /// Drop candidates whose outlier score exceeds this before selecting.
    #[serde(default)]
    pub ood_reject_threshold: Option<f64>,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentationConfig,
    #[serde(default)]
    pub weibull: WeibullFitConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
}

mod defaults {
    use crate::sampling::Strategy;

    pub fn num_classes() -> usize { 3 }
    pub fn dim() -> usize { 16 }
    pub fn per_class() -> usize { 100 }
    pub fn test_per_class() -> usize { 50 }
    pub fn noise_sigma() -> f64 { 0.1 }
    pub fn ood_name() -> String { "ood".into() }
    pub fn hidden() -> usize { 64 }
    pub fn latent() -> usize { 16 }
    pub fn proj_hidden() -> usize { 32 }
    pub fn proj_dim() -> usize { 16 }
    pub fn conv_latent() -> usize { 32 }
    pub fn conv_proj_hidden() -> usize { 64 }
    pub fn stages() -> usize { 5 }
    pub fn budget() -> usize { 20 }
    pub fn strategy() -> Strategy { Strategy::WeibullMax }
    pub fn labeled_cap_fraction() -> f64 { 0.4 }
    pub fn seeds() -> Vec<u64> { vec![0] }
}

impl ExperimentConfig {
    /// Parses JSON, reporting the key path of type errors and unknown keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 1 {
            return Err(Error::config("stages", "must be at least 1"));
        }
        if self.budget < 1 {
            return Err(Error::config("budget", "must be at least 1"));
        }
        if !(self.labeled_cap_fraction > 0.0 && self.labeled_cap_fraction <= 1.0) {
            return Err(Error::config("labeled_cap_fraction", "must lie in (0, 1]"));
        }
        if self.splits.initial_labeled < 2 {
            return Err(Error::config("splits.initial_labeled", "must be at least 2"));
        }
        if let Some(t) = self.ood_reject_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("ood_reject_threshold", "must lie in [0, 1]"));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if let DatasetSpec::SynthBlobs { num_classes, dim, per_class, test_per_class, .. } = &self.dataset {
            if *num_classes < 2 || *dim < 1 || *per_class < 1 || *test_per_class < 1 {
                return Err(Error::config("dataset", "synthetic blobs need >= 2 classes and positive sizes"));
            }
        }
        self.loss.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.weibull.validate()?;
        Ok(())
    }

    /// Reads `path` and resolves relative dataset paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Idx { train_images, train_labels, test_images, test_labels } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetSpec::Cifar { train_files, test_files } => {
                train_files.iter_mut().chain(test_files.iter_mut()).for_each(fix);
            }
            DatasetSpec::SynthBlobs { .. } => {}
        }
        if let Some(OodSpec::Idx { images, .. }) = &mut self.ood {
            fix(images);
        }
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON form.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}

/// Loaded samples with globally unique ids: train first, then test, then OOD.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub ood: Vec<Sample>,
    pub input: (usize, usize, usize),
    pub num_classes: usize,
}

pub fn load_dataset(spec: &DatasetSpec, ood: Option<&OodSpec>) -> Result<Dataset> {
    let (mut train, mut test, num_classes) = match spec {
        DatasetSpec::SynthBlobs { num_classes, dim, per_class, test_per_class, noise_sigma, seed } => {
            let means = random_class_means(*num_classes, *dim, *seed);
            let train = synth_blobs(*num_classes, *dim, *per_class, &means, *noise_sigma, *seed)?;
            let test = synth_blobs(*num_classes, *dim, *test_per_class, &means, *noise_sigma, seed.wrapping_add(1))?;
            (train, test, *num_classes)
        }
        DatasetSpec::Idx { train_images, train_labels, test_images, test_labels } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            let k = max_label(&train)? + 1;
            (train, test, k)
        }
        DatasetSpec::Cifar { train_files, test_files } => {
            let train = load_cifar_binary(train_files)?;
            let test = load_cifar_binary(test_files)?;
            let k = max_label(&train)? + 1;
            (train, test, k)
        }
    };
    let input = train
        .first()
        .map(|s| s.image.shape())
        .ok_or_else(|| Error::config("dataset", "training set is empty"))?;
    if let Some(s) = train.iter().chain(&test).find(|s| s.image.shape() != input) {
        return Err(Error::Consistency(format!("sample {} has shape {:?}, expected {input:?}", s.id, s.image.shape())));
    }
    if let Some(s) = test.iter().find(|s| s.label.is_none_or(|l| l >= num_classes)) {
        return Err(Error::Consistency(format!("test sample {} has label {:?} outside the training classes", s.id, s.label)));
    }
    assign_ids(&mut train, 0);
    assign_ids(&mut test, train.len());

    let mut ood_samples = match ood {
        None => Vec::new(),
        Some(OodSpec::SynthBlob { count, center, noise_sigma, name, seed }) => {
            let dim = input.0 * input.1 * input.2;
            let center = center.clone().unwrap_or_else(|| vec![0.95; dim]);
            if center.len() != dim {
                return Err(Error::config("ood.center", format!("expected {dim} values, got {}", center.len())));
            }
            if input.0 * input.1 != 1 {
                return Err(Error::config("ood.kind", "synth_blob OOD data only fits 1x1 vector datasets"));
            }
            synth_ood_blob(*count, &center, *noise_sigma, name, *seed)
        }
        Some(OodSpec::Idx { images, limit, name }) => {
            let mut s = load_idx_images(images, Origin::Ood(name.clone()))?;
            if let Some(n) = limit {
                s.truncate(*n);
            }
            s
        }
    };
    if let Some(s) = ood_samples.iter().find(|s| s.image.shape() != input) {
        return Err(Error::Consistency(format!("OOD sample {} has shape {:?}, expected {input:?}", s.id, s.image.shape())));
    }
    assign_ids(&mut ood_samples, train.len() + test.len());
    Ok(Dataset { train, test, ood: ood_samples, input, num_classes })
}

fn max_label(samples: &[Sample]) -> Result<usize> {
    samples
        .iter()
        .filter_map(|s| s.label)
        .max()
        .ok_or_else(|| Error::config("dataset", "training set has no labels"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"dataset": {"kind": "synth_blobs"}}"#).unwrap();
        assert_eq!(
            cfg.dataset,
            DatasetSpec::SynthBlobs { num_classes: 3, dim: 16, per_class: 100, test_per_class: 50, noise_sigma: 0.1, seed: 0 }
        );
        assert_eq!(cfg.loss.gamma, 0.001);
        assert_eq!(cfg.loss.lambda_bt, 0.005);
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.strategy, Strategy::WeibullMax);
        assert_eq!(cfg.labeled_cap_fraction, 0.4);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.arch, ArchConfig::default());
    }

    fn err(text: &str) -> (String, String) {
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { path, message }) => (path, message),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn batch_size_one_cites_requirement() {
        let (path, msg) = err(r#"{"dataset": {"kind": "synth_blobs"}, "train": {"batch_size": 1}}"#);
        assert_eq!(path, "train.batch_size");
        assert!(msg.contains("B >= 2"), "{msg}");
    }

    #[test]
    fn unknown_and_mistyped_keys_carry_paths() {
        let (path, _) = err(r#"{"dataset": {"kind": "synth_blobs"}, "train": {"epochz": 3}}"#);
        assert_eq!(path, "train.epochz");
        let (path, _) = err(r#"{"dataset": {"kind": "synth_blobs"}, "loss": {"gamma": "big"}}"#);
        assert_eq!(path, "loss.gamma");
        let (path, _) = err(r#"{"dataset": {"kind": "synth_blobs"}, "extra": 1}"#);
        assert_eq!(path, "extra");
        let (path, _) = err(r#"{"dataset": {"kind": "synth_blobs"}, "stages": 0}"#);
        assert_eq!(path, "stages");
    }

    #[test]
    fn hash_ignores_key_order() {
        let a = ExperimentConfig::from_json(r#"{"budget": 7, "dataset": {"kind": "synth_blobs", "dim": 4}}"#).unwrap();
        let b = ExperimentConfig::from_json(r#"{"dataset": {"dim": 4, "kind": "synth_blobs"}, "budget": 7}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_json(r#"{"budget": 8, "dataset": {"kind": "synth_blobs", "dim": 4}}"#).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "synth_blobs"}, "ood": {"kind": "synth_blob", "count": 30},
                "arch": {"kind": "custom", "encoder": [{"type": "dense", "units": 5}, {"type": "tanh"}]}}"#,
        )
        .unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn synth_dataset_ids_are_disjoint() {
        let cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "synth_blobs", "per_class": 10, "test_per_class": 4}, "ood": {"kind": "synth_blob", "count": 6}}"#,
        )
        .unwrap();
        let ds = load_dataset(&cfg.dataset, cfg.ood.as_ref()).unwrap();
        assert_eq!((ds.train.len(), ds.test.len(), ds.ood.len()), (30, 12, 6));
        let ids: Vec<usize> = ds.train.iter().chain(&ds.test).chain(&ds.ood).map(|s| s.id).collect();
        assert_eq!(ids, (0..48).collect::<Vec<_>>());
        assert_eq!(ds.input, (1, 1, 16));
        assert!(ds.ood.iter().all(|s| !s.origin.is_in_dist()));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"kind": "idx", "train_images": "a", "train_labels": "/abs/b", "test_images": "c", "test_labels": "d"}}"#,
        )
        .unwrap();
        cfg.resolve_paths(Path::new("/cfg"));
        match cfg.dataset {
            DatasetSpec::Idx { train_images, train_labels, .. } => {
                assert_eq!(train_images, PathBuf::from("/cfg/a"));
                assert_eq!(train_labels, PathBuf::from("/abs/b"));
            }
            _ => unreachable!(),
        }
    }
}
