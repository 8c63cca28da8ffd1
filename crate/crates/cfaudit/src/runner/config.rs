//! Experiment configuration: one struct covering data generation, generator
//! training, the classifier pool, the invariance test, the interventional
//! oracle, and output plumbing. Loaded from TOML; unknown keys are a hard
//! error. Every key is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::citest::CitConfig;
use crate::generative::BundleConfig;
use crate::scm::eca::EcaParams;
use crate::scm::Variant;
use crate::store::sha256_hex;
use crate::zoo::Family;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Outcome variants to sweep, by name.
    pub datasets: Vec<String>,
    /// Causal chain length n.
    pub chain_len: usize,
    /// Feature dimension k.
    pub feature_dim: usize,
    /// Structural noise scale σ.
    pub noise_scale: f64,
    /// Attribute prior π_A shared by every dataset.
    pub attr_prior: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Classifier families in the pool, by name.
    pub families: Vec<String>,
    /// Training seeds per family; the pool is the cross product.
    pub zoo_seeds: Vec<u64>,
    /// Generator hyperparameters.
    pub generative: BundleConfig,
    /// Invariance-test hyperparameters.
    pub cit: CitConfig,
    /// Interventional-oracle sampling budget.
    pub eca: EcaParams,
    pub out_dir: PathBuf,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Worker threads for per-classifier stages.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

impl ExperimentConfig {
    /// Small profile: 3 datasets, k = 8, 4 families x 10 seeds. Sized to
    /// finish on a single core within half an hour.
    pub fn desk() -> Self {
        ExperimentConfig {
            datasets: vec!["linear".into(), "quadratic".into(), "sin".into()],
            chain_len: 3,
            feature_dim: 8,
            noise_scale: 0.01,
            attr_prior: 0.3,
            n_train: 2000,
            n_test: 500,
            families: vec![
                "logistic".into(),
                "rff-rbf-svm".into(),
                "tree-depth5".into(),
                "mlp-16-4".into(),
            ],
            zoo_seeds: (0..10).collect(),
            generative: BundleConfig::default(),
            cit: CitConfig::default(),
            eca: EcaParams::default(),
            out_dir: PathBuf::from("out/desk"),
            seed: 0,
            workers: 1,
        }
    }

    /// Full profile: all six datasets, k = 32, the whole ten-family pool.
    pub fn paper() -> Self {
        ExperimentConfig {
            datasets: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            chain_len: 3,
            feature_dim: 32,
            noise_scale: 0.01,
            attr_prior: 0.3,
            n_train: 20_000,
            n_test: 2000,
            families: Family::ALL.iter().map(|f| f.name().to_string()).collect(),
            zoo_seeds: (0..10).collect(),
            generative: BundleConfig::default(),
            cit: CitConfig::default(),
            eca: EcaParams::default(),
            out_dir: PathBuf::from("out/paper"),
            seed: 0,
            workers: 1,
        }
    }

    pub fn from_profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(ExperimentConfig::desk()),
            "paper" => Ok(ExperimentConfig::paper()),
            other => Err(Error::Config(format!(
                "unknown profile `{other}`; expected `desk` or `paper`"
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        ExperimentConfig::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Outcome variants, resolved and order-preserving.
    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.datasets.iter().map(|n| Variant::from_name(n)).collect()
    }

    /// Classifier families, resolved and order-preserving.
    pub fn family_list(&self) -> Result<Vec<Family>> {
        self.families.iter().map(|n| Family::from_name(n)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let variants = self.variants()?;
        if variants.is_empty() {
            return Err(Error::Config("datasets list is empty".into()));
        }
        for (i, v) in variants.iter().enumerate() {
            if variants[..i].contains(v) {
                return Err(Error::Config(format!(
                    "dataset `{}` listed more than once",
                    v.name()
                )));
            }
        }
        let families = self.family_list()?;
        if families.is_empty() {
            return Err(Error::Config("families list is empty".into()));
        }
        for (i, f) in families.iter().enumerate() {
            if families[..i].contains(f) {
                return Err(Error::Config(format!(
                    "family `{}` listed more than once",
                    f.name()
                )));
            }
        }
        if self.zoo_seeds.is_empty() {
            return Err(Error::Config("zoo_seeds list is empty".into()));
        }
        for (i, s) in self.zoo_seeds.iter().enumerate() {
            if self.zoo_seeds[..i].contains(s) {
                return Err(Error::Config(format!("zoo seed {s} listed more than once")));
            }
        }
        if self.chain_len < 1 {
            return Err(Error::Config("chain_len must be >= 1".into()));
        }
        if self.feature_dim < 1 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!(
                "noise_scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        if !(self.attr_prior > 0.0 && self.attr_prior < 1.0) {
            return Err(Error::Config(format!(
                "attr_prior {} outside (0, 1)",
                self.attr_prior
            )));
        }
        if self.n_train < 2 {
            return Err(Error::Config("n_train must be >= 2".into()));
        }
        if self.n_test < 8 {
            return Err(Error::Config(
                "n_test must be >= 8 (the invariance test refuses fewer rows)".into(),
            ));
        }
        if self.workers < 1 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.cit.validate()?;
        if let Some(p) = self.generative.attr_prior {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!(
                    "generative.attr_prior {p} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }

    /// Content hash of the full configuration; gate for resuming a sweep.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        sha256_hex(&[text.as_bytes()])
    }

    /// Generator settings with the attribute prior defaulted to the known
    /// simulation prior when the config leaves it unset.
    pub fn bundle_config(&self) -> BundleConfig {
        let mut cfg = self.generative.clone();
        if cfg.attr_prior.is_none() {
            cfg.attr_prior = Some(self.attr_prior);
        }
        cfg
    }
}
