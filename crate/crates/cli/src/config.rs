//! JSON run configuration: strict schema (unknown keys rejected), defaults
//! for the training and evaluation sections, and validation helpers shared
//! by every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smoothmil_core::data::SynthSpec;
use smoothmil_core::model::{BagTransform, ModelVariant, PosteriorKind};
use smoothmil_core::objective::LambdaPolicy;
use smoothmil_core::train::TrainConfig;
use smoothmil_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelVariant,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    /// Extra bag-transform x posterior combinations for `ablate`; the
    /// configured model's own combination is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<VariantCombo>>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSection {
    /// Generate bags in memory from a spec (seeded per run).
    Synthetic(SynthSpec),
    /// Load a dataset written earlier; the path is resolved relative to the
    /// config file's directory when not absolute.
    Manifest(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantCombo {
    pub bag_transform: BagTransform,
    pub posterior: PosteriorKind,
}

/// A λ value as written in config: a non-negative number or `"cyclical"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Value(f64),
    Name(String),
}

impl LambdaSpec {
    pub fn to_policy(&self) -> Result<LambdaPolicy> {
        match self {
            LambdaSpec::Value(v) => {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "lambda must be finite and non-negative, got {}",
                        v
                    )));
                }
                Ok(LambdaPolicy::Constant(*v))
            }
            LambdaSpec::Name(name) if name == "cyclical" => Ok(LambdaPolicy::Cyclical),
            LambdaSpec::Name(name) => Err(Error::InvalidConfig(format!(
                "unknown lambda policy {:?}; use a number or \"cyclical\"",
                name
            ))),
        }
    }

    /// Directory- and table-friendly label ("0.1", "cyclical").
    pub fn slug(&self) -> String {
        match self {
            LambdaSpec::Value(v) => format!("{}", v),
            LambdaSpec::Name(name) => name.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// Single policy, used by `train`, `eval`, and `export-maps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaSpec>,
    /// Policy grid for `ablate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<LambdaSpec>>,
}

impl ObjectiveSection {
    pub fn single(&self) -> Result<LambdaPolicy> {
        match &self.lambda {
            Some(spec) => spec.to_policy(),
            None => Err(Error::InvalidConfig(
                "objective.lambda is required for this command".into(),
            )),
        }
    }

    /// The validated grid: non-empty, each entry valid, no duplicates.
    pub fn grid(&self) -> Result<Vec<LambdaSpec>> {
        let grid = self
            .lambda_grid
            .clone()
            .or_else(|| self.lambda.clone().map(|l| vec![l]))
            .ok_or_else(|| {
                Error::InvalidConfig(
                    "objective.lambda_grid (or objective.lambda) is required for ablate".into(),
                )
            })?;
        if grid.is_empty() {
            return Err(Error::InvalidConfig("objective.lambda_grid is empty".into()));
        }
        for spec in &grid {
            spec.to_policy()?;
        }
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                if grid[i] == grid[j] {
                    return Err(Error::InvalidConfig(format!(
                        "duplicate lambda entry {} in objective.lambda_grid",
                        grid[i].slug()
                    )));
                }
            }
        }
        Ok(grid)
    }
}

fn default_epochs() -> usize {
    100
}
fn default_base_lr() -> f64 {
    1e-4
}
fn default_batch_size() -> usize {
    8
}
fn default_predict_samples() -> usize {
    100
}
fn default_start_factor() -> f64 {
    0.1
}
fn default_total_iters() -> usize {
    10
}
fn default_f1_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarmupSection {
    #[serde(default = "default_start_factor")]
    pub start_factor: f64,
    #[serde(default = "default_total_iters")]
    pub total_iters: usize,
}

impl Default for WarmupSection {
    fn default() -> Self {
        WarmupSection {
            start_factor: default_start_factor(),
            total_iters: default_total_iters(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default)]
    pub warmup: WarmupSection,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Monte-Carlo samples per bag for validation scoring during training.
    #[serde(default = "default_predict_samples")]
    pub predict_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: default_epochs(),
            base_lr: default_base_lr(),
            warmup: WarmupSection::default(),
            batch_size: default_batch_size(),
            predict_samples: default_predict_samples(),
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, lambda: LambdaPolicy) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            base_lr: self.base_lr,
            warmup_start_factor: self.warmup.start_factor,
            warmup_total_iters: self.warmup.total_iters,
            batch_size: self.batch_size,
            predict_samples: self.predict_samples,
            lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Monte-Carlo samples per bag for test/report scoring.
    #[serde(default = "default_predict_samples")]
    pub predict_samples: usize,
    #[serde(default = "default_f1_threshold")]
    pub f1_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            predict_samples: default_predict_samples(),
            f1_threshold: default_f1_threshold(),
        }
    }
}

impl RunConfig {
    /// Loads and structurally validates a config file. `--seed` replaces the
    /// seed list wholesale.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {}", path.display(), e))
        })?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e)))?;
        if let Some(seed) = seed_override {
            config.seeds = vec![seed];
        }
        config.validate()?;
        // resolve the manifest path against the config file's directory so
        // the run.json echo is reproducible from anywhere
        if let DataSection::Manifest(manifest) = &mut config.data {
            if manifest.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                *manifest = base.join(&*manifest);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let DataSection::Synthetic(spec) = &self.data {
            spec.validate()?;
            if spec.feature_dim != self.model.input_dim {
                return Err(Error::InvalidConfig(format!(
                    "synthetic feature_dim {} does not match model input_dim {}",
                    spec.feature_dim, self.model.input_dim
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds contain duplicates".into()));
        }
        if !(self.eval.f1_threshold.is_finite()
            && self.eval.f1_threshold > 0.0
            && self.eval.f1_threshold < 1.0)
        {
            return Err(Error::InvalidConfig(
                "eval.f1_threshold must lie strictly between 0 and 1".into(),
            ));
        }
        if self.eval.predict_samples == 0 {
            return Err(Error::InvalidConfig(
                "eval.predict_samples must be >= 1".into(),
            ));
        }
        if let Some(combos) = &self.variants {
            if combos.is_empty() {
                return Err(Error::InvalidConfig("variants list is empty".into()));
            }
            for i in 0..combos.len() {
                for j in i + 1..combos.len() {
                    if combos[i] == combos[j] {
                        return Err(Error::InvalidConfig(
                            "variants contain duplicates".into(),
                        ));
                    }
                }
            }
        }
        // structural check on the training section (full check happens when
        // a TrainConfig is built with a concrete lambda)
        self.train
            .to_train_config(LambdaPolicy::Constant(0.0))
            .validate()?;
        Ok(())
    }

    /// The bag-transform x posterior combinations `ablate` crosses with the
    /// λ grid.
    pub fn variant_combos(&self) -> Vec<VariantCombo> {
        self.variants.clone().unwrap_or_else(|| {
            vec![VariantCombo {
                bag_transform: self.model.bag_transform,
                posterior: self.model.posterior,
            }]
        })
    }

    /// The configured model dims with a combo's transform and posterior.
    pub fn variant_for(&self, combo: VariantCombo) -> ModelVariant {
        ModelVariant {
            bag_transform: combo.bag_transform,
            posterior: combo.posterior,
            ..self.model
        }
    }
}

/// Label used in directory names and the ablation table.
pub fn combo_slug(combo: VariantCombo) -> String {
    let transform = match combo.bag_transform {
        BagTransform::Abmil => "abmil",
        BagTransform::TAbmil => "t-abmil",
    };
    let posterior = match combo.posterior {
        PosteriorKind::DiracDelta => "dirac",
        PosteriorKind::DiagGaussian => "gaussian",
    };
    format!("{}-{}", transform, posterior)
}
