//! Training options: command-line flags layered over an optional TOML file.

use std::path::{Path, PathBuf};

use anyhow::Context;
use bcrf::features::TemplateSet;
use bcrf::trainer::{TrainConfig, DEFAULT_CALIBRATION_GRID};
use bcrf::transforms::{TableSpec, TransformKind, TransformSpec, DEFAULT_TABLE_RANGE, DEFAULT_TABLE_RESOLUTION};
use clap::Args;
use serde::Deserialize;

use crate::UsageError;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 8.8623;
pub const DEFAULT_BETA: f64 = 10.0;

/// Options shared by `calibrate` and `train`. Every field is optional so
/// that a flag can be told apart from a value coming from `--config`.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainOptions {
    /// TOML file with any of these options (kebab-case keys); flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Training data, 3-column CoNLL (optionally .gz).
    #[arg(long)]
    pub train: Option<PathBuf>,

    /// Held-out data evaluated after every epoch.
    #[arg(long)]
    pub test: Option<PathBuf>,

    /// Feature templates: small or large [default: small].
    #[arg(long)]
    pub templates: Option<String>,

    /// Gradient transform: sgd, u1g1, u2g1, u2g2 or u2g3 [default: sgd].
    #[arg(long)]
    pub update: Option<String>,

    /// Epsilon for u1g1 and u2g1 [default: 0.1].
    #[arg(long)]
    pub epsilon: Option<f64>,

    /// Alpha for u2g2 [default: 8.8623].
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Beta for u2g3 [default: 10].
    #[arg(long)]
    pub beta: Option<f64>,

    /// L2 regularization strength [default: 1].
    #[arg(long = "C")]
    #[serde(rename = "C")]
    pub c: Option<f64>,

    /// Maximum number of epochs [default: 50].
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Shuffling seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,

    /// Sentences used to calibrate the base rate [default: 1000].
    #[arg(long)]
    pub calibration_size: Option<usize>,

    /// Comma-separated candidate base rates [default: 0.5,1,2,4,8,16,32,64].
    #[arg(long, value_delimiter = ',')]
    pub calibration_grid: Option<Vec<f64>>,

    /// Score calibration candidates on NLL alone, without the L2 term.
    #[arg(long)]
    #[serde(default)]
    pub calibrate_unregularized: bool,

    /// Skip calibration and use this base rate.
    #[arg(long)]
    pub lambda_hat: Option<f64>,

    /// Epochs without a train-F1 gain of at least --min-delta before stopping [default: 3].
    #[arg(long)]
    pub patience: Option<usize>,

    /// [default: 1e-4]
    #[arg(long)]
    pub min_delta: Option<f64>,

    /// Reshuffle the training data before every epoch after the first.
    #[arg(long)]
    #[serde(default)]
    pub reshuffle_each_epoch: bool,

    /// Evaluate the transform through a precomputed lookup table.
    #[arg(long)]
    #[serde(default)]
    pub lookup_table: bool,

    /// [default: 4096]
    #[arg(long)]
    pub table_resolution: Option<u32>,

    /// Half-width of the tabulated interval [default: 1].
    #[arg(long)]
    pub table_range: Option<f64>,

    /// Reject I-X tags that do not continue an X chunk.
    #[arg(long)]
    #[serde(default)]
    pub strict: bool,
}

impl TrainOptions {
    /// Fills unset options from `--config`, if given.
    pub fn resolve(self) -> anyhow::Result<TrainOptions> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = read_file(&path)?;
        Ok(TrainOptions {
            config: self.config,
            train: self.train.or(file.train),
            test: self.test.or(file.test),
            templates: self.templates.or(file.templates),
            update: self.update.or(file.update),
            epsilon: self.epsilon.or(file.epsilon),
            alpha: self.alpha.or(file.alpha),
            beta: self.beta.or(file.beta),
            c: self.c.or(file.c),
            epochs: self.epochs.or(file.epochs),
            seed: self.seed.or(file.seed),
            calibration_size: self.calibration_size.or(file.calibration_size),
            calibration_grid: self.calibration_grid.or(file.calibration_grid),
            calibrate_unregularized: self.calibrate_unregularized || file.calibrate_unregularized,
            lambda_hat: self.lambda_hat.or(file.lambda_hat),
            patience: self.patience.or(file.patience),
            min_delta: self.min_delta.or(file.min_delta),
            reshuffle_each_epoch: self.reshuffle_each_epoch || file.reshuffle_each_epoch,
            lookup_table: self.lookup_table || file.lookup_table,
            table_resolution: self.table_resolution.or(file.table_resolution),
            table_range: self.table_range.or(file.table_range),
            strict: self.strict || file.strict,
        })
    }

    pub fn train_path(&self) -> anyhow::Result<&Path> {
        self.train
            .as_deref()
            .ok_or_else(|| UsageError("--train is required (as a flag or in --config)".into()).into())
    }

    pub fn templates(&self) -> anyhow::Result<TemplateSet> {
        usage(self.templates.as_deref().unwrap_or("small").parse())
    }

    pub fn update(&self) -> anyhow::Result<TransformSpec> {
        let kind: TransformKind = usage(self.update.as_deref().unwrap_or("sgd").parse())?;
        let hyper = match kind {
            TransformKind::Identity => 0.0,
            TransformKind::RationalG1 | TransformKind::ArctanG1 => self.epsilon.unwrap_or(DEFAULT_EPSILON),
            TransformKind::ErfG2 => self.alpha.unwrap_or(DEFAULT_ALPHA),
            TransformKind::GdG3 => self.beta.unwrap_or(DEFAULT_BETA),
        };
        let mut spec = TransformSpec::new(kind, hyper);
        if self.lookup_table {
            spec = spec.with_table(TableSpec {
                resolution: self.table_resolution.unwrap_or(DEFAULT_TABLE_RESOLUTION),
                range: self.table_range.unwrap_or(DEFAULT_TABLE_RANGE),
            });
        }
        usage(spec.validate())?;
        Ok(spec)
    }

    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let defaults = TrainConfig::default();
        let config = TrainConfig {
            update: self.update()?,
            c: self.c.unwrap_or(defaults.c),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            seed: self.seed.unwrap_or(defaults.seed),
            calibration_size: self.calibration_size.unwrap_or(defaults.calibration_size),
            calibration_grid: self
                .calibration_grid
                .clone()
                .unwrap_or_else(|| DEFAULT_CALIBRATION_GRID.to_vec()),
            calibrate_regularized: !self.calibrate_unregularized,
            lambda_hat: self.lambda_hat,
            patience: self.patience.unwrap_or(defaults.patience),
            min_delta: self.min_delta.unwrap_or(defaults.min_delta),
            reshuffle_each_epoch: self.reshuffle_each_epoch,
        };
        usage(config.validate())?;
        Ok(config)
    }
}

fn usage<T>(r: bcrf::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| UsageError(e.to_string()).into())
}

fn read_file(path: &Path) -> anyhow::Result<TrainOptions> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}
