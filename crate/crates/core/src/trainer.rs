//! Stochastic training with transformed gradients.
//!
//! Each step computes the per-sentence gradient `g = E[Phi] - Phi(x, y)`,
//! maps every nonzero coordinate through the configured [`Transform`] and
//! applies the L2-regularized update
//!
//! ```text
//! theta <- (1 - c * lr) * theta - lr * s(g)
//! ```
//!
//! with `theta = z * w` stored lazily: only the coordinates of `w` in the
//! support of `g` are written, and the shrinkage lands on the scalar `z`.
//!
//! The learning rate decays as `lr_t = 1 / (lambda_hat * (1 + lambda_hat * c * t))`,
//! where `lambda_hat` is picked by trial passes over a prefix of the
//! (shuffled) training data.
//!
//! `TrainConfig::c` is the strength of `(C / 2) * |theta|^2` added to the
//! *summed* negative log-likelihood of the training set, so each of the `N`
//! per-sentence steps uses `c = C / N`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain_crf::ChainModel;
use crate::corpus::{Dataset, Sentence};
use crate::error::{Error, Result};
use crate::eval::{ChunkCounts, ChunkMetrics};
use crate::features::{FeatureIndex, Instance, SparseVector};
use crate::transforms::{Transform, TransformKind, TransformSpec};

pub const DEFAULT_CALIBRATION_GRID: [f64; 8] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

// Below this the scale is folded back into the weights to avoid underflow.
const MIN_SCALE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub update: TransformSpec,
    /// L2 strength on the whole-corpus objective.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    pub calibration_size: usize,
    pub calibration_grid: Vec<f64>,
    /// Score calibration candidates by regularized (default) or plain NLL.
    pub calibrate_regularized: bool,
    /// Skip calibration and use this base rate.
    pub lambda_hat: Option<f64>,
    /// Stop after this many consecutive epochs whose train F1 improves on
    /// the best so far by less than `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    pub reshuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            update: TransformSpec::identity(),
            c: 1.0,
            epochs: 50,
            seed: 0,
            calibration_size: 1000,
            calibration_grid: DEFAULT_CALIBRATION_GRID.to_vec(),
            calibrate_regularized: true,
            lambda_hat: None,
            patience: 3,
            min_delta: 1e-4,
            reshuffle_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        self.update.validate()?;
        if !(self.c.is_finite() && self.c >= 0.0) {
            return bad("C must be a finite value >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.calibration_size == 0 {
            return bad("calibration size must be >= 1");
        }
        if self.lambda_hat.is_none() && self.calibration_grid.is_empty() {
            return bad("calibration grid is empty");
        }
        if self
            .calibration_grid
            .iter()
            .chain(&self.lambda_hat)
            .any(|&l| !(l.is_finite() && l > 0.0))
        {
            return bad("base rates must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return bad("min_delta must be >= 0");
        }
        Ok(())
    }
}

/// `1 / (lambda_hat * (1 + lambda_hat * c * t))`.
#[inline]
pub fn learning_rate(lambda_hat: f64, c: f64, t: u64) -> f64 {
    1.0 / (lambda_hat * (1.0 + lambda_hat * c * t as f64))
}

/// Applies `theta <- (1 - c * lr) * theta - lr * step` to `theta = scale * weights`,
/// writing only the coordinates present in `step`.
pub fn scaled_update(weights: &mut [f64], scale: &mut f64, step: &SparseVector, lr: f64, c: f64) -> Result<()> {
    let shrink = 1.0 - c * lr;
    if shrink <= 0.0 {
        return Err(Error::StepTooLarge(shrink));
    }
    let factor = lr / (shrink * *scale);
    for (i, s) in step.iter() {
        weights[i as usize] -= factor * s;
    }
    *scale *= shrink;
    if *scale < MIN_SCALE {
        let z = *scale;
        weights.iter_mut().for_each(|w| *w *= z);
        *scale = 1.0;
    }
    Ok(())
}

/// Step counter, base rate and the model being trained. The scale factor
/// `z` is the model's own scale.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub t: u64,
    pub lambda_hat: f64,
    pub model: ChainModel,
}

impl TrainState {
    pub fn new(model: ChainModel, lambda_hat: f64) -> Self {
        TrainState {
            t: 0,
            lambda_hat,
            model,
        }
    }

    pub fn learning_rate(&self, c: f64) -> f64 {
        learning_rate(self.lambda_hat, c, self.t)
    }

    /// One stochastic step on a sentence; returns its NLL before the step.
    pub fn update_step(&mut self, inst: &Instance, labels: &[usize], transform: &Transform, c: f64) -> Result<f64> {
        let lr = self.learning_rate(c);
        if 1.0 - c * lr <= 0.0 {
            return Err(Error::StepTooLarge(1.0 - c * lr));
        }
        let (grad, nll) = self.model.gradient_ids(inst, labels);
        if !nll.is_finite() {
            return Err(Error::Diverged(self.t));
        }
        let step = if transform.kind() == TransformKind::Identity && transform.table_step().is_none() {
            grad
        } else {
            SparseVector::from_pairs(grad.iter().map(|(i, g)| (i, transform.eval(g))).collect())
        };
        let mut scale = self.model.scale();
        scaled_update(self.model.weights_mut(), &mut scale, &step, lr, c)?;
        self.model.set_scale(scale);
        self.t += 1;
        Ok(nll)
    }
}

/// A sentence compiled against the dictionary, with gold label ids when all
/// of its tags are known to the model.
#[derive(Debug, Clone)]
pub struct Example {
    pub instance: Instance,
    pub gold: Option<Vec<usize>>,
    pub tags: Vec<String>,
}

pub fn compile(index: &FeatureIndex, sentences: &[Sentence]) -> Vec<Example> {
    sentences
        .par_iter()
        .map(|s| {
            let tags: Vec<String> = s.chunks().into_iter().map(str::to_string).collect();
            Example {
                instance: index.compile(s),
                gold: index.labels().encode(&tags).ok(),
                tags,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    pub chunks: ChunkMetrics,
    pub token_accuracy: f64,
    /// Mean NLL over sentences whose tags are all known to the model.
    pub mean_nll: f64,
}

/// Viterbi decoding, chunk scores and mean NLL for a compiled split.
pub fn evaluate(model: &ChainModel, examples: &[Example]) -> SplitMetrics {
    let per_sentence: Vec<(ChunkCounts, usize, usize, Option<f64>)> = examples
        .par_iter()
        .map(|ex| {
            let pred: Vec<&str> = model
                .viterbi_ids(&ex.instance)
                .into_iter()
                .map(|y| model.labels().name(y))
                .collect();
            let counts = ChunkCounts::of_sentence(&pred, &ex.tags).expect("same length");
            let correct = pred.iter().zip(&ex.tags).filter(|(p, g)| **p == g.as_str()).count();
            let nll = ex.gold.as_ref().map(|g| -model.log_likelihood_ids(&ex.instance, g));
            (counts, correct, pred.len(), nll)
        })
        .collect();
    let mut counts = ChunkCounts::default();
    let (mut correct, mut total, mut nll_sum, mut nll_n) = (0, 0, 0.0, 0usize);
    for (c, ok, n, nll) in per_sentence {
        counts += c;
        correct += ok;
        total += n;
        if let Some(v) = nll {
            nll_sum += v;
            nll_n += 1;
        }
    }
    SplitMetrics {
        chunks: counts.metrics(),
        token_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        mean_nll: if nll_n == 0 { f64::NAN } else { nll_sum / nll_n as f64 },
    }
}

/// Average of the per-sentence gradients `E[Phi] - Phi(x, y)` over a
/// dataset. Zero exactly at a maximum-likelihood point.
pub fn mean_gradient(model: &ChainModel, examples: &[Example]) -> SparseVector {
    let grads: Vec<SparseVector> = examples
        .par_iter()
        .filter_map(|ex| ex.gold.as_ref().map(|g| model.gradient_ids(&ex.instance, g).0))
        .collect();
    let n = grads.len().max(1) as f64;
    let mut dense = vec![0.0; model.dim()];
    for g in &grads {
        for (i, v) in g.iter() {
            dense[i as usize] += v;
        }
    }
    SparseVector::from_pairs(
        dense
            .into_iter()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .map(|(i, v)| (i as u32, v / n))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub lambda_hat: f64,
    /// `(candidate, loss)`; `None` when the trial pass diverged.
    pub candidates: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: SplitMetrics,
    pub test: Option<SplitMetrics>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub const HEADER: [&'static str; 7] = [
        "epoch",
        "split",
        "precision",
        "recall",
        "f1",
        "mean_nll",
        "wall_seconds",
    ];

    /// Writes one row per (epoch, split). With `timing == false` the
    /// wall-clock column is written as zero so output is reproducible.
    pub fn write_csv<W: Write>(&self, out: W, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for r in &self.records {
            let splits = [("train", Some(&r.train)), ("test", r.test.as_ref())];
            for (name, m) in splits {
                let Some(m) = m else { continue };
                let secs = if timing { r.wall_seconds } else { 0.0 };
                w.write_record([
                    r.epoch.to_string(),
                    name.to_string(),
                    format!("{:.10}", m.chunks.precision),
                    format!("{:.10}", m.chunks.recall),
                    format!("{:.10}", m.chunks.f1),
                    format!("{:.10}", m.mean_nll),
                    format!("{secs:.3}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    /// Unscaled model (scale folded in).
    pub model: ChainModel,
    pub metrics: MetricsLog,
    pub lambda_hat: f64,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    transform: Transform,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let transform = Transform::new(config.update)?;
        Ok(Trainer { config, transform })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    fn step_c(&self, n: usize) -> f64 {
        self.config.c / n as f64
    }

    /// Picks the base rate with the lowest loss after one pass over the
    /// first `calibration_size` sentences of the shuffled training data.
    pub fn calibrate(&self, train: &Dataset, index: &Arc<FeatureIndex>) -> Result<Calibration> {
        let subset = train.shuffle(self.config.seed).head(self.config.calibration_size)?;
        let examples = compile(index, subset.sentences());
        self.calibrate_compiled(&examples, index, self.step_c(train.len()))
    }

    fn calibrate_compiled(&self, examples: &[Example], index: &Arc<FeatureIndex>, c: f64) -> Result<Calibration> {
        let candidates: Vec<(f64, Option<f64>)> = self
            .config
            .calibration_grid
            .iter()
            .map(|&lambda_hat| {
                let loss = self.trial_loss(examples, index, c, lambda_hat);
                debug!("calibration: lambda_hat={lambda_hat} loss={loss:?}");
                (lambda_hat, loss)
            })
            .collect();
        let best =
            candidates
                .iter()
                .filter_map(|&(l, loss)| loss.map(|v| (l, v)))
                .fold(None::<(f64, f64)>, |best, (l, v)| match best {
                    Some((_, bv)) if bv <= v => best,
                    _ => Some((l, v)),
                });
        match best {
            Some((lambda_hat, _)) => Ok(Calibration { lambda_hat, candidates }),
            None => Err(Error::CalibrationFailed),
        }
    }

    fn trial_loss(&self, examples: &[Example], index: &Arc<FeatureIndex>, c: f64, lambda_hat: f64) -> Option<f64> {
        let mut state = TrainState::new(ChainModel::new(index.clone()), lambda_hat);
        for ex in examples {
            let gold = ex.gold.as_ref()?;
            state.update_step(&ex.instance, gold, &self.transform, c).ok()?;
        }
        let model = &state.model;
        let nll: f64 = examples
            .par_iter()
            .map(|ex| -model.log_likelihood_ids(&ex.instance, ex.gold.as_ref().expect("checked")))
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let mut loss = nll / examples.len() as f64;
        if self.config.calibrate_regularized {
            loss += 0.5 * c * model.squared_norm();
        }
        loss.is_finite().then_some(loss)
    }

    pub fn train(&self, train: &Dataset, index: Arc<FeatureIndex>, test: Option<&Dataset>) -> Result<Trained> {
        let shuffled = train.shuffle(self.config.seed);
        let examples = compile(&index, shuffled.sentences());
        let test_examples = test.map(|t| compile(&index, t.sentences()));
        let c = self.step_c(train.len());

        let lambda_hat = match self.config.lambda_hat {
            Some(l) => l,
            None => {
                let n = self.config.calibration_size.min(examples.len());
                let cal = self.calibrate_compiled(&examples[..n], &index, c)?;
                info!("calibrated lambda_hat = {}", cal.lambda_hat);
                cal.lambda_hat
            }
        };

        let mut state = TrainState::new(ChainModel::new(index), lambda_hat);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_5eed);
        let mut log = MetricsLog::default();
        let mut best_f1 = f64::NEG_INFINITY;
        let mut stale = 0;
        let started = Instant::now();

        for epoch in 1..=self.config.epochs {
            if epoch > 1 && self.config.reshuffle_each_epoch {
                order.shuffle(&mut rng);
            }
            for &k in &order {
                let ex = &examples[k];
                let gold = ex.gold.as_ref().expect("training labels are in the alphabet");
                state.update_step(&ex.instance, gold, &self.transform, c)?;
            }
            let train_metrics = evaluate(&state.model, &examples);
            let test_metrics = test_examples.as_ref().map(|t| evaluate(&state.model, t));
            let record = EpochRecord {
                epoch,
                train: train_metrics,
                test: test_metrics,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            info!(
                "epoch {epoch}: train f1={:.4} nll={:.4}{} lr={:.3e} z={:.3e}",
                train_metrics.chunks.f1,
                train_metrics.mean_nll,
                test_metrics.map_or(String::new(), |m| format!(" test f1={:.4}", m.chunks.f1)),
                state.learning_rate(c),
                state.model.scale(),
            );
            log.records.push(record);

            let f1 = train_metrics.chunks.f1;
            if f1 - best_f1 < self.config.min_delta {
                stale += 1;
            } else {
                stale = 0;
            }
            best_f1 = best_f1.max(f1);
            if stale >= self.config.patience {
                info!("no train F1 improvement for {stale} epochs, stopping");
                break;
            }
        }

        let steps = state.t;
        let mut model = state.model;
        model.unscale();
        Ok(Trained {
            model,
            metrics: log,
            lambda_hat,
            steps,
        })
    }
}
