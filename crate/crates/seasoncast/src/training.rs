//! Training: loss functions, chronological splitting, and the minibatch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Sample;
use crate::model::{Forecast, LrlSnn, OutputMode};
use crate::nn::{clip_global_norm, AdamConfig, AdamState};
use crate::time::WeekIndex;

/// Gradients are rescaled to this global L2 norm when they exceed it; retail
/// series spike and an occasional huge batch gradient must not abort a run.
pub const GRAD_CLIP_NORM: f64 = 10.0;

/// Training objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    /// Point forecast, mean squared error.
    Mse,
    /// Quantile forecast, pinball loss at each listed quantile.
    Pinball(Vec<f64>),
}

/// Optimizer-facing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            minibatch_size: 32,
            learning_rate: 1e-3,
            seed: 7,
            loss: LossKind::Mse,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidConfig("minibatch size must be >= 1".into()));
        }
        if let LossKind::Pinball(qs) = &self.loss {
            for q in qs {
                if !(*q > 0.0 && *q < 1.0) {
                    return Err(Error::InvalidQuantile(*q));
                }
            }
        }
        Ok(())
    }
}

/// Chronological cut points. A sample belongs to the earliest partition whose
/// cut its anchor does not exceed; a boundary anchor goes to the earlier side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: WeekIndex,
    pub dev_end: WeekIndex,
}

/// Fractions of the anchor-week span assigned to train and dev; test takes
/// the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.6, dev: 0.2 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.dev <= 0.0 || self.train + self.dev >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "split fractions train={} dev={} must be positive and sum below 1",
                self.train, self.dev
            )));
        }
        Ok(())
    }

    /// Resolves fractions over an inclusive anchor-week span.
    pub fn resolve(&self, min_t: WeekIndex, max_t: WeekIndex) -> SplitSpec {
        let span = (max_t - min_t + 1).max(1) as f64;
        let train_end = min_t + (span * self.train).floor() as WeekIndex - 1;
        let dev_end = min_t + (span * (self.train + self.dev)).floor() as WeekIndex - 1;
        SplitSpec { train_end, dev_end }
    }
}

/// Split result; `dropped_cross_boundary` counts samples whose target would
/// have crossed their partition's cut and were discarded to prevent leakage.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
    pub dropped_cross_boundary: usize,
}

/// Partitions time-sorted samples by anchor week. Samples with targets that
/// cross the train/dev or dev/test cut are dropped rather than leaked.
pub fn chronological_split(samples: Vec<Sample>, spec: &SplitSpec) -> Result<SplitOutcome> {
    if spec.train_end >= spec.dev_end {
        return Err(Error::InvalidConfig(format!(
            "split boundaries must be increasing: train_end={} dev_end={}",
            spec.train_end, spec.dev_end
        )));
    }
    let mut outcome = SplitOutcome {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        dropped_cross_boundary: 0,
    };
    for sample in samples {
        let target_end = sample
            .target
            .as_ref()
            .map(|tgt| sample.t + tgt.len() as WeekIndex);
        if sample.t <= spec.train_end {
            match target_end {
                Some(end) if end > spec.train_end => outcome.dropped_cross_boundary += 1,
                _ => outcome.train.push(sample),
            }
        } else if sample.t <= spec.dev_end {
            match target_end {
                Some(end) if end > spec.dev_end => outcome.dropped_cross_boundary += 1,
                _ => outcome.dev.push(sample),
            }
        } else {
            outcome.test.push(sample);
        }
    }
    if outcome.train.is_empty() {
        return Err(Error::DegenerateSplit("train"));
    }
    if outcome.dev.is_empty() {
        return Err(Error::DegenerateSplit("dev"));
    }
    if outcome.test.is_empty() {
        return Err(Error::DegenerateSplit("test"));
    }
    Ok(outcome)
}

/// Quantile (pinball) loss: `q (y - yhat)` when under-predicting, scaled by
/// `1 - q` when over-predicting. Zero iff the prediction is exact.
pub fn pinball_loss(q: f64, y: f64, yhat: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidQuantile(q));
    }
    Ok(if y >= yhat { q * (y - yhat) } else { (1.0 - q) * (yhat - y) })
}

/// Mean squared error over equal-length vectors.
pub fn mse_loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            context: "mse".into(),
            expected: y.len(),
            actual: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptySeries("mse input".into()));
    }
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.len() as f64)
}

fn ensure_loss_matches_output(loss: &LossKind, output: &OutputMode) -> Result<()> {
    match (loss, output) {
        (LossKind::Mse, OutputMode::Point) => Ok(()),
        (LossKind::Pinball(qs), OutputMode::Quantiles(out_qs)) if qs == out_qs => Ok(()),
        _ => Err(Error::InvalidConfig(
            "loss kind does not match the model's output mode (MSE needs a point head, pinball needs a matching quantile head)".into(),
        )),
    }
}

/// Scalar loss of one forecast against its ground truth.
pub fn forecast_loss(kind: &LossKind, forecast: &Forecast, target: &[f64]) -> Result<f64> {
    Ok(forecast_loss_grad(kind, forecast, target)?.0)
}

/// Loss plus the gradient with respect to each forecast path.
pub fn forecast_loss_grad(
    kind: &LossKind,
    forecast: &Forecast,
    target: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    match kind {
        LossKind::Mse => {
            let yhat = forecast.point()?;
            let loss = mse_loss(target, yhat)?;
            let n = target.len() as f64;
            let grad = yhat
                .iter()
                .zip(target)
                .map(|(p, y)| 2.0 * (p - y) / n)
                .collect();
            Ok((loss, vec![grad]))
        }
        LossKind::Pinball(qs) => {
            if forecast.paths.len() != qs.len() {
                return Err(Error::DimensionMismatch {
                    context: "pinball paths".into(),
                    expected: qs.len(),
                    actual: forecast.paths.len(),
                });
            }
            let denom = (qs.len() * target.len()) as f64;
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(qs.len());
            for (q, path) in qs.iter().zip(&forecast.paths) {
                if path.values.len() != target.len() {
                    return Err(Error::DimensionMismatch {
                        context: "pinball horizon".into(),
                        expected: target.len(),
                        actual: path.values.len(),
                    });
                }
                let mut grad = Vec::with_capacity(target.len());
                for (yhat, y) in path.values.iter().zip(target) {
                    total += pinball_loss(*q, *y, *yhat)?;
                    let g = if *y >= *yhat { -q } else { 1.0 - q };
                    grad.push(g / denom);
                }
                grads.push(grad);
            }
            Ok((total / denom, grads))
        }
    }
}

/// Per-epoch record as training progresses.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub seconds: f64,
}

/// Loss trajectory of a completed run. Wall-clock seconds are informational
/// and excluded from any persisted artifact so reruns stay byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// `epoch,train_loss,dev_loss` rows; deterministic across reruns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,dev_loss\n");
        for (i, (tr, dv)) in self.train_loss.iter().zip(&self.dev_loss).enumerate() {
            out.push_str(&format!("{i},{tr},{dv}\n"));
        }
        out
    }
}

/// Trains in place and leaves the model holding the best-dev-epoch parameters.
pub fn train(
    model: &mut LrlSnn,
    train_samples: &[Sample],
    dev_samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(model, train_samples, dev_samples, cfg, |_| {})
}

/// [`train`] with a per-epoch observer for live logging.
pub fn train_with(
    model: &mut LrlSnn,
    train_samples: &[Sample],
    dev_samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainHistory> {
    cfg.validate()?;
    ensure_loss_matches_output(&cfg.loss, &model.config().output)?;
    if train_samples.is_empty() {
        return Err(Error::DegenerateSplit("train"));
    }
    for s in train_samples.iter().chain(dev_samples) {
        if s.target.is_none() {
            return Err(Error::Data(format!(
                "sample {}@{} has no target; training needs ground truth",
                s.entity, s.t
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flat = model.params_flat();
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), flat.len());

    let mut history = TrainHistory {
        train_loss: Vec::with_capacity(cfg.epochs),
        dev_loss: Vec::with_capacity(cfg.epochs),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    let mut best_selection = f64::INFINITY;
    let mut best_params = flat.clone();

    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut grad_sum = vec![0.0; flat.len()];
        for (batch_idx, batch) in order.chunks(cfg.minibatch_size).enumerate() {
            grad_sum.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &idx in batch {
                let sample = &train_samples[idx];
                let target = sample.target.as_ref().expect("checked above");
                let (forecast, cache) = model.forward_train(sample, &mut rng)?;
                let (loss, upstream) = forecast_loss_grad(&cfg.loss, &forecast, target)?;
                batch_loss += loss;
                let grads = model.backward(&cache, &upstream)?;
                for (acc, g) in grad_sum.iter_mut().zip(&grads) {
                    *acc += g;
                }
            }
            let n = batch.len() as f64;
            batch_loss /= n;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_idx });
            }
            grad_sum.iter_mut().for_each(|g| *g /= n);
            clip_global_norm(&mut grad_sum, GRAD_CLIP_NORM);
            adam.step(&mut flat, &grad_sum)?;
            model.set_params_flat(&flat)?;
            loss_sum += batch_loss * n;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;

        let dev_loss = if dev_samples.is_empty() {
            f64::NAN
        } else {
            let mut sum = 0.0;
            for sample in dev_samples {
                let forecast = model.forward(sample)?;
                sum += forecast_loss(&cfg.loss, &forecast, sample.target.as_ref().unwrap())?;
            }
            sum / dev_samples.len() as f64
        };

        // model selection on dev loss; falls back to train loss when no dev
        // split exists
        let selection = if dev_samples.is_empty() { train_loss } else { dev_loss };
        if selection < best_selection {
            best_selection = selection;
            history.best_epoch = epoch;
            best_params.copy_from_slice(&flat);
        }

        let seconds = started.elapsed().as_secs_f64();
        history.train_loss.push(train_loss);
        history.dev_loss.push(dev_loss);
        history.epoch_seconds.push(seconds);
        on_epoch(&EpochLog { epoch, train_loss, dev_loss, seconds });
    }

    model.set_params_flat(&best_params)?;
    Ok(history)
}
