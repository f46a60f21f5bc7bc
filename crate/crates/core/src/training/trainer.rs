use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mae, mape, mape_loss, rmse};
use super::optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use crate::data::{batch_and_pad, Trip};
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, EtaModel};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Validate every this many steps (and after the last step).
    pub eval_every: usize,
    /// Seeds shuffling and dropout.
    pub seed: u64,
    /// Where the best parameters are written when training ends.
    pub checkpoint: Option<PathBuf>,
    /// Where the history CSV is written when training ends.
    pub history: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            batch_size: 256,
            max_steps: 50_000,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            clip_norm: 5.0,
            eval_every: 1000,
            seed: 0,
            checkpoint: None,
            history: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs betas in [0, 1) and a positive eps".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One validation point. MAPE columns are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    /// Mean training-batch MAPE since the previous row.
    pub train_mape: f64,
    pub valid_mae: f64,
    pub valid_rmse: f64,
    pub valid_mape: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The model with the best validation MAPE seen.
    pub best: EtaModel,
    pub best_step: usize,
    pub history: Vec<HistoryRow>,
}

impl TrainOutcome {
    pub fn best_row(&self) -> &HistoryRow {
        self.history
            .iter()
            .find(|r| r.step == self.best_step)
            .expect("best step is always recorded")
    }
}

/// Error metrics and per-trip inference latency over a trip set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae_s: f64,
    pub rmse_s: f64,
    pub mape_pct: f64,
    pub n: usize,
    pub latency_ms_mean: f64,
    pub latency_ms_p50: f64,
    pub latency_ms_p99: f64,
}

/// Eval-mode predictions, one per trip.
pub fn predict_trips(model: &EtaModel, trips: &[Trip]) -> Result<Vec<f64>> {
    trips.iter().map(|t| model.predict(&t.features()?)).collect()
}

/// Nearest-rank percentile of an ascending slice.
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs eval-mode inference on every trip, timing each forward pass.
pub fn evaluate(model: &EtaModel, trips: &[Trip]) -> Result<MetricsReport> {
    if trips.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty trip set".into()));
    }
    let labels: Vec<f64> = trips.iter().map(Trip::label).collect();
    let mut predictions = Vec::with_capacity(trips.len());
    let mut latencies = Vec::with_capacity(trips.len());
    for trip in trips {
        let features = trip.features()?;
        let start = Instant::now();
        let y_hat = model.predict(&features)?;
        latencies.push(start.elapsed().as_secs_f64() * 1e3);
        predictions.push(y_hat);
    }
    let latency_ms_mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    latencies.sort_by(f64::total_cmp);
    Ok(MetricsReport {
        mae_s: mae(&labels, &predictions)?,
        rmse_s: rmse(&labels, &predictions)?,
        mape_pct: 100.0 * mape(&labels, &predictions)?,
        n: trips.len(),
        latency_ms_mean,
        latency_ms_p50: percentile(&latencies, 50.0),
        latency_ms_p99: percentile(&latencies, 99.0),
    })
}

fn shuffle_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One optimizer step's gradient: mean MAPE over `trips`, accumulated one
/// trip at a time so only a single trip's graph is alive at once.
fn batch_gradient(
    model: &EtaModel,
    trips: &[(crate::models::TripFeatures, f64)],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads: Vec<Vec<f64>> = model.parameters().iter().map(|p| vec![0.0; p.numel()]).collect();
    let weight = 1.0 / trips.len() as f64;
    let mut loss = 0.0;
    for (features, y) in trips {
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, features, true, rng)?;
        let trip_loss = mape_loss(&mut tape, &[*y], &[fwd.prediction])?;
        let scaled = tape.scale(trip_loss, weight);
        tape.backward(scaled)?;
        loss += tape.value(scaled).data()[0];
        for (acc, &p) in grads.iter_mut().zip(&fwd.params) {
            if let Some(g) = tape.grad(p) {
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok((loss, grads))
}

/// Minimizes training MAPE with Adam, validating every `eval_every` steps
/// and keeping the parameters with the lowest validation MAPE.
pub fn train(mut model: EtaModel, train: &[Trip], valid: &[Trip], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !model.variant().is_learned() {
        return Err(Error::Config(format!("{} has no parameters to train", model.variant())));
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Domain("training needs non-empty train and valid sets".into()));
    }
    let valid_labels: Vec<f64> = valid.iter().map(Trip::label).collect();
    let adam = cfg.adam();
    let mut state = AdamState::new(model.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let mut epoch = 0;
    let mut batches = batch_and_pad(train, cfg.batch_size, Some(shuffle_seed(cfg.seed, epoch)));

    for step in 1..=cfg.max_steps {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                epoch += 1;
                batches = batch_and_pad(train, cfg.batch_size, Some(shuffle_seed(cfg.seed, epoch)));
                batches.next().expect("train set is non-empty")
            }
        };
        let trips = (0..batch.len())
            .map(|b| Ok((batch.trip(b)?.unpadded(), batch.labels[b])))
            .collect::<Result<Vec<_>>>()?;
        let (loss, mut grads) = batch_gradient(&model, &trips, &mut rng)?;
        let grad_norm = clip_grad_norm(&mut grads, cfg.clip_norm);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                loss,
                lr: cfg.learning_rate,
                grad_norm,
            });
        }
        adam_step(model.parameters_mut(), &grads, &mut state, &adam)?;
        loss_sum += loss;
        loss_count += 1;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let predictions = predict_trips(&model, valid)?;
            let row = HistoryRow {
                step,
                train_mape: 100.0 * loss_sum / loss_count as f64,
                valid_mae: mae(&valid_labels, &predictions)?,
                valid_rmse: rmse(&valid_labels, &predictions)?,
                valid_mape: 100.0 * mape(&valid_labels, &predictions)?,
            };
            if !row.valid_mape.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: row.valid_mape,
                    lr: cfg.learning_rate,
                    grad_norm,
                });
            }
            if best.as_ref().is_none_or(|(m, _, _)| row.valid_mape < *m) {
                best = Some((row.valid_mape, step, model.parameters().to_vec()));
            }
            history.push(row);
            (loss_sum, loss_count) = (0.0, 0);
        }
    }

    let Some((_, best_step, params)) = best else {
        return Err(Error::Config("max_steps must be at least 1".into()));
    };
    model.parameters_mut().clone_from_slice(&params);
    if let Some(path) = &cfg.checkpoint {
        save_checkpoint(&model, path)?;
    }
    if let Some(path) = &cfg.history {
        write_history(&history, path)?;
    }
    Ok(TrainOutcome {
        best: model,
        best_step,
        history,
    })
}

pub fn write_history(rows: &[HistoryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
