//! Single-trip inference latency across sequence lengths.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    count_parameters, EtaModel, GlobalFeatures, ModelConfig, TripFeatures, Variant, DAYS_PER_WEEK,
    SLICES_PER_DAY,
};
use crate::tensor::{intra_op_threads, set_intra_op_threads};
use crate::training::percentile;

/// Learned models in one report must agree on size to within this fraction.
pub const MAX_PARAMETER_GAP: f64 = 0.10;

pub const DEFAULT_LENGTHS: [usize; 9] = [8, 16, 32, 64, 128, 180, 256, 384, 512];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
    /// Seeds the synthetic trip content.
    pub seed: u64,
    /// Intra-op threads for matrix products while timing.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            reps: 50,
            warmup: 10,
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub variant: Variant,
    #[serde(rename = "T")]
    pub t: usize,
    pub rep: usize,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub variant: Variant,
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    pub mean_ms: f64,
    pub std_err_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

/// `ms = a·ln(T) + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub a: f64,
    pub b: f64,
}

impl LogFit {
    pub fn at(&self, t: f64) -> f64 {
        self.a * t.ln() + self.b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantFit {
    pub variant: Variant,
    pub parameters: usize,
    pub threads: usize,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub samples: Vec<LatencySample>,
    pub summaries: Vec<LatencySummary>,
    pub fits: Vec<VariantFit>,
    pub threads: usize,
}

impl BenchReport {
    pub fn summary(&self, variant: Variant, t: usize) -> Option<&LatencySummary> {
        self.summaries.iter().find(|s| s.variant == variant && s.t == t)
    }

    pub fn fit(&self, variant: Variant) -> Option<LogFit> {
        self.fits
            .iter()
            .find(|f| f.variant == variant)
            .map(|f| LogFit { a: f.a, b: f.b })
    }

    /// Raw samples: `variant,T,rep,wall_time_ms`.
    pub fn write_samples_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.samples, out)
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.summaries, out)
    }

    pub fn write_fits_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.fits, out)
    }
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares fit of `ms = a·ln(T) + b`.
pub fn fit_log_curve(points: &[(f64, f64)]) -> Result<LogFit> {
    if let Some(&(t, _)) = points.iter().find(|(t, _)| !(*t > 0.0)) {
        return Err(Error::Domain(format!("sequence lengths must be positive, got {t}")));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(t, _)| t.ln()).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(t, y) in points {
        let dx = t.ln() - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if points.is_empty() || sxx == 0.0 {
        return Err(Error::Domain("log fit is rank-deficient: need two distinct lengths".into()));
    }
    let a = sxy / sxx;
    Ok(LogFit { a, b: mean_y - a * mean_x })
}

/// A trip of exactly `t` links with plausible random content.
pub fn synthetic_trip<R: Rng + ?Sized>(config: &ModelConfig, t: usize, rng: &mut R) -> Result<TripFeatures> {
    let mut ids = Vec::with_capacity(t);
    let mut lengths = Vec::with_capacity(t);
    let mut speeds = Vec::with_capacity(t);
    let mut times = Vec::with_capacity(t);
    for _ in 0..t {
        let length = 200.0 * (0.5 * rng.random_range(-2.0..2.0f64)).exp();
        let speed = rng.random_range(6.0..22.0);
        ids.push(rng.random_range(0..config.n_links));
        lengths.push(length);
        speeds.push(speed);
        times.push(length / speed);
    }
    let global = GlobalFeatures {
        driver_id: rng.random_range(0..config.n_drivers),
        day_of_week: rng.random_range(0..DAYS_PER_WEEK),
        departure_slice: rng.random_range(0..SLICES_PER_DAY),
    };
    TripFeatures::from_links(global, ids, lengths, speeds, times)
}

fn check_matched(models: &[EtaModel]) -> Result<()> {
    let counts: Vec<(Variant, usize)> = models
        .iter()
        .filter(|m| m.variant().is_learned())
        .map(|m| (m.variant(), count_parameters(m)))
        .collect();
    let (Some(lo), Some(hi)) = (
        counts.iter().map(|c| c.1).min(),
        counts.iter().map(|c| c.1).max(),
    ) else {
        return Ok(());
    };
    if (hi - lo) as f64 > MAX_PARAMETER_GAP * lo as f64 {
        return Err(Error::Config(format!(
            "parameter counts differ by more than {:.0}%: {counts:?}",
            MAX_PARAMETER_GAP * 100.0
        )));
    }
    Ok(())
}

/// Times eval-mode single-trip inference for every model at every length.
/// Only the forward pass sits inside the timed region.
pub fn bench_latency(models: &[EtaModel], cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if cfg.lengths.is_empty() || cfg.lengths.contains(&0) {
        return Err(Error::Config("lengths must be non-empty and positive".into()));
    }
    check_matched(models)?;
    let previous_threads = intra_op_threads();
    set_intra_op_threads(cfg.threads);
    let threads = intra_op_threads();
    let measured = measure(models, cfg);
    set_intra_op_threads(previous_threads);
    let samples = measured?;

    let mut summaries = Vec::new();
    for &t in &cfg.lengths {
        for model in models {
            let mut ms: Vec<f64> = samples
                .iter()
                .filter(|s| s.variant == model.variant() && s.t == t)
                .map(|s| s.wall_time_ms)
                .collect();
            let n = ms.len() as f64;
            let mean = ms.iter().sum::<f64>() / n;
            let var = if ms.len() > 1 {
                ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ms.sort_by(f64::total_cmp);
            summaries.push(LatencySummary {
                variant: model.variant(),
                t,
                n: ms.len(),
                mean_ms: mean,
                std_err_ms: (var / n).sqrt(),
                p50_ms: percentile(&ms, 50.0),
                p99_ms: percentile(&ms, 99.0),
            });
        }
    }
    let mut fits = Vec::new();
    if cfg.lengths.iter().any(|&t| t != cfg.lengths[0]) {
        for model in models {
            let points: Vec<(f64, f64)> = samples
                .iter()
                .filter(|s| s.variant == model.variant())
                .map(|s| (s.t as f64, s.wall_time_ms))
                .collect();
            let fit = fit_log_curve(&points)?;
            fits.push(VariantFit {
                variant: model.variant(),
                parameters: count_parameters(model),
                threads,
                a: fit.a,
                b: fit.b,
            });
        }
    }
    Ok(BenchReport {
        samples,
        summaries,
        fits,
        threads,
    })
}

fn measure(models: &[EtaModel], cfg: &BenchConfig) -> Result<Vec<LatencySample>> {
    let mut samples = Vec::with_capacity(models.len() * cfg.lengths.len() * cfg.reps);
    for (li, &t) in cfg.lengths.iter().enumerate() {
        for model in models {
            // Every variant sees the same trips at a given length.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((li as u64 + 1) << 32));
            let trips = (0..cfg.warmup + cfg.reps)
                .map(|_| synthetic_trip(model.config(), t, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            for trip in &trips[..cfg.warmup] {
                std::hint::black_box(model.predict(trip)?);
            }
            for (rep, trip) in trips[cfg.warmup..].iter().enumerate() {
                let start = Instant::now();
                let y = model.predict(trip)?;
                let elapsed = start.elapsed();
                std::hint::black_box(y);
                samples.push(LatencySample {
                    variant: model.variant(),
                    t,
                    rep,
                    wall_time_ms: elapsed.as_secs_f64() * 1e3,
                });
            }
        }
    }
    Ok(samples)
}
