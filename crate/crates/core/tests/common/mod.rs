//! Shared fixtures and plain-loop reference computations.
#![allow(dead_code)]

use fma_eta::models::{EtaModel, GlobalFeatures, ModelConfig, Normalization, TripFeatures, Variant};
use fma_eta::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        d_factor: 2,
        d_model: 4,
        ffn_depth: 1,
        d_hidden: 3,
        dropout_rate: 0.0,
        n_links: 5,
        n_drivers: 3,
        link_embed: 2,
        driver_embed: 2,
        day_embed: 2,
        slice_embed: 2,
        heads: 2,
    }
}

pub fn tiny_model(variant: Variant, seed: u64) -> EtaModel {
    let norm = Normalization {
        seconds_per_link: 1.0,
        ..Default::default()
    };
    EtaModel::new(tiny_config(variant), norm, &mut rng(seed)).unwrap()
}

/// A trip with `t` links drawn within `cfg`'s vocabularies.
pub fn random_trip(cfg: &ModelConfig, t: usize, r: &mut impl Rng) -> TripFeatures {
    let global = GlobalFeatures {
        driver_id: r.random_range(0..cfg.n_drivers),
        day_of_week: r.random_range(0..7),
        departure_slice: r.random_range(0..288),
    };
    TripFeatures::from_links(
        global,
        (0..t).map(|_| r.random_range(0..cfg.n_links)).collect(),
        (0..t).map(|_| r.random_range(0.1..2.0)).collect(),
        (0..t).map(|_| r.random_range(0.5..1.5)).collect(),
        (0..t).map(|_| r.random_range(0.1..2.0)).collect(),
    )
    .unwrap()
}

pub fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
    assert_eq!(x.len(), w.rows());
    (0..w.cols())
        .map(|j| (0..x.len()).map(|i| x[i] * w.at(i, j)).sum())
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| v.max(0.0)).collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / denom * gamma[i] + beta[i])
        .collect()
}

/// `softmax(QKᵀ/√d_k)·V` row by row, with masked keys skipped.
pub fn attention(x: &[Vec<f64>], w_q: &Tensor, w_k: &Tensor, w_v: &Tensor, mask: &[bool]) -> Vec<Vec<f64>> {
    let q: Vec<_> = x.iter().map(|r| vec_mat(r, w_q)).collect();
    let k: Vec<_> = x.iter().map(|r| vec_mat(r, w_k)).collect();
    let v: Vec<_> = x.iter().map(|r| vec_mat(r, w_v)).collect();
    let scale = (w_q.cols() as f64).sqrt();
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / scale)
                .collect();
            let max = scores
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(s, _)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores
                .iter()
                .zip(mask)
                .map(|(s, &m)| if m { (s - max).exp() } else { 0.0 })
                .collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; w_v.cols()];
            for (j, vj) in v.iter().enumerate() {
                for (o, val) in out.iter_mut().zip(vj) {
                    *o += e[j] / z * val;
                }
            }
            out
        })
        .collect()
}

pub fn param<'a>(model: &'a EtaModel, name: &str) -> &'a Tensor {
    model
        .parameter(name)
        .unwrap_or_else(|| panic!("missing parameter {name}; have {:?}", model.parameter_names()))
}
