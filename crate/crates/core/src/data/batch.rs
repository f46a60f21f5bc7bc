use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Trip;
use crate::error::Result;
use crate::models::{FactorKind, FactorSequence, GlobalFeatures, TripFeatures};
use crate::tensor::Tensor;

/// Trips padded to a common length. Row `b` of every `[B × T]` tensor
/// belongs to `trip_ids[b]`; padded steps hold zeros and a false mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub trip_ids: Vec<u64>,
    pub globals: Vec<GlobalFeatures>,
    pub length_m: Tensor,
    pub speed_mps: Tensor,
    pub time_s: Tensor,
    /// Row-major `[B × T]`.
    pub link_ids: Vec<usize>,
    /// Row-major `[B × T]`.
    pub mask: Vec<bool>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_trips(trips: &[&Trip]) -> Self {
        let t_max = trips.iter().map(|t| t.links.len()).max().unwrap_or(0);
        let b = trips.len();
        let mut length_m = vec![0.0; b * t_max];
        let mut speed_mps = vec![0.0; b * t_max];
        let mut time_s = vec![0.0; b * t_max];
        let mut link_ids = vec![0; b * t_max];
        let mut mask = vec![false; b * t_max];
        for (row, trip) in trips.iter().enumerate() {
            for (step, link) in trip.links.iter().enumerate() {
                let i = row * t_max + step;
                length_m[i] = link.length_m;
                speed_mps[i] = link.speed_mps;
                time_s[i] = link.time_s;
                link_ids[i] = link.link_id;
                mask[i] = true;
            }
        }
        let matrix = |data| Tensor::matrix(b, t_max, data).expect("sized above");
        Self {
            trip_ids: trips.iter().map(|t| t.trip_id).collect(),
            globals: trips.iter().map(|t| t.global()).collect(),
            length_m: matrix(length_m),
            speed_mps: matrix(speed_mps),
            time_s: matrix(time_s),
            link_ids,
            mask,
            labels: trips.iter().map(|t| t.label()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Padded length `T`.
    pub fn steps(&self) -> usize {
        self.length_m.shape()[1]
    }

    pub fn mask_row(&self, b: usize) -> &[bool] {
        let t = self.steps();
        &self.mask[b * t..(b + 1) * t]
    }

    /// Row `b` as padded model input, mask included.
    pub fn trip(&self, b: usize) -> Result<TripFeatures> {
        let t = self.steps();
        let span = b * t..(b + 1) * t;
        TripFeatures::new(
            self.globals[b],
            vec![
                FactorSequence::numeric(FactorKind::LinkLengthM, self.length_m.row(b).to_vec()),
                FactorSequence::numeric(FactorKind::ConditionSpeedMps, self.speed_mps.row(b).to_vec()),
                FactorSequence::numeric(FactorKind::LinkTimeS, self.time_s.row(b).to_vec()),
                FactorSequence::link_ids(self.link_ids[span.clone()].to_vec()),
            ],
            Some(self.mask[span].to_vec()),
        )
    }
}

/// Iterator over consecutive batches; the last may be partial.
pub struct Batches<'a> {
    trips: &'a [Trip],
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let members: Vec<&Trip> = self.order[self.cursor..end].iter().map(|&i| &self.trips[i]).collect();
        self.cursor = end;
        Some(Batch::from_trips(&members))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.cursor).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Splits `trips` into batches of `batch_size` (≥ 1). With a seed the
/// order is a seeded shuffle, otherwise the input order.
pub fn batch_and_pad(trips: &[Trip], batch_size: usize, shuffle_seed: Option<u64>) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..trips.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Batches {
        trips,
        order,
        batch_size,
        cursor: 0,
    }
}
