//! Trips, the synthetic world that produces them, filtering, temporal
//! splits, JSONL files and padded batches.

mod batch;
mod filter;
mod generate;
mod io;

pub use batch::{batch_and_pad, Batch, Batches};
pub use filter::{filter_trips, split_by_time, Split, MAX_SPEED_MPS, MIN_DURATION_S};
pub use generate::{generate_dataset, NoiseConfig, WorldConfig};
pub use io::{read_jsonl, read_jsonl_from, write_jsonl, write_jsonl_to};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{GlobalFeatures, Normalization, TripFeatures, SLICES_PER_DAY};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_WEEK: i64 = 7 * SECONDS_PER_DAY;
/// Monday 1970-01-05 00:00 UTC.
pub const DEFAULT_START_EPOCH: i64 = 4 * SECONDS_PER_DAY;

/// One traversed road segment with its recorded factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord {
    pub link_id: usize,
    pub length_m: f64,
    /// Road-condition speed when the trip entered the link.
    pub speed_mps: f64,
    /// Historical travel-time estimate for the link.
    pub time_s: f64,
}

/// One trajectory. Departure `s` is whole epoch seconds; arrival `e` keeps
/// the fractional part so that `e − s` is the exact label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trip {
    pub trip_id: u64,
    pub s: i64,
    pub e: f64,
    pub driver_id: usize,
    pub links: Vec<LinkRecord>,
}

/// Day of week with 0 = Monday.
pub fn day_of_week(epoch_s: i64) -> usize {
    // 1970-01-01 was a Thursday.
    (epoch_s.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as usize
}

/// Five-minute slice of the day, `0..288`.
pub fn departure_slice(epoch_s: i64) -> usize {
    (epoch_s.rem_euclid(SECONDS_PER_DAY) / (SECONDS_PER_DAY / SLICES_PER_DAY as i64)) as usize
}

impl Trip {
    /// Travel time `e − s` in seconds.
    pub fn label(&self) -> f64 {
        self.e - self.s as f64
    }

    pub fn total_length_m(&self) -> f64 {
        self.links.iter().map(|l| l.length_m).sum()
    }

    pub fn global(&self) -> GlobalFeatures {
        GlobalFeatures {
            driver_id: self.driver_id,
            day_of_week: day_of_week(self.s),
            departure_slice: departure_slice(self.s),
        }
    }

    pub fn features(&self) -> Result<TripFeatures> {
        TripFeatures::from_links(
            self.global(),
            self.links.iter().map(|l| l.link_id).collect(),
            self.links.iter().map(|l| l.length_m).collect(),
            self.links.iter().map(|l| l.speed_mps).collect(),
            self.links.iter().map(|l| l.time_s).collect(),
        )
    }
}

/// Normalization statistics of a training set.
pub fn fit_normalization(trips: &[Trip]) -> Result<Normalization> {
    let features = trips.iter().map(Trip::features).collect::<Result<Vec<_>>>()?;
    Ok(Normalization::fit(
        features.iter().zip(trips).map(|(f, t)| (f, t.label())),
    ))
}
