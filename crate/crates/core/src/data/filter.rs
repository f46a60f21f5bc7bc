use super::{Trip, SECONDS_PER_DAY, SECONDS_PER_WEEK};
use crate::error::{Error, Result};

/// Shortest trip kept, in seconds.
pub const MIN_DURATION_S: f64 = 60.0;
/// Fastest average speed kept: 120 km/h.
pub const MAX_SPEED_MPS: f64 = 120.0 / 3.6;

fn keep(trip: &Trip) -> bool {
    let y = trip.label();
    !trip.links.is_empty() && y >= MIN_DURATION_S && trip.total_length_m() / y <= MAX_SPEED_MPS
}

/// Drops implausible trips (too short, or faster than 120 km/h on average).
/// Boundary values are kept; order is preserved.
pub fn filter_trips(trips: Vec<Trip>) -> Vec<Trip> {
    trips.into_iter().filter(keep).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Trip>,
    pub valid: Vec<Trip>,
    pub test: Vec<Trip>,
}

/// Partitions trips by departure week into contiguous train/valid/test
/// ranges. Weeks are counted from the Monday on or before the earliest
/// departure. When the corpus spans a different number of weeks than
/// `weeks` sums to, the boundaries scale proportionally.
pub fn split_by_time(trips: Vec<Trip>, weeks: (usize, usize, usize)) -> Result<Split> {
    let (w_train, w_valid, w_test) = weeks;
    let total = w_train + w_valid + w_test;
    if w_train == 0 || w_valid == 0 || w_test == 0 {
        return Err(Error::Config(format!("every split needs at least one week, got {weeks:?}")));
    }
    let Some(first) = trips.iter().map(|t| t.s).min() else {
        return Err(Error::Config("cannot split an empty corpus".into()));
    };
    let last = trips.iter().map(|t| t.s).max().unwrap_or(first);
    // Monday 00:00 on or before the first departure (epoch day 4 was a Monday).
    let origin = first - (first - 4 * SECONDS_PER_DAY).rem_euclid(SECONDS_PER_WEEK);
    let week_of = |s: i64| ((s - origin) / SECONDS_PER_WEEK) as usize;
    let span = week_of(last) + 1;
    if span < 3 {
        return Err(Error::Config(format!("corpus spans {span} weeks; at least 3 are needed")));
    }
    let scale = |w: usize| ((span * w) as f64 / total as f64).round() as usize;
    let train_end = scale(w_train).clamp(1, span - 2);
    let valid_end = scale(w_train + w_valid).clamp(train_end + 1, span - 1);

    let mut split = Split::default();
    for trip in trips {
        let week = week_of(trip.s);
        if week < train_end {
            split.train.push(trip);
        } else if week < valid_end {
            split.valid.push(trip);
        } else {
            split.test.push(trip);
        }
    }
    for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        if part.is_empty() {
            return Err(Error::Config(format!("{name} split is empty")));
        }
    }
    Ok(split)
}
