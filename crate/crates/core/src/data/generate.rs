use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    day_of_week, departure_slice, LinkRecord, Trip, DEFAULT_START_EPOCH, SECONDS_PER_WEEK,
};
use crate::error::{Error, Result};
use crate::models::{DAYS_PER_WEEK, SLICES_PER_DAY};

/// Randomness in the synthetic world. All zeros gives a world in which the
/// recorded features determine every label exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Log-normal sigma of the true per-link time around its expectation.
    pub travel_sigma: f64,
    /// Log-normal sigma of the recorded historical link time.
    pub history_sigma: f64,
    /// Mean intersection delay in seconds between consecutive links of
    /// equal base speed; scaled by the speed ratio across the junction.
    pub delay_mean_s: f64,
    /// Driver speed multipliers are uniform in `[1 − spread, 1 + spread]`.
    pub driver_spread: f64,
    /// Relative jitter of each slice's congestion multiplier.
    pub slice_jitter: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            travel_sigma: 0.1,
            history_sigma: 0.1,
            delay_mean_s: 5.0,
            driver_spread: 0.2,
            slice_jitter: 0.05,
        }
    }
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig {
        travel_sigma: 0.0,
        history_sigma: 0.0,
        delay_mean_s: 0.0,
        driver_spread: 0.0,
        slice_jitter: 0.0,
    };
}

/// Parameters of the synthetic road network and trip sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_links: usize,
    pub n_drivers: usize,
    pub weeks: usize,
    pub trips_per_week: usize,
    pub rng_seed: u64,
    pub min_links: usize,
    pub max_links: usize,
    /// Epoch second at which week 0 begins; must fall on a Monday midnight.
    pub start_epoch: i64,
    /// Successors of each link available to the random walk.
    pub out_degree: usize,
    pub noise: NoiseConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_links: 2000,
            n_drivers: 200,
            weeks: 20,
            trips_per_week: 1000,
            rng_seed: 7,
            min_links: 5,
            max_links: 300,
            start_epoch: DEFAULT_START_EPOCH,
            out_degree: 3,
            noise: NoiseConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("n_links", self.n_links),
            ("n_drivers", self.n_drivers),
            ("trips_per_week", self.trips_per_week),
            ("min_links", self.min_links),
            ("out_degree", self.out_degree),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.weeks < 3 {
            return bad(format!("weeks must be at least 3 to fill all splits, got {}", self.weeks));
        }
        if self.max_links < self.min_links {
            return bad(format!(
                "max_links {} is below min_links {}",
                self.max_links, self.min_links
            ));
        }
        if day_of_week(self.start_epoch) != 0 || departure_slice(self.start_epoch) != 0 {
            return bad(format!("start_epoch {} is not a Monday midnight", self.start_epoch));
        }
        let n = &self.noise;
        for (name, v) in [
            ("travel_sigma", n.travel_sigma),
            ("history_sigma", n.history_sigma),
            ("delay_mean_s", n.delay_mean_s),
            ("slice_jitter", n.slice_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&n.driver_spread) {
            return bad("driver_spread must lie in [0, 1)".into());
        }
        if !(n.slice_jitter < 0.5) {
            return bad("slice_jitter must stay below 0.5".into());
        }
        Ok(())
    }
}

struct Link {
    length_m: f64,
    base_speed_mps: f64,
    successors: Vec<usize>,
}

struct World {
    links: Vec<Link>,
    /// `[day][slice]` congestion multipliers.
    congestion: Vec<f64>,
    drivers: Vec<f64>,
}

/// Rush-hour dips on weekdays, a milder midday dip at weekends.
fn congestion_profile(day: usize, slice: usize) -> f64 {
    let hour = (slice as f64 + 0.5) * 24.0 / SLICES_PER_DAY as f64;
    let dip = |center: f64, width: f64, depth: f64| depth * (-((hour - center) / width).powi(2)).exp();
    if day < 5 {
        1.0 - dip(8.0, 1.2, 0.35) - dip(18.0, 1.5, 0.4)
    } else {
        1.0 - dip(14.0, 3.0, 0.15)
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl World {
    fn build<R: Rng + ?Sized>(cfg: &WorldConfig, rng: &mut R) -> Self {
        let length = LogNormal::new(200f64.ln(), 0.5).expect("valid log-normal");
        let links = (0..cfg.n_links)
            .map(|_| Link {
                length_m: length.sample(rng).clamp(20.0, 2000.0),
                base_speed_mps: rng.random_range(6.0..22.0),
                successors: (0..cfg.out_degree).map(|_| rng.random_range(0..cfg.n_links)).collect(),
            })
            .collect();
        let jitter = cfg.noise.slice_jitter;
        let mut congestion = Vec::with_capacity(DAYS_PER_WEEK * SLICES_PER_DAY);
        for day in 0..DAYS_PER_WEEK {
            for slice in 0..SLICES_PER_DAY {
                let noise = if jitter > 0.0 { jitter * normal(rng) } else { 0.0 };
                congestion.push(congestion_profile(day, slice) * (1.0 + noise.clamp(-0.5, 0.5)));
            }
        }
        let spread = cfg.noise.driver_spread;
        let drivers = (0..cfg.n_drivers)
            .map(|_| 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        Self {
            links,
            congestion,
            drivers,
        }
    }

    fn congestion_at(&self, epoch_s: f64) -> f64 {
        let t = epoch_s.floor() as i64;
        self.congestion[day_of_week(t) * SLICES_PER_DAY + departure_slice(t)]
    }
}

fn log_normal_factor<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        (sigma * normal(rng)).exp()
    } else {
        1.0
    }
}

/// Samples a deterministic corpus of `weeks × trips_per_week` trips.
///
/// Each trip walks the link graph from a random start. Per link, the true
/// time is `length / (base_speed × congestion × driver)` times log-normal
/// noise, with congestion taken at the moment the trip enters the link.
/// The recorded speed omits the driver multiplier, and the recorded link
/// time is a noisy estimate of `length / (base_speed × congestion)`.
/// Junction delays are exponential with a mean that grows when the trip
/// slows down across the junction.
pub fn generate_dataset(cfg: &WorldConfig) -> Result<Vec<Trip>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let world = World::build(cfg, &mut rng);
    let noise = &cfg.noise;
    let (lo, hi) = ((cfg.min_links as f64).ln(), ((cfg.max_links + 1) as f64).ln());
    let mut trips = Vec::with_capacity(cfg.weeks * cfg.trips_per_week);
    for week in 0..cfg.weeks {
        let week_start = cfg.start_epoch + week as i64 * SECONDS_PER_WEEK;
        let mut departures: Vec<i64> = (0..cfg.trips_per_week)
            .map(|_| week_start + rng.random_range(0..SECONDS_PER_WEEK))
            .collect();
        departures.sort_unstable();
        for s in departures {
            let driver_id = rng.random_range(0..cfg.n_drivers);
            let driver = world.drivers[driver_id];
            let count = if hi > lo {
                (rng.random_range(lo..hi).exp().floor() as usize).clamp(cfg.min_links, cfg.max_links)
            } else {
                cfg.min_links
            };
            let mut link_id = rng.random_range(0..cfg.n_links);
            let mut links = Vec::with_capacity(count);
            let mut elapsed = 0.0;
            for step in 0..count {
                if step > 0 {
                    let prev = &world.links[link_id];
                    let next = prev.successors[rng.random_range(0..prev.successors.len())];
                    if noise.delay_mean_s > 0.0 {
                        let ratio = prev.base_speed_mps / world.links[next].base_speed_mps;
                        let mean = noise.delay_mean_s * ratio.clamp(0.5, 2.0);
                        elapsed += Exp::new(1.0 / mean).expect("positive rate").sample(&mut rng);
                    }
                    link_id = next;
                }
                let link = &world.links[link_id];
                let speed = link.base_speed_mps * world.congestion_at(s as f64 + elapsed);
                let expected = link.length_m / speed;
                let true_time = link.length_m / (speed * driver) * log_normal_factor(noise.travel_sigma, &mut rng);
                let recorded = expected * log_normal_factor(noise.history_sigma, &mut rng);
                links.push(LinkRecord {
                    link_id,
                    length_m: link.length_m,
                    speed_mps: speed,
                    time_s: recorded,
                });
                elapsed += true_time;
            }
            trips.push(Trip {
                trip_id: trips.len() as u64,
                s,
                e: s as f64 + elapsed,
                driver_id,
                links,
            });
        }
    }
    Ok(trips)
}
