use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAYS_PER_WEEK: usize = 7;
/// Five-minute departure slices in a day.
pub const SLICES_PER_DAY: usize = 288;

/// Trip-level categorical context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalFeatures {
    pub driver_id: usize,
    /// 0 = Monday.
    pub day_of_week: usize,
    pub departure_slice: usize,
}

/// The four per-link streams, in the order the networks consume them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    LinkLengthM,
    ConditionSpeedMps,
    LinkTimeS,
    LinkId,
}

impl FactorKind {
    pub const ALL: [FactorKind; 4] = [
        FactorKind::LinkLengthM,
        FactorKind::ConditionSpeedMps,
        FactorKind::LinkTimeS,
        FactorKind::LinkId,
    ];

    pub fn is_categorical(self) -> bool {
        self == FactorKind::LinkId
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FactorValues {
    Numeric(Vec<f64>),
    Categorical(Vec<usize>),
}

impl FactorValues {
    pub fn len(&self) -> usize {
        match self {
            FactorValues::Numeric(v) => v.len(),
            FactorValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One per-link factor of a trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSequence {
    pub kind: FactorKind,
    pub values: FactorValues,
}

impl FactorSequence {
    pub fn numeric(kind: FactorKind, values: Vec<f64>) -> Self {
        Self {
            kind,
            values: FactorValues::Numeric(values),
        }
    }

    pub fn link_ids(ids: Vec<usize>) -> Self {
        Self {
            kind: FactorKind::LinkId,
            values: FactorValues::Categorical(ids),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Everything a network sees of one trip: global context, the four factor
/// sequences in [`FactorKind::ALL`] order and a padding mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TripFeatures {
    global: GlobalFeatures,
    factors: Vec<FactorSequence>,
    mask: Vec<bool>,
}

impl TripFeatures {
    /// Validates and orders `factors`; `mask = None` marks every step real.
    pub fn new(
        global: GlobalFeatures,
        factors: Vec<FactorSequence>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let mut ordered = Vec::with_capacity(FactorKind::ALL.len());
        for kind in FactorKind::ALL {
            let mut found = factors.iter().filter(|f| f.kind == kind);
            let (Some(f), None) = (found.next(), found.next()) else {
                return Err(Error::Config(format!(
                    "expected exactly one {kind:?} factor"
                )));
            };
            match (&f.values, kind.is_categorical()) {
                (FactorValues::Numeric(v), false) => {
                    if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                        return Err(Error::Domain(format!(
                            "{kind:?} values must be finite and non-negative, got {bad}"
                        )));
                    }
                }
                (FactorValues::Categorical(_), true) => {}
                _ => {
                    return Err(Error::Config(format!(
                        "{kind:?} has the wrong value type"
                    )))
                }
            }
            ordered.push(f.clone());
        }
        if factors.len() != ordered.len() {
            return Err(Error::Config("unexpected extra factors".into()));
        }
        let lengths: Vec<usize> = ordered.iter().map(FactorSequence::len).collect();
        if lengths.iter().any(|&l| l != lengths[0]) {
            return Err(Error::Alignment(lengths));
        }
        let t = lengths[0];
        if t == 0 {
            return Err(Error::Domain("a trip needs at least one link".into()));
        }
        let mask = mask.unwrap_or_else(|| vec![true; t]);
        if mask.len() != t {
            return Err(Error::Alignment(vec![t, mask.len()]));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Domain("every step of the trip is masked".into()));
        }
        Ok(Self {
            global,
            factors: ordered,
            mask,
        })
    }

    /// Convenience constructor from parallel per-link arrays.
    pub fn from_links(
        global: GlobalFeatures,
        link_ids: Vec<usize>,
        length_m: Vec<f64>,
        speed_mps: Vec<f64>,
        time_s: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            global,
            vec![
                FactorSequence::numeric(FactorKind::LinkLengthM, length_m),
                FactorSequence::numeric(FactorKind::ConditionSpeedMps, speed_mps),
                FactorSequence::numeric(FactorKind::LinkTimeS, time_s),
                FactorSequence::link_ids(link_ids),
            ],
            None,
        )
    }

    pub fn global(&self) -> GlobalFeatures {
        self.global
    }

    pub fn factors(&self) -> &[FactorSequence] {
        &self.factors
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Padded length.
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Number of unmasked steps.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn numeric(&self, kind: FactorKind) -> &[f64] {
        match &self.factors[Self::slot(kind)].values {
            FactorValues::Numeric(v) => v,
            FactorValues::Categorical(_) => unreachable!("validated in new"),
        }
    }

    pub fn link_ids(&self) -> &[usize] {
        match &self.factors[Self::slot(FactorKind::LinkId)].values {
            FactorValues::Categorical(v) => v,
            FactorValues::Numeric(_) => unreachable!("validated in new"),
        }
    }

    fn slot(kind: FactorKind) -> usize {
        FactorKind::ALL.iter().position(|&k| k == kind).expect("known kind")
    }

    /// A copy holding only the unmasked steps.
    pub fn unpadded(&self) -> Self {
        if self.mask.iter().all(|&m| m) {
            return self.clone();
        }
        let keep = |i: usize| self.mask[i];
        let factors = self
            .factors
            .iter()
            .map(|f| FactorSequence {
                kind: f.kind,
                values: match &f.values {
                    FactorValues::Numeric(v) => FactorValues::Numeric(
                        v.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, x)| *x).collect(),
                    ),
                    FactorValues::Categorical(v) => FactorValues::Categorical(
                        v.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, x)| *x).collect(),
                    ),
                },
            })
            .collect();
        Self {
            global: self.global,
            factors,
            mask: vec![true; self.real_len()],
        }
    }
}

/// Mean and standard deviation of one numeric factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub const IDENTITY: Moments = Moments { mean: 0.0, std: 1.0 };

    /// Population moments; a zero spread is replaced by 1.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        if n == 0 {
            return Self::IDENTITY;
        }
        let std = (m2 / n as f64).sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    pub fn z(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Training-set statistics stored with a model.
///
/// Numeric factors are z-scored before entering the network. The network's
/// output is a per-link rate multiplied by the trip's link count and by
/// `seconds_per_link`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub length_m: Moments,
    pub speed_mps: Moments,
    pub time_s: Moments,
    pub seconds_per_link: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            length_m: Moments::IDENTITY,
            speed_mps: Moments::IDENTITY,
            time_s: Moments::IDENTITY,
            seconds_per_link: 1.0,
        }
    }
}

impl Normalization {
    pub fn moments(&self, kind: FactorKind) -> Moments {
        match kind {
            FactorKind::LinkLengthM => self.length_m,
            FactorKind::ConditionSpeedMps => self.speed_mps,
            FactorKind::LinkTimeS => self.time_s,
            FactorKind::LinkId => Moments::IDENTITY,
        }
    }

    /// Statistics over a set of trips and their labels.
    pub fn fit<'a>(trips: impl IntoIterator<Item = (&'a TripFeatures, f64)> + Clone) -> Self {
        let real = |t: &'a TripFeatures, kind| {
            t.numeric(kind)
                .iter()
                .zip(t.mask())
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .collect::<Vec<_>>()
        };
        let gather = |kind| {
            Moments::of(
                trips
                    .clone()
                    .into_iter()
                    .flat_map(move |(t, _)| real(t, kind)),
            )
        };
        let (mut total, mut n) = (0.0, 0usize);
        for (t, y) in trips.clone() {
            total += y / t.real_len() as f64;
            n += 1;
        }
        Self {
            length_m: gather(FactorKind::LinkLengthM),
            speed_mps: gather(FactorKind::ConditionSpeedMps),
            time_s: gather(FactorKind::LinkTimeS),
            seconds_per_link: if n > 0 && total > 0.0 { total / n as f64 } else { 1.0 },
        }
    }
}
