//! Seeded fault injection for the emulated wire.

use std::fmt;
use std::str::FromStr;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum FaultSpecError {
    #[error("malformed fault field `{0}` (expected key=value)")]
    Malformed(String),
    #[error("unknown fault key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: `{value}`")]
    BadValue { key: String, value: String },
    #[error("probability for `{0}` must lie in [0, 1]")]
    OutOfRange(&'static str),
}

/// Per-frame fault probabilities plus the seed that fixes the schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FaultProfile {
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    pub reorder_probability: f64,
    pub seed: u64,
}

impl FaultProfile {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(drop: f64, duplicate: f64, reorder: f64, seed: u64) -> Result<Self, FaultSpecError> {
        let p = FaultProfile {
            drop_probability: drop,
            duplicate_probability: duplicate,
            reorder_probability: reorder,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FaultSpecError> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.drop_probability) {
            return Err(FaultSpecError::OutOfRange("drop"));
        }
        if !ok(self.duplicate_probability) {
            return Err(FaultSpecError::OutOfRange("dup"));
        }
        if !ok(self.reorder_probability) {
            return Err(FaultSpecError::OutOfRange("reorder"));
        }
        Ok(())
    }

    pub fn is_lossless(&self) -> bool {
        self.drop_probability == 0.0 && self.duplicate_probability == 0.0 && self.reorder_probability == 0.0
    }
}

/// Parses `drop=<p> dup=<p> reorder=<p> seed=<u64>`, separated by spaces or
/// commas; any field may be omitted.
impl FromStr for FaultProfile {
    type Err = FaultSpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = FaultProfile::none();
        for field in s.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()) {
            let (key, value) = field.split_once('=').ok_or_else(|| FaultSpecError::Malformed(field.into()))?;
            let bad = || FaultSpecError::BadValue { key: key.into(), value: value.into() };
            match key {
                "drop" => p.drop_probability = value.parse().map_err(|_| bad())?,
                "dup" => p.duplicate_probability = value.parse().map_err(|_| bad())?,
                "reorder" => p.reorder_probability = value.parse().map_err(|_| bad())?,
                "seed" => p.seed = value.parse().map_err(|_| bad())?,
                other => return Err(FaultSpecError::UnknownKey(other.into())),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for FaultProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "drop={} dup={} reorder={} seed={}",
            self.drop_probability, self.duplicate_probability, self.reorder_probability, self.seed
        )
    }
}

/// What happens to one transmitted frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fate {
    pub dropped: bool,
    pub duplicated: bool,
    /// Extra delay (microseconds) pushing the frame behind later traffic.
    pub reorder_delay_us: Option<u64>,
}

impl Fate {
    pub const CLEAN: Fate = Fate { dropped: false, duplicated: false, reorder_delay_us: None };
}

pub(crate) struct FaultInjector {
    profile: FaultProfile,
    rng: ChaCha8Rng,
}

impl FaultInjector {
    pub(crate) fn new(profile: FaultProfile) -> Self {
        FaultInjector { profile, rng: ChaCha8Rng::seed_from_u64(profile.seed) }
    }

    pub(crate) fn profile(&self) -> FaultProfile {
        self.profile
    }

    /// Draws the fate of the next frame. Three draws are consumed per frame
    /// whatever the outcome, so schedules depend only on the frame count.
    pub(crate) fn next_fate(&mut self) -> Fate {
        let p = self.profile;
        let drop_roll: f64 = self.rng.random();
        let dup_roll: f64 = self.rng.random();
        let reorder_roll: f64 = self.rng.random();
        let delay = self.rng.random_range(1..=50u64);
        if drop_roll < p.drop_probability {
            return Fate { dropped: true, duplicated: false, reorder_delay_us: None };
        }
        Fate {
            dropped: false,
            duplicated: dup_roll < p.duplicate_probability,
            reorder_delay_us: (reorder_roll < p.reorder_probability).then_some(delay),
        }
    }
}
