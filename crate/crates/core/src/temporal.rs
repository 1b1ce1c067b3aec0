//! Weekly time periods and their embeddings.
//!
//! A week is split into 7 days × 5 daily blocks, giving 35 periods numbered
//! `p = 5·day + block`. Days start on Monday (`day = 0`); blocks are morning,
//! noon, afternoon, night and the remaining hours, in that order.
//!
//! The Euler embedding places a period on a product of unit circles, one per
//! cycle, using the 1-based position of the period within each cycle:
//!
//! ```
//! use hyperbandit::temporal::{euler_embed, CycleSpec, TimePeriod};
//!
//! let tuesday_afternoon = TimePeriod::from_day_block(1, 2).unwrap();
//! assert_eq!(tuesday_afternoon.index(), 7);
//! let s = euler_embed(tuesday_afternoon, &CycleSpec::weekly_daily());
//! assert_eq!(s.len(), 4);
//! assert!((s[0] - (4.0 * std::f64::consts::PI / 7.0).cos()).abs() < 1e-15);
//! ```

use std::f64::consts::TAU;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DAYS_PER_WEEK: usize = 7;
pub const BLOCKS_PER_DAY: usize = 5;
pub const NUM_PERIODS: usize = DAYS_PER_WEEK * BLOCKS_PER_DAY;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemporalError {
    #[error("{what} {value} out of range 0..{limit}")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },
    #[error("invalid cycle spec: {0}")]
    BadCycle(String),
}

/// One of the 35 weekly periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct TimePeriod(u8);

impl TimePeriod {
    pub fn new(p: usize) -> Result<Self, TemporalError> {
        if p >= NUM_PERIODS {
            return Err(TemporalError::OutOfRange {
                what: "period",
                value: p,
                limit: NUM_PERIODS,
            });
        }
        Ok(Self(p as u8))
    }

    /// `p = 5·day + block`.
    pub fn from_day_block(day: usize, block: usize) -> Result<Self, TemporalError> {
        if day >= DAYS_PER_WEEK {
            return Err(TemporalError::OutOfRange {
                what: "day",
                value: day,
                limit: DAYS_PER_WEEK,
            });
        }
        if block >= BLOCKS_PER_DAY {
            return Err(TemporalError::OutOfRange {
                what: "block",
                value: block,
                limit: BLOCKS_PER_DAY,
            });
        }
        Ok(Self((BLOCKS_PER_DAY * day + block) as u8))
    }

    /// Period containing a Unix timestamp (seconds, UTC).
    ///
    /// Blocks: morning 8:00–11:30, noon 11:30–14:00, afternoon 14:00–17:30,
    /// night 17:30–22:00, remaining otherwise.
    pub fn from_unix_seconds(secs: i64) -> Self {
        const DAY: i64 = 86_400;
        let days = secs.div_euclid(DAY);
        let second_of_day = secs.rem_euclid(DAY);
        // 1970-01-01 was a Thursday.
        let day = (days + 3).rem_euclid(7) as usize;
        let minute = second_of_day / 60;
        let block = match minute {
            480..=689 => 0,
            690..=839 => 1,
            840..=1049 => 2,
            1050..=1319 => 3,
            _ => 4,
        };
        Self((BLOCKS_PER_DAY * day + block) as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn day(self) -> usize {
        self.index() / BLOCKS_PER_DAY
    }

    pub fn block(self) -> usize {
        self.index() % BLOCKS_PER_DAY
    }

    pub fn all() -> impl Iterator<Item = TimePeriod> {
        (0..NUM_PERIODS as u8).map(TimePeriod)
    }
}

impl TryFrom<usize> for TimePeriod {
    type Error = TemporalError;

    fn try_from(p: usize) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<TimePeriod> for usize {
    fn from(p: TimePeriod) -> usize {
        p.index()
    }
}

impl fmt::Display for TimePeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A cycle of `length` slots and the 1-based slot of every period in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub length: usize,
    positions: [usize; NUM_PERIODS],
}

impl Cycle {
    pub fn new(length: usize, position_of: impl Fn(TimePeriod) -> usize) -> Result<Self, TemporalError> {
        if length == 0 {
            return Err(TemporalError::BadCycle("cycle length must be positive".into()));
        }
        let mut positions = [0; NUM_PERIODS];
        for p in TimePeriod::all() {
            let pos = position_of(p);
            if pos == 0 || pos > length {
                return Err(TemporalError::BadCycle(format!(
                    "period {p} mapped to position {pos}, outside 1..={length}"
                )));
            }
            positions[p.index()] = pos;
        }
        Ok(Self { length, positions })
    }

    pub fn weekly() -> Self {
        Self::new(DAYS_PER_WEEK, |p| p.day() + 1).expect("weekly cycle is valid")
    }

    pub fn daily() -> Self {
        Self::new(BLOCKS_PER_DAY, |p| p.block() + 1).expect("daily cycle is valid")
    }

    pub fn position(&self, p: TimePeriod) -> usize {
        self.positions[p.index()]
    }
}

/// The set of cycles fed to the Euler embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSpec {
    cycles: Vec<Cycle>,
}

impl CycleSpec {
    pub fn new(cycles: Vec<Cycle>) -> Result<Self, TemporalError> {
        if cycles.is_empty() {
            return Err(TemporalError::BadCycle("need at least one cycle".into()));
        }
        Ok(Self { cycles })
    }

    /// Weekly cycle first, daily cycle second.
    pub fn weekly_daily() -> Self {
        Self {
            cycles: vec![Cycle::weekly(), Cycle::daily()],
        }
    }

    pub fn num_cycles(&self) -> usize {
        self.cycles.len()
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.cycles.len()
    }

    pub fn cycles(&self) -> &[Cycle] {
        &self.cycles
    }
}

impl Default for CycleSpec {
    fn default() -> Self {
        Self::weekly_daily()
    }
}

/// Relative position of `p` within cycle `cycle_index`, in `(0, 1]`.
pub fn phase(p: TimePeriod, spec: &CycleSpec, cycle_index: usize) -> Result<f64, TemporalError> {
    let cycle = spec.cycles.get(cycle_index).ok_or(TemporalError::OutOfRange {
        what: "cycle index",
        value: cycle_index,
        limit: spec.num_cycles(),
    })?;
    Ok(cycle.position(p) as f64 / cycle.length as f64)
}

/// `[cos 2πa₁, sin 2πa₁, …, cos 2πa_m, sin 2πa_m]`.
pub fn euler_embed(p: TimePeriod, spec: &CycleSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.embedding_dim());
    for cycle in &spec.cycles {
        let angle = TAU * cycle.position(p) as f64 / cycle.length as f64;
        out.push(angle.cos());
        out.push(angle.sin());
    }
    out
}

/// Indicator vector of length 35.
pub fn one_hot_embed(p: TimePeriod) -> Vec<f64> {
    let mut out = vec![0.0; NUM_PERIODS];
    out[p.index()] = 1.0;
    out
}

/// How periods are encoded before they reach the hypernetwork.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    #[default]
    Euler,
    OneHot,
}

impl EmbeddingMode {
    pub fn dim(self) -> usize {
        match self {
            EmbeddingMode::Euler => CycleSpec::weekly_daily().embedding_dim(),
            EmbeddingMode::OneHot => NUM_PERIODS,
        }
    }

    pub fn embed(self, p: TimePeriod) -> Vec<f64> {
        match self {
            EmbeddingMode::Euler => euler_embed(p, &CycleSpec::weekly_daily()),
            EmbeddingMode::OneHot => one_hot_embed(p),
        }
    }

    /// Embeddings of all 35 periods, indexed by period.
    pub fn table(self) -> Vec<Vec<f64>> {
        TimePeriod::all().map(|p| self.embed(p)).collect()
    }
}
