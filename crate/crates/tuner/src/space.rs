use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::TunerError;

/// Worker count and batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Config {
    pub workers: u32,
    pub batch: u32,
}

impl Config {
    pub fn new(workers: u32, batch: u32) -> Config {
        Config { workers, batch }
    }
}

impl std::fmt::Display for Config {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(W={}, B={})", self.workers, self.batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub w_max: u32,
    pub b_max: u32,
}

impl SearchSpace {
    pub fn new(w_max: u32, b_max: u32) -> Result<SearchSpace, TunerError> {
        if w_max == 0 || b_max == 0 {
            return Err(TunerError::InvalidSpace(format!("empty grid {w_max}x{b_max}")));
        }
        Ok(SearchSpace { w_max, b_max })
    }

    pub fn len(&self) -> usize {
        (self.w_max * self.b_max) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, c: Config) -> bool {
        (1..=self.w_max).contains(&c.workers) && (1..=self.b_max).contains(&c.batch)
    }

    /// Every configuration, lexicographically by (W, B).
    pub fn configs(&self) -> impl Iterator<Item = Config> + '_ {
        (1..=self.w_max).flat_map(move |w| (1..=self.b_max).map(move |b| Config::new(w, b)))
    }

    /// Position of `c` in the unit square.
    pub fn scale(&self, c: Config) -> [f64; 2] {
        let unit = |v: u32, max: u32| if max <= 1 { 0.0 } else { f64::from(v - 1) / f64::from(max - 1) };
        [unit(c.workers, self.w_max), unit(c.batch, self.b_max)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config: Config,
    /// Transactions per second over the window.
    pub throughput: f64,
    pub window: Duration,
}
