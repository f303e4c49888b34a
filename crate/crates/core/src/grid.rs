use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Uniform dyadic partition of [0, T] with 2^m steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct TimeGrid {
    horizon: f64,
    level: u32,
    points: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    horizon: f64,
    level: u32,
}

impl TryFrom<GridSpec> for TimeGrid {
    type Error = crate::Error;
    fn try_from(g: GridSpec) -> Result<Self> {
        TimeGrid::new(g.horizon, g.level)
    }
}

impl From<TimeGrid> for GridSpec {
    fn from(g: TimeGrid) -> Self {
        GridSpec {
            horizon: g.horizon,
            level: g.level,
        }
    }
}

pub const MAX_LEVEL: u32 = 24;

impl TimeGrid {
    pub fn new(horizon: f64, level: u32) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return param(format!("time horizon must be positive, got {horizon}"));
        }
        if !(1..=MAX_LEVEL).contains(&level) {
            return param(format!("grid level must lie in 1..={MAX_LEVEL}, got {level}"));
        }
        let steps = 1usize << level;
        let dt = horizon / steps as f64;
        let mut points: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
        points[steps] = horizon;
        Ok(Self {
            horizon,
            level,
            points,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn steps(&self) -> usize {
        1usize << self.level
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn time(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Grid index of time `t`; rejects times off the grid by more than a
    /// rounding margin.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt();
        let i = x.round();
        if !(0.0..=self.steps() as f64).contains(&i) || (x - i).abs() > 1e-9 {
            return param(format!(
                "time {t} is not a point of the grid (T = {}, m = {})",
                self.horizon, self.level
            ));
        }
        Ok(i as usize)
    }

    /// Coarser dyadic grid over the same horizon.
    pub fn coarsen(&self, level: u32) -> Result<TimeGrid> {
        if level > self.level {
            return param(format!("cannot coarsen level {} to finer level {level}", self.level));
        }
        TimeGrid::new(self.horizon, level)
    }

    /// Number of fine steps per step of `coarse`, if `coarse` is a dyadic
    /// coarsening of this grid.
    pub fn refinement_factor(&self, coarse: &TimeGrid) -> Result<usize> {
        if coarse.level > self.level || (coarse.horizon - self.horizon).abs() > 1e-12 * self.horizon {
            return param(format!(
                "grid (T = {}, m = {}) is not a coarsening of (T = {}, m = {})",
                coarse.horizon, coarse.level, self.horizon, self.level
            ));
        }
        Ok(1usize << (self.level - coarse.level))
    }
}
