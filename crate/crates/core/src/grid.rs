//! Uniform time partitions of `[0, T]`.

use crate::error::{invalid, Result};

/// Uniform partition `t_i = i * h`, `h = T / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionGrid {
    horizon: f64,
    steps: usize,
    h: f64,
    times: Vec<f64>,
}

impl PartitionGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("number of steps must be at least 1"));
        }
        let h = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps)
            .map(|i| i as f64 * horizon / steps as f64)
            .collect();
        // pin the endpoint so that t_N == T exactly
        times[steps] = horizon;
        Ok(Self {
            horizon,
            steps,
            h,
            times,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Whether every point of `coarse` is also a point of `self`.
    pub fn refines(&self, coarse: &PartitionGrid) -> bool {
        self.horizon == coarse.horizon && self.steps.is_multiple_of(coarse.steps)
    }
}

/// Builds the uniform grid with `steps` intervals on `[0, horizon]`.
pub fn build_grid(horizon: f64, steps: usize) -> Result<PartitionGrid> {
    PartitionGrid::new(horizon, steps)
}
