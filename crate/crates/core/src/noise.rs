//! Seeded Brownian increments and the martingale increments `H_{i+1}` fed to
//! the backward schemes.
//!
//! Every normal draw is keyed by `(seed, path, step, coordinate)`: the path
//! index selects a ChaCha8 stream and the `(step, coordinate)` pair fixes the
//! word position inside it, so a batch is bit-identical whatever the number of
//! worker threads. Normals come from the cosine branch of Box–Muller, one
//! normal per two `u64` draws.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::erf::{erf, erfc};

use crate::error::{invalid, Result};
use crate::grid::PartitionGrid;

/// Default constant of the logarithmic truncation schedule.
pub const DEFAULT_LOG_SCHEDULE_R0: f64 = 2.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian,
    /// Gaussian increments whose coordinates are clamped at `±R(h)`.
    TruncatedGaussian {
        r0: f64,
        log_schedule: bool,
    },
    /// `±sqrt(h)` with probability one half each; scalar noise only.
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub brownian_dim: usize,
}

impl NoiseModel {
    pub fn gaussian(brownian_dim: usize) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            brownian_dim,
        }
    }

    pub fn rademacher() -> Self {
        Self {
            kind: NoiseKind::Rademacher,
            brownian_dim: 1,
        }
    }

    pub fn truncated(brownian_dim: usize, r0: f64, log_schedule: bool) -> Self {
        Self {
            kind: NoiseKind::TruncatedGaussian { r0, log_schedule },
            brownian_dim,
        }
    }

    /// Checks internal consistency and assumption (AH).2 at step size `h`.
    pub fn validate(&self, h: f64) -> Result<()> {
        if self.brownian_dim == 0 {
            return Err(invalid("brownian dimension must be at least 1"));
        }
        match self.kind {
            NoiseKind::Rademacher if self.brownian_dim != 1 => Err(invalid(format!(
                "rademacher noise requires d = 1, got d = {}",
                self.brownian_dim
            ))),
            NoiseKind::TruncatedGaussian { r0, .. } => {
                if !(r0.is_finite() && r0 > 0.0) {
                    return Err(invalid(format!(
                        "truncation constant must be positive, got {r0}"
                    )));
                }
                let radius = truncation_radius(self, h)?;
                let lambda = lambda_of_truncation(radius, h);
                if lambda < 0.5 {
                    return Err(invalid(format!(
                        "truncation radius {radius} at h = {h} gives Lambda = {lambda} < 1/2"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Second-moment factor `Λ` of `H h` at step size `h`.
    pub fn lambda(&self, h: f64) -> Result<f64> {
        match self.kind {
            NoiseKind::TruncatedGaussian { .. } => {
                Ok(lambda_of_truncation(truncation_radius(self, h)?, h))
            }
            _ => Ok(1.0),
        }
    }
}

/// Effective clamp radius `R(h)` of a truncated model.
///
/// With the log schedule, `R(h) = R0 sqrt(h (1 + ln(1/h)))` for `h < 1` and
/// `R0 sqrt(h)` otherwise; without it the radius is the fixed `R0`.
pub fn truncation_radius(model: &NoiseModel, h: f64) -> Result<f64> {
    match model.kind {
        NoiseKind::TruncatedGaussian { r0, log_schedule } => {
            if h.is_nan() || h <= 0.0 {
                return Err(invalid(format!("step size must be positive, got {h}")));
            }
            if !log_schedule {
                return Ok(r0);
            }
            if h < 1.0 {
                Ok(r0 * (h * (1.0 + (1.0 / h).ln())).sqrt())
            } else {
                Ok(r0 * h.sqrt())
            }
        }
        _ => Err(invalid(
            "truncation radius is only defined for truncated noise",
        )),
    }
}

/// `Λ = E[clamp(X, -R, R)^2] / h` for `X ~ N(0, h)`, in closed form.
pub fn lambda_of_truncation(radius: f64, h: f64) -> f64 {
    let a = radius / h.sqrt();
    let phi = INV_SQRT_2PI * (-0.5 * a * a).exp();
    // E[G^2 1{|G|<=a}] + a^2 P(|G|>a) for a standard normal G
    let inside = erf(a * FRAC_1_SQRT_2) - 2.0 * a * phi;
    let outside = a * a * erfc(a * FRAC_1_SQRT_2);
    (inside + outside).min(1.0)
}

/// Per-coordinate `E[|ΔW/h - H|^2]` for clamping at `radius`.
///
/// This is the quantity bounded in (AH).3; it is exposed per configuration
/// rather than compared against a fixed constant.
pub fn increment_gap_second_moment(radius: f64, h: f64) -> f64 {
    let a = radius / h.sqrt();
    let phi = INV_SQRT_2PI * (-0.5 * a * a).exp();
    // E[(G - clamp(G, a))^2] = 2 [(1 + a^2) Q(a) - a phi(a)]
    let excess = (1.0 + a * a) * erfc(a * FRAC_1_SQRT_2) - 2.0 * a * phi;
    excess.max(0.0) / h
}

/// Brownian increments `dW` and martingale increments `H` on a grid.
///
/// Entries are stored step-major: index `(step * dim + coord) * paths + path`.
#[derive(Debug, Clone)]
pub struct IncrementBatch {
    paths: usize,
    steps: usize,
    dim: usize,
    h: f64,
    lambda: f64,
    model: NoiseModel,
    dw: Vec<f64>,
    /// Only materialised when `H != dW / h`.
    clamped: Option<Vec<f64>>,
}

impl IncrementBatch {
    /// Assembles a batch from explicit Brownian increments (step-major layout).
    pub fn from_increments(
        grid: &PartitionGrid,
        paths: usize,
        model: NoiseModel,
        dw: Vec<f64>,
    ) -> Result<Self> {
        model.validate(grid.h())?;
        let expected = paths * grid.steps() * model.brownian_dim;
        if dw.len() != expected {
            return Err(invalid(format!(
                "increment buffer has {} entries, expected {expected}",
                dw.len()
            )));
        }
        let h = grid.h();
        let clamped = match model.kind {
            NoiseKind::TruncatedGaussian { .. } => {
                let radius = truncation_radius(&model, h)?;
                Some(dw.iter().map(|w| w.clamp(-radius, radius)).collect())
            }
            _ => None,
        };
        Ok(Self {
            paths,
            steps: grid.steps(),
            dim: model.brownian_dim,
            h,
            lambda: model.lambda(h)?,
            model,
            dw,
            clamped,
        })
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    fn offset(&self, step: usize, coord: usize) -> usize {
        (step * self.dim + coord) * self.paths
    }

    /// Brownian increments of `step` (the increment ending at `t_{step+1}`).
    pub fn dw(&self, step: usize, coord: usize) -> &[f64] {
        let o = self.offset(step, coord);
        &self.dw[o..o + self.paths]
    }

    pub fn dw_entry(&self, path: usize, step: usize, coord: usize) -> f64 {
        self.dw[self.offset(step, coord) + path]
    }

    /// Martingale increments `H_{step+1}` for every path.
    pub fn martingale(&self, step: usize, coord: usize) -> Vec<f64> {
        let o = self.offset(step, coord);
        let src = match &self.clamped {
            Some(c) => &c[o..o + self.paths],
            None => &self.dw[o..o + self.paths],
        };
        src.iter().map(|w| w / self.h).collect()
    }

    pub fn martingale_entry(&self, path: usize, step: usize, coord: usize) -> f64 {
        let i = self.offset(step, coord) + path;
        match &self.clamped {
            Some(c) => c[i] / self.h,
            None => self.dw[i] / self.h,
        }
    }

    /// Aggregates the increments onto the nested coarse grid.
    ///
    /// Each coarse increment is the exact sum of the fine increments it
    /// covers; `H` is recomputed from the summed increment.
    pub fn coarsen(&self, fine: &PartitionGrid, coarse: &PartitionGrid) -> Result<Self> {
        if fine.steps() != self.steps {
            return Err(invalid("fine grid does not match the batch"));
        }
        if !fine.refines(coarse) {
            return Err(invalid(format!(
                "grid with {} steps is not nested in grid with {} steps",
                coarse.steps(),
                fine.steps()
            )));
        }
        if matches!(self.model.kind, NoiseKind::Rademacher) && coarse.steps() != fine.steps() {
            return Err(invalid("rademacher increments cannot be aggregated"));
        }
        let factor = fine.steps() / coarse.steps();
        let mut dw = vec![0.0; self.paths * coarse.steps() * self.dim];
        for step in 0..coarse.steps() {
            for coord in 0..self.dim {
                let dst = (step * self.dim + coord) * self.paths;
                let out = &mut dw[dst..dst + self.paths];
                for k in 0..factor {
                    for (o, w) in out.iter_mut().zip(self.dw(step * factor + k, coord)) {
                        *o += w;
                    }
                }
            }
        }
        Self::from_increments(coarse, self.paths, self.model, dw)
    }
}

fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

fn unit_closed_open(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

fn path_draws(seed: u64, path: usize, count: usize, sqrt_h: f64, kind: NoiseKind) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    (0..count)
        .map(|_| {
            let u1 = rng.next_u64();
            let u2 = rng.next_u64();
            match kind {
                NoiseKind::Rademacher => {
                    if u1 >> 63 == 1 {
                        sqrt_h
                    } else {
                        -sqrt_h
                    }
                }
                _ => {
                    let radius = (-2.0 * unit_open(u1).ln()).sqrt();
                    sqrt_h * radius * (2.0 * PI * unit_closed_open(u2)).cos()
                }
            }
        })
        .collect()
}

/// Draws `paths` independent noise paths on `grid`.
pub fn sample_increments(
    grid: &PartitionGrid,
    paths: usize,
    seed: u64,
    model: NoiseModel,
) -> Result<IncrementBatch> {
    if paths == 0 {
        return Err(invalid("at least one path is required"));
    }
    model.validate(grid.h())?;
    let per_path = grid.steps() * model.brownian_dim;
    let sqrt_h = grid.h().sqrt();
    let rows: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| path_draws(seed, p, per_path, sqrt_h, model.kind))
        .collect();
    let mut dw = vec![0.0; paths * per_path];
    for (p, row) in rows.iter().enumerate() {
        for (k, w) in row.iter().enumerate() {
            dw[k * paths + p] = *w;
        }
    }
    IncrementBatch::from_increments(grid, paths, model, dw)
}
