//! Euler simulation of the scalar forward SDE `dX = b(X) dt + σ(X) dW`
//! with affine coefficients, and evaluation of the terminal condition.

use crate::error::{invalid, Error, Result};
use crate::grid::PartitionGrid;
use crate::noise::IncrementBatch;
use crate::poly::Polynomial;

/// States beyond this magnitude abort the simulation.
pub const OVERFLOW_THRESHOLD: f64 = 1e12;

/// `b(x) = b0 + b1 x`, `σ(x) = s0 + s1 x`.
///
/// With several Brownian coordinates the same `σ` multiplies each of them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeSpec {
    pub x0: f64,
    pub b0: f64,
    pub b1: f64,
    pub s0: f64,
    pub s1: f64,
    pub brownian_dim: usize,
}

impl SdeSpec {
    pub fn brownian(x0: f64, sigma: f64) -> Self {
        Self {
            x0,
            b0: 0.0,
            b1: 0.0,
            s0: sigma,
            s1: 0.0,
            brownian_dim: 1,
        }
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.b0 + self.b1 * x
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        self.s0 + self.s1 * x
    }

    /// Additive noise with constant drift: the Euler chain recombines.
    pub fn state_independent(&self) -> bool {
        self.b1 == 0.0 && self.s1 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x0, self.b0, self.b1, self.s0, self.s1];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("SDE coefficients must be finite"));
        }
        if self.brownian_dim == 0 {
            return Err(invalid("brownian dimension must be at least 1"));
        }
        Ok(())
    }
}

/// Polynomial terminal function `g`, degree at most 4.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSpec {
    g: Polynomial,
}

impl TerminalSpec {
    pub const MAX_DEGREE: usize = 4;

    pub fn new(coeffs: &[f64]) -> Result<Self> {
        let g = Polynomial::new(coeffs);
        if !g.is_finite() {
            return Err(invalid("terminal coefficients must be finite"));
        }
        if g.degree() > Self::MAX_DEGREE {
            return Err(invalid(format!(
                "terminal polynomial has degree {}, at most {} is supported",
                g.degree(),
                Self::MAX_DEGREE
            )));
        }
        Ok(Self { g })
    }

    pub fn poly(&self) -> &Polynomial {
        &self.g
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.g.eval(x)
    }

    /// Whether `g` is globally Lipschitz (degree at most one).
    pub fn lipschitz_on_paper_terms(&self) -> bool {
        self.g.degree() <= 1
    }
}

/// Forward paths on a grid together with the noise that drove them.
///
/// States are stored step-major: `state(i)` is the slice of all paths at `t_i`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: PartitionGrid,
    batch: IncrementBatch,
    states: Vec<f64>,
}

impl PathEnsemble {
    /// Wraps precomputed states, e.g. the nodes of a tree.
    pub fn from_states(
        grid: PartitionGrid,
        batch: IncrementBatch,
        states: Vec<f64>,
    ) -> Result<Self> {
        if batch.steps() != grid.steps() || states.len() != (grid.steps() + 1) * batch.paths() {
            return Err(invalid("state buffer does not match the grid and batch"));
        }
        Ok(Self {
            grid,
            batch,
            states,
        })
    }

    pub fn grid(&self) -> &PartitionGrid {
        &self.grid
    }

    pub fn increments(&self) -> &IncrementBatch {
        &self.batch
    }

    pub fn paths(&self) -> usize {
        self.batch.paths()
    }

    pub fn state(&self, step: usize) -> &[f64] {
        let m = self.paths();
        &self.states[step * m..(step + 1) * m]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.steps())
    }
}

pub fn euler_simulate(
    sde: &SdeSpec,
    grid: &PartitionGrid,
    batch: &IncrementBatch,
) -> Result<PathEnsemble> {
    sde.validate()?;
    if batch.steps() != grid.steps() || (batch.h() - grid.h()).abs() > 1e-12 * grid.horizon() {
        return Err(invalid(format!(
            "increment batch has {} steps, grid has {}",
            batch.steps(),
            grid.steps()
        )));
    }
    if batch.dim() != sde.brownian_dim {
        return Err(invalid(format!(
            "increment batch has dimension {}, SDE expects {}",
            batch.dim(),
            sde.brownian_dim
        )));
    }
    let m = batch.paths();
    let n = grid.steps();
    let h = grid.h();
    let mut states = vec![0.0; (n + 1) * m];
    states[..m].fill(sde.x0);
    let mut noise = vec![0.0; m];
    for i in 0..n {
        noise.fill(0.0);
        for c in 0..batch.dim() {
            for (acc, w) in noise.iter_mut().zip(batch.dw(i, c)) {
                *acc += w;
            }
        }
        let (done, rest) = states.split_at_mut((i + 1) * m);
        let prev = &done[i * m..];
        let next = &mut rest[..m];
        for p in 0..m {
            let x = prev[p];
            let v = x + sde.drift(x) * h + sde.diffusion(x) * noise[p];
            if !v.is_finite() || v.abs() > OVERFLOW_THRESHOLD {
                return Err(Error::NumericOverflow {
                    path: p,
                    step: i + 1,
                    value: v,
                });
            }
            next[p] = v;
        }
    }
    Ok(PathEnsemble {
        grid: grid.clone(),
        batch: batch.clone(),
        states,
    })
}

pub fn terminal_values(g: &TerminalSpec, ensemble: &PathEnsemble) -> Vec<f64> {
    ensemble.terminal().iter().map(|&x| g.eval(x)).collect()
}
