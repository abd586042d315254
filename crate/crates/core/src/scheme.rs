//! Backward recursions for `(Y, Z)`: the tamed explicit scheme, its untamed
//! variant and the implicit reference scheme.
//!
//! One step, given `Y_{i+1}` on every path:
//!
//! ```text
//! Z_i = E_i[(Y_{i+1} + (1 - θ') f^h(t_i, Y_{i+1}, 0) h) H_{i+1}]
//! Y_i = E_i[Y_{i+1} + f^h(t_i, Y_{i+1}, Z_i) h]          (explicit)
//! Y_i = E_i[Y_{i+1}] + f^h(t_i, Y_i, Z_i) h              (implicit)
//! ```
//!
//! The driver's `z` argument is the sum of the `Z` coordinates.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::driver::{DerivedConstants, DriverSpec, TamedDriver, TamingKind, TamingSpec};
use crate::error::{invalid, Error, Result};
use crate::forward::PathEnsemble;
use crate::regression::{Estimator, StepProjector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    ExplicitTamed,
    ExplicitUntamed,
    Implicit,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::ExplicitTamed => "explicit_tamed",
            SchemeKind::ExplicitUntamed => "explicit_untamed",
            SchemeKind::Implicit => "implicit",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit_tamed" => Ok(SchemeKind::ExplicitTamed),
            "explicit_untamed" => Ok(SchemeKind::ExplicitUntamed),
            "implicit" => Ok(SchemeKind::Implicit),
            _ => Err(invalid(format!("unknown scheme kind '{s}'"))),
        }
    }
}

/// Stopping rule of the per-path implicit solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub theta_prime: f64,
    pub solver: SolverSettings,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind, theta_prime: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta_prime) {
            return Err(invalid(format!(
                "theta' must lie in [0, 1], got {theta_prime}"
            )));
        }
        Ok(Self {
            kind,
            theta_prime,
            solver: SolverSettings::default(),
        })
    }
}

/// A base driver with a taming rule, instantiated per step size.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverFamily {
    pub base: DriverSpec,
    pub taming: TamingSpec,
}

impl DriverFamily {
    pub fn new(base: DriverSpec, taming: TamingSpec) -> Self {
        Self { base, taming }
    }

    pub fn untamed(base: DriverSpec) -> Self {
        Self::new(base, TamingSpec::none())
    }

    pub fn at(&self, h: f64) -> Result<TamedDriver> {
        TamedDriver::new(self.base.clone(), self.taming, h)
    }

    /// The driver a scheme actually uses: untamed runs ignore the taming.
    pub fn for_scheme(&self, scheme: &SchemeSpec, h: f64) -> Result<TamedDriver> {
        match scheme.kind {
            SchemeKind::ExplicitUntamed => TamedDriver::untamed(self.base.clone(), h),
            _ => self.at(h),
        }
    }
}

/// Solves `y = c + h g(y)` where `g` is the driver at fixed `z`.
///
/// Starts with a fixed-point iteration damped by the slope at `c`; once the
/// observed contraction factor exceeds 1/2 it switches to Newton's method
/// safeguarded by bisection on a bracketing interval. Returns the root and
/// the number of iterations, or `None` when the budget is exhausted.
pub fn solve_implicit(
    c: f64,
    h: f64,
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    settings: &SolverSettings,
) -> Option<(f64, usize)> {
    let tol = |y: f64| settings.tolerance * y.abs().max(1.0);
    let phi = |y: f64| y - c - h * g(y);

    let omega = 1.0 / (1.0 + h * dg(c).min(0.0).abs());
    let mut y = c;
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        let next = y + omega * (c + h * g(y) - y);
        if !next.is_finite() {
            break;
        }
        let step = (next - y).abs();
        y = next;
        if step <= tol(y) {
            return Some((y, iterations));
        }
        if iterations > 1 && step > 0.5 * last_step {
            break;
        }
        last_step = step;
    }

    // bracket the root of the increasing map phi around the best finite guess
    let start = if y.is_finite() && phi(y).abs() < phi(c).abs() {
        y
    } else {
        c
    };
    let f0 = phi(start);
    if f0 == 0.0 {
        return Some((start, iterations));
    }
    let (mut lo, mut hi) = (start, start);
    let mut width = start.abs().max(1.0) * 1e-3;
    let mut found = false;
    for _ in 0..2100 {
        let probe = if f0 > 0.0 {
            start - width
        } else {
            start + width
        };
        let fp = phi(probe);
        if !fp.is_finite() {
            break;
        }
        if fp.signum() != f0.signum() {
            if f0 > 0.0 {
                lo = probe;
            } else {
                hi = probe;
            }
            found = true;
            break;
        }
        if f0 > 0.0 {
            hi = probe;
        } else {
            lo = probe;
        }
        width *= 2.0;
    }
    if !found {
        return None;
    }
    let mut y = start;
    if !(lo < y && y < hi) {
        y = 0.5 * (lo + hi);
    }
    while iterations < settings.max_iterations {
        iterations += 1;
        let fy = phi(y);
        if fy == 0.0 {
            return Some((y, iterations));
        }
        if fy < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        let slope = 1.0 - h * dg(y);
        let newton = y - fy / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - y).abs();
        y = next;
        if step <= tol(y) || hi - lo <= tol(y) {
            return Some((y, iterations));
        }
    }
    None
}

/// Per-row inputs of one backward step.
pub(crate) struct StepInputs<'a> {
    pub step: usize,
    pub t: f64,
    pub y_next: &'a [f64],
    /// `H_{i+1}` per Brownian coordinate.
    pub martingale: &'a [Vec<f64>],
}

pub(crate) struct StepValues {
    pub z: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub max_iterations: usize,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn z_sums(z: &[Vec<f64>], rows: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows];
    for coord in z {
        for (o, v) in out.iter_mut().zip(coord) {
            *o += v;
        }
    }
    out
}

/// One step of the scheme with an abstract conditional expectation.
/// Returns `Ok(None)` when a non-finite value appears.
pub(crate) fn backward_step<E>(
    scheme: &SchemeSpec,
    driver: &TamedDriver,
    inputs: &StepInputs<'_>,
    expect: E,
) -> Result<Option<StepValues>>
where
    E: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let h = driver.h();
    let t = inputs.t;
    let rows = inputs.y_next.len();
    let weight = (1.0 - scheme.theta_prime) * h;

    let base: Vec<f64> = inputs
        .y_next
        .iter()
        .map(|&y| y + weight * driver.eval(t, y, 0.0))
        .collect();
    let mut z = Vec::with_capacity(inputs.martingale.len());
    for hc in inputs.martingale {
        let target: Vec<f64> = base.iter().zip(hc).map(|(b, hv)| b * hv).collect();
        if !all_finite(&target) {
            return Ok(None);
        }
        let zc = expect(&target)?;
        if !all_finite(&zc) {
            return Ok(None);
        }
        z.push(zc);
    }
    let zsum = z_sums(&z, rows);

    let (y, max_iterations) = match scheme.kind {
        SchemeKind::ExplicitTamed | SchemeKind::ExplicitUntamed => {
            let target: Vec<f64> = inputs
                .y_next
                .iter()
                .zip(&zsum)
                .map(|(&y, &zs)| y + h * driver.eval(t, y, zs))
                .collect();
            if !all_finite(&target) {
                return Ok(None);
            }
            (expect(&target)?, 0)
        }
        SchemeKind::Implicit => {
            if !all_finite(inputs.y_next) {
                return Ok(None);
            }
            let c = expect(inputs.y_next)?;
            if !all_finite(&c) {
                return Ok(None);
            }
            let zc = driver.base().z_coeff();
            let solved: Vec<Option<(f64, usize)>> = c
                .par_iter()
                .zip(zsum.par_iter())
                .map(|(&ci, &zs)| {
                    solve_implicit(
                        ci,
                        h,
                        |y| driver.tamed_y_part(y) + zc * zs,
                        |y| driver.tamed_y_derivative(y),
                        &scheme.solver,
                    )
                })
                .collect();
            let mut y = Vec::with_capacity(rows);
            let mut worst = 0;
            for (row, s) in solved.into_iter().enumerate() {
                match s {
                    Some((v, it)) => {
                        y.push(v);
                        worst = worst.max(it);
                    }
                    None => {
                        return Err(Error::ImplicitSolver {
                            path: row,
                            step: inputs.step,
                            iterations: scheme.solver.max_iterations,
                        })
                    }
                }
            }
            (y, worst)
        }
    };
    if !all_finite(&y) {
        return Ok(None);
    }
    Ok(Some(StepValues {
        z,
        y,
        max_iterations,
    }))
}

/// Checks the contraction guard `h max(0, M_y) < 1` of the implicit scheme.
pub(crate) fn check_implicit_guard(scheme: &SchemeSpec, driver: &TamedDriver) -> Result<()> {
    if scheme.kind == SchemeKind::Implicit {
        let m_y = driver.base().constants().m_y;
        let product = driver.h() * m_y.max(0.0);
        if product.is_nan() || product >= 1.0 {
            return Err(invalid(format!(
                "implicit scheme needs h * max(0, M_y) < 1, got h = {} and M_y = {m_y}",
                driver.h()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub min_y: f64,
    pub max_y: f64,
    pub max_abs_y: f64,
    /// Rank of the conditional-expectation operator.
    pub rank: usize,
    /// Largest number of implicit-solver iterations over the paths.
    pub iterations: usize,
}

/// `Y` and `Z` on every path and time step.
///
/// Storage is step-major. After an explosion the steps that were not
/// computed hold `NaN`.
#[derive(Debug, Clone)]
pub struct SchemeOutput {
    paths: usize,
    steps: usize,
    dim: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    diagnostics: Vec<Option<StepDiagnostics>>,
    exploded_at: Option<usize>,
}

impl SchemeOutput {
    fn new(paths: usize, steps: usize, dim: usize) -> Self {
        Self {
            paths,
            steps,
            dim,
            y: vec![f64::NAN; (steps + 1) * paths],
            z: vec![f64::NAN; steps * dim * paths],
            diagnostics: vec![None; steps + 1],
            exploded_at: None,
        }
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

    pub fn y(&self, step: usize) -> &[f64] {
        &self.y[step * self.paths..(step + 1) * self.paths]
    }

    pub fn z(&self, step: usize, coord: usize) -> &[f64] {
        let o = (step * self.dim + coord) * self.paths;
        &self.z[o..o + self.paths]
    }

    /// Step at which a non-finite value first appeared.
    pub fn exploded_at(&self) -> Option<usize> {
        self.exploded_at
    }

    pub fn exploded(&self) -> bool {
        self.exploded_at.is_some()
    }

    pub fn diagnostics(&self, step: usize) -> Option<&StepDiagnostics> {
        self.diagnostics[step].as_ref()
    }

    fn set_y(&mut self, step: usize, values: &[f64], rank: usize, iterations: usize) {
        let m = self.paths;
        self.y[step * m..(step + 1) * m].copy_from_slice(values);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        self.diagnostics[step] = Some(StepDiagnostics {
            min_y: lo,
            max_y: hi,
            max_abs_y: lo.abs().max(hi.abs()),
            rank,
            iterations,
        });
    }

    fn set_z(&mut self, step: usize, coord: usize, values: &[f64]) {
        let o = (step * self.dim + coord) * self.paths;
        self.z[o..o + self.paths].copy_from_slice(values);
    }
}

pub fn run_backward(
    scheme: &SchemeSpec,
    family: &DriverFamily,
    ensemble: &PathEnsemble,
    xi: &[f64],
    estimator: &Estimator,
) -> Result<SchemeOutput> {
    let grid = ensemble.grid();
    let batch = ensemble.increments();
    let m = ensemble.paths();
    let n = grid.steps();
    if xi.len() != m {
        return Err(invalid(format!(
            "terminal vector has {} entries for {m} paths",
            xi.len()
        )));
    }
    let driver = family.for_scheme(scheme, grid.h())?;
    check_implicit_guard(scheme, &driver)?;

    let mut out = SchemeOutput::new(m, n, batch.dim());
    if !all_finite(xi) {
        out.exploded_at = Some(n);
        return Ok(out);
    }
    out.set_y(n, xi, 0, 0);
    for i in (0..n).rev() {
        let projector = StepProjector::new(estimator, ensemble.state(i))?;
        let martingale: Vec<Vec<f64>> = (0..batch.dim()).map(|c| batch.martingale(i, c)).collect();
        let y_next = out.y(i + 1).to_vec();
        let inputs = StepInputs {
            step: i,
            t: grid.time(i),
            y_next: &y_next,
            martingale: &martingale,
        };
        match backward_step(scheme, &driver, &inputs, |v| projector.apply(v))? {
            Some(values) => {
                for (c, zc) in values.z.iter().enumerate() {
                    out.set_z(i, c, zc);
                }
                out.set_y(i, &values.y, projector.rank(), values.max_iterations);
            }
            None => {
                out.exploded_at = Some(i);
                return Ok(out);
            }
        }
    }
    Ok(out)
}

/// Martingale-representation coefficient `ζ_i` of each step and the gap
/// `D_i = Z_i - ζ_i`.
#[derive(Debug, Clone)]
pub struct ZetaDiagnostic {
    /// `zeta[i][c][path]`.
    pub zeta: Vec<Vec<Vec<f64>>>,
    /// `gap[i][c][path]`.
    pub gap: Vec<Vec<Vec<f64>>>,
    /// Sample mean of `|D_i|² h` per step.
    pub norms: Vec<f64>,
}

pub(crate) fn zeta_target(
    driver: &TamedDriver,
    t: f64,
    y_next: &[f64],
    zsum: &[f64],
    hc: &[f64],
) -> Vec<f64> {
    let h = driver.h();
    y_next
        .iter()
        .zip(zsum)
        .zip(hc)
        .map(|((&y, &zs), &hv)| (y + h * driver.eval(t, y, zs)) * hv)
        .collect()
}

pub fn zeta_diagnostic(
    output: &SchemeOutput,
    scheme: &SchemeSpec,
    family: &DriverFamily,
    ensemble: &PathEnsemble,
    estimator: &Estimator,
) -> Result<ZetaDiagnostic> {
    if output.exploded() {
        return Err(invalid("zeta diagnostic needs a run without explosion"));
    }
    let grid = ensemble.grid();
    let batch = ensemble.increments();
    let driver = family.for_scheme(scheme, grid.h())?;
    let n = grid.steps();
    let m = output.paths();
    let mut zeta = Vec::with_capacity(n);
    let mut gap = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let projector = StepProjector::new(estimator, ensemble.state(i))?;
        let zs: Vec<Vec<f64>> = (0..output.dim()).map(|c| output.z(i, c).to_vec()).collect();
        let zsum = z_sums(&zs, m);
        let mut zeta_i = Vec::new();
        let mut gap_i = Vec::new();
        let mut sq = 0.0;
        for (c, zc) in zs.iter().enumerate() {
            let target = zeta_target(
                &driver,
                grid.time(i),
                output.y(i + 1),
                &zsum,
                &batch.martingale(i, c),
            );
            let zeta_c = projector.apply(&target)?;
            let d: Vec<f64> = zc.iter().zip(&zeta_c).map(|(a, b)| a - b).collect();
            sq += d.iter().map(|v| v * v).sum::<f64>();
            zeta_i.push(zeta_c);
            gap_i.push(d);
        }
        norms.push(sq / m as f64 * grid.h());
        zeta.push(zeta_i);
        gap.push(gap_i);
    }
    Ok(ZetaDiagnostic { zeta, gap, norms })
}

/// Per-step extrema of `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub global_min: f64,
}

/// Extrema of `Y` over paths (or nodes) for each step, indexed by step.
pub fn extrema<'a>(levels: impl Iterator<Item = &'a [f64]>) -> PositivityReport {
    let mut min = Vec::new();
    let mut max = Vec::new();
    for level in levels {
        min.push(level.iter().copied().fold(f64::INFINITY, f64::min));
        max.push(level.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    let global_min = min.iter().copied().fold(f64::INFINITY, f64::min);
    PositivityReport {
        min,
        max,
        global_min,
    }
}

pub fn positivity_report(output: &SchemeOutput) -> PositivityReport {
    extrema((0..=output.steps()).map(|i| output.y(i)))
}

/// Constants `(c, C)` of the almost-sure size bound
/// `Y_i² + E_i[¼ Σ_{j≥i} |Z_j|² h] ≤ e^{c (T - t_i)} (E_i[|ξ|²] + C (T - t_i))`.
pub fn size_bound_constants(
    k: &DerivedConstants,
    theta_prime: f64,
    dim: usize,
    h: f64,
) -> (f64, f64) {
    let d = dim as f64;
    let tp = 1.0 - theta_prime;
    let z_weight = 3.0 * k.k_z * k.k_z + 2.0 * d * d * k.l_z * k.l_z;
    let c = 2.0 * k.mbar_y
        + 3.0 * k.k_y * k.k_y * h
        + 4.0 * d * d * theta_prime * theta_prime * k.k_y * k.k_y * h
        + z_weight * (2.0 * d + 4.0 * d * tp * tp * k.k_y * k.k_y * h * h);
    let big_c = 2.0 * k.mbar_t
        + 3.0 * k.k_t * k.k_t * h
        + 4.0 * d * d * theta_prime * theta_prime * k.k_t * k.k_t * h
        + z_weight * 4.0 * d * tp * tp * k.k_t * k.k_t * h * h;
    (c, big_c)
}

/// Left-hand side of the comparison step condition,
/// `h (L^h_y + L^h_z |H| + (1 - θ') h L^h_z |H| L^h_y)`.
pub fn comparison_condition(k: &DerivedConstants, theta_prime: f64, h: f64, max_abs_h: f64) -> f64 {
    h * (k.l_y + k.l_z * max_abs_h + (1.0 - theta_prime) * h * k.l_z * max_abs_h * k.l_y)
}

/// Whether the tamed driver is globally Lipschitz in `y` with the derived
/// constant (no remainder term), as the comparison result requires.
pub fn exact_lipschitz_in_y(d: &TamedDriver) -> bool {
    match d.taming().kind {
        TamingKind::InnerProj | TamingKind::OuterProj => true,
        TamingKind::None => d.base().degree() <= 1,
        _ => false,
    }
}
