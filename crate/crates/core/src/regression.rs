//! Least-squares estimation of conditional expectations `E_i[·]` from the
//! sampled states `X_{t_i}`.

use std::collections::HashMap;

use faer::{Col, Mat};

use crate::error::{invalid, Result};

/// Singular values below this fraction of the largest one are discarded.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

/// First `k` probabilists' Hermite polynomials `He_0 .. He_{k-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub k: usize,
    pub standardize: bool,
}

impl BasisSpec {
    pub fn new(k: usize, standardize: bool) -> Result<Self> {
        if k == 0 {
            return Err(invalid("basis needs at least one function"));
        }
        Ok(Self { k, standardize })
    }
}

/// Affine change of variable `x̃ = (x - mean) / scale` applied before the basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub const IDENTITY: Self = Self {
        mean: 0.0,
        scale: 1.0,
    };

    /// Sample mean and standard deviation; a degenerate sample is only centered.
    pub fn from_sample(x: &[f64], enabled: bool) -> Self {
        if !enabled || x.is_empty() {
            return Self::IDENTITY;
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd.is_finite() && sd > 1e-300 {
            sd
        } else {
            1.0
        };
        Self { mean, scale }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }
}

/// Writes `He_0(x) .. He_{k-1}(x)` into `out`.
pub fn hermite_row(x: f64, out: &mut [f64]) {
    let k = out.len();
    if k == 0 {
        return;
    }
    out[0] = 1.0;
    if k > 1 {
        out[1] = x;
    }
    for j in 1..k.saturating_sub(1) {
        out[j + 1] = x * out[j] - j as f64 * out[j - 1];
    }
}

fn design_with(basis: &BasisSpec, std: Standardization, x: &[f64]) -> Mat<f64> {
    let mut row = vec![0.0; basis.k];
    let mut a = Mat::zeros(x.len(), basis.k);
    for (m, &v) in x.iter().enumerate() {
        hermite_row(std.apply(v), &mut row);
        for (k, b) in row.iter().enumerate() {
            a[(m, k)] = *b;
        }
    }
    a
}

/// `M × K` matrix of basis values at the (optionally standardized) sample.
pub fn design_matrix(basis: &BasisSpec, x: &[f64]) -> Mat<f64> {
    design_with(basis, Standardization::from_sample(x, basis.standardize), x)
}

/// Coefficients of a least-squares fit plus conditioning diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub coeffs: Vec<f64>,
    pub standardization: Standardization,
    pub rank: usize,
    pub smallest_singular: f64,
}

/// Thin SVD of a design matrix, truncated to its numerical rank.
#[derive(Debug, Clone)]
struct TruncatedSvd {
    u: Mat<f64>,
    sigma: Vec<f64>,
    v: Mat<f64>,
}

impl TruncatedSvd {
    fn new(design: &Mat<f64>) -> Result<Self> {
        for c in 0..design.ncols() {
            for r in 0..design.nrows() {
                if !design[(r, c)].is_finite() {
                    return Err(invalid(format!(
                        "design matrix entry ({r}, {c}) is not finite"
                    )));
                }
            }
        }
        let k = design.ncols();
        if design.nrows() == 0 || k == 0 {
            return Ok(Self {
                u: Mat::zeros(design.nrows(), 0),
                sigma: Vec::new(),
                v: Mat::zeros(k, 0),
            });
        }
        let svd = design
            .thin_svd()
            .map_err(|e| invalid(format!("singular value decomposition failed: {e:?}")))?;
        let s = svd.S().column_vector();
        let values: Vec<f64> = (0..s.nrows()).map(|j| s[j]).collect();
        let largest = values.iter().copied().fold(0.0f64, f64::max);
        let keep: Vec<usize> = (0..values.len())
            .filter(|&j| largest > 0.0 && values[j] > SINGULAR_CUTOFF * largest)
            .collect();
        let (u_full, v_full) = (svd.U(), svd.V());
        let u = Mat::from_fn(design.nrows(), keep.len(), |r, c| u_full[(r, keep[c])]);
        let v = Mat::from_fn(k, keep.len(), |r, c| v_full[(r, keep[c])]);
        let sigma = keep.iter().map(|&j| values[j]).collect();
        Ok(Self { u, sigma, v })
    }

    fn rank(&self) -> usize {
        self.sigma.len()
    }

    fn smallest(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn coeffs(&self, b: &Col<f64>) -> Vec<f64> {
        let mut utb = self.u.transpose() * b;
        for (j, s) in self.sigma.iter().enumerate() {
            utb[j] /= s;
        }
        let c = &self.v * utb;
        (0..c.nrows()).map(|j| c[j]).collect()
    }

    fn fitted(&self, b: &Col<f64>) -> Vec<f64> {
        let utb = self.u.transpose() * b;
        let f = &self.u * utb;
        (0..f.nrows()).map(|j| f[j]).collect()
    }
}

fn check_targets(targets: &[f64], rows: usize) -> Result<Col<f64>> {
    if targets.len() != rows {
        return Err(invalid(format!(
            "design has {rows} rows but {} targets were given",
            targets.len()
        )));
    }
    if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!(
            "target {i} is not finite ({})",
            targets[i]
        )));
    }
    Ok(Col::from_fn(targets.len(), |j| targets[j]))
}

/// Minimum-norm least-squares solution of `design · c ≈ targets`.
pub fn fit_least_squares(design: &Mat<f64>, targets: &[f64]) -> Result<RegressionFit> {
    let b = check_targets(targets, design.nrows())?;
    let svd = TruncatedSvd::new(design)?;
    let mut coeffs = svd.coeffs(&b);
    coeffs.resize(design.ncols(), 0.0);
    Ok(RegressionFit {
        coeffs,
        standardization: Standardization::IDENTITY,
        rank: svd.rank(),
        smallest_singular: svd.smallest(),
    })
}

pub fn predict(fit: &RegressionFit, basis: &BasisSpec, x: &[f64]) -> Result<Vec<f64>> {
    if fit.coeffs.len() != basis.k {
        return Err(invalid(format!(
            "fit has {} coefficients but the basis has {} functions",
            fit.coeffs.len(),
            basis.k
        )));
    }
    let mut row = vec![0.0; basis.k];
    Ok(x.iter()
        .map(|&v| {
            hermite_row(fit.standardization.apply(v), &mut row);
            row.iter().zip(&fit.coeffs).map(|(a, c)| a * c).sum()
        })
        .collect())
}

/// Least-squares projection onto the basis at one time step, reusable for
/// several targets regressed on the same sample.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: BasisSpec,
    standardization: Standardization,
    svd: TruncatedSvd,
}

impl Projector {
    pub fn new(basis: &BasisSpec, x: &[f64]) -> Result<Self> {
        let standardization = Standardization::from_sample(x, basis.standardize);
        let design = design_with(basis, standardization, x);
        Ok(Self {
            basis: *basis,
            standardization,
            svd: TruncatedSvd::new(&design)?,
        })
    }

    pub fn rank(&self) -> usize {
        self.svd.rank()
    }

    pub fn fit(&self, targets: &[f64]) -> Result<RegressionFit> {
        let b = check_targets(targets, self.svd.u.nrows())?;
        let mut coeffs = self.svd.coeffs(&b);
        coeffs.resize(self.basis.k, 0.0);
        Ok(RegressionFit {
            coeffs,
            standardization: self.standardization,
            rank: self.svd.rank(),
            smallest_singular: self.svd.smallest(),
        })
    }

    /// Fitted values at the sample points.
    pub fn project(&self, targets: &[f64]) -> Result<Vec<f64>> {
        let b = check_targets(targets, self.svd.u.nrows())?;
        Ok(self.svd.fitted(&b))
    }
}

/// How conditional expectations are estimated at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Regression(BasisSpec),
    /// Exact averaging over paths sharing the same state; a full indicator
    /// basis, meaningful when the states take finitely many values.
    Grouping,
}

/// The conditional-expectation operator of one time step.
#[derive(Debug, Clone)]
pub enum StepProjector {
    Regression(Projector),
    Grouping {
        group_of: Vec<usize>,
        counts: Vec<f64>,
    },
}

impl StepProjector {
    pub fn new(estimator: &Estimator, x: &[f64]) -> Result<Self> {
        match estimator {
            Estimator::Regression(basis) => Ok(Self::Regression(Projector::new(basis, x)?)),
            Estimator::Grouping => {
                let mut ids: HashMap<u64, usize> = HashMap::new();
                let mut counts = Vec::new();
                let group_of = x
                    .iter()
                    .map(|&v| {
                        // +0.0 and -0.0 are the same state
                        let key = if v == 0.0 { 0u64 } else { v.to_bits() };
                        let next = ids.len();
                        let id = *ids.entry(key).or_insert(next);
                        if id == counts.len() {
                            counts.push(0.0);
                        }
                        counts[id] += 1.0;
                        id
                    })
                    .collect();
                Ok(Self::Grouping { group_of, counts })
            }
        }
    }

    /// Numerical rank of the operator (number of groups for grouping).
    pub fn rank(&self) -> usize {
        match self {
            Self::Regression(p) => p.rank(),
            Self::Grouping { counts, .. } => counts.len(),
        }
    }

    /// Estimated `E_i[target]` on every path.
    pub fn apply(&self, target: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Regression(p) => p.project(target),
            Self::Grouping { group_of, counts } => {
                check_targets(target, group_of.len())?;
                let mut sums = vec![0.0; counts.len()];
                for (g, v) in group_of.iter().zip(target) {
                    sums[*g] += v;
                }
                Ok(group_of.iter().map(|&g| sums[g] / counts[g]).collect())
            }
        }
    }
}
