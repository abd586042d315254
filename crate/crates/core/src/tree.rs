//! Exact conditional expectations on the binary tree generated by
//! Rademacher increments `±sqrt(h)`.
//!
//! Node `k` at level `i` of the non-recombining tree has children `k` (down
//! move) and `k + 2^i` (up move), so bit `i` of a path index is its move at
//! step `i`. When drift and volatility do not depend on the state the chain
//! recombines: node `k` counts up moves and has children `k` and `k + 1`.

use crate::driver::derive_constants;
use crate::error::{invalid, Result};
use crate::forward::{PathEnsemble, SdeSpec, TerminalSpec};
use crate::grid::PartitionGrid;
use crate::noise::{IncrementBatch, NoiseModel};
use crate::scheme::{
    backward_step, check_implicit_guard, comparison_condition, exact_lipschitz_in_y, extrema,
    zeta_target, DriverFamily, PositivityReport, SchemeKind, SchemeSpec, StepInputs,
};

/// Largest depth of a non-recombining tree.
pub const MAX_BRANCHING_STEPS: usize = 14;
/// Largest depth of a recombining tree.
pub const MAX_RECOMBINING_STEPS: usize = 2000;

#[derive(Debug, Clone)]
pub struct TreeModel {
    grid: PartitionGrid,
    recombining: bool,
    levels: Vec<Vec<f64>>,
}

impl TreeModel {
    pub fn new(sde: &SdeSpec, grid: &PartitionGrid) -> Result<Self> {
        Self::build(sde, grid, sde.state_independent())
    }

    /// Always branches, even when the chain could recombine.
    pub fn branching(sde: &SdeSpec, grid: &PartitionGrid) -> Result<Self> {
        Self::build(sde, grid, false)
    }

    fn build(sde: &SdeSpec, grid: &PartitionGrid, recombining: bool) -> Result<Self> {
        sde.validate()?;
        if sde.brownian_dim != 1 {
            return Err(invalid(
                "tree backend requires a single Brownian coordinate",
            ));
        }
        let n = grid.steps();
        let cap = if recombining {
            MAX_RECOMBINING_STEPS
        } else {
            MAX_BRANCHING_STEPS
        };
        if n > cap {
            return Err(invalid(format!(
                "tree with {n} steps exceeds the limit of {cap}"
            )));
        }
        let h = grid.h();
        let s = h.sqrt();
        let mut levels = vec![vec![sde.x0]];
        for i in 0..n {
            let prev = &levels[i];
            let mut next = if recombining {
                vec![0.0; i + 2]
            } else {
                vec![0.0; prev.len() * 2]
            };
            for (k, &x) in prev.iter().enumerate() {
                let mean = x + sde.drift(x) * h;
                let vol = sde.diffusion(x) * s;
                let (down, up) = if recombining {
                    (k, k + 1)
                } else {
                    (k, k + prev.len())
                };
                next[down] = mean - vol;
                next[up] = mean + vol;
            }
            levels.push(next);
        }
        Ok(Self {
            grid: grid.clone(),
            recombining,
            levels,
        })
    }

    pub fn grid(&self) -> &PartitionGrid {
        &self.grid
    }

    pub fn recombining(&self) -> bool {
        self.recombining
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn level_size(&self, i: usize) -> usize {
        self.levels[i].len()
    }

    /// `(down, up)` children of node `k` at level `i`.
    pub fn children(&self, i: usize, k: usize) -> (usize, usize) {
        if self.recombining {
            (k, k + 1)
        } else {
            (k, k + self.levels[i].len())
        }
    }

    /// Node visited at level `i` by path `p` (bits of `p` are the moves).
    pub fn node_of(&self, path: usize, i: usize) -> usize {
        let low = path & ((1usize << i) - 1);
        if self.recombining {
            low.count_ones() as usize
        } else {
            low
        }
    }

    /// All `2^N` paths of the tree as an ensemble with Rademacher noise.
    pub fn to_ensemble(&self) -> Result<PathEnsemble> {
        let n = self.grid.steps();
        if n > MAX_BRANCHING_STEPS {
            return Err(invalid(format!(
                "cannot enumerate the paths of a {n}-step tree"
            )));
        }
        let m = 1usize << n;
        let s = self.grid.h().sqrt();
        let mut dw = vec![0.0; m * n];
        let mut states = vec![0.0; m * (n + 1)];
        for p in 0..m {
            for i in 0..n {
                dw[i * m + p] = if (p >> i) & 1 == 1 { s } else { -s };
            }
            for i in 0..=n {
                states[i * m + p] = self.levels[i][self.node_of(p, i)];
            }
        }
        let batch = IncrementBatch::from_increments(&self.grid, m, NoiseModel::rademacher(), dw)?;
        PathEnsemble::from_states(self.grid.clone(), batch, states)
    }
}

/// `Y` and `Z` on the nodes of a tree.
#[derive(Debug, Clone)]
pub struct TreeOutput {
    /// `y[i][k]` for every level `0..=N`.
    pub y: Vec<Vec<f64>>,
    /// `z[i][k]` for levels `0..N`.
    pub z: Vec<Vec<f64>>,
    pub exploded_at: Option<usize>,
    /// Largest implicit-solver iteration count per level.
    pub iterations: Vec<usize>,
}

impl TreeOutput {
    pub fn positivity(&self) -> PositivityReport {
        extrema(
            self.y
                .iter()
                .filter(|l| !l.is_empty())
                .map(|l| l.as_slice()),
        )
    }
}

/// Children of level `i` laid out as rows: all down children, then all up children.
fn child_rows(tree: &TreeModel, i: usize, values: &[f64]) -> Vec<f64> {
    let n = tree.level_size(i);
    let mut rows = vec![0.0; 2 * n];
    for k in 0..n {
        let (d, u) = tree.children(i, k);
        rows[k] = values[d];
        rows[n + k] = values[u];
    }
    rows
}

fn pair_average(rows: &[f64]) -> Vec<f64> {
    let n = rows.len() / 2;
    let mut out = vec![0.0; rows.len()];
    for k in 0..n {
        let mean = 0.5 * (rows[k] + rows[n + k]);
        out[k] = mean;
        out[n + k] = mean;
    }
    out
}

fn martingale_rows(n: usize, h: f64) -> Vec<f64> {
    let s = 1.0 / h.sqrt();
    (0..2 * n).map(|r| if r < n { -s } else { s }).collect()
}

pub fn tree_exact_run(
    scheme: &SchemeSpec,
    family: &DriverFamily,
    tree: &TreeModel,
    g: &TerminalSpec,
) -> Result<TreeOutput> {
    let terminal: Vec<f64> = tree
        .level(tree.grid.steps())
        .iter()
        .map(|&x| g.eval(x))
        .collect();
    tree_run_with_terminal(scheme, family, tree, terminal)
}

/// Like [`tree_exact_run`] with explicit terminal values on the last level.
pub fn tree_run_with_terminal(
    scheme: &SchemeSpec,
    family: &DriverFamily,
    tree: &TreeModel,
    terminal: Vec<f64>,
) -> Result<TreeOutput> {
    let grid = &tree.grid;
    let n = grid.steps();
    if terminal.len() != tree.level_size(n) {
        return Err(invalid("terminal values do not match the last tree level"));
    }
    let driver = family.for_scheme(scheme, grid.h())?;
    check_implicit_guard(scheme, &driver)?;
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n];
    let mut iterations = vec![0; n];
    if terminal.iter().any(|v| !v.is_finite()) {
        y[n] = terminal;
        return Ok(TreeOutput {
            y,
            z,
            exploded_at: Some(n),
            iterations,
        });
    }
    y[n] = terminal;
    for i in (0..n).rev() {
        let size = tree.level_size(i);
        let rows = child_rows(tree, i, &y[i + 1]);
        let martingale = vec![martingale_rows(size, grid.h())];
        let inputs = StepInputs {
            step: i,
            t: grid.time(i),
            y_next: &rows,
            martingale: &martingale,
        };
        let step = backward_step(scheme, &driver, &inputs, |v| Ok(pair_average(v))).map_err(
            |e| match e {
                crate::Error::ImplicitSolver {
                    path,
                    step,
                    iterations,
                } => crate::Error::ImplicitSolver {
                    path: path % size,
                    step,
                    iterations,
                },
                other => other,
            },
        )?;
        match step {
            Some(values) => {
                y[i] = values.y[..size].to_vec();
                z[i] = values.z[0][..size].to_vec();
                iterations[i] = values.max_iterations;
            }
            None => {
                return Ok(TreeOutput {
                    y,
                    z,
                    exploded_at: Some(i),
                    iterations,
                })
            }
        }
    }
    Ok(TreeOutput {
        y,
        z,
        exploded_at: None,
        iterations,
    })
}

/// `ζ_i` and `D_i = Z_i - ζ_i` on the tree nodes, plus `E|D_i|² h` per level.
#[derive(Debug, Clone)]
pub struct TreeZeta {
    pub zeta: Vec<Vec<f64>>,
    pub gap: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

pub fn tree_zeta_diagnostic(
    output: &TreeOutput,
    scheme: &SchemeSpec,
    family: &DriverFamily,
    tree: &TreeModel,
) -> Result<TreeZeta> {
    if output.exploded_at.is_some() {
        return Err(invalid("zeta diagnostic needs a run without explosion"));
    }
    let grid = &tree.grid;
    let driver = family.for_scheme(scheme, grid.h())?;
    let n = grid.steps();
    let probs = node_probabilities(tree);
    let mut zeta = Vec::with_capacity(n);
    let mut gap = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let size = tree.level_size(i);
        let rows = child_rows(tree, i, &output.y[i + 1]);
        let zsum: Vec<f64> = (0..2 * size).map(|r| output.z[i][r % size]).collect();
        let target = zeta_target(
            &driver,
            grid.time(i),
            &rows,
            &zsum,
            &martingale_rows(size, grid.h()),
        );
        let zi: Vec<f64> = pair_average(&target)[..size].to_vec();
        let di: Vec<f64> = output.z[i].iter().zip(&zi).map(|(a, b)| a - b).collect();
        norms.push(
            di.iter()
                .zip(&probs[i])
                .map(|(d, p)| p * d * d)
                .sum::<f64>()
                * grid.h(),
        );
        zeta.push(zi);
        gap.push(di);
    }
    Ok(TreeZeta { zeta, gap, norms })
}

/// Probability of reaching each node.
pub fn node_probabilities(tree: &TreeModel) -> Vec<Vec<f64>> {
    let n = tree.grid.steps();
    let mut probs = vec![vec![1.0]];
    for i in 0..n {
        let mut next = vec![0.0; tree.level_size(i + 1)];
        for (k, p) in probs[i].iter().enumerate() {
            let (d, u) = tree.children(i, k);
            next[d] += 0.5 * p;
            next[u] += 0.5 * p;
        }
        probs.push(next);
    }
    probs
}

/// Backward conditional expectation on the tree: `E_i[v]` for every level,
/// given values `v` on the last level.
pub fn conditional_expectations(tree: &TreeModel, terminal: &[f64]) -> Vec<Vec<f64>> {
    let n = tree.grid.steps();
    let mut out = vec![Vec::new(); n + 1];
    out[n] = terminal.to_vec();
    for i in (0..n).rev() {
        out[i] = (0..tree.level_size(i))
            .map(|k| {
                let (d, u) = tree.children(i, k);
                0.5 * (out[i + 1][d] + out[i + 1][u])
            })
            .collect();
    }
    out
}

/// One side of a comparison: driver family and terminal condition.
#[derive(Debug, Clone)]
pub struct ComparisonSide {
    pub family: DriverFamily,
    pub terminal: TerminalSpec,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// `ξ¹ ≥ ξ²` on every leaf and `f^{h,1} ≥ f^{h,2}` at every node input.
    pub inputs_ordered: bool,
    /// Nodes where `Y¹ < Y²`.
    pub violations: usize,
    pub nodes_checked: usize,
    /// Smallest linearisation factor `B_{i+1}` over all child nodes.
    pub min_factor: f64,
    /// Value of the step-size condition and whether it holds (it also
    /// requires the first driver to be globally Lipschitz in `y`).
    pub condition_value: f64,
    pub condition_holds: bool,
    pub first: TreeOutput,
    pub second: TreeOutput,
}

fn quotient(num: f64, den: f64) -> f64 {
    if den != 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn comparison_check(
    scheme: &SchemeSpec,
    first: &ComparisonSide,
    second: &ComparisonSide,
    tree: &TreeModel,
) -> Result<ComparisonReport> {
    if scheme.kind == SchemeKind::Implicit {
        return Err(invalid("comparison check applies to explicit schemes"));
    }
    let z_free = first.family.base.z_coeff() == 0.0 && second.family.base.z_coeff() == 0.0;
    if !z_free && scheme.theta_prime != 1.0 {
        return Err(invalid(
            "comparison check needs z-free drivers or theta' = 1",
        ));
    }
    let grid = &tree.grid;
    let h = grid.h();
    let d1 = first.family.for_scheme(scheme, h)?;
    let d2 = second.family.for_scheme(scheme, h)?;
    let k1 = derive_constants(&d1);
    let condition_value = comparison_condition(&k1, scheme.theta_prime, h, 1.0 / h.sqrt());
    let condition_holds = condition_value < 1.0 && exact_lipschitz_in_y(&d1);

    let out1 = tree_exact_run(scheme, &first.family, tree, &first.terminal)?;
    let out2 = tree_exact_run(scheme, &second.family, tree, &second.terminal)?;
    if out1.exploded_at.is_some() || out2.exploded_at.is_some() {
        return Err(invalid("comparison runs exploded"));
    }
    let n = grid.steps();
    let mut inputs_ordered = out1.y[n].iter().zip(&out2.y[n]).all(|(a, b)| a >= b);
    let mut violations = 0;
    let mut nodes_checked = 0;
    let mut min_factor = f64::INFINITY;
    let s = 1.0 / h.sqrt();
    for i in 0..n {
        let t = grid.time(i);
        for k in 0..tree.level_size(i) {
            nodes_checked += 1;
            if out1.y[i][k] < out2.y[i][k] {
                violations += 1;
            }
            let (dn, up) = tree.children(i, k);
            let (z1, z2) = (out1.z[i][k], out2.z[i][k]);
            for (child, hv) in [(dn, -s), (up, s)] {
                let (y1, y2) = (out1.y[i + 1][child], out2.y[i + 1][child]);
                if d1.eval(t, y2, z2) < d2.eval(t, y2, z2) {
                    inputs_ordered = false;
                }
                let beta = quotient(d1.eval(t, y1, z1) - d1.eval(t, y2, z1), y1 - y2);
                let beta_hat = quotient(d1.eval(t, y1, 0.0) - d1.eval(t, y2, 0.0), y1 - y2);
                let dz = z1 - z2;
                let gamma = quotient(d1.eval(t, y2, z1) - d1.eval(t, y2, z2), dz * dz) * dz;
                let b = 1.0
                    + h * beta
                    + h * gamma * (1.0 + (1.0 - scheme.theta_prime) * h * beta_hat) * hv;
                min_factor = min_factor.min(b);
            }
        }
    }
    nodes_checked += tree.level_size(n);
    Ok(ComparisonReport {
        inputs_ordered,
        violations,
        nodes_checked,
        min_factor,
        condition_value,
        condition_holds,
        first: out1,
        second: out2,
    })
}
