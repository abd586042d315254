//! The experiment drivers behind the CLI subcommands.

use std::time::Instant;

use super::config::{Backend, ExperimentConfig, SchemeEntry};
use super::csv::{format_number, CsvTable};
use crate::driver::{derive_constants, TamingKind};
use crate::error::{invalid, Result};
use crate::forward::{euler_simulate, terminal_values, PathEnsemble, TerminalSpec};
use crate::grid::PartitionGrid;
use crate::noise::{increment_gap_second_moment, sample_increments, truncation_radius, NoiseKind};
use crate::regression::Estimator;
use crate::scheme::{
    positivity_report, run_backward, DriverFamily, PositivityReport, SchemeKind, SchemeOutput,
};
use crate::tree::{tree_exact_run, TreeModel, MAX_BRANCHING_STEPS};
use crate::verify::{verify_assumptions, Check};

/// Witnesses that grow by more than this factor across the ladder are flagged.
pub const WITNESS_GROWTH_THRESHOLD: f64 = 1.01;

fn family_of(cfg: &ExperimentConfig, entry: &SchemeEntry) -> DriverFamily {
    DriverFamily::new(cfg.driver.clone(), entry.taming)
}

fn grid_of(cfg: &ExperimentConfig, n: usize) -> Result<PartitionGrid> {
    PartitionGrid::new(cfg.horizon, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub scheme: String,
    pub n: usize,
    pub h: f64,
    /// `+inf` when the run exploded.
    pub error: f64,
    pub wallclock_ms: f64,
    pub exploded: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ErrorRow>,
}

impl ErrorReport {
    pub fn row(&self, scheme: &str, n: usize) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.n == n)
    }

    /// Errors of one scheme in ascending `N`.
    pub fn series(&self, scheme: &str) -> Vec<&ErrorRow> {
        self.rows.iter().filter(|r| r.scheme == scheme).collect()
    }
}

impl CsvTable for ErrorReport {
    fn header(&self) -> Vec<String> {
        [
            "scheme",
            "N",
            "h",
            "error",
            "wallclock_ms",
            "exploded",
            "seed",
        ]
        .map(String::from)
        .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.scheme.clone(),
                    r.n.to_string(),
                    format_number(r.h),
                    format_number(r.error),
                    format_number(r.wallclock_ms),
                    r.exploded.to_string(),
                    r.seed.to_string(),
                ]
            })
            .collect()
    }
}

/// Paths simulated on one grid, sharing the noise of the finest grid.
struct GridRun {
    n: usize,
    ensemble: PathEnsemble,
    xi: Vec<f64>,
}

fn simulate_ladder(cfg: &ExperimentConfig) -> Result<Vec<GridRun>> {
    let fine = grid_of(cfg, cfg.finest())?;
    let fine_batch = sample_increments(&fine, cfg.paths, cfg.seed, cfg.noise)?;
    cfg.grids
        .iter()
        .map(|&n| {
            let grid = grid_of(cfg, n)?;
            let batch = if n == cfg.finest() {
                fine_batch.clone()
            } else {
                fine_batch.coarsen(&fine, &grid)?
            };
            let ensemble = euler_simulate(&cfg.sde, &grid, &batch)?;
            let xi = terminal_values(&cfg.terminal, &ensemble);
            Ok(GridRun { n, ensemble, xi })
        })
        .collect()
}

fn is_proxy_member(entry: &SchemeEntry) -> bool {
    entry.scheme.kind == SchemeKind::Implicit
        || (entry.scheme.kind == SchemeKind::ExplicitTamed
            && entry.taming.kind == TamingKind::InnerProj)
}

/// `max_i sqrt(mean_p (Y_i - proxy at t_i)^2)`; `+inf` for exploded runs.
fn distance_to_proxy(output: &SchemeOutput, proxy: &[f64], fine_steps: usize) -> f64 {
    if output.exploded() {
        return f64::INFINITY;
    }
    let paths = output.paths();
    let ratio = fine_steps / output.steps();
    (0..=output.steps())
        .map(|i| {
            let reference = &proxy[i * ratio * paths..(i * ratio + 1) * paths];
            let mse = output
                .y(i)
                .iter()
                .zip(reference)
                .map(|(y, r)| (y - r) * (y - r))
                .sum::<f64>()
                / paths as f64;
            mse.sqrt()
        })
        .fold(0.0, f64::max)
}

/// Errors of every scheme on every grid against the fine-grid proxy, the
/// average of the implicit and inner-tamed solutions on the finest grid.
///
/// Wallclock times are recorded only when `timing` is set so that reports
/// stay byte-identical across runs otherwise.
pub fn convergence_study(cfg: &ExperimentConfig, timing: bool) -> Result<ErrorReport> {
    if cfg.backend != Backend::Regression {
        return Err(invalid(
            "the convergence study runs on the regression backend only",
        ));
    }
    let members: Vec<usize> = (0..cfg.schemes.len())
        .filter(|&k| is_proxy_member(&cfg.schemes[k]))
        .collect();
    if members.is_empty() {
        return Err(invalid(
            "the convergence study needs an implicit or an inner-tamed explicit scheme for the proxy",
        ));
    }
    let runs = simulate_ladder(cfg)?;
    let estimator = Estimator::Regression(cfg.basis);
    let fine = runs.last().expect("non-empty ladder");
    let fine_steps = fine.n;

    let run_one = |entry: &SchemeEntry, run: &GridRun| -> Result<(SchemeOutput, f64)> {
        let start = Instant::now();
        let out = run_backward(
            &entry.scheme,
            &family_of(cfg, entry),
            &run.ensemble,
            &run.xi,
            &estimator,
        )?;
        let ms = if timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        Ok((out, ms))
    };

    // proxy members on the finest grid are needed before anything else
    let mut member_runs = Vec::new();
    for &k in &members {
        member_runs.push((k, run_one(&cfg.schemes[k], fine)?));
    }
    if let Some((k, _)) = member_runs.iter().find(|(_, (out, _))| out.exploded()) {
        return Err(invalid(format!(
            "proxy scheme '{}' exploded on the finest grid",
            cfg.schemes[*k].label
        )));
    }
    let mut proxy = vec![0.0; (fine_steps + 1) * cfg.paths];
    for (_, (out, _)) in &member_runs {
        for i in 0..=fine_steps {
            let dst = &mut proxy[i * cfg.paths..(i + 1) * cfg.paths];
            for (d, y) in dst.iter_mut().zip(out.y(i)) {
                *d += y / member_runs.len() as f64;
            }
        }
    }
    let mut finest_rows: Vec<(usize, f64, f64, bool)> = member_runs
        .iter()
        .map(|(k, (out, ms))| {
            (
                *k,
                distance_to_proxy(out, &proxy, fine_steps),
                *ms,
                out.exploded(),
            )
        })
        .collect();
    drop(member_runs);

    let mut rows = Vec::new();
    for (k, entry) in cfg.schemes.iter().enumerate() {
        for run in &runs {
            let h = run.ensemble.grid().h();
            let (error, ms, exploded) = match finest_rows
                .iter()
                .position(|r| r.0 == k && run.n == fine_steps)
            {
                Some(pos) => {
                    let (_, e, ms, x) = finest_rows.swap_remove(pos);
                    (e, ms, x)
                }
                None => {
                    let (out, ms) = run_one(entry, run)?;
                    (
                        distance_to_proxy(&out, &proxy, fine_steps),
                        ms,
                        out.exploded(),
                    )
                }
            };
            rows.push(ErrorRow {
                scheme: entry.label.clone(),
                n: run.n,
                h,
                error,
                wallclock_ms: ms,
                exploded,
                seed: cfg.seed,
            });
        }
    }
    Ok(ErrorReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityRow {
    pub scheme: String,
    pub i: usize,
    pub t: f64,
    pub min_y: f64,
    pub max_y: f64,
}

/// The step-size condition `h L^h_y < 1` of one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub scheme: String,
    pub n: usize,
    pub h: f64,
    pub l_y: f64,
    pub value: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PositivityStudy {
    pub rows: Vec<PositivityRow>,
    pub conditions: Vec<ConditionRow>,
    pub global_min: Vec<(String, f64)>,
}

impl PositivityStudy {
    pub fn global_min(&self, scheme: &str) -> Option<f64> {
        self.global_min
            .iter()
            .find(|(s, _)| s == scheme)
            .map(|(_, v)| *v)
    }

    pub fn condition(&self, scheme: &str) -> Option<&ConditionRow> {
        self.conditions.iter().find(|c| c.scheme == scheme)
    }

    pub fn conditions_table(&self) -> ConditionTable<'_> {
        ConditionTable(&self.conditions)
    }
}

impl CsvTable for PositivityStudy {
    fn header(&self) -> Vec<String> {
        ["scheme", "i", "t", "min_Y", "max_Y"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.scheme.clone(),
                    r.i.to_string(),
                    format_number(r.t),
                    format_number(r.min_y),
                    format_number(r.max_y),
                ]
            })
            .collect()
    }
}

pub struct ConditionTable<'a>(&'a [ConditionRow]);

impl CsvTable for ConditionTable<'_> {
    fn header(&self) -> Vec<String> {
        ["scheme", "N", "h", "L_y", "h_L_y", "holds"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.0
            .iter()
            .map(|c| {
                vec![
                    c.scheme.clone(),
                    c.n.to_string(),
                    format_number(c.h),
                    format_number(c.l_y),
                    format_number(c.value),
                    c.holds.to_string(),
                ]
            })
            .collect()
    }
}

/// Per-step extrema of `Y` for every scheme at `N = grids[0]`, on the
/// configured backend, with the condition `h L^h_y < 1`.
pub fn positivity_study(cfg: &ExperimentConfig) -> Result<PositivityStudy> {
    let n = cfg.grids[0];
    let grid = grid_of(cfg, n)?;
    let h = grid.h();
    let mut study = PositivityStudy::default();

    let reports: Vec<PositivityReport> = match cfg.backend {
        Backend::Tree => {
            let tree = TreeModel::new(&cfg.sde, &grid)?;
            cfg.schemes
                .iter()
                .map(|e| {
                    Ok(
                        tree_exact_run(&e.scheme, &family_of(cfg, e), &tree, &cfg.terminal)?
                            .positivity(),
                    )
                })
                .collect::<Result<_>>()?
        }
        Backend::Regression => {
            let batch = sample_increments(&grid, cfg.paths, cfg.seed, cfg.noise)?;
            let ensemble = euler_simulate(&cfg.sde, &grid, &batch)?;
            let xi = terminal_values(&cfg.terminal, &ensemble);
            let estimator = Estimator::Regression(cfg.basis);
            cfg.schemes
                .iter()
                .map(|e| {
                    let out =
                        run_backward(&e.scheme, &family_of(cfg, e), &ensemble, &xi, &estimator)?;
                    Ok(positivity_report(&out))
                })
                .collect::<Result<_>>()?
        }
    };

    for (entry, report) in cfg.schemes.iter().zip(&reports) {
        for i in (0..report.min.len()).rev() {
            study.rows.push(PositivityRow {
                scheme: entry.label.clone(),
                i,
                t: grid.time(i),
                min_y: report.min[i],
                max_y: report.max[i],
            });
        }
        study
            .global_min
            .push((entry.label.clone(), report.global_min));
        let driver = family_of(cfg, entry).for_scheme(&entry.scheme, h)?;
        let l_y = derive_constants(&driver).l_y;
        study.conditions.push(ConditionRow {
            scheme: entry.label.clone(),
            n,
            h,
            l_y,
            value: h * l_y,
            holds: h * l_y < 1.0,
        });
    }
    Ok(study)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TamingRow {
    pub scheme: String,
    pub taming: TamingKind,
    pub n: usize,
    pub h: f64,
    pub radius: f64,
    pub k_y: f64,
    pub l_y: f64,
    pub mbar_y: f64,
    pub growth_exponent: f64,
    pub empirical: bool,
    pub witness_k: f64,
    pub witness_l: f64,
    pub passed: bool,
    pub checks: Vec<(Check, bool)>,
    pub fitted_consistency: Option<f64>,
    pub witness_k_growing: bool,
    pub witness_l_growing: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TamingReport {
    pub rows: Vec<TamingRow>,
}

impl TamingReport {
    pub fn series(&self, scheme: &str) -> Vec<&TamingRow> {
        self.rows.iter().filter(|r| r.scheme == scheme).collect()
    }
}

const CHECK_COLUMNS: [Check; 8] = [
    Check::Domination,
    Check::Growth,
    Check::MonotoneGrowth,
    Check::LipschitzZ,
    Check::RegularityY,
    Check::Monotonicity,
    Check::Consistency,
    Check::OuterBound,
];

fn trend(growing: bool) -> String {
    if growing { "growing" } else { "bounded" }.into()
}

impl CsvTable for TamingReport {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "scheme",
            "taming",
            "N",
            "h",
            "radius",
            "K_y",
            "L_y",
            "Mbar_y",
            "growth_exponent",
            "empirical",
            "witness_K",
            "witness_L",
            "passed",
        ]
        .map(String::from)
        .to_vec();
        h.extend(CHECK_COLUMNS.iter().map(|c| c.name().to_string()));
        h.extend(["consistency_C", "witness_K_trend", "witness_L_trend"].map(String::from));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.scheme.clone(),
                    r.taming.name().to_string(),
                    r.n.to_string(),
                    format_number(r.h),
                    format_number(r.radius),
                    format_number(r.k_y),
                    format_number(r.l_y),
                    format_number(r.mbar_y),
                    format_number(r.growth_exponent),
                    r.empirical.to_string(),
                    format_number(r.witness_k),
                    format_number(r.witness_l),
                    r.passed.to_string(),
                ];
                for c in CHECK_COLUMNS {
                    let pass = r.checks.iter().find(|(k, _)| *k == c).map(|(_, p)| *p);
                    row.push(pass.map(|p| p.to_string()).unwrap_or_default());
                }
                row.push(r.fitted_consistency.map(format_number).unwrap_or_default());
                row.push(trend(r.witness_k_growing));
                row.push(trend(r.witness_l_growing));
                row
            })
            .collect()
    }
}

/// Assumption checks and boundedness witnesses `(K^h_y)² h`, `(L^h_y)² h`
/// of every configured scheme across the grid ladder.
pub fn verify_taming(cfg: &ExperimentConfig) -> Result<TamingReport> {
    let mut rows = Vec::new();
    for entry in &cfg.schemes {
        let family = family_of(cfg, entry);
        let start = rows.len();
        for &n in &cfg.grids {
            let h = cfg.horizon / n as f64;
            let driver = family.for_scheme(&entry.scheme, h)?;
            let report = verify_assumptions(&driver, &cfg.tolerances.probe);
            let k = &report.constants;
            rows.push(TamingRow {
                scheme: entry.label.clone(),
                taming: driver.taming().kind,
                n,
                h,
                radius: report.radius,
                k_y: k.k_y,
                l_y: k.l_y,
                mbar_y: k.mbar_y,
                growth_exponent: k.growth_exponent,
                empirical: k.empirical,
                witness_k: k.witness_k,
                witness_l: k.witness_l,
                passed: report.passed(),
                checks: report.checks.iter().map(|c| (c.check, c.passed)).collect(),
                fitted_consistency: report
                    .check(Check::Consistency)
                    .and_then(|c| c.fitted_constant),
                witness_k_growing: false,
                witness_l_growing: false,
            });
        }
        let first = rows[start].clone();
        let last = rows.last().expect("row pushed").clone();
        let grows = |a: f64, b: f64| b.is_nan() || b > WITNESS_GROWTH_THRESHOLD * a;
        for r in &mut rows[start..] {
            r.witness_k_growing = grows(first.witness_k, last.witness_k);
            r.witness_l_growing = grows(first.witness_l, last.witness_l);
        }
    }
    Ok(TamingReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub scheme: String,
    pub n: usize,
    pub max_abs_diff: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

impl CsvTable for OracleReport {
    fn header(&self) -> Vec<String> {
        ["scheme", "N", "max_abs_diff", "passed"]
            .map(String::from)
            .to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.scheme.clone(),
                    r.n.to_string(),
                    format_number(r.max_abs_diff),
                    r.passed.to_string(),
                ]
            })
            .collect()
    }
}

/// Largest node-wise difference in `Y` and `Z` between the path-based
/// scheme with exact per-state averaging and the tree recursion.
pub fn tree_oracle_difference(
    entry: &SchemeEntry,
    family: &DriverFamily,
    tree: &TreeModel,
    terminal: &TerminalSpec,
) -> Result<f64> {
    let ensemble = tree.to_ensemble()?;
    let xi = terminal_values(terminal, &ensemble);
    let paths = run_backward(&entry.scheme, family, &ensemble, &xi, &Estimator::Grouping)?;
    let exact = tree_exact_run(&entry.scheme, family, tree, terminal)?;
    if paths.exploded_at() != exact.exploded_at {
        return Ok(f64::INFINITY);
    }
    let first = exact.exploded_at.map_or(0, |s| s + 1);
    let n = tree.grid().steps();
    let mut diff: f64 = 0.0;
    for i in first..=n {
        let y = paths.y(i);
        for (p, &v) in y.iter().enumerate() {
            diff = diff.max((v - exact.y[i][tree.node_of(p, i)]).abs());
        }
        if i < n {
            for (p, &v) in paths.z(i, 0).iter().enumerate() {
                diff = diff.max((v - exact.z[i][tree.node_of(p, i)]).abs());
            }
        }
    }
    Ok(diff)
}

/// Cross-checks the path-based backward scheme against the exact tree
/// recursion on every configured grid with `N ≤ 14`.
pub fn tree_oracle(cfg: &ExperimentConfig) -> Result<OracleReport> {
    if let Some(n) = cfg.grids.iter().find(|&&n| n > MAX_BRANCHING_STEPS) {
        return Err(invalid(format!(
            "tree oracle supports at most {MAX_BRANCHING_STEPS} steps, got {n}"
        )));
    }
    let mut rows = Vec::new();
    for entry in &cfg.schemes {
        let family = family_of(cfg, entry);
        for &n in &cfg.grids {
            let tree = TreeModel::branching(&cfg.sde, &grid_of(cfg, n)?)?;
            let diff = tree_oracle_difference(entry, &family, &tree, &cfg.terminal)?;
            rows.push(OracleRow {
                scheme: entry.label.clone(),
                n,
                max_abs_diff: diff,
                passed: diff <= cfg.tolerances.oracle_abs,
            });
        }
    }
    Ok(OracleReport { rows })
}

/// `key = value` lines describing the run: sampling setup, regression
/// basis, noise model, and the increment factor `Λ` with the gap
/// `E|ΔW/h - H|²` on every grid.
pub fn run_metadata(cfg: &ExperimentConfig) -> Result<String> {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    line("seed", cfg.seed.to_string());
    line("paths", cfg.paths.to_string());
    line(
        "backend",
        match cfg.backend {
            Backend::Regression => "regression",
            Backend::Tree => "tree",
        }
        .into(),
    );
    line("basis.k", cfg.basis.k.to_string());
    line("basis.standardize", cfg.basis.standardize.to_string());
    let kind = match cfg.noise.kind {
        NoiseKind::Gaussian => "gaussian",
        NoiseKind::TruncatedGaussian { .. } => "truncated_gaussian",
        NoiseKind::Rademacher => "rademacher",
    };
    line("noise.kind", kind.into());
    line("noise.brownian_dim", cfg.noise.brownian_dim.to_string());
    for &n in &cfg.grids {
        let h = cfg.horizon / n as f64;
        line(&format!("lambda.N{n}"), format_number(cfg.noise.lambda(h)?));
        let gap = match cfg.noise.kind {
            NoiseKind::TruncatedGaussian { .. } => {
                increment_gap_second_moment(truncation_radius(&cfg.noise, h)?, h)
            }
            _ => 0.0,
        };
        line(&format!("gap.N{n}"), format_number(gap));
    }
    Ok(out)
}
