//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tamed_bsde::experiment::studies::tree_oracle_difference;
use tamed_bsde::experiment::{convergence_study, positivity_study, ExperimentConfig, SchemeEntry};
use tamed_bsde::noise::DEFAULT_LOG_SCHEDULE_R0;
use tamed_bsde::*;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).expect("shipped config parses")
}

const ALL_TAMINGS: [TamingKind; 7] = [
    TamingKind::None,
    TamingKind::InnerProj,
    TamingKind::OuterProj,
    TamingKind::MultA,
    TamingKind::MultB,
    TamingKind::MultC,
    TamingKind::MultD,
];

/// Path-based scheme with exact per-state averaging equals the tree recursion.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let driver = DriverSpec::new(&[0.5, 1.0, 0.0, -1.0], 0.3).unwrap();
    let g = TerminalSpec::new(&[0.0, 0.5]).unwrap();
    let sde = SdeSpec::brownian(0.0, 1.0);
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for n in [4, 8, 12] {
        let tree = TreeModel::branching(&sde, &build_grid(1.0, n).unwrap()).unwrap();
        for kind in [
            SchemeKind::ExplicitTamed,
            SchemeKind::ExplicitUntamed,
            SchemeKind::Implicit,
        ] {
            for taming in ALL_TAMINGS {
                let skip = match kind {
                    SchemeKind::ExplicitTamed => taming == TamingKind::None,
                    SchemeKind::ExplicitUntamed => taming != TamingKind::None,
                    SchemeKind::Implicit => false,
                };
                if skip {
                    continue;
                }
                for theta_prime in [0.0, 0.5, 1.0] {
                    let entry = SchemeEntry {
                        label: kind.name().into(),
                        scheme: SchemeSpec::new(kind, theta_prime).unwrap(),
                        taming: TamingSpec::with_default_exponent(taming, 1.0, driver.degree())
                            .unwrap(),
                    };
                    let family = DriverFamily::new(driver.clone(), entry.taming);
                    let diff = tree_oracle_difference(&entry, &family, &tree, &g).unwrap();
                    worst = worst.max(diff);
                    runs += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-8 && secs < 10.0,
        format!("{runs} runs, max |diff| = {worst:.2e}, {secs:.2} s"),
    )
}

/// `f(y) = -y`, `ξ = 1`: `Y_0 = (1-h)^N` explicit and `(1+h)^{-N}` implicit.
fn closed_form_recursions() -> Outcome {
    let family = DriverFamily::untamed(DriverSpec::new(&[0.0, -1.0], 0.0).unwrap());
    let g = TerminalSpec::new(&[1.0]).unwrap();
    let sde = SdeSpec::brownian(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for n in [1, 10, 100] {
        let grid = build_grid(1.0, n).unwrap();
        let h = grid.h();
        let tree = TreeModel::new(&sde, &grid).unwrap();
        let explicit = SchemeSpec::new(SchemeKind::ExplicitUntamed, 1.0).unwrap();
        let implicit = SchemeSpec::new(SchemeKind::Implicit, 1.0).unwrap();
        let ye = tree_exact_run(&explicit, &family, &tree, &g).unwrap().y[0][0];
        let yi = tree_exact_run(&implicit, &family, &tree, &g).unwrap().y[0][0];
        worst = worst.max((ye - (1.0 - h).powi(n as i32)).abs());
        worst = worst.max((yi - (1.0 + h).powi(-(n as i32))).abs());
    }
    Outcome::new(worst <= 1e-10, format!("max deviation {worst:.2e}"))
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(h, e)| (h.ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slopes of the cubic-driver study and error ratios against the implicit scheme.
fn convergence_slope() -> Outcome {
    let cfg = load("convergence.conf");
    let report = convergence_study(&cfg, true).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for label in ["implicit", "inner", "outer"] {
        let pts: Vec<(f64, f64)> = report
            .series(label)
            .iter()
            .map(|r| (r.h, r.error))
            .collect();
        let s = slope(&pts);
        ok &= (0.35..=1.3).contains(&s);
        notes.push(format!("slope {label} {s:.3}"));
    }
    let mut worst_ratio: f64 = 0.0;
    for &n in cfg.grids.iter().filter(|&&n| n >= 16) {
        let base = report.row("implicit", n).unwrap().error;
        for label in ["inner", "outer"] {
            worst_ratio = worst_ratio.max(report.row(label, n).unwrap().error / base);
        }
    }
    ok &= worst_ratio <= 3.0;
    notes.push(format!("max ratio to implicit {worst_ratio:.2}"));
    let coarse = report.row("mult_d", 8).unwrap().error;
    let fine = report.row("mult_d", 256).unwrap().error;
    ok &= fine <= 0.5 * coarse;
    notes.push(format!("mult_d N=256/N=8 {:.2}", fine / coarse));
    let explicit_ms = report.row("inner", 256).unwrap().wallclock_ms;
    let implicit_ms = report.row("implicit", 256).unwrap().wallclock_ms;
    notes.push(format!(
        "timing inner/implicit at N=256 {:.2} (report only)",
        explicit_ms / implicit_ms
    ));
    Outcome::new(ok, notes.join(", "))
}

fn max_second_moment(cfg: &ExperimentConfig, entry: &SchemeEntry, n: usize) -> f64 {
    let grid = build_grid(cfg.horizon, n).unwrap();
    let batch = sample_increments(&grid, cfg.paths, cfg.seed, cfg.noise).unwrap();
    let ensemble = euler_simulate(&cfg.sde, &grid, &batch).unwrap();
    let xi = terminal_values(&cfg.terminal, &ensemble);
    let family = DriverFamily::new(cfg.driver.clone(), entry.taming);
    let out = run_backward(
        &entry.scheme,
        &family,
        &ensemble,
        &xi,
        &Estimator::Regression(cfg.basis),
    )
    .unwrap();
    if out.exploded() {
        return f64::INFINITY;
    }
    (0..=n)
        .map(|i| out.y(i).iter().map(|y| y * y).sum::<f64>() / cfg.paths as f64)
        .fold(0.0, f64::max)
}

/// Second moments of tamed solutions stay bounded as the grid refines.
fn non_explosion_moments() -> Outcome {
    let mut cfg = load("convergence.conf");
    cfg.paths = 10_000;
    let mut ok = true;
    let mut notes = Vec::new();
    for entry in cfg
        .schemes
        .iter()
        .filter(|e| e.scheme.kind == SchemeKind::ExplicitTamed)
    {
        let coarse = max_second_moment(&cfg, entry, 8);
        let fine = max_second_moment(&cfg, entry, 512);
        let ratio = fine / coarse;
        ok &= (0.5..=2.0).contains(&ratio);
        notes.push(format!("{} {ratio:.3}", entry.label));
    }
    Outcome::new(ok, format!("N=512/N=8 ratios: {}", notes.join(", ")))
}

/// Pinned fixture: the untamed explicit scheme explodes for `g(x) = x³`.
const EXPLOSION_SEED: u64 = 20240601;
const EXPLOSION_STEPS: usize = 64;

fn explosion_demonstration() -> Outcome {
    let mut cfg = load("convergence.conf");
    cfg.terminal = TerminalSpec::new(&[0.0, 0.0, 0.0, 1.0]).unwrap();
    cfg.seed = EXPLOSION_SEED;
    cfg.grids = vec![EXPLOSION_STEPS];
    cfg.schemes.retain(|e| e.label == "implicit");
    cfg.schemes.push(SchemeEntry {
        label: "untamed".into(),
        scheme: SchemeSpec::new(SchemeKind::ExplicitUntamed, 1.0).unwrap(),
        taming: TamingSpec::none(),
    });
    let report = convergence_study(&cfg, false).unwrap();
    let row = report.row("untamed", EXPLOSION_STEPS).unwrap();
    Outcome::new(
        row.exploded || row.error > 1e3,
        format!(
            "seed {EXPLOSION_SEED}, N = {EXPLOSION_STEPS}: exploded = {}, error = {}",
            row.exploded, row.error
        ),
    )
}

/// Positivity on the tree for tamed schemes satisfying `h L^h_y < 1`, and a
/// regression report written to CSV.
fn positivity() -> Outcome {
    let cfg = load("positivity.conf");
    let study = positivity_study(&cfg).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for entry in cfg
        .schemes
        .iter()
        .filter(|e| e.scheme.kind == SchemeKind::ExplicitTamed)
    {
        let cond = study.condition(&entry.label).unwrap();
        let min = study.global_min(&entry.label).unwrap();
        ok &= cond.holds && min >= 0.0;
        notes.push(format!(
            "{} hL={:.3} min={:.4}",
            entry.label, cond.value, min
        ));
    }
    let reg = load("positivity_regression.conf");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("positivity.csv");
    let reg_study = positivity_study(&reg).unwrap();
    emit_csv(&reg_study, &path).unwrap();
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    let expected = 1 + reg.schemes.len() * (reg.grids[0] + 1);
    ok &= lines == expected;
    let reg_min = reg
        .schemes
        .iter()
        .map(|e| reg_study.global_min(&e.label).unwrap())
        .fold(f64::INFINITY, f64::min);
    notes.push(format!(
        "regression CSV {lines} lines, min {reg_min:.4} (report only)"
    ));
    Outcome::new(ok, notes.join(", "))
}

/// Randomized ordered inputs on trees give ordered outputs node by node.
fn discrete_comparison() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances = 0;
    let mut attempts = 0;
    let mut violations = 0;
    let mut unordered = 0;
    while instances < 200 {
        attempts += 1;
        let n = rng.random_range(2..=10);
        let cubic = rng.random_bool(0.5);
        let a0 = rng.random_range(-1.0..1.0);
        let a1 = rng.random_range(-1.0..0.5);
        let coeffs = if cubic {
            vec![a0, a1, 0.0, -rng.random_range(0.1..2.0)]
        } else {
            vec![a0, a1]
        };
        let base = DriverSpec::new(&coeffs, 0.0).unwrap();
        let taming = if rng.random_bool(0.5) {
            TamingKind::InnerProj
        } else {
            TamingKind::OuterProj
        };
        let spec =
            TamingSpec::with_default_exponent(taming, rng.random_range(0.1..1.0), base.degree())
                .unwrap();
        let theta_prime = [0.0, 0.5, 1.0][rng.random_range(0..3)];
        let g1 = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.3..0.3),
        ];
        let g2 = [
            g1[0] - rng.random_range(0.0..0.5),
            g1[1],
            g1[2] - rng.random_range(0.0..0.3),
        ];
        let first = ComparisonSide {
            family: DriverFamily::new(base.clone(), spec),
            terminal: TerminalSpec::new(&g1).unwrap(),
        };
        let second = ComparisonSide {
            family: DriverFamily::new(base.shifted(rng.random_range(0.0..0.5)), spec),
            terminal: TerminalSpec::new(&g2).unwrap(),
        };
        let sigma = rng.random_range(0.5..1.5);
        let tree =
            TreeModel::new(&SdeSpec::brownian(0.0, sigma), &build_grid(1.0, n).unwrap()).unwrap();
        let scheme = SchemeSpec::new(SchemeKind::ExplicitTamed, theta_prime).unwrap();
        let report = comparison_check(&scheme, &first, &second, &tree).unwrap();
        if !report.condition_holds {
            continue;
        }
        instances += 1;
        if !report.inputs_ordered {
            unordered += 1;
        }
        violations += report.violations;
    }
    Outcome::new(
        violations == 0 && unordered == 0,
        format!("{instances} instances ({attempts} drawn), {violations} violations, {unordered} unordered inputs"),
    )
}

/// Assumption checks for two cubic drivers and the witnesses of inner taming.
fn taming_assumptions() -> Outcome {
    let ladder: Vec<usize> = (3..=11).map(|k| 1usize << k).collect();
    let plan = ProbePlan::default();
    let mut failures = Vec::new();
    let mut spread_k: f64 = 0.0;
    let mut spread_l: f64 = 0.0;
    for coeffs in [[0.0, 0.0, 0.0, -1.0], [0.0, 1.0, 0.0, -1.0]] {
        let base = DriverSpec::new(&coeffs, 0.0).unwrap();
        let tamings = [
            TamingSpec::new(TamingKind::InnerProj, 1.0, 0.25).unwrap(),
            TamingSpec::new(TamingKind::OuterProj, 1.0, 0.5).unwrap(),
            TamingSpec::new(TamingKind::MultC, 1.0, 0.5).unwrap(),
            TamingSpec::new(TamingKind::MultD, 1.0, 0.5).unwrap(),
        ];
        for spec in tamings {
            let mut wk = Vec::new();
            let mut wl = Vec::new();
            for &n in &ladder {
                let driver = TamedDriver::new(base.clone(), spec, 1.0 / n as f64).unwrap();
                let report = verify_assumptions(&driver, &plan);
                if !report.passed() {
                    failures.push(format!("{}@{n}", spec.kind.name()));
                }
                wk.push(report.constants.witness_k);
                wl.push(report.constants.witness_l);
            }
            if spec.kind == TamingKind::InnerProj {
                let spread = |w: &[f64]| {
                    let max = w.iter().copied().fold(f64::MIN, f64::max);
                    let min = w.iter().copied().fold(f64::MAX, f64::min);
                    (max - min) / min
                };
                spread_k = spread_k.max(spread(&wk));
                spread_l = spread_l.max(spread(&wl));
            }
        }
    }
    let ok = failures.is_empty() && spread_k < 0.01 && spread_l < 0.01;
    Outcome::new(
        ok,
        format!(
            "check failures: [{}], inner witness spread K {:.2}%, L {:.2}%",
            failures.join(" "),
            100.0 * spread_k,
            100.0 * spread_l
        ),
    )
}

/// `E[clamp(G, -a, a)²]` for a standard normal `G` by composite Simpson.
fn lambda_by_quadrature(radius: f64, h: f64) -> f64 {
    let a = radius / h.sqrt();
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let simpson = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize| {
        let w = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * w);
        }
        s * w / 3.0
    };
    let inside = simpson(&|x| x * x * phi(x), -a, a, 20_000);
    let tail = simpson(&phi, a, a + 40.0, 40_000);
    inside + 2.0 * a * a * tail
}

/// Second-moment factor of truncated increments under the log schedule.
fn truncated_increments() -> Outcome {
    let model = NoiseModel::truncated(1, DEFAULT_LOG_SCHEDULE_R0, true);
    let mut ok = true;
    let mut worst_gap: f64 = 0.0;
    let mut range = (f64::MAX, f64::MIN);
    for k in 1..=11 {
        let h = 2f64.powi(-k);
        let r = truncation_radius(&model, h).unwrap();
        let lambda = lambda_of_truncation(r, h);
        ok &= (0.5..=1.0).contains(&lambda);
        range = (range.0.min(lambda), range.1.max(lambda));
        worst_gap = worst_gap.max((lambda - lambda_by_quadrature(r, h)).abs());
    }
    ok &= worst_gap <= 1e-8;
    let limit = lambda_of_truncation(40.0, 1.0);
    ok &= (1.0 - limit).abs() < 1e-12;
    Outcome::new(
        ok,
        format!(
            "lambda in [{:.6}, {:.6}], quadrature gap {worst_gap:.1e}, lambda(R = 40) = {limit}",
            range.0, range.1
        ),
    )
}

fn run_cli(args: &[&str], threads: usize, out: &std::path::Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_tamed-bsde"))
        .args(args)
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--out")
        .arg(out)
        .status()
        .expect("binary runs");
    assert!(status.success(), "{args:?} failed");
    std::fs::read(out).unwrap()
}

/// Every subcommand yields identical bytes with one and eight threads.
fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.conf");
    let text = std::fs::read_to_string(config_path("convergence.conf"))
        .unwrap()
        .replace("grids = 8, 16, 32, 64, 128, 256", "grids = 8, 16, 32")
        .replace("mc.paths = 50000", "mc.paths = 5000");
    std::fs::write(&small, text).unwrap();
    let runs = [
        ("converge", small.clone()),
        ("positivity", config_path("positivity_regression.conf")),
        ("verify-taming", config_path("verify_taming.conf")),
        ("tree-oracle", config_path("tree_oracle.conf")),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (cmd, cfg) in &runs {
        let cfg = cfg.to_str().unwrap();
        let one = run_cli(&[cmd, cfg], 1, &dir.path().join(format!("{cmd}-1.csv")));
        let eight = run_cli(&[cmd, cfg], 8, &dir.path().join(format!("{cmd}-8.csv")));
        let same = one == eight && !one.is_empty();
        ok &= same;
        notes.push(format!(
            "{cmd} {}",
            if same { "identical" } else { "DIFFERENT" }
        ));
    }
    Outcome::new(ok, notes.join(", "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("closed-form recursions", closed_form_recursions),
        ("convergence slope", convergence_slope),
        ("non-explosion moments", non_explosion_moments),
        ("explosion demonstration", explosion_demonstration),
        ("positivity", positivity),
        ("discrete comparison", discrete_comparison),
        ("taming assumptions", taming_assumptions),
        ("truncated increments", truncated_increments),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Outcome::new(false, "panicked"));
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        if !outcome.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {verdict} {name} ({:.1} s): {}",
            k + 1,
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
