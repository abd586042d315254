//! Experiment configuration: a flat `key = value` text format with dotted
//! section prefixes. Blank lines and `#` comments are ignored.
//!
//! ```text
//! sde.x0 = 0
//! sde.sigma = 1
//! terminal.coeffs = 0, 1
//! driver.y_poly = 0, 0, 0, -1
//! grids = 8, 16, 32
//! scheme.inner.kind = explicit_tamed
//! scheme.inner.taming.kind = inner_proj
//! scheme.inner.taming.r0 = 1
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::driver::{ConstantOverrides, DriverSpec, TamingKind, TamingSpec};
use crate::error::{Error, Result};
use crate::forward::{SdeSpec, TerminalSpec};
use crate::noise::{NoiseKind, NoiseModel, DEFAULT_LOG_SCHEDULE_R0};
use crate::regression::BasisSpec;
use crate::scheme::{SchemeKind, SchemeSpec, SolverSettings};
use crate::verify::ProbePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Regression,
    Tree,
}

/// A labelled scheme with its taming rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeEntry {
    pub label: String,
    pub scheme: SchemeSpec,
    pub taming: TamingSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub probe: ProbePlan,
    pub solver: SolverSettings,
    /// Largest node-wise difference accepted by the tree oracle comparison.
    pub oracle_abs: f64,
}

pub const DEFAULT_ORACLE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub horizon: f64,
    pub sde: SdeSpec,
    pub terminal: TerminalSpec,
    pub driver: DriverSpec,
    /// Sorted by label.
    pub schemes: Vec<SchemeEntry>,
    /// Ascending; every entry divides the largest.
    pub grids: Vec<usize>,
    pub paths: usize,
    pub basis: BasisSpec,
    pub noise: NoiseModel,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub backend: Backend,
    pub tolerances: Tolerances,
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Table {
    entries: BTreeMap<String, Entry>,
}

fn config_error(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                config_error(line, format!("expected 'key = value', got '{content}'"))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(config_error(line, "empty key"));
            }
            let entry = Entry {
                line,
                value: value.trim().to_string(),
                used: false,
            };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                return Err(config_error(
                    line,
                    format!("duplicate key '{key}' (first set on line {})", prev.line),
                ));
            }
        }
        Ok(Self { entries })
    }

    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| config_error(line, format!("cannot parse '{v}' for key '{key}'"))),
        }
    }

    fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// First of several alias keys that is present.
    fn get_alias<T: FromStr>(&mut self, keys: &[&str]) -> Result<Option<T>> {
        let mut found: Option<(usize, T)> = None;
        for key in keys {
            if let Some(line) = self.entries.get(*key).map(|e| e.line) {
                let v = self.get::<T>(key)?.expect("present");
                if found.is_some() {
                    return Err(config_error(
                        line,
                        format!("'{key}' repeats an aliased key"),
                    ));
                }
                found = Some((line, v));
            }
        }
        Ok(found.map(|(_, v)| v))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<(usize, Vec<T>)>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => {
                let items = v
                    .split(',')
                    .map(|s| s.trim())
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>().map_err(|_| {
                            config_error(line, format!("cannot parse '{s}' in key '{key}'"))
                        })
                    })
                    .collect::<Result<Vec<T>>>()?;
                Ok(Some((line, items)))
            }
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|e| e.line).unwrap_or(0)
    }

    fn scheme_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .entries
            .keys()
            .filter_map(|k| k.strip_prefix("scheme."))
            .filter_map(|rest| rest.split_once('.').map(|(label, _)| label.to_string()))
            .collect();
        labels.dedup();
        labels
    }

    fn unused(&self) -> Option<(&String, usize)> {
        self.entries
            .iter()
            .find(|(_, e)| !e.used)
            .map(|(k, e)| (k, e.line))
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_error(
            line,
            format!("'{key}' must be true or false, got '{v}'"),
        )),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::parse(text)?;

        let horizon = t
            .get_alias::<f64>(&["sde.horizon", "sde.T"])?
            .unwrap_or(1.0);
        let brownian_dim = t.get_or("sde.brownian_dim", 1usize)?;
        let sde = SdeSpec {
            x0: t.get_or("sde.x0", 0.0)?,
            b0: t.get_or("sde.b0", 0.0)?,
            b1: t.get_or("sde.b1", 0.0)?,
            s0: t.get_alias(&["sde.s0", "sde.sigma"])?.unwrap_or(1.0),
            s1: t.get_or("sde.s1", 0.0)?,
            brownian_dim,
        };
        sde.validate()
            .map_err(|e| config_error(t.line_of("sde.x0"), e.to_string()))?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(config_error(
                t.line_of("sde.horizon"),
                "horizon must be positive",
            ));
        }

        let (tline, tcoeffs) = t
            .list::<f64>("terminal.coeffs")?
            .unwrap_or((0, vec![0.0, 1.0]));
        let terminal =
            TerminalSpec::new(&tcoeffs).map_err(|e| config_error(tline, e.to_string()))?;

        let (dline, ycoeffs) = t
            .list::<f64>("driver.y_poly")?
            .ok_or_else(|| config_error(0, "missing key 'driver.y_poly'"))?;
        let z_coeff = t.get_or("driver.z_coeff", 0.0)?;
        let overrides = ConstantOverrides {
            k_t: t.get("driver.k_t")?,
            k_y: t.get("driver.k_y")?,
            k_z: t.get("driver.k_z")?,
            m_y: t.get("driver.m_y")?,
            l_t: t.get("driver.l_t")?,
            l_y: t.get("driver.l_y")?,
            l_z: t.get("driver.l_z")?,
        };
        let driver = DriverSpec::new(&ycoeffs, z_coeff)
            .and_then(|d| d.with_overrides(&overrides))
            .map_err(|e| config_error(dline, e.to_string()))?;

        let (gline, grids) = t
            .list::<usize>("grids")?
            .ok_or_else(|| config_error(0, "missing key 'grids'"))?;
        if grids.is_empty() || grids.contains(&0) {
            return Err(config_error(gline, "grids must be positive step counts"));
        }
        if grids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_error(gline, "grids must be strictly ascending"));
        }
        let finest = *grids.last().expect("non-empty");
        if let Some(n) = grids.iter().find(|&&n| finest % n != 0) {
            return Err(config_error(
                gline,
                format!("grid {n} does not divide the finest grid {finest}"),
            ));
        }

        let paths = t.get_alias::<usize>(&["mc.paths", "M"])?.unwrap_or(10_000);
        if paths == 0 {
            return Err(config_error(
                t.line_of("mc.paths"),
                "mc.paths must be positive",
            ));
        }
        let k = t.get_alias::<usize>(&["basis.k", "K"])?.unwrap_or(6);
        let standardize = match t.raw("basis.standardize") {
            None => true,
            Some((line, v)) => parse_bool(line, "basis.standardize", &v)?,
        };
        let basis = BasisSpec::new(k, standardize)
            .map_err(|e| config_error(t.line_of("basis.k"), e.to_string()))?;

        let noise_kind = t.raw("noise.kind").unwrap_or((0, "gaussian".into()));
        let kind = match noise_kind.1.as_str() {
            "gaussian" => NoiseKind::Gaussian,
            "rademacher" => NoiseKind::Rademacher,
            "truncated_gaussian" => {
                let r0 = t.get_or("noise.r0", DEFAULT_LOG_SCHEDULE_R0)?;
                let log_schedule = match t.raw("noise.log_schedule") {
                    None => true,
                    Some((line, v)) => parse_bool(line, "noise.log_schedule", &v)?,
                };
                NoiseKind::TruncatedGaussian { r0, log_schedule }
            }
            other => {
                return Err(config_error(
                    noise_kind.0,
                    format!("unknown noise kind '{other}'"),
                ))
            }
        };
        let noise = NoiseModel { kind, brownian_dim };
        let coarsest_h = horizon / grids[0] as f64;
        noise
            .validate(coarsest_h)
            .map_err(|e| config_error(noise_kind.0, e.to_string()))?;

        let seed = t.get_or("seed", 0u64)?;
        let output_path = t.raw("output.path").map(|(_, v)| PathBuf::from(v));
        let backend = match t.raw("backend") {
            None => Backend::Regression,
            Some((_, v)) if v == "regression" => Backend::Regression,
            Some((_, v)) if v == "tree" => Backend::Tree,
            Some((line, v)) => return Err(config_error(line, format!("unknown backend '{v}'"))),
        };

        let defaults = ProbePlan::default();
        let probe = ProbePlan {
            samples: t.get_or("tolerances.probe_samples", defaults.samples)?,
            y_max: t.get_or("tolerances.probe_y_max", defaults.y_max)?,
            z_max: t.get_or("tolerances.probe_z_max", defaults.z_max)?,
            rel_slack: t.get_or("tolerances.probe_rel_slack", defaults.rel_slack)?,
            max_listed: t.get_or("tolerances.probe_max_listed", defaults.max_listed)?,
        };
        let solver_defaults = SolverSettings::default();
        let solver = SolverSettings {
            tolerance: t.get_or("tolerances.solver_tolerance", solver_defaults.tolerance)?,
            max_iterations: t.get_or(
                "tolerances.solver_max_iterations",
                solver_defaults.max_iterations,
            )?,
        };

        let oracle_abs = t.get_or("tolerances.oracle_abs", DEFAULT_ORACLE_TOLERANCE)?;

        let mut schemes = Vec::new();
        for label in t.scheme_labels() {
            let prefix = format!("scheme.{label}");
            let kline = t.line_of(&format!("{prefix}.kind"));
            let kind: SchemeKind = match t.raw(&format!("{prefix}.kind")) {
                Some((line, v)) => v
                    .parse()
                    .map_err(|e: Error| config_error(line, e.to_string()))?,
                None => return Err(config_error(0, format!("scheme '{label}' has no kind"))),
            };
            let theta_prime = t.get_or(&format!("{prefix}.theta_prime"), 1.0)?;
            let mut scheme = SchemeSpec::new(kind, theta_prime)
                .map_err(|e| config_error(kline, e.to_string()))?;
            scheme.solver = solver;
            let taming_kind: TamingKind = match t.raw(&format!("{prefix}.taming.kind")) {
                Some((line, v)) => v
                    .parse()
                    .map_err(|e: Error| config_error(line, e.to_string()))?,
                None => TamingKind::None,
            };
            let taming_kind = if kind == SchemeKind::ExplicitUntamed {
                TamingKind::None
            } else {
                taming_kind
            };
            let r0 = t.get_or(&format!("{prefix}.taming.r0"), 1.0)?;
            let exponent = t
                .get::<f64>(&format!("{prefix}.taming.exponent"))?
                .unwrap_or_else(|| taming_kind.default_exponent(driver.degree()));
            let taming = TamingSpec::new(taming_kind, r0, exponent)
                .map_err(|e| config_error(kline, e.to_string()))?;
            schemes.push(SchemeEntry {
                label,
                scheme,
                taming,
            });
        }

        if let Some((key, line)) = t.unused() {
            return Err(config_error(line, format!("unknown key '{key}'")));
        }

        Ok(Self {
            horizon,
            sde,
            terminal,
            driver,
            schemes,
            grids,
            paths,
            basis,
            noise,
            seed,
            output_path,
            backend,
            tolerances: Tolerances {
                probe,
                solver,
                oracle_abs,
            },
        })
    }

    pub fn finest(&self) -> usize {
        *self.grids.last().expect("grids are non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBIC: &str = "
# convergence setup
sde.x0 = 0
sde.sigma = 1
terminal.coeffs = 0, 1
driver.y_poly = 0, 0, 0, -1
grids = 8, 16, 32
mc.paths = 1000
basis.k = 6
seed = 42
scheme.implicit.kind = implicit
scheme.inner.kind = explicit_tamed
scheme.inner.taming.kind = inner_proj
scheme.inner.taming.r0 = 1
scheme.inner.taming.exponent = 0.25
scheme.outer.kind = explicit_tamed
scheme.outer.taming.kind = outer_proj
scheme.outer.taming.r0 = 1.5
";

    #[test]
    fn parses_a_full_config() {
        let c = ExperimentConfig::parse(CUBIC).unwrap();
        assert_eq!(c.grids, vec![8, 16, 32]);
        assert_eq!(c.paths, 1000);
        assert_eq!(c.seed, 42);
        assert_eq!(c.sde.s0, 1.0);
        assert_eq!(c.driver.degree(), 3);
        let labels: Vec<&str> = c.schemes.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, vec!["implicit", "inner", "outer"]);
        assert_eq!(c.schemes[2].taming.exponent, 0.5);
        assert_eq!(c.schemes[2].taming.r0, 1.5);
        assert_eq!(c.schemes[0].taming.kind, TamingKind::None);
        assert!(c.basis.standardize);
        assert_eq!(c.backend, Backend::Regression);
    }

    #[test]
    fn reports_line_numbers() {
        let bad = CUBIC.replace("grids = 8, 16, 32", "grids = 8, 12, 32");
        match ExperimentConfig::parse(&bad) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("does not divide"));
            }
            other => panic!("{other:?}"),
        }
        let unknown = format!("{CUBIC}\nsde.bogus = 3\n");
        assert!(matches!(
            ExperimentConfig::parse(&unknown),
            Err(Error::Config { .. })
        ));
        let dup = format!("{CUBIC}\nseed = 1\n");
        assert!(matches!(
            ExperimentConfig::parse(&dup),
            Err(Error::Config { .. })
        ));
        let garbage = format!("{CUBIC}\nthis line has no equals\n");
        assert!(matches!(
            ExperimentConfig::parse(&garbage),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn rejects_invalid_values() {
        for (from, to) in [
            ("grids = 8, 16, 32", "grids = 16, 8"),
            ("mc.paths = 1000", "mc.paths = 0"),
            ("basis.k = 6", "basis.k = 0"),
            (
                "scheme.inner.kind = explicit_tamed",
                "scheme.inner.kind = sideways",
            ),
            ("scheme.inner.taming.r0 = 1", "scheme.inner.taming.r0 = -1"),
        ] {
            let text = CUBIC.replace(from, to);
            assert!(ExperimentConfig::parse(&text).is_err(), "{to}");
        }
    }

    #[test]
    fn truncated_noise_is_checked_at_the_coarsest_grid() {
        let ok = format!("{CUBIC}\nnoise.kind = truncated_gaussian\nnoise.r0 = 2\n");
        let c = ExperimentConfig::parse(&ok).unwrap();
        assert!(matches!(
            c.noise.kind,
            NoiseKind::TruncatedGaussian {
                log_schedule: true,
                ..
            }
        ));
        let tiny = format!("{CUBIC}\nnoise.kind = truncated_gaussian\nnoise.r0 = 0.01\nnoise.log_schedule = false\n");
        assert!(ExperimentConfig::parse(&tiny).is_err());
    }

    #[test]
    fn driver_overrides() {
        let text = CUBIC.replace(
            "driver.y_poly = 0, 0, 0, -1",
            "driver.y_poly = 0, 0, -1\ndriver.m_y = 0",
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.driver.constants().m_y, 0.0);
    }
}
