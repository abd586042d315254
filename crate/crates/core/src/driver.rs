//! Polynomial drivers `f(t, y, z) = P(y) + c z` and their tamed versions.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::poly::Polynomial;

/// Slack `α` used when splitting `y a_0` and `y c z` in the monotone-growth
/// bound `y f ≤ M̄_t + M̄_y y² + M̄_z z²`.
pub const MONOTONE_GROWTH_SLACK: f64 = 1.0;

/// Structural constants of a driver (growth, monotonicity, regularity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseConstants {
    pub k_t: f64,
    pub k_y: f64,
    pub k_z: f64,
    pub m_y: f64,
    pub l_t: f64,
    pub l_y: f64,
    pub l_z: f64,
    pub mbar_t: f64,
    pub mbar_y: f64,
    pub mbar_z: f64,
}

impl BaseConstants {
    /// Constants implied by the coefficients.
    ///
    /// `M_y` is the exact supremum of `P'`, which is infinite for drivers such
    /// as `-y²`; such drivers need an explicit override to be usable where
    /// monotonicity matters.
    pub fn from_polynomial(p: &Polynomial, z_coeff: f64) -> Self {
        let a = p.coeffs();
        let m = p.degree();
        let k_t: f64 = a.iter().take(m.max(1)).map(|c| c.abs()).sum();
        let k_y: f64 = a.iter().skip(1).map(|c| c.abs()).sum();
        let l_y: f64 = a
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| {
                let weight = if k == 1 {
                    1.0
                } else if k == m {
                    m as f64 / 2.0
                } else {
                    k as f64
                };
                weight * c.abs()
            })
            .sum();
        let m_y = p.derivative().supremum();
        let mut out = Self {
            k_t,
            k_y,
            k_z: z_coeff.abs(),
            m_y,
            l_t: 0.0,
            l_y,
            l_z: z_coeff.abs(),
            mbar_t: 0.0,
            mbar_y: 0.0,
            mbar_z: 0.0,
        };
        out.refresh_monotone_growth(a[0], z_coeff);
        out
    }

    fn refresh_monotone_growth(&mut self, a0: f64, z_coeff: f64) {
        let alpha = MONOTONE_GROWTH_SLACK;
        self.mbar_t = a0 * a0 / (2.0 * alpha);
        self.mbar_y = self.m_y + alpha;
        self.mbar_z = z_coeff * z_coeff / (2.0 * alpha);
    }
}

/// Optional user overrides of individual base constants.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ConstantOverrides {
    pub k_t: Option<f64>,
    pub k_y: Option<f64>,
    pub k_z: Option<f64>,
    pub m_y: Option<f64>,
    pub l_t: Option<f64>,
    pub l_y: Option<f64>,
    pub l_z: Option<f64>,
}

/// `f(t, y, z) = Σ a_k y^k + z_coeff · z`, time independent.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverSpec {
    y_poly: Polynomial,
    z_coeff: f64,
    constants: BaseConstants,
}

impl DriverSpec {
    pub fn new(y_coeffs: &[f64], z_coeff: f64) -> Result<Self> {
        let y_poly = Polynomial::new(y_coeffs);
        if !y_poly.is_finite() || !z_coeff.is_finite() {
            return Err(invalid("driver coefficients must be finite"));
        }
        let constants = BaseConstants::from_polynomial(&y_poly, z_coeff);
        Ok(Self {
            y_poly,
            z_coeff,
            constants,
        })
    }

    pub fn zero() -> Self {
        Self::new(&[0.0], 0.0).expect("zero driver is valid")
    }

    /// Replaces selected constants; `M̄` is recomputed from the new `M_y`.
    pub fn with_overrides(mut self, o: &ConstantOverrides) -> Result<Self> {
        let c = &mut self.constants;
        let set = |slot: &mut f64, v: Option<f64>, name: &str, signed: bool| -> Result<()> {
            if let Some(v) = v {
                if v.is_nan() || (!signed && v < 0.0) {
                    return Err(invalid(format!(
                        "constant {name} must be non-negative, got {v}"
                    )));
                }
                *slot = v;
            }
            Ok(())
        };
        set(&mut c.k_t, o.k_t, "k_t", false)?;
        set(&mut c.k_y, o.k_y, "k_y", false)?;
        set(&mut c.k_z, o.k_z, "k_z", false)?;
        set(&mut c.m_y, o.m_y, "m_y", true)?;
        set(&mut c.l_t, o.l_t, "l_t", false)?;
        set(&mut c.l_y, o.l_y, "l_y", false)?;
        set(&mut c.l_z, o.l_z, "l_z", false)?;
        let a0 = self.y_poly.coeffs()[0];
        self.constants.refresh_monotone_growth(a0, self.z_coeff);
        Ok(self)
    }

    pub fn y_poly(&self) -> &Polynomial {
        &self.y_poly
    }

    pub fn z_coeff(&self) -> f64 {
        self.z_coeff
    }

    pub fn degree(&self) -> usize {
        self.y_poly.degree()
    }

    pub fn constants(&self) -> &BaseConstants {
        &self.constants
    }

    pub fn eval(&self, _t: f64, y: f64, z: f64) -> f64 {
        self.y_poly.eval(y) + self.z_coeff * z
    }

    /// Copy of the driver with the constant term lowered by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let p = self.y_poly.minus_constant(delta);
        let mut out = self.clone();
        let old = self.y_poly.coeffs()[0].abs();
        out.constants.k_t = self.constants.k_t - old + p.coeffs()[0].abs();
        out.constants
            .refresh_monotone_growth(p.coeffs()[0], self.z_coeff);
        out.y_poly = p;
        out
    }
}

pub fn eval_driver(spec: &DriverSpec, t: f64, y: f64, z: f64) -> f64 {
    spec.eval(t, y, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TamingKind {
    None,
    InnerProj,
    OuterProj,
    MultA,
    MultB,
    MultC,
    MultD,
}

impl TamingKind {
    pub const ALL: [TamingKind; 7] = [
        TamingKind::None,
        TamingKind::InnerProj,
        TamingKind::OuterProj,
        TamingKind::MultA,
        TamingKind::MultB,
        TamingKind::MultC,
        TamingKind::MultD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TamingKind::None => "none",
            TamingKind::InnerProj => "inner_proj",
            TamingKind::OuterProj => "outer_proj",
            TamingKind::MultA => "mult_a",
            TamingKind::MultB => "mult_b",
            TamingKind::MultC => "mult_c",
            TamingKind::MultD => "mult_d",
        }
    }

    pub fn is_multiplicative(self) -> bool {
        matches!(
            self,
            TamingKind::MultA | TamingKind::MultB | TamingKind::MultC | TamingKind::MultD
        )
    }

    /// Default radius exponent for a driver of degree `m`.
    pub fn default_exponent(self, m: usize) -> f64 {
        match self {
            TamingKind::None => 0.0,
            TamingKind::InnerProj if m > 1 => 1.0 / (2.0 * (m as f64 - 1.0)),
            _ => 0.5,
        }
    }
}

impl fmt::Display for TamingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TamingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TamingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            // the smoothed outer projection is the same construction as mult_a
            .or(if s == "outer_smooth" {
                Some(TamingKind::MultA)
            } else {
                None
            })
            .ok_or_else(|| invalid(format!("unknown taming kind '{s}'")))
    }
}

/// Taming family with radius `r(h) = r0 · h^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TamingSpec {
    pub kind: TamingKind,
    pub r0: f64,
    pub exponent: f64,
}

impl TamingSpec {
    pub fn new(kind: TamingKind, r0: f64, exponent: f64) -> Result<Self> {
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(invalid(format!(
                "taming radius constant must be positive, got {r0}"
            )));
        }
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(invalid(format!(
                "taming exponent must be non-negative, got {exponent}"
            )));
        }
        Ok(Self { kind, r0, exponent })
    }

    pub fn none() -> Self {
        Self {
            kind: TamingKind::None,
            r0: 1.0,
            exponent: 0.0,
        }
    }

    pub fn with_default_exponent(kind: TamingKind, r0: f64, degree: usize) -> Result<Self> {
        Self::new(kind, r0, kind.default_exponent(degree))
    }

    pub fn radius(&self, h: f64) -> f64 {
        self.r0 * h.powf(-self.exponent)
    }
}

/// A driver tamed at a fixed step size `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TamedDriver {
    base: DriverSpec,
    taming: TamingSpec,
    h: f64,
    radius: f64,
}

impl TamedDriver {
    pub fn new(base: DriverSpec, taming: TamingSpec, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid(format!("step size must be positive, got {h}")));
        }
        let radius = taming.radius(h);
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid(format!(
                "taming radius {radius} at h = {h} is not positive"
            )));
        }
        Ok(Self {
            base,
            taming,
            h,
            radius,
        })
    }

    pub fn untamed(base: DriverSpec, h: f64) -> Result<Self> {
        Self::new(base, TamingSpec::none(), h)
    }

    pub fn base(&self) -> &DriverSpec {
        &self.base
    }

    pub fn taming(&self) -> &TamingSpec {
        &self.taming
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Damping weight `F(y)` of the multiplicative kinds.
    pub fn damping_weight(&self, y: f64) -> f64 {
        let p = self.base.y_poly();
        let m = p.degree() as i32;
        match self.taming.kind {
            TamingKind::MultA => p.eval(y).abs(),
            TamingKind::MultB => {
                if y == 0.0 {
                    0.0
                } else {
                    (p.eval(y) - p.coeffs()[0]).abs() / y.abs()
                }
            }
            TamingKind::MultC => y.abs().powi(m),
            TamingKind::MultD => y.abs().powi((m - 1).max(0)),
            _ => 0.0,
        }
    }

    /// Tamed y-part `P^h(y)`.
    pub fn tamed_y_part(&self, y: f64) -> f64 {
        let p = self.base.y_poly();
        let r = self.radius;
        match self.taming.kind {
            TamingKind::None => p.eval(y),
            TamingKind::InnerProj => p.eval(y.clamp(-r, r)),
            TamingKind::OuterProj => p.eval(y).clamp(-r, r),
            _ => p.eval(y) / (1.0 + self.damping_weight(y) / r),
        }
    }

    /// `d P^h / dy`, one-sided at kinks.
    pub fn tamed_y_derivative(&self, y: f64) -> f64 {
        let p = self.base.y_poly();
        let dp = p.derivative();
        let r = self.radius;
        let m = p.degree() as i32;
        match self.taming.kind {
            TamingKind::None => dp.eval(y),
            TamingKind::InnerProj => {
                if y.abs() < r {
                    dp.eval(y)
                } else {
                    0.0
                }
            }
            TamingKind::OuterProj => {
                if p.eval(y).abs() < r {
                    dp.eval(y)
                } else {
                    0.0
                }
            }
            TamingKind::MultA => {
                let d = 1.0 + p.eval(y).abs() / r;
                dp.eval(y) / (d * d)
            }
            TamingKind::MultC | TamingKind::MultD => {
                let k = if self.taming.kind == TamingKind::MultC {
                    m
                } else {
                    (m - 1).max(0)
                };
                let d = 1.0 + y.abs().powi(k) / r;
                let dd = if k == 0 {
                    0.0
                } else {
                    k as f64 * y.abs().powi(k - 1) * y.signum() / r
                };
                dp.eval(y) / d - p.eval(y) * dd / (d * d)
            }
            TamingKind::MultB => {
                let step = 1e-7 * (1.0 + y.abs());
                (self.tamed_y_part(y + step) - self.tamed_y_part(y - step)) / (2.0 * step)
            }
        }
    }

    pub fn eval(&self, _t: f64, y: f64, z: f64) -> f64 {
        self.tamed_y_part(y) + self.base.z_coeff() * z
    }

    pub fn residual(&self, t: f64, y: f64, z: f64) -> f64 {
        self.base.eval(t, y, z) - self.eval(t, y, z)
    }
}

pub fn apply_taming(d: &TamedDriver, t: f64, y: f64, z: f64) -> f64 {
    d.eval(t, y, z)
}

pub fn taming_residual(d: &TamedDriver, t: f64, y: f64, z: f64) -> f64 {
    d.residual(t, y, z)
}

/// Step-size dependent constants of a tamed driver.
///
/// `growth_exponent` is the power of `|y|` in the growth bound: 1 for every
/// taming, `m` for the untamed driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub k_t: f64,
    pub k_y: f64,
    pub k_z: f64,
    pub mbar_t: f64,
    pub mbar_y: f64,
    pub mbar_z: f64,
    pub l_t: f64,
    pub l_y: f64,
    pub l_z: f64,
    pub m_y: f64,
    pub growth_exponent: f64,
    pub empirical: bool,
    pub witness_k: f64,
    pub witness_l: f64,
}

/// Half-width of the grid used to certify the multiplicative kinds without
/// closed-form constants.
const EMPIRICAL_RANGE: f64 = 50.0;
const EMPIRICAL_POINTS: usize = 200_001;

pub fn derive_constants(d: &TamedDriver) -> DerivedConstants {
    let base = d.base.constants();
    let p = d.base.y_poly();
    let m = p.degree();
    let mf = m as f64;
    let r = d.radius;
    let h = d.h;
    let alpha = MONOTONE_GROWTH_SLACK;
    let a0 = p.coeffs()[0];
    let tamed_mbar = (
        a0 * a0 / (2.0 * alpha),
        base.m_y.max(0.0) + alpha,
        base.mbar_z,
    );
    let (k_y, l_y, mbar, growth_exponent, empirical) = match d.taming.kind {
        TamingKind::None => (
            base.k_y,
            base.l_y,
            (base.mbar_t, base.mbar_y, base.mbar_z),
            mf.max(1.0),
            false,
        ),
        TamingKind::InnerProj => (
            base.k_y * r.powf((mf - 1.0).max(0.0)),
            2.0 * base.l_y * (1.0 + 2.0 * r.powf((mf - 1.0).max(0.0))),
            tamed_mbar,
            1.0,
            false,
        ),
        TamingKind::OuterProj => {
            let k_y = if m == 0 {
                0.0
            } else {
                base.k_y.powf(1.0 / mf) * r.powf((mf - 1.0) / mf)
            };
            (k_y, outer_lipschitz(p, r), tamed_mbar, 1.0, false)
        }
        TamingKind::MultC => (
            if m == 0 {
                0.0
            } else {
                base.k_y * r.powf((mf - 1.0) / mf)
            },
            base.l_y * (1.0 + 2.0 * r),
            tamed_mbar,
            1.0,
            false,
        ),
        TamingKind::MultD => (
            base.k_y * r,
            base.l_y * (3.0 + 2.0 * r),
            tamed_mbar,
            1.0,
            false,
        ),
        TamingKind::MultA | TamingKind::MultB => {
            let (k_y, l_y) = empirical_multiplicative(d, base.k_t, base.l_y);
            (k_y, l_y, tamed_mbar, 1.0, true)
        }
    };
    DerivedConstants {
        k_t: base.k_t,
        k_y,
        k_z: base.k_z,
        mbar_t: mbar.0,
        mbar_y: mbar.1,
        mbar_z: mbar.2,
        l_t: base.l_t,
        l_y,
        l_z: base.l_z,
        m_y: base.m_y,
        growth_exponent,
        empirical,
        witness_k: k_y * k_y * h,
        witness_l: l_y * l_y * h,
    }
}

/// Lipschitz constant of `clamp(P(y), -r, r)`: the largest `|P'|` over the
/// hull of `{ |P| ≤ r }`.
fn outer_lipschitz(p: &Polynomial, r: f64) -> f64 {
    if p.degree() == 0 {
        return 0.0;
    }
    let mut ends: Vec<f64> = p.minus_constant(r).real_roots();
    ends.extend(p.minus_constant(-r).real_roots());
    if ends.is_empty() {
        return 0.0;
    }
    let lo = ends.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ends.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    p.derivative().max_abs_on(lo, hi)
}

/// Growth and Lipschitz constants for `mult_a`/`mult_b`, sampled on a dense
/// symmetric grid: `K^h_y = sup (|P^h| - K_t)^+ / |y|` and
/// `L^h_y = L_y (1 + 2 sup χ(y) |y|^(m-1))`.
fn empirical_multiplicative(d: &TamedDriver, k_t: f64, l_y: f64) -> (f64, f64) {
    let m = d.base.degree() as i32;
    let mut k_y: f64 = 0.0;
    let mut damped_power: f64 = 0.0;
    for k in 0..EMPIRICAL_POINTS {
        let y = -EMPIRICAL_RANGE + 2.0 * EMPIRICAL_RANGE * k as f64 / (EMPIRICAL_POINTS - 1) as f64;
        if y != 0.0 {
            k_y = k_y.max((d.tamed_y_part(y).abs() - k_t).max(0.0) / y.abs());
        }
        let chi = 1.0 / (1.0 + d.damping_weight(y) / d.radius);
        damped_power = damped_power.max(chi * y.abs().powi((m - 1).max(0)));
    }
    (k_y, l_y * (1.0 + 2.0 * damped_power))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> DriverSpec {
        DriverSpec::new(&[0.0, 0.0, 0.0, -1.0], 0.0).unwrap()
    }

    /// Driver with radius `r` fixed by choosing `exponent = 0`.
    fn tamed(kind: TamingKind, r: f64) -> TamedDriver {
        TamedDriver::new(cubic(), TamingSpec::new(kind, r, 0.0).unwrap(), 0.1).unwrap()
    }

    #[test]
    fn driver_values() {
        assert_eq!(eval_driver(&cubic(), 0.0, 2.0, 0.0), -8.0);
        let d = DriverSpec::new(&[0.0, 1.0, 0.0, -1.0], 0.0).unwrap();
        assert_eq!(eval_driver(&d, 0.0, 1.0, 0.0), 0.0);
        let q = DriverSpec::new(&[0.0, 0.0, -1.0], 0.0).unwrap();
        assert_eq!(eval_driver(&q, 0.0, 3.0, 0.0), -9.0);
        let z = DriverSpec::new(&[1.0], 2.0).unwrap();
        assert_eq!(z.eval(0.0, 5.0, 0.5), 2.0);
    }

    #[test]
    fn base_constants() {
        let c = *cubic().constants();
        assert_eq!((c.k_t, c.k_y, c.l_y, c.m_y), (0.0, 1.0, 1.5, 0.0));
        let c = *DriverSpec::new(&[0.0, 1.0, 0.0, -1.0], 0.0)
            .unwrap()
            .constants();
        assert_eq!((c.k_t, c.k_y, c.l_y), (1.0, 2.0, 2.5));
        assert!((c.m_y - 1.0).abs() < 1e-15);
        let c = *DriverSpec::new(&[0.0, 0.0, -1.0], 0.0).unwrap().constants();
        assert_eq!(c.m_y, f64::INFINITY);
        assert_eq!(c.l_y, 1.0);
    }

    #[test]
    fn overrides_refresh_monotone_growth() {
        let d = DriverSpec::new(&[0.0, 0.0, -1.0], 0.0)
            .unwrap()
            .with_overrides(&ConstantOverrides {
                m_y: Some(0.0),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(d.constants().m_y, 0.0);
        assert_eq!(d.constants().mbar_y, MONOTONE_GROWTH_SLACK);
        let bad = ConstantOverrides {
            l_y: Some(-1.0),
            ..Default::default()
        };
        assert!(cubic().with_overrides(&bad).is_err());
    }

    #[test]
    fn taming_examples() {
        assert_eq!(
            apply_taming(&tamed(TamingKind::InnerProj, 1.0), 0.0, 2.0, 0.0),
            -1.0
        );
        assert_eq!(
            apply_taming(&tamed(TamingKind::OuterProj, 1.5), 0.0, 2.0, 0.0),
            -1.5
        );
        let c = apply_taming(&tamed(TamingKind::MultC, 1.0), 0.0, 2.0, 0.0);
        assert!((c + 8.0 / 9.0).abs() < 1e-15);
        let res = taming_residual(&tamed(TamingKind::MultC, 1.0), 0.0, 2.0, 0.0);
        assert!((res + 64.0 / 9.0).abs() < 1e-14);
        // mult_d: -8 / (1 + 4)
        assert!((tamed(TamingKind::MultD, 1.0).eval(0.0, 2.0, 0.0) + 1.6).abs() < 1e-15);
        // mult_a: -8 / (1 + 8)
        assert!((tamed(TamingKind::MultA, 1.0).eval(0.0, 2.0, 0.0) + 8.0 / 9.0).abs() < 1e-15);
        // mult_b: F(2) = 8 / 2 = 4
        assert!((tamed(TamingKind::MultB, 1.0).eval(0.0, 2.0, 0.0) + 1.6).abs() < 1e-15);
        assert_eq!(tamed(TamingKind::MultB, 1.0).eval(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn projections_are_identity_inside_the_ball() {
        let inner = tamed(TamingKind::InnerProj, 2.0);
        let outer = tamed(TamingKind::OuterProj, 2.0);
        for k in -100..=100 {
            let y = 0.01 * k as f64;
            assert_eq!(inner.eval(0.0, y, 0.0), cubic().eval(0.0, y, 0.0));
            assert_eq!(outer.eval(0.0, y, 0.0), cubic().eval(0.0, y, 0.0));
            assert_eq!(inner.residual(0.0, y, 0.0), 0.0);
        }
    }

    #[test]
    fn untamed_equals_base() {
        let d = TamedDriver::untamed(cubic(), 0.01).unwrap();
        for k in -50..=50 {
            let y = 0.37 * k as f64;
            assert_eq!(d.eval(0.0, y, 1.0), cubic().eval(0.0, y, 1.0));
        }
    }

    #[test]
    fn z_part_is_untouched() {
        let base = DriverSpec::new(&[0.0, 0.0, 0.0, -1.0], 0.7).unwrap();
        for kind in TamingKind::ALL {
            let d = TamedDriver::new(base.clone(), TamingSpec::new(kind, 1.0, 0.5).unwrap(), 0.25)
                .unwrap();
            let diff = d.eval(0.0, 3.0, 2.0) - d.eval(0.0, 3.0, 0.0);
            assert!((diff - 1.4).abs() < 1e-14, "{kind}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in TamingKind::ALL {
            let d = TamedDriver::new(
                DriverSpec::new(&[0.3, 1.0, 0.0, -1.0], 0.0).unwrap(),
                TamingSpec::new(kind, 1.3, 0.0).unwrap(),
                0.1,
            )
            .unwrap();
            for &y in &[-2.7, -0.4, 0.05, 0.8, 3.1] {
                let e = 1e-6;
                let fd = (d.tamed_y_part(y + e) - d.tamed_y_part(y - e)) / (2.0 * e);
                let an = d.tamed_y_derivative(y);
                assert!(
                    (fd - an).abs() < 1e-5 * (1.0 + fd.abs()),
                    "{kind} y={y}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn derived_constant_examples() {
        // inner with r(h) = 4: K^h_y = 1 * 4^2
        let d = tamed(TamingKind::InnerProj, 4.0);
        assert_eq!(derive_constants(&d).k_y, 16.0);
        let d = tamed(TamingKind::InnerProj, 1.0);
        assert_eq!(derive_constants(&d).l_y, 6.0 * 1.5);
        // mult_d with L_y = 1 and r = 2
        let lin = DriverSpec::new(&[0.0, -1.0], 0.0).unwrap();
        assert_eq!(lin.constants().l_y, 1.0);
        let d = TamedDriver::new(
            lin,
            TamingSpec::new(TamingKind::MultD, 2.0, 0.0).unwrap(),
            0.1,
        )
        .unwrap();
        assert_eq!(derive_constants(&d).l_y, 7.0);
        // outer on -y^3 with r = 8: set |y| <= 2, sup |P'| = 12
        let d = tamed(TamingKind::OuterProj, 8.0);
        assert!((derive_constants(&d).l_y - 12.0).abs() < 1e-9);
    }

    #[test]
    fn inner_witnesses_are_flat_at_critical_exponent() {
        let spec = TamingSpec::with_default_exponent(TamingKind::InnerProj, 1.0, 3).unwrap();
        assert_eq!(spec.exponent, 0.25);
        let ks: Vec<f64> = [8usize, 64, 2048]
            .iter()
            .map(|&n| {
                let d = TamedDriver::new(cubic(), spec, 1.0 / n as f64).unwrap();
                derive_constants(&d).witness_k
            })
            .collect();
        for k in &ks {
            assert!((k - ks[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn parses_kind_names() {
        for kind in TamingKind::ALL {
            assert_eq!(kind.name().parse::<TamingKind>().unwrap(), kind);
        }
        assert_eq!(
            "outer_smooth".parse::<TamingKind>().unwrap(),
            TamingKind::MultA
        );
        assert!("bogus".parse::<TamingKind>().is_err());
    }
}
