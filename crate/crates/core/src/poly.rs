//! Real polynomials in one variable with exact real-root isolation.

use std::fmt;

/// `a_0 + a_1 x + ... + a_m x^m`, trailing zero coefficients trimmed.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: &[f64]) -> Self {
        let mut coeffs = coeffs.to_vec();
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self::new(&[0.0])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, a| acc * x + a)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero();
        }
        let d: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, a)| k as f64 * a)
            .collect();
        Self::new(&d)
    }

    /// Shifts the constant term: returns `self - c`.
    pub fn minus_constant(&self, c: f64) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs[0] -= c;
        Self::new(&coeffs)
    }

    /// Every coefficient finite.
    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|a| a.is_finite())
    }

    /// Sorted distinct real roots.
    ///
    /// Roots of the derivative split the line into monotone pieces; each piece
    /// holding a sign change is bisected to machine precision. Roots of even
    /// multiplicity are found as roots of the derivative at which the
    /// polynomial vanishes.
    pub fn real_roots(&self) -> Vec<f64> {
        let m = self.degree();
        if m == 0 {
            return Vec::new();
        }
        if m == 1 {
            return vec![-self.coeffs[0] / self.coeffs[1]];
        }
        let bound = self.cauchy_bound();
        let critical = self.derivative().real_roots();
        let mut knots = Vec::with_capacity(critical.len() + 2);
        knots.push(-bound);
        knots.extend(critical.iter().copied().filter(|c| c.abs() < bound));
        knots.push(bound);

        let scale = self.coeffs.iter().fold(0.0f64, |s, a| s.max(a.abs()));
        let mut roots: Vec<f64> = Vec::new();
        for w in knots.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (flo, fhi) = (self.eval(lo), self.eval(hi));
            if flo == 0.0 {
                roots.push(lo);
            }
            if flo.signum() * fhi.signum() < 0.0 {
                roots.push(self.bisect(lo, hi, flo));
            }
        }
        let last = knots[knots.len() - 1];
        if self.eval(last) == 0.0 {
            roots.push(last);
        }
        // touching roots: critical points where the value is numerically zero
        for &c in &critical {
            let tol = 1e-12 * scale * (1.0 + c.abs()).powi(m as i32);
            if self.eval(c).abs() <= tol {
                roots.push(c);
            }
        }
        roots.sort_by(|a, b| a.total_cmp(b));
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * (1.0 + b.abs()));
        roots
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = self.eval(mid);
            if fm == 0.0 {
                return mid;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Every real root lies strictly inside `(-bound, bound)`.
    fn cauchy_bound(&self) -> f64 {
        let lead = self.leading().abs();
        let m = self.degree();
        1.0 + self.coeffs[..m]
            .iter()
            .fold(0.0f64, |s, a| s.max(a.abs() / lead))
    }

    /// `sup_x p(x)` over the real line; `+inf` when unbounded above.
    pub fn supremum(&self) -> f64 {
        let m = self.degree();
        if m == 0 {
            return self.coeffs[0];
        }
        if m % 2 == 1 || self.leading() > 0.0 {
            return f64::INFINITY;
        }
        self.derivative()
            .real_roots()
            .into_iter()
            .map(|c| self.eval(c))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |p(x)|` over `[lo, hi]`.
    pub fn max_abs_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best = self.eval(lo).abs().max(self.eval(hi).abs());
        for c in self.derivative().real_roots() {
            if c > lo && c < hi {
                best = best.max(self.eval(c).abs());
            }
        }
        best
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.coeffs.iter().map(|a| a.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}
