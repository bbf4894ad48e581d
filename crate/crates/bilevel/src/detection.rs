//! Detection functions: 1-minimised, strongly convex divergences on `[0, C]`
//! measuring how far an importance weight sits from 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectionKind {
    /// ½(x − 1)².
    #[default]
    Quadratic,
    /// (x − 1)² / (1 + x): chi-square with the denominator softened so the
    /// derivative stays bounded at x = 0.
    SoftChiSquare,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DetectionFunction<T> {
    pub kind: DetectionKind,
    /// M: D(x) − (M/2)x² is convex on [0, C].
    pub strong_convexity: T,
    /// L: Lipschitz constant of D on [0, C].
    pub lipschitz: T,
    /// C.
    pub domain_cap: T,
    /// c₂ ≥ sup |D′|.
    pub deriv_bound: T,
    /// c₁ ≥ sup |D|.
    pub value_bound: T,
}

impl<T: Scalar> DetectionFunction<T> {
    /// Builds the function with its tight constants on `[0, cap]`.
    pub fn new(kind: DetectionKind, cap: T) -> Result<Self> {
        if !(cap >= T::one()) || !cap.is_finite() {
            return Err(Error::Config(format!("domain cap must be finite and >= 1, got {cap}")));
        }
        let one = T::one();
        let half = T::of(0.5);
        let d = match kind {
            DetectionKind::Quadratic => {
                let c2 = one.max(cap - one);
                Self {
                    kind,
                    strong_convexity: one,
                    lipschitz: c2,
                    domain_cap: cap,
                    deriv_bound: c2,
                    value_bound: half.max(half * (cap - one).powi(2)),
                }
            }
            DetectionKind::SoftChiSquare => {
                // D'(x) = (x−1)(x+3)/(1+x)² runs from −3 at 0 up to below 1 on [0, C].
                let c2 = T::of(3.0);
                Self {
                    kind,
                    strong_convexity: T::of(8.0) / (one + cap).powi(3),
                    lipschitz: c2,
                    domain_cap: cap,
                    deriv_bound: c2,
                    value_bound: one.max((cap - one).powi(2) / (one + cap)),
                }
            }
        };
        Ok(d)
    }

    pub fn quadratic(cap: T) -> Self {
        Self::new(DetectionKind::Quadratic, cap).expect("cap >= 1")
    }

    fn check(&self, x: T) -> Result<()> {
        if x >= T::zero() && x <= self.domain_cap {
            Ok(())
        } else {
            Err(Error::Domain {
                x: x.to_f64_lossy(),
                cap: self.domain_cap.to_f64_lossy(),
            })
        }
    }

    pub fn eval(&self, x: T) -> Result<T> {
        self.check(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub fn deriv(&self, x: T) -> Result<T> {
        self.check(x)?;
        Ok(self.deriv_unchecked(x))
    }

    /// D(x) without the domain check, for hot loops whose inputs are
    /// already range-limited.
    pub fn eval_unchecked(&self, x: T) -> T {
        let one = T::one();
        match self.kind {
            DetectionKind::Quadratic => T::of(0.5) * (x - one) * (x - one),
            DetectionKind::SoftChiSquare => (x - one) * (x - one) / (one + x),
        }
    }

    pub fn deriv_unchecked(&self, x: T) -> T {
        let one = T::one();
        match self.kind {
            DetectionKind::Quadratic => x - one,
            DetectionKind::SoftChiSquare => (x - one) * (x + T::of(3.0)) / ((one + x) * (one + x)),
        }
    }

    /// argmax over x ∈ [0, C] of x·y − D(x).
    pub fn conjugate_argmax(&self, y: T) -> T {
        let cap = self.domain_cap;
        match self.kind {
            DetectionKind::Quadratic => (T::one() + y).max(T::zero()).min(cap),
            DetectionKind::SoftChiSquare => {
                // The objective is concave, so its maximiser is either an
                // endpoint or the unique root of y − D′(x).
                let (mut lo, mut hi) = (T::zero(), cap);
                if y <= self.deriv_unchecked(lo) {
                    return lo;
                }
                if y >= self.deriv_unchecked(hi) {
                    return hi;
                }
                for _ in 0..200 {
                    let mid = T::of(0.5) * (lo + hi);
                    if self.deriv_unchecked(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= T::epsilon() * (T::one() + hi) {
                        break;
                    }
                }
                T::of(0.5) * (lo + hi)
            }
        }
    }

    /// Fenchel–Legendre conjugate restricted to [0, C]:
    /// D*(y) = sup_{x ∈ [0, C]} {x·y − D(x)}.
    pub fn conjugate(&self, y: T) -> T {
        match self.kind {
            DetectionKind::Quadratic => {
                let x = self.conjugate_argmax(y);
                x * y - self.eval_unchecked(x)
            }
            _ => {
                let x = ternary_max(|x| x * y - self.eval_unchecked(x), T::zero(), self.domain_cap);
                (x * y - self.eval_unchecked(x))
                    .max(-self.eval_unchecked(T::zero()))
                    .max(self.domain_cap * y - self.eval_unchecked(self.domain_cap))
            }
        }
    }

    /// Grid certification of all claimed properties. Always evaluated in
    /// f64: second differences on a 10⁴-point grid are below f32 resolution.
    pub fn certify(&self) -> CertificateReport {
        let d64 = DetectionFunction::<f64> {
            kind: self.kind,
            strong_convexity: self.strong_convexity.to_f64_lossy(),
            lipschitz: self.lipschitz.to_f64_lossy(),
            domain_cap: self.domain_cap.to_f64_lossy(),
            deriv_bound: self.deriv_bound.to_f64_lossy(),
            value_bound: self.value_bound.to_f64_lossy(),
        };
        let consts = Constants {
            cap: d64.domain_cap,
            strong_convexity: d64.strong_convexity,
            lipschitz: d64.lipschitz,
            deriv_bound: d64.deriv_bound,
            value_bound: d64.value_bound,
        };
        certify_fn(|x| d64.eval_unchecked(x), |x| d64.deriv_unchecked(x), &consts, 1e-9)
    }
}

fn ternary_max<T: Scalar>(f: impl Fn(T) -> T, mut lo: T, mut hi: T) -> T {
    let three = T::of(3.0);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / three;
        let m2 = hi - (hi - lo) / three;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
        if hi - lo <= T::epsilon() * (T::one() + hi.abs()) {
            break;
        }
    }
    T::of(0.5) * (lo + hi)
}

/// Constants a candidate divergence claims on `[0, cap]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub cap: f64,
    pub strong_convexity: f64,
    pub lipschitz: f64,
    pub deriv_bound: f64,
    pub value_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation seen on the grid (0 when passing).
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateReport {
    pub checks: Vec<PropertyCheck>,
}

impl CertificateReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CERTIFY_GRID: usize = 10_000;

/// Grid certification of an arbitrary candidate `(D, D′)` against claimed
/// constants. Properties: one_minimum, nonnegative, bounded_derivative,
/// bounded_value, strong_convexity, plus the Lipschitz claim.
pub fn certify_fn(d: impl Fn(f64) -> f64, dd: impl Fn(f64) -> f64, c: &Constants, tol: f64) -> CertificateReport {
    let n = CERTIFY_GRID;
    let h = c.cap / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| d(x)).collect();
    let ders: Vec<f64> = xs.iter().map(|&x| dd(x)).collect();
    let scale = 1.0 + vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut checks = Vec::new();
    let one_min = d(1.0).abs();
    checks.push(PropertyCheck {
        name: "one_minimum",
        passed: one_min <= tol && vals.iter().all(|&v| v >= d(1.0) - tol * scale),
        worst: one_min.max(vals.iter().fold(0.0f64, |m, &v| m.max(d(1.0) - v))),
    });
    let neg = vals.iter().fold(0.0f64, |m, &v| m.max(-v));
    checks.push(PropertyCheck {
        name: "nonnegative",
        passed: neg <= tol * scale,
        worst: neg,
    });
    let dv = ders.iter().fold(0.0f64, |m, &v| m.max(v.abs() - c.deriv_bound));
    checks.push(PropertyCheck {
        name: "bounded_derivative",
        passed: dv <= tol * (1.0 + c.deriv_bound),
        worst: dv.max(0.0),
    });
    let vv = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs() - c.value_bound));
    checks.push(PropertyCheck {
        name: "bounded_value",
        passed: vv <= tol * (1.0 + c.value_bound),
        worst: vv.max(0.0),
    });
    // D(x) − (M/2)x² convex  ⇔  its slopes are nondecreasing.
    let g: Vec<f64> = xs
        .iter()
        .zip(&vals)
        .map(|(&x, &v)| v - 0.5 * c.strong_convexity * x * x)
        .collect();
    let mut sc = 0.0f64;
    for w in g.windows(3) {
        let second = (w[2] - 2.0 * w[1] + w[0]) / (h * h);
        sc = sc.max(-second);
    }
    // second differences lose about ε·|D|/h² to rounding
    let sc_tol = 64.0 * f64::EPSILON * scale / (h * h);
    checks.push(PropertyCheck {
        name: "strong_convexity",
        passed: sc <= sc_tol,
        worst: sc,
    });
    let mut lip = 0.0f64;
    for w in vals.windows(2) {
        lip = lip.max((w[1] - w[0]).abs() / h - c.lipschitz);
    }
    checks.push(PropertyCheck {
        name: "lipschitz",
        passed: lip <= tol * (1.0 + c.lipschitz) + 1e-9,
        worst: lip.max(0.0),
    });
    CertificateReport { checks }
}
