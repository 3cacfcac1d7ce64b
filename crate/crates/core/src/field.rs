//! The right-hand side `f(t, u, v)` of `-u'' = f(t, u, u')` and the Nagumo
//! growth data `phi`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Var};
use crate::quad::adaptive_simpson;

pub type ScalarFn3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type ScalarFn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Partials {
    pub du: ScalarFn3,
    pub dv: ScalarFn3,
}

/// A `T`-periodic force law. Cheap to clone.
#[derive(Clone)]
pub struct Field {
    rhs: ScalarFn3,
    period: f64,
    partials: Option<Partials>,
    conservative: bool,
    autonomous: bool,
    label: String,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("label", &self.label)
            .field("period", &self.period)
            .field("conservative", &self.conservative)
            .field("autonomous", &self.autonomous)
            .field("partials", &self.partials.is_some())
            .finish()
    }
}

impl Field {
    /// A field from a closure; declare independence of `t`/`v` with
    /// [`Field::autonomous`] and [`Field::conservative`].
    pub fn new<F>(label: impl Into<String>, period: f64, rhs: F) -> Result<Field>
    where
        F: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidField(format!("period must be positive, got {period}")));
        }
        Ok(Field {
            rhs: Arc::new(rhs),
            period,
            partials: None,
            conservative: false,
            autonomous: false,
            label: label.into(),
        })
    }

    pub fn conservative(mut self, flag: bool) -> Field {
        self.conservative = flag;
        self
    }

    pub fn autonomous(mut self, flag: bool) -> Field {
        self.autonomous = flag;
        self
    }

    pub fn with_partials<A, B>(mut self, du: A, dv: B) -> Field
    where
        A: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.partials = Some(Partials {
            du: Arc::new(du),
            dv: Arc::new(dv),
        });
        self
    }

    /// Parses `source` in the variables `t, u, v`. The conservative and
    /// autonomous flags are read off the expression, and the declared
    /// period is checked by sampling when `t` occurs. A force independent of
    /// the state gets exact zero partials.
    pub fn from_expr(source: &str, params: &BTreeMap<String, f64>, period: f64) -> Result<Field> {
        let ast = parse_expr(source, &["t", "u", "v"], params)?;
        let conservative = !ast.depends_on(Var::V);
        let autonomous = !ast.depends_on(Var::T);
        let state_free = conservative && !ast.depends_on(Var::U);
        let mut field = Field::new(source.trim(), period, move |t, u, v| ast.eval(t, u, v))?
            .conservative(conservative)
            .autonomous(autonomous);
        if state_free {
            field = field.with_partials(|_, _, _| 0.0, |_, _, _| 0.0);
        }
        field.check_invariants()?;
        Ok(field)
    }

    /// Attaches user-supplied partial derivatives given as expressions.
    pub fn with_partial_exprs(self, du: &str, dv: &str, params: &BTreeMap<String, f64>) -> Result<Field> {
        let du = parse_expr(du, &["t", "u", "v"], params)?;
        let dv = parse_expr(dv, &["t", "u", "v"], params)?;
        Ok(self.with_partials(move |t, u, v| du.eval(t, u, v), move |t, u, v| dv.eval(t, u, v)))
    }

    #[inline]
    pub fn eval(&self, t: f64, u: f64, v: f64) -> f64 {
        (self.rhs)(t, u, v)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn partials(&self) -> Option<&Partials> {
        self.partials.as_ref()
    }

    pub fn is_conservative(&self) -> bool {
        self.conservative
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn rhs(&self) -> &ScalarFn3 {
        &self.rhs
    }

    /// Sampled check of periodicity in `t` and of `v`-independence when the
    /// field is declared conservative.
    pub fn check_invariants(&self) -> Result<()> {
        let period = self.period;
        for i in 0..16 {
            let t = period * (i as f64 + 0.37) / 16.0;
            let u = -3.0 + 0.41 * i as f64;
            let v = 2.0 - 0.29 * i as f64;
            let a = self.eval(t, u, v);
            if !self.autonomous {
                let b = self.eval(t + period, u, v);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                    return Err(Error::InvalidField(format!(
                        "not {period}-periodic in t: f({t},{u},{v}) = {a} but f(t+T) = {b}"
                    )));
                }
            }
            if self.conservative {
                let b = self.eval(t, u, -3.0 * v + 1.0);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return Err(Error::InvalidField("declared conservative but depends on v".into()));
                }
            }
        }
        Ok(())
    }

    /// `f_rev(t, u, v) = f(-t, u, -v)`: `w(t) = u(-t)` solves the reversed
    /// equation iff `u` solves the original one.
    pub fn reversed(&self) -> Field {
        let rhs = self.rhs.clone();
        let partials = self.partials.as_ref().map(|p| {
            let du = p.du.clone();
            let dv = p.dv.clone();
            Partials {
                du: Arc::new(move |t: f64, u: f64, v: f64| du(-t, u, -v)) as ScalarFn3,
                dv: Arc::new(move |t: f64, u: f64, v: f64| -dv(-t, u, -v)) as ScalarFn3,
            }
        });
        Field {
            rhs: Arc::new(move |t, u, v| rhs(-t, u, -v)),
            period: self.period,
            partials,
            conservative: self.conservative,
            autonomous: self.autonomous,
            label: format!("reversed({})", self.label),
        }
    }

    /// `f_m(t, u, v) = -f(t, -u, -v)`: `-u` solves the reflected equation iff
    /// `u` solves the original one; lower and upper solutions swap roles.
    pub fn reflected(&self) -> Field {
        let rhs = self.rhs.clone();
        let partials = self.partials.as_ref().map(|p| {
            let du = p.du.clone();
            let dv = p.dv.clone();
            Partials {
                du: Arc::new(move |t: f64, u: f64, v: f64| du(t, -u, -v)) as ScalarFn3,
                dv: Arc::new(move |t: f64, u: f64, v: f64| dv(t, -u, -v)) as ScalarFn3,
            }
        });
        Field {
            rhs: Arc::new(move |t, u, v| -rhs(t, -u, -v)),
            period: self.period,
            partials,
            conservative: self.conservative,
            autonomous: self.autonomous,
            label: format!("reflected({})", self.label),
        }
    }
}

/// Positive growth bound `phi` of the Nagumo condition.
#[derive(Clone)]
pub struct NagumoSpec {
    phi: ScalarFn1,
    description: String,
}

impl fmt::Debug for NagumoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NagumoSpec").field("description", &self.description).finish()
    }
}

/// Speeds at which `phi` is required to be positive.
fn positivity_samples() -> impl Iterator<Item = f64> {
    let linear = (0..=100).map(|i| i as f64 * 0.1);
    let geometric = (0..=90).map(|i| 10f64.powf(-3.0 + i as f64 / 10.0));
    linear.chain(geometric)
}

impl NagumoSpec {
    pub fn new<F>(description: impl Into<String>, phi: F) -> Result<NagumoSpec>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        for s in positivity_samples() {
            let value = phi(s);
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidNagumo { at: s, value });
            }
        }
        Ok(NagumoSpec {
            phi: Arc::new(phi),
            description: description.into(),
        })
    }

    /// Parses `phi` as an expression in the speed variable `v`.
    pub fn from_expr(source: &str, params: &BTreeMap<String, f64>) -> Result<NagumoSpec> {
        let ast = parse_expr(source, &["v"], params)?;
        NagumoSpec::new(source.trim(), move |s| ast.eval(0.0, 0.0, s))
    }

    #[inline]
    pub fn phi(&self, s: f64) -> f64 {
        (self.phi)(s)
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// `∫_a^b v / phi(v) dv` by adaptive Simpson.
    pub fn speed_integral(&self, a: f64, b: f64) -> f64 {
        adaptive_simpson(&|v: f64| v / self.phi(v), a, b, QUAD_TOL)
    }
}

pub(crate) const QUAD_TOL: f64 = 1e-10;
const NAGUMO_CAP: f64 = 1e6;
const K_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NagumoStatus {
    /// The partial integral exceeds the gap; `margin` is `I(K) - gap`.
    Satisfied { margin: f64 },
    /// Integral plus a tail bound (valid under the monotone-tail
    /// assumption) stays below the gap.
    Violated { upper_bound: f64 },
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NagumoVerdict {
    pub status: NagumoStatus,
    /// Smallest speed `K` with `∫_0^K v/phi > gap` (to relative 1e-6).
    pub k_candidate: Option<f64>,
    /// Partial integral at the last speed examined.
    pub integral: f64,
}

impl NagumoVerdict {
    pub fn is_satisfied(&self) -> bool {
        matches!(self.status, NagumoStatus::Satisfied { .. })
    }
}

/// Checks `∫_0^∞ v/phi(v) dv > gap` by integrating over `[0, V]` for
/// doubling `V` up to `1e6`.
///
/// "Violated" is only reported under the monotone-tail assumption: the local
/// decay exponent `p(V) = log2(g(V/2)/g(V))` of `g = v/phi` has been
/// non-decreasing over the last three doublings and exceeds one, so that
/// `∫_V^∞ g <= g(V) V / (p - 1)`.
pub fn nagumo_check(phi: &NagumoSpec, gap: f64) -> Result<NagumoVerdict> {
    if !(gap >= 0.0) {
        return Err(Error::Precondition(format!("gap must be non-negative, got {gap}")));
    }
    let g = |v: f64| v / phi.phi(v);
    if gap == 0.0 {
        return Ok(NagumoVerdict {
            status: NagumoStatus::Satisfied { margin: 0.0 },
            k_candidate: Some(0.0),
            integral: 0.0,
        });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut integral = 0.0;
    let mut exponents: Vec<f64> = Vec::new();
    while hi <= NAGUMO_CAP {
        let piece = adaptive_simpson(&g, lo, hi, QUAD_TOL);
        if integral + piece > gap {
            let base = integral;
            let (mut a, mut b) = (lo, hi);
            let mut value_b = base + piece;
            while b - a > K_REL_TOL * b {
                let mid = 0.5 * (a + b);
                let value = base + adaptive_simpson(&g, lo, mid, QUAD_TOL);
                if value > gap {
                    b = mid;
                    value_b = value;
                } else {
                    a = mid;
                }
            }
            return Ok(NagumoVerdict {
                status: NagumoStatus::Satisfied { margin: value_b - gap },
                k_candidate: Some(b),
                integral: value_b,
            });
        }
        integral += piece;
        if hi >= 1.0 {
            let p = (g(0.5 * hi) / g(hi)).log2();
            exponents.push(p);
            let n = exponents.len();
            if n >= 3 && p > 1.0 && exponents[n - 3] <= exponents[n - 2] && exponents[n - 2] <= p {
                let tail = g(hi) * hi / (p - 1.0);
                if integral + tail < gap {
                    return Ok(NagumoVerdict {
                        status: NagumoStatus::Violated {
                            upper_bound: integral + tail,
                        },
                        k_candidate: None,
                        integral,
                    });
                }
            }
        }
        lo = hi;
        hi *= 2.0;
    }
    Ok(NagumoVerdict {
        status: NagumoStatus::Inconclusive,
        k_candidate: None,
        integral,
    })
}
