//! The truncated field
//! `g(t, u, v) = -u + clamp_band(t, u) + f(t, clamp_band(t, u), clamp_K(v))`,
//! its speed constants and the check that a solution of `g` also solves `f`.

use log::warn;

use crate::curves::Band;
use crate::error::{Error, Result};
use crate::field::{nagumo_check, Field, NagumoSpec};
use crate::flow::Trajectory;

/// Relative excess demanded of the Nagumo integral when choosing `K`.
pub const K_MARGIN: f64 = 0.05;
/// Relative excess demanded of `∫_ε^K v/φ(v) dv` over the band width.
pub const EPSILON_MARGIN: f64 = 1e-3;
const GRID: usize = 64;
const INFLATE: f64 = 1.1;

/// Truncated field with its constants. Cheap to clone.
#[derive(Debug, Clone)]
pub struct ModifiedField {
    base: Field,
    band: Band,
    phi: NagumoSpec,
    field: Field,
    k: f64,
    epsilon: f64,
    m_bound: f64,
    b_bound: f64,
    integral_k: f64,
    warning: Option<String>,
}

/// Smallest `x` in `(lo, hi]` with `pred(x)`, assuming `pred` is monotone
/// and `pred(hi)` holds; returns the upper bracket end.
fn bisect_up(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    while hi - lo > 1e-6 * hi.abs().max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn build_modified(field: &Field, band: &Band, phi: &NagumoSpec) -> Result<ModifiedField> {
    if (band.period() - field.period()).abs() > 1e-12 * field.period() {
        return Err(Error::PeriodMismatch {
            curve: band.period(),
            field: field.period(),
        });
    }
    let width = band.width();
    let verdict = nagumo_check(phi, width)?;
    if !verdict.is_satisfied() {
        return Err(Error::NagumoNotSatisfied(format!(
            "{:?} for gap {width} with phi = {}",
            verdict.status,
            phi.description()
        )));
    }
    let slope = band.lower().max_abs_slope(512).max(band.upper().max_abs_slope(512));
    let slope_bound = slope * (1.0 + 1e-3) + 1e-9;
    let mut warning = None;

    let k = if width <= 0.0 {
        let msg = "degenerate band: any speed bound above the barrier slopes works".to_string();
        warn!("{msg}");
        warning = Some(msg);
        slope_bound.max(1.0)
    } else {
        let target = width * (1.0 + K_MARGIN);
        let enough = |k: f64| phi.speed_integral(0.0, k) >= target;
        let mut hi = verdict.k_candidate.unwrap_or(1.0).max(1e-6);
        while !enough(hi) {
            hi *= 2.0;
            if hi > 1e7 {
                return Err(Error::NagumoNotSatisfied(format!(
                    "no speed bound reaches {target} below 1e7"
                )));
            }
        }
        let mut lo = hi;
        while lo > 1e-12 && enough(lo) {
            lo *= 0.5;
        }
        bisect_up(lo, hi, enough).max(slope_bound)
    };
    let epsilon = choose_epsilon(phi, k, width);
    with_constants(field, band, phi, k, epsilon, warning)
}

/// Largest `ε` (to relative `1e-6`) keeping `∫_ε^K v/φ(v) dv` above the
/// width with the epsilon margin.
fn choose_epsilon(phi: &NagumoSpec, k: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return 0.5 * k;
    }
    let target = width * (1.0 + EPSILON_MARGIN);
    let holds = |e: f64| phi.speed_integral(e, k) > target;
    // coarse grid K/2, K/4, ... then bisection on the last cell
    let mut hi = 0.5 * k;
    while !holds(hi) {
        hi *= 0.5;
        if hi < 1e-14 * k {
            return 0.0;
        }
    }
    let mut lo = hi;
    let mut up = (2.0 * hi).min(k);
    if up <= lo {
        return lo;
    }
    while up - lo > 1e-6 * lo {
        let mid = 0.5 * (lo + up);
        if holds(mid) {
            lo = mid;
        } else {
            up = mid;
        }
    }
    lo
}

fn with_constants(
    base: &Field,
    band: &Band,
    phi: &NagumoSpec,
    k: f64,
    epsilon: f64,
    warning: Option<String>,
) -> Result<ModifiedField> {
    let truncated = truncate(base, band, k)?;
    let (m_bound, b_bound) = sampled_bounds(&truncated, band, k);
    let integral_k = phi.speed_integral(0.0, k);
    Ok(ModifiedField {
        base: base.clone(),
        band: band.clone(),
        phi: phi.clone(),
        field: truncated,
        k,
        epsilon,
        m_bound,
        b_bound,
        integral_k,
        warning,
    })
}

fn truncate(base: &Field, band: &Band, k: f64) -> Result<Field> {
    let (f, b) = (base.clone(), band.clone());
    let constant_band = band.lower().constant_value().is_some() && band.upper().constant_value().is_some();
    let mut out = Field::new(format!("modified({})", base.label()), base.period(), move |t, u, v| {
        let g = b.clamp(t, u);
        -u + g + f.eval(t, g, v.clamp(-k, k))
    })?
    .conservative(base.is_conservative())
    .autonomous(base.is_autonomous() && constant_band);
    if let Some(p) = base.partials() {
        let (du, dv) = (p.du.clone(), p.dv.clone());
        let (b1, b2) = (band.clone(), band.clone());
        out = out.with_partials(
            move |t, u, v| {
                let g = b1.clamp(t, u);
                if g == u {
                    du(t, g, v.clamp(-k, k))
                } else {
                    -1.0
                }
            },
            move |t, u, v| {
                if v.abs() <= k {
                    dv(t, b2.clamp(t, u), v)
                } else {
                    0.0
                }
            },
        );
    }
    Ok(out)
}

/// Sampled suprema of `|g|` and `|g + u|` over the band and `|v| <= K`,
/// inflated by 10%.
fn sampled_bounds(g: &Field, band: &Band, k: f64) -> (f64, f64) {
    let period = band.period();
    let (mut m, mut b): (f64, f64) = (0.0, 0.0);
    for i in 0..GRID {
        let t = period * i as f64 / GRID as f64;
        let (lo, hi) = (band.lower().value(t), band.upper().value(t));
        for j in 0..GRID {
            let u = lo + (hi - lo) * j as f64 / (GRID - 1) as f64;
            for l in 0..GRID {
                let v = -k + 2.0 * k * l as f64 / (GRID - 1) as f64;
                let val = g.eval(t, u, v);
                m = m.max(val.abs());
                b = b.max((val + u).abs());
            }
        }
    }
    (INFLATE * m, INFLATE * b)
}

impl ModifiedField {
    /// The truncated field.
    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn base(&self) -> &Field {
        &self.base
    }

    pub fn band(&self) -> &Band {
        &self.band
    }

    pub fn phi(&self) -> &NagumoSpec {
        &self.phi
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn m_bound(&self) -> f64 {
        self.m_bound
    }

    pub fn b_bound(&self) -> f64 {
        self.b_bound
    }

    /// `∫_0^K v/φ(v) dv`.
    pub fn integral_k(&self) -> f64 {
        self.integral_k
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    /// `b(t, u, v) = g(t, u, v) + u`, bounded on the whole plane.
    pub fn bounded_part(&self, t: f64, u: f64, v: f64) -> f64 {
        self.field.eval(t, u, v) + u
    }

    /// The same construction for `u -> -u`, keeping `K` and `ε`.
    pub fn reflected(&self) -> Result<ModifiedField> {
        let phi = self.phi.clone();
        with_constants(
            &self.base.reflected(),
            &self.band.reflected(),
            &phi,
            self.k,
            self.epsilon,
            self.warning.clone(),
        )
    }

    /// The same construction for `t -> -t`, keeping `K` and `ε`.
    pub fn reversed(&self) -> Result<ModifiedField> {
        with_constants(
            &self.base.reversed(),
            &self.band.time_reversed(),
            &self.phi,
            self.k,
            self.epsilon,
            self.warning.clone(),
        )
    }

    /// Rebuilds over a narrower band with the same `K` and `ε`.
    pub fn rebanded(&self, band: &Band) -> Result<ModifiedField> {
        let slope = band.lower().max_abs_slope(512).max(band.upper().max_abs_slope(512));
        if slope >= self.k {
            return Err(Error::Precondition(format!(
                "barrier slope {slope} exceeds the speed bound K = {}",
                self.k
            )));
        }
        if band.width() > self.band.width() * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Precondition("new band is wider than the original".into()));
        }
        with_constants(&self.base, band, &self.phi, self.k, self.epsilon, self.warning.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolutionClass {
    /// In-band and slow somewhere, hence a solution of the base field;
    /// carries its residual against the base field.
    Original { residual: f64 },
    ModifiedOnly,
}

/// Whether a solution of the truncated field also solves the base field.
/// Contradicting that contract is an error, never a silent reclassification.
pub fn same_solution_filter(modified: &ModifiedField, traj: &Trajectory) -> Result<SolutionClass> {
    let band = modified.band();
    let samples = traj.samples();
    let in_band = samples.iter().all(|s| band.contains(s.t, s.u, 1e-9));
    let slow = samples.iter().any(|s| s.v.abs() < modified.epsilon());
    if !(in_band && slow) {
        return Ok(SolutionClass::ModifiedOnly);
    }
    let residual = traj.residual_against(modified.base());
    let scale = samples.iter().fold(1.0f64, |m, s| m.max(s.a.abs()));
    let tol = 10.0 * traj.residual_max() + 1e-6 * scale;
    if !(residual <= tol) {
        return Err(Error::Inconsistent(format!(
            "slow in-band solution of the truncated field misses the base field: residual {residual:e} > {tol:e}"
        )));
    }
    Ok(SolutionClass::Original { residual })
}
