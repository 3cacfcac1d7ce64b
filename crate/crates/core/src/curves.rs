//! Piecewise-C² periodic curves, barrier (lower/upper solution) checks and
//! ordered bands.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{parse_expr, Var};
use crate::field::Field;
use crate::flow::Trajectory;

/// `(value, first derivative, second derivative)` at an absolute time in
/// the segment's closed interval.
pub type SegmentFn = Arc<dyn Fn(f64) -> [f64; 3] + Send + Sync>;

/// A `T`-periodic, continuous, piecewise-C² function.
#[derive(Clone)]
pub struct Curve {
    period: f64,
    breaks: Vec<f64>,
    segments: Vec<SegmentFn>,
    constant: Option<f64>,
    label: String,
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Curve")
            .field("label", &self.label)
            .field("period", &self.period)
            .field("breaks", &self.breaks)
            .finish()
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

/// Fourth-order central differences for curves given by value only.
fn differentiate<F: Fn(f64) -> f64>(g: &F, t: f64, h: f64) -> [f64; 3] {
    let (m2, m1, c, p1, p2) = (g(t - 2.0 * h), g(t - h), g(t), g(t + h), g(t + 2.0 * h));
    let d1 = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    let d2 = (-p2 + 16.0 * p1 - 30.0 * c + 16.0 * m1 - m2) / (12.0 * h * h);
    [c, d1, d2]
}

impl Curve {
    pub fn constant(value: f64, period: f64) -> Result<Curve> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidCurve(format!("period must be positive, got {period}")));
        }
        Ok(Curve {
            period,
            breaks: vec![0.0, period],
            segments: vec![Arc::new(move |_| [value, 0.0, 0.0])],
            constant: Some(value),
            label: format!("{value}"),
        })
    }

    /// A single smooth segment on `[0, T]`.
    pub fn smooth<F>(label: impl Into<String>, period: f64, eval: F) -> Result<Curve>
    where
        F: Fn(f64) -> [f64; 3] + Send + Sync + 'static,
    {
        Curve::piecewise(label, period, vec![0.0, period], vec![Arc::new(eval)])
    }

    /// Segments on `[breaks[j], breaks[j + 1]]`, with `breaks` strictly
    /// increasing from `0` to `T`.
    pub fn piecewise(label: impl Into<String>, period: f64, breaks: Vec<f64>, segments: Vec<SegmentFn>) -> Result<Curve> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidCurve(format!("period must be positive, got {period}")));
        }
        if segments.is_empty() || breaks.len() != segments.len() + 1 {
            return Err(Error::InvalidCurve("need one more breakpoint than segments".into()));
        }
        if breaks[0] != 0.0 || !close(breaks[breaks.len() - 1], period, 1e-12) {
            return Err(Error::InvalidCurve(format!("breakpoints must run from 0 to T = {period}")));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidCurve("breakpoints must be strictly increasing".into()));
        }
        let mut breaks = breaks;
        let last = breaks.len() - 1;
        breaks[last] = period;
        let curve = Curve {
            period,
            breaks,
            segments,
            constant: None,
            label: label.into(),
        };
        let m = curve.segments.len();
        for j in 0..m {
            let here = (curve.segments[j])(curve.breaks[j])[0];
            let prev = if j == 0 {
                (curve.segments[m - 1])(period)[0]
            } else {
                (curve.segments[j - 1])(curve.breaks[j])[0]
            };
            if !here.is_finite() || !close(here, prev, 1e-9) {
                return Err(Error::InvalidCurve(format!(
                    "discontinuous at t = {}: {prev} vs {here}",
                    curve.breaks[j]
                )));
            }
        }
        Ok(curve)
    }

    /// Segments given as `(start time, expression in t)`; the first start
    /// must be `0`. Derivatives come from finite differences.
    pub fn from_exprs(period: f64, pieces: &[(f64, &str)], params: &BTreeMap<String, f64>) -> Result<Curve> {
        if pieces.is_empty() {
            return Err(Error::InvalidCurve("no segments".into()));
        }
        let mut parsed = Vec::with_capacity(pieces.len());
        for (_, src) in pieces {
            parsed.push(parse_expr(src, &["t"], params)?);
        }
        if parsed.len() == 1 {
            if let Some(c) = parsed[0].constant_value() {
                let mut curve = Curve::constant(c, period)?;
                curve.label = pieces[0].1.trim().to_string();
                return Ok(curve);
            }
        }
        let mut breaks: Vec<f64> = pieces.iter().map(|p| p.0).collect();
        breaks.push(period);
        let step = 2e-3 * period.min(1.0);
        let segments = parsed
            .into_iter()
            .map(|ast| -> SegmentFn {
                if ast.depends_on(Var::T) {
                    Arc::new(move |t| differentiate(&|s| ast.eval(s, 0.0, 0.0), t, step))
                } else {
                    let c = ast.eval(0.0, 0.0, 0.0);
                    Arc::new(move |_| [c, 0.0, 0.0])
                }
            })
            .collect();
        let label = pieces
            .iter()
            .map(|(t0, s)| format!("[{t0}] {}", s.trim()))
            .collect::<Vec<_>>()
            .join("; ");
        Curve::piecewise(label, period, breaks, segments)
    }

    /// Periodic extension of a sampled solution on `[0, T]`. A corner sits
    /// at `t = 0` whenever `v(0) != v(T)`.
    pub fn from_trajectory(traj: &Trajectory, period: f64) -> Result<Curve> {
        if traj.dt() <= 0.0 || traj.t_start() != 0.0 || !close(traj.t_end(), period, 1e-12) {
            return Err(Error::InvalidCurve(format!(
                "trajectory must run forward over [0, {period}], got [{}, {}]",
                traj.t_start(),
                traj.t_end()
            )));
        }
        let (first, last) = (traj.first(), traj.last());
        if !close(first.u, last.u, 1e-8) {
            return Err(Error::InvalidCurve(format!(
                "trajectory does not return: u(0) = {}, u(T) = {}",
                first.u, last.u
            )));
        }
        let data = traj.clone();
        let label = format!("sampled({})", traj.field_id());
        Curve::piecewise(
            label,
            period,
            vec![0.0, period],
            vec![Arc::new(move |t| data.eval(t).unwrap_or([f64::NAN; 3]))],
        )
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let mut tau = t.rem_euclid(self.period);
        if tau >= self.period {
            tau = 0.0;
        }
        let j = self.breaks.partition_point(|&b| b <= tau).saturating_sub(1);
        (j.min(self.segments.len() - 1), tau)
    }

    /// `(value, slope, curvature)`; at a breakpoint the right-hand segment
    /// is used.
    #[inline]
    pub fn eval(&self, t: f64) -> [f64; 3] {
        if let Some(c) = self.constant {
            return [c, 0.0, 0.0];
        }
        let (j, tau) = self.locate(t);
        (self.segments[j])(tau)
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        self.eval(t)[0]
    }

    pub fn segment_eval(&self, j: usize, tau: f64) -> [f64; 3] {
        (self.segments[j])(tau)
    }

    /// Side derivatives `(D_l, D_r)` at breakpoint `j` (index `0` is
    /// `t = 0 ≡ T`).
    pub fn side_derivatives(&self, j: usize) -> (f64, f64) {
        let m = self.segments.len();
        let right = (self.segments[j % m])(self.breaks[j % m])[1];
        let left = if j % m == 0 {
            (self.segments[m - 1])(self.period)[1]
        } else {
            (self.segments[j - 1])(self.breaks[j])[1]
        };
        (left, right)
    }

    /// Largest `|u'|` over `samples` uniform points per segment, including
    /// both side limits at every breakpoint.
    pub fn max_abs_slope(&self, samples: usize) -> f64 {
        if self.constant.is_some() {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for (j, seg) in self.segments.iter().enumerate() {
            let (a, b) = (self.breaks[j], self.breaks[j + 1]);
            for k in 0..=samples {
                let t = a + (b - a) * k as f64 / samples as f64;
                worst = worst.max(seg(t)[1].abs());
            }
        }
        worst
    }

    /// `u -> -u`.
    pub fn reflected(&self) -> Curve {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let s = s.clone();
                Arc::new(move |t| {
                    let [a, b, c] = s(t);
                    [-a, -b, -c]
                }) as SegmentFn
            })
            .collect();
        Curve {
            period: self.period,
            breaks: self.breaks.clone(),
            segments,
            constant: self.constant.map(|c| -c),
            label: format!("-({})", self.label),
        }
    }

    /// `t -> -t`, i.e. `w(t) = c(T - t)` on `[0, T]`.
    pub fn time_reversed(&self) -> Curve {
        let period = self.period;
        let m = self.segments.len();
        let mut breaks = Vec::with_capacity(m + 1);
        breaks.push(0.0);
        for j in (0..m).rev() {
            breaks.push(period - self.breaks[j]);
        }
        breaks[m] = period;
        let segments = (0..m)
            .rev()
            .map(|j| {
                let s = self.segments[j].clone();
                Arc::new(move |t: f64| {
                    let [a, b, c] = s(period - t);
                    [a, -b, c]
                }) as SegmentFn
            })
            .collect();
        Curve {
            period,
            breaks,
            segments,
            constant: self.constant,
            label: format!("rev({})", self.label),
        }
    }

    /// Centered differences of the value evaluator reproduce the slope and
    /// curvature evaluators at 10 interior points per segment.
    pub fn check_segments(&self) -> Result<()> {
        if self.constant.is_some() {
            return Ok(());
        }
        for (j, seg) in self.segments.iter().enumerate() {
            let (a, b) = (self.breaks[j], self.breaks[j + 1]);
            let len = b - a;
            let delta = 1e-4f64.min(len / 40.0);
            for k in 0..10 {
                let t = a + len * (k as f64 + 0.5) / 10.0;
                let [u, d1, d2] = seg(t);
                let (um, up) = (seg(t - delta)[0], seg(t + delta)[0]);
                let tol = 1e-6 * (1.0 + u.abs());
                let fd1 = (up - um) / (2.0 * delta);
                let fd2 = (up - 2.0 * u + um) / (delta * delta);
                for (what, exact, approx) in [("first derivative", d1, fd1), ("second derivative", d2, fd2)] {
                    let diff = (exact - approx).abs();
                    if !(diff <= tol) {
                        return Err(Error::InconsistentSegment { segment: j, t, what, diff });
                    }
                }
            }
        }
        Ok(())
    }

    /// Values on `n` uniform samples of `[0, T)`.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.value(self.period * i as f64 / n as f64)).collect()
    }
}

/// Whether a curve is checked as a lower or an upper solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierKind {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierVerdict {
    Pass {
        /// Largest signed violation `-u'' - f` (lower) or `f + u''` (upper).
        max_residual: f64,
        tol: f64,
    },
    /// `corner` marks a failing side-derivative comparison, for which
    /// `residual` is the offending `D_l - D_r` (sign-adjusted).
    Fail { t: f64, residual: f64, corner: bool },
}

impl BarrierVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, BarrierVerdict::Pass { .. })
    }
}

pub const TOL_CORNER: f64 = 1e-10;

fn chebyshev_nodes(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    (0..n).map(move |k| mid + half * (std::f64::consts::PI * (2 * k + 1) as f64 / (2 * n) as f64).cos())
}

/// Pointwise differential inequality on every segment at `n_samples`
/// Chebyshev nodes plus the corner sign rule at every breakpoint.
pub fn verify_barrier(curve: &Curve, field: &Field, kind: BarrierKind, n_samples: usize) -> Result<BarrierVerdict> {
    if !close(curve.period(), field.period(), 1e-12) {
        return Err(Error::PeriodMismatch {
            curve: curve.period(),
            field: field.period(),
        });
    }
    curve.check_segments()?;
    let sign = match kind {
        BarrierKind::Lower => 1.0,
        BarrierKind::Upper => -1.0,
    };
    let n = n_samples.max(1);
    let mut points = Vec::with_capacity(n * curve.segment_count());
    for j in 0..curve.segment_count() {
        for t in chebyshev_nodes(curve.breaks[j], curve.breaks[j + 1], n) {
            let [u, d1, d2] = curve.segment_eval(j, t);
            let f = field.eval(t, u, d1);
            points.push((t, f, -d2 - f));
        }
    }
    let max_f = points.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    if !max_f.is_finite() {
        return Err(Error::NonFinite { t: f64::NAN, u: f64::NAN, v: f64::NAN });
    }
    let tol = 1e-8 * (1.0 + max_f);
    let mut worst = (f64::NEG_INFINITY, 0.0);
    for &(t, _, r) in &points {
        let r = sign * r;
        if r > worst.0 {
            worst = (r, t);
        }
    }
    if worst.0 > tol {
        return Ok(BarrierVerdict::Fail {
            t: worst.1,
            residual: worst.0,
            corner: false,
        });
    }
    for j in 0..curve.segment_count() {
        let (left, right) = curve.side_derivatives(j);
        let excess = sign * (left - right);
        if excess > TOL_CORNER {
            return Ok(BarrierVerdict::Fail {
                t: curve.breaks[j],
                residual: excess,
                corner: true,
            });
        }
    }
    Ok(BarrierVerdict::Pass {
        max_residual: worst.0,
        tol,
    })
}

pub fn verify_lower(curve: &Curve, field: &Field, n_samples: usize) -> Result<BarrierVerdict> {
    verify_barrier(curve, field, BarrierKind::Lower, n_samples)
}

pub fn verify_upper(curve: &Curve, field: &Field, n_samples: usize) -> Result<BarrierVerdict> {
    verify_barrier(curve, field, BarrierKind::Upper, n_samples)
}

/// Samples per period used for band profiles.
pub const PROFILE_SAMPLES: usize = 4096;

/// An ordered pair `lower <= upper`.
#[derive(Debug, Clone)]
pub struct Band {
    lower: Curve,
    upper: Curve,
    gap_profile: Vec<f64>,
}

impl Band {
    pub fn new(lower: Curve, upper: Curve) -> Result<Band> {
        if !close(lower.period(), upper.period(), 1e-12) {
            return Err(Error::PeriodMismatch {
                curve: upper.period(),
                field: lower.period(),
            });
        }
        let period = lower.period();
        let mut times: Vec<f64> = (0..PROFILE_SAMPLES)
            .map(|i| period * i as f64 / PROFILE_SAMPLES as f64)
            .collect();
        times.extend_from_slice(lower.breaks());
        times.extend_from_slice(upper.breaks());
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut gap_profile = Vec::with_capacity(times.len());
        for &t in &times {
            let gap = upper.value(t) - lower.value(t);
            if !(gap >= -1e-12) {
                return Err(Error::InvalidCurve(format!(
                    "band is not ordered at t = {t}: upper - lower = {gap:e}"
                )));
            }
            gap_profile.push(gap);
        }
        Ok(Band {
            lower,
            upper,
            gap_profile,
        })
    }

    pub fn constant(lower: f64, upper: f64, period: f64) -> Result<Band> {
        Band::new(Curve::constant(lower, period)?, Curve::constant(upper, period)?)
    }

    pub fn lower(&self) -> &Curve {
        &self.lower
    }

    pub fn upper(&self) -> &Curve {
        &self.upper
    }

    pub fn period(&self) -> f64 {
        self.lower.period()
    }

    pub fn gap_profile(&self) -> &[f64] {
        &self.gap_profile
    }

    /// `max upper - min lower`, the width entering the Nagumo condition.
    pub fn width(&self) -> f64 {
        let n = PROFILE_SAMPLES;
        let hi = self.upper.sample(n).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.lower.sample(n).into_iter().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    /// Vertical clamp of `u` onto `[lower(t), upper(t)]`.
    #[inline]
    pub fn clamp(&self, t: f64, u: f64) -> f64 {
        let lo = self.lower.value(t);
        let hi = self.upper.value(t);
        u.max(lo).min(hi)
    }

    pub fn contains(&self, t: f64, u: f64, slack: f64) -> bool {
        u >= self.lower.value(t) - slack && u <= self.upper.value(t) + slack
    }

    /// The band of the reflected problem `u -> -u`.
    pub fn reflected(&self) -> Band {
        let gap_profile = self.gap_profile.clone();
        Band {
            lower: self.upper.reflected(),
            upper: self.lower.reflected(),
            gap_profile,
        }
    }

    /// The band of the time-reversed problem.
    pub fn time_reversed(&self) -> Band {
        let mut gap_profile = self.gap_profile.clone();
        gap_profile.reverse();
        Band {
            lower: self.lower.time_reversed(),
            upper: self.upper.time_reversed(),
            gap_profile,
        }
    }

    /// Same upper curve, new lower curve.
    pub fn with_lower(&self, lower: Curve) -> Result<Band> {
        Band::new(lower, self.upper.clone())
    }

    pub fn with_upper(&self, upper: Curve) -> Result<Band> {
        Band::new(self.lower.clone(), upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderingVerdict {
    StrictlyOrdered { min_gap: f64 },
    Identical { max_gap: f64 },
    /// Touching somewhere without coinciding: with unique initial value
    /// problems this cannot happen for verified barriers.
    Inconsistent { min_gap: f64, max_gap: f64 },
}

/// Strict ordering dichotomy for verified barriers of a field with unique
/// initial value problems.
pub fn ordering_gap_check(band: &Band) -> OrderingVerdict {
    let period = band.period();
    let n = 4 * PROFILE_SAMPLES;
    let mut min_gap = f64::INFINITY;
    let mut max_gap: f64 = 0.0;
    let mut max_upper: f64 = 0.0;
    let mut times: Vec<f64> = (0..n).map(|i| period * i as f64 / n as f64).collect();
    times.extend_from_slice(band.lower.breaks());
    times.extend_from_slice(band.upper.breaks());
    for t in times {
        let hi = band.upper.value(t);
        let gap = hi - band.lower.value(t);
        min_gap = min_gap.min(gap);
        max_gap = max_gap.max(gap);
        max_upper = max_upper.max(hi.abs());
    }
    let tol = 1e-9 * (1.0 + max_upper);
    if min_gap > tol {
        OrderingVerdict::StrictlyOrdered { min_gap }
    } else if max_gap < tol {
        OrderingVerdict::Identical { max_gap }
    } else {
        OrderingVerdict::Inconsistent { min_gap, max_gap }
    }
}
