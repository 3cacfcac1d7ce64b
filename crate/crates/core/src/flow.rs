//! Fixed-step RK4 integration of `u' = v, v' = -f(t, u, v)`, sampled
//! trajectories and the time-`T` (Poincaré) map.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;

/// Trajectories are aborted once `|u| + |v|` exceeds this.
pub const BLOW_UP: f64 = 1e9;

/// One mesh sample. `a` is the acceleration `-f(t, u, v)` of the producing
/// field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub a: f64,
}

/// A sampled solution on a uniform mesh `t_i = t_start + i * dt` (the last
/// step may be partial).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    samples: Vec<Sample>,
    residual_max: f64,
    field_id: String,
}

impl Trajectory {
    /// Builds a trajectory from mesh samples. `dt` is the signed mesh step.
    pub fn from_samples(samples: Vec<Sample>, dt: f64, field_id: impl Into<String>) -> Result<Trajectory> {
        if samples.is_empty() {
            return Err(Error::InvalidCurve("empty trajectory".into()));
        }
        if !(dt != 0.0 && dt.is_finite()) {
            return Err(Error::InvalidStep(dt));
        }
        let mut traj = Trajectory {
            dt,
            samples,
            residual_max: 0.0,
            field_id: field_id.into(),
        };
        traj.residual_max = traj.residual_by(|s| -s.a);
        Ok(traj)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Mesh step (positive).
    pub fn h(&self) -> f64 {
        self.dt.abs()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn first(&self) -> Sample {
        self.samples[0]
    }

    pub fn last(&self) -> Sample {
        self.samples[self.samples.len() - 1]
    }

    pub fn residual_max(&self) -> f64 {
        self.residual_max
    }

    pub fn field_id(&self) -> &str {
        &self.field_id
    }

    /// Max over interior samples of `|u'' + f(t, u, u')|`, with `u''`
    /// from a fourth-order central difference of the sampled velocity.
    pub fn residual_against(&self, field: &Field) -> f64 {
        self.residual_by(|s| field.eval(s.t, s.u, s.v))
    }

    fn residual_by(&self, force: impl Fn(&Sample) -> f64) -> f64 {
        let s = &self.samples;
        let n = s.len();
        if n < 5 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 2..n - 2 {
            // skip the stencil touching a partial final step
            if i + 2 == n - 1 && ((s[n - 1].t - s[n - 2].t) - self.dt).abs() > 1e-9 * self.dt.abs() {
                continue;
            }
            let acc = (-s[i + 2].v + 8.0 * s[i + 1].v - 8.0 * s[i - 1].v + s[i - 2].v) / (12.0 * self.dt);
            worst = worst.max((acc + force(&s[i])).abs());
        }
        worst
    }

    /// Sample index whose time is closest to `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start()) / self.dt;
        if x < -1e-9 || x > (self.samples.len() - 1) as f64 + 1e-9 {
            return None;
        }
        let i = (x.round() as usize).min(self.samples.len() - 1);
        Some(i)
    }

    /// Quintic Hermite interpolation of `(u, u', u'')` using the sampled
    /// position, velocity and acceleration at the two enclosing nodes.
    pub fn eval(&self, t: f64) -> Result<[f64; 3]> {
        let (start, end) = (self.t_start(), self.t_end());
        let (lo, hi) = if start <= end { (start, end) } else { (end, start) };
        let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        if t < lo - slack || t > hi + slack {
            return Err(Error::OutOfRange { t, start, end });
        }
        let n = self.samples.len();
        if n == 1 {
            let s = self.samples[0];
            return Ok([s.u, s.v, s.a]);
        }
        let x = (t - start) / self.dt;
        let mut i = x.floor().max(0.0) as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let (s0, s1) = (self.samples[i], self.samples[i + 1]);
        let step = s1.t - s0.t;
        let s = ((t - s0.t) / step).clamp(0.0, 1.0);
        Ok(hermite5(s0, s1, step, s))
    }

    /// The trajectory with `t -> -t` (and `v -> -v`): if this solves `f`,
    /// the result solves `f.reversed()`.
    pub fn time_reversed(&self, field_id: impl Into<String>) -> Trajectory {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                t: -s.t,
                u: s.u,
                v: -s.v,
                a: s.a,
            })
            .collect();
        Trajectory {
            dt: -self.dt,
            samples,
            residual_max: self.residual_max,
            field_id: field_id.into(),
        }
    }

    /// The trajectory with `u -> -u`; solves `f.reflected()`.
    pub fn reflected(&self, field_id: impl Into<String>) -> Trajectory {
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                t: s.t,
                u: -s.u,
                v: -s.v,
                a: -s.a,
            })
            .collect();
        Trajectory {
            dt: self.dt,
            samples,
            residual_max: self.residual_max,
            field_id: field_id.into(),
        }
    }

    /// Samples in increasing time order.
    pub fn forward_samples(&self) -> Vec<Sample> {
        let mut s = self.samples.clone();
        if self.dt < 0.0 {
            s.reverse();
        }
        s
    }

    /// CSV with header `t,u,v`, one row per sample, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,u,v\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", fmt17(s.t), fmt17(s.u), fmt17(s.v)));
        }
        out
    }
}

/// Formats with 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    format!("{:.16e}", x)
}

pub(crate) fn hermite5(s0: Sample, s1: Sample, step: f64, s: f64) -> [f64; 3] {
    let (s2, s3) = (s * s, s * s * s);
    let (s4, s5) = (s3 * s, s3 * s2);
    let h0 = 1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5;
    let h1 = s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5;
    let h2 = 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5);
    let h3 = 0.5 * (s3 - 2.0 * s4 + s5);
    let h4 = -4.0 * s3 + 7.0 * s4 - 3.0 * s5;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;

    let d0 = -30.0 * s2 + 60.0 * s3 - 30.0 * s4;
    let d1 = 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4;
    let d2 = 0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4);
    let d3 = 0.5 * (3.0 * s2 - 8.0 * s3 + 5.0 * s4);
    let d4 = -12.0 * s2 + 28.0 * s3 - 15.0 * s4;
    let d5 = -d0;

    let e0 = -60.0 * s + 180.0 * s2 - 120.0 * s3;
    let e1 = -36.0 * s + 96.0 * s2 - 60.0 * s3;
    let e2 = 0.5 * (2.0 - 18.0 * s + 36.0 * s2 - 20.0 * s3);
    let e3 = 0.5 * (6.0 * s - 24.0 * s2 + 20.0 * s3);
    let e4 = -24.0 * s + 84.0 * s2 - 60.0 * s3;
    let e5 = -e0;

    let h = step;
    let hh = h * h;
    let value = h0 * s0.u + h * h1 * s0.v + hh * h2 * s0.a + hh * h3 * s1.a + h * h4 * s1.v + h5 * s1.u;
    let slope = (d0 * s0.u + h * d1 * s0.v + hh * d2 * s0.a + hh * d3 * s1.a + h * d4 * s1.v + d5 * s1.u) / h;
    let curvature = (e0 * s0.u + h * e1 * s0.v + hh * e2 * s0.a + hh * e3 * s1.a + h * e4 * s1.v + e5 * s1.u) / hh;
    [value, slope, curvature]
}

/// Why [`propagate`] returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Completed { u: f64, v: f64 },
    /// The visitor asked to stop after sample `index`.
    Stopped { index: usize, t: f64, u: f64, v: f64 },
}

/// Number of full steps and the length of a trailing partial step.
fn mesh(t0: f64, t1: f64, h: f64) -> Result<(usize, f64, f64)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    let span = t1 - t0;
    let dir = if span < 0.0 { -1.0 } else { 1.0 };
    let ratio = span.abs() / h;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        Ok((nearest as usize, 0.0, dir * h))
    } else {
        let full = ratio.floor();
        let rest = span - dir * full * h;
        Ok((full as usize, rest, dir * h))
    }
}

#[inline]
fn accel(field: &Field, t: f64, u: f64, v: f64) -> Result<f64> {
    let f = field.eval(t, u, v);
    if !f.is_finite() {
        return Err(Error::NonFinite { t, u, v });
    }
    Ok(-f)
}

#[inline]
fn rk4_step(field: &Field, t: f64, u: f64, v: f64, a: f64, dt: f64) -> Result<(f64, f64)> {
    let half = 0.5 * dt;
    let (k1u, k1v) = (v, a);
    let (k2u, k2v) = (v + half * k1v, accel(field, t + half, u + half * k1u, v + half * k1v)?);
    let (k3u, k3v) = (v + half * k2v, accel(field, t + half, u + half * k2u, v + half * k2v)?);
    let (k4u, k4v) = (v + dt * k3v, accel(field, t + dt, u + dt * k3u, v + dt * k3v)?);
    let u1 = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
    let v1 = v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    Ok((u1, v1))
}

/// Integrates from `(t0, u0, v0)` to `t1`, calling `visit(i, sample)` at
/// every mesh sample (including the initial one). Returning `false` from
/// the visitor stops the integration.
pub fn propagate<V>(field: &Field, t0: f64, u0: f64, v0: f64, t1: f64, h: f64, mut visit: V) -> Result<Outcome>
where
    V: FnMut(usize, &Sample) -> bool,
{
    let (full, rest, dt) = mesh(t0, t1, h)?;
    let (mut u, mut v) = (u0, v0);
    let mut a = accel(field, t0, u, v)?;
    let total = full + usize::from(rest != 0.0);
    for i in 0..=total {
        let t = if i <= full { t0 + i as f64 * dt } else { t1 };
        let sample = Sample { t, u, v, a };
        if !visit(i, &sample) {
            return Ok(Outcome::Stopped { index: i, t, u, v });
        }
        if i == total {
            break;
        }
        let step = if i < full { dt } else { rest };
        let (u1, v1) = rk4_step(field, t, u, v, a, step)?;
        let t_next = if i + 1 <= full { t0 + (i + 1) as f64 * dt } else { t1 };
        if !(u1.is_finite() && v1.is_finite()) || u1.abs() + v1.abs() > BLOW_UP {
            return Err(Error::BlowUp {
                t: t_next,
                size: u1.abs() + v1.abs(),
            });
        }
        u = u1;
        v = v1;
        a = accel(field, t_next, u, v)?;
    }
    Ok(Outcome::Completed { u, v })
}

/// Classical RK4 with fixed step `h`; `t1 < t0` integrates backwards.
pub fn integrate(field: &Field, t0: f64, u0: f64, v0: f64, t1: f64, h: f64) -> Result<Trajectory> {
    let (full, rest, dt) = mesh(t0, t1, h)?;
    let mut samples = Vec::with_capacity(full + 2);
    propagate(field, t0, u0, v0, t1, h, |_, s| {
        samples.push(*s);
        true
    })?;
    let _ = rest;
    Trajectory::from_samples(samples, dt, field.label())
}

/// End state of the flow from `t0` to `t1` without storing samples.
pub fn flow_map(field: &Field, t0: f64, u0: f64, v0: f64, t1: f64, h: f64) -> Result<(f64, f64)> {
    match propagate(field, t0, u0, v0, t1, h, |_, _| true)? {
        Outcome::Completed { u, v } => Ok((u, v)),
        Outcome::Stopped { u, v, .. } => Ok((u, v)),
    }
}

pub type Mat2 = [[f64; 2]; 2];

/// Time-`T` map data at one initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareResult {
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// `∂ end / ∂ start`.
    pub jacobian: Mat2,
}

impl PoincareResult {
    pub fn det(&self) -> f64 {
        det2(&self.jacobian)
    }

    pub fn multipliers(&self) -> [Complex64; 2] {
        eigenvalues2(&self.jacobian)
    }

    pub fn displacement(&self) -> [f64; 2] {
        [self.end[0] - self.start[0], self.end[1] - self.start[1]]
    }
}

pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Eigenvalues of a real 2x2 matrix, larger modulus first.
pub fn eigenvalues2(m: &Mat2) -> [Complex64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = det2(m);
    let disc = 0.25 * tr * tr - det;
    let mut pair = if disc >= 0.0 {
        let r = disc.sqrt();
        // avoid cancellation for the small root
        let big = 0.5 * tr + r.copysign(if tr == 0.0 { 1.0 } else { tr });
        let small = if big != 0.0 { det / big } else { 0.5 * tr - r.copysign(1.0) };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im)]
    };
    if pair[1].norm() > pair[0].norm() {
        pair.swap(0, 1);
    }
    pair
}

/// The time-`T` map over `[0, T]` with its jacobian: variational equations
/// when the field carries partials, central differences otherwise.
pub fn poincare(field: &Field, u0: f64, v0: f64, h: f64) -> Result<PoincareResult> {
    poincare_from(field, 0.0, u0, v0, h)
}

pub fn poincare_from(field: &Field, t0: f64, u0: f64, v0: f64, h: f64) -> Result<PoincareResult> {
    flow_with_jacobian(field, t0, u0, v0, t0 + field.period(), h)
}

/// End state of the flow from `t0` to `t1` and its derivative with respect
/// to the initial state.
pub fn flow_with_jacobian(field: &Field, t0: f64, u0: f64, v0: f64, t1: f64, h: f64) -> Result<PoincareResult> {
    let (end_u, end_v) = flow_map(field, t0, u0, v0, t1, h)?;
    let jacobian = match field.partials() {
        Some(_) => variational(field, t0, u0, v0, t1, h)?,
        None => {
            let mut jac = [[0.0; 2]; 2];
            let state = [u0, v0];
            for k in 0..2 {
                let delta = 1e-6 * (1.0 + state[k].abs());
                let mut plus = state;
                let mut minus = state;
                plus[k] += delta;
                minus[k] -= delta;
                let p = flow_map(field, t0, plus[0], plus[1], t1, h)?;
                let m = flow_map(field, t0, minus[0], minus[1], t1, h)?;
                jac[0][k] = (p.0 - m.0) / (2.0 * delta);
                jac[1][k] = (p.1 - m.1) / (2.0 * delta);
            }
            jac
        }
    };
    Ok(PoincareResult {
        start: [u0, v0],
        end: [end_u, end_v],
        jacobian,
    })
}

/// RK4 on the state plus the fundamental matrix of the linearization.
fn variational(field: &Field, t0: f64, u0: f64, v0: f64, t1: f64, h: f64) -> Result<Mat2> {
    let partials = field.partials().expect("caller checked partials");
    let rhs = |t: f64, y: &[f64; 6]| -> Result<[f64; 6]> {
        let (u, v) = (y[0], y[1]);
        let a = accel(field, t, u, v)?;
        let fu = (partials.du)(t, u, v);
        let fv = (partials.dv)(t, u, v);
        // d/dt Φ = [[0, 1], [-f_u, -f_v]] Φ
        Ok([
            v,
            a,
            y[4],
            y[5],
            -fu * y[2] - fv * y[4],
            -fu * y[3] - fv * y[5],
        ])
    };
    let (full, rest, dt) = mesh(t0, t1, h)?;
    let mut y = [u0, v0, 1.0, 0.0, 0.0, 1.0];
    let total = full + usize::from(rest != 0.0);
    for i in 0..total {
        let t = t0 + i as f64 * dt;
        let step = if i < full { dt } else { rest };
        let k1 = rhs(t, &y)?;
        let k2 = rhs(t + 0.5 * step, &axpy(&y, 0.5 * step, &k1))?;
        let k3 = rhs(t + 0.5 * step, &axpy(&y, 0.5 * step, &k2))?;
        let k4 = rhs(t + step, &axpy(&y, step, &k3))?;
        for j in 0..6 {
            y[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if y[0].abs() + y[1].abs() > BLOW_UP {
            return Err(Error::BlowUp {
                t: t + step,
                size: y[0].abs() + y[1].abs(),
            });
        }
    }
    Ok([[y[2], y[3]], [y[4], y[5]]])
}

fn axpy(y: &[f64; 6], s: f64, k: &[f64; 6]) -> [f64; 6] {
    let mut out = *y;
    for j in 0..6 {
        out[j] += s * k[j];
    }
    out
}
