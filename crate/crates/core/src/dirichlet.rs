//! Two-point Dirichlet problems `y(a) = y_a, y(b) = y_b` inside a band,
//! solved by a velocity scan, bisection and a multiple-shooting polish, with
//! selection of the pointwise maximal and minimal solutions.

use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::curves::Band;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::flow::{flow_map, flow_with_jacobian, integrate, propagate, Outcome, Sample, Trajectory};

#[derive(Debug, Clone)]
pub struct DirichletSpec {
    pub a: f64,
    pub b: f64,
    pub y_a: f64,
    pub y_b: f64,
    pub band: Band,
}

impl DirichletSpec {
    pub fn new(a: f64, b: f64, y_a: f64, y_b: f64, band: Band) -> Result<DirichletSpec> {
        if !(b > a) {
            return Err(Error::Precondition(format!("need a < b, got [{a}, {b}]")));
        }
        for (t, y) in [(a, y_a), (b, y_b)] {
            if !band.contains(t, y, 1e-9) {
                return Err(Error::Precondition(format!(
                    "boundary value {y} at t = {t} outside [{}, {}]",
                    band.lower().value(t),
                    band.upper().value(t)
                )));
            }
        }
        Ok(DirichletSpec { a, b, y_a, y_b, band })
    }

    /// Boundary-condition tolerance on `|u(b) - y_b|`.
    pub fn tol_bc(&self) -> f64 {
        1e-10 * (1.0 + self.y_b.abs())
    }
}

/// A guess `t -> (u, v)` for the solution, used to start the
/// multiple-shooting polish.
pub type Seed = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
pub struct ShootOptions {
    pub n_scan: usize,
    pub h: f64,
    /// Mesh steps per multiple-shooting segment.
    pub segment_steps: usize,
    /// Trajectories further than this outside the band stop early.
    pub band_slack: f64,
    pub seeds: Vec<Seed>,
}

impl ShootOptions {
    /// 512 scan points, `h = T/2048`, segments of `T/8`.
    pub fn for_field(field: &Field) -> ShootOptions {
        ShootOptions {
            n_scan: 512,
            h: field.period() / 2048.0,
            segment_steps: 256,
            band_slack: 1e-6,
            seeds: Vec::new(),
        }
    }

    pub fn with_steps_per_period(field: &Field, steps: usize) -> ShootOptions {
        ShootOptions {
            h: field.period() / steps as f64,
            segment_steps: (steps / 8).max(1),
            ..ShootOptions::for_field(field)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DirichletSolution {
    pub v0: f64,
    pub traj: Trajectory,
    /// `u(b) - y_b`.
    pub miss: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionSet {
    pub solutions: Vec<DirichletSolution>,
    pub extremal_max: usize,
    pub extremal_min: usize,
}

impl SolutionSet {
    pub fn maximal(&self) -> &DirichletSolution {
        &self.solutions[self.extremal_max]
    }

    pub fn minimal(&self) -> &DirichletSolution {
        &self.solutions[self.extremal_min]
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }
}

/// Signed miss `u(b) - y_b`; leaving the band counts as `±∞` by side.
fn miss(field: &Field, spec: &DirichletSpec, v0: f64, opts: &ShootOptions) -> f64 {
    let band = &spec.band;
    let slack = opts.band_slack;
    let mut side = 0.0;
    let outcome = propagate(field, spec.a, spec.y_a, v0, spec.b, opts.h, |_, s| {
        if s.u > band.upper().value(s.t) + slack {
            side = f64::INFINITY;
            false
        } else if s.u < band.lower().value(s.t) - slack {
            side = f64::NEG_INFINITY;
            false
        } else {
            true
        }
    });
    match outcome {
        Ok(Outcome::Completed { u, .. }) => u - spec.y_b,
        Ok(Outcome::Stopped { .. }) => side,
        Err(Error::BlowUp { .. }) => {
            if v0 >= 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        }
        Err(_) => f64::NAN,
    }
}

fn opposite(a: f64, b: f64) -> bool {
    (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)
}

/// Bisection on a sign-change cell down to adjacent floats.
fn bisect(field: &Field, spec: &DirichletSpec, opts: &ShootOptions, mut lo: (f64, f64), mut hi: (f64, f64)) -> (f64, f64) {
    let tol = spec.tol_bc();
    for _ in 0..200 {
        let mid = 0.5 * (lo.0 + hi.0);
        if mid <= lo.0 || mid >= hi.0 {
            break;
        }
        let m = miss(field, spec, mid, opts);
        if m.is_nan() {
            break;
        }
        if m.abs() <= tol {
            return (mid, m);
        }
        if opposite(m, lo.1) {
            hi = (mid, m);
        } else {
            lo = (mid, m);
        }
    }
    if lo.1.abs() <= hi.1.abs() {
        lo
    } else {
        hi
    }
}

/// Enumerates in-band solutions with `v0` in `[v_lo, v_hi]` and marks the
/// pointwise maximal and minimal ones. An empty result is not a proof of
/// nonexistence.
pub fn shoot_all(field: &Field, spec: &DirichletSpec, v_lo: f64, v_hi: f64, opts: &ShootOptions) -> Result<SolutionSet> {
    if !(v_hi > v_lo) {
        return Err(Error::Precondition(format!("empty velocity bracket [{v_lo}, {v_hi}]")));
    }
    let n = opts.n_scan.max(2);
    let grid: Vec<f64> = (0..n)
        .map(|i| v_lo + (v_hi - v_lo) * i as f64 / (n - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.par_iter().map(|&v| miss(field, spec, v, opts)).collect();
    for &i in &[0, n - 1] {
        if values[i].is_nan() {
            return Err(Error::NonFiniteMiss { v0: grid[i] });
        }
    }
    let tol = spec.tol_bc();
    let mut cells = Vec::new();
    for i in 0..n {
        if values[i].abs() < 1e-10 {
            cells.push((grid[i], grid[i]));
        }
        if i + 1 < n && opposite(values[i], values[i + 1]) {
            cells.push((grid[i], grid[i + 1]));
        }
    }
    let refined: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(lo, hi)| {
            if lo == hi {
                (lo, miss(field, spec, lo, opts))
            } else {
                let ml = miss(field, spec, lo, opts);
                let mh = miss(field, spec, hi, opts);
                bisect(field, spec, opts, (lo, ml), (hi, mh))
            }
        })
        .collect();

    let mut candidates: Vec<DirichletSolution> = refined
        .par_iter()
        .filter_map(|&(v0, m)| {
            let found = if m.abs() <= tol {
                single(field, spec, v0, opts)
            } else {
                polish_from_shot(field, spec, v0, opts)
            };
            match found {
                Ok(sol) => sol,
                Err(e) => {
                    debug!("candidate v0 = {v0} dropped: {e}");
                    None
                }
            }
        })
        .collect();
    let seeded: Vec<DirichletSolution> = opts
        .seeds
        .par_iter()
        .filter_map(|seed| polish(field, spec, &|t| Some(seed(t)), opts).ok().flatten())
        .collect();
    candidates.extend(seeded);
    candidates.retain(|c| in_band(&c.traj, &spec.band, 1e-9) && c.miss.abs() <= tol);
    select(candidates, spec).map_err(|e| match e {
        Error::NoSolutionFound { .. } => Error::NoSolutionFound { v_lo, v_hi },
        other => other,
    })
}

fn in_band(traj: &Trajectory, band: &Band, slack: f64) -> bool {
    traj.samples().iter().all(|s| band.contains(s.t, s.u, slack))
}

fn single(field: &Field, spec: &DirichletSpec, v0: f64, opts: &ShootOptions) -> Result<Option<DirichletSolution>> {
    let traj = integrate(field, spec.a, spec.y_a, v0, spec.b, opts.h)?;
    let miss = traj.last().u - spec.y_b;
    Ok(Some(DirichletSolution { v0, traj, miss }))
}

/// Multiple-shooting start from a shot that left the band: keep its states
/// while in band, fall back to the seeds afterwards.
fn polish_from_shot(field: &Field, spec: &DirichletSpec, v0: f64, opts: &ShootOptions) -> Result<Option<DirichletSolution>> {
    let mut states: Vec<Sample> = Vec::new();
    let band = &spec.band;
    let _ = propagate(field, spec.a, spec.y_a, v0, spec.b, opts.h, |_, s| {
        let ok = band.contains(s.t, s.u, opts.band_slack);
        if ok {
            states.push(*s);
        }
        ok
    });
    let h = opts.h;
    let a = spec.a;
    let lookup = |t: f64| -> Option<(f64, f64)> {
        let i = ((t - a) / h).round();
        if i >= 0.0 && (i as usize) < states.len() {
            let s = states[i as usize];
            return Some((s.u, s.v));
        }
        None
    };
    let mut best = None;
    if opts.seeds.is_empty() {
        // without a seed, hold the last in-band state
        let last = states.last().copied();
        best = polish(field, spec, &|t| lookup(t).or(last.map(|s| (s.u, 0.0))), opts)?;
    } else {
        for seed in &opts.seeds {
            let found = polish(field, spec, &|t| Some(lookup(t).map_or_else(|| seed(t), |g| g)), opts)?;
            if found.is_some() {
                best = found;
                break;
            }
        }
    }
    Ok(best)
}

/// Damped Newton on the multiple-shooting system with unknowns
/// `[v0, (u_j, v_j) for interior nodes]`.
fn polish(
    field: &Field,
    spec: &DirichletSpec,
    guess: &dyn Fn(f64) -> Option<(f64, f64)>,
    opts: &ShootOptions,
) -> Result<Option<DirichletSolution>> {
    let h = opts.h;
    let total = ((spec.b - spec.a) / h - 1e-9).ceil().max(1.0) as usize;
    let seg = opts.segment_steps.max(1);
    let segments = total.div_ceil(seg);
    let node_t = |j: usize| -> f64 {
        if j >= segments {
            spec.b
        } else {
            spec.a + (j * seg) as f64 * h
        }
    };
    let dim = 2 * segments - 1;
    let mut x = DVector::<f64>::zeros(dim);
    match guess(spec.a) {
        Some((_, v)) => x[0] = v,
        None => return Ok(None),
    }
    for j in 1..segments {
        match guess(node_t(j)) {
            Some((u, v)) => {
                x[2 * j - 1] = u;
                x[2 * j] = v;
            }
            None => return Ok(None),
        }
    }
    let state = |x: &DVector<f64>, j: usize| -> (f64, f64) {
        if j == 0 {
            (spec.y_a, x[0])
        } else {
            (x[2 * j - 1], x[2 * j])
        }
    };
    let residual = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let ends: Vec<Option<(f64, f64)>> = (0..segments)
            .into_par_iter()
            .map(|j| {
                let (u, v) = state(x, j);
                flow_map(field, node_t(j), u, v, node_t(j + 1), h).ok()
            })
            .collect();
        let mut r = DVector::<f64>::zeros(dim);
        for j in 0..segments {
            let (eu, ev) = ends[j]?;
            if j + 1 < segments {
                let (nu, nv) = state(x, j + 1);
                r[2 * j] = eu - nu;
                r[2 * j + 1] = ev - nv;
            } else {
                r[2 * j] = eu - spec.y_b;
            }
        }
        Some(r)
    };
    let tol = spec.tol_bc();
    let mut r = match residual(&x) {
        Some(r) => r,
        None => return Ok(None),
    };
    let mut norm = r.amax();
    for _ in 0..50 {
        if norm <= 0.1 * tol {
            break;
        }
        let jacs: Vec<Option<[[f64; 2]; 2]>> = (0..segments)
            .into_par_iter()
            .map(|j| {
                let (u, v) = state(&x, j);
                flow_with_jacobian(field, node_t(j), u, v, node_t(j + 1), h).ok().map(|p| p.jacobian)
            })
            .collect();
        let mut jm = DMatrix::<f64>::zeros(dim, dim);
        for j in 0..segments {
            let phi = match jacs[j] {
                Some(p) => p,
                None => return Ok(None),
            };
            let rows = if j + 1 < segments { 2 } else { 1 };
            for rr in 0..rows {
                let row = 2 * j + rr;
                if j == 0 {
                    jm[(row, 0)] = phi[rr][1];
                } else {
                    jm[(row, 2 * j - 1)] = phi[rr][0];
                    jm[(row, 2 * j)] = phi[rr][1];
                }
                if j + 1 < segments {
                    jm[(row, 2 * j + 1 + rr)] = -1.0;
                }
            }
        }
        let step = match jm.lu().solve(&(-&r)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Ok(None),
        };
        let mut step_scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &x + &step * step_scale;
            if let Some(rt) = residual(&trial) {
                let nt = rt.amax();
                if nt < norm {
                    x = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            step_scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(norm <= tol) {
        return Ok(None);
    }
    // stitch the segments on the common mesh
    let pieces: Vec<Result<Trajectory>> = (0..segments)
        .into_par_iter()
        .map(|j| {
            let (u, v) = state(&x, j);
            integrate(field, node_t(j), u, v, node_t(j + 1), h)
        })
        .collect();
    let mut samples: Vec<Sample> = Vec::with_capacity(total + 1);
    for (j, piece) in pieces.into_iter().enumerate() {
        let piece = piece?;
        let s = piece.samples();
        let take = if j + 1 < segments { s.len() - 1 } else { s.len() };
        for (i, sample) in s[..take].iter().enumerate() {
            let mut sample = *sample;
            let last = j + 1 == segments && i + 1 == take;
            sample.t = if last { spec.b } else { spec.a + (j * seg + i) as f64 * h };
            samples.push(sample);
        }
    }
    let traj = Trajectory::from_samples(samples, h, field.label())?;
    let miss = traj.last().u - spec.y_b;
    Ok(Some(DirichletSolution { v0: x[0], traj, miss }))
}

fn sup_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.samples()
        .iter()
        .zip(b.samples())
        .fold(0.0f64, |m, (p, q)| m.max((p.u - q.u).abs()))
}

/// Merges ties, then picks extremals by midpoint value and asserts full
/// pointwise domination.
fn select(mut candidates: Vec<DirichletSolution>, spec: &DirichletSpec) -> Result<SolutionSet> {
    candidates.sort_by(|p, q| p.v0.total_cmp(&q.v0));
    let mut solutions: Vec<DirichletSolution> = Vec::new();
    for c in candidates {
        if solutions
            .iter()
            .any(|s| s.traj.len() == c.traj.len() && sup_distance(&s.traj, &c.traj) <= 1e-9)
        {
            continue;
        }
        solutions.push(c);
    }
    if solutions.is_empty() {
        return Err(Error::NoSolutionFound {
            v_lo: f64::NAN,
            v_hi: f64::NAN,
        });
    }
    let mid = 0.5 * (spec.a + spec.b);
    let at_mid = |s: &DirichletSolution| s.traj.eval(mid).map(|e| e[0]).unwrap_or(f64::NAN);
    let mut hi = 0;
    let mut lo = 0;
    for i in 1..solutions.len() {
        if at_mid(&solutions[i]) > at_mid(&solutions[hi]) {
            hi = i;
        }
        if at_mid(&solutions[i]) < at_mid(&solutions[lo]) {
            lo = i;
        }
    }
    let (top, bottom) = (solutions[hi].traj.samples(), solutions[lo].traj.samples());
    for (i, s) in solutions.iter().enumerate() {
        for (k, p) in s.traj.samples().iter().enumerate() {
            if top[k].u - p.u < -1e-7 || p.u - bottom[k].u < -1e-7 {
                return Err(Error::Inconsistent(format!(
                    "no pointwise extremal among {} solutions: member {i} crosses at t = {}",
                    solutions.len(),
                    p.t
                )));
            }
        }
    }
    Ok(SolutionSet {
        solutions,
        extremal_max: hi,
        extremal_min: lo,
    })
}

/// Outcome of re-solving on a subinterval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictionVerdict {
    pub passed: bool,
    /// Sup-norm gap between restricted extremals and restrictions.
    pub max_gap: f64,
}

/// Restricted extremal solutions equal the restrictions of the extremal
/// solutions (within `1e-6`).
pub fn restriction_check(
    field: &Field,
    set: &SolutionSet,
    spec: &DirichletSpec,
    sub_a: f64,
    sub_b: f64,
    v_lo: f64,
    v_hi: f64,
    opts: &ShootOptions,
) -> Result<RestrictionVerdict> {
    if !(spec.a <= sub_a && sub_a < sub_b && sub_b <= spec.b) {
        return Err(Error::Precondition(format!(
            "[{sub_a}, {sub_b}] is not inside [{}, {}]",
            spec.a, spec.b
        )));
    }
    let top = &set.maximal().traj;
    let i0 = top
        .index_of(sub_a)
        .ok_or(Error::OutOfRange { t: sub_a, start: spec.a, end: spec.b })?;
    let i1 = top
        .index_of(sub_b)
        .ok_or(Error::OutOfRange { t: sub_b, start: spec.a, end: spec.b })?;
    let mut max_gap: f64 = 0.0;
    for (which, traj) in [(0, top), (1, &set.minimal().traj)] {
        let s = traj.samples();
        let (t0, t1) = (s[i0].t, s[i1].t);
        let sub = DirichletSpec::new(t0, t1, s[i0].u, s[i1].u, spec.band.clone())?;
        let found = shoot_all(field, &sub, v_lo, v_hi, opts)?;
        let pick = if which == 0 { found.maximal() } else { found.minimal() };
        for (k, p) in pick.traj.samples().iter().enumerate() {
            if let Some(q) = s.get(i0 + k) {
                max_gap = max_gap.max((p.u - q.u).abs());
            }
        }
    }
    Ok(RestrictionVerdict {
        passed: max_gap <= 1e-6,
        max_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn fld(src: &str, period: f64) -> Field {
        Field::from_expr(src, &BTreeMap::new(), period).unwrap()
    }

    #[test]
    fn free_constant_solution() {
        let f = fld("0", 1.0);
        let band = Band::constant(-1.0, 2.0, 1.0).unwrap();
        let spec = DirichletSpec::new(0.0, 1.0, 0.5, 0.5, band).unwrap();
        let mut opts = ShootOptions::for_field(&f);
        opts.n_scan = 65;
        let set = shoot_all(&f, &spec, -1.0, 1.0, &opts).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.maximal().v0.abs() < 1e-12);
        assert!(set.maximal().traj.samples().iter().all(|s| (s.u - 0.5).abs() < 1e-12));
    }

    #[test]
    fn hyperbolic_closed_form() {
        let f = fld("-u", 1.0);
        let band = Band::constant(-5.0, 5.0, 1.0).unwrap();
        let spec = DirichletSpec::new(0.0, 1.0, 0.0, 1.0, band).unwrap();
        let mut opts = ShootOptions::for_field(&f);
        opts.h = 1e-3;
        let set = shoot_all(&f, &spec, -3.0, 3.0, &opts).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set.maximal().v0 - 1.0 / 1f64.sinh()).abs() < 1e-8);
        let r = restriction_check(&f, &set, &spec, 0.25, 0.75, -3.0, 3.0, &opts).unwrap();
        assert!(r.passed && r.max_gap < 1e-7, "{r:?}");
    }

    #[test]
    fn multiple_solutions_are_ordered() {
        // u'' = -u on [0, 3π]: y(0) = y(3π) = 0 has the family A sin t;
        // a nonlinear restoring force picks out isolated members
        let period = 3.0 * std::f64::consts::PI;
        let f = fld("u + u^3", period);
        let band = Band::constant(-3.0, 3.0, period).unwrap();
        let spec = DirichletSpec::new(0.0, period, 0.0, 0.0, band).unwrap();
        let opts = ShootOptions::for_field(&f);
        let set = shoot_all(&f, &spec, -0.5, 0.5, &opts).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.maximal().v0.abs() < 1e-9);
    }

    #[test]
    fn empty_and_bad_brackets() {
        let f = fld("0", 1.0);
        let band = Band::constant(0.0, 1.0, 1.0).unwrap();
        let spec = DirichletSpec::new(0.0, 1.0, 0.2, 0.8, band.clone()).unwrap();
        let mut opts = ShootOptions::for_field(&f);
        opts.n_scan = 33;
        assert!(matches!(
            shoot_all(&f, &spec, 1.0, 2.0, &opts),
            Err(Error::NoSolutionFound { .. })
        ));
        assert!(shoot_all(&f, &spec, 1.0, 1.0, &opts).is_err());
        assert!(DirichletSpec::new(0.0, 1.0, 2.0, 0.5, band).is_err());
        let g = fld("ln(u)", 1.0);
        let wide = Band::constant(-5.0, 5.0, 1.0).unwrap();
        let spec = DirichletSpec::new(0.0, 1.0, -1.0, 0.0, wide).unwrap();
        assert!(matches!(shoot_all(&g, &spec, -1.0, 1.0, &opts), Err(Error::NonFiniteMiss { .. })));
    }

    #[test]
    fn long_horizon_needs_the_polish() {
        // saddle u'' = u: y(0) = -1, y(L) = 0 with L = 40 is ill-conditioned
        // for single shooting (sinh 40 ≈ 1e17)
        let f = fld("-u", 1.0);
        let band = Band::constant(-1.0, 0.0, 1.0).unwrap();
        let spec = DirichletSpec::new(0.0, 40.0, -1.0, 0.0, band).unwrap();
        let mut opts = ShootOptions::with_steps_per_period(&f, 256);
        opts.n_scan = 128;
        let set = shoot_all(&f, &spec, 0.0, 2.0, &opts).unwrap();
        let sol = set.maximal();
        assert!(sol.miss.abs() < 1e-10);
        // exact: u = -sinh(L - t) / sinh L, v0 = coth L
        let exact = |t: f64| -((40.0 - t).sinh() / 40f64.sinh());
        for s in sol.traj.samples().iter().step_by(97) {
            assert!((s.u - exact(s.t)).abs() < 1e-7, "t = {}", s.t);
        }
    }

    #[test]
    fn maximal_solution_monotone_in_data() {
        let period = 2.0 * std::f64::consts::PI;
        let params = BTreeMap::from([("c".to_string(), 0.2)]);
        let f = Field::from_expr("c*v + sin(u)", &params, period).unwrap();
        let band = Band::constant(std::f64::consts::FRAC_PI_2, 1.5 * std::f64::consts::PI, period).unwrap();
        let mut opts = ShootOptions::for_field(&f);
        opts.n_scan = 128;
        let mut prev: Option<Trajectory> = None;
        for y_b in [2.5, 2.51] {
            let spec = DirichletSpec::new(0.0, period, 2.0, y_b, band.clone()).unwrap();
            let set = shoot_all(&f, &spec, -4.0, 4.0, &opts).unwrap();
            let top = set.maximal().traj.clone();
            if let Some(p) = prev {
                for (a, b) in p.samples().iter().zip(top.samples()) {
                    assert!(b.u >= a.u - 1e-7);
                }
            }
            prev = Some(top);
        }
    }
}
