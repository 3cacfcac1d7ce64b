//! Solutions asymptotic to an extremal periodic orbit, built as the limit of
//! maximal solutions `y_n` of the Dirichlet problems
//! `y(0) = barrier(0), y(nT) = x(nT)` between a lower barrier and the orbit.
//!
//! Orbits above the starting point are handled by reflection `u -> -u`;
//! the past is handled by reversal `t -> -t`. When the starting point lies
//! strictly above the lower barrier, the barrier is first replaced by the
//! periodic extension of a return solution, which has an upward corner at
//! `t = 0`.

use std::sync::Arc;

use log::info;
use rayon::prelude::*;

use crate::curves::{verify_lower, Band, BarrierVerdict, Curve};
use crate::dirichlet::{shoot_all, DirichletSolution, DirichletSpec, Seed, ShootOptions};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::flow::Trajectory;
use crate::modify::{same_solution_filter, ModifiedField, SolutionClass};
use crate::periodic::PeriodicOrbit;

/// Slack for the ordering inequalities between computed solutions.
pub const ORDER_SLACK: f64 = 1e-7;
/// Differences of the convergence profile below this are noise.
pub const PROFILE_NOISE: f64 = 1e-9;
/// Profile entries below this are excluded from the rate estimate.
pub const RATE_FLOOR: f64 = 1e-8;

/// The equation, its band and (optionally) the truncated field used for
/// all boundary-value solves.
#[derive(Debug, Clone)]
pub struct BandProblem {
    pub field: Field,
    pub band: Band,
    pub modified: Option<ModifiedField>,
}

impl BandProblem {
    pub fn new(field: Field, band: Band, modified: Option<ModifiedField>) -> BandProblem {
        BandProblem { field, band, modified }
    }

    /// The field integrated by the solvers.
    pub fn solve_field(&self) -> &Field {
        self.modified.as_ref().map_or(&self.field, |m| m.field())
    }

    pub fn reflected(&self) -> Result<BandProblem> {
        Ok(BandProblem {
            field: self.field.reflected(),
            band: self.band.reflected(),
            modified: self.modified.as_ref().map(|m| m.reflected()).transpose()?,
        })
    }

    pub fn reversed(&self) -> Result<BandProblem> {
        Ok(BandProblem {
            field: self.field.reversed(),
            band: self.band.time_reversed(),
            modified: self.modified.as_ref().map(|m| m.reversed()).transpose()?,
        })
    }

    pub fn with_band(&self, band: Band) -> BandProblem {
        BandProblem {
            field: self.field.clone(),
            band,
            modified: self.modified.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AsymptoticOptions {
    /// Number of periods `N`.
    pub horizon: usize,
    pub tol_conv: f64,
    pub steps_per_period: usize,
    pub n_scan: usize,
    pub segment_steps: usize,
    /// Velocity bracket half-width when no truncated field supplies `K`.
    pub v_max: Option<f64>,
}

impl Default for AsymptoticOptions {
    fn default() -> Self {
        AsymptoticOptions {
            horizon: 8,
            tol_conv: 1e-4,
            steps_per_period: 2048,
            n_scan: 512,
            segment_steps: 256,
            v_max: None,
        }
    }
}

impl AsymptoticOptions {
    pub(crate) fn shoot(&self, field: &Field) -> ShootOptions {
        let mut o = ShootOptions::with_steps_per_period(field, self.steps_per_period);
        o.n_scan = self.n_scan;
        o.segment_steps = self.segment_steps;
        o
    }
}

pub(crate) fn speed_bound(problem: &BandProblem, opts: &AsymptoticOptions) -> Result<f64> {
    match (&problem.modified, opts.v_max) {
        (Some(m), _) => Ok(m.k()),
        (None, Some(v)) => Ok(v),
        (None, None) => Err(Error::Precondition(
            "no velocity bracket: supply a truncated field or v_max".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Future,
    Past,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Future => "future",
            Direction::Past => "past",
        }
    }
}

/// Summary of the maximal solution `y_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceEntry {
    pub n: usize,
    pub v0: f64,
    /// `sup |y_n - y_{n-1}|` on `[0, (n-1)T]`; `NaN` for `n = 1`.
    pub cauchy: f64,
    pub solutions: usize,
}

/// Smallest slack of each ordering inequality (negative means violated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunChecks {
    /// `y_N(t) - y_N(t - T)` on `[T, NT]`.
    pub shift_monotone: f64,
    /// `y_n - y_{n+1}` on `[0, nT]`.
    pub sequence_decreasing: f64,
    /// `u(t + T) - u(t)` along the limit.
    pub ladder: f64,
    pub profile_monotone: bool,
}

#[derive(Debug, Clone)]
pub struct AsymptoticRun {
    pub u0: f64,
    pub direction: Direction,
    pub target: PeriodicOrbit,
    /// The lower barrier used (the lifted corner curve when `lifted`), in
    /// the frame where the target is approached from below.
    pub barrier: Curve,
    pub lifted: bool,
    /// `u -> -u` was applied to approach the target from above.
    pub mirrored: bool,
    pub sequence_log: Vec<SequenceEntry>,
    /// On `[0, NT]` (future) or `[-NT, 0]` (past).
    pub limit: Trajectory,
    /// `d_n = sup_[0,T] |u(t+nT) - x(t)| + |u'(t+nT) - x'(t)|`.
    pub profile: Vec<f64>,
    /// Geometric mean of `d_{n+1}/d_n` past the maximum, above noise.
    pub rate: Option<f64>,
    pub checks: RunChecks,
    /// Residual of the limit against the original field when a truncated
    /// field was used.
    pub original_residual: Option<f64>,
}

impl AsymptoticRun {
    pub fn converged(&self, tol: f64) -> bool {
        self.profile.last().is_some_and(|&d| d < tol)
    }

    /// Starting point differs from the orbit yet the run converges to it.
    pub fn is_instability_witness(&self, tol: f64) -> bool {
        self.converged(tol) && (self.u0 - self.target.value(0.0)).abs() >= 1e-3
    }

    /// Initial velocity of the limit.
    pub fn v_start(&self) -> f64 {
        self.limit.first().v
    }

    /// `(v - x')/(u - x)` at the sample furthest along the run with
    /// `|u - x| >= threshold`.
    pub fn terminal_slope(&self, threshold: f64) -> Option<f64> {
        self.limit.samples().iter().rev().find_map(|s| {
            let [x, dx, _] = self.target.eval(s.t);
            let du = s.u - x;
            (du.abs() >= threshold).then(|| (s.v - dx) / du)
        })
    }
}

/// Outcome of the corner lift.
#[derive(Debug, Clone)]
pub struct Lift {
    pub curve: Curve,
    pub solution: DirichletSolution,
    /// `y'(0) - y'(T) > 0`.
    pub gap: f64,
}

/// Maximal return solution `y(0) = y(T) = u0` between the lower barrier and
/// the target, extended periodically into a lower barrier with an upward
/// corner at `t = 0`.
pub fn lower_lift(problem: &BandProblem, target: &PeriodicOrbit, u0: f64, opts: &AsymptoticOptions) -> Result<Lift> {
    let period = problem.field.period();
    let (lo, top) = (problem.band.lower().value(0.0), target.value(0.0));
    if !(lo < u0 && u0 < top) {
        return Err(Error::Precondition(format!(
            "lift needs lower(0) < u0 < target(0): {lo} < {u0} < {top}"
        )));
    }
    let field = problem.solve_field();
    let band = Band::new(problem.band.lower().clone(), target.curve()?)?;
    let spec = DirichletSpec::new(0.0, period, u0, u0, band)?;
    let k = speed_bound(problem, opts)?;
    let set = shoot_all(field, &spec, -k, k, &opts.shoot(field))?;
    let solution = set.maximal().clone();
    let (first, last) = (solution.traj.first(), solution.traj.last());
    let gap = first.v - last.v;
    if gap.abs() <= 1e-10 {
        return Err(Error::Inconsistent(format!(
            "u0 = {u0} lies on a periodic solution: minimality of the target violated"
        )));
    }
    if gap < 0.0 {
        return Err(Error::Inconsistent(format!(
            "upper-type return solution at u0 = {u0} (gap {gap:e}): minimality of the target violated"
        )));
    }
    let curve = Curve::from_trajectory(&solution.traj, period)?;
    match verify_lower(&curve, &problem.field, 64)? {
        BarrierVerdict::Pass { .. } => {}
        fail => {
            return Err(Error::Inconsistent(format!(
                "lifted barrier at u0 = {u0} is not a lower solution: {fail:?}"
            )))
        }
    }
    Ok(Lift { curve, solution, gap })
}

/// The limit of the maximal Dirichlet solutions toward `target` in the
/// future, starting at `u0` (below or above `target(0)`).
pub fn asymptotic_future(
    problem: &BandProblem,
    target: &PeriodicOrbit,
    u0: f64,
    opts: &AsymptoticOptions,
) -> Result<AsymptoticRun> {
    let x0 = target.value(0.0);
    // starting on the target is admissible only where a barrier meets it
    let on_lower = problem.band.lower().value(0.0) >= x0;
    let on_upper = problem.band.upper().value(0.0) <= x0;
    if u0 == x0 && !on_lower && !on_upper {
        return Err(Error::Precondition(format!(
            "u0 = {u0} is on the target orbit; the trivial run is the orbit itself"
        )));
    }
    if u0 > x0 || (u0 == x0 && !on_lower) {
        let mirror = problem.reflected()?;
        let run = from_below(&mirror, &target.reflected(), -u0, opts)?;
        return Ok(AsymptoticRun {
            u0,
            target: target.clone(),
            barrier: run.barrier.reflected(),
            mirrored: true,
            limit: run.limit.reflected(problem.solve_field().label()),
            ..run
        });
    }
    from_below(problem, target, u0, opts)
}

/// The run toward `target` in the past, via reversal of time.
pub fn asymptotic_past(
    problem: &BandProblem,
    target: &PeriodicOrbit,
    u0: f64,
    opts: &AsymptoticOptions,
) -> Result<AsymptoticRun> {
    let reversed = problem.reversed()?;
    let run = asymptotic_future(&reversed, &target.time_reversed(), u0, opts)?;
    Ok(AsymptoticRun {
        direction: Direction::Past,
        target: target.clone(),
        barrier: run.barrier.time_reversed(),
        limit: run.limit.time_reversed(problem.solve_field().label()),
        ..run
    })
}

fn from_below(problem: &BandProblem, target: &PeriodicOrbit, u0: f64, opts: &AsymptoticOptions) -> Result<AsymptoticRun> {
    let field = problem.solve_field();
    let period = field.period();
    let steps = opts.steps_per_period;
    let lo = problem.band.lower().value(0.0);
    if u0 < lo {
        return Err(Error::Precondition(format!("u0 = {u0} below the lower barrier {lo}")));
    }
    if (target.orbit.len() != steps + 1) || (target.period() - period).abs() > 1e-12 * period {
        return Err(Error::Precondition(format!(
            "target orbit must be sampled with {steps} steps per period"
        )));
    }
    let (barrier, lifted) = if u0 > lo {
        (lower_lift(problem, target, u0, opts)?.curve, true)
    } else {
        (problem.band.lower().clone(), false)
    };
    let band = Band::new(barrier.clone(), target.curve()?)?;
    let k = speed_bound(problem, opts)?;
    let x_end = target.value(0.0);

    let mut log = Vec::with_capacity(opts.horizon);
    let mut prev: Option<Trajectory> = None;
    let mut sequence_decreasing = f64::INFINITY;
    for n in 1..=opts.horizon {
        let spec = DirichletSpec::new(0.0, n as f64 * period, u0, x_end, band.clone())?;
        let mut shoot = opts.shoot(field);
        if let Some(p) = &prev {
            shoot.seeds.push(extend_by_orbit(p, target));
        }
        let set = shoot_all(field, &spec, -k, k, &shoot)?;
        let y = set.maximal().traj.clone();
        let cauchy = match &prev {
            Some(p) => {
                let mut sup: f64 = 0.0;
                for (a, b) in p.samples().iter().zip(y.samples()) {
                    sup = sup.max((a.u - b.u).abs());
                    sequence_decreasing = sequence_decreasing.min(a.u - b.u);
                }
                sup
            }
            None => f64::NAN,
        };
        info!("D_{n}: {} solutions, v0 = {}, cauchy = {cauchy:e}", set.len(), set.maximal().v0);
        log.push(SequenceEntry {
            n,
            v0: set.maximal().v0,
            cauchy,
            solutions: set.len(),
        });
        prev = Some(y);
    }
    let limit = prev.ok_or_else(|| Error::Precondition("horizon must be at least 1".into()))?;

    let s = limit.samples();
    let mut shift_monotone = f64::INFINITY;
    for i in steps..s.len() {
        shift_monotone = shift_monotone.min(s[i].u - s[i - steps].u);
    }
    let ladder = shift_monotone;
    if sequence_decreasing < -ORDER_SLACK || shift_monotone < -ORDER_SLACK {
        return Err(Error::Inconsistent(format!(
            "ordering violated: sequence slack {sequence_decreasing:e}, shift slack {shift_monotone:e}"
        )));
    }

    let profile = convergence_profile(&limit, target, opts.horizon, steps);
    let peak = profile
        .iter()
        .enumerate()
        .fold(0, |best, (i, &d)| if d > profile[best] { i } else { best });
    let profile_monotone = profile[peak..].windows(2).all(|w| w[1] <= w[0] + PROFILE_NOISE);
    let rate = tail_rate(&profile[peak..]);

    let original_residual = match &problem.modified {
        Some(m) => match same_solution_filter(m, &limit)? {
            SolutionClass::Original { residual } => Some(residual),
            SolutionClass::ModifiedOnly => {
                return Err(Error::Inconsistent(
                    "limit is not a solution of the original equation".into(),
                ))
            }
        },
        None => None,
    };
    let last = *profile.last().unwrap_or(&f64::INFINITY);
    if !(last < opts.tol_conv) {
        return Err(Error::NotConverged {
            horizon: opts.horizon,
            profile,
        });
    }
    Ok(AsymptoticRun {
        u0,
        direction: Direction::Future,
        target: target.clone(),
        barrier,
        lifted,
        mirrored: false,
        sequence_log: log,
        limit,
        profile,
        rate,
        checks: RunChecks {
            shift_monotone,
            sequence_decreasing,
            ladder,
            profile_monotone,
        },
        original_residual,
    })
}

/// `y` on `[0, (n-1)T]` followed by the orbit.
fn extend_by_orbit(y: &Trajectory, target: &PeriodicOrbit) -> Seed {
    let (y, x) = (y.clone(), target.clone());
    let end = y.t_end();
    Arc::new(move |t| {
        let [u, v, _] = if t <= end {
            y.eval(t).unwrap_or_else(|_| x.eval(t))
        } else {
            x.eval(t)
        };
        (u, v)
    })
}

fn convergence_profile(limit: &Trajectory, target: &PeriodicOrbit, horizon: usize, steps: usize) -> Vec<f64> {
    let s = limit.samples();
    let x = target.orbit.samples();
    (0..horizon)
        .map(|n| {
            (0..=steps)
                .filter_map(|i| s.get(n * steps + i).map(|p| (p, &x[i])))
                .fold(0.0f64, |m, (p, q)| m.max((p.u - q.u).abs() + (p.v - q.v).abs()))
        })
        .collect()
}

fn tail_rate(tail: &[f64]) -> Option<f64> {
    let ratios: Vec<f64> = tail
        .windows(2)
        .filter(|w| w[0] > RATE_FLOOR && w[1] > RATE_FLOOR)
        .map(|w| w[1] / w[0])
        .collect();
    if ratios.is_empty() {
        return None;
    }
    let mean_log = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
    Some(mean_log.exp())
}

/// One sampled point `(u0, v)` of a stable (future) or unstable (past)
/// set of the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldPoint {
    pub u0: f64,
    pub v: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Default)]
pub struct ManifoldSample {
    pub points: Vec<ManifoldPoint>,
    pub runs: Vec<AsymptoticRun>,
    pub failures: Vec<(f64, Direction, Error)>,
}

impl ManifoldSample {
    /// CSV `u0,v,direction`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u0,v,direction\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                crate::flow::fmt17(p.u0),
                crate::flow::fmt17(p.v),
                p.direction.name()
            ));
        }
        out
    }
}

/// Future and past runs from every `u0`; failures are collected, not
/// raised.
pub fn manifold_sweep(
    problem: &BandProblem,
    target: &PeriodicOrbit,
    u0_list: &[f64],
    directions: &[Direction],
    opts: &AsymptoticOptions,
) -> ManifoldSample {
    let jobs: Vec<(f64, Direction)> = u0_list
        .iter()
        .flat_map(|&u| directions.iter().map(move |&d| (u, d)))
        .collect();
    let results: Vec<(f64, Direction, Result<AsymptoticRun>)> = jobs
        .par_iter()
        .map(|&(u0, d)| {
            let run = match d {
                Direction::Future => asymptotic_future(problem, target, u0, opts),
                Direction::Past => asymptotic_past(problem, target, u0, opts),
            };
            (u0, d, run)
        })
        .collect();
    let mut sample = ManifoldSample::default();
    for (u0, direction, run) in results {
        match run {
            Ok(run) => {
                sample.points.push(ManifoldPoint {
                    u0,
                    v: run.v_start(),
                    direction,
                });
                sample.runs.push(run);
            }
            Err(e) => sample.failures.push((u0, direction, e)),
        }
    }
    sample
}
