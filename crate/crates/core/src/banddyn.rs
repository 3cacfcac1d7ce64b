//! Dynamics inside a band bounded by two neighboring periodic orbits: which
//! endpoint receives the connecting solutions, detection of a continuum of
//! periodic orbits, the conservative locator, and stability verdicts.

use std::f64::consts::PI;

use log::debug;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::asymptotic::{asymptotic_future, speed_bound, AsymptoticOptions, AsymptoticRun, BandProblem};
use crate::curves::{verify_lower, verify_upper, Band, Curve};
use crate::dirichlet::{shoot_all, DirichletSolution, DirichletSpec};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::flow::propagate;
use crate::periodic::{find_periodic, PeriodicOptions, PeriodicOrbit};

/// Two orbits closer than this are the same orbit.
pub const SAME_ORBIT: f64 = 1e-7;
/// Return solutions with `|y'(0) - y'(T)|` below this are periodic.
pub const CLOSURE_TOL: f64 = 1e-8;
/// Derivative gaps below this carry no sign.
pub const GAP_NOISE: f64 = 1e-10;

/// Sign of the derivative gaps over one family of return problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilySign {
    AllPositive,
    AllNegative,
    Mixed,
    /// Some position admitted no in-band return solution.
    Incomplete,
}

impl FamilySign {
    pub fn name(self) -> &'static str {
        match self {
            FamilySign::AllPositive => "all-positive",
            FamilySign::AllNegative => "all-negative",
            FamilySign::Mixed => "mixed",
            FamilySign::Incomplete => "incomplete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    /// Connections run from the lower orbit up to the upper one.
    Beta,
    /// Connections run from the upper orbit down to the lower one.
    Alpha,
    Mixed,
}

impl Receiver {
    pub fn name(self) -> &'static str {
        match self {
            Receiver::Beta => "beta-receives",
            Receiver::Alpha => "alpha-receives",
            Receiver::Mixed => "mixed",
        }
    }
}

/// Return solutions `y(0) = y(T) = u0` at one position.
#[derive(Debug, Clone)]
pub struct PositionEntry {
    pub u0: f64,
    pub solutions: Vec<DirichletSolution>,
    /// `y'(0) - y'(T)` per solution.
    pub gaps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EpsilonFamily {
    pub epsilon: f64,
    pub positions: Vec<PositionEntry>,
    pub sign: FamilySign,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub receiver: Receiver,
    pub families: Vec<EpsilonFamily>,
}

fn family_sign(positions: &[PositionEntry]) -> FamilySign {
    if positions.iter().any(|p| p.gaps.is_empty()) {
        return FamilySign::Incomplete;
    }
    let gaps = || positions.iter().flat_map(|p| p.gaps.iter().copied());
    if gaps().all(|g| g > GAP_NOISE) {
        FamilySign::AllPositive
    } else if gaps().all(|g| g < -GAP_NOISE) {
        FamilySign::AllNegative
    } else {
        FamilySign::Mixed
    }
}

/// Default margins `(beta(0) - alpha(0)) 2^(-k-2)` for `k = 1..4`.
pub fn default_epsilons(alpha: &PeriodicOrbit, beta: &PeriodicOrbit) -> Vec<f64> {
    let width = beta.u0() - alpha.u0();
    (1..=4).map(|k| width * 2f64.powi(-k - 2)).collect()
}

fn orbit_band(alpha: &PeriodicOrbit, beta: &PeriodicOrbit) -> Result<Band> {
    Band::new(alpha.curve()?, beta.curve()?)
}

/// Fails unless every periodic orbit found in `[alpha, beta]` is one of
/// the two.
pub fn check_neighboring(
    problem: &BandProblem,
    alpha: &PeriodicOrbit,
    beta: &PeriodicOrbit,
    opts: &AsymptoticOptions,
) -> Result<()> {
    let field = problem.solve_field();
    let band = orbit_band(alpha, beta)?;
    let mut popts = PeriodicOptions::new(field, speed_bound(problem, opts)?);
    popts.h = field.period() / opts.steps_per_period as f64;
    popts.grid_u = 16;
    popts.grid_v = 16;
    let pair = find_periodic(field, &band, &popts)?;
    if pair.degenerate_suspect {
        return Err(Error::NonNeighboring(format!(
            "{} periodic orbits found between the endpoints: looks like a continuum",
            pair.orbits.len()
        )));
    }
    let distance = |x: &PeriodicOrbit, y: &PeriodicOrbit| {
        (0..=64)
            .map(|i| {
                let t = field.period() * i as f64 / 64.0;
                (x.value(t) - y.value(t)).abs()
            })
            .fold(0.0, f64::max)
    };
    for x in &pair.orbits {
        let (da, db) = (distance(x, alpha), distance(x, beta));
        if da > SAME_ORBIT && db > SAME_ORBIT {
            return Err(Error::NonNeighboring(format!(
                "periodic orbit through u(0) = {} lies strictly between the endpoints",
                x.u0()
            )));
        }
    }
    Ok(())
}

fn return_solutions(
    problem: &BandProblem,
    band: &Band,
    u0: f64,
    opts: &AsymptoticOptions,
) -> Result<Vec<DirichletSolution>> {
    let field = problem.solve_field();
    let k = speed_bound(problem, opts)?;
    let spec = DirichletSpec::new(0.0, field.period(), u0, u0, band.clone())?;
    match shoot_all(field, &spec, -k, k, &opts.shoot(field)) {
        Ok(set) => Ok(set.solutions),
        Err(Error::NoSolutionFound { .. }) => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

fn gap_of(s: &DirichletSolution) -> f64 {
    s.traj.first().v - s.traj.last().v
}

/// Signs of the derivative gaps of the return solutions at `positions`
/// evenly spaced points of `[alpha(0) + eps, beta(0) - eps]`, for every
/// margin `eps`.
pub fn classify_neighboring(
    problem: &BandProblem,
    alpha: &PeriodicOrbit,
    beta: &PeriodicOrbit,
    epsilons: Option<&[f64]>,
    positions: usize,
    opts: &AsymptoticOptions,
) -> Result<Classification> {
    check_neighboring(problem, alpha, beta, opts)?;
    let band = orbit_band(alpha, beta)?;
    let defaults = default_epsilons(alpha, beta);
    let epsilons = epsilons.unwrap_or(&defaults);
    let (lo, hi) = (alpha.u0(), beta.u0());
    let mut families = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        if !(eps > 0.0 && lo + eps < hi - eps) {
            return Err(Error::Precondition(format!("margin {eps} leaves no interior positions")));
        }
        let count = positions.max(1);
        let points: Vec<f64> = (0..count)
            .map(|i| {
                if count == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + eps + (hi - lo - 2.0 * eps) * i as f64 / (count - 1) as f64
                }
            })
            .collect();
        let entries = points
            .iter()
            .map(|&u0| {
                let solutions = return_solutions(problem, &band, u0, opts)?;
                let gaps = solutions.iter().map(gap_of).collect();
                Ok(PositionEntry { u0, solutions, gaps })
            })
            .collect::<Result<Vec<_>>>()?;
        let sign = family_sign(&entries);
        debug!("margin {eps}: {}", sign.name());
        families.push(EpsilonFamily {
            epsilon: eps,
            positions: entries,
            sign,
        });
    }
    let receiver = if families.iter().all(|f| f.sign == FamilySign::AllPositive) {
        Receiver::Beta
    } else if families.iter().all(|f| f.sign == FamilySign::AllNegative) {
        Receiver::Alpha
    } else {
        Receiver::Mixed
    };
    Ok(Classification { receiver, families })
}

/// Connection toward the receiving endpoint: a return solution extended
/// periodically is a corner barrier, and the run from its start converges
/// to the receiving orbit.
pub fn receiving_witness(
    problem: &BandProblem,
    classification: &Classification,
    alpha: &PeriodicOrbit,
    beta: &PeriodicOrbit,
    opts: &AsymptoticOptions,
) -> Result<AsymptoticRun> {
    let receiver = classification.receiver;
    if receiver == Receiver::Mixed {
        return Err(Error::Precondition("mixed classification has no receiving endpoint".into()));
    }
    let family = &classification.families[0];
    let entry = &family.positions[family.positions.len() / 2];
    let pick = entry
        .solutions
        .iter()
        .zip(&entry.gaps)
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(s, _)| s)
        .ok_or_else(|| Error::Inconsistent(format!("no return solution at u0 = {}", entry.u0)))?;
    let period = problem.field.period();
    let corner = Curve::from_trajectory(&pick.traj, period)?;
    let (band, target, verdict) = match receiver {
        Receiver::Beta => (
            Band::new(corner.clone(), beta.curve()?)?,
            beta,
            verify_lower(&corner, &problem.field, 64)?,
        ),
        _ => (
            Band::new(alpha.curve()?, corner.clone())?,
            alpha,
            verify_upper(&corner, &problem.field, 64)?,
        ),
    };
    if !verdict.passed() {
        return Err(Error::Inconsistent(format!(
            "extended return solution at u0 = {} is not a barrier: {verdict:?}",
            entry.u0
        )));
    }
    asymptotic_future(&problem.with_band(band), target, entry.u0, opts)
}

#[derive(Debug, Clone, Copy)]
pub struct DegeneracyOptions {
    /// Positions `s` in `[0, 1]`.
    pub grid_s: usize,
    /// Positions probed between two adjacent orbits to confirm a gap.
    pub sub_grid: usize,
    pub steps_per_period: usize,
    pub n_scan: usize,
    pub segment_steps: usize,
    pub v_max: f64,
}

impl DegeneracyOptions {
    pub fn new(v_max: f64) -> DegeneracyOptions {
        DegeneracyOptions {
            grid_s: 129,
            sub_grid: 64,
            steps_per_period: 2048,
            n_scan: 64,
            segment_steps: 256,
            v_max,
        }
    }

    fn asymptotic(&self) -> AsymptoticOptions {
        AsymptoticOptions {
            steps_per_period: self.steps_per_period,
            n_scan: self.n_scan,
            segment_steps: self.segment_steps,
            v_max: Some(self.v_max),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub enum DegeneracyVerdict {
    /// A strictly ordered continuum of periodic orbits fills the band.
    Degenerate,
    /// Two adjacent periodic orbits with no orbit between them.
    GapFound { lower: PeriodicOrbit, upper: PeriodicOrbit },
    Inconclusive(String),
}

impl DegeneracyVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            DegeneracyVerdict::Degenerate => "degenerate",
            DegeneracyVerdict::GapFound { .. } => "gap-found",
            DegeneracyVerdict::Inconclusive(_) => "inconclusive",
        }
    }
}

/// Periodic orbits `u(., s)` through
/// `(1 - s) alpha(0) + s beta(0)`.
#[derive(Debug, Clone)]
pub struct DegeneracyReport {
    pub verdict: DegeneracyVerdict,
    pub s_grid: Vec<f64>,
    /// Periodic orbits found at each position.
    pub orbits: Vec<Vec<PeriodicOrbit>>,
    /// Smallest `u(t, s_{k+1}) - u(t, s_k)` over the mesh (meaningful
    /// when every position has exactly one orbit).
    pub min_increment: f64,
    pub period: f64,
}

impl DegeneracyReport {
    pub fn is_degenerate(&self) -> bool {
        matches!(self.verdict, DegeneracyVerdict::Degenerate)
    }

    fn family_at(&self, k: usize, t: f64) -> f64 {
        self.orbits[k][0].value(t)
    }

    /// `u(t, s)` by linear interpolation in `s`.
    pub fn family_value(&self, t: f64, s: f64) -> Option<f64> {
        if !self.is_degenerate() || !(0.0..=1.0).contains(&s) {
            return None;
        }
        let n = self.s_grid.len();
        let k = ((s * (n - 1) as f64).floor() as usize).min(n - 2);
        let w = (s - self.s_grid[k]) / (self.s_grid[k + 1] - self.s_grid[k]);
        Some((1.0 - w) * self.family_at(k, t) + w * self.family_at(k + 1, t))
    }

    /// The position `s` of the orbit through `(t, u)`, or `None` outside
    /// the band.
    pub fn invert(&self, t: f64, u: f64) -> Option<f64> {
        if !self.is_degenerate() {
            return None;
        }
        let n = self.s_grid.len();
        let (bottom, top) = (self.family_at(0, t), self.family_at(n - 1, t));
        if u < bottom || u > top {
            return None;
        }
        let (mut lo, mut hi) = (0, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.family_at(mid, t) <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (below, above) = (self.family_at(lo, t), self.family_at(hi, t));
        let w = if above > below { (u - below) / (above - below) } else { 0.0 };
        Some(self.s_grid[lo] + w * (self.s_grid[hi] - self.s_grid[lo]))
    }

    /// The orbit at the grid position nearest `s`.
    pub fn nearest_orbit(&self, s: f64) -> Option<&PeriodicOrbit> {
        let n = self.s_grid.len();
        let k = (s.clamp(0.0, 1.0) * (n - 1) as f64).round() as usize;
        self.orbits.get(k).and_then(|o| o.first())
    }
}

fn periodic_through(
    problem: &BandProblem,
    band: &Band,
    u0: f64,
    opts: &AsymptoticOptions,
) -> Result<Vec<PeriodicOrbit>> {
    let field = problem.solve_field();
    let h = field.period() / opts.steps_per_period as f64;
    return_solutions(problem, band, u0, opts)?
        .iter()
        .filter(|s| (s.traj.last().v - s.traj.first().v).abs() <= CLOSURE_TOL)
        .map(|s| PeriodicOrbit::from_state(field, u0, s.v0, h))
        .collect()
}

/// Looks for a periodic orbit through every position of `[alpha, beta]`.
pub fn detect_degeneracy(
    problem: &BandProblem,
    alpha: &PeriodicOrbit,
    beta: &PeriodicOrbit,
    opts: &DegeneracyOptions,
) -> Result<DegeneracyReport> {
    let band = orbit_band(alpha, beta)?;
    let aopts = opts.asymptotic();
    let n = opts.grid_s.max(2);
    let (lo, hi) = (alpha.u0(), beta.u0());
    let s_grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let position = |s: f64| if s >= 1.0 { hi } else { (1.0 - s) * lo + s * hi };
    let orbits = s_grid
        .iter()
        .map(|&s| periodic_through(problem, &band, position(s), &aopts))
        .collect::<Result<Vec<_>>>()?;
    let period = problem.field.period();
    let mut report = DegeneracyReport {
        verdict: DegeneracyVerdict::Inconclusive(String::new()),
        s_grid,
        orbits,
        min_increment: f64::NAN,
        period,
    };

    if let Some(miss) = report.orbits.iter().position(|o| o.is_empty()) {
        let below = (0..miss).rev().find(|&k| !report.orbits[k].is_empty());
        let above = (miss + 1..n).find(|&k| !report.orbits[k].is_empty());
        report.verdict = match (below, above) {
            (Some(b), Some(a)) => {
                let (u_lo, u_hi) = (position(report.s_grid[b]), position(report.s_grid[a]));
                let m = opts.sub_grid.max(1);
                let probes: Vec<f64> = (1..=m)
                    .map(|i| u_lo + (u_hi - u_lo) * i as f64 / (m + 1) as f64)
                    .collect();
                let found = probes
                    .iter()
                    .map(|&u| periodic_through(problem, &band, u, &aopts).map(|o| !o.is_empty()))
                    .collect::<Result<Vec<_>>>()?;
                if found.iter().any(|&f| f) {
                    DegeneracyVerdict::Inconclusive(format!(
                        "orbits between u(0) = {u_lo} and {u_hi} missed by the coarse grid"
                    ))
                } else {
                    let pick = |k: usize| report.orbits[k].iter().max_by(|x, y| x.u0().total_cmp(&y.u0())).cloned();
                    DegeneracyVerdict::GapFound {
                        lower: pick(b).expect("non-empty"),
                        upper: pick(a).expect("non-empty"),
                    }
                }
            }
            _ => DegeneracyVerdict::Inconclusive("endpoint orbits not recovered".into()),
        };
        return Ok(report);
    }
    if let Some(k) = report.orbits.iter().position(|o| o.len() > 1) {
        report.verdict = DegeneracyVerdict::Inconclusive(format!(
            "{} periodic orbits through position s = {}",
            report.orbits[k].len(),
            report.s_grid[k]
        ));
        return Ok(report);
    }
    let ends_match = report.orbits[0][0].sup_distance(alpha) <= CLOSURE_TOL
        && report.orbits[n - 1][0].sup_distance(beta) <= CLOSURE_TOL;
    let mut min_increment = f64::INFINITY;
    let mesh = report.orbits[0][0].orbit.len();
    for w in report.orbits.windows(2) {
        let (a, b) = (w[0][0].orbit.samples(), w[1][0].orbit.samples());
        for i in 0..mesh.min(a.len()).min(b.len()) {
            min_increment = min_increment.min(b[i].u - a[i].u);
        }
    }
    report.min_increment = min_increment;
    report.verdict = if !ends_match {
        DegeneracyVerdict::Inconclusive("family endpoints differ from the band orbits".into())
    } else if min_increment > 0.0 {
        DegeneracyVerdict::Degenerate
    } else {
        DegeneracyVerdict::Inconclusive(format!("family not strictly ordered (increment {min_increment:e})"))
    };
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocatorStart {
    /// Start on the lower orbit, pushed upward.
    Alpha,
    /// Start on the upper orbit, pushed downward.
    Beta,
}

#[derive(Debug, Clone, Copy)]
pub struct LocatorOptions {
    pub epsilon: f64,
    pub start: LocatorStart,
    pub max_periods: usize,
    /// Window length in periods for the plateau test.
    pub plateau_periods: usize,
    pub plateau_tol: f64,
    /// Reaching within this of the far endpoint counts as escape.
    pub escape_margin: f64,
    pub monotone_slack: f64,
    /// Recorded `(t, s)` pairs per period.
    pub record_per_period: usize,
}

impl LocatorOptions {
    pub fn new(epsilon: f64, start: LocatorStart) -> LocatorOptions {
        LocatorOptions {
            epsilon,
            start,
            max_periods: 2000,
            plateau_periods: 5,
            plateau_tol: 1e-4,
            escape_margin: 1e-4,
            monotone_slack: 1e-8,
            record_per_period: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LocatorOutcome {
    /// The perturbed start left the band: the start orbit is unstable.
    Escape { time: f64 },
    /// `s(t)` settled at an interior position: the orbit there attracts the
    /// perturbed start and is unstable from the start side.
    Plateau { ell: f64, orbit: PeriodicOrbit },
    Inconclusive,
}

impl LocatorOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            LocatorOutcome::Escape { .. } => "escape",
            LocatorOutcome::Plateau { .. } => "plateau",
            LocatorOutcome::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConservativeTrace {
    pub start: LocatorStart,
    pub epsilon: f64,
    pub start_orbit: PeriodicOrbit,
    /// Sampled `(t, s(t))`.
    pub samples: Vec<(f64, f64)>,
    /// Largest step of `s` against its monotone direction.
    pub max_backstep: f64,
    /// First time `s` came within the escape margin of the far endpoint.
    pub reach_time: Option<f64>,
    pub outcome: LocatorOutcome,
}

/// Follows `s(t)`, the position of a slightly perturbed endpoint solution
/// within a degenerate family of a conservative field.
pub fn conservative_locator(
    problem: &BandProblem,
    report: &DegeneracyReport,
    opts: &LocatorOptions,
) -> Result<ConservativeTrace> {
    let field = &problem.field;
    if !field.is_conservative() {
        return Err(Error::Precondition("locator needs a conservative field".into()));
    }
    if !report.is_degenerate() {
        return Err(Error::Precondition(format!(
            "locator needs a degenerate family, report is {}",
            report.verdict.name()
        )));
    }
    if !(opts.epsilon > 0.0) {
        return Err(Error::Precondition(format!("perturbation must be positive, got {}", opts.epsilon)));
    }
    let n = report.s_grid.len();
    let start_orbit = match opts.start {
        LocatorStart::Alpha => report.orbits[0][0].clone(),
        LocatorStart::Beta => report.orbits[n - 1][0].clone(),
    };
    // `sign` maps s to the distance travelled from the start endpoint
    let (v_push, sign, origin) = match opts.start {
        LocatorStart::Alpha => (opts.epsilon, 1.0, 0.0),
        LocatorStart::Beta => (-opts.epsilon, -1.0, 1.0),
    };
    let period = report.period;
    let h = start_orbit.orbit.dt();
    let steps = (period / h).round() as usize;
    let stride = (steps / opts.record_per_period.max(1)).max(1);
    let window = opts.plateau_periods * steps;
    let mut travelled: Vec<f64> = Vec::new();
    let mut samples = Vec::new();
    let mut best = 0.0f64;
    let mut max_backstep = 0.0f64;
    let mut reach_time = None;
    let mut outcome = LocatorOutcome::Inconclusive;
    let mut prev: Option<(f64, f64, f64, f64)> = None;
    let t_end = period * opts.max_periods as f64;
    let mut failure: Option<Error> = None;

    propagate(field, 0.0, start_orbit.u0(), start_orbit.v0() + v_push, t_end, h, |i, p| {
        let (bottom, top) = (report.family_at(0, p.t), report.family_at(n - 1, p.t));
        if p.u < bottom || p.u > top {
            let time = match prev {
                Some((t0, u0, b0, top0)) => {
                    // linear crossing of the violated boundary
                    let (g0, g1) = if p.u > top { (u0 - top0, p.u - top) } else { (b0 - u0, bottom - p.u) };
                    t0 + (p.t - t0) * (-g0) / (g1 - g0)
                }
                None => p.t,
            };
            outcome = LocatorOutcome::Escape { time };
            return false;
        }
        prev = Some((p.t, p.u, bottom, top));
        let s = match report.invert(p.t, p.u) {
            Some(s) => s,
            None => return false,
        };
        let d = sign * (s - origin);
        max_backstep = max_backstep.max(best - d);
        best = best.max(d);
        if max_backstep > opts.monotone_slack {
            failure = Some(Error::Inconsistent(format!(
                "s(t) moved back by {max_backstep:e} at t = {}",
                p.t
            )));
            return false;
        }
        travelled.push(d);
        if i % stride == 0 {
            samples.push((p.t, s));
        }
        if reach_time.is_none() && d >= 1.0 - opts.escape_margin {
            reach_time = Some(p.t);
        }
        if i > 0 && i % steps == 0 && i >= 2 * window && reach_time.is_none() {
            let last = &travelled[i - window..=i];
            let before = &travelled[i - 2 * window..=i - window];
            let spread = |w: &[f64]| w[w.len() - 1] - w[0];
            // a linear drift is not a plateau
            if spread(last) < opts.plateau_tol && spread(last) <= 0.5 * spread(before) && d > opts.escape_margin {
                if let Some(orbit) = report.nearest_orbit(s) {
                    outcome = LocatorOutcome::Plateau { ell: s, orbit: orbit.clone() };
                    return false;
                }
            }
        }
        true
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if matches!(outcome, LocatorOutcome::Inconclusive) && reach_time.is_some() {
        outcome = LocatorOutcome::Escape {
            time: reach_time.unwrap_or(f64::NAN),
        };
    }
    Ok(ConservativeTrace {
        start: opts.start,
        epsilon: opts.epsilon,
        start_orbit,
        samples,
        max_backstep,
        reach_time,
        outcome,
    })
}

impl ConservativeTrace {
    /// Csv with header `t,s`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,s\n");
        for &(t, s) in &self.samples {
            out.push_str(&format!("{},{}\n", crate::flow::fmt17(t), crate::flow::fmt17(s)));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityTag {
    UnstableCertified,
    FloquetUnstable,
    NumericallyStable,
    Inconclusive,
}

impl StabilityTag {
    pub fn name(self) -> &'static str {
        match self {
            StabilityTag::UnstableCertified => "unstable-certified",
            StabilityTag::FloquetUnstable => "floquet-unstable",
            StabilityTag::NumericallyStable => "numerically-stable",
            StabilityTag::Inconclusive => "inconclusive",
        }
    }
}

/// Evidence of instability for a periodic orbit.
#[derive(Debug, Clone, Copy)]
pub enum Witness<'a> {
    /// A run from a different start converging to the orbit.
    Run(&'a AsymptoticRun),
    /// A perturbed start leaving the orbit, or settling onto it.
    Trace(&'a ConservativeTrace),
}

#[derive(Debug, Clone)]
pub struct StabilityVerdict {
    pub tag: StabilityTag,
    pub floquet: [Complex64; 2],
    pub max_multiplier: f64,
    /// What certified or decided the tag.
    pub evidence: String,
}

/// Perturbation size and growth allowance of the numerical stability test.
const PERTURBATION: f64 = 1e-6;
const GROWTH: f64 = 10.0;

fn witness_for(orbit: &PeriodicOrbit, witness: &Witness, tol_conv: f64) -> Option<String> {
    let same = |x: &PeriodicOrbit| x.sup_distance(orbit) <= SAME_ORBIT;
    match witness {
        Witness::Run(run) => (same(&run.target) && run.is_instability_witness(tol_conv)).then(|| {
            format!(
                "{} run from u0 = {} converges (d = {:e})",
                run.direction.name(),
                run.u0,
                run.profile.last().copied().unwrap_or(f64::NAN)
            )
        }),
        Witness::Trace(trace) => match &trace.outcome {
            LocatorOutcome::Escape { time } if same(&trace.start_orbit) => {
                Some(format!("perturbation {:e} escapes at t = {time}", trace.epsilon))
            }
            LocatorOutcome::Plateau { ell, orbit: x } if same(x) => {
                Some(format!("perturbed endpoint settles at s = {ell}"))
            }
            _ => None,
        },
    }
}

fn perturbations_stay_close(field: &Field, orbit: &PeriodicOrbit, periods: usize, count: usize) -> Result<bool> {
    let h = orbit.orbit.dt();
    let t_end = orbit.period() * periods as f64;
    let results: Vec<Result<bool>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / count as f64;
            let (du, dv) = (PERTURBATION * theta.cos(), PERTURBATION * theta.sin());
            let mut close = true;
            propagate(field, 0.0, orbit.u0() + du, orbit.v0() + dv, t_end, h, |_, p| {
                let [x, dx, _] = orbit.eval(p.t);
                close = (p.u - x).abs().max((p.v - dx).abs()) <= GROWTH * PERTURBATION;
                close
            })?;
            Ok(close)
        })
        .collect();
    results.into_iter().try_fold(true, |acc, r| Ok(acc && r?))
}

/// Tags `orbit` from the strongest available evidence.
pub fn stability_verdict(
    field: &Field,
    orbit: &PeriodicOrbit,
    witnesses: &[Witness],
    tol_conv: f64,
) -> Result<StabilityVerdict> {
    let floquet = orbit.floquet;
    let max_multiplier = orbit.max_multiplier();
    let verdict = |tag, evidence: String| StabilityVerdict {
        tag,
        floquet,
        max_multiplier,
        evidence,
    };
    if let Some(evidence) = witnesses.iter().find_map(|w| witness_for(orbit, w, tol_conv)) {
        return Ok(verdict(StabilityTag::UnstableCertified, evidence));
    }
    if max_multiplier > 1.0 + 1e-6 {
        return Ok(verdict(
            StabilityTag::FloquetUnstable,
            format!("max |multiplier| = {max_multiplier}"),
        ));
    }
    if max_multiplier < 1.0 - 1e-6 {
        if perturbations_stay_close(field, orbit, 20, 100)? {
            return Ok(verdict(
                StabilityTag::NumericallyStable,
                format!("max |multiplier| = {max_multiplier}; 100 perturbations stay close over 20 periods"),
            ));
        }
        return Ok(verdict(
            StabilityTag::Inconclusive,
            "perturbations grew despite contracting multipliers".into(),
        ));
    }
    Ok(verdict(
        StabilityTag::Inconclusive,
        format!("max |multiplier| = {max_multiplier} within 1e-6 of 1"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn constant_orbit(field: &Field, u: f64, steps: usize) -> PeriodicOrbit {
        PeriodicOrbit::from_state(field, u, 0.0, field.period() / steps as f64).unwrap()
    }

    fn quick(v_max: f64) -> AsymptoticOptions {
        AsymptoticOptions {
            horizon: 3,
            steps_per_period: 256,
            n_scan: 33,
            segment_steps: 64,
            v_max: Some(v_max),
            ..Default::default()
        }
    }

    #[test]
    fn linear_damping_band_is_not_neighboring() {
        let f = Field::from_expr("v", &BTreeMap::new(), 1.0).unwrap();
        let band = Band::constant(0.0, 1.0, 1.0).unwrap();
        let problem = BandProblem::new(f.clone(), band, None);
        let (a, b) = (constant_orbit(&f, 0.0, 256), constant_orbit(&f, 1.0, 256));
        let err = classify_neighboring(&problem, &a, &b, None, 5, &quick(2.0)).unwrap_err();
        assert!(matches!(err, Error::NonNeighboring(_)), "{err:?}");
    }

    #[test]
    fn linear_damping_family_is_the_identity() {
        let f = Field::from_expr("v", &BTreeMap::new(), 1.0).unwrap();
        let band = Band::constant(0.0, 1.0, 1.0).unwrap();
        let problem = BandProblem::new(f.clone(), band, None);
        let (a, b) = (constant_orbit(&f, 0.0, 256), constant_orbit(&f, 1.0, 256));
        let opts = DegeneracyOptions {
            grid_s: 17,
            steps_per_period: 256,
            n_scan: 33,
            ..DegeneracyOptions::new(2.0)
        };
        let report = detect_degeneracy(&problem, &a, &b, &opts).unwrap();
        assert!(report.is_degenerate(), "{:?}", report.verdict);
        for &s in &report.s_grid {
            assert!((report.family_value(0.3, s).unwrap() - s).abs() < 1e-8);
        }
        assert!((report.invert(0.7, 0.25).unwrap() - 0.25).abs() < 1e-8);
    }

    #[test]
    fn free_motion_escapes_linearly() {
        let f = Field::from_expr("0", &BTreeMap::new(), 1.0).unwrap().conservative(true);
        let band = Band::constant(0.0, 1.0, 1.0).unwrap();
        let problem = BandProblem::new(f.clone(), band, None);
        let (a, b) = (constant_orbit(&f, 0.0, 64), constant_orbit(&f, 1.0, 64));
        let opts = DegeneracyOptions {
            grid_s: 9,
            steps_per_period: 64,
            n_scan: 33,
            ..DegeneracyOptions::new(2.0)
        };
        let report = detect_degeneracy(&problem, &a, &b, &opts).unwrap();
        assert!(report.is_degenerate());
        let trace = conservative_locator(&problem, &report, &LocatorOptions::new(1e-3, LocatorStart::Alpha)).unwrap();
        match trace.outcome {
            LocatorOutcome::Escape { time } => assert!((time - 1000.0).abs() < 1e-6, "{time}"),
            ref o => panic!("{o:?}"),
        }
        assert!(trace.max_backstep <= 1e-8);
        let err = conservative_locator(&problem, &report, &LocatorOptions::new(0.0, LocatorStart::Alpha));
        assert!(matches!(err, Err(Error::Precondition(_))));
        let v = stability_verdict(&f, &a, &[Witness::Trace(&trace)], 1e-4).unwrap();
        assert_eq!(v.tag, StabilityTag::UnstableCertified);
    }

    #[test]
    fn locator_rejects_a_gap_report() {
        let f = Field::from_expr("0", &BTreeMap::new(), 1.0).unwrap().conservative(true);
        let band = Band::constant(0.0, 1.0, 1.0).unwrap();
        let problem = BandProblem::new(f.clone(), band, None);
        let a = constant_orbit(&f, 0.0, 64);
        let report = DegeneracyReport {
            verdict: DegeneracyVerdict::GapFound {
                lower: a.clone(),
                upper: a,
            },
            s_grid: vec![0.0, 1.0],
            orbits: vec![],
            min_increment: f64::NAN,
            period: 1.0,
        };
        let err = conservative_locator(&problem, &report, &LocatorOptions::new(1e-3, LocatorStart::Alpha));
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn pendulum_rest_states_by_floquet() {
        let f = Field::from_expr("c*v + sin(u)", &params(&[("c", 0.2)]), 2.0 * PI).unwrap();
        let bottom = constant_orbit(&f, 0.0, 2048);
        let top = constant_orbit(&f, PI, 2048);
        let v = stability_verdict(&f, &bottom, &[], 1e-4).unwrap();
        assert_eq!(v.tag, StabilityTag::NumericallyStable);
        assert!((v.max_multiplier - (-0.2 * PI).exp()).abs() < 1e-6);
        let v = stability_verdict(&f, &top, &[], 1e-4).unwrap();
        assert_eq!(v.tag, StabilityTag::FloquetUnstable);
    }

    #[test]
    fn family_signs() {
        let entry = |gaps: Vec<f64>| PositionEntry {
            u0: 0.0,
            solutions: vec![],
            gaps,
        };
        assert_eq!(family_sign(&[entry(vec![1.0]), entry(vec![0.5, 2.0])]), FamilySign::AllPositive);
        assert_eq!(family_sign(&[entry(vec![-1.0])]), FamilySign::AllNegative);
        assert_eq!(family_sign(&[entry(vec![-1.0, 1.0])]), FamilySign::Mixed);
        assert_eq!(family_sign(&[entry(vec![1.0]), entry(vec![])]), FamilySign::Incomplete);
    }
}
