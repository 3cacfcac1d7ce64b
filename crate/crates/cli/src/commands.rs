//! Command dispatch. Every command returns a JSON result, a pass flag and
//! its artifacts; [`run`] writes them under `<root>/<problem>/<command>/`
//! together with `report.json`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use ludyn::asymptotic::{manifold_sweep, AsymptoticRun, BandProblem, Direction};
use ludyn::banddyn::{
    classify_neighboring, conservative_locator, detect_degeneracy, receiving_witness, stability_verdict,
    DegeneracyOptions, DegeneracyVerdict, LocatorOptions, LocatorOutcome, LocatorStart, Receiver, StabilityVerdict,
    Witness,
};
use ludyn::curves::{ordering_gap_check, verify_lower, verify_upper, BarrierVerdict, OrderingVerdict};
use ludyn::dirichlet::{shoot_all, DirichletSpec, ShootOptions};
use ludyn::field::{nagumo_check, NagumoStatus};
use ludyn::modify::ModifiedField;
use ludyn::periodic::{find_periodic, ExtremalPair, PeriodicOptions, PeriodicOrbit};
use ludyn::Error;

use crate::error::{io_err, CliError, CliResult};
use crate::json::{float, floats, to_string};
use crate::plot::{palette, render, time_span, Series};
use crate::problem::{Problem, StartDecl, TargetDecl};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Verify,
    Modify,
    Dirichlet,
    Periodic,
    Asymptotic,
    Classify,
    Degeneracy,
    Stability,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Modify => "modify",
            Command::Dirichlet => "dirichlet",
            Command::Periodic => "periodic",
            Command::Asymptotic => "asymptotic",
            Command::Classify => "classify",
            Command::Degeneracy => "degeneracy",
            Command::Stability => "stability",
            Command::Report => "report",
        }
    }
}

/// What a command computed.
pub struct Output {
    pub result: Value,
    /// False on a negative verdict (exit status 2).
    pub pass: bool,
    /// `(file name, contents)`, written in order.
    pub artifacts: Vec<(String, String)>,
}

/// Where a finished command left its files.
pub struct Summary {
    pub dir: PathBuf,
    pub pass: bool,
    pub report: Value,
}

pub const DETERMINISM_NOTE: &str =
    "seed-free: identical inputs give byte-identical JSON and CSV; wall time is logged, not stored";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `command` and writes its artifacts and `report.json`.
pub fn run(command: Command, problem: &Problem, root: &Path) -> CliResult<Summary> {
    let output = match command {
        Command::Verify => verify(problem)?,
        Command::Modify => modify(problem)?,
        Command::Dirichlet => dirichlet(problem)?,
        Command::Periodic => periodic(problem)?,
        Command::Asymptotic => asymptotic(problem)?,
        Command::Classify => classify(problem)?,
        Command::Degeneracy => degeneracy(problem)?,
        Command::Stability => stability(problem)?,
        Command::Report => report(problem, root)?,
    };
    write_output(command, problem, root, output)
}

fn write_output(command: Command, problem: &Problem, root: &Path, output: Output) -> CliResult<Summary> {
    let dir = root.join(problem.name()).join(command.name());
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut outputs = Map::new();
    for (name, contents) in &output.artifacts {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(io_err(&path))?;
        outputs.insert(name.clone(), Value::String(sha256_hex(contents.as_bytes())));
    }
    let report = json!({
        "command": command.name(),
        "problem": problem.name(),
        "inputs_digest": sha256_hex(problem.canonical_input.as_bytes()),
        "outputs": outputs,
        "pass": output.pass,
        "result": output.result,
        "determinism": DETERMINISM_NOTE,
    });
    let path = dir.join("report.json");
    std::fs::write(&path, to_string(&report)).map_err(io_err(&path))?;
    Ok(Summary {
        dir,
        pass: output.pass,
        report,
    })
}

fn barrier_json(v: &BarrierVerdict) -> Value {
    match *v {
        BarrierVerdict::Pass { max_residual, tol } => {
            json!({"status": "pass", "max_residual": float(max_residual), "tol": float(tol)})
        }
        BarrierVerdict::Fail { t, residual, corner } => {
            json!({"status": "fail", "t": float(t), "residual": float(residual), "corner": corner})
        }
    }
}

fn verify(problem: &Problem) -> CliResult<Output> {
    let n = problem.decl.solver.verify_samples;
    problem.band.lower().check_segments()?;
    problem.band.upper().check_segments()?;
    let lower = verify_lower(problem.band.lower(), &problem.field, n)?;
    let upper = verify_upper(problem.band.upper(), &problem.field, n)?;
    let width = problem.band.width();
    let (nagumo, nagumo_ok) = match &problem.phi {
        Some(phi) => {
            let v = nagumo_check(phi, width)?;
            let status = match v.status {
                NagumoStatus::Satisfied { margin } => json!({"status": "satisfied", "margin": float(margin)}),
                NagumoStatus::Violated { upper_bound } => {
                    json!({"status": "violated", "upper_bound": float(upper_bound)})
                }
                NagumoStatus::Inconclusive => json!({"status": "inconclusive"}),
            };
            (
                json!({
                    "phi": phi.description(),
                    "verdict": status,
                    "K_candidate": v.k_candidate.map_or(Value::Null, float),
                    "integral": float(v.integral),
                }),
                v.is_satisfied(),
            )
        }
        None => (json!({"status": "not declared"}), true),
    };
    let (ordering, ordering_ok) = if problem.decl.unique {
        match ordering_gap_check(&problem.band) {
            OrderingVerdict::StrictlyOrdered { min_gap } => {
                (json!({"status": "strictly-ordered", "min_gap": float(min_gap)}), true)
            }
            OrderingVerdict::Identical { max_gap } => (json!({"status": "identical", "max_gap": float(max_gap)}), true),
            OrderingVerdict::Inconsistent { min_gap, max_gap } => (
                json!({"status": "inconsistent", "min_gap": float(min_gap), "max_gap": float(max_gap)}),
                false,
            ),
        }
    } else {
        (json!({"status": "skipped: uniqueness not declared"}), true)
    };
    let pass = lower.passed() && upper.passed() && nagumo_ok && ordering_ok;
    Ok(Output {
        result: json!({
            "alpha": barrier_json(&lower),
            "beta": barrier_json(&upper),
            "nagumo": nagumo,
            "ordering": ordering,
            "width": float(width),
            "conservative": problem.field.is_conservative(),
            "autonomous": problem.field.is_autonomous(),
        }),
        pass,
        artifacts: vec![],
    })
}

fn negative(e: &Error) -> bool {
    matches!(
        e,
        Error::NagumoNotSatisfied(_)
            | Error::NoSolutionFound { .. }
            | Error::NoPeriodicOrbit
            | Error::NonNeighboring(_)
            | Error::NotConverged { .. }
    )
}

/// A negative verdict becomes a failing output; other errors propagate.
fn verdict_or<F>(f: F) -> CliResult<Output>
where
    F: FnOnce() -> CliResult<Output>,
{
    match f() {
        Err(CliError::Solver(e)) if negative(&e) => Ok(Output {
            result: json!({"error": e.to_string()}),
            pass: false,
            artifacts: vec![],
        }),
        other => other,
    }
}

fn modified_json(m: &ModifiedField) -> Value {
    json!({
        "K": float(m.k()),
        "epsilon": float(m.epsilon()),
        "M": float(m.m_bound()),
        "b_bound": float(m.b_bound()),
    })
}

fn modify(problem: &Problem) -> CliResult<Output> {
    verdict_or(|| {
        let m = problem.modified()?.ok_or_else(|| CliError::Problem {
            path: problem.path.clone(),
            message: "modify needs phi".into(),
        })?;
        let mut result = modified_json(&m);
        result["integral_K"] = float(m.integral_k());
        result["warning"] = m.warning().map_or(Value::Null, |w| Value::String(w.into()));
        Ok(Output {
            artifacts: vec![("modify.json".into(), to_string(&modified_json(&m)))],
            result,
            pass: true,
        })
    })
}

fn shoot_options(problem: &Problem, field: &ludyn::Field) -> ShootOptions {
    let s = &problem.decl.solver;
    let mut o = ShootOptions::with_steps_per_period(field, s.steps_per_period);
    o.n_scan = s.n_scan;
    o.segment_steps = s.segment_steps;
    o
}

fn missing(problem: &Problem, section: &str) -> CliError {
    CliError::Problem {
        path: problem.path.clone(),
        message: format!("this command needs a [{section}] section"),
    }
}

fn dirichlet(problem: &Problem) -> CliResult<Output> {
    let d = problem.decl.dirichlet.as_ref().ok_or_else(|| missing(problem, "dirichlet"))?;
    let (a, b, y_a, y_b) = (problem.num(&d.a)?, problem.num(&d.b)?, problem.num(&d.y_a)?, problem.num(&d.y_b)?);
    verdict_or(|| {
        let bp = problem.band_problem()?;
        let field = bp.solve_field();
        let k = problem.speed_bound(bp.modified.as_ref());
        let spec = DirichletSpec::new(a, b, y_a, y_b, problem.band.clone())?;
        let set = shoot_all(field, &spec, -k, k, &shoot_options(problem, field))?;
        let v0_list: Vec<f64> = set.solutions.iter().map(|s| s.v0).collect();
        let index = json!({
            "count": set.len(),
            "extremal_max": set.extremal_max,
            "extremal_min": set.extremal_min,
            "v0_list": floats(&v0_list),
        });
        let mut artifacts: Vec<(String, String)> = set
            .solutions
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("solution_{i:03}.csv"), s.traj.to_csv()))
            .collect();
        artifacts.push(("index.json".into(), to_string(&index)));
        let misses: Vec<f64> = set.solutions.iter().map(|s| s.miss).collect();
        let mut result = index;
        result["miss"] = floats(&misses);
        Ok(Output {
            result,
            pass: true,
            artifacts,
        })
    })
}

fn periodic_options(problem: &Problem, field: &ludyn::Field, v_max: f64) -> PeriodicOptions {
    let s = &problem.decl.solver;
    PeriodicOptions {
        grid_u: s.grid_u,
        grid_v: s.grid_v,
        h: problem.h(),
        ..PeriodicOptions::new(field, v_max)
    }
}

fn find_pair(problem: &Problem, bp: &BandProblem) -> CliResult<ExtremalPair> {
    let field = bp.solve_field();
    let k = problem.speed_bound(bp.modified.as_ref());
    Ok(find_periodic(field, &problem.band, &periodic_options(problem, field, k))?)
}

fn orbit_json(o: &PeriodicOrbit) -> Value {
    json!({
        "u0": float(o.u0()),
        "v0": float(o.v0()),
        "closure_residual": float(o.closure_residual),
        "floquet": o.floquet.iter().map(|m| floats(&[m.re, m.im])).collect::<Vec<_>>(),
    })
}

fn periodic(problem: &Problem) -> CliResult<Output> {
    verdict_or(|| {
        let bp = problem.band_problem()?;
        let pair = find_pair(problem, &bp)?;
        let index = json!({
            "orbits": pair.orbits.iter().map(orbit_json).collect::<Vec<_>>(),
            "x_min_index": pair.x_min,
            "x_max_index": pair.x_max,
        });
        let mut result = index.clone();
        result["degenerate_suspect"] = Value::Bool(pair.degenerate_suspect);
        // the same initial states must close under the original field
        let original: Vec<f64> = pair
            .orbits
            .iter()
            .map(|o| {
                PeriodicOrbit::from_state(&problem.field, o.u0(), o.v0(), problem.h())
                    .map_or(f64::NAN, |x| x.closure_residual)
            })
            .collect();
        result["original_closure"] = floats(&original);
        let mut artifacts: Vec<(String, String)> = pair
            .orbits
            .iter()
            .enumerate()
            .map(|(i, o)| (format!("orbit_{i:02}.csv"), o.orbit.to_csv()))
            .collect();
        artifacts.push(("periodic.json".into(), to_string(&index)));
        Ok(Output {
            result,
            pass: true,
            artifacts,
        })
    })
}

fn run_json(run: &AsymptoticRun, tol: f64) -> Value {
    json!({
        "u0": float(run.u0),
        "direction": run.direction.name(),
        "target_u0": float(run.target.u0()),
        "v_start": float(run.v_start()),
        "lifted": run.lifted,
        "mirrored": run.mirrored,
        "converged": run.converged(tol),
        "d": floats(&run.profile),
        "rate": run.rate.map_or(Value::Null, float),
        "checks": {
            "shift_monotone": float(run.checks.shift_monotone),
            "sequence_decreasing": float(run.checks.sequence_decreasing),
            "ladder": float(run.checks.ladder),
            "profile_monotone": run.checks.profile_monotone,
        },
        "original_residual": run.original_residual.map_or(Value::Null, float),
    })
}

fn asymptotic(problem: &Problem) -> CliResult<Output> {
    let decl = problem.decl.asymptotic.as_ref().ok_or_else(|| missing(problem, "asymptotic"))?;
    let u0_list = decl.u0.iter().map(|n| problem.num(n)).collect::<CliResult<Vec<_>>>()?;
    verdict_or(|| {
        let bp = problem.band_problem()?;
        let pair = find_pair(problem, &bp)?;
        let target = match decl.target {
            TargetDecl::Min => pair.min(),
            TargetDecl::Max => pair.max(),
        };
        let opts = problem.asymptotic_options();
        let sample = manifold_sweep(&bp, target, &u0_list, &problem.directions(), &opts);
        let mut artifacts = Vec::new();
        let mut limits = Vec::new();
        for (k, run) in sample.runs.iter().enumerate() {
            let stem = format!("run_{k:02}_{}", run.direction.name());
            let csv = run.limit.to_csv();
            limits.push(run.limit.samples().iter().map(|s| (s.t, s.u)).collect::<Vec<_>>());
            artifacts.push((format!("{stem}_limit.csv"), csv));
            artifacts.push((format!("{stem}_profile.json"), to_string(&json!({"d": floats(&run.profile)}))));
        }
        artifacts.push(("manifold.csv".into(), sample.to_csv()));
        let (t0, t1) = time_span(&limits, problem.period());
        let mut series = vec![
            Series::from_curve("alpha", "#000000", problem.band.lower(), t0, t1),
            Series::from_curve("beta", "#000000", problem.band.upper(), t0, t1),
            Series::from_curve("target", "#d62728", &target.curve()?, t0, t1),
        ];
        for (k, pts) in limits.into_iter().enumerate() {
            series.push(Series {
                label: format!("run {k}"),
                color: palette(k),
                points: pts,
            });
        }
        artifacts.push(("plot.svg".into(), render(problem.name(), &series)));
        let runs: Vec<Value> = sample.runs.iter().map(|r| run_json(r, opts.tol_conv)).collect();
        let failures: Vec<Value> = sample
            .failures
            .iter()
            .map(|(u0, d, e)| json!({"u0": float(*u0), "direction": d.name(), "error": e.to_string()}))
            .collect();
        let pass = sample.failures.is_empty() && sample.runs.iter().all(|r| r.converged(opts.tol_conv));
        Ok(Output {
            result: json!({"target": orbit_json(target), "runs": runs, "failures": failures}),
            pass,
            artifacts,
        })
    })
}

/// The barriers as periodic orbits of the solving field.
fn barrier_orbits(problem: &Problem, bp: &BandProblem) -> CliResult<(PeriodicOrbit, PeriodicOrbit)> {
    let field = bp.solve_field();
    let orbit = |name: &str, c: &ludyn::curves::Curve| -> CliResult<PeriodicOrbit> {
        let [u, v, _] = c.eval(0.0);
        let o = PeriodicOrbit::from_state(field, u, v, problem.h())?;
        if !o.is_closed() {
            return Err(CliError::Problem {
                path: problem.path.clone(),
                message: format!("{name} is not a periodic solution (closure {:e})", o.closure_residual),
            });
        }
        Ok(o)
    };
    Ok((orbit("alpha", problem.band.lower())?, orbit("beta", problem.band.upper())?))
}

fn verdict_json(v: &StabilityVerdict) -> Value {
    json!({
        "tag": v.tag.name(),
        "max_multiplier": float(v.max_multiplier),
        "floquet": v.floquet.iter().map(|m| floats(&[m.re, m.im])).collect::<Vec<_>>(),
        "evidence": v.evidence,
    })
}

fn classify(problem: &Problem) -> CliResult<Output> {
    let decl = problem.decl.classify.clone().unwrap_or_default();
    let epsilons = decl
        .epsilons
        .as_ref()
        .map(|l| l.iter().map(|n| problem.num(n)).collect::<CliResult<Vec<_>>>())
        .transpose()?;
    verdict_or(|| {
        let bp = problem.band_problem()?;
        let (alpha, beta) = barrier_orbits(problem, &bp)?;
        let opts = problem.asymptotic_options();
        let c = classify_neighboring(&bp, &alpha, &beta, epsilons.as_deref(), decl.positions, &opts)?;
        let families: Vec<Value> = c
            .families
            .iter()
            .map(|f| {
                json!({
                    "epsilon": float(f.epsilon),
                    "sign": f.sign.name(),
                    "positions": f.positions.iter().map(|p| json!({
                        "u0": float(p.u0),
                        "v0": p.solutions.iter().map(|s| float(s.v0)).collect::<Vec<_>>(),
                        "gaps": floats(&p.gaps),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let mut result = json!({"receiver": c.receiver.name(), "families": families});
        let mut pass = c.receiver != Receiver::Mixed;
        let mut artifacts = Vec::new();
        if decl.witness && pass {
            let run = receiving_witness(&bp, &c, &alpha, &beta, &opts)?;
            let receiving = if c.receiver == Receiver::Beta { &beta } else { &alpha };
            let verdict = stability_verdict(&bp.field, receiving, &[Witness::Run(&run)], opts.tol_conv)?;
            pass &= run.converged(opts.tol_conv);
            result["witness"] = run_json(&run, opts.tol_conv);
            result["receiving_stability"] = verdict_json(&verdict);
            artifacts.push(("witness_limit.csv".into(), run.limit.to_csv()));
        }
        artifacts.push(("classify.json".into(), to_string(&result)));
        Ok(Output {
            result,
            pass,
            artifacts,
        })
    })
}

fn degeneracy(problem: &Problem) -> CliResult<Output> {
    let decl = problem.decl.degeneracy.clone().unwrap_or_default();
    verdict_or(|| {
        let bp = problem.band_problem()?;
        let (alpha, beta) = barrier_orbits(problem, &bp)?;
        let s = &problem.decl.solver;
        let opts = DegeneracyOptions {
            grid_s: decl.grid_s,
            sub_grid: decl.sub_grid,
            steps_per_period: s.steps_per_period,
            n_scan: decl.n_scan,
            segment_steps: s.segment_steps,
            v_max: problem.speed_bound(bp.modified.as_ref()),
        };
        let report = detect_degeneracy(&bp, &alpha, &beta, &opts)?;
        let first = |k: usize, f: fn(&PeriodicOrbit) -> f64| report.orbits[k].first().map_or(Value::Null, |o| float(f(o)));
        let mut result = json!({
            "verdict": report.verdict.name(),
            "s_grid": floats(&report.s_grid),
            "family_u0": (0..report.s_grid.len()).map(|k| first(k, PeriodicOrbit::u0)).collect::<Vec<_>>(),
            "family_v0": (0..report.s_grid.len()).map(|k| first(k, PeriodicOrbit::v0)).collect::<Vec<_>>(),
            "orbits_per_position": report.orbits.iter().map(Vec::len).collect::<Vec<_>>(),
            "min_increment": float(report.min_increment),
        });
        match &report.verdict {
            DegeneracyVerdict::GapFound { lower, upper } => {
                result["gap_bracket"] = json!({"lower_u0": float(lower.u0()), "upper_u0": float(upper.u0())});
            }
            DegeneracyVerdict::Inconclusive(why) => result["reason"] = Value::String(why.clone()),
            DegeneracyVerdict::Degenerate => {}
        }
        let mut artifacts = Vec::new();
        if let (Some(loc), true) = (&problem.decl.locator, report.is_degenerate() && problem.field.is_conservative()) {
            let start = match loc.start {
                StartDecl::Alpha => LocatorStart::Alpha,
                StartDecl::Beta => LocatorStart::Beta,
            };
            let mut lopts = LocatorOptions::new(loc.epsilon, start);
            lopts.max_periods = loc.max_periods;
            let trace = conservative_locator(&bp, &report, &lopts)?;
            let orbit = match &trace.outcome {
                LocatorOutcome::Plateau { orbit, .. } => orbit.clone(),
                _ => trace.start_orbit.clone(),
            };
            let verdict = stability_verdict(&bp.field, &orbit, &[Witness::Trace(&trace)], problem.decl.solver.tol_conv)?;
            let outcome = match &trace.outcome {
                LocatorOutcome::Escape { time } => json!({"kind": "escape", "time": float(*time)}),
                LocatorOutcome::Plateau { ell, .. } => json!({"kind": "plateau", "ell": float(*ell)}),
                LocatorOutcome::Inconclusive => json!({"kind": "inconclusive"}),
            };
            result["locator"] = json!({
                "epsilon": float(trace.epsilon),
                "outcome": outcome,
                "max_backstep": float(trace.max_backstep),
                "orbit_u0": float(orbit.u0()),
                "stability": verdict_json(&verdict),
            });
            artifacts.push(("locator.csv".into(), trace.to_csv()));
        }
        artifacts.push(("degeneracy.json".into(), to_string(&result)));
        Ok(Output {
            pass: !matches!(report.verdict, DegeneracyVerdict::Inconclusive(_)),
            result,
            artifacts,
        })
    })
}

fn stability(problem: &Problem) -> CliResult<Output> {
    if !problem.decl.unique {
        return Err(CliError::Problem {
            path: problem.path.clone(),
            message: "stability verdicts need `unique = true`".into(),
        });
    }
    verdict_or(|| {
        let bp = problem.band_problem()?;
        let pair = find_pair(problem, &bp)?;
        let opts = problem.asymptotic_options();
        let (lo, hi) = (problem.band.lower().value(0.0), problem.band.upper().value(0.0));
        // one run toward each extremal orbit from halfway to its barrier
        let mut sweeps = Vec::new();
        for (orbit, start) in [(pair.min(), 0.5 * (lo + pair.min().u0())), (pair.max(), 0.5 * (hi + pair.max().u0()))] {
            if (start - orbit.u0()).abs() >= 1e-3 {
                sweeps.push(manifold_sweep(&bp, orbit, &[start], &[Direction::Future], &opts));
            }
        }
        let witnesses: Vec<Witness> = sweeps.iter().flat_map(|s| s.runs.iter().map(Witness::Run)).collect();
        let verdicts = pair
            .orbits
            .iter()
            .map(|o| stability_verdict(&problem.field, o, &witnesses, opts.tol_conv))
            .collect::<Result<Vec<_>, _>>()?;
        let orbits: Vec<Value> = pair
            .orbits
            .iter()
            .zip(&verdicts)
            .map(|(o, v)| {
                let mut j = verdict_json(v);
                j["u0"] = float(o.u0());
                j["v0"] = float(o.v0());
                j
            })
            .collect();
        let failures: Vec<Value> = sweeps
            .iter()
            .flat_map(|s| &s.failures)
            .map(|(u0, _, e)| json!({"u0": float(*u0), "error": e.to_string()}))
            .collect();
        let pass = verdicts.iter().all(|v| v.tag != ludyn::banddyn::StabilityTag::Inconclusive);
        let result = json!({
            "orbits": orbits,
            "x_min_index": pair.x_min,
            "x_max_index": pair.x_max,
            "runs": sweeps.iter().flat_map(|s| &s.runs).map(|r| run_json(r, opts.tol_conv)).collect::<Vec<_>>(),
            "failures": failures,
        });
        Ok(Output {
            artifacts: vec![("stability.json".into(), to_string(&result))],
            result,
            pass,
        })
    })
}

/// Checks one fixture against the combined results; `quantity` is a JSON
/// pointer such as `/periodic/orbits/0/u0`.
fn check_fixture(problem: &Problem, combined: &Value, f: &crate::problem::FixtureDecl) -> CliResult<Value> {
    let found = combined.pointer(&f.quantity).cloned().unwrap_or(Value::Null);
    let pass = match (&f.value, &f.expect) {
        (Some(value), _) => {
            let want = problem.num(value)?;
            let tol = f.tol.unwrap_or(0.0);
            found.as_f64().is_some_and(|x| (x - want).abs() <= tol)
        }
        (None, Some(expect)) => match &found {
            Value::String(s) => s == expect,
            other => other.to_string() == *expect,
        },
        (None, None) => {
            return Err(CliError::Problem {
                path: problem.path.clone(),
                message: format!("fixture {} needs `value` or `expect`", f.quantity),
            })
        }
    };
    Ok(json!({"quantity": f.quantity, "found": found, "pass": pass}))
}

fn default_report_commands(problem: &Problem) -> Vec<Command> {
    let d = &problem.decl;
    let mut commands = vec![Command::Verify];
    if problem.phi.is_some() {
        commands.push(Command::Modify);
    }
    commands.push(Command::Periodic);
    let optional = [
        (d.unique, Command::Stability),
        (d.dirichlet.is_some(), Command::Dirichlet),
        (d.asymptotic.is_some(), Command::Asymptotic),
        (d.classify.is_some(), Command::Classify),
        (d.degeneracy.is_some(), Command::Degeneracy),
    ];
    commands.extend(optional.into_iter().filter(|(on, _)| *on).map(|(_, c)| c));
    commands
}

fn report(problem: &Problem, root: &Path) -> CliResult<Output> {
    let commands = match &problem.decl.report {
        Some(r) => r
            .commands
            .iter()
            .map(|name| match Command::from_str(name, true) {
                Ok(Command::Report) | Err(_) => Err(CliError::Problem {
                    path: problem.path.clone(),
                    message: format!("report.commands: `{name}` is not a command"),
                }),
                Ok(c) => Ok(c),
            })
            .collect::<CliResult<Vec<_>>>()?,
        None => default_report_commands(problem),
    };
    let mut combined = Map::new();
    let mut passes = Map::new();
    for c in commands {
        let summary = run(c, problem, root)?;
        passes.insert(c.name().into(), Value::Bool(summary.pass));
        combined.insert(c.name().into(), summary.report["result"].clone());
    }
    let combined = Value::Object(combined);
    let fixtures = problem
        .decl
        .fixtures
        .iter()
        .map(|f| check_fixture(problem, &combined, f))
        .collect::<CliResult<Vec<_>>>()?;
    let pass = passes.values().all(|p| p == &Value::Bool(true)) && fixtures.iter().all(|f| f["pass"] == Value::Bool(true));
    Ok(Output {
        result: json!({"commands": passes, "fixtures": fixtures}),
        pass,
        artifacts: vec![],
    })
}
