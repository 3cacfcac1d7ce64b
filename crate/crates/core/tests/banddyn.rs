//! Receiving-endpoint classification and degeneracy on pendulum fields.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ludyn::asymptotic::{AsymptoticOptions, BandProblem};
use ludyn::banddyn::{
    classify_neighboring, detect_degeneracy, receiving_witness, DegeneracyOptions, DegeneracyVerdict, Receiver,
};
use ludyn::curves::{verify_lower, Band, Curve};
use ludyn::field::Field;
use ludyn::flow::integrate;
use ludyn::periodic::PeriodicOrbit;

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn rest(field: &Field, u: f64, steps: usize) -> PeriodicOrbit {
    PeriodicOrbit::from_state(field, u, 0.0, field.period() / steps as f64).unwrap()
}

fn conservative() -> (BandProblem, PeriodicOrbit, PeriodicOrbit, AsymptoticOptions) {
    let f = Field::from_expr("a*sin(u)", &params(&[("a", 0.1)]), 1.0)
        .unwrap()
        .conservative(true);
    let band = Band::constant(0.0, PI, 1.0).unwrap();
    let opts = AsymptoticOptions {
        horizon: 40,
        steps_per_period: 256,
        n_scan: 129,
        segment_steps: 512,
        v_max: Some(8.0),
        ..Default::default()
    };
    let (a, b) = (rest(&f, 0.0, 256), rest(&f, PI, 256));
    (BandProblem::new(f, band, None), a, b, opts)
}

/// Brute-force sweep over `v0`: sign changes of `y(T) - u0` among in-band
/// shots, refined by bisection, and the sign of each gap.
fn sweep_gaps(field: &Field, u0: f64, v_max: f64, n: usize) -> Vec<f64> {
    let h = field.period() / 256.0;
    let shot = |v: f64| -> Option<(f64, f64)> {
        let traj = integrate(field, 0.0, u0, v, field.period(), h).ok()?;
        if traj.samples().iter().any(|s| s.u < -1e-9 || s.u > PI + 1e-9) {
            return None;
        }
        let last = traj.last();
        Some((last.u - u0, v - last.v))
    };
    let grid: Vec<f64> = (0..n).map(|i| -v_max + 2.0 * v_max * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<Option<(f64, f64)>> = grid.iter().map(|&v| shot(v)).collect();
    let mut gaps = Vec::new();
    for i in 0..n - 1 {
        if let (Some((m0, _)), Some((m1, _))) = (vals[i], vals[i + 1]) {
            if m0 == 0.0 || m0.signum() != m1.signum() {
                let (mut lo, mut hi) = (grid[i], grid[i + 1]);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    match shot(mid) {
                        Some((m, _)) if m.signum() == m0.signum() => lo = mid,
                        _ => hi = mid,
                    }
                }
                if let Some((_, g)) = shot(lo) {
                    gaps.push(g);
                }
            }
        }
    }
    gaps
}

#[test]
fn conservative_pendulum_beta_receives() {
    let (problem, a, b, opts) = conservative();
    let c = classify_neighboring(&problem, &a, &b, None, 5, &opts).unwrap();
    assert_eq!(c.receiver, Receiver::Beta);
    for fam in &c.families {
        for p in &fam.positions {
            assert!(p.gaps.iter().all(|&g| g > 0.0));
            let oracle = sweep_gaps(&problem.field, p.u0, 8.0, 10_000);
            assert!(!oracle.is_empty() && oracle.iter().all(|&g| g > 0.0), "{oracle:?}");
            for s in &p.solutions {
                let corner = Curve::from_trajectory(&s.traj, 1.0).unwrap();
                assert!(verify_lower(&corner, &problem.field, 64).unwrap().passed());
            }
        }
    }
    let run = receiving_witness(&problem, &c, &a, &b, &opts).unwrap();
    assert!(run.converged(1e-4));
}

#[test]
fn damped_pendulum_beta_receives() {
    let f = Field::from_expr("c*v + sin(u)", &params(&[("c", 0.2)]), 2.0 * PI).unwrap();
    let band = Band::constant(0.0, PI, 2.0 * PI).unwrap();
    let opts = AsymptoticOptions {
        steps_per_period: 1024,
        n_scan: 129,
        v_max: Some(4.0),
        ..Default::default()
    };
    let (a, b) = (rest(&f, 0.0, 1024), rest(&f, PI, 1024));
    let problem = BandProblem::new(f, band, None);
    let c = classify_neighboring(&problem, &a, &b, None, 5, &opts).unwrap();
    assert_eq!(c.receiver, Receiver::Beta);
}

#[test]
fn damped_pendulum_full_turn_has_a_gap() {
    let f = Field::from_expr("c*v + sin(u)", &params(&[("c", 0.2)]), 2.0 * PI).unwrap();
    let band = Band::constant(-PI, PI, 2.0 * PI).unwrap();
    let opts = DegeneracyOptions {
        steps_per_period: 512,
        ..DegeneracyOptions::new(4.0)
    };
    let (a, b) = (rest(&f, -PI, 512), rest(&f, PI, 512));
    let problem = BandProblem::new(f, band, None);
    let report = detect_degeneracy(&problem, &a, &b, &opts).unwrap();
    match report.verdict {
        DegeneracyVerdict::GapFound { lower, upper } => assert!(upper.u0() > lower.u0()),
        v => panic!("{v:?}"),
    }
}
