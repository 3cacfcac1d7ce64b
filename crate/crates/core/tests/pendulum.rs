//! Damped pendulum `-u'' = 0.2 u' + sin u` with period `2π`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ludyn::asymptotic::{asymptotic_future, asymptotic_past, lower_lift, AsymptoticOptions, BandProblem, ORDER_SLACK};
use ludyn::curves::{verify_lower, Band};
use ludyn::field::{Field, NagumoSpec};
use ludyn::flow::integrate;
use ludyn::modify::build_modified;
use ludyn::periodic::{find_periodic, PeriodicOptions, PeriodicOrbit};

const C: f64 = 0.2;

fn stable_exponent() -> f64 {
    (-C - (C * C + 4.0).sqrt()) / 2.0
}

fn unstable_exponent() -> f64 {
    (-C + (C * C + 4.0).sqrt()) / 2.0
}

fn setup() -> (BandProblem, PeriodicOrbit) {
    let params = BTreeMap::from([("c".to_string(), C), ("a".to_string(), 1.0)]);
    let f = Field::from_expr("c*v + a*sin(u)", &params, 2.0 * PI).unwrap();
    let band = Band::constant(PI / 2.0, 1.5 * PI, 2.0 * PI).unwrap();
    let phi = NagumoSpec::from_expr("0.2*v + 1", &BTreeMap::new()).unwrap();
    let m = build_modified(&f, &band, &phi).unwrap();
    let pair = find_periodic(m.field(), &band, &PeriodicOptions::new(&f, m.k())).unwrap();
    let x = pair.min().clone();
    (BandProblem::new(f, band, Some(m)), x)
}

/// Slope of the stable manifold of the saddle `(π, 0)` from a
/// backward-integration oracle started on its linear approximation.
fn stable_manifold_slope_oracle(field: &Field) -> f64 {
    let exponent = stable_exponent();
    let d = 1e-6;
    let traj = integrate(field, 0.0, PI + d, d * exponent, -8.0, 1e-3).unwrap();
    // walk back out until the deviation reaches 1e-4
    let s = traj
        .samples()
        .iter()
        .find(|s| (s.u - PI).abs() >= 1e-4)
        .copied()
        .unwrap();
    s.v / (s.u - PI)
}

#[test]
fn future_run_converges_along_the_stable_direction() {
    let (problem, x) = setup();
    let run = asymptotic_future(&problem, &x, PI / 2.0, &AsymptoticOptions::default()).unwrap();
    assert!(run.checks.shift_monotone >= -ORDER_SLACK);
    assert!(run.checks.sequence_decreasing >= -ORDER_SLACK);
    assert!(run.checks.ladder >= -ORDER_SLACK);
    assert!(run.checks.profile_monotone, "{:?}", run.profile);
    assert!(run.profile[7] < 1e-4);
    let slope = run.terminal_slope(1e-4).unwrap();
    assert!((slope - stable_exponent()).abs() < 1e-3, "slope {slope}");
    let oracle = stable_manifold_slope_oracle(&problem.field);
    assert!((oracle - stable_exponent()).abs() < 1e-3);
    if let Some(rate) = run.rate {
        assert!(rate < 1.0);
    }
    assert!(run.original_residual.unwrap() < 1e-6);
}

#[test]
fn past_run_leaves_along_the_unstable_direction() {
    let (problem, x) = setup();
    let opts = AsymptoticOptions {
        horizon: 4,
        ..Default::default()
    };
    let run = asymptotic_past(&problem, &x, PI / 2.0, &opts).unwrap();
    assert!(run.limit.t_end() < 0.0);
    let slope = run.terminal_slope(1e-4).unwrap();
    assert!((slope - unstable_exponent()).abs() < 1e-3, "slope {slope}");
}

#[test]
fn lifts_have_upward_corners() {
    let (problem, x) = setup();
    let opts = AsymptoticOptions::default();
    for k in 1..=8 {
        let u0 = PI / 2.0 + (PI / 2.0) * k as f64 / 9.0;
        let lift = lower_lift(&problem, &x, u0, &opts).unwrap();
        let (s0, s1) = (lift.solution.traj.first(), lift.solution.traj.last());
        assert!(s0.v > s1.v + 1e-10);
        assert!(verify_lower(&lift.curve, &problem.field, 64).unwrap().passed());
    }
}
