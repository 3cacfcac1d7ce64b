//! `T`-periodic solutions inside a band: grid sweep of the time-`T`
//! displacement, damped Newton, and the extremal (minimal/maximal) pair.

use log::debug;
use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::curves::{Band, Curve};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::flow::{flow_map, integrate, poincare, Sample, Trajectory};

#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub orbit: Trajectory,
    /// `|u(T) - u(0)| + |v(T) - v(0)|`.
    pub closure_residual: f64,
    /// Eigenvalues of the time-`T` map jacobian, larger modulus first.
    pub floquet: [Complex64; 2],
}

impl PeriodicOrbit {
    /// Integrates one period from `(u0, v0)` and measures its closure.
    pub fn from_state(field: &Field, u0: f64, v0: f64, h: f64) -> Result<PeriodicOrbit> {
        let orbit = integrate(field, 0.0, u0, v0, field.period(), h)?;
        let last = orbit.last();
        let closure_residual = (last.u - u0).abs() + (last.v - v0).abs();
        let floquet = poincare(field, u0, v0, h)?.multipliers();
        Ok(PeriodicOrbit {
            orbit,
            closure_residual,
            floquet,
        })
    }

    pub fn u0(&self) -> f64 {
        self.orbit.first().u
    }

    pub fn v0(&self) -> f64 {
        self.orbit.first().v
    }

    pub fn period(&self) -> f64 {
        self.orbit.t_end()
    }

    /// `(u, u', u'')` of the periodic extension.
    pub fn eval(&self, t: f64) -> [f64; 3] {
        let tau = t.rem_euclid(self.period());
        self.orbit.eval(tau).unwrap_or([f64::NAN; 3])
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t)[0]
    }

    /// Largest Floquet multiplier modulus.
    pub fn max_multiplier(&self) -> f64 {
        self.floquet[0].norm().max(self.floquet[1].norm())
    }

    pub fn is_closed(&self) -> bool {
        self.closure_residual <= 1e-8 * (1.0 + self.u0().abs() + self.v0().abs())
    }

    /// The orbit as a periodic curve (a barrier of both types).
    pub fn curve(&self) -> Result<Curve> {
        Curve::from_trajectory(&self.orbit, self.period())
    }

    /// The orbit of the reflected field `u -> -u`.
    pub fn reflected(&self) -> PeriodicOrbit {
        PeriodicOrbit {
            orbit: self.orbit.reflected(format!("-({})", self.orbit.field_id())),
            closure_residual: self.closure_residual,
            floquet: self.floquet,
        }
    }

    /// The orbit `t -> x(-t)` of the reversed field, resampled on `[0, T]`.
    pub fn time_reversed(&self) -> PeriodicOrbit {
        let s = self.orbit.samples();
        let n = s.len() - 1;
        let dt = self.orbit.dt();
        let samples = (0..=n)
            .map(|i| {
                let p = s[n - i];
                Sample {
                    t: if i == n { self.period() } else { i as f64 * dt },
                    u: p.u,
                    v: -p.v,
                    a: p.a,
                }
            })
            .collect();
        let orbit = Trajectory::from_samples(samples, dt, format!("rev({})", self.orbit.field_id()))
            .expect("non-empty orbit");
        let mut floquet = self.floquet.map(|m| if m.norm() > 0.0 { m.inv() } else { m });
        if floquet[1].norm() > floquet[0].norm() {
            floquet.swap(0, 1);
        }
        PeriodicOrbit {
            orbit,
            closure_residual: self.closure_residual,
            floquet,
        }
    }

    /// Largest `|u - w|` over the common mesh.
    pub fn sup_distance(&self, other: &PeriodicOrbit) -> f64 {
        self.orbit
            .samples()
            .iter()
            .zip(other.orbit.samples())
            .fold(0.0f64, |m, (p, q)| m.max((p.u - q.u).abs()))
    }
}

#[derive(Debug, Clone)]
pub struct ExtremalPair {
    /// All distinct orbits found, sorted by `u(0)`.
    pub orbits: Vec<PeriodicOrbit>,
    pub x_min: usize,
    pub x_max: usize,
    /// Set when the roots look like a continuum rather than isolated
    /// orbits.
    pub degenerate_suspect: bool,
}

impl ExtremalPair {
    pub fn min(&self) -> &PeriodicOrbit {
        &self.orbits[self.x_min]
    }

    pub fn max(&self) -> &PeriodicOrbit {
        &self.orbits[self.x_max]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PeriodicOptions {
    pub grid_u: usize,
    pub grid_v: usize,
    /// Velocities are swept over `[-v_max, v_max]`.
    pub v_max: f64,
    pub h: f64,
    pub newton_tol: f64,
    pub max_depth: usize,
}

impl PeriodicOptions {
    pub fn new(field: &Field, v_max: f64) -> PeriodicOptions {
        PeriodicOptions {
            grid_u: 32,
            grid_v: 32,
            v_max,
            h: field.period() / 2048.0,
            newton_tol: 1e-10,
            max_depth: 4,
        }
    }
}

fn displacement(field: &Field, u: f64, v: f64, h: f64) -> [f64; 2] {
    match flow_map(field, 0.0, u, v, field.period(), h) {
        Ok((eu, ev)) => [eu - u, ev - v],
        Err(_) => [f64::NAN, f64::NAN],
    }
}

/// Both signs (zero counts as either) among the corner values.
fn straddles(values: &[f64]) -> bool {
    if values.iter().any(|x| x.is_nan()) {
        return false;
    }
    values.iter().any(|&x| x <= 0.0) && values.iter().any(|&x| x >= 0.0)
}

/// Damped Newton on `P(x) - x` with min-norm steps; `None` on divergence.
fn newton(field: &Field, start: [f64; 2], opts: &PeriodicOptions, bounds: (f64, f64)) -> Option<[f64; 2]> {
    let mut x = Vector2::new(start[0], start[1]);
    let scale = |x: &Vector2<f64>| 1.0 + x[0].abs() + x[1].abs();
    let mut p = poincare(field, x[0], x[1], opts.h).ok()?;
    let mut f = Vector2::new(p.end[0] - x[0], p.end[1] - x[1]);
    for _ in 0..50 {
        let norm = f.amax();
        if norm <= opts.newton_tol * scale(&x) {
            return Some([x[0], x[1]]);
        }
        let j = p.jacobian;
        let a = Matrix2::new(j[0][0] - 1.0, j[0][1], j[1][0], j[1][1] - 1.0);
        let svd = a.svd(true, true);
        let eps = 1e-13 * svd.singular_values.max();
        let step = svd.solve(&(-f), eps).ok()?;
        let mut step_scale = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let trial = x + step * step_scale;
            if trial[0] < bounds.0 || trial[0] > bounds.1 || trial[1].abs() > 4.0 * opts.v_max + 1.0 {
                step_scale *= 0.5;
                continue;
            }
            let d = displacement(field, trial[0], trial[1], opts.h);
            let ft = Vector2::new(d[0], d[1]);
            if ft.amax() < norm {
                x = trial;
                moved = true;
                break;
            }
            step_scale *= 0.5;
        }
        if !moved {
            break;
        }
        p = poincare(field, x[0], x[1], opts.h).ok()?;
        f = Vector2::new(p.end[0] - x[0], p.end[1] - x[1]);
    }
    (f.amax() <= 1e-8 * scale(&x)).then_some([x[0], x[1]])
}

#[derive(Clone, Copy)]
struct Cell {
    u: (f64, f64),
    v: (f64, f64),
    corners: [[f64; 2]; 4],
    depth: usize,
}

fn cell_roots(field: &Field, cell: Cell, opts: &PeriodicOptions, bounds: (f64, f64)) -> Vec<[f64; 2]> {
    let first: Vec<f64> = cell.corners.iter().map(|c| c[0]).collect();
    let second: Vec<f64> = cell.corners.iter().map(|c| c[1]).collect();
    if !(straddles(&first) && straddles(&second)) {
        return Vec::new();
    }
    let centre = [0.5 * (cell.u.0 + cell.u.1), 0.5 * (cell.v.0 + cell.v.1)];
    if let Some(root) = newton(field, centre, opts, bounds) {
        return vec![root];
    }
    if cell.depth >= opts.max_depth {
        debug!("newton failed in cell u {:?} v {:?}", cell.u, cell.v);
        return Vec::new();
    }
    let um = centre[0];
    let vm = centre[1];
    let d = |u, v| displacement(field, u, v, opts.h);
    let mid = d(um, vm);
    let (u0, u1, v0, v1) = (cell.u.0, cell.u.1, cell.v.0, cell.v.1);
    let bottom = d(um, v0);
    let top = d(um, v1);
    let left = d(u0, vm);
    let right = d(u1, vm);
    // corners ordered (u0,v0), (u1,v0), (u0,v1), (u1,v1)
    let [c00, c10, c01, c11] = cell.corners;
    let subs = [
        ((u0, um), (v0, vm), [c00, bottom, left, mid]),
        ((um, u1), (v0, vm), [bottom, c10, mid, right]),
        ((u0, um), (vm, v1), [left, mid, c01, top]),
        ((um, u1), (vm, v1), [mid, right, top, c11]),
    ];
    subs.iter()
        .flat_map(|&(u, v, corners)| {
            cell_roots(
                field,
                Cell {
                    u,
                    v,
                    corners,
                    depth: cell.depth + 1,
                },
                opts,
                bounds,
            )
        })
        .collect()
}

/// Sweeps `[lower(0), upper(0)] x [-v_max, v_max]` for fixed points of the
/// time-`T` map, also trying the barriers themselves, and returns the
/// distinct in-band orbits with the extremal pair marked.
pub fn find_periodic(field: &Field, band: &Band, opts: &PeriodicOptions) -> Result<ExtremalPair> {
    if (band.period() - field.period()).abs() > 1e-12 * field.period() {
        return Err(Error::PeriodMismatch {
            curve: band.period(),
            field: field.period(),
        });
    }
    let (lo, hi) = (band.lower().value(0.0), band.upper().value(0.0));
    let (nu, nv) = (opts.grid_u.max(1), opts.grid_v.max(1));
    let us: Vec<f64> = (0..=nu).map(|i| lo + (hi - lo) * i as f64 / nu as f64).collect();
    let vs: Vec<f64> = (0..=nv)
        .map(|j| -opts.v_max + 2.0 * opts.v_max * j as f64 / nv as f64)
        .collect();
    let nodes: Vec<[f64; 2]> = (0..=nu)
        .flat_map(|i| (0..=nv).map(move |j| (i, j)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(i, j)| displacement(field, us[i], vs[j], opts.h))
        .collect();
    let at = |i: usize, j: usize| nodes[i * (nv + 1) + j];
    let width = (hi - lo).max(1.0);
    let bounds = (lo - width, hi + width);
    let cells: Vec<Cell> = (0..nu)
        .flat_map(|i| (0..nv).map(move |j| (i, j)))
        .map(|(i, j)| Cell {
            u: (us[i], us[i + 1]),
            v: (vs[j], vs[j + 1]),
            corners: [at(i, j), at(i + 1, j), at(i, j + 1), at(i + 1, j + 1)],
            depth: 0,
        })
        .collect();
    let per_cell: Vec<Vec<[f64; 2]>> = cells.par_iter().map(|&c| cell_roots(field, c, opts, bounds)).collect();
    let productive = per_cell.iter().filter(|r| !r.is_empty()).count();

    let mut roots: Vec<[f64; 2]> = per_cell.into_iter().flatten().collect();
    for curve in [band.lower(), band.upper()] {
        let [u, v, _] = curve.eval(0.0);
        if let Some(r) = newton(field, [u, v], opts, bounds) {
            roots.push(r);
        }
    }
    roots.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for r in roots {
        if !distinct
            .iter()
            .any(|d| (d[0] - r[0]).abs() <= 1e-7 && (d[1] - r[1]).abs() <= 1e-7)
        {
            distinct.push(r);
        }
    }
    let orbits: Vec<PeriodicOrbit> = distinct
        .par_iter()
        .filter_map(|r| PeriodicOrbit::from_state(field, r[0], r[1], opts.h).ok())
        .filter(|o| o.is_closed() && o.orbit.samples().iter().all(|s| band.contains(s.t, s.u, 1e-7)))
        .collect();
    if orbits.is_empty() {
        return Err(Error::NoPeriodicOrbit);
    }
    let degenerate_suspect = orbits.len() >= nu || 4 * productive > cells.len();
    extremal_pair(orbits, degenerate_suspect)
}

/// Marks extremals by `u(0)` and asserts pointwise domination on the mesh.
pub fn extremal_pair(mut orbits: Vec<PeriodicOrbit>, degenerate_suspect: bool) -> Result<ExtremalPair> {
    if orbits.is_empty() {
        return Err(Error::NoPeriodicOrbit);
    }
    orbits.sort_by(|a, b| a.u0().total_cmp(&b.u0()));
    let (x_min, x_max) = (0, orbits.len() - 1);
    let (bottom, top) = (&orbits[x_min], &orbits[x_max]);
    for (i, o) in orbits.iter().enumerate() {
        for ((p, b), t) in o
            .orbit
            .samples()
            .iter()
            .zip(bottom.orbit.samples())
            .zip(top.orbit.samples())
        {
            if p.u < b.u - 1e-7 || p.u > t.u + 1e-7 {
                return Err(Error::Inconsistent(format!(
                    "orbit {i} is not between the extremal orbits at t = {}",
                    p.t
                )));
            }
        }
    }
    Ok(ExtremalPair {
        orbits,
        x_min,
        x_max,
        degenerate_suspect,
    })
}
