//! Hamiltonian evaluation, optimal inputs and one-step state propagation.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::systems::{Axis, BuiltinSystem, Model, StateVector, SystemSpec};

/// Control input `a` (maximizer) and disturbance input `b` (minimizer).
#[derive(Debug, Clone, PartialEq)]
pub struct InputPair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Bang-bang choice for an input entering `p^T f` with coefficient `coef`.
/// A zero coefficient selects the interval midpoint.
fn bang(coef: f64, ax: &Axis, maximize: bool) -> f64 {
    if coef == 0.0 {
        ax.mid()
    } else if (coef > 0.0) == maximize {
        ax.hi
    } else {
        ax.lo
    }
}

/// Heading in `arc` minimizing `-cos(b - target)`, i.e. closest to `target`.
fn closest_heading(arc: &Axis, target: f64) -> f64 {
    if arc.width() >= TAU - 1e-12 {
        let w = Axis::periodic(arc.lo, arc.lo + TAU).wrap(target);
        return w;
    }
    let rel = Axis::periodic(0.0, TAU).wrap(target - arc.lo);
    if rel <= arc.width() {
        return arc.lo + rel;
    }
    // outside the arc: pick the nearer endpoint in angular distance
    let d_lo = TAU - rel;
    let d_hi = rel - arc.width();
    if d_lo <= d_hi {
        arc.lo
    } else {
        arc.hi
    }
}

/// `(a*, b*) = argmax_a argmin_b p^T f(x, a, b)`.
pub fn optimal_inputs(system: &SystemSpec, p: &[f64], x: &[f64]) -> InputPair {
    let (a_set, b_set) = (&system.input_a, &system.input_b);
    match system.model() {
        Model::Builtin(BuiltinSystem::Pe2d) => {
            let a = bang(-p[0], &a_set[0], true);
            let b = if p[0] == 0.0 && p[1] == 0.0 {
                b_set[0].mid()
            } else {
                closest_heading(&b_set[0], (-p[1]).atan2(-p[0]))
            };
            InputPair { a: vec![a], b: vec![b] }
        }
        Model::Builtin(BuiltinSystem::Pe3d) => {
            let coef_a = p[0] * x[1] - p[1] * x[0] - p[2];
            InputPair {
                a: vec![bang(coef_a, &a_set[0], true)],
                b: vec![bang(p[2], &b_set[0], false)],
            }
        }
        Model::Builtin(BuiltinSystem::Pe6d) => InputPair {
            a: vec![bang(p[4], &a_set[0], true)],
            b: vec![bang(p[5], &b_set[0], false)],
        },
        Model::Custom(_) => dense_search(system, p, x, system.search_points),
    }
}

/// `H(x, p) = p^T f(x, a*, b*)`.
pub fn hamiltonian(system: &SystemSpec, p: &[f64], x: &[f64]) -> f64 {
    hamiltonian_and_inputs(system, p, x).0
}

pub fn hamiltonian_and_inputs(system: &SystemSpec, p: &[f64], x: &[f64]) -> (f64, InputPair) {
    let inputs = optimal_inputs(system, p, x);
    let mut f = vec![0.0; x.len()];
    system.dynamics_into(x, &inputs.a, &inputs.b, &mut f);
    (dot(p, &f), inputs)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axis_points(ax: &Axis, n: usize) -> Vec<f64> {
    if n <= 1 || ax.width() == 0.0 {
        return vec![ax.mid()];
    }
    (0..n)
        .map(|i| ax.lo + ax.width() * i as f64 / (n - 1) as f64)
        .collect()
}

/// Cartesian product of per-coordinate grids.
fn product_grid(set: &[Axis], n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for ax in set {
        let pts = axis_points(ax, n);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                pts.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Max-min over a dense product grid of the input sets, `n` points per
/// coordinate. Used for systems without an analytic optimizer.
pub fn dense_search(system: &SystemSpec, p: &[f64], x: &[f64], n: usize) -> InputPair {
    let a_grid = product_grid(&system.input_a, n);
    let b_grid = product_grid(&system.input_b, n);
    let mut f = vec![0.0; x.len()];
    let mut best: Option<(f64, InputPair)> = None;
    for a in &a_grid {
        let mut inner: Option<(f64, &Vec<f64>)> = None;
        for b in &b_grid {
            system.dynamics_into(x, a, b, &mut f);
            let v = dot(p, &f);
            if inner.is_none_or(|(m, _)| v < m) {
                inner = Some((v, b));
            }
        }
        let (v, b) = inner.expect("input set B is nonempty");
        if best.as_ref().is_none_or(|(m, _)| v > *m) {
            best = Some((v, InputPair { a: a.clone(), b: b.clone() }));
        }
    }
    best.expect("input set A is nonempty").1
}

/// One-step integrator for `x' = f(x, a, b)` with inputs held over the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

impl Integrator {
    pub fn step(self, system: &SystemSpec, x: &[f64], inputs: &InputPair, dt: f64) -> StateVector {
        let f = |s: &[f64], out: &mut [f64]| system.dynamics_into(s, &inputs.a, &inputs.b, out);
        let mut next = match self {
            Integrator::Rk4 => rk4(f, x, dt),
            Integrator::Euler => euler(f, x, dt),
        };
        system.wrap_state(&mut next);
        StateVector(next)
    }
}

/// Classical RK4 step of `x' = f(x, a, b)` with zero-order hold on the inputs.
pub fn rk4_step(system: &SystemSpec, x: &[f64], inputs: &InputPair, dt: f64) -> StateVector {
    Integrator::Rk4.step(system, x, inputs, dt)
}

/// Classical four-stage Runge-Kutta step for an autonomous vector field.
pub fn rk4<F>(mut f: F, x: &[f64], dt: f64) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f(&tmp, &mut k4);
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

pub fn euler<F>(mut f: F, x: &[f64], dt: f64) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut k = vec![0.0; x.len()];
    f(x, &mut k);
    x.iter().zip(&k).map(|(xi, ki)| xi + dt * ki).collect()
}
