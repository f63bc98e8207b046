//! Dynamical systems, their input sets, boundary functions and training domains.
//!
//! Three pursuit-evasion games ship built in (`pe2d`, `pe3d`, `pe6d`). Other
//! systems plug in through [`CustomDynamics`]; their Hamiltonian is then
//! resolved by dense search over the input sets.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Closed interval, optionally periodic (angles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub periodic: bool,
}

impl Axis {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, periodic: false }
    }

    pub const fn periodic(lo: f64, hi: f64) -> Self {
        Self { lo, hi, periodic: true }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    /// Maps `v` into `[lo, hi)` for periodic axes; identity otherwise.
    pub fn wrap(&self, v: f64) -> f64 {
        if self.periodic && self.width() > 0.0 {
            let w = self.lo + (v - self.lo).rem_euclid(self.width());
            // rem_euclid can round up to exactly `width`
            if w >= self.hi {
                self.lo
            } else {
                w
            }
        } else {
            v
        }
    }
}

/// A state of some system. Dereferences to a slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A state paired with a time in `[T, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: StateVector,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinSystem {
    Pe2d,
    Pe3d,
    Pe6d,
}

impl BuiltinSystem {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinSystem::Pe2d => "pe2d",
            BuiltinSystem::Pe3d => "pe3d",
            BuiltinSystem::Pe6d => "pe6d",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "pe2d" => Some(BuiltinSystem::Pe2d),
            "pe3d" => Some(BuiltinSystem::Pe3d),
            "pe6d" => Some(BuiltinSystem::Pe6d),
            _ => None,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            BuiltinSystem::Pe2d => 2,
            BuiltinSystem::Pe3d => 3,
            BuiltinSystem::Pe6d => 6,
        }
    }
}

/// User-supplied dynamics. Inputs are held in the owning [`SystemSpec`].
pub trait CustomDynamics: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn dynamics(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]);
    fn boundary(&self, x: &[f64]) -> f64;
    fn boundary_gradient(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub enum Model {
    Builtin(BuiltinSystem),
    Custom(Arc<dyn CustomDynamics>),
}

/// A dynamical system together with its game data and training domain.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    model: Model,
    pub v_p: f64,
    pub v_e: f64,
    /// Control input set (maximizing player).
    pub input_a: Vec<Axis>,
    /// Disturbance input set (minimizing player).
    pub input_b: Vec<Axis>,
    pub domain: Vec<Axis>,
    /// Time horizon `T <= 0`.
    pub horizon: f64,
    /// Points per input coordinate used by the dense Hamiltonian search of
    /// custom systems.
    pub search_points: usize,
}

/// File representation of a built-in system with its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDescriptor {
    pub name: String,
    pub v_p: f64,
    pub v_e: f64,
    pub input_a: Vec<Axis>,
    pub input_b: Vec<Axis>,
    pub domain: Vec<Axis>,
    pub horizon: f64,
}

pub const DEFAULT_SEARCH_POINTS: usize = 101;

impl SystemSpec {
    /// 2D pursuit-evasion in the evader frame: `x = (x_r, y_r)`.
    pub fn pe2d() -> Self {
        Self {
            model: Model::Builtin(BuiltinSystem::Pe2d),
            v_p: 2.0,
            v_e: 0.0,
            input_a: vec![Axis::new(-2.0, 2.0)],
            input_b: vec![Axis::periodic(0.0, TAU)],
            domain: vec![Axis::new(-5.0, 5.0), Axis::new(-5.0, 5.0)],
            horizon: -1.0,
            search_points: DEFAULT_SEARCH_POINTS,
        }
    }

    /// 3D pursuit-evasion with turn-rate inputs: `x = (x_r, y_r, theta_r)`.
    pub fn pe3d() -> Self {
        Self {
            model: Model::Builtin(BuiltinSystem::Pe3d),
            v_p: 1.0,
            v_e: 1.0,
            input_a: vec![Axis::new(-1.0, 1.0)],
            input_b: vec![Axis::new(-1.0, 1.0)],
            domain: vec![
                Axis::new(-5.0, 5.0),
                Axis::new(-5.0, 5.0),
                Axis::periodic(-PI, PI),
            ],
            horizon: -1.0,
            search_points: DEFAULT_SEARCH_POINTS,
        }
    }

    /// 6D pursuit-evasion in a global frame:
    /// `x = (x_e, y_e, x_p, y_p, theta_e, theta_p)`.
    pub fn pe6d() -> Self {
        Self {
            model: Model::Builtin(BuiltinSystem::Pe6d),
            v_p: 1.0,
            v_e: 1.0,
            input_a: vec![Axis::new(-1.0, 1.0)],
            input_b: vec![Axis::new(-1.0, 1.0)],
            domain: vec![
                Axis::new(-15.0, 15.0),
                Axis::new(-15.0, 15.0),
                Axis::new(-15.0, 15.0),
                Axis::new(-15.0, 15.0),
                Axis::periodic(0.0, TAU),
                Axis::periodic(0.0, TAU),
            ],
            horizon: -1.0,
            search_points: DEFAULT_SEARCH_POINTS,
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match BuiltinSystem::from_name(name) {
            Some(BuiltinSystem::Pe2d) => Ok(Self::pe2d()),
            Some(BuiltinSystem::Pe3d) => Ok(Self::pe3d()),
            Some(BuiltinSystem::Pe6d) => Ok(Self::pe6d()),
            None => Err(Error::Config(format!(
                "unknown system `{name}` (expected pe2d, pe3d or pe6d)"
            ))),
        }
    }

    pub fn custom(
        dynamics: Arc<dyn CustomDynamics>,
        input_a: Vec<Axis>,
        input_b: Vec<Axis>,
        domain: Vec<Axis>,
        horizon: f64,
    ) -> Result<Self> {
        let spec = Self {
            model: Model::Custom(dynamics),
            v_p: 0.0,
            v_e: 0.0,
            input_a,
            input_b,
            domain,
            horizon,
            search_points: DEFAULT_SEARCH_POINTS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_descriptor(d: &SystemDescriptor) -> Result<Self> {
        let mut spec = Self::builtin(&d.name)?;
        spec.v_p = d.v_p;
        spec.v_e = d.v_e;
        spec.input_a = d.input_a.clone();
        spec.input_b = d.input_b.clone();
        spec.domain = d.domain.clone();
        spec.horizon = d.horizon;
        spec.validate()?;
        Ok(spec)
    }

    pub fn descriptor(&self) -> Result<SystemDescriptor> {
        match &self.model {
            Model::Builtin(b) => Ok(SystemDescriptor {
                name: b.name().to_string(),
                v_p: self.v_p,
                v_e: self.v_e,
                input_a: self.input_a.clone(),
                input_b: self.input_b.clone(),
                domain: self.domain.clone(),
                horizon: self.horizon,
            }),
            Model::Custom(c) => Err(Error::Config(format!(
                "custom system `{}` has no file representation",
                c.name()
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon <= 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be a finite nonpositive time, got {}",
                self.horizon
            )));
        }
        if self.domain.len() != self.state_dim() {
            return Err(Error::Config(format!(
                "domain has {} axes, system `{}` has dimension {}",
                self.domain.len(),
                self.name(),
                self.state_dim()
            )));
        }
        for (i, ax) in self.domain.iter().enumerate() {
            if !(ax.lo < ax.hi) {
                return Err(Error::Config(format!("domain axis {i} is empty: [{}, {}]", ax.lo, ax.hi)));
            }
        }
        for (label, set) in [("input_a", &self.input_a), ("input_b", &self.input_b)] {
            for (i, ax) in set.iter().enumerate() {
                if !(ax.lo <= ax.hi) {
                    return Err(Error::Config(format!(
                        "{label} coordinate {i} is empty: [{}, {}]",
                        ax.lo, ax.hi
                    )));
                }
            }
        }
        if let Model::Builtin(_) = self.model {
            if self.input_a.len() != 1 || self.input_b.len() != 1 {
                return Err(Error::Config(format!(
                    "system `{}` takes scalar inputs a and b",
                    self.name()
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn builtin_kind(&self) -> Option<BuiltinSystem> {
        match self.model {
            Model::Builtin(b) => Some(b),
            Model::Custom(_) => None,
        }
    }

    pub fn name(&self) -> &str {
        match &self.model {
            Model::Builtin(b) => b.name(),
            Model::Custom(c) => c.name(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.model {
            Model::Builtin(b) => b.state_dim(),
            Model::Custom(c) => c.state_dim(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(invalid(format!(
                "state has length {}, system `{}` has dimension {}",
                x.len(),
                self.name(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    /// Checked `f(x, a, b)`.
    pub fn eval_dynamics(&self, x: &[f64], a: &[f64], b: &[f64]) -> Result<StateVector> {
        self.check_dim(x)?;
        for (label, set, v) in [("a", &self.input_a, a), ("b", &self.input_b, b)] {
            if v.len() != set.len() {
                return Err(invalid(format!(
                    "input {label} has length {}, expected {}",
                    v.len(),
                    set.len()
                )));
            }
            for (ax, &vi) in set.iter().zip(v) {
                if !ax.contains(vi, 1e-12) {
                    return Err(invalid(format!(
                        "input {label} = {vi} outside [{}, {}]",
                        ax.lo, ax.hi
                    )));
                }
            }
        }
        let mut out = StateVector::zeros(self.state_dim());
        self.dynamics_into(x, a, b, &mut out);
        Ok(out)
    }

    /// Unchecked `f(x, a, b)` written into `out`.
    pub fn dynamics_into(&self, x: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
        match &self.model {
            Model::Builtin(BuiltinSystem::Pe2d) => {
                out[0] = self.v_p * b[0].cos() - a[0];
                out[1] = self.v_p * b[0].sin();
            }
            Model::Builtin(BuiltinSystem::Pe3d) => {
                let (xr, yr, th) = (x[0], x[1], x[2]);
                out[0] = -self.v_e + self.v_p * th.cos() + a[0] * yr;
                out[1] = self.v_p * th.sin() - a[0] * xr;
                out[2] = b[0] - a[0];
            }
            Model::Builtin(BuiltinSystem::Pe6d) => {
                let (th_e, th_p) = (x[4], x[5]);
                out[0] = self.v_e * th_e.cos();
                out[1] = self.v_e * th_e.sin();
                out[2] = self.v_p * th_p.cos();
                out[3] = self.v_p * th_p.sin();
                out[4] = a[0];
                out[5] = b[0];
            }
            Model::Custom(c) => c.dynamics(x, a, b, out),
        }
    }

    /// Checked `l(x)`.
    pub fn boundary_value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.boundary(x))
    }

    /// Unchecked `l(x)`; its zero sub-level set is the target set.
    pub fn boundary(&self, x: &[f64]) -> f64 {
        match &self.model {
            Model::Builtin(BuiltinSystem::Pe2d | BuiltinSystem::Pe3d) => x[0].hypot(x[1]) - 1.0,
            Model::Builtin(BuiltinSystem::Pe6d) => (x[2] - x[0]).hypot(x[3] - x[1]) - 1.0,
            Model::Custom(c) => c.boundary(x),
        }
    }

    pub fn boundary_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; x.len()];
        self.boundary_gradient_into(x, &mut g);
        Ok(g)
    }

    /// Analytic gradient of `l`; zero at the norm singularity.
    pub fn boundary_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        match &self.model {
            Model::Builtin(BuiltinSystem::Pe2d | BuiltinSystem::Pe3d) => {
                let r = x[0].hypot(x[1]);
                if r > 0.0 {
                    out[0] = x[0] / r;
                    out[1] = x[1] / r;
                }
            }
            Model::Builtin(BuiltinSystem::Pe6d) => {
                let (dx, dy) = (x[2] - x[0], x[3] - x[1]);
                let r = dx.hypot(dy);
                if r > 0.0 {
                    out[0] = -dx / r;
                    out[1] = -dy / r;
                    out[2] = dx / r;
                    out[3] = dy / r;
                }
            }
            Model::Custom(c) => c.boundary_gradient(x, out),
        }
    }

    /// Wraps periodic coordinates into their domain range.
    pub fn wrap_state(&self, x: &mut [f64]) {
        for (v, ax) in x.iter_mut().zip(&self.domain) {
            *v = ax.wrap(*v);
        }
    }

    pub fn in_domain(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.domain.len()
            && x.iter().zip(&self.domain).all(|(&v, ax)| ax.contains(v, tol))
    }

    /// Uniform state in `S`.
    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        StateVector(
            self.domain
                .iter()
                .map(|ax| ax.lo + ax.width() * rng.random::<f64>())
                .collect(),
        )
    }

    /// `n` i.i.d. uniform pairs over `S x [T + time_offset, 0]`.
    pub fn sample_domain<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
        time_offset: f64,
    ) -> Vec<Sample> {
        let t_lo = (self.horizon + time_offset).min(0.0);
        (0..n)
            .map(|_| {
                let x = self.sample_state(rng);
                let t = t_lo - t_lo * rng.random::<f64>();
                Sample { x, t }
            })
            .collect()
    }
}

fn wrap_pi(theta: f64) -> f64 {
    Axis::periodic(-PI, PI).wrap(theta)
}

/// Maps a `pe6d` state into the evader frame of `pe3d`.
pub fn to_relative(x6: &[f64]) -> Result<StateVector> {
    if x6.len() != 6 {
        return Err(invalid(format!("expected a 6D state, got length {}", x6.len())));
    }
    let (xe, ye, xp, yp, th_e, th_p) = (x6[0], x6[1], x6[2], x6[3], x6[4], x6[5]);
    let (s, c) = th_e.sin_cos();
    let (dx, dy) = (xp - xe, yp - ye);
    Ok(StateVector(vec![
        c * dx + s * dy,
        -s * dx + c * dy,
        wrap_pi(th_p - th_e),
    ]))
}

/// Inverse of [`to_relative`]: places the pursuer given the evader pose
/// `(x_e, y_e, theta_e)` and a relative state `(x_r, y_r, theta_r)`.
pub fn from_relative(evader: [f64; 3], rel: &[f64]) -> Result<StateVector> {
    if rel.len() != 3 {
        return Err(invalid(format!("expected a 3D relative state, got length {}", rel.len())));
    }
    let [xe, ye, th_e] = evader;
    let (s, c) = th_e.sin_cos();
    let xp = xe + c * rel[0] - s * rel[1];
    let yp = ye + s * rel[0] + c * rel[1];
    let th_p = Axis::periodic(0.0, TAU).wrap(th_e + rel[2]);
    Ok(StateVector(vec![xe, ye, xp, yp, Axis::periodic(0.0, TAU).wrap(th_e), th_p]))
}
