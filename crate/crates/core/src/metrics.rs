//! Approximation quality metrics.
//!
//! * `E1`: mean absolute error against reference values.
//! * `E2`: mean absolute PDE residual `|dV/dt + min(0, H(x, grad_x V))|`.
//! * Self-consistency: mean gap between the minimum of `l` along a
//!   trajectory driven by the learned inputs and the value predicted at its
//!   start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gridsolver::GridField;
use crate::minimax::{hamiltonian, optimal_inputs, Integrator};
use crate::network::Network;
use crate::systems::{from_relative, to_relative, Axis, Sample, StateVector, SystemSpec};

/// RNG stream reserved for evaluation sets.
pub const EVAL_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    GridOracle,
    RelativeCoordinateTransform,
    ExternalFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub x: StateVector,
    pub t: f64,
    pub value: f64,
}

/// Reference values `V(x_i, t_i)` used by [`e1`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    points: Vec<ReferencePoint>,
    provenance: Provenance,
}

impl ReferenceSet {
    pub fn new(points: Vec<ReferencePoint>, provenance: Provenance) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("reference set is empty"));
        }
        if let Some(p) = points.iter().find(|p| !p.value.is_finite() || !p.t.is_finite()) {
            return Err(invalid(format!("non-finite reference entry at t = {}", p.t)));
        }
        Ok(Self { points, provenance })
    }

    pub fn points(&self) -> &[ReferencePoint] {
        &self.points
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Every grid node at time `t`.
    pub fn from_grid_slice(field: &GridField, t: f64) -> Result<Self> {
        let slice = field.slice_at(t)?;
        let coords: Vec<Vec<f64>> = (0..field.spec.dim()).map(|k| field.spec.coords(k)).collect();
        let strides = field.spec.strides();
        let points = slice
            .iter()
            .enumerate()
            .map(|(flat, &value)| {
                let x = (0..coords.len()).map(|k| coords[k][flat / strides[k] % coords[k].len()]);
                ReferencePoint { x: x.collect::<Vec<_>>().into(), t, value }
            })
            .collect();
        Self::new(points, Provenance::GridOracle)
    }

    /// `m` uniform points over `S x [T, 0]` interpolated from `field`.
    pub fn from_grid_uniform<R: Rng + ?Sized>(
        field: &GridField,
        system: &SystemSpec,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let t_lo = system.horizon.max(field.horizon());
        let points = (0..m)
            .map(|_| {
                let x = system.sample_state(rng);
                let t = t_lo - t_lo * rng.random::<f64>();
                let value = field.interpolate(&x, t)?;
                Ok(ReferencePoint { x, t, value })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, Provenance::GridOracle)
    }

    /// 6D reference points whose values come from a 3D relative-frame field.
    ///
    /// The evader pose is uniform over `evader_box x [0, 2pi)` and the
    /// relative state uniform over the field's domain; the pursuer is placed
    /// accordingly.
    pub fn via_relative<R: Rng + ?Sized>(
        field3: &GridField,
        system6: &SystemSpec,
        evader_box: [Axis; 2],
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if system6.state_dim() != 6 || field3.spec.dim() != 3 {
            return Err(invalid("relative-coordinate references map a 3D field onto a 6D system"));
        }
        let rel_axes = &field3.spec.axes;
        let t_lo = system6.horizon.max(field3.horizon());
        let mut points = Vec::with_capacity(m);
        for _ in 0..m {
            let ev = [
                evader_box[0].lo + evader_box[0].width() * rng.random::<f64>(),
                evader_box[1].lo + evader_box[1].width() * rng.random::<f64>(),
                std::f64::consts::TAU * rng.random::<f64>(),
            ];
            let rel: Vec<f64> = rel_axes.iter().map(|ax| ax.lo + ax.width() * rng.random::<f64>()).collect();
            let t = t_lo - t_lo * rng.random::<f64>();
            let x = from_relative(ev, &rel)?;
            if !system6.in_domain(&x, 1e-9) {
                return Err(Error::Range(
                    "relative sample places the pursuer outside the 6D domain".into(),
                ));
            }
            let value = field3.interpolate(&to_relative(&x)?, t)?;
            points.push(ReferencePoint { x, t, value });
        }
        Self::new(points, Provenance::RelativeCoordinateTransform)
    }

    /// Values of a network at the given points.
    pub fn from_network(net: &Network, system: &SystemSpec, samples: &[Sample]) -> Result<Self> {
        let points = samples
            .iter()
            .map(|s| {
                Ok(ReferencePoint { x: s.x.clone(), t: s.t, value: net.value(system, &s.x, s.t)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, Provenance::ExternalFile)
    }
}

/// `(1/M) sum |V_ref(x_i, t_i) - V(x_i, t_i)|`.
pub fn e1(net: &Network, system: &SystemSpec, reference: &ReferenceSet) -> f64 {
    let mut cache = net.new_cache();
    let total: f64 = reference
        .points
        .iter()
        .map(|p| (p.value - net.value_cached(system, &p.x, p.t, &mut cache)).abs())
        .sum();
    total / reference.len() as f64
}

/// Signed residual `dV/dt + min(0, H(x, grad_x V))` at one point.
pub fn pde_residual(net: &Network, system: &SystemSpec, x: &[f64], t: f64) -> f64 {
    let mut cache = net.new_cache();
    let mut gx = vec![0.0; x.len()];
    residual_cached(net, system, x, t, &mut cache, &mut gx)
}

fn residual_cached(
    net: &Network,
    system: &SystemSpec,
    x: &[f64],
    t: f64,
    cache: &mut crate::network::ForwardCache,
    gx: &mut [f64],
) -> f64 {
    let (_, dvdt) = net.value_grad_cached(system, x, t, cache, gx);
    dvdt + hamiltonian(system, gx, x).min(0.0)
}

/// Mean absolute PDE residual over `points`; 0 for an empty set.
pub fn e2(net: &Network, system: &SystemSpec, points: &[Sample]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut cache = net.new_cache();
    let mut gx = vec![0.0; system.state_dim()];
    let total: f64 = points
        .iter()
        .map(|s| residual_cached(net, system, &s.x, s.t, &mut cache, &mut gx).abs())
        .sum();
    total / points.len() as f64
}

/// Minimum of `l` along the closed-loop trajectory from `(x0, T)` to time 0,
/// sampled at step endpoints, together with `V(x0, T)`.
pub fn trajectory_minimum(
    net: &Network,
    system: &SystemSpec,
    x0: &[f64],
    dt: f64,
    integrator: Integrator,
) -> (f64, f64) {
    let horizon = system.horizon;
    let mut cache = net.new_cache();
    let mut gx = vec![0.0; x0.len()];
    let mut x = StateVector(x0.to_vec());
    let mut t = horizon;
    let (v0, _) = net.value_grad_cached(system, &x, t, &mut cache, &mut gx);
    let mut m = system.boundary(&x);
    let steps = ((-horizon) / dt - 1e-9).ceil().max(0.0) as usize;
    for k in 0..steps {
        if k > 0 {
            net.value_grad_cached(system, &x, t, &mut cache, &mut gx);
        }
        let h = dt.min(-t);
        let inputs = optimal_inputs(system, &gx, &x);
        x = integrator.step(system, &x, &inputs, h);
        t += h;
        m = m.min(system.boundary(&x));
    }
    (m, v0)
}

/// `(1/n) sum |m_i - V(x_i, T)|` over the given start states.
pub fn self_consistency(
    net: &Network,
    system: &SystemSpec,
    states: &[StateVector],
    dt: f64,
    integrator: Integrator,
) -> Result<f64> {
    if states.is_empty() {
        return Err(invalid("self-consistency needs at least one start state"));
    }
    if !(dt > 0.0) {
        return Err(invalid(format!("step {dt} must be positive")));
    }
    let total: f64 = states
        .iter()
        .map(|x| {
            let (m, v) = trajectory_minimum(net, system, x, dt, integrator);
            (m - v).abs()
        })
        .sum();
    Ok(total / states.len() as f64)
}

fn default_m() -> usize {
    3000
}

fn default_slice_time() -> f64 {
    -0.5
}

fn default_evader_box() -> [Axis; 2] {
    [Axis::new(-5.0, 5.0), Axis::new(-5.0, 5.0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// All nodes of the oracle at `slice_time`.
    GridSlice,
    /// Uniform points interpolated from the oracle.
    Uniform,
    /// 6D points evaluated through a 3D oracle in relative coordinates.
    ViaRelative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub reference: Option<ReferenceKind>,
    #[serde(default = "default_slice_time")]
    pub slice_time: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_m")]
    pub e2_points: usize,
    #[serde(default = "default_m")]
    pub self_consistency_points: usize,
    #[serde(default = "default_evader_box")]
    pub evader_box: [Axis; 2],
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            reference: None,
            slice_time: default_slice_time(),
            m: default_m(),
            e2_points: default_m(),
            self_consistency_points: default_m(),
            evader_box: default_evader_box(),
        }
    }
}

/// Fixed evaluation sets of one run.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub reference: Option<ReferenceSet>,
    pub residual_points: Vec<Sample>,
    pub start_states: Vec<StateVector>,
    pub dt: f64,
    pub integrator: Integrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub e1: Option<f64>,
    pub e2: f64,
}

impl Evaluator {
    pub fn new(
        reference: Option<ReferenceSet>,
        residual_points: Vec<Sample>,
        start_states: Vec<StateVector>,
        dt: f64,
        integrator: Integrator,
    ) -> Self {
        Self { reference, residual_points, start_states, dt, integrator }
    }

    /// Builds the evaluation sets deterministically from `seed`.
    pub fn build(
        system: &SystemSpec,
        cfg: &MetricsConfig,
        field: Option<&GridField>,
        seed: u64,
        dt: f64,
        integrator: Integrator,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EVAL_STREAM);
        let reference = match (cfg.reference, field) {
            (None, _) => None,
            (Some(kind), None) => {
                return Err(Error::Config(format!(
                    "reference `{}` needs an oracle field",
                    serde_json::to_value(kind)?.as_str().unwrap_or_default()
                )))
            }
            (Some(ReferenceKind::GridSlice), Some(f)) => {
                check_field_matches(system, f)?;
                Some(ReferenceSet::from_grid_slice(f, cfg.slice_time)?)
            }
            (Some(ReferenceKind::Uniform), Some(f)) => {
                check_field_matches(system, f)?;
                Some(ReferenceSet::from_grid_uniform(f, system, cfg.m, &mut rng)?)
            }
            (Some(ReferenceKind::ViaRelative), Some(f)) => {
                Some(ReferenceSet::via_relative(f, system, cfg.evader_box, cfg.m, &mut rng)?)
            }
        };
        let residual_points = system.sample_domain(&mut rng, cfg.e2_points, 0.0);
        let start_states = (0..cfg.self_consistency_points).map(|_| system.sample_state(&mut rng)).collect();
        Ok(Self { reference, residual_points, start_states, dt, integrator })
    }

    pub fn scores(&self, net: &Network, system: &SystemSpec) -> Scores {
        Scores {
            e1: self.reference.as_ref().map(|r| e1(net, system, r)),
            e2: e2(net, system, &self.residual_points),
        }
    }

    pub fn self_consistency(&self, net: &Network, system: &SystemSpec) -> Option<f64> {
        if self.start_states.is_empty() {
            return None;
        }
        self_consistency(net, system, &self.start_states, self.dt, self.integrator).ok()
    }
}

/// A field is usable as a direct reference if it describes the same system.
pub fn check_field_matches(system: &SystemSpec, field: &GridField) -> Result<()> {
    let d = system.descriptor()?;
    if d != field.system {
        return Err(Error::Config(format!(
            "oracle field was computed for `{}` with different parameters than `{}`",
            field.system.name, d.name
        )));
    }
    Ok(())
}
