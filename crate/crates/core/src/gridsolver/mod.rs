//! Finite-difference reference solver for the minimum-payoff HJI equation
//! on rectangular grids of dimension at most three.
//!
//! The scheme is first-order Lax-Friedrichs in space with forward Euler in
//! backward time:
//!
//! ```text
//! V(x, t - dtau) = V(x, t) + dtau * min(0, H(x, (D+ + D-)/2) + sum_i alpha_i (D+_i - D-_i)/2)
//! ```
//!
//! where `alpha_i` bounds `|df_i|` over the grid and both input sets.

pub mod contour;

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minimax::hamiltonian;
use crate::systems::{Axis, SystemDescriptor, SystemSpec};

pub use contour::{march, sign_change_cells, Polyline};

pub const MAX_GRID_DIM: usize = 3;
pub const DEFAULT_CFL: f64 = 0.5;
pub const MAX_CFL: f64 = 0.9;
const TIME_TOL: f64 = 1e-9;

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub counts: Vec<usize>,
    pub axes: Vec<Axis>,
    /// Times in `[T, 0]` at which the solution is stored; `0` is always kept.
    pub save_times: Vec<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    /// Explicit time step; derived from `cfl` when absent.
    #[serde(default)]
    pub dtau: Option<f64>,
}

impl GridSpec {
    pub fn for_system(system: &SystemSpec, counts: Vec<usize>, save_times: Vec<f64>) -> Self {
        Self {
            counts,
            axes: system.domain.clone(),
            save_times,
            cfl: DEFAULT_CFL,
            dtau: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Node spacing; periodic axes do not repeat the upper endpoint.
    pub fn spacing(&self, axis: usize) -> f64 {
        let ax = &self.axes[axis];
        let n = self.counts[axis];
        if ax.periodic {
            ax.width() / n as f64
        } else {
            ax.width() / (n - 1) as f64
        }
    }

    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        let lo = self.axes[axis].lo;
        (0..self.counts[axis]).map(|i| lo + h * i as f64).collect()
    }

    /// Row-major strides with the last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.counts[k + 1];
        }
        s
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.counts.is_empty() || self.counts.len() > MAX_GRID_DIM {
            return Err(Error::Config(format!(
                "grid dimension {} unsupported: gridding is limited to {MAX_GRID_DIM} dimensions",
                self.counts.len()
            )));
        }
        if self.counts.len() != self.axes.len() {
            return Err(Error::Config(format!(
                "grid has {} counts but {} axes",
                self.counts.len(),
                self.axes.len()
            )));
        }
        if let Some(&n) = self.counts.iter().find(|&&n| n < 3) {
            return Err(Error::Config(format!("grid needs at least 3 nodes per axis, got {n}")));
        }
        if !(self.cfl > 0.0 && self.cfl <= MAX_CFL) {
            return Err(Error::Config(format!("CFL number {} outside (0, {MAX_CFL}]", self.cfl)));
        }
        if let Some(d) = self.dtau {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("time step {d} must be positive")));
            }
        }
        for &t in &self.save_times {
            if !(t <= TIME_TOL && t >= horizon - TIME_TOL) {
                return Err(Error::Config(format!("save time {t} outside [{horizon}, 0]")));
            }
        }
        Ok(())
    }
}

/// Grid values at the saved times, ordered from `t = 0` backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub system: SystemDescriptor,
    pub spec: GridSpec,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub dtau: f64,
}

/// Max over nodes and inputs of `|f_i|`, per state axis.
fn dissipation(system: &SystemSpec, spec: &GridSpec) -> Vec<f64> {
    let candidates = |set: &[Axis]| -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new()];
        for ax in set {
            let pts: Vec<f64> = if ax.periodic {
                (0..=72).map(|k| ax.lo + ax.width() * k as f64 / 72.0).collect()
            } else {
                vec![ax.lo, ax.mid(), ax.hi]
            };
            out = out
                .into_iter()
                .flat_map(|p| {
                    pts.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    };
    let a_set = candidates(&system.input_a);
    let b_set = candidates(&system.input_b);
    let dim = spec.dim();
    let mut alpha = vec![0.0f64; dim];
    let mut f = vec![0.0; dim];
    for_each_node(spec, |_, x| {
        for a in &a_set {
            for b in &b_set {
                system.dynamics_into(x, a, b, &mut f);
                for (al, fi) in alpha.iter_mut().zip(&f) {
                    *al = al.max(fi.abs());
                }
            }
        }
    });
    alpha
}

fn for_each_node<F: FnMut(usize, &[f64])>(spec: &GridSpec, mut visit: F) {
    let coords: Vec<Vec<f64>> = (0..spec.dim()).map(|k| spec.coords(k)).collect();
    let mut idx = vec![0usize; spec.dim()];
    let mut x: Vec<f64> = coords.iter().map(|c| c[0]).collect();
    for flat in 0..spec.node_count() {
        visit(flat, &x);
        for k in (0..spec.dim()).rev() {
            idx[k] += 1;
            if idx[k] < spec.counts[k] {
                x[k] = coords[k][idx[k]];
                break;
            }
            idx[k] = 0;
            x[k] = coords[k][0];
        }
    }
}

/// Integrates `dV/dt = -min(0, H)` from `V(., 0) = l` back to the horizon.
pub fn solve_grid(system: &SystemSpec, spec: &GridSpec) -> Result<GridField> {
    if system.state_dim() > MAX_GRID_DIM {
        return Err(Error::Config(format!(
            "system `{}` has dimension {}; grid solutions scale exponentially and are limited to {MAX_GRID_DIM} dimensions",
            system.name(),
            system.state_dim()
        )));
    }
    spec.validate(system.horizon)?;
    if spec.dim() != system.state_dim() {
        return Err(Error::Config(format!(
            "grid has {} axes, system has dimension {}",
            spec.dim(),
            system.state_dim()
        )));
    }
    let dim = spec.dim();
    let h: Vec<f64> = (0..dim).map(|k| spec.spacing(k)).collect();
    let alpha = dissipation(system, spec);
    let rate: f64 = alpha.iter().zip(&h).map(|(a, dx)| a / dx).sum();
    let horizon = system.horizon;
    let dtau = match spec.dtau {
        Some(d) => {
            let cfl = d * rate;
            if cfl > MAX_CFL {
                return Err(Error::Config(format!(
                    "time step {d} gives CFL number {cfl:.3} > {MAX_CFL}"
                )));
            }
            d
        }
        None if rate > 0.0 => spec.cfl / rate,
        None => (-horizon).max(1.0),
    };

    let mut times: Vec<f64> = spec.save_times.iter().map(|&t| t.min(0.0)).collect();
    times.push(0.0);
    times.sort_by(|a, b| b.partial_cmp(a).expect("finite save times"));
    times.dedup_by(|a, b| (*a - *b).abs() <= TIME_TOL);

    let strides = spec.strides();
    let coords: Vec<Vec<f64>> = (0..dim).map(|k| spec.coords(k)).collect();
    let mut v = vec![0.0; spec.node_count()];
    for_each_node(spec, |i, x| v[i] = system.boundary(x));

    let mut values = vec![v.clone()];
    let mut t = 0.0;
    let mut next = v.clone();
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let mut p = vec![0.0; dim];
    for &target in &times[1..] {
        while t - target > TIME_TOL {
            let step = dtau.min(t - target);
            for flat in 0..v.len() {
                let mut rem = flat;
                for k in 0..dim {
                    idx[k] = rem / strides[k];
                    rem %= strides[k];
                    x[k] = coords[k][idx[k]];
                }
                let mut diss = 0.0;
                for k in 0..dim {
                    let n = spec.counts[k];
                    let i = idx[k];
                    let here = v[flat];
                    let (up, down) = if spec.axes[k].periodic {
                        let up = flat - i * strides[k] + ((i + 1) % n) * strides[k];
                        let down = flat - i * strides[k] + ((i + n - 1) % n) * strides[k];
                        ((v[up] - here) / h[k], (here - v[down]) / h[k])
                    } else if i == 0 {
                        let d = (v[flat + strides[k]] - here) / h[k];
                        (d, d)
                    } else if i == n - 1 {
                        let d = (here - v[flat - strides[k]]) / h[k];
                        (d, d)
                    } else {
                        ((v[flat + strides[k]] - here) / h[k], (here - v[flat - strides[k]]) / h[k])
                    };
                    p[k] = 0.5 * (up + down);
                    diss += 0.5 * alpha[k] * (up - down);
                }
                let ham = hamiltonian(system, &p, &x) + diss;
                next[flat] = v[flat] + step * ham.min(0.0);
            }
            std::mem::swap(&mut v, &mut next);
            t -= step;
        }
        t = target;
        values.push(v.clone());
    }

    Ok(GridField {
        system: system.descriptor()?,
        spec: spec.clone(),
        times,
        values,
        dtau,
    })
}

impl GridField {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("field has at least the t = 0 slice")
    }

    pub fn slice_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= TIME_TOL)
    }

    /// Node values at time `t`, linear between stored slices.
    pub fn slice_at(&self, t: f64) -> Result<Vec<f64>> {
        let (k, w) = self.time_bracket(t)?;
        if w == 0.0 {
            return Ok(self.values[k].clone());
        }
        Ok(self.values[k]
            .iter()
            .zip(&self.values[k + 1])
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect())
    }

    /// Slice index `k` and weight `w` so that `V(t) = (1-w) V_k + w V_{k+1}`.
    fn time_bracket(&self, t: f64) -> Result<(usize, f64)> {
        if !(t <= TIME_TOL && t >= self.horizon() - TIME_TOL) {
            return Err(Error::Range(format!(
                "time {t} outside the stored range [{}, 0]",
                self.horizon()
            )));
        }
        if let Some(k) = self.slice_index(t) {
            return Ok((k, 0.0));
        }
        let k = self
            .times
            .windows(2)
            .position(|w| t <= w[0] && t >= w[1])
            .expect("time inside stored range");
        let w = (self.times[k] - t) / (self.times[k] - self.times[k + 1]);
        Ok((k, w))
    }

    /// Multilinear interpolation in space, linear in time.
    pub fn interpolate(&self, x: &[f64], t: f64) -> Result<f64> {
        let (k, w) = self.time_bracket(t)?;
        let a = self.interpolate_slice(&self.values[k], x)?;
        if w == 0.0 {
            return Ok(a);
        }
        let b = self.interpolate_slice(&self.values[k + 1], x)?;
        Ok((1.0 - w) * a + w * b)
    }

    pub fn interpolate_slice(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        let spec = &self.spec;
        let dim = spec.dim();
        if x.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "query has length {}, grid has dimension {dim}",
                x.len()
            )));
        }
        let strides = spec.strides();
        let mut lo_idx = [0usize; MAX_GRID_DIM];
        let mut hi_idx = [0usize; MAX_GRID_DIM];
        let mut frac = [0.0f64; MAX_GRID_DIM];
        for k in 0..dim {
            let ax = &spec.axes[k];
            let n = spec.counts[k];
            let h = spec.spacing(k);
            if ax.periodic {
                let s = (ax.wrap(x[k]) - ax.lo) / h;
                let i = (s.floor() as usize).min(n - 1);
                lo_idx[k] = i;
                hi_idx[k] = (i + 1) % n;
                frac[k] = (s - i as f64).clamp(0.0, 1.0);
            } else {
                let tol = 1e-9 * ax.width();
                if !ax.contains(x[k], tol) {
                    return Err(Error::Range(format!(
                        "coordinate {k} = {} outside grid extent [{}, {}]",
                        x[k], ax.lo, ax.hi
                    )));
                }
                let s = ((x[k] - ax.lo) / h).clamp(0.0, (n - 1) as f64);
                let i = (s.floor() as usize).min(n - 2);
                lo_idx[k] = i;
                hi_idx[k] = i + 1;
                frac[k] = s - i as f64;
            }
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut flat = 0;
            for k in 0..dim {
                if corner >> k & 1 == 1 {
                    weight *= frac[k];
                    flat += hi_idx[k] * strides[k];
                } else {
                    weight *= 1.0 - frac[k];
                    flat += lo_idx[k] * strides[k];
                }
            }
            if weight != 0.0 {
                acc += weight * values[flat];
            }
        }
        Ok(acc)
    }

    /// Number of nodes whose value increases going backwards in time by more
    /// than `tol` between consecutive stored slices.
    pub fn monotonicity_violations(&self, tol: f64) -> usize {
        self.values
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).filter(|(a, b)| **b > **a + tol).count())
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Zero-level polylines of a 2D field at time `t`.
    pub fn zero_level_set_2d(&self, t: f64) -> Result<Vec<Polyline>> {
        if self.spec.dim() != 2 {
            return Err(Error::InvalidArgument("level-set polylines need a 2D field".into()));
        }
        let slice = self.slice_at(t)?;
        Ok(march(&slice, &self.spec.coords(0), &self.spec.coords(1), 0.0))
    }

    /// Centers of sign-change cells of a 3D field at time `t`.
    pub fn zero_level_points_3d(&self, t: f64) -> Result<Vec<[f64; 3]>> {
        if self.spec.dim() != 3 {
            return Err(Error::InvalidArgument("level-set point clouds need a 3D field".into()));
        }
        let slice = self.slice_at(t)?;
        let (a, b, c) = (self.spec.coords(0), self.spec.coords(1), self.spec.coords(2));
        Ok(sign_change_cells(&slice, [&a, &b, &c], 0.0))
    }
}

pub const FIELD_MAGIC: &[u8; 8] = b"HJIFIELD";
pub const FIELD_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldHeader {
    version: u32,
    system: SystemDescriptor,
    grid: GridSpec,
    times: Vec<f64>,
    dtau: f64,
}

fn eof_as_format(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("truncated field stream".into())
    } else {
        Error::Io(e)
    }
}

impl GridField {
    /// Layout: 8-byte magic `HJIFIELD`, `u32` LE version, `u32` LE header
    /// length, JSON header, then one block of `node_count` LE `f64`s per
    /// entry of `times`, nodes row-major with the last axis fastest.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = FieldHeader {
            version: FIELD_VERSION,
            system: self.system.clone(),
            grid: self.spec.clone(),
            times: self.times.clone(),
            dtau: self.dtau,
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&FIELD_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for slice in &self.values {
            for v in slice {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(eof_as_format)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("not a grid field file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(eof_as_format)?;
        let version = u32::from_le_bytes(word);
        if version != FIELD_VERSION {
            return Err(Error::Format(format!("unsupported field version {version}")));
        }
        r.read_exact(&mut word).map_err(eof_as_format)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json).map_err(eof_as_format)?;
        let header: FieldHeader = serde_json::from_slice(&json)
            .map_err(|e| Error::Format(format!("bad field header: {e}")))?;
        if header.grid.counts.len() != header.grid.axes.len() || header.times.is_empty() {
            return Err(Error::Format("inconsistent field header".into()));
        }
        let n = header.grid.node_count();
        let mut values = Vec::with_capacity(header.times.len());
        let mut buf = [0u8; 8];
        for _ in &header.times {
            let mut slice = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(eof_as_format)?;
                slice.push(f64::from_le_bytes(buf));
            }
            values.push(slice);
        }
        Ok(Self {
            system: header.system,
            spec: header.grid,
            times: header.times,
            values,
            dtau: header.dtau,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
