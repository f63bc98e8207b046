//! Feedforward network `N(x, t)` and the candidate value `V(x, t) = l(x) + t N(x, t)`.
//!
//! Parameters live in one flat vector. Layer `j` stores its weight matrix
//! row-major (`rows = m_j`, `cols = m_{j-1}`) followed by its bias, layers in
//! order from input to output. The output layer is affine.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::systems::{StateVector, SystemDescriptor, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sigmoid,
    Softplus,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Softplus => softplus(z),
        }
    }

    /// `sigma'(z)`, given the cached output `h = sigma(z)`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Sigmoid => h * (1.0 - h),
            Activation::Softplus => sigmoid(z),
        }
    }

    fn second_derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Sigmoid => h * (1.0 - h) * (1.0 - 2.0 * h),
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Self { input_dim, hidden, activation };
        arch.validate()?;
        Ok(arch)
    }

    /// Network over `(x, t)` for the given system.
    pub fn for_system(system: &SystemSpec, hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        Self::new(system.state_dim() + 1, hidden, activation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one hidden layer is required".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// `[input_dim, hidden..., 1]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

/// Total scalar count, biases included.
pub fn param_count(arch: &Architecture) -> usize {
    arch.layer_sizes().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

/// Affine input map `u' = (u - offset) * scale` applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Maps `S x [T, 0]` onto `[-1, 1]^(n+1)`.
    pub fn for_system(system: &SystemSpec) -> Self {
        let mut offset: Vec<f64> = system.domain.iter().map(|ax| ax.mid()).collect();
        let mut scale: Vec<f64> = system.domain.iter().map(|ax| 2.0 / ax.width()).collect();
        offset.push(0.5 * system.horizon);
        scale.push(if system.horizon < 0.0 { -2.0 / system.horizon } else { 1.0 });
        Self { offset, scale }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    rows: usize,
    cols: usize,
    w_off: usize,
    b_off: usize,
}

fn shapes(arch: &Architecture) -> Vec<LayerShape> {
    let mut off = 0;
    arch.layer_sizes()
        .windows(2)
        .map(|w| {
            let s = LayerShape { rows: w[1], cols: w[0], w_off: off, b_off: off + w[0] * w[1] };
            off += w[1] * (w[0] + 1);
            s
        })
        .collect()
}

/// Per-layer activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
    output: f64,
}

impl ForwardCache {
    pub fn output(&self) -> f64 {
        self.output
    }
}

/// Scratch space for the tangent (directional-derivative) pass.
#[derive(Debug, Clone)]
pub struct TangentCache {
    z: Vec<Vec<f64>>,
    dz: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    dh: Vec<Vec<f64>>,
    input: Vec<f64>,
    dir: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<f64>,
    scaling: Option<InputScaling>,
    layers: Vec<LayerShape>,
}

impl Network {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        Self { layers: shapes(&arch), arch, params: vec![0.0; n], scaling: None }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(invalid(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { layers: shapes(&arch), arch, params, scaling: None })
    }

    /// Every parameter i.i.d. `N(0, std^2)`.
    pub fn init(arch: Architecture, seed: u64, std: f64) -> Result<Self> {
        Self::init_with_rng(arch, &mut ChaCha8Rng::seed_from_u64(seed), std)
    }

    pub fn init_with_rng<R: Rng + ?Sized>(arch: Architecture, rng: &mut R, std: f64) -> Result<Self> {
        arch.validate()?;
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::Config(format!("invalid init standard deviation {std}: {e}")))?;
        let params = (0..arch.param_count()).map(|_| normal.sample(rng)).collect();
        Ok(Self { layers: shapes(&arch), arch, params, scaling: None })
    }

    pub fn with_scaling(mut self, scaling: Option<InputScaling>) -> Result<Self> {
        if let Some(s) = &scaling {
            if s.offset.len() != self.arch.input_dim || s.scale.len() != self.arch.input_dim {
                return Err(invalid("input scaling length does not match the input dimension"));
            }
        }
        self.scaling = scaling;
        Ok(self)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn scaling(&self) -> Option<&InputScaling> {
        self.scaling.as_ref()
    }

    /// Short SHA-256 digest of the parameter bits.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update(p.to_le_bytes());
        }
        hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn new_cache(&self) -> ForwardCache {
        let hidden = &self.arch.hidden;
        let widest = hidden.iter().copied().max().unwrap_or(1).max(self.arch.input_dim);
        ForwardCache {
            input: vec![0.0; self.arch.input_dim],
            pre: hidden.iter().map(|&m| vec![0.0; m]).collect(),
            post: hidden.iter().map(|&m| vec![0.0; m]).collect(),
            delta: Vec::with_capacity(widest),
            delta_next: Vec::with_capacity(widest),
            output: 0.0,
        }
    }

    pub fn new_tangent_cache(&self) -> TangentCache {
        let mk = || self.arch.hidden.iter().map(|&m| vec![0.0; m]).collect::<Vec<_>>();
        TangentCache {
            z: mk(),
            dz: mk(),
            h: mk(),
            dh: mk(),
            input: vec![0.0; self.arch.input_dim],
            dir: vec![0.0; self.arch.input_dim],
        }
    }

    fn check_input(&self, x: &[f64], t: f64) -> Result<()> {
        if x.len() + 1 != self.arch.input_dim {
            return Err(invalid(format!(
                "state has length {}, network expects {}",
                x.len(),
                self.arch.input_dim - 1
            )));
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite network input"));
        }
        Ok(())
    }

    fn load_input(&self, x: &[f64], t: f64, dst: &mut [f64]) {
        let n = x.len();
        dst[..n].copy_from_slice(x);
        dst[n] = t;
        if let Some(s) = &self.scaling {
            for ((u, o), k) in dst.iter_mut().zip(&s.offset).zip(&s.scale) {
                *u = (*u - o) * k;
            }
        }
    }

    /// Checked forward pass returning `N(x, t)` and the activation cache.
    pub fn forward(&self, x: &[f64], t: f64) -> Result<(f64, ForwardCache)> {
        self.check_input(x, t)?;
        let mut cache = self.new_cache();
        let out = self.forward_cached(x, t, &mut cache);
        Ok((out, cache))
    }

    /// Unchecked forward pass into a reusable cache.
    pub fn forward_cached(&self, x: &[f64], t: f64, cache: &mut ForwardCache) -> f64 {
        self.load_input(x, t, &mut cache.input);
        let act = self.arch.activation;
        let p = &self.params;
        let last = self.layers.len() - 1;
        for (j, s) in self.layers.iter().enumerate() {
            let (done, rest) = cache.post.split_at_mut(j);
            let prev: &[f64] = if j == 0 { &cache.input } else { &done[j - 1] };
            if j == last {
                let w = &p[s.w_off..s.w_off + s.cols];
                cache.output = p[s.b_off] + w.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
            } else {
                let z = &mut cache.pre[j];
                let h = &mut rest[0];
                for r in 0..s.rows {
                    let w = &p[s.w_off + r * s.cols..s.w_off + (r + 1) * s.cols];
                    let zr = p[s.b_off + r] + w.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                    z[r] = zr;
                    h[r] = act.apply(zr);
                }
            }
        }
        cache.output
    }

    /// `N(x, t)` without checks.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        self.forward_cached(x, t, &mut self.new_cache())
    }

    /// Reverse pass after [`Network::forward_cached`]. Accumulates
    /// `upstream * dN/dtheta` into `param_grad` and writes `dN/d(x, t)` into
    /// `input_grad` (raw, unscaled inputs).
    pub fn backward(
        &self,
        cache: &mut ForwardCache,
        upstream: f64,
        mut param_grad: Option<&mut [f64]>,
        input_grad: Option<&mut [f64]>,
    ) {
        let layers = &self.layers;
        let act = self.arch.activation;
        let p = &self.params;
        let mut delta = std::mem::take(&mut cache.delta);
        let mut next = std::mem::take(&mut cache.delta_next);
        delta.clear();
        delta.push(upstream);
        for j in (0..layers.len()).rev() {
            let s = layers[j];
            let prev: &[f64] = if j == 0 { &cache.input } else { &cache.post[j - 1] };
            if let Some(g) = param_grad.as_deref_mut() {
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut g[s.w_off + r * s.cols..s.w_off + (r + 1) * s.cols];
                    for (gw, &h) in row.iter_mut().zip(prev) {
                        *gw += d * h;
                    }
                    g[s.b_off + r] += d;
                }
            }
            if j == 0 && input_grad.is_none() {
                break;
            }
            next.clear();
            next.resize(s.cols, 0.0);
            for (r, &d) in delta.iter().enumerate() {
                let row = &p[s.w_off + r * s.cols..s.w_off + (r + 1) * s.cols];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            if j > 0 {
                for ((n, &z), &h) in next.iter_mut().zip(&cache.pre[j - 1]).zip(&cache.post[j - 1]) {
                    *n *= act.derivative(z, h);
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        if let Some(ig) = input_grad {
            ig.copy_from_slice(&delta[..ig.len()]);
            if let Some(sc) = &self.scaling {
                for (g, k) in ig.iter_mut().zip(&sc.scale) {
                    *g *= k;
                }
            }
        }
        cache.delta = delta;
        cache.delta_next = next;
    }

    /// Directional derivative along `dir` in raw `(x, t)` coordinates.
    /// Returns `(N, D_dir N)` and accumulates
    /// `d/dtheta [w_value * N + w_dir * D_dir N]` into `param_grad`.
    pub fn directional_backward(
        &self,
        x: &[f64],
        t: f64,
        dir: &[f64],
        w_value: f64,
        w_dir: f64,
        param_grad: &mut [f64],
        tc: &mut TangentCache,
    ) -> (f64, f64) {
        self.load_input(x, t, &mut tc.input);
        tc.dir.copy_from_slice(dir);
        if let Some(sc) = &self.scaling {
            for (d, k) in tc.dir.iter_mut().zip(&sc.scale) {
                *d *= k;
            }
        }
        let layers = &self.layers;
        let act = self.arch.activation;
        let p = &self.params;
        let last = layers.len() - 1;

        for (j, s) in layers[..last].iter().enumerate() {
            let (h_done, h_rest) = tc.h.split_at_mut(j);
            let (dh_done, dh_rest) = tc.dh.split_at_mut(j);
            let (h_prev, dh_prev): (&[f64], &[f64]) =
                if j == 0 { (&tc.input, &tc.dir) } else { (&h_done[j - 1], &dh_done[j - 1]) };
            for r in 0..s.rows {
                let w = &p[s.w_off + r * s.cols..s.w_off + (r + 1) * s.cols];
                let z = p[s.b_off + r] + w.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
                let dz = w.iter().zip(dh_prev).map(|(a, b)| a * b).sum::<f64>();
                let h = act.apply(z);
                tc.z[j][r] = z;
                tc.dz[j][r] = dz;
                h_rest[0][r] = h;
                dh_rest[0][r] = act.derivative(z, h) * dz;
            }
        }
        let s = layers[last];
        let w = &p[s.w_off..s.w_off + s.cols];
        let (h_prev, dh_prev): (&[f64], &[f64]) =
            if last == 0 { (&tc.input, &tc.dir) } else { (&tc.h[last - 1], &tc.dh[last - 1]) };
        let out = p[s.b_off] + w.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
        let dout = w.iter().zip(dh_prev).map(|(a, b)| a * b).sum::<f64>();

        // adjoints of (h, dh) flowing backwards
        let mut hbar = vec![w_value];
        let mut dhbar = vec![w_dir];
        for j in (0..=last).rev() {
            let s = layers[j];
            let (h_prev, dh_prev): (&[f64], &[f64]) =
                if j == 0 { (&tc.input, &tc.dir) } else { (&tc.h[j - 1], &tc.dh[j - 1]) };
            // adjoints of (z, dz) for this layer
            let (zbar, dzbar): (Vec<f64>, Vec<f64>) = if j == last {
                (hbar.clone(), dhbar.clone())
            } else {
                (0..s.rows)
                    .map(|r| {
                        let (z, h) = (tc.z[j][r], tc.h[j][r]);
                        let d1 = act.derivative(z, h);
                        let d2 = act.second_derivative(z, h);
                        (hbar[r] * d1 + dhbar[r] * tc.dz[j][r] * d2, dhbar[r] * d1)
                    })
                    .unzip()
            };
            for r in 0..s.rows {
                let row = &mut param_grad[s.w_off + r * s.cols..s.w_off + (r + 1) * s.cols];
                for ((g, &h), &dh) in row.iter_mut().zip(h_prev).zip(dh_prev) {
                    *g += zbar[r] * h + dzbar[r] * dh;
                }
                param_grad[s.b_off + r] += zbar[r];
            }
            if j > 0 {
                let mut nh = vec![0.0; s.cols];
                let mut ndh = vec![0.0; s.cols];
                for r in 0..s.rows {
                    let row = &p[s.w_off + r * s.cols..s.w_off + (r + 1) * s.cols];
                    for c in 0..s.cols {
                        nh[c] += row[c] * zbar[r];
                        ndh[c] += row[c] * dzbar[r];
                    }
                }
                hbar = nh;
                dhbar = ndh;
            }
        }
        (out, dout)
    }

    /// `V(x, t) = l(x) + t N(x, t)`, checked.
    pub fn value(&self, system: &SystemSpec, x: &[f64], t: f64) -> Result<f64> {
        self.check_input(x, t)?;
        Ok(self.value_unchecked(system, x, t))
    }

    pub fn value_unchecked(&self, system: &SystemSpec, x: &[f64], t: f64) -> f64 {
        system.boundary(x) + t * self.eval(x, t)
    }

    pub fn value_cached(&self, system: &SystemSpec, x: &[f64], t: f64, cache: &mut ForwardCache) -> f64 {
        system.boundary(x) + t * self.forward_cached(x, t, cache)
    }

    /// `(grad_x V, dV/dt)`, checked.
    pub fn grad_input(&self, system: &SystemSpec, x: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        self.check_input(x, t)?;
        let mut cache = self.new_cache();
        let mut gx = vec![0.0; x.len()];
        let (_, dt) = self.value_grad_cached(system, x, t, &mut cache, &mut gx);
        Ok((gx, dt))
    }

    /// Writes `grad_x V` into `grad_x`; returns `(V, dV/dt)`.
    pub fn value_grad_cached(
        &self,
        system: &SystemSpec,
        x: &[f64],
        t: f64,
        cache: &mut ForwardCache,
        grad_x: &mut [f64],
    ) -> (f64, f64) {
        let n = self.forward_cached(x, t, cache);
        let mut gin = vec![0.0; x.len() + 1];
        self.backward(cache, 1.0, None, Some(&mut gin));
        system.boundary_gradient_into(x, grad_x);
        for (g, dn) in grad_x.iter_mut().zip(&gin) {
            *g += t * dn;
        }
        let v = system.boundary(x) + t * n;
        (v, n + t * gin[x.len()])
    }
}

/// Regression pair `((x, t), y)`; `t` is the time at which `V` is queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionPair {
    pub x: StateVector,
    pub t: f64,
    pub y: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Accumulates the gradient of the mean absolute error
/// `(1/K) sum |y - V(x, t)|` into `grad` (which is overwritten) and returns
/// the loss. `sign(0)` is taken as 0.
pub fn l1_loss_grad<'a, I>(
    net: &Network,
    system: &SystemSpec,
    batch: I,
    grad: &mut [f64],
    cache: &mut ForwardCache,
) -> f64
where
    I: IntoIterator<Item = &'a RegressionPair>,
{
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    let mut k = 0usize;
    for pair in batch {
        let v = net.value_cached(system, &pair.x, pair.t, cache);
        let r = pair.y - v;
        loss += r.abs();
        k += 1;
        let s = sign(r);
        if s != 0.0 {
            // dV/dtheta = t dN/dtheta; d|y - V|/dV = -sign(y - V)
            net.backward(cache, -s * pair.t, Some(grad), None);
        }
    }
    if k > 0 {
        let inv = 1.0 / k as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss *= inv;
    }
    loss
}

/// Subgradient of the L1 regression loss over `batch`.
pub fn grad_params(net: &Network, system: &SystemSpec, batch: &[RegressionPair]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    for pair in batch {
        net.check_input(&pair.x, pair.t)?;
    }
    let mut grad = vec![0.0; net.params.len()];
    l1_loss_grad(net, system, batch, &mut grad, &mut net.new_cache());
    Ok(grad)
}

pub const MODEL_MAGIC: &[u8; 8] = b"HJIMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    version: u32,
    system: SystemDescriptor,
    arch: Architecture,
    dt: f64,
    param_count: usize,
    #[serde(default)]
    input_scaling: Option<InputScaling>,
}

/// A network together with the system and step it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub system: SystemDescriptor,
    pub dt: f64,
    pub network: Network,
}

fn eof_as_format(e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::Format("truncated model stream".into())
    } else {
        Error::Io(e)
    }
}

impl ModelFile {
    /// Layout: 8-byte magic `HJIMODEL`, `u32` LE version, `u32` LE header
    /// length, UTF-8 JSON header, then `param_count` little-endian `f64`s.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = ModelHeader {
            version: MODEL_VERSION,
            system: self.system.clone(),
            arch: self.network.arch.clone(),
            dt: self.dt,
            param_count: self.network.params.len(),
            input_scaling: self.network.scaling.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for p in &self.network.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(eof_as_format)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(eof_as_format)?;
        let version = u32::from_le_bytes(word);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        r.read_exact(&mut word).map_err(eof_as_format)?;
        let len = u32::from_le_bytes(word) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(eof_as_format)?;
        let header: ModelHeader = serde_json::from_slice(&json)
            .map_err(|e| Error::Format(format!("bad model header: {e}")))?;
        if header.version != version {
            return Err(Error::Format("header version disagrees with preamble".into()));
        }
        header
            .arch
            .validate()
            .map_err(|e| Error::Format(format!("bad architecture in header: {e}")))?;
        if header.param_count != header.arch.param_count() {
            return Err(Error::Format(format!(
                "header declares {} parameters but the architecture has {}",
                header.param_count,
                header.arch.param_count()
            )));
        }
        let mut params = Vec::with_capacity(header.param_count);
        let mut buf = [0u8; 8];
        for _ in 0..header.param_count {
            r.read_exact(&mut buf).map_err(eof_as_format)?;
            params.push(f64::from_le_bytes(buf));
        }
        let network = Network::from_params(header.arch, params)
            .and_then(|n| n.with_scaling(header.input_scaling))
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { system: header.system, dt: header.dt, network })
    }

    /// Reads a model and rejects it unless its architecture equals `expected`.
    pub fn read_expecting<R: Read>(r: &mut R, expected: &Architecture) -> Result<Self> {
        let m = Self::read_from(r)?;
        if m.network.arch() != expected {
            return Err(Error::Format(format!(
                "model architecture {:?} does not match expected {:?}",
                m.network.arch(),
                expected
            )));
        }
        Ok(m)
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
