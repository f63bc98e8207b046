//! Recursive regression and the squared-residual baseline.
//!
//! Every `interval` iterations `N` points are drawn from `S x [T + dt, 0]`
//! and each is turned into a regression target by a one-step minimax
//! rollout of the current approximation:
//!
//! ```text
//! y_j = min(V(x_j, t_j), V(x~_j, t_j)),   x~_j = step(x_j, a*, b*, dt)
//! ```
//!
//! regressed at `(x_j, t_j - dt)`. Each iteration fits a batch of `K`
//! targets drawn with replacement using momentum SGD on the mean absolute
//! error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridsolver::GridField;
use crate::metrics::{Evaluator, MetricsConfig};
use crate::minimax::{dot, hamiltonian_and_inputs, optimal_inputs, Integrator};
use crate::network::{l1_loss_grad, Architecture, InputScaling, ModelFile, Network, RegressionPair};
use crate::systems::{Sample, SystemSpec};

pub const INIT_STREAM: u64 = 0;
pub const SAMPLE_STREAM: u64 = 1;
pub const BATCH_STREAM: u64 = 2;

const DIVERGENCE_LOSS: f64 = 1e6;
const SEED_STEP: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Recursive,
    ResidualBaseline,
}

fn d_dt() -> f64 {
    0.05
}
fn d_std() -> f64 {
    0.1
}
fn d_cadence() -> u64 {
    1000
}
fn d_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Samples per renewal.
    pub n_samples: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub learning_rate: f64,
    /// Iterations between renewals.
    pub interval: u64,
    pub stop: u64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_one")]
    pub threads: usize,
    #[serde(default = "d_cadence")]
    pub metric_cadence: u64,
    #[serde(default = "d_std")]
    pub init_std: f64,
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub input_scaling: bool,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

impl TrainConfig {
    pub fn validate(&self, system: &SystemSpec) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_samples == 0 {
            return fail("n_samples must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > self.n_samples {
            return fail(format!(
                "batch_size {} must be in [1, n_samples = {}]",
                self.batch_size, self.n_samples
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.interval == 0 {
            return fail("interval must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt < -system.horizon) {
            return fail(format!("dt {} outside (0, {})", self.dt, -system.horizon));
        }
        if self.threads == 0 {
            return fail("threads must be at least 1".into());
        }
        if self.metric_cadence == 0 {
            return fail("metric_cadence must be at least 1".into());
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std {} must be non-negative", self.init_std));
        }
        if self.checkpoint_every == Some(0) {
            return fail("checkpoint_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Seed of run `index`; run 0 uses the master seed itself.
pub fn derive_thread_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add((index as u64).wrapping_mul(SEED_STEP))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial network of a run.
pub fn init_network(system: &SystemSpec, arch: &Architecture, cfg: &TrainConfig, seed: u64) -> Result<Network> {
    let net = Network::init_with_rng(arch.clone(), &mut stream_rng(seed, INIT_STREAM), cfg.init_std)?;
    net.with_scaling(cfg.input_scaling.then(|| InputScaling::for_system(system)))
}

/// Regression targets together with the values they were compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    /// `((x_j, t_j - dt), y_j)`.
    pub pairs: Vec<RegressionPair>,
    /// Sample times `t_j`.
    pub sample_times: Vec<f64>,
    /// `V(x_j, t_j)` at generation time.
    pub current_values: Vec<f64>,
}

pub fn generate_targets(
    net: &Network,
    system: &SystemSpec,
    samples: &[Sample],
    dt: f64,
    integrator: Integrator,
) -> TargetSet {
    let mut cache = net.new_cache();
    let mut gx = vec![0.0; system.state_dim()];
    let mut out = TargetSet {
        pairs: Vec::with_capacity(samples.len()),
        sample_times: Vec::with_capacity(samples.len()),
        current_values: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let (v, _) = net.value_grad_cached(system, &s.x, s.t, &mut cache, &mut gx);
        let inputs = optimal_inputs(system, &gx, &s.x);
        let next = integrator.step(system, &s.x, &inputs, dt);
        let v_next = net.value_cached(system, &next, s.t, &mut cache);
        out.pairs.push(RegressionPair { x: s.x.clone(), t: s.t - dt, y: v.min(v_next) });
        out.sample_times.push(s.t);
        out.current_values.push(v);
    }
    out
}

/// `v <- gamma v + eta g`, `theta <- theta - v`.
pub fn sgd_momentum_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], momentum: f64, learning_rate: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + learning_rate * g;
        *p -= *v;
    }
}

/// Squared-residual loss `(1/K) sum r^2` with
/// `r = dV/dt + min(0, H(x, grad_x V))`; its gradient is written to `grad`.
pub fn residual_loss_grad<'a, I>(net: &Network, system: &SystemSpec, batch: I, grad: &mut [f64]) -> f64
where
    I: IntoIterator<Item = &'a Sample>,
{
    let batch: Vec<&Sample> = batch.into_iter().collect();
    grad.iter_mut().for_each(|g| *g = 0.0);
    if batch.is_empty() {
        return 0.0;
    }
    let k = batch.len() as f64;
    let n = system.state_dim();
    let mut cache = net.new_cache();
    let mut tc = net.new_tangent_cache();
    let mut gx = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut dir = vec![0.0; n + 1];
    let mut scratch = vec![0.0; grad.len()];
    let mut loss = 0.0;
    for s in batch {
        let (_, dvdt) = net.value_grad_cached(system, &s.x, s.t, &mut cache, &mut gx);
        let (h, inputs) = hamiltonian_and_inputs(system, &gx, &s.x);
        let r = dvdt + h.min(0.0);
        loss += r * r;
        // dr/dtheta = d/dtheta [N + D_c N], c = (t [H < 0] f(x, a*, b*), t)
        if h < 0.0 {
            system.dynamics_into(&s.x, &inputs.a, &inputs.b, &mut f);
            debug_assert!((dot(&gx, &f) - h).abs() <= 1e-9 * (1.0 + h.abs()));
            for (d, fi) in dir.iter_mut().zip(&f) {
                *d = s.t * fi;
            }
        } else {
            dir[..n].iter_mut().for_each(|d| *d = 0.0);
        }
        dir[n] = s.t;
        let w = 2.0 * r / k;
        scratch.iter_mut().for_each(|g| *g = 0.0);
        net.directional_backward(&s.x, s.t, &dir, w, w, &mut scratch, &mut tc);
        for (g, d) in grad.iter_mut().zip(&scratch) {
            *g += d;
        }
    }
    loss / k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Number of parameter updates applied so far.
    pub iter: u64,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub wall_ms: u64,
    pub param_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub thread: usize,
    pub seed: u64,
    pub mode: Mode,
    pub records: Vec<LogRecord>,
    pub self_consistency_init: Option<f64>,
    pub self_consistency_final: Option<f64>,
}

impl RunLog {
    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    /// `iter,e1,e2,wall_ms`; missing metrics are written as `NaN`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iter,e1,e2,wall_ms")?;
        let f = |v: Option<f64>| v.map_or("NaN".to_string(), |x| format!("{x:e}"));
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.iter, f(r.e1), f(r.e2), r.wall_ms)?;
        }
        Ok(())
    }

    pub fn e1_curve(&self) -> Vec<(u64, f64)> {
        self.records.iter().filter_map(|r| r.e1.map(|e| (r.iter, e))).collect()
    }
}

/// Called at every renewal with the iteration and the fresh targets.
pub type RenewalObserver<'a> = &'a (dyn Fn(u64, &Network, &TargetSet) + Sync);

/// Per-run hooks beyond the core loop.
#[derive(Default)]
pub struct RunOptions<'a> {
    pub evaluator: Option<&'a Evaluator>,
    /// Written every `checkpoint_every` iterations when set.
    pub checkpoint: Option<PathBuf>,
    pub thread: usize,
    pub observer: Option<RenewalObserver<'a>>,
}

fn record(
    log: &mut RunLog,
    iter: u64,
    net: &Network,
    system: &SystemSpec,
    evaluator: Option<&Evaluator>,
    start: &Instant,
) {
    let scores = evaluator.map(|e| e.scores(net, system));
    log.records.push(LogRecord {
        iter,
        e1: scores.and_then(|s| s.e1),
        e2: scores.map(|s| s.e2),
        wall_ms: start.elapsed().as_millis() as u64,
        param_hash: net.param_hash(),
    });
}

fn save_checkpoint(path: &Path, system: &SystemSpec, dt: f64, net: &Network) -> Result<()> {
    ModelFile { system: system.descriptor()?, dt, network: net.clone() }.save(path)
}

fn diverged(iter: u64, loss: f64, net: &Network) -> Option<Error> {
    if !(loss <= DIVERGENCE_LOSS) {
        return Some(Error::Diverged { iter, reason: format!("loss {loss} exceeds {DIVERGENCE_LOSS}") });
    }
    if let Some(i) = net.params().iter().position(|p| !p.is_finite()) {
        return Some(Error::Diverged { iter, reason: format!("parameter {i} is not finite") });
    }
    None
}

/// Runs one training job with the given seed.
pub fn train_run(
    system: &SystemSpec,
    arch: &Architecture,
    cfg: &TrainConfig,
    mode: Mode,
    seed: u64,
    opts: &RunOptions<'_>,
) -> Result<(Network, RunLog)> {
    cfg.validate(system)?;
    if arch.input_dim != system.state_dim() + 1 {
        return Err(Error::Config(format!(
            "architecture input dimension {} does not match system dimension {} + 1",
            arch.input_dim,
            system.state_dim()
        )));
    }
    let start = Instant::now();
    let mut net = init_network(system, arch, cfg, seed)?;
    let mut sample_rng = stream_rng(seed, SAMPLE_STREAM);
    let mut batch_rng = stream_rng(seed, BATCH_STREAM);
    let mut log = RunLog {
        thread: opts.thread,
        seed,
        mode,
        records: Vec::new(),
        self_consistency_init: opts.evaluator.and_then(|e| e.self_consistency(&net, system)),
        self_consistency_final: None,
    };

    let p = net.params().len();
    let mut velocity = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut cache = net.new_cache();
    let mut targets: Vec<RegressionPair> = Vec::new();
    let mut points: Vec<Sample> = Vec::new();
    let mut idx = vec![0usize; cfg.batch_size];

    for iter in 0..cfg.stop {
        if iter % cfg.metric_cadence == 0 {
            record(&mut log, iter, &net, system, opts.evaluator, &start);
        }
        if iter % cfg.interval == 0 {
            match mode {
                Mode::Recursive => {
                    let samples = system.sample_domain(&mut sample_rng, cfg.n_samples, cfg.dt);
                    let set = generate_targets(&net, system, &samples, cfg.dt, cfg.integrator);
                    if let Some(obs) = opts.observer {
                        obs(iter, &net, &set);
                    }
                    targets = set.pairs;
                }
                Mode::ResidualBaseline => {
                    points = system.sample_domain(&mut sample_rng, cfg.n_samples, 0.0);
                }
            }
        }
        let pool = match mode {
            Mode::Recursive => targets.len(),
            Mode::ResidualBaseline => points.len(),
        };
        for i in idx.iter_mut() {
            *i = batch_rng.random_range(0..pool);
        }
        let loss = match mode {
            Mode::Recursive => {
                l1_loss_grad(&net, system, idx.iter().map(|&i| &targets[i]), &mut grad, &mut cache)
            }
            Mode::ResidualBaseline => {
                residual_loss_grad(&net, system, idx.iter().map(|&i| &points[i]), &mut grad)
            }
        };
        if let Some(e) = diverged(iter, loss, &net) {
            return Err(e);
        }
        sgd_momentum_step(net.params_mut(), &mut velocity, &grad, cfg.momentum, cfg.learning_rate);
        if let Some(e) = diverged(iter, 0.0, &net) {
            return Err(e);
        }
        if let (Some(every), Some(path)) = (cfg.checkpoint_every, &opts.checkpoint) {
            if (iter + 1) % every == 0 {
                save_checkpoint(path, system, cfg.dt, &net)?;
            }
        }
    }
    if log.last().map(|r| r.iter) != Some(cfg.stop) {
        record(&mut log, cfg.stop, &net, system, opts.evaluator, &start);
    }
    log.self_consistency_final = opts.evaluator.and_then(|e| e.self_consistency(&net, system));
    Ok((net, log))
}

/// Recursive regression with `cfg.seed`.
pub fn train(
    system: &SystemSpec,
    arch: &Architecture,
    cfg: &TrainConfig,
    evaluator: Option<&Evaluator>,
) -> Result<(Network, RunLog)> {
    let opts = RunOptions { evaluator, ..Default::default() };
    train_run(system, arch, cfg, Mode::Recursive, cfg.seed, &opts)
}

/// Same loop minimizing the squared PDE residual.
pub fn train_residual_baseline(
    system: &SystemSpec,
    arch: &Architecture,
    cfg: &TrainConfig,
    evaluator: Option<&Evaluator>,
) -> Result<(Network, RunLog)> {
    let opts = RunOptions { evaluator, ..Default::default() };
    train_run(system, arch, cfg, Mode::ResidualBaseline, cfg.seed, &opts)
}

/// Evaluation setup shared by all runs of [`run_parallel`]; each run draws
/// its own point sets from its own seed.
#[derive(Clone, Copy)]
pub struct EvalSetup<'a> {
    pub metrics: &'a MetricsConfig,
    pub field: Option<&'a GridField>,
}

#[derive(Debug)]
pub struct ThreadResult {
    pub thread: usize,
    pub seed: u64,
    pub outcome: Result<(Network, RunLog)>,
    pub evaluator: Option<Evaluator>,
}

/// `cfg.threads` independent runs executed concurrently, ordered by index.
/// A failing run does not stop its siblings.
pub fn run_parallel(
    system: &SystemSpec,
    arch: &Architecture,
    cfg: &TrainConfig,
    mode: Mode,
    eval: Option<EvalSetup<'_>>,
    checkpoint_root: Option<&Path>,
) -> Result<Vec<ThreadResult>> {
    cfg.validate(system)?;
    let job = |i: usize| {
        let seed = derive_thread_seed(cfg.seed, i);
        let evaluator = match eval {
            Some(e) => match Evaluator::build(system, e.metrics, e.field, seed, cfg.dt, cfg.integrator) {
                Ok(ev) => Some(ev),
                Err(err) => return ThreadResult { thread: i, seed, outcome: Err(err), evaluator: None },
            },
            None => None,
        };
        let opts = RunOptions {
            evaluator: evaluator.as_ref(),
            checkpoint: checkpoint_root.map(|r| r.join(format!("thread_{i}")).join("checkpoint.bin")),
            thread: i,
            observer: None,
        };
        let outcome = train_run(system, arch, cfg, mode, seed, &opts);
        ThreadResult { thread: i, seed, outcome, evaluator }
    };
    if cfg.threads == 1 {
        return Ok(vec![job(0)]);
    }
    let results = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.threads).map(|i| s.spawn(move || job(i))).collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(i, h)| {
                h.join().unwrap_or_else(|_| ThreadResult {
                    thread: i,
                    seed: derive_thread_seed(cfg.seed, i),
                    outcome: Err(Error::InvalidArgument(format!("run {i} panicked"))),
                    evaluator: None,
                })
            })
            .collect()
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;

    fn small_cfg(stop: u64) -> TrainConfig {
        TrainConfig {
            n_samples: 100,
            batch_size: 10,
            momentum: 0.9,
            learning_rate: 0.01,
            interval: 50,
            stop,
            dt: 0.05,
            seed: 7,
            threads: 1,
            metric_cadence: 20,
            init_std: 0.1,
            integrator: Integrator::Rk4,
            input_scaling: false,
            checkpoint_every: None,
        }
    }

    fn arch2d() -> Architecture {
        Architecture::for_system(&SystemSpec::pe2d(), vec![10], Activation::Sigmoid).unwrap()
    }

    #[test]
    fn momentum_reductions() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        sgd_momentum_step(&mut p, &mut v, &[0.5, 1.0], 0.0, 0.1);
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.1]);

        let mut p = vec![0.0];
        let mut v = vec![0.3];
        sgd_momentum_step(&mut p, &mut v, &[0.0], 0.5, 0.1);
        assert_eq!(p, vec![-0.15]);

        let (g, eta, gamma) = (0.7, 0.2, 0.9);
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        sgd_momentum_step(&mut p, &mut v, &[g], gamma, eta);
        sgd_momentum_step(&mut p, &mut v, &[g], gamma, eta);
        assert!((p[0] - (1.0 - eta * g * (2.0 + gamma))).abs() < 1e-15);
    }

    #[test]
    fn zero_network_targets_are_boundary_minimum() {
        let s = SystemSpec::pe2d();
        let net = Network::zeros(arch2d());
        let samples = vec![Sample { x: vec![1.5, 0.0].into(), t: -0.5 }];
        let r = generate_targets(&net, &s, &samples, 0.1, Integrator::Rk4);
        // grad l = (1, 0): a* = -2, b* = pi, x~ = 1.5 + (-2 - (-2)) 0.1
        let inputs = optimal_inputs(&s, &[1.0, 0.0], &[1.5, 0.0]);
        let next = Integrator::Rk4.step(&s, &[1.5, 0.0], &inputs, 0.1);
        assert_eq!(r.pairs[0].y, 0.5f64.min(s.boundary(&next)));
        assert_eq!(r.pairs[0].t, -0.6);
    }

    #[test]
    fn targets_dominated_by_current_values() {
        let s = SystemSpec::pe3d();
        let arch = Architecture::for_system(&s, vec![10, 5], Activation::Sigmoid).unwrap();
        let net = Network::init(arch, 3, 0.5).unwrap();
        let samples = s.sample_domain(&mut stream_rng(1, 1), 500, 0.05);
        let r = generate_targets(&net, &s, &samples, 0.05, Integrator::Rk4);
        for (pair, v) in r.pairs.iter().zip(&r.current_values) {
            assert!(pair.y <= *v);
        }
    }

    #[test]
    fn stop_zero_returns_initialization() {
        let s = SystemSpec::pe2d();
        let cfg = small_cfg(0);
        let (net, log) = train(&s, &arch2d(), &cfg, None).unwrap();
        assert_eq!(net, init_network(&s, &arch2d(), &cfg, cfg.seed).unwrap());
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].iter, 0);
    }

    #[test]
    fn training_is_deterministic_and_logs_increase() {
        let s = SystemSpec::pe2d();
        let cfg = small_cfg(200);
        let (a, la) = train(&s, &arch2d(), &cfg, None).unwrap();
        let (b, lb) = train(&s, &arch2d(), &cfg, None).unwrap();
        assert_eq!(a.params(), b.params());
        let ha: Vec<_> = la.records.iter().map(|r| (r.iter, r.param_hash.clone())).collect();
        let hb: Vec<_> = lb.records.iter().map(|r| (r.iter, r.param_hash.clone())).collect();
        assert_eq!(ha, hb);
        assert!(la.records.windows(2).all(|w| w[0].iter < w[1].iter));
        assert_eq!(la.last().unwrap().iter, 200);
    }

    #[test]
    fn single_thread_parallel_equals_train() {
        let s = SystemSpec::pe2d();
        let cfg = small_cfg(100);
        let (a, _) = train(&s, &arch2d(), &cfg, None).unwrap();
        let r = run_parallel(&s, &arch2d(), &cfg, Mode::Recursive, None, None).unwrap();
        let (b, _) = r[0].outcome.as_ref().unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn parallel_runs_are_distinct_and_reproducible() {
        let s = SystemSpec::pe2d();
        let cfg = TrainConfig { threads: 3, ..small_cfg(50) };
        let r1 = run_parallel(&s, &arch2d(), &cfg, Mode::Recursive, None, None).unwrap();
        let r2 = run_parallel(&s, &arch2d(), &cfg, Mode::Recursive, None, None).unwrap();
        let p1: Vec<Vec<f64>> = r1.iter().map(|r| r.outcome.as_ref().unwrap().0.params().to_vec()).collect();
        let p2: Vec<Vec<f64>> = r2.iter().map(|r| r.outcome.as_ref().unwrap().0.params().to_vec()).collect();
        assert_eq!(p1, p2);
        assert_ne!(p1[0], p1[1]);
        assert_ne!(p1[1], p1[2]);
        assert_eq!(r1.iter().map(|r| r.thread).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn divergence_is_reported() {
        let s = SystemSpec::pe2d();
        let cfg = TrainConfig { learning_rate: 1e12, momentum: 0.0, ..small_cfg(100) };
        let err = train(&s, &arch2d(), &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        let s = SystemSpec::pe2d();
        let ok = small_cfg(10);
        assert!(ok.validate(&s).is_ok());
        for bad in [
            TrainConfig { batch_size: 200, ..ok.clone() },
            TrainConfig { interval: 0, ..ok.clone() },
            TrainConfig { dt: 1.0, ..ok.clone() },
            TrainConfig { momentum: 1.0, ..ok.clone() },
            TrainConfig { learning_rate: 0.0, ..ok.clone() },
            TrainConfig { threads: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(&s), Err(Error::Config(_))));
        }
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        let s = SystemSpec::pe2d();
        let net = Network::init(arch2d(), 5, 0.5).unwrap();
        let batch = s.sample_domain(&mut stream_rng(2, 1), 8, 0.0);
        let mut g = vec![0.0; net.params().len()];
        residual_loss_grad(&net, &s, &batch, &mut g);
        let loss = |p: &[f64]| {
            let n = Network::from_params(arch2d(), p.to_vec()).unwrap();
            let mut scratch = vec![0.0; p.len()];
            residual_loss_grad(&n, &s, &batch, &mut scratch)
        };
        let h = 1e-6;
        let mut p = net.params().to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn residual_vanishes_for_time_constant_exact_region() {
        // zero network: dV/dt = 0 and where H >= 0 the residual is zero
        let s = SystemSpec::pe2d();
        let net = Network::zeros(arch2d());
        let mut g = vec![0.0; net.params().len()];
        // on the x-axis grad l = (1, 0) and H = 2|p0| - 2|p| = 0
        let batch = vec![Sample { x: vec![2.0, 0.0].into(), t: -0.5 }];
        assert_eq!(residual_loss_grad(&net, &s, &batch, &mut g), 0.0);
    }
}
