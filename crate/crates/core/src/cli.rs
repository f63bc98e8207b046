//! Command-line front end: experiment configuration, orchestration and export.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridsolver::{march, sign_change_cells, solve_grid, GridField, GridSpec, DEFAULT_CFL};
use crate::metrics::{
    check_field_matches, e1, Evaluator, MetricsConfig, Provenance, ReferenceKind, ReferenceSet,
};
use crate::network::{Activation, Architecture, ModelFile, Network};
use crate::systems::{Axis, SystemSpec};
use crate::trainer::{init_network, run_parallel, EvalSetup, Mode, RunLog, TrainConfig};

pub const OUTPUT_ROOT_ENV: &str = "HJI_OUTPUT_ROOT";
pub const SUMMARY_VERSION: u32 = 1;

const PRESETS: [(&str, &str); 3] = [
    ("pe2d_paper", include_str!("../presets/pe2d_paper.json")),
    ("pe3d_paper", include_str!("../presets/pe3d_paper.json")),
    ("pe6d_paper", include_str!("../presets/pe6d_paper.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        Error::Config(format!("unknown preset `{name}` (available: {})", preset_names().join(", ")))
    })?;
    ExperimentConfig::from_json(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub counts: Vec<usize>,
    #[serde(default)]
    pub save_times: Vec<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub dtau: Option<f64>,
}

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_a: Option<Vec<Axis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_b: Option<Vec<Axis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<Axis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        let mut s = SystemSpec::builtin(&self.system)?;
        if let Some(v) = self.v_p {
            s.v_p = v;
        }
        if let Some(v) = self.v_e {
            s.v_e = v;
        }
        if let Some(v) = &self.input_a {
            s.input_a = v.clone();
        }
        if let Some(v) = &self.input_b {
            s.input_b = v.clone();
        }
        if let Some(v) = &self.domain {
            s.domain = v.clone();
        }
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn architecture(&self, system: &SystemSpec) -> Result<Architecture> {
        Architecture::for_system(system, self.arch.hidden.clone(), self.arch.activation)
    }

    /// The system gridded by the oracle: the system itself, or its relative
    /// 3D counterpart for `pe6d`.
    pub fn oracle_system(&self) -> Result<SystemSpec> {
        let s = self.system_spec()?;
        if self.metrics.reference == Some(ReferenceKind::ViaRelative) {
            return relative_system(&s);
        }
        Ok(s)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config("missing `grid` section for the oracle".into()))?;
        let sys = self.oracle_system()?;
        let mut spec = GridSpec::for_system(&sys, g.counts.clone(), g.save_times.clone());
        spec.cfl = g.cfl;
        spec.dtau = g.dtau;
        if self.metrics.reference == Some(ReferenceKind::GridSlice)
            && !spec.save_times.iter().any(|&t| (t - self.metrics.slice_time).abs() < 1e-12)
        {
            spec.save_times.push(self.metrics.slice_time);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.system_spec()?;
        self.architecture(&s)?;
        self.train.validate(&s)?;
        if self.metrics.reference.is_some() {
            self.grid_spec()?.validate(self.oracle_system()?.horizon)?;
        }
        Ok(())
    }
}

/// Evader-frame 3D system matching a `pe6d` system's speeds and inputs.
pub fn relative_system(s6: &SystemSpec) -> Result<SystemSpec> {
    let mut s = SystemSpec::pe3d();
    s.v_p = s6.v_p;
    s.v_e = s6.v_e;
    s.input_a = s6.input_a.clone();
    s.input_b = s6.input_b.clone();
    s.horizon = s6.horizon;
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Parser)]
#[command(name = "hji", version, about = "Neural approximation of minimum-payoff HJI values")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one or more independent runs.
    Train(TrainArgs),
    /// Solve the grid reference for a 2D or 3D system.
    Oracle(OracleArgs),
    /// Score a model or a finished run directory.
    Eval(EvalArgs),
    /// Export zero level sets as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigSource {
    /// Experiment configuration file (JSON).
    #[arg(long, short = 'c', conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled configuration: pe2d_paper, pe3d_paper or pe6d_paper.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ConfigSource {
    pub fn load(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p),
            (None, Some(name)) => preset(name),
            (None, None) => Err(Error::Config("pass --config FILE or --preset NAME".into())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    #[arg(long)]
    pub stop: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; relative paths resolve against $HJI_OUTPUT_ROOT.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    /// Reuse an existing oracle field instead of solving it.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Field file to write.
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    /// Explicit time step, checked against the CFL bound.
    #[arg(long)]
    pub dtau: Option<f64>,
    /// Node counts per axis, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Recompute the metrics of a finished training run.
    #[arg(long, conflicts_with_all = ["model", "reference", "reference_model"])]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Oracle field file.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Use another model's values as the reference.
    #[arg(long, conflicts_with = "reference")]
    pub reference_model: Option<PathBuf>,
    /// Evaluate a 6D model against a 3D field in relative coordinates.
    #[arg(long)]
    pub via_relative: bool,
    /// Compare against every node of the field at this time instead of
    /// uniform samples.
    #[arg(long, allow_hyphen_values = true)]
    pub slice_time: Option<f64>,
    #[arg(long)]
    pub self_consistency: bool,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    #[arg(long, default_value_t = 3000)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long, conflicts_with = "field", required_unless_present = "field")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Times at which to extract the zero level set (repeatable).
    #[arg(long = "levelset", required = true, allow_hyphen_values = true)]
    pub times: Vec<f64>,
    /// Nodes per axis when contouring a model.
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,
    #[arg(long, short = 'o')]
    pub output: PathBuf,
}

/// Parses arguments and runs; returns the text printed on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|r| r.report),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Eval(a) => cmd_eval(&a).map(|v| serde_json::to_string_pretty(&v).unwrap_or_default()),
        Command::Export(a) => cmd_export(&a),
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadSummary {
    pub thread: usize,
    pub seed: u64,
    pub eval_seed: u64,
    pub status: String,
    #[serde(default)]
    pub error: Option<String>,
    pub iterations: Option<u64>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub self_consistency_init: Option<f64>,
    pub self_consistency_final: Option<f64>,
    pub param_hash: Option<String>,
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: u32,
    pub config: ExperimentConfig,
    pub oracle: Option<String>,
    pub threads: Vec<ThreadSummary>,
}

impl ThreadSummary {
    fn from_log(log: &RunLog, net: &Network) -> Self {
        let last = log.last();
        Self {
            thread: log.thread,
            seed: log.seed,
            eval_seed: log.seed,
            status: "ok".into(),
            error: None,
            iterations: last.map(|r| r.iter),
            e1: last.and_then(|r| r.e1),
            e2: last.and_then(|r| r.e2),
            self_consistency_init: log.self_consistency_init,
            self_consistency_final: log.self_consistency_final,
            param_hash: Some(net.param_hash()),
            wall_ms: last.map(|r| r.wall_ms),
        }
    }
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub report: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_or_solve_oracle(cfg: &ExperimentConfig, given: Option<&Path>) -> Result<GridField> {
    let sys = cfg.oracle_system()?;
    let field = match given {
        Some(p) => GridField::load(p)?,
        None => solve_grid(&sys, &cfg.grid_spec()?)?,
    };
    check_field_matches(&sys, &field)?;
    Ok(field)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = args.source.load()?;
    if let Some(v) = args.stop {
        cfg.train.stop = v;
    }
    if let Some(v) = args.threads {
        cfg.train.threads = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = &args.output {
        cfg.output_dir = Some(v.clone());
    }
    cfg.validate()?;
    let system = cfg.system_spec()?;
    let arch = cfg.architecture(&system)?;
    let dir = resolve_output(cfg.output_dir.as_deref().unwrap_or(Path::new("out")));
    fs::create_dir_all(&dir)?;
    for i in 0..cfg.train.threads {
        fs::create_dir_all(dir.join(format!("thread_{i}")))?;
    }

    let field = match cfg.metrics.reference {
        Some(_) => {
            let f = load_or_solve_oracle(&cfg, args.oracle.as_deref())?;
            f.save(&dir.join("oracle.bin"))?;
            Some(f)
        }
        None => None,
    };
    let eval = EvalSetup { metrics: &cfg.metrics, field: field.as_ref() };
    let results = run_parallel(&system, &arch, &cfg.train, cfg.mode, Some(eval), Some(&dir))?;

    let descriptor = system.descriptor()?;
    let mut threads = Vec::new();
    let mut report = String::new();
    for r in &results {
        let tdir = dir.join(format!("thread_{}", r.thread));
        let entry = match &r.outcome {
            Ok((net, log)) => {
                ModelFile { system: descriptor.clone(), dt: cfg.train.dt, network: net.clone() }
                    .save(&tdir.join("model.bin"))?;
                let mut w = BufWriter::new(File::create(tdir.join("log.csv"))?);
                log.write_csv(&mut w)?;
                w.flush()?;
                let s = ThreadSummary::from_log(log, net);
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
                report.push_str(&format!(
                    "thread {}: iter {} e1 {} e2 {} self-consistency {} -> {}\n",
                    r.thread,
                    s.iterations.unwrap_or(0),
                    fmt(s.e1),
                    fmt(s.e2),
                    fmt(s.self_consistency_init),
                    fmt(s.self_consistency_final)
                ));
                s
            }
            Err(e) => {
                report.push_str(&format!("thread {}: failed: {e}\n", r.thread));
                ThreadSummary {
                    thread: r.thread,
                    seed: r.seed,
                    eval_seed: r.seed,
                    status: if matches!(e, Error::Diverged { .. }) { "diverged" } else { "error" }.into(),
                    error: Some(e.to_string()),
                    iterations: None,
                    e1: None,
                    e2: None,
                    self_consistency_init: None,
                    self_consistency_final: None,
                    param_hash: None,
                    wall_ms: None,
                }
            }
        };
        write_json(&tdir.join("summary.json"), &entry)?;
        threads.push(entry);
    }
    let summary = RunSummary {
        version: SUMMARY_VERSION,
        config: cfg,
        oracle: field.as_ref().map(|_| "oracle.bin".to_string()),
        threads,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let failed = results.iter().find_map(|r| r.outcome.as_ref().err().map(|e| (r.thread, e)));
    match failed {
        None => Ok(TrainOutcome { dir, summary, report }),
        Some((t, Error::Diverged { iter, reason })) => {
            Err(Error::Diverged { iter: *iter, reason: format!("thread {t}: {reason}") })
        }
        Some((t, e)) => Err(Error::Config(format!("thread {t}: {e}"))),
    }
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<String> {
    let cfg = args.source.load()?;
    let sys = cfg.oracle_system()?;
    if sys.state_dim() > crate::gridsolver::MAX_GRID_DIM {
        return Err(Error::Config(format!(
            "system `{}` has dimension {}; grid cost grows exponentially with dimension and is limited to {}",
            sys.name(),
            sys.state_dim(),
            crate::gridsolver::MAX_GRID_DIM
        )));
    }
    let mut spec = cfg.grid_spec()?;
    if let Some(d) = args.dtau {
        spec.dtau = Some(d);
    }
    if let Some(c) = &args.counts {
        spec.counts = c.clone();
    }
    let field = solve_grid(&sys, &spec)?;
    let out = resolve_output(&args.output);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    field.save(&out)?;
    let violations = field.monotonicity_violations(1e-12);
    let boundary_exact = {
        let mut ok = true;
        let coords: Vec<Vec<f64>> = (0..spec.dim()).map(|k| spec.coords(k)).collect();
        let strides = spec.strides();
        for (flat, v) in field.values[0].iter().enumerate() {
            let x: Vec<f64> = (0..spec.dim()).map(|k| coords[k][flat / strides[k] % spec.counts[k]]).collect();
            ok &= *v == sys.boundary(&x);
        }
        ok
    };
    Ok(format!(
        "wrote {} ({} nodes, {} slices, dtau {:.5})\nt=0 slice equals boundary: {}\nmonotonicity violations: {}\nminimum value: {:.5}\n",
        out.display(),
        spec.node_count(),
        field.times.len(),
        field.dtau,
        boundary_exact,
        violations,
        field.min_value()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalThread {
    pub thread: usize,
    pub e1: Option<f64>,
    pub e2: f64,
    pub self_consistency: Option<f64>,
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub e1: Option<f64>,
    pub e2: f64,
    pub self_consistency: Option<f64>,
    pub n_points: usize,
    pub provenance: Option<Provenance>,
    pub threads: Vec<EvalThread>,
}

fn load_model(path: &Path) -> Result<(SystemSpec, ModelFile)> {
    let m = ModelFile::load(path)?;
    let sys = SystemSpec::from_descriptor(&m.system)?;
    Ok((sys, m))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    if let Some(dir) = &args.run_dir {
        return eval_run_dir(dir);
    }
    let model = args
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("pass --model FILE or --run-dir DIR".into()))?;
    let (sys, m) = load_model(model)?;
    let field = args.reference.as_deref().map(GridField::load).transpose()?;

    let reference_kind = match (&field, args.via_relative, args.slice_time) {
        (None, _, _) => None,
        (Some(_), true, _) => Some(ReferenceKind::ViaRelative),
        (Some(_), false, Some(_)) => Some(ReferenceKind::GridSlice),
        (Some(_), false, None) => Some(ReferenceKind::Uniform),
    };
    if let Some(f) = &field {
        let expected = if args.via_relative { relative_system(&sys)? } else { sys.clone() };
        check_field_matches(&expected, f).map_err(|_| {
            Error::Config(format!(
                "reference field is for `{}`, model is for `{}`",
                f.system.name,
                sys.name()
            ))
        })?;
    }
    let metrics = MetricsConfig {
        reference: reference_kind,
        slice_time: args.slice_time.unwrap_or(-0.5),
        m: args.points,
        e2_points: args.points,
        self_consistency_points: if args.self_consistency { args.points } else { 0 },
        ..Default::default()
    };
    let mut ev = Evaluator::build(&sys, &metrics, field.as_ref(), args.eval_seed, m.dt, Default::default())?;
    let mut provenance = ev.reference.as_ref().map(|r| r.provenance());
    if let Some(path) = &args.reference_model {
        let (other_sys, other) = load_model(path)?;
        if other_sys.descriptor()? != sys.descriptor()? {
            return Err(Error::Config("reference model is for a different system".into()));
        }
        let r = ReferenceSet::from_network(&other.network, &sys, &ev.residual_points)?;
        provenance = Some(r.provenance());
        ev.reference = Some(r);
    }
    let scores = ev.scores(&m.network, &sys);
    let sc = if args.self_consistency { ev.self_consistency(&m.network, &sys) } else { None };
    let n_points = ev.reference.as_ref().map_or(ev.residual_points.len(), |r| r.len());
    let e1v = ev.reference.as_ref().map(|r| e1(&m.network, &sys, r)).or(scores.e1);
    Ok(EvalReport {
        e1: e1v,
        e2: scores.e2,
        self_consistency: sc,
        n_points,
        provenance,
        threads: vec![EvalThread { thread: 0, e1: e1v, e2: scores.e2, self_consistency: sc, eval_seed: args.eval_seed }],
    })
}

fn eval_run_dir(dir: &Path) -> Result<EvalReport> {
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let cfg = &summary.config;
    let sys = cfg.system_spec()?;
    let field = summary.oracle.as_ref().map(|f| GridField::load(&dir.join(f))).transpose()?;
    let mut threads = Vec::new();
    let mut n_points = 0;
    let mut provenance = None;
    for t in summary.threads.iter().filter(|t| t.status == "ok") {
        let (model_sys, m) = load_model(&dir.join(format!("thread_{}", t.thread)).join("model.bin"))?;
        if model_sys.descriptor()? != sys.descriptor()? {
            return Err(Error::Config(format!("thread {} model does not match the run's system", t.thread)));
        }
        let ev = Evaluator::build(&sys, &cfg.metrics, field.as_ref(), t.eval_seed, cfg.train.dt, cfg.train.integrator)?;
        let s = ev.scores(&m.network, &sys);
        n_points = ev.reference.as_ref().map_or(ev.residual_points.len(), |r| r.len());
        provenance = ev.reference.as_ref().map(|r| r.provenance());
        threads.push(EvalThread {
            thread: t.thread,
            e1: s.e1,
            e2: s.e2,
            self_consistency: ev.self_consistency(&m.network, &sys),
            eval_seed: t.eval_seed,
        });
    }
    if threads.is_empty() {
        return Err(Error::Config(format!("no completed runs in {}", dir.display())));
    }
    let mean = |f: &dyn Fn(&EvalThread) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = threads.iter().map(f).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(EvalReport {
        e1: mean(&|t| t.e1),
        e2: mean(&|t| Some(t.e2)).unwrap_or(f64::NAN),
        self_consistency: mean(&|t| t.self_consistency),
        n_points,
        provenance,
        threads,
    })
}

fn linspace(ax: &Axis, n: usize) -> Vec<f64> {
    (0..n).map(|i| ax.lo + ax.width() * i as f64 / (n - 1) as f64).collect()
}

/// Level-set geometry: 2D polylines or 3D point clouds per requested time.
pub enum LevelGroup {
    Lines(f64, Vec<Vec<[f64; 2]>>),
    Points(f64, Vec<[f64; 3]>),
}

pub fn model_level_sets(sys: &SystemSpec, net: &Network, times: &[f64], resolution: usize) -> Result<Vec<LevelGroup>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be at least 2".into()));
    }
    check_times(times, sys.horizon)?;
    let axes: Vec<Vec<f64>> = sys.domain.iter().map(|a| linspace(a, resolution)).collect();
    let mut cache = net.new_cache();
    let mut groups = Vec::new();
    for &t in times {
        match sys.state_dim() {
            2 => {
                let mut vals = Vec::with_capacity(resolution * resolution);
                for &x in &axes[0] {
                    for &y in &axes[1] {
                        vals.push(net.value_cached(sys, &[x, y], t, &mut cache));
                    }
                }
                groups.push(LevelGroup::Lines(t, march(&vals, &axes[0], &axes[1], 0.0)));
            }
            3 => {
                let mut vals = Vec::with_capacity(resolution.pow(3));
                for &x in &axes[0] {
                    for &y in &axes[1] {
                        for &z in &axes[2] {
                            vals.push(net.value_cached(sys, &[x, y, z], t, &mut cache));
                        }
                    }
                }
                groups.push(LevelGroup::Points(t, sign_change_cells(&vals, [&axes[0], &axes[1], &axes[2]], 0.0)));
            }
            d => {
                return Err(Error::InvalidArgument(format!(
                    "level-set export supports 2D and 3D systems, got dimension {d}"
                )))
            }
        }
    }
    Ok(groups)
}

pub fn field_level_sets(field: &GridField, times: &[f64]) -> Result<Vec<LevelGroup>> {
    check_times(times, field.horizon())?;
    times
        .iter()
        .map(|&t| match field.spec.dim() {
            2 => Ok(LevelGroup::Lines(t, field.zero_level_set_2d(t)?)),
            3 => Ok(LevelGroup::Points(t, field.zero_level_points_3d(t)?)),
            d => Err(Error::InvalidArgument(format!("cannot export a {d}D field"))),
        })
        .collect()
}

fn check_times(times: &[f64], horizon: f64) -> Result<()> {
    for &t in times {
        if !(t <= 1e-12 && t >= horizon - 1e-12) {
            return Err(Error::Range(format!("level-set time {t} outside [{horizon}, 0]")));
        }
    }
    Ok(())
}

/// `group,seq,x,y[,z]`: `group` is the time, `seq` restarts at 0 for each
/// polyline (2D) or numbers the points of a cloud (3D).
pub fn write_level_sets<W: Write>(w: &mut W, groups: &[LevelGroup]) -> Result<()> {
    let three = groups.iter().any(|g| matches!(g, LevelGroup::Points(..)));
    writeln!(w, "{}", if three { "group,seq,x,y,z" } else { "group,seq,x,y" })?;
    for g in groups {
        match g {
            LevelGroup::Lines(t, lines) => {
                for line in lines {
                    for (i, p) in line.iter().enumerate() {
                        writeln!(w, "{t},{i},{:e},{:e}", p[0], p[1])?;
                    }
                }
            }
            LevelGroup::Points(t, pts) => {
                for (i, p) in pts.iter().enumerate() {
                    writeln!(w, "{t},{i},{:e},{:e},{:e}", p[0], p[1], p[2])?;
                }
            }
        }
    }
    Ok(())
}

pub fn cmd_export(args: &ExportArgs) -> Result<String> {
    let groups = match (&args.model, &args.field) {
        (Some(m), _) => {
            let (sys, m) = load_model(m)?;
            model_level_sets(&sys, &m.network, &args.times, args.resolution)?
        }
        (None, Some(f)) => field_level_sets(&GridField::load(f)?, &args.times)?,
        (None, None) => return Err(Error::Config("pass --model or --field".into())),
    };
    let out = resolve_output(&args.output);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(&out)?);
    write_level_sets(&mut w, &groups)?;
    w.flush()?;
    let counts: Vec<String> = groups
        .iter()
        .map(|g| match g {
            LevelGroup::Lines(t, l) => format!("t={t}: {} polylines", l.len()),
            LevelGroup::Points(t, p) => format!("t={t}: {} points", p.len()),
        })
        .collect();
    Ok(format!("wrote {}\n{}\n", out.display(), counts.join("\n")))
}

/// Initial network a run with `cfg` would start from.
pub fn initial_model(cfg: &ExperimentConfig, thread: usize) -> Result<Network> {
    let sys = cfg.system_spec()?;
    let arch = cfg.architecture(&sys)?;
    init_network(&sys, &arch, &cfg.train, crate::trainer::derive_thread_seed(cfg.train.seed, thread))
}
