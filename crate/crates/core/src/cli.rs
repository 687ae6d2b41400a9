//! Command-line experiment driver.
//!
//! Every run reads an optional TOML config, applies command-line overrides,
//! writes its tables to an output directory and finishes with a
//! `manifest.json` that records the full config, so the run can be repeated
//! with `vqaa rerun <manifest>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::evolve::{Schedule, DEFAULT_DT, DEFAULT_SUBSTEPS};
use crate::hamiltonian::{build_zzxz, dmrg_gap_profile, exact::gap_profile_in, interpolate, DmrgOptions, GapPoint, GapSector, ModelParams, RampKind};
use crate::mps::{MpsBackend, DEFAULT_CHI_MAX};
use crate::noise::{dry_run_event_counts, layer_count, noisy_ensemble_run, NoiseConfig};
use crate::spectroscopy::{gap_profile_estimate, normalized_overlap, run_spectroscopy, uniform_grid, SpectroscopyConfig, SpectroscopyMethod};
use crate::statevector::{Backend, DenseBackend};
use crate::vqaa::{
    run_blackbox_vqaa, run_profile_vqaa, run_ratio_vqaa, schedule_fidelity, BlackboxConfig, Init, ObjectiveMode, OptimizationTrace, OptimizerKind, PathConfig,
    ProfileConfig, RatioConfig, RatioMode,
};

pub const MANIFEST_FILE: &str = "manifest.json";
const ORACLE_GAP_POINTS: usize = 400;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for anything the user can fix in the config, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Run(Error::InvalidParameter { .. } | Error::TooLarge { .. }) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {reason}"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    DenseOracle,
    Mps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    #[default]
    Blackbox,
    Ratio,
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveChoice {
    #[default]
    Oracle,
    Experiment,
}

/// One or more coupling values; `gap` draws a curve per value, every other
/// command needs exactly one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Couplings {
    One(f64),
    Many(Vec<f64>),
}

impl Couplings {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::One(j) => vec![*j],
            Self::Many(v) => v.clone(),
        }
    }
}

impl std::str::FromStr for Couplings {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let v = s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`J`: `{x}` is not a number ({e})")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(if v.len() == 1 { Self::One(v[0]) } else { Self::Many(v) })
    }
}

/// Flat run configuration. Keys not relevant to a command are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: Couplings,
    pub h: f64,
    pub g: f64,
    pub ramp: RampKind,
    pub dt: f64,
    #[serde(rename = "K")]
    pub substeps: usize,
    pub backend: BackendKind,
    pub chi: usize,
    pub seed: u64,
    pub verify: bool,
    pub grid: usize,
    pub sector: GapSector,
    pub target: f64,
    pub method: SpectroscopyMethod,
    pub algo: Algo,
    #[serde(rename = "T")]
    pub total_time: f64,
    #[serde(rename = "L")]
    pub chunks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    pub optimizer: OptimizerKind,
    pub budget: usize,
    pub objective: ObjectiveChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<usize>,
    pub tau_count: usize,
    pub delta_estimate: f64,
    pub theta: f64,
    pub theta0: f64,
    pub tcap: f64,
    pub ratio_mode: RatioMode,
    pub max_iters: usize,
    pub p: f64,
    pub trajectories: usize,
    pub dry_run: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 10,
            j: Couplings::One(3.0),
            h: 1.0,
            g: 1.0,
            ramp: RampKind::Linear,
            dt: DEFAULT_DT,
            substeps: DEFAULT_SUBSTEPS,
            backend: BackendKind::DenseOracle,
            chi: DEFAULT_CHI_MAX,
            seed: 0,
            verify: false,
            grid: 25,
            sector: GapSector::Full,
            target: 0.7,
            method: SpectroscopyMethod::ForwardBackward,
            algo: Algo::Blackbox,
            total_time: 20.0,
            chunks: 3,
            lengths: None,
            optimizer: OptimizerKind::NelderMead,
            budget: 300,
            objective: ObjectiveChoice::Oracle,
            shots: None,
            tau_count: 32,
            delta_estimate: 1.0,
            theta: 0.99,
            theta0: 1.0,
            tcap: 20.0,
            ratio_mode: RatioMode::AncillaFree,
            max_iters: 30,
            p: 0.0,
            trajectories: 100,
            dry_run: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    fn params_for(&self, j: f64) -> CliResult<ModelParams> {
        ModelParams::new(self.n, j, self.h, self.g).map_err(|e| config_err("n/J/h/g", e))
    }

    /// Model parameters for commands that take a single coupling.
    pub fn params(&self) -> CliResult<ModelParams> {
        match self.j.values().as_slice() {
            [j] => self.params_for(*j),
            other => Err(config_err("J", format!("expects a single value here, got {}", other.len()))),
        }
    }

    pub fn path(&self) -> PathConfig {
        PathConfig {
            ramp: self.ramp,
            dt: self.dt,
            substeps: self.substeps,
        }
    }

    fn mps(&self) -> MpsBackend {
        MpsBackend {
            chi_max: self.chi,
            dmrg: DmrgOptions {
                max_bond: self.chi,
                ..DmrgOptions::default()
            },
            ..MpsBackend::default()
        }
    }

    fn check_verify(&self) -> CliResult<()> {
        if self.verify && self.n > crate::hamiltonian::exact::DENSE_SITE_LIMIT {
            return Err(config_err(
                "verify",
                format!("the dense oracle handles at most {} sites", crate::hamiltonian::exact::DENSE_SITE_LIMIT),
            ));
        }
        Ok(())
    }

    fn schedule(&self) -> CliResult<Schedule> {
        let l = self.chunks;
        if l == 0 {
            return Err(config_err("L", "needs at least one chunk"));
        }
        let lengths = self.lengths.clone().unwrap_or_else(|| vec![1.0 / l as f64; l]);
        if lengths.len() != l {
            return Err(config_err("lengths", format!("{} values for L = {l}", lengths.len())));
        }
        Ok(self.path().schedule(&lengths, &vec![self.total_time / l as f64; l])?)
    }
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub n: Option<usize>,
    /// Coupling, or a comma separated list for `gap`.
    #[arg(long = "J")]
    pub j: Option<Couplings>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub ramp: Option<String>,
    /// `dense_oracle` or `mps`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub chi: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run the dense oracle alongside and write a diff report.
    #[arg(long)]
    pub verify: bool,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    /// `blackbox`, `ratio` or `profile`.
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long = "T")]
    pub total_time: Option<f64>,
    #[arg(long = "L")]
    pub chunks: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// `oracle` or `experiment`.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub tcap: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub trajectories: Option<usize>,
    #[arg(long)]
    pub dry_run: bool,
}

fn parse_key<T: serde::de::DeserializeOwned>(key: &str, value: &str) -> CliResult<T> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(value)).map_err(|e| config_err(key, e))
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field { cfg.$target = v.clone(); })*
            };
        }
        set!(n => n, j => j, h => h, g => g, chi => chi, seed => seed, grid => grid, target => target,
             total_time => total_time, chunks => chunks, budget => budget, theta => theta, tcap => tcap,
             p => p, trajectories => trajectories);
        if self.shots.is_some() {
            cfg.shots = self.shots;
        }
        if let Some(v) = &self.ramp {
            cfg.ramp = parse_key("ramp", v)?;
        }
        if let Some(v) = &self.backend {
            cfg.backend = parse_key("backend", &v.replace('-', "_"))?;
        }
        if let Some(v) = &self.method {
            cfg.method = v.parse().map_err(|e| config_err("method", e))?;
        }
        if let Some(v) = &self.algo {
            cfg.algo = parse_key("algo", v)?;
        }
        if let Some(v) = &self.optimizer {
            cfg.optimizer = v.parse().map_err(|e| config_err("optimizer", e))?;
        }
        if let Some(v) = &self.objective {
            cfg.objective = parse_key("objective", v)?;
        }
        cfg.verify |= self.verify;
        cfg.dry_run |= self.dry_run;
        Ok(())
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML file with run settings; command-line values take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (defaults to `runs/<command>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Parser)]
#[command(name = "vqaa", version, about = "Adiabatic state preparation experiments on ZZXZ chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Gap,
    Spectroscopy,
    Vqaa,
    Noise,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            Self::Gap => "gap",
            Self::Spectroscopy => "spectroscopy",
            Self::Vqaa => "vqaa",
            Self::Noise => "noise",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectral gap along the path.
    Gap(RunArgs),
    /// Required evolution time to reach a target overlap along the path.
    Spectroscopy(RunArgs),
    /// Variational schedule optimization.
    Vqaa(RunArgs),
    /// Pauli noise trajectories on a fixed schedule.
    Noise(RunArgs),
    /// Repeats the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Output directory (defaults to the manifest's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Record of one run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: CommandKind,
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub backend: BackendKind,
    /// Output files relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub evaluations: u64,
    pub measurements: u64,
    pub flags: Vec<String>,
    pub degraded: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// What a command produced, before the manifest is written.
#[derive(Debug, Default)]
struct Outcome {
    outputs: Vec<String>,
    evaluations: u64,
    measurements: u64,
    flags: Vec<String>,
    degraded: bool,
}

struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn new(root: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root, written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn csv<F>(&mut self, name: &str, fill: F) -> CliResult<()>
    where
        F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        fill(&mut w).map_err(Error::from)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.write(name, &bytes)
    }
}

/// Rows of a `--verify` report.
#[derive(Debug, Default)]
struct DiffReport {
    rows: Vec<(String, f64, f64)>,
}

impl DiffReport {
    fn push(&mut self, quantity: impl Into<String>, value: f64, oracle: f64) {
        self.rows.push((quantity.into(), value, oracle));
    }

    fn write(&self, out: &mut OutDir) -> CliResult<()> {
        out.csv("verify.csv", |w| {
            w.write_record(["quantity", "value", "oracle", "abs_diff"])?;
            for (q, v, o) in &self.rows {
                w.write_record([q.clone(), v.to_string(), o.to_string(), (v - o).abs().to_string()])?;
            }
            Ok(())
        })
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(m) if m.degraded => {
            log::warn!("run degraded: {}", m.flags.join(", "));
            1
        }
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<RunManifest> {
    let (kind, args) = match cli.command {
        Command::Gap(a) => (CommandKind::Gap, a),
        Command::Spectroscopy(a) => (CommandKind::Spectroscopy, a),
        Command::Vqaa(a) => (CommandKind::Vqaa, a),
        Command::Noise(a) => (CommandKind::Noise, a),
        Command::Rerun { manifest, out } => {
            let m = RunManifest::load(&manifest)?;
            let dir = out.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
            return execute(m.command, m.config, dir);
        }
    };
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_toml(&fs::read_to_string(p).map_err(io_err(p))?)?,
        None => RunConfig::default(),
    };
    args.overrides.apply(&mut cfg)?;
    let dir = args.out.unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    execute(kind, cfg, dir)
}

/// Runs one command with a complete config and writes its manifest.
pub fn execute(kind: CommandKind, cfg: RunConfig, dir: PathBuf) -> CliResult<RunManifest> {
    cfg.check_verify()?;
    let start = Instant::now();
    let mut out = OutDir::new(dir)?;
    log::info!("{} -> {}", kind.name(), out.root.display());
    let mut outcome = match (kind, cfg.backend) {
        (CommandKind::Gap, _) => cmd_gap(&cfg, &mut out)?,
        (CommandKind::Spectroscopy, BackendKind::DenseOracle) => cmd_spectroscopy(&DenseBackend, &cfg, &mut out)?,
        (CommandKind::Spectroscopy, BackendKind::Mps) => cmd_spectroscopy(&cfg.mps(), &cfg, &mut out)?,
        (CommandKind::Vqaa, BackendKind::DenseOracle) => cmd_vqaa(&DenseBackend, &cfg, &mut out)?,
        (CommandKind::Vqaa, BackendKind::Mps) => cmd_vqaa(&cfg.mps(), &cfg, &mut out)?,
        (CommandKind::Noise, BackendKind::DenseOracle) => cmd_noise(&DenseBackend, &cfg, &mut out)?,
        (CommandKind::Noise, BackendKind::Mps) => cmd_noise(&cfg.mps(), &cfg, &mut out)?,
    };
    outcome.outputs = std::mem::take(&mut out.written);
    let manifest = RunManifest {
        command: kind,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        backend: cfg.backend,
        config: cfg,
        outputs: outcome.outputs,
        wall_clock_s: start.elapsed().as_secs_f64(),
        evaluations: outcome.evaluations,
        measurements: outcome.measurements,
        flags: outcome.flags,
        degraded: outcome.degraded,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    let path = out.root.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

fn closed_grid(points: usize) -> CliResult<Vec<f64>> {
    if points < 2 {
        return Err(config_err("grid", "needs at least two points"));
    }
    Ok((0..points).map(|k| k as f64 / (points - 1) as f64).collect())
}

fn cmd_gap(cfg: &RunConfig, out: &mut OutDir) -> CliResult<Outcome> {
    let grid = closed_grid(cfg.grid)?;
    let couplings = cfg.j.values();
    if couplings.is_empty() {
        return Err(config_err("J", "needs at least one value"));
    }
    let mut curves: Vec<(f64, Vec<GapPoint>)> = Vec::new();
    let mut report = DiffReport::default();
    for &j in &couplings {
        let params = cfg.params_for(j)?;
        let points = match cfg.backend {
            BackendKind::DenseOracle => gap_profile_in(&params, &grid, cfg.sector)?,
            BackendKind::Mps => {
                if cfg.sector == GapSector::Reachable {
                    return Err(config_err("sector", "the reachable sector needs the dense oracle"));
                }
                dmrg_gap_profile(&params, &grid, &cfg.mps().dmrg)?
            }
        };
        if cfg.verify {
            let oracle = gap_profile_in(&params, &grid, cfg.sector)?;
            for (a, b) in points.iter().zip(&oracle) {
                report.push(format!("gap J={j} s={}", a.s), a.gap, b.gap);
            }
        }
        curves.push((j, points));
    }
    out.csv("gap.csv", |w| {
        w.write_record(["J", "s", "ground_energy", "gap", "degenerate"])?;
        for (j, points) in &curves {
            for p in points {
                w.write_record([j.to_string(), p.s.to_string(), p.ground_energy.to_string(), p.gap.to_string(), p.degenerate.to_string()])?;
            }
        }
        Ok(())
    })?;
    if cfg.verify {
        report.write(out)?;
    }
    Ok(Outcome {
        evaluations: (grid.len() * couplings.len()) as u64,
        ..Outcome::default()
    })
}

/// Position of the smallest reachable-sector gap on a fine grid.
fn oracle_gap_position(params: &ModelParams) -> CliResult<f64> {
    let fine = closed_grid(ORACLE_GAP_POINTS)?;
    let pts = gap_profile_in(params, &fine, GapSector::Reachable)?;
    let best = pts.iter().min_by(|a, b| a.gap.total_cmp(&b.gap)).expect("nonempty grid");
    Ok(best.s)
}

fn cmd_spectroscopy<B: Backend + Sync>(backend: &B, cfg: &RunConfig, out: &mut OutDir) -> CliResult<Outcome> {
    let params = cfg.params()?;
    let mut sc = SpectroscopyConfig::new(params, cfg.target, cfg.method);
    sc.ramp = cfg.ramp;
    sc.dt = cfg.dt;
    sc.substeps = cfg.substeps;
    let grid = uniform_grid(cfg.grid);
    let curve = run_spectroscopy(backend, &sc, &grid)?;
    out.csv("curve.csv", |w| {
        w.write_record(["s", "time", "overlap", "evaluations", "reached", "multi_crossing"])?;
        for k in 0..curve.grid.len() {
            w.write_record([
                curve.grid[k].to_string(),
                curve.times[k].to_string(),
                curve.overlaps[k].to_string(),
                curve.evaluations[k].to_string(),
                curve.reached[k].to_string(),
                curve.multi_crossing[k].to_string(),
            ])?;
        }
        Ok(())
    })?;
    let mut flags: Vec<String> = Vec::new();
    for k in 0..curve.grid.len() {
        if !curve.reached[k] {
            flags.push(format!("unreached s={}", curve.grid[k]));
        }
        if curve.multi_crossing[k] {
            flags.push(format!("multi_crossing s={}", curve.grid[k]));
        }
    }
    let estimate = if curve.grid.len() >= 4 {
        let est = gap_profile_estimate(&curve)?;
        out.csv("derivative.csv", |w| {
            w.write_record(["s", "neg_dT_ds"])?;
            for (s, d) in &est.points {
                w.write_record([s.to_string(), d.to_string()])?;
            }
            Ok(())
        })?;
        Some(est)
    } else {
        None
    };
    if cfg.verify {
        let mut report = DiffReport::default();
        let s_min = oracle_gap_position(&params)?;
        if let Some(est) = &estimate {
            report.push("gap_position", est.argmin_s, s_min);
        }
        report.write(out)?;
    }
    Ok(Outcome {
        evaluations: curve.evaluations.iter().sum::<usize>() as u64,
        degraded: curve.degraded(),
        flags,
        ..Outcome::default()
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleReport {
    lengths: Vec<f64>,
    times: Vec<f64>,
    total_time: f64,
    objective: f64,
    baseline_objective: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_fidelity: Option<f64>,
    schedule: Schedule,
}

fn cmd_vqaa<B: Backend + Sync>(backend: &B, cfg: &RunConfig, out: &mut OutDir) -> CliResult<Outcome> {
    let params = cfg.params()?;
    let path = cfg.path();
    let trace: OptimizationTrace = match cfg.algo {
        Algo::Blackbox => {
            let mut bc = BlackboxConfig::new(params, cfg.chunks, cfg.total_time, cfg.optimizer, cfg.budget);
            bc.path = path;
            bc.seed = cfg.seed;
            if let Some(l) = &cfg.lengths {
                bc.init = Init::WarmStart(l.clone());
            }
            bc.mode = match cfg.objective {
                ObjectiveChoice::Oracle => ObjectiveMode::Oracle,
                ObjectiveChoice::Experiment => ObjectiveMode::Experiment {
                    shots: cfg.shots,
                    tau_count: cfg.tau_count,
                    delta_estimate: cfg.delta_estimate,
                },
            };
            if cfg.p > 0.0 {
                bc.noise = Some(NoiseConfig {
                    p: cfg.p,
                    n_trajectories: cfg.trajectories,
                    shot_m: cfg.shots,
                    seed: cfg.seed,
                });
            }
            run_blackbox_vqaa(backend, &bc)?
        }
        Algo::Ratio => {
            let mut rc = RatioConfig::new(params, cfg.chunks, cfg.total_time, cfg.ratio_mode);
            rc.path = path;
            rc.max_iters = cfg.max_iters;
            run_ratio_vqaa(backend, &rc)?
        }
        Algo::Profile => {
            let mut pc = ProfileConfig::new(params, cfg.chunks, cfg.theta, cfg.tcap);
            pc.theta0 = cfg.theta0;
            pc.path = path;
            pc.seed = cfg.seed;
            pc.delta_estimate = cfg.delta_estimate;
            pc.tau_count = cfg.tau_count;
            pc.verify = cfg.verify;
            run_profile_vqaa(backend, &pc)?
        }
    };
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    out.write("trace.csv", &csv)?;
    let report = ScheduleReport {
        lengths: trace.best.chunk_lengths(),
        times: trace.best.chunk_times(),
        total_time: trace.best.total_time(),
        objective: trace.best_objective,
        baseline_objective: trace.baseline_objective,
        final_fidelity: trace.final_fidelity,
        schedule: trace.best.clone(),
    };
    out.write("schedule.json", serde_json::to_string_pretty(&report).map_err(Error::from)?.as_bytes())?;
    out.write("trace.json", trace.to_json()?.as_bytes())?;
    if !trace.profile.is_empty() {
        out.csv("profile.csv", |w| {
            w.write_record(["chunk", "s", "theta", "time", "tests", "certified", "estimate", "oracle_overlap"])?;
            for c in &trace.profile {
                w.write_record([
                    c.chunk.to_string(),
                    c.s.to_string(),
                    c.theta.to_string(),
                    c.time.to_string(),
                    c.tests.to_string(),
                    c.certified.to_string(),
                    c.estimate.to_string(),
                    c.oracle_overlap.map_or(String::new(), |o| o.to_string()),
                ])?;
            }
            Ok(())
        })?;
    }
    if cfg.verify {
        let mut report = DiffReport::default();
        let oracle = schedule_fidelity(&DenseBackend, &params, &trace.best)?;
        report.push("best_objective", trace.best_objective, oracle);
        if let Some(f) = trace.final_fidelity {
            report.push("final_fidelity", f, oracle);
        }
        for c in &trace.profile {
            if let Some(o) = c.oracle_overlap {
                report.push(format!("chunk {} overlap", c.chunk), c.estimate, o);
            }
        }
        report.write(out)?;
    }
    Ok(Outcome {
        evaluations: trace.evaluations() as u64,
        measurements: trace.rows.last().map_or(0, |r| r.measurement_count),
        flags: trace.flags.iter().map(|f| serde_json::to_string(f).unwrap_or_default()).collect(),
        degraded: trace.degraded(),
        ..Outcome::default()
    })
}

fn cmd_noise<B: Backend + Sync>(backend: &B, cfg: &RunConfig, out: &mut OutDir) -> CliResult<Outcome> {
    let params = cfg.params()?;
    let sched = cfg.schedule()?;
    let noise = NoiseConfig {
        p: cfg.p,
        n_trajectories: cfg.trajectories,
        shot_m: None,
        seed: cfg.seed,
    };
    noise.validate()?;
    if cfg.dry_run {
        let counts = dry_run_event_counts(params.num_sites, &sched, noise.p, noise.n_trajectories, noise.seed)?;
        let layers = layer_count(params.num_sites, &sched)?;
        out.csv("event_counts.csv", |w| {
            w.write_record(["trajectory", "events", "layers"])?;
            for (t, c) in counts.iter().enumerate() {
                w.write_record([t.to_string(), c.to_string(), layers.to_string()])?;
            }
            Ok(())
        })?;
        return Ok(Outcome {
            evaluations: counts.len() as u64,
            ..Outcome::default()
        });
    }
    let (h0, ht) = build_zzxz(&params)?;
    let (_, target) = backend.ground_state(&interpolate(&h0, &ht, 1.0)?)?;
    let ensemble = noisy_ensemble_run(backend, &params, &sched, &noise, |st| Ok(normalized_overlap(&target, st)?.powi(2)))?;
    out.csv("trajectories.csv", |w| {
        w.write_record(["trajectory", "events", "fidelity"])?;
        for t in &ensemble.trajectories {
            w.write_record([t.index.to_string(), t.events.len().to_string(), t.value.to_string()])?;
        }
        Ok(())
    })?;
    let summary = serde_json::json!({
        "mean_fidelity": ensemble.mean,
        "std_err": ensemble.std_err,
        "trajectories": ensemble.trajectories.len(),
    });
    out.write("summary.json", serde_json::to_string_pretty(&summary).map_err(Error::from)?.as_bytes())?;
    if cfg.verify {
        let mut report = DiffReport::default();
        let clean = schedule_fidelity(&DenseBackend, &params, &sched)?.powi(2);
        report.push("mean_fidelity", ensemble.mean, clean);
        report.write(out)?;
    }
    Ok(Outcome {
        evaluations: ensemble.trajectories.len() as u64,
        ..Outcome::default()
    })
}
