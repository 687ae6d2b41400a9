//! Variational adiabatic algorithms: chunk lengths or chunk times of a
//! schedule are tuned against ground-state overlap estimates.
//!
//! * [`run_ratio_vqaa`] rebalances chunk lengths from per-chunk overlaps,
//!   measured either by evolving back to the start or against the
//!   instantaneous ground state.
//! * [`run_blackbox_vqaa`] maximizes the final overlap with a generic
//!   bounded optimizer.
//! * [`run_profile_vqaa`] picks each chunk time by bisection so that the
//!   overlap follows a target profile, certified by a sequential test.

mod optim;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{
    bounded_quasi_newton, cobyla_like, nelder_mead, project_simplex, CobylaConfig, Domain, FnObjective, NelderMeadConfig, Objective,
    OptimResult, OptimStatus, QuasiNewtonConfig, MIN_LEN,
};

use crate::error::{invalid, Error, Result};
use crate::evolve::{evolve_chunk, evolve_schedule, Direction, Propagator, Schedule, StepConfig, DEFAULT_DT, DEFAULT_SUBSTEPS};
use crate::hamiltonian::{build_zzxz, interpolate, HamiltonianTerms, ModelParams, RampKind};
use crate::inference::{decide_simulated, BetaPosterior, TestConfig, Verdict};
use crate::linalg::C64;
use crate::noise::{evolve_noisy, trajectory_rng, NoiseConfig};
use crate::overlap::{alpha, e2_threshold, ground_population_bound, sample_tau, sampled_alpha, SpectralCache, DEFAULT_K_MAX, SPECTRAL_SITE_LIMIT};
use crate::spectroscopy::normalized_overlap;
use crate::statevector::{minus_states, Backend, Register};

/// Ramp and Trotter settings shared by every chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    #[serde(default)]
    pub ramp: RampKind,
    pub dt: f64,
    #[serde(rename = "K")]
    pub substeps: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            ramp: RampKind::Linear,
            dt: DEFAULT_DT,
            substeps: DEFAULT_SUBSTEPS,
        }
    }
}

impl PathConfig {
    pub fn schedule(&self, lengths: &[f64], times: &[f64]) -> Result<Schedule> {
        Schedule::new(lengths, times)?
            .with_ramp(self.ramp)
            .with_dt(self.dt)?
            .with_substeps(self.substeps)
    }

    fn step(&self) -> StepConfig {
        StepConfig {
            ramp: self.ramp,
            dt: self.dt,
            substeps: self.substeps,
            propagator: Propagator::Trotter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    FinalOverlap,
    RatioSmoothness,
    ProfileFollow,
}

/// Conditions that mark a run as degraded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunFlag {
    BudgetExhausted,
    LineSearchFailed,
    NotConverged,
    ZeroOverlap { chunk: usize },
    ChunkAtCap { chunk: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub eval_count: usize,
    pub measurement_count: u64,
    pub objective: f64,
    pub best_objective: f64,
    pub lengths: Vec<f64>,
    pub times: Vec<f64>,
    /// Per-chunk overlaps of ratio runs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunk_overlaps: Vec<f64>,
}

/// Per-chunk outcome of a profile run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileChunk {
    pub chunk: usize,
    pub s: f64,
    pub theta: f64,
    pub time: f64,
    pub tests: usize,
    pub certified: bool,
    /// Overlap estimate `sqrt(bound(E2))` at the chosen time.
    pub estimate: f64,
    /// Exact overlap with the instantaneous ground state, when verified.
    pub oracle_overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub objective_kind: ObjectiveKind,
    pub rows: Vec<TraceRow>,
    /// Schedule with the highest objective.
    pub best: Schedule,
    pub best_objective: f64,
    /// Last iterate, which differs from `best` for ratio runs.
    pub last: Schedule,
    /// Objective of the first (naive) evaluation.
    pub baseline_objective: f64,
    /// Exact final overlap of `best`, when computed.
    pub final_fidelity: Option<f64>,
    pub flags: Vec<RunFlag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile: Vec<ProfileChunk>,
}

impl OptimizationTrace {
    pub fn degraded(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn evaluations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.eval_count)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Columns `iter, eval_count, measurement_count, objective,
    /// best_objective, len_1.., t_1.., [o_1..]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let l = self.best.num_chunks();
        let with_overlaps = self.rows.iter().any(|r| !r.chunk_overlaps.is_empty());
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["iter", "eval_count", "measurement_count", "objective", "best_objective"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=l).map(|i| format!("len_{i}")));
        header.extend((1..=l).map(|i| format!("t_{i}")));
        if with_overlaps {
            header.extend((1..=l).map(|i| format!("o_{i}")));
        }
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.iteration.to_string(),
                r.eval_count.to_string(),
                r.measurement_count.to_string(),
                r.objective.to_string(),
                r.best_objective.to_string(),
            ];
            rec.extend(r.lengths.iter().map(f64::to_string));
            rec.extend(r.times.iter().map(f64::to_string));
            if with_overlaps {
                rec.extend((0..l).map(|i| r.chunk_overlaps.get(i).map_or(String::new(), f64::to_string)));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Append-only record of evaluations with the running best.
#[derive(Debug, Default)]
struct TraceLog {
    rows: Vec<TraceRow>,
    evals: usize,
    measurements: u64,
    best: Option<(f64, Vec<f64>, Vec<f64>)>,
}

impl TraceLog {
    fn record(&mut self, iteration: usize, lengths: &[f64], times: &[f64], objective: f64, measurements: u64, chunk_overlaps: Vec<f64>) {
        self.evals += 1;
        self.measurements += measurements;
        if self.best.as_ref().is_none_or(|b| objective > b.0) {
            self.best = Some((objective, lengths.to_vec(), times.to_vec()));
        }
        let best_objective = self.best.as_ref().map_or(objective, |b| b.0);
        self.rows.push(TraceRow {
            iteration,
            eval_count: self.evals,
            measurement_count: self.measurements,
            objective,
            best_objective,
            lengths: lengths.to_vec(),
            times: times.to_vec(),
            chunk_overlaps,
        });
    }

    fn best_schedule(&self, path: &PathConfig) -> Result<(f64, Schedule)> {
        let (f, l, t) = self.best.as_ref().ok_or_else(|| invalid("trace", "no evaluations recorded"))?;
        Ok((*f, path.schedule(l, t)?))
    }
}

/// Model, initial state and path settings of one optimization.
struct Problem<'a, B: Backend> {
    backend: &'a B,
    h0: HamiltonianTerms,
    ht: HamiltonianTerms,
    psi0: B::State,
    path: PathConfig,
}

impl<'a, B: Backend> Problem<'a, B> {
    fn new(backend: &'a B, params: &ModelParams, path: PathConfig) -> Result<Self> {
        let (h0, ht) = build_zzxz(params)?;
        let psi0 = backend.product_state(&minus_states(params.num_sites))?;
        Ok(Self {
            backend,
            h0,
            ht,
            psi0,
            path,
        })
    }

    fn terms_at(&self, s: f64) -> Result<HamiltonianTerms> {
        interpolate(&self.h0, &self.ht, s)
    }

    fn ground(&self, s: f64) -> Result<B::State> {
        Ok(self.backend.ground_state(&self.terms_at(s)?)?.1)
    }

    fn forward(&self, sched: &Schedule) -> Result<B::State> {
        let mut state = self.psi0.clone();
        evolve_schedule(&mut state, &self.h0, &self.ht, sched, Direction::Forward, None, Propagator::Trotter)?;
        Ok(state)
    }

    fn fidelity(&self, sched: &Schedule) -> Result<f64> {
        let gs = self.ground(1.0)?;
        normalized_overlap(&gs, &self.forward(sched)?)
    }
}

fn check_chunks(num_chunks: usize, total_time: f64) -> Result<()> {
    if num_chunks == 0 {
        return Err(invalid("L", "needs at least one chunk"));
    }
    if !(total_time > 0.0) || !total_time.is_finite() {
        return Err(invalid("total_T", format!("{total_time} is not a positive time")));
    }
    Ok(())
}

/// Exact final overlap of `sched` from `|->^N` against the ground state of `H(1)`.
pub fn schedule_fidelity<B: Backend>(backend: &B, params: &ModelParams, sched: &Schedule) -> Result<f64> {
    let path = PathConfig {
        ramp: sched.ramp,
        dt: sched.dt,
        substeps: sched.trotter_substeps,
    };
    Problem::new(backend, params, path)?.fidelity(sched)
}

// ---------------------------------------------------------------------------
// Ratio rebalancing

/// New chunk lengths and the chunks whose overlap ratio was undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rebalance {
    pub lengths: Vec<f64>,
    pub flagged: Vec<usize>,
}

/// One rebalancing update from the per-chunk overlaps `O_1..O_L`.
///
/// With `R_i = O_i / O_{i-1}` (`O_0 = 1`) and mean `R`, chunk `i` is scaled
/// by `1 - step (R - R_i) / R`: chunks with a larger overlap drop become
/// shorter, so the path is traversed more slowly there.
pub fn ratio_rebalance_step(overlaps: &[f64], lengths: &[f64], step: f64) -> Result<Rebalance> {
    let l = lengths.len();
    if overlaps.len() != l || l == 0 {
        return Err(invalid("overlaps", format!("{} overlaps for {l} chunks", overlaps.len())));
    }
    if !(step >= 0.0) {
        return Err(invalid("step", "must be non-negative"));
    }
    if overlaps.iter().any(|o| !(0.0..=1.0 + 1e-12).contains(o)) {
        return Err(invalid("overlaps", "overlaps must lie in [0, 1]"));
    }
    if (lengths.iter().sum::<f64>() - 1.0).abs() > 1e-9 || lengths.iter().any(|&x| x < 0.0) {
        return Err(invalid("lengths", "must be non-negative and sum to 1"));
    }
    let mut ratios = vec![None; l];
    let mut prev = 1.0;
    for (i, &o) in overlaps.iter().enumerate() {
        if o > 0.0 && prev > 0.0 {
            ratios[i] = Some(o / prev);
        }
        prev = o;
    }
    let flagged: Vec<usize> = (0..l).filter(|&i| ratios[i].is_none()).collect();
    let valid: Vec<f64> = ratios.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Ok(Rebalance {
            lengths: lengths.to_vec(),
            flagged,
        });
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let mut new: Vec<f64> = lengths
        .iter()
        .zip(&ratios)
        .map(|(&x, r)| match r {
            Some(r) => x * (1.0 - step * (mean - r) / mean).max(0.0),
            None => MIN_LEN,
        })
        .collect();
    let free_total = 1.0 - MIN_LEN * flagged.len() as f64;
    let sum: f64 = (0..l).filter(|i| ratios[*i].is_some()).map(|i| new[i]).sum();
    if sum > 0.0 {
        for i in (0..l).filter(|i| ratios[*i].is_some()) {
            new[i] *= free_total / sum;
        }
    }
    Ok(Rebalance {
        lengths: project_simplex(&new, MIN_LEN)?,
        flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// `O_i = |<psi0| W_back(s_i) W(s_i) |psi0>|` with slower backward chunks.
    #[default]
    AncillaFree,
    /// `O_i = |<GS(s_i)| W(s_i) |psi0>|`.
    ForwardOnly,
}

impl std::str::FromStr for RatioMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ancilla_free" | "ancilla-free" => Ok(Self::AncillaFree),
            "forward_only" | "forward-only" => Ok(Self::ForwardOnly),
            other => Err(invalid("mode", format!("expected `ancilla_free` or `forward_only`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub params: ModelParams,
    #[serde(rename = "L")]
    pub num_chunks: usize,
    #[serde(rename = "total_T")]
    pub total_time: f64,
    pub mode: RatioMode,
    pub max_iters: usize,
    pub step: f64,
    /// Stop once no length changes by more than this.
    pub tol: f64,
    /// Backward chunk times are this multiple of the forward times.
    pub backward_factor: f64,
    #[serde(default)]
    pub path: PathConfig,
}

impl RatioConfig {
    pub fn new(params: ModelParams, num_chunks: usize, total_time: f64, mode: RatioMode) -> Self {
        Self {
            params,
            num_chunks,
            total_time,
            mode,
            max_iters: 30,
            step: 0.3,
            tol: 1e-3,
            backward_factor: 4.0,
            path: PathConfig::default(),
        }
    }
}

/// Overlaps `O_1..O_L` at the end of every chunk.
fn chunk_overlaps<B: Backend + Sync>(prob: &Problem<B>, sched: &Schedule, mode: RatioMode, backward_factor: f64) -> Result<Vec<f64>> {
    let b = sched.boundaries();
    let step = prob.path.step();
    let mut states = Vec::with_capacity(sched.num_chunks());
    let mut state = prob.psi0.clone();
    for (j, c) in sched.chunks.iter().enumerate() {
        evolve_chunk(&mut state, &prob.h0, &prob.ht, b[j], b[j + 1], c.t, &step)?;
        states.push(state.clone());
    }
    let back = sched.scaled_times(backward_factor);
    states
        .into_par_iter()
        .enumerate()
        .map(|(i, mut st)| match mode {
            RatioMode::AncillaFree => {
                evolve_schedule(&mut st, &prob.h0, &prob.ht, &back, Direction::Backward, Some(i), Propagator::Trotter)?;
                normalized_overlap(&prob.psi0, &st)
            }
            RatioMode::ForwardOnly => normalized_overlap(&prob.ground(b[i + 1])?, &st),
        })
        .collect()
}

/// Iterates evolve, measure `O_i`, rebalance with equal chunk times.
///
/// The step is halved and the update undone whenever the final overlap
/// `O_L` decreases.
pub fn run_ratio_vqaa<B: Backend + Sync>(backend: &B, cfg: &RatioConfig) -> Result<OptimizationTrace> {
    check_chunks(cfg.num_chunks, cfg.total_time)?;
    if cfg.num_chunks < 2 {
        return Err(invalid("L", "ratio rebalancing needs at least two chunks"));
    }
    if !(cfg.backward_factor > 0.0) {
        return Err(invalid("backward_factor", "must be positive"));
    }
    let prob = Problem::new(backend, &cfg.params, cfg.path)?;
    let l = cfg.num_chunks;
    let times = vec![cfg.total_time / l as f64; l];
    let mut lengths = crate::evolve::naive_schedule(l, cfg.total_time)?.chunk_lengths();
    let mut log = TraceLog::default();
    let mut flags = Vec::new();
    let mut step = cfg.step;
    let mut accepted: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;
    for it in 0..=cfg.max_iters {
        let sched = cfg.path.schedule(&lengths, &times)?;
        let o = chunk_overlaps(&prob, &sched, cfg.mode, cfg.backward_factor)?;
        log.record(it, &lengths, &times, o[l - 1], 0, o.clone());
        log.evals += l - 1;
        if let Some(row) = log.rows.last_mut() {
            row.eval_count = log.evals;
        }
        match &accepted {
            Some((_, prev)) if o[l - 1] < prev[l - 1] => step *= 0.5,
            _ => accepted = Some((lengths.clone(), o)),
        }
        if it == cfg.max_iters {
            break;
        }
        let (base, o) = accepted.as_ref().expect("first iterate is always accepted");
        let upd = ratio_rebalance_step(o, base, step)?;
        for &c in &upd.flagged {
            let f = RunFlag::ZeroOverlap { chunk: c };
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        let change = upd.lengths.iter().zip(base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if change < cfg.tol {
            converged = true;
            break;
        }
        lengths = upd.lengths;
    }
    if !converged {
        flags.push(RunFlag::NotConverged);
    }
    if let Some((base, _)) = accepted {
        lengths = base;
    }
    let (best_objective, best) = log.best_schedule(&cfg.path)?;
    let last = cfg.path.schedule(&lengths, &times)?;
    let final_fidelity = prob.fidelity(&last).ok();
    Ok(OptimizationTrace {
        objective_kind: ObjectiveKind::RatioSmoothness,
        baseline_objective: log.rows[0].objective,
        rows: log.rows,
        best,
        best_objective,
        last,
        final_fidelity,
        flags,
        profile: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Black-box optimization of the final overlap

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    NelderMead,
    QuasiNewton,
    CobylaLike,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "nelder_mead" => Ok(Self::NelderMead),
            "quasi_newton" | "lbfgsb" | "l_bfgs_b" => Ok(Self::QuasiNewton),
            "cobyla_like" | "cobyla" => Ok(Self::CobylaLike),
            _ => Err(invalid("optimizer", format!("unknown optimizer `{s}`"))),
        }
    }
}

/// How the final overlap is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObjectiveMode {
    /// Exact overlap with the ground state of `H(1)`.
    #[default]
    Oracle,
    /// Square root of the population bound from a single-ancilla `E2`
    /// estimate, with `shots` simulated measurements per tau and basis.
    Experiment {
        shots: Option<usize>,
        tau_count: usize,
        delta_estimate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lengths")]
pub enum Init {
    #[default]
    Naive,
    WarmStart(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxConfig {
    pub params: ModelParams,
    #[serde(rename = "L")]
    pub num_chunks: usize,
    #[serde(rename = "total_T")]
    pub total_time: f64,
    pub optimizer: OptimizerKind,
    pub eval_budget: usize,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub mode: ObjectiveMode,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub seed: u64,
    /// Initial simplex edge or trust radius.
    pub initial_step: f64,
}

impl BlackboxConfig {
    pub fn new(params: ModelParams, num_chunks: usize, total_time: f64, optimizer: OptimizerKind, eval_budget: usize) -> Self {
        Self {
            params,
            num_chunks,
            total_time,
            optimizer,
            eval_budget,
            init: Init::Naive,
            mode: ObjectiveMode::Oracle,
            noise: None,
            path: PathConfig::default(),
            seed: 0,
            initial_step: 0.1,
        }
    }
}

/// Objective of the black-box search: the (estimated) final overlap as a
/// function of the chunk lengths, negated for minimization.
struct FinalOverlap<'a, B: Backend> {
    prob: Problem<'a, B>,
    target: B::State,
    spectral: Option<SpectralCache>,
    times: Vec<f64>,
    mode: ObjectiveMode,
    noise: Option<NoiseConfig>,
    seed: u64,
    iteration: usize,
    log: TraceLog,
}

fn mix(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl<'a, B: Backend + Sync> FinalOverlap<'a, B> {
    fn final_states(&self, sched: &Schedule, index: usize) -> Result<Vec<B::State>> {
        match &self.noise {
            None => Ok(vec![self.prob.forward(sched)?]),
            Some(nc) => (0..nc.n_trajectories)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trajectory_rng(mix(nc.seed, index as u64), t as u64);
                    let mut st = self.prob.psi0.clone();
                    evolve_noisy(&mut st, &self.prob.h0, &self.prob.ht, sched, nc.p, &mut rng)?;
                    Ok(st)
                })
                .collect(),
        }
    }

    /// Objective value and measurement count of evaluation `index`.
    fn value(&self, lengths: &[f64], index: usize) -> Result<(f64, u64)> {
        let sched = self.prob.path.schedule(lengths, &self.times)?;
        let states = self.final_states(&sched, index)?;
        let n = states.len() as f64;
        match self.mode {
            ObjectiveMode::Oracle => {
                let mut p = 0.0;
                for st in &states {
                    p += normalized_overlap(&self.target, st)?.powi(2);
                }
                Ok(((p / n).sqrt(), 0))
            }
            ObjectiveMode::Experiment {
                shots,
                tau_count,
                delta_estimate,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(index as u64);
                let taus: Vec<f64> = (0..tau_count)
                    .map(|_| sample_tau(delta_estimate, DEFAULT_K_MAX, &mut rng))
                    .collect::<Result<_>>()?;
                let alphas = mixture_alphas(&states, &self.prob.ht, self.spectral.as_ref(), &taus, &self.prob.path.step())?;
                let mut e2 = 0.0;
                for a in alphas {
                    let a = match shots {
                        Some(m) => sampled_alpha(a, m, &mut rng)?,
                        None => a,
                    };
                    e2 += a.norm_sqr().min(1.0);
                }
                e2 /= tau_count as f64;
                let m = shots.map_or(0, |m| 2 * m as u64 * tau_count as u64);
                Ok((ground_population_bound(e2.clamp(0.0, 1.0))?.sqrt(), m))
            }
        }
    }
}

/// `alpha(tau)` of the equal mixture of `states`.
fn mixture_alphas<R: Register>(states: &[R], terms: &HamiltonianTerms, spectral: Option<&SpectralCache>, taus: &[f64], step: &StepConfig) -> Result<Vec<C64>> {
    let n = states.len() as f64;
    if let Some(cache) = spectral {
        let mut pops = vec![0.0; cache.energies().len()];
        for st in states {
            let mut sv = st.to_state_vector()?;
            sv.normalize()?;
            for (acc, p) in pops.iter_mut().zip(cache.populations(&sv)?) {
                *acc += p / n;
            }
        }
        return Ok(taus.iter().map(|&t| cache.alpha(&pops, t)).collect());
    }
    taus.par_iter()
        .map(|&t| {
            let mut a = C64::new(0.0, 0.0);
            for st in states {
                a += alpha(st, terms, t, step)? / n;
            }
            Ok(a)
        })
        .collect()
}

impl<'a, B: Backend + Sync> Objective for FinalOverlap<'a, B> {
    fn eval_batch(&mut self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let base = self.log.evals;
        let vals: Vec<(f64, u64)> = {
            let this = &*self;
            points
                .par_iter()
                .enumerate()
                .map(|(k, x)| this.value(x, base + k))
                .collect::<Result<_>>()?
        };
        for (x, &(v, m)) in points.iter().zip(&vals) {
            let times = self.times.clone();
            self.log.record(self.iteration, x, &times, v, m, Vec::new());
        }
        Ok(vals.into_iter().map(|(v, _)| -v).collect())
    }

    fn evaluations(&self) -> usize {
        self.log.evals
    }

    fn begin_iteration(&mut self, iteration: usize) {
        self.iteration = iteration;
    }
}

/// Maximizes the final overlap over chunk lengths with fixed equal times.
///
/// The naive schedule is always evaluated first and stays the incumbent
/// unless beaten, so the reported best never falls below it.
pub fn run_blackbox_vqaa<B: Backend + Sync>(backend: &B, cfg: &BlackboxConfig) -> Result<OptimizationTrace>
where
    B::State: Sync,
{
    check_chunks(cfg.num_chunks, cfg.total_time)?;
    let l = cfg.num_chunks;
    if cfg.eval_budget < l + 1 {
        return Err(invalid("eval_budget", format!("needs at least L + 1 = {} evaluations", l + 1)));
    }
    if let Some(nc) = &cfg.noise {
        nc.validate()?;
    }
    if let ObjectiveMode::Experiment {
        shots,
        tau_count,
        delta_estimate,
    } = cfg.mode
    {
        if tau_count == 0 || shots == Some(0) || !(delta_estimate > 0.0) {
            return Err(invalid("mode", "experiment mode needs tau_count, shots and delta_estimate positive"));
        }
    }
    let prob = Problem::new(backend, &cfg.params, cfg.path)?;
    let target = prob.ground(1.0)?;
    let spectral = match cfg.mode {
        ObjectiveMode::Experiment { .. } if cfg.params.num_sites <= SPECTRAL_SITE_LIMIT => Some(SpectralCache::new(&prob.ht)?),
        _ => None,
    };
    let naive = crate::evolve::naive_schedule(l, cfg.total_time)?;
    let times = naive.chunk_times();
    let mut obj = FinalOverlap {
        prob,
        target,
        spectral,
        times,
        mode: cfg.mode,
        noise: cfg.noise,
        seed: cfg.seed,
        iteration: 0,
        log: TraceLog::default(),
    };
    let naive_lengths = naive.chunk_lengths();
    obj.eval_batch(&[naive_lengths.clone()])?;
    let x0 = match &cfg.init {
        Init::Naive => naive_lengths,
        Init::WarmStart(x) => {
            if x.len() != l {
                return Err(invalid("init", format!("warm start has {} lengths for {l} chunks", x.len())));
            }
            x.clone()
        }
    };
    let domain = Domain::simplex(l);
    let budget = cfg.eval_budget - 1;
    let res = match cfg.optimizer {
        OptimizerKind::NelderMead => nelder_mead(
            &mut obj,
            &x0,
            &domain,
            &NelderMeadConfig {
                simplex_scale: cfg.initial_step,
                max_evals: budget,
                ..Default::default()
            },
        )?,
        OptimizerKind::QuasiNewton => bounded_quasi_newton(
            &mut obj,
            &x0,
            &domain,
            &QuasiNewtonConfig {
                max_evals: budget,
                initial_step: cfg.initial_step,
                ..Default::default()
            },
        )?,
        OptimizerKind::CobylaLike => cobyla_like(
            &mut obj,
            &x0,
            &domain,
            &CobylaConfig {
                rho_begin: cfg.initial_step,
                max_evals: budget,
                ..Default::default()
            },
        )?,
    };
    let mut flags = Vec::new();
    match res.status {
        OptimStatus::BudgetExhausted => flags.push(RunFlag::BudgetExhausted),
        OptimStatus::LineSearchFailed => flags.push(RunFlag::LineSearchFailed),
        OptimStatus::MaxIterations => flags.push(RunFlag::NotConverged),
        OptimStatus::Converged => {}
    }
    let (best_objective, best) = obj.log.best_schedule(&cfg.path)?;
    let last = if res.x.is_empty() {
        best.clone()
    } else {
        cfg.path.schedule(&res.x, &obj.times)?
    };
    let final_fidelity = match (cfg.mode, cfg.noise) {
        (ObjectiveMode::Oracle, None) => Some(best_objective),
        _ => Some(normalized_overlap(&obj.target, &obj.prob.forward(&best)?)?),
    };
    Ok(OptimizationTrace {
        objective_kind: ObjectiveKind::FinalOverlap,
        baseline_objective: obj.log.rows[0].objective,
        rows: obj.log.rows,
        best,
        best_objective,
        last,
        final_fidelity,
        flags,
        profile: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Target-profile search over chunk times

/// Sequential-test settings for certifying a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Failure pseudo-count of the prior. The prior mean is placed at the
    /// chunk's threshold so neither verdict is reached before any data.
    pub prior_failures: f64,
    /// Indifference margin on the Bell success probability.
    pub epsilon: f64,
    pub alpha_threshold: f64,
    pub max_samples: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            prior_failures: 2.0,
            epsilon: 2e-4,
            alpha_threshold: 0.05,
            max_samples: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub params: ModelParams,
    #[serde(rename = "L")]
    pub num_chunks: usize,
    /// Target overlap at `s = 0`.
    pub theta0: f64,
    /// Target overlap at `s = 1`.
    #[serde(rename = "thetaL")]
    pub theta_l: f64,
    #[serde(rename = "T_cap_per_chunk")]
    pub t_cap: f64,
    /// Bisection stops once the bracket is narrower than this.
    pub time_tol: f64,
    #[serde(default)]
    pub test: CertifyConfig,
    /// Gap estimate that sets the tau grid `pi l / delta`.
    pub delta_estimate: f64,
    /// Tau values per estimate when no spectral cache is available.
    pub tau_count: usize,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub seed: u64,
    /// Also record the exact instantaneous overlap of each chunk.
    #[serde(default)]
    pub verify: bool,
}

impl ProfileConfig {
    pub fn new(params: ModelParams, num_chunks: usize, theta_l: f64, t_cap: f64) -> Self {
        Self {
            params,
            num_chunks,
            theta0: 1.0,
            theta_l,
            t_cap,
            time_tol: 0.25,
            test: CertifyConfig::default(),
            delta_estimate: 1.0,
            tau_count: 32,
            path: PathConfig::default(),
            seed: 0,
            verify: false,
        }
    }

    pub fn theta(&self, s: f64) -> f64 {
        self.theta0 + (self.theta_l - self.theta0) * s
    }
}

/// Certifies that the state overlaps the ground state of `terms` by at
/// least `theta`, from Bell-pair outcomes with success probability
/// `(3 + E2) / 4`.
struct Certifier<'a> {
    cfg: &'a ProfileConfig,
    terms: HamiltonianTerms,
    spectral: Option<SpectralCache>,
}

struct Certificate {
    pass: bool,
    samples: usize,
    e2: f64,
}

impl Certifier<'_> {
    fn e2<R: Register, G: rand::Rng>(&self, state: &R, rng: &mut G) -> Result<f64> {
        let taus: Vec<f64> = match &self.spectral {
            Some(_) => (1..=DEFAULT_K_MAX).map(|l| std::f64::consts::PI * l as f64 / self.cfg.delta_estimate).collect(),
            None => (0..self.cfg.tau_count)
                .map(|_| sample_tau(self.cfg.delta_estimate, DEFAULT_K_MAX, rng))
                .collect::<Result<_>>()?,
        };
        let alphas = mixture_alphas(std::slice::from_ref(state), &self.terms, self.spectral.as_ref(), &taus, &self.cfg.path.step())?;
        Ok((alphas.iter().map(|a| a.norm_sqr()).sum::<f64>() / alphas.len() as f64).clamp(0.0, 1.0))
    }

    fn certify<R: Register, G: rand::Rng>(&self, state: &R, theta: f64, rng: &mut G) -> Result<Certificate> {
        let e2 = self.e2(state, rng)?;
        let q = (3.0 + e2) / 4.0;
        let h0 = (3.0 + e2_threshold(theta)?) / 4.0;
        let b = self.cfg.test.prior_failures;
        let test = TestConfig {
            prior: BetaPosterior::new(b * h0 / (1.0 - h0), b)?,
            h0,
            epsilon: self.cfg.test.epsilon.min((1.0 - h0) / 2.0),
            alpha_threshold: self.cfg.test.alpha_threshold,
            max_samples: self.cfg.test.max_samples,
        };
        let d = decide_simulated(q, &test, rng)?;
        let pass = match d.verdict {
            Verdict::Accept => true,
            Verdict::Reject => false,
            Verdict::Undecided => d.posterior.mean() >= test.h0,
        };
        Ok(Certificate {
            pass,
            samples: d.samples_used,
            e2,
        })
    }
}

/// Chooses each chunk time in turn: test at the cap, then bisect down to
/// the shortest certified time. Chunks that fail at the cap keep the cap
/// and are flagged.
pub fn run_profile_vqaa<B: Backend + Sync>(backend: &B, cfg: &ProfileConfig) -> Result<OptimizationTrace> {
    check_chunks(cfg.num_chunks, cfg.t_cap)?;
    if !(cfg.theta0 > 0.0 && cfg.theta0 <= 1.0) {
        return Err(invalid("theta0", format!("{} is outside (0, 1]", cfg.theta0)));
    }
    if !(cfg.theta_l > 0.0 && cfg.theta_l < 1.0) {
        return Err(invalid("thetaL", format!("{} is outside (0, 1)", cfg.theta_l)));
    }
    if !(cfg.time_tol > 0.0) || !(cfg.delta_estimate > 0.0) || cfg.tau_count == 0 {
        return Err(invalid("profile", "time_tol, delta_estimate and tau_count must be positive"));
    }
    TestConfig {
        prior: BetaPosterior::new(cfg.test.prior_failures, cfg.test.prior_failures)?,
        h0: 0.5,
        epsilon: cfg.test.epsilon,
        alpha_threshold: cfg.test.alpha_threshold,
        max_samples: cfg.test.max_samples,
    }
    .validate()?;
    let prob = Problem::new(backend, &cfg.params, cfg.path)?;
    let l = cfg.num_chunks;
    let lengths = crate::evolve::naive_schedule(l, 1.0)?.chunk_lengths();
    let mut bounds = vec![0.0];
    for x in &lengths {
        bounds.push(bounds.last().unwrap() + x);
    }
    bounds[l] = 1.0;
    let step = cfg.path.step();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TraceLog::default();
    let mut times: Vec<f64> = Vec::with_capacity(l);
    let mut flags = Vec::new();
    let mut chunks = Vec::with_capacity(l);
    let mut state = prob.psi0.clone();
    for i in 0..l {
        let (sa, sb) = (bounds[i], bounds[i + 1]);
        let theta = cfg.theta(sb);
        let terms = prob.terms_at(sb)?;
        let spectral = if cfg.params.num_sites <= SPECTRAL_SITE_LIMIT {
            Some(SpectralCache::new(&terms)?)
        } else {
            None
        };
        let cert = Certifier {
            cfg,
            terms,
            spectral,
        };
        let mut tests = 0;
        let mut run = |t: f64, log: &mut TraceLog, rng: &mut ChaCha8Rng| -> Result<(bool, f64, B::State)> {
            let mut st = state.clone();
            evolve_chunk(&mut st, &prob.h0, &prob.ht, sa, sb, t, &step)?;
            let c = cert.certify(&st, theta, rng)?;
            let est = ground_population_bound(c.e2)?.sqrt();
            let mut ts = times.clone();
            ts.push(t);
            ts.resize(l, 0.0);
            log.record(i, &lengths, &ts, est, c.samples as u64, Vec::new());
            tests += 1;
            Ok((c.pass, est, st))
        };
        let (pass_cap, est_cap, st_cap) = run(cfg.t_cap, &mut log, &mut rng)?;
        let (time, est, next) = if !pass_cap {
            flags.push(RunFlag::ChunkAtCap { chunk: i });
            (cfg.t_cap, est_cap, st_cap)
        } else {
            let (mut lo, mut hi) = (0.0, cfg.t_cap);
            let mut best = (est_cap, st_cap);
            while hi - lo > cfg.time_tol {
                let mid = 0.5 * (lo + hi);
                let (pass, est, st) = run(mid, &mut log, &mut rng)?;
                if pass {
                    hi = mid;
                    best = (est, st);
                } else {
                    lo = mid;
                }
            }
            (hi, best.0, best.1)
        };
        state = next;
        times.push(time);
        let oracle_overlap = if cfg.verify {
            Some(normalized_overlap(&prob.ground(sb)?, &state)?)
        } else {
            None
        };
        chunks.push(ProfileChunk {
            chunk: i,
            s: sb,
            theta,
            time,
            tests,
            certified: pass_cap,
            estimate: est,
            oracle_overlap,
        });
    }
    let sched = cfg.path.schedule(&lengths, &times)?;
    let final_fidelity = if cfg.verify {
        chunks.last().and_then(|c| c.oracle_overlap)
    } else {
        None
    };
    let final_estimate = chunks.last().map_or(0.0, |c| c.estimate);
    Ok(OptimizationTrace {
        objective_kind: ObjectiveKind::ProfileFollow,
        baseline_objective: log.rows[0].objective,
        rows: log.rows,
        best: sched.clone(),
        best_objective: final_estimate,
        last: sched,
        final_fidelity,
        flags,
        profile: chunks,
    })
}

// ---------------------------------------------------------------------------
// Vanishing chunks as rotations

/// Final state of `sched` with chunk `chunk` replaced by the exact rotation
/// `exp(-i T H(s))` at the chunk's end point `s`.
pub fn evolve_with_rotation<R: Register>(state: &mut R, h0: &HamiltonianTerms, ht: &HamiltonianTerms, sched: &Schedule, chunk: usize) -> Result<()> {
    let l = sched.num_chunks();
    if chunk >= l {
        return Err(invalid("chunk", format!("{chunk} out of range for {l} chunks")));
    }
    let b = sched.boundaries();
    let step = StepConfig::from_schedule(sched);
    for (j, c) in sched.chunks.iter().enumerate() {
        if j == chunk {
            state.propagate_exact(&interpolate(h0, ht, b[j + 1])?, c.t)?;
        } else {
            evolve_chunk(state, h0, ht, b[j], b[j + 1], c.t, &step)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationCheck {
    pub chunk: usize,
    pub s_len: f64,
    pub original: f64,
    pub replaced: f64,
}

impl RotationCheck {
    pub fn change(&self) -> f64 {
        (self.original - self.replaced).abs()
    }
}

/// Final fidelity of `sched` with and without its shortest chunk replaced
/// by an exact rotation.
pub fn rotation_check<B: Backend>(backend: &B, params: &ModelParams, sched: &Schedule) -> Result<RotationCheck> {
    let prob = Problem::new(
        backend,
        params,
        PathConfig {
            ramp: sched.ramp,
            dt: sched.dt,
            substeps: sched.trotter_substeps,
        },
    )?;
    let lens = sched.chunk_lengths();
    let chunk = (0..lens.len()).min_by(|&a, &b| lens[a].total_cmp(&lens[b])).unwrap_or(0);
    let gs = prob.ground(1.0)?;
    let original = normalized_overlap(&gs, &prob.forward(sched)?)?;
    let mut st = prob.psi0.clone();
    evolve_with_rotation(&mut st, &prob.h0, &prob.ht, sched, chunk)?;
    Ok(RotationCheck {
        chunk,
        s_len: lens[chunk],
        original,
        replaced: normalized_overlap(&gs, &st)?,
    })
}

#[cfg(test)]
mod tests;
