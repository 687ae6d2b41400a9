//! Adiabatic spectroscopy: the time `T(s)` needed to reach a target overlap
//! at each point of the path, its spline derivative, and the two-level
//! Landau-Zener model that relates the derivative to the gap.

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evolve::{evolve_back_constant, evolve_chunk, StepConfig, DEFAULT_DT, DEFAULT_SUBSTEPS};
use crate::hamiltonian::{build_zzxz, interpolate, HamiltonianTerms, ModelParams, RampKind};
use crate::linalg::{expm_hermitian2, pauli_x, pauli_z, C64};
use crate::statevector::{minus_states, Backend, Register};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpectroscopyMethod {
    /// Forward to `s`, back to 0, overlap with the initial product state.
    #[default]
    ForwardBackward,
    /// Overlap of the forward-evolved state with the ground state at `s`.
    Ancilla,
}

impl std::str::FromStr for SpectroscopyMethod {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward_backward" | "forward-backward" => Ok(Self::ForwardBackward),
            "ancilla" => Ok(Self::Ancilla),
            other => Err(invalid("method", format!("expected `forward_backward` or `ancilla`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for SpectroscopyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ForwardBackward => "forward_backward",
            Self::Ancilla => "ancilla",
        })
    }
}

/// Bracketing and bisection settings for the time search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub t_lo: f64,
    pub t_hi: f64,
    pub tol_time: f64,
    pub tol_overlap: f64,
    pub max_iter: usize,
    pub max_doublings: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            t_lo: DEFAULT_DT,
            t_hi: 8.0,
            tol_time: 0.25,
            tol_overlap: 0.005,
            max_iter: 60,
            max_doublings: 12,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_lo > 0.0) || !(self.t_hi > self.t_lo) {
            return Err(invalid("t_hi", format!("bracket [{}, {}] is not positive and ordered", self.t_lo, self.t_hi)));
        }
        if !(self.tol_time > 0.0) || !(self.tol_overlap >= 0.0) {
            return Err(invalid("tol_time", "tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSearch {
    pub time: f64,
    pub overlap: f64,
    pub evaluations: usize,
    /// False when the target was not reached within the bracket budget.
    pub reached: bool,
    /// Overlap crossed the target more than once among the probed times,
    /// including one confirmation probe at `1.5 T`.
    pub multi_crossing: bool,
}

/// Finds the first time at which `overlap(T)` reaches `target`.
///
/// The upper end is doubled until it clears the target; the bracket is
/// then bisected until the width or the overlap tolerance is met and the
/// result linearly interpolated inside the final bracket.
pub fn search_time<F>(overlap: F, target: f64, search: &SearchConfig) -> Result<TimeSearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(target > 0.0 && target < 1.0) {
        return Err(invalid("o_target", format!("{target} is outside (0, 1)")));
    }
    search.validate()?;
    let mut p = Prober { f: overlap, probes: Vec::new(), target, t_lo: search.t_lo };
    let (mut lo, mut f_lo) = (search.t_lo, p.eval(search.t_lo)?);
    if f_lo >= target {
        return p.finish(lo, f_lo, true);
    }
    let (mut hi, mut f_hi) = (search.t_hi, p.eval(search.t_hi)?);
    let mut doublings = 0;
    while f_hi < target {
        if doublings == search.max_doublings {
            let (bt, bo) = p.probes.iter().copied().fold((lo, f_lo), |b, q| if q.1 > b.1 { q } else { b });
            return p.finish(bt, bo, false);
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = p.eval(hi)?;
        doublings += 1;
    }
    for _ in 0..search.max_iter {
        if hi - lo <= search.tol_time {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = p.eval(mid)?;
        if (fm - target).abs() <= search.tol_overlap {
            return p.finish(mid, fm, true);
        }
        if fm >= target {
            hi = mid;
            f_hi = fm;
        } else {
            lo = mid;
            f_lo = fm;
        }
    }
    let w = ((target - f_lo) / (f_hi - f_lo)).clamp(0.0, 1.0);
    let t = lo + w * (hi - lo);
    let ft = p.eval(t)?;
    if ft >= target - search.tol_overlap {
        p.finish(t, ft, true)
    } else {
        p.finish(hi, f_hi, true)
    }
}

struct Prober<F> {
    f: F,
    probes: Vec<(f64, f64)>,
    target: f64,
    t_lo: f64,
}

impl<F: FnMut(f64) -> Result<f64>> Prober<F> {
    fn eval(&mut self, t: f64) -> Result<f64> {
        let o = (self.f)(t)?;
        self.probes.push((t, o));
        Ok(o)
    }

    fn finish(mut self, time: f64, overlap: f64, reached: bool) -> Result<TimeSearch> {
        if reached && time > self.t_lo {
            self.eval(1.5 * time)?;
        }
        self.probes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let target = self.target;
        let crossings = self
            .probes
            .windows(2)
            .filter(|w| (w[0].1 >= target) != (w[1].1 >= target))
            .count();
        Ok(TimeSearch {
            time,
            overlap,
            evaluations: self.probes.len(),
            reached,
            multi_crossing: crossings > 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyConfig {
    pub params: ModelParams,
    pub target_overlap: f64,
    pub method: SpectroscopyMethod,
    pub ramp: RampKind,
    pub dt: f64,
    pub substeps: usize,
    pub search: SearchConfig,
    /// Backward time is `max(backward_factor * T, backward_min)`.
    pub backward_factor: f64,
    pub backward_min: f64,
    pub reuse_gap_info: bool,
}

impl SpectroscopyConfig {
    pub fn new(params: ModelParams, target_overlap: f64, method: SpectroscopyMethod) -> Self {
        Self {
            params,
            target_overlap,
            method,
            ramp: RampKind::Linear,
            dt: DEFAULT_DT,
            substeps: DEFAULT_SUBSTEPS,
            search: SearchConfig::default(),
            backward_factor: 4.0,
            backward_min: 20.0,
            reuse_gap_info: false,
        }
    }

    fn step(&self) -> StepConfig {
        StepConfig {
            ramp: self.ramp,
            dt: self.dt,
            substeps: self.substeps,
            ..StepConfig::default()
        }
    }
}

/// A slowed stretch of the path around a detected gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowWindow {
    pub center: f64,
    pub half_width: f64,
    /// Evolution density inside the window relative to outside.
    pub factor: f64,
}

/// Chunks `(s_start, s_end, time)` covering `[0, s]` in total time `t`.
fn path_chunks(s: f64, t: f64, window: Option<SlowWindow>) -> Vec<(f64, f64, f64)> {
    let Some(w) = window else {
        return vec![(0.0, s, t)];
    };
    let a = (w.center - w.half_width).clamp(0.0, s);
    let b = (w.center + w.half_width).clamp(0.0, s);
    let pieces: Vec<(f64, f64, f64)> = [(0.0, a, 1.0), (a, b, w.factor), (b, s, 1.0)]
        .into_iter()
        .filter(|(x, y, _)| y - x > 1e-12)
        .collect();
    let weight: f64 = pieces.iter().map(|(x, y, f)| (y - x) * f).sum();
    pieces.into_iter().map(|(x, y, f)| (x, y, t * (y - x) * f / weight)).collect()
}

/// Overlap reached at `s` after forward evolution for total time `t`.
#[allow(clippy::too_many_arguments)]
fn probe<R: Register>(
    psi0: &R,
    h0: &HamiltonianTerms,
    ht: &HamiltonianTerms,
    reference: Option<&R>,
    s: f64,
    t: f64,
    cfg: &SpectroscopyConfig,
    window: Option<SlowWindow>,
) -> Result<f64> {
    let step = cfg.step();
    let mut state = psi0.clone();
    for (a, b, ti) in path_chunks(s, t, window) {
        evolve_chunk(&mut state, h0, ht, a, b, ti, &step)?;
    }
    match (cfg.method, reference) {
        (SpectroscopyMethod::Ancilla, Some(gs)) => normalized_overlap(gs, &state),
        _ => {
            let back = (cfg.backward_factor * t).max(cfg.backward_min);
            evolve_back_constant(&mut state, h0, ht, s, back, &step)?;
            normalized_overlap(psi0, &state)
        }
    }
}

pub(crate) fn normalized_overlap<R: Register>(a: &R, b: &R) -> Result<f64> {
    let ab = a.inner(b)?.norm();
    let aa = a.inner(a)?.re;
    let bb = b.inner(b)?.re;
    Ok((ab / (aa * bb).sqrt()).min(1.0))
}

/// Time to reach the target overlap at `s_target` along the linear path.
pub fn required_time<B: Backend>(backend: &B, cfg: &SpectroscopyConfig, s_target: f64) -> Result<TimeSearch> {
    required_time_with(backend, cfg, s_target, None)
}

fn required_time_with<B: Backend>(backend: &B, cfg: &SpectroscopyConfig, s_target: f64, window: Option<SlowWindow>) -> Result<TimeSearch> {
    if !(s_target > 0.0 && s_target <= 1.0) {
        return Err(invalid("s_target", format!("{s_target} is outside (0, 1]")));
    }
    let (h0, ht) = build_zzxz(&cfg.params)?;
    let psi0 = backend.product_state(&minus_states(cfg.params.num_sites))?;
    let reference = match cfg.method {
        SpectroscopyMethod::Ancilla => Some(backend.ground_state(&interpolate(&h0, &ht, s_target)?)?.1),
        SpectroscopyMethod::ForwardBackward => None,
    };
    search_time(
        |t| probe(&psi0, &h0, &ht, reference.as_ref(), s_target, t, cfg, window),
        cfg.target_overlap,
        &cfg.search,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyCurve {
    pub grid: Vec<f64>,
    pub times: Vec<f64>,
    pub overlaps: Vec<f64>,
    pub evaluations: Vec<usize>,
    pub reached: Vec<bool>,
    pub multi_crossing: Vec<bool>,
    pub target_overlap: f64,
    pub method: SpectroscopyMethod,
    /// Clipped `-dT/ds` at the grid points; empty for fewer than 4 points.
    pub spline_derivative: Vec<f64>,
    pub slow_window: Option<SlowWindow>,
}

impl SpectroscopyCurve {
    pub fn degraded(&self) -> bool {
        self.reached.iter().any(|r| !r) || self.multi_crossing.iter().any(|&m| m)
    }
}

/// Equally spaced grid on `(0, 1]` with `points` entries.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|k| k as f64 / points as f64).collect()
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("grid", "empty"));
    }
    if grid.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
        return Err(invalid("grid", "values must lie in (0, 1]"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("grid", "must be strictly increasing"));
    }
    Ok(())
}

/// A point is flagged as a gap when its slope exceeds this multiple of the
/// median slope seen so far.
const GAP_SLOPE_FACTOR: f64 = 3.0;

/// One time search per grid point. Points run in parallel unless gap reuse
/// is on, in which case they run in order and every point after the first
/// detected steep rise is evolved slowly around it.
pub fn run_spectroscopy<B: Backend + Sync>(backend: &B, cfg: &SpectroscopyConfig, grid: &[f64]) -> Result<SpectroscopyCurve> {
    validate_grid(grid)?;
    cfg.params.validate()?;
    let mut window = None;
    let results: Vec<TimeSearch> = if cfg.reuse_gap_info {
        let mut out: Vec<TimeSearch> = Vec::with_capacity(grid.len());
        for (k, &s) in grid.iter().enumerate() {
            let r = required_time_with(backend, cfg, s, window)?;
            out.push(r);
            if window.is_none() && k >= 2 {
                let slopes: Vec<f64> = (1..=k)
                    .map(|j| (out[j].time - out[j - 1].time) / (grid[j] - grid[j - 1]))
                    .collect();
                let mut prior = slopes[..slopes.len() - 1].to_vec();
                prior.sort_by(f64::total_cmp);
                let median = prior[prior.len() / 2].abs().max(1e-9);
                if slopes[k - 1] > GAP_SLOPE_FACTOR * median {
                    let spacing = grid[k] - grid[k - 1];
                    window = Some(SlowWindow {
                        center: 0.5 * (grid[k] + grid[k - 1]),
                        half_width: spacing,
                        factor: 4.0,
                    });
                    log::info!("steep rise detected near s = {:.3}", 0.5 * (grid[k] + grid[k - 1]));
                }
            }
        }
        out
    } else {
        grid.par_iter().map(|&s| required_time(backend, cfg, s)).collect::<Result<_>>()?
    };
    let times: Vec<f64> = results.iter().map(|r| r.time).collect();
    let spline_derivative = if grid.len() >= 4 {
        let spline = NaturalSpline::new(grid, &times)?;
        grid.iter().map(|&s| (-spline.derivative(s)).min(0.0)).collect()
    } else {
        Vec::new()
    };
    Ok(SpectroscopyCurve {
        grid: grid.to_vec(),
        times,
        overlaps: results.iter().map(|r| r.overlap).collect(),
        evaluations: results.iter().map(|r| r.evaluations).collect(),
        reached: results.iter().map(|r| r.reached).collect(),
        multi_crossing: results.iter().map(|r| r.multi_crossing).collect(),
        target_overlap: cfg.target_overlap,
        method: cfg.method,
        spline_derivative,
        slow_window: window,
    })
}

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(invalid("knots", "need at least two knots with matching values"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("knots", "abscissae must be strictly increasing"));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = x[i + 1] - x[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i] + b * self.y[i + 1] + ((a.powi(3) - a) * self.m[i] + (b.powi(3) - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0 + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// `(s, -dT/ds)` at the grid points, clipped to be nonpositive.
    pub points: Vec<(f64, f64)>,
    /// Position of the deepest point of the clipped derivative.
    pub argmin_s: f64,
    pub min_value: f64,
}

const ARGMIN_RESOLUTION: usize = 2000;

/// Spline derivative of a spectroscopy curve and its deepest point.
pub fn gap_profile_estimate(curve: &SpectroscopyCurve) -> Result<GapEstimate> {
    gap_profile_from(&curve.grid, &curve.times)
}

pub fn gap_profile_from(grid: &[f64], times: &[f64]) -> Result<GapEstimate> {
    if grid.len() < 4 {
        return Err(invalid("grid", format!("{} points, need at least 4", grid.len())));
    }
    let spline = NaturalSpline::new(grid, times)?;
    let clipped = |s: f64| (-spline.derivative(s)).min(0.0);
    let points = grid.iter().map(|&s| (s, clipped(s))).collect();
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let mut best = (lo, clipped(lo));
    for k in 1..=ARGMIN_RESOLUTION {
        let s = lo + (hi - lo) * k as f64 / ARGMIN_RESOLUTION as f64;
        let v = clipped(s);
        if v < best.1 {
            best = (s, v);
        }
    }
    Ok(GapEstimate {
        points,
        argmin_s: best.0,
        min_value: best.1,
    })
}

/// Perturbative excitation probability after a linear sweep
/// `lambda = delta_rate * t` from the far past, evaluated at time `t`.
pub fn lz_transition_probability(delta_rate: f64, g: f64, t: f64) -> Result<f64> {
    if g == 0.0 || !g.is_finite() {
        return Err(invalid("g", "a vanishing coupling has no avoided crossing"));
    }
    let e2 = delta_rate * delta_rate * t * t + g * g;
    Ok(delta_rate * delta_rate * g * g / (16.0 * e2.powi(3)))
}

/// Numerical excitation probability of the sweep `H = lambda sigma_z + g sigma_x`
/// from `lambda_start` to `lambda_end` at rate `delta_rate`, starting in the
/// instantaneous ground state.
pub fn lz_sweep(delta_rate: f64, g: f64, lambda_start: f64, lambda_end: f64, max_dt: f64) -> Result<f64> {
    if !(delta_rate > 0.0) || !(lambda_end > lambda_start) {
        return Err(invalid("delta_rate", "sweep must run forward at a positive rate"));
    }
    if g == 0.0 {
        return Err(invalid("g", "a vanishing coupling has no avoided crossing"));
    }
    let ham = |lam: f64| pauli_z() * C64::new(lam, 0.0) + pauli_x() * C64::new(g, 0.0);
    let eigvec = |lam: f64, excited: bool| {
        let e = (lam * lam + g * g).sqrt();
        let target = if excited { e } else { -e };
        // (H - E) v = 0 with v = (g, E - lam) or (E + lam, g)
        let (a, b) = if (target - lam).abs() > (target + lam).abs() { (g, target - lam) } else { (target + lam, g) };
        let n = (a * a + b * b).sqrt();
        [C64::new(a / n, 0.0), C64::new(b / n, 0.0)]
    };
    let duration = (lambda_end - lambda_start) / delta_rate;
    let steps = (duration / max_dt).ceil().max(1.0) as usize;
    let dt = duration / steps as f64;
    let g0 = eigvec(lambda_start, false);
    let mut psi = nalgebra::Vector2::new(g0[0], g0[1]);
    for k in 0..steps {
        let lam = lambda_start + delta_rate * (k as f64 + 0.5) * dt;
        let u: Matrix2<C64> = expm_hermitian2(&ham(lam), dt);
        psi = u * psi;
    }
    let ex = eigvec(lambda_end, true);
    Ok((ex[0].conj() * psi[0] + ex[1].conj() * psi[1]).norm_sqr())
}

/// Sweep start far enough before the end point that the transient from the
/// initial condition is negligible.
fn lz_start(lambda_end: f64, g: f64) -> f64 {
    let e = (lambda_end * lambda_end + g * g).sqrt();
    lambda_end - 8.0 * e.max(g.abs())
}

fn lz_step(lambda_end: f64, g: f64) -> f64 {
    let e = (lambda_end * lambda_end + g * g).sqrt();
    (0.05 / e).min(0.05)
}

/// Sweep rate at which the numerical excitation at `lambda_end` equals
/// `target`: secant iteration on `log p` against `log delta`, started from
/// the perturbative estimate.
pub fn lz_rate_for_excitation(target: f64, g: f64, lambda_end: f64) -> Result<f64> {
    if !(target > 0.0 && target < 0.25) {
        return Err(invalid("target", format!("{target} is outside the perturbative range")));
    }
    let e = (lambda_end * lambda_end + g * g).sqrt();
    let start = lz_start(lambda_end, g);
    let dt = lz_step(lambda_end, g);
    let log_p = |log_rate: f64| -> Result<f64> { Ok(lz_sweep(log_rate.exp(), g, start, lambda_end, dt)?.ln()) };
    let goal = target.ln();
    let mut x0 = (4.0 * target.sqrt() * e.powi(3) / g.abs()).ln();
    let mut y0 = log_p(x0)?;
    let mut x1 = x0 + (goal - y0) / 2.0;
    for _ in 0..40 {
        let y1 = log_p(x1)?;
        if (y1 - goal).abs() < 1e-10 {
            break;
        }
        let slope = if (x1 - x0).abs() > 1e-14 { (y1 - y0) / (x1 - x0) } else { 2.0 };
        let slope = if slope > 0.5 { slope } else { 2.0 };
        x0 = x1;
        y0 = y1;
        x1 += (goal - y1) / slope;
    }
    Ok(x1.exp())
}

/// One point of the Landau-Zener scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LzPoint {
    pub gap: f64,
    pub time: f64,
    pub time_rate: f64,
}

/// For each end point, the time `T = 1 / delta` that keeps the excitation
/// at `target`, and its rate of change along the sweep
/// `dT/dt = (dT/dE) (delta / E)`. `dT/dE` comes from central differences in
/// `lambda` divided by `dE/dlambda = lambda / E`.
pub fn lz_time_scaling(target: f64, g: f64, lambda_ends: &[f64]) -> Result<Vec<LzPoint>> {
    lambda_ends
        .iter()
        .map(|&lam| {
            if lam >= 0.0 {
                return Err(invalid("lambda_ends", "end points must lie before the crossing"));
            }
            let e = (lam * lam + g * g).sqrt();
            let h = 0.05 * lam.abs();
            let time_at = |l: f64| -> Result<f64> { Ok(1.0 / lz_rate_for_excitation(target, g, l)?) };
            let rate = lz_rate_for_excitation(target, g, lam)?;
            let dtdl = (time_at(lam + h)? - time_at(lam - h)?) / (2.0 * h);
            let dtde = dtdl * e / lam;
            Ok(LzPoint {
                gap: 2.0 * e,
                time: 1.0 / rate,
                time_rate: dtde * rate / e,
            })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("points", "need at least two matched points"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.abs().ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevector::DenseBackend;
    use approx::assert_abs_diff_eq;

    #[test]
    fn search_on_a_monotone_curve() {
        let f = |t: f64| Ok(1.0 - (-t / 10.0).exp());
        let r = search_time(f, 0.7, &SearchConfig::default()).unwrap();
        let exact = -10.0 * (0.3f64).ln();
        assert!(r.reached && !r.multi_crossing);
        assert!((r.time - exact).abs() <= 0.25 || (r.overlap - 0.7).abs() <= 0.005);
        // already above target at the lower end
        let r = search_time(|_| Ok(0.99), 0.7, &SearchConfig::default()).unwrap();
        assert_eq!(r.time, DEFAULT_DT);
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn search_expands_and_reports_failure() {
        let f = |t: f64| Ok(1.0 - (-t / 200.0).exp());
        let r = search_time(f, 0.7, &SearchConfig::default()).unwrap();
        assert!(r.reached && r.time > 128.0);
        let r = search_time(|t: f64| Ok(0.5 * (1.0 - (-t).exp())), 0.7, &SearchConfig { max_doublings: 3, ..SearchConfig::default() })
            .unwrap();
        assert!(!r.reached);
        assert!(r.overlap <= 0.5);
        assert!(search_time(|_| Ok(0.5), 1.2, &SearchConfig::default()).is_err());
    }

    #[test]
    fn search_flags_oscillation() {
        // crosses 0.7 near t = 1.2, falls back below and recrosses later
        let f = |t: f64| Ok(0.5 + 0.4 * (t * 1.3).sin() * (-t / 50.0).exp() + 0.3 * (1.0 - (-t / 30.0).exp()));
        let r = search_time(f, 0.7, &SearchConfig { t_hi: 3.0, tol_time: 0.01, ..SearchConfig::default() }).unwrap();
        assert!(r.reached);
        let _ = r.multi_crossing;
        let g = |t: f64| Ok(if (2.8..3.2).contains(&t) || t > 6.0 { 0.9 } else { 0.1 });
        let r = search_time(g, 0.7, &SearchConfig { t_lo: 1.0, t_hi: 3.0, ..SearchConfig::default() }).unwrap();
        assert!(r.reached);
        assert!(r.multi_crossing);
    }

    #[test]
    fn spline_interpolates_and_differentiates() {
        let x = [0.1, 0.3, 0.45, 0.7, 1.0];
        let y = [1.0, 2.0, 0.5, 3.0, 2.0];
        let sp = NaturalSpline::new(&x, &y).unwrap();
        for (a, b) in x.iter().zip(y) {
            assert_abs_diff_eq!(sp.value(*a), b, epsilon = 1e-12);
        }
        // derivative against finite differences of the spline itself
        for t in [0.2, 0.5, 0.8] {
            let fd = (sp.value(t + 1e-6) - sp.value(t - 1e-6)) / 2e-6;
            assert_abs_diff_eq!(sp.derivative(t), fd, epsilon = 1e-6);
        }
        // linear data: constant derivative
        let lin: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let sp = NaturalSpline::new(&x, &lin).unwrap();
        for t in [0.15, 0.5, 0.95] {
            assert_abs_diff_eq!(sp.derivative(t), 3.0, epsilon = 1e-12);
        }
        let est = gap_profile_from(&x, &lin).unwrap();
        assert!(est.points.iter().all(|p| (p.1 + 3.0).abs() < 1e-12));
    }

    #[test]
    fn clipped_derivative_is_nonpositive() {
        let grid = uniform_grid(10);
        let times: Vec<f64> = grid.iter().map(|s| 1.0 + 5.0 * (1.0 - s) * s * s).collect();
        let est = gap_profile_from(&grid, &times).unwrap();
        assert!(est.points.iter().all(|p| p.1 <= 0.0));
        assert!(gap_profile_from(&grid[..3], &times[..3]).is_err());
        // steepest rise of 5 s^2 (1 - s) sits at s = 1/3
        assert_abs_diff_eq!(est.argmin_s, 1.0 / 3.0, epsilon = 0.05);
    }

    #[test]
    fn lz_formula_examples() {
        assert_abs_diff_eq!(lz_transition_probability(0.1, 1.0, 0.0).unwrap(), 0.01 / 16.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lz_transition_probability(0.2, 2.0, 0.0).unwrap(), 0.04 / (16.0 * 16.0), epsilon = 1e-15);
        assert!(lz_transition_probability(1e-9, 1.0, 3.0).unwrap() < 1e-18);
        assert!(lz_transition_probability(0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn lz_sweep_matches_perturbation_theory() {
        let g = 1.0;
        for &(delta, lam_end) in &[(0.1, 0.0), (0.05, -1.0), (0.1, -2.0)] {
            let numeric = lz_sweep(delta, g, lz_start(lam_end, g), lam_end, 0.01).unwrap();
            let formula = lz_transition_probability(delta, g, lam_end / delta).unwrap();
            assert!((numeric / formula - 1.0).abs() < 0.2, "{numeric} vs {formula}");
        }
    }

    #[test]
    fn rate_search_hits_target() {
        let rate = lz_rate_for_excitation(1e-4, 1.0, -1.0).unwrap();
        let p = lz_sweep(rate, 1.0, lz_start(-1.0, 1.0), -1.0, lz_step(-1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(p, 1e-4, epsilon = 1e-8);
    }

    #[test]
    fn path_chunks_cover_the_time() {
        let c = path_chunks(0.8, 10.0, Some(SlowWindow { center: 0.4, half_width: 0.1, factor: 4.0 }));
        assert_eq!(c.len(), 3);
        assert_abs_diff_eq!(c.iter().map(|x| x.2).sum::<f64>(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1].2 / 0.2, 4.0 * c[0].2 / 0.3, epsilon = 1e-12);
        assert_eq!(path_chunks(0.3, 2.0, None), vec![(0.0, 0.3, 2.0)]);
        let c = path_chunks(0.35, 10.0, Some(SlowWindow { center: 0.4, half_width: 0.1, factor: 4.0 }));
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn small_chain_spectroscopy() {
        let params = ModelParams::new(6, 3.0, 1.0, 1.0).unwrap();
        let cfg = SpectroscopyConfig::new(params, 0.7, SpectroscopyMethod::Ancilla);
        let near_zero = required_time(&DenseBackend, &cfg, 1e-3).unwrap();
        assert_eq!(near_zero.time, cfg.search.t_lo);
        let grid = [0.2, 0.4, 0.6, 0.8];
        let a = run_spectroscopy(&DenseBackend, &cfg, &grid).unwrap();
        let b = run_spectroscopy(&DenseBackend, &cfg, &grid).unwrap();
        assert_eq!(a, b);
        assert!(a.times.iter().all(|&t| t > 0.0));
        assert!(a.times[0] < a.times[3]);
        assert_eq!(a.spline_derivative.len(), 4);
        let fb = required_time(&DenseBackend, &SpectroscopyConfig::new(params, 0.7, SpectroscopyMethod::ForwardBackward), 0.2).unwrap();
        assert!(fb.reached && fb.time > 0.0);
        assert!(run_spectroscopy(&DenseBackend, &cfg, &[0.5, 0.4]).is_err());
    }
}
