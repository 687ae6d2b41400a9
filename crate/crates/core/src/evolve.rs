//! Trotterized adiabatic evolution under chunked schedules.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hamiltonian::{interpolate_unchecked, ramp_unchecked, HamiltonianTerms, RampKind};
use crate::linalg::{expm_hermitian4, C64};
use crate::statevector::Register;

pub const DEFAULT_DT: f64 = 1.0 / 16.0;
pub const DEFAULT_SUBSTEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub s_len: f64,
    pub t: f64,
}

/// `L` chunks of the adiabatic path with their lengths and evolution times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub chunks: Vec<Chunk>,
    #[serde(default)]
    pub ramp: RampKind,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "K", default = "default_substeps")]
    pub trotter_substeps: usize,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

impl Schedule {
    pub fn new(chunk_lengths: &[f64], chunk_times: &[f64]) -> Result<Self> {
        if chunk_lengths.len() != chunk_times.len() {
            return Err(invalid(
                "chunk_times",
                format!("{} lengths but {} times", chunk_lengths.len(), chunk_times.len()),
            ));
        }
        let s = Self {
            chunks: chunk_lengths
                .iter()
                .zip(chunk_times)
                .map(|(&s_len, &t)| Chunk { s_len, t })
                .collect(),
            ramp: RampKind::Linear,
            dt: DEFAULT_DT,
            trotter_substeps: DEFAULT_SUBSTEPS,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_ramp(mut self, ramp: RampKind) -> Self {
        self.ramp = ramp;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        self.dt = dt;
        self.validate()?;
        Ok(self)
    }

    pub fn with_substeps(mut self, k: usize) -> Result<Self> {
        self.trotter_substeps = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunks.is_empty() {
            return Err(invalid("chunks", "schedule needs at least one chunk"));
        }
        let total: f64 = self.chunks.iter().map(|c| c.s_len).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("chunk_lengths", format!("lengths sum to {total}, expected 1")));
        }
        for (i, c) in self.chunks.iter().enumerate() {
            if !(c.s_len >= 0.0) {
                return Err(invalid("chunk_lengths", format!("chunk {i} has negative length {}", c.s_len)));
            }
            if !(c.t > 0.0) || !c.t.is_finite() {
                return Err(invalid("chunk_times", format!("chunk {i} has nonpositive time {}", c.t)));
            }
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", format!("{} is not a positive time step", self.dt)));
        }
        if self.trotter_substeps == 0 {
            return Err(invalid("K", "needs at least one substep"));
        }
        Ok(())
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn chunk_lengths(&self) -> Vec<f64> {
        self.chunks.iter().map(|c| c.s_len).collect()
    }

    pub fn chunk_times(&self) -> Vec<f64> {
        self.chunks.iter().map(|c| c.t).collect()
    }

    pub fn total_time(&self) -> f64 {
        self.chunks.iter().map(|c| c.t).sum()
    }

    /// Chunk end points `s_0 = 0, s_1, ..., s_L = 1`.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.chunks.len() + 1);
        b.push(0.0);
        let mut acc = 0.0;
        for c in &self.chunks {
            acc += c.s_len;
            b.push(acc.min(1.0));
        }
        let last = b.len() - 1;
        b[last] = 1.0;
        b
    }

    /// A copy with every chunk time multiplied by `factor`.
    pub fn scaled_times(&self, factor: f64) -> Self {
        let mut s = self.clone();
        for c in s.chunks.iter_mut() {
            c.t *= factor;
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Equal chunk lengths and equal chunk times.
pub fn naive_schedule(num_chunks: usize, total_time: f64) -> Result<Schedule> {
    if num_chunks == 0 {
        return Err(invalid("L", "needs at least one chunk"));
    }
    if !(total_time > 0.0) {
        return Err(invalid("total_time", "must be positive"));
    }
    let l = num_chunks as f64;
    let mut lengths = vec![1.0 / l; num_chunks];
    // make the sum exact
    let head: f64 = lengths[..num_chunks - 1].iter().sum();
    lengths[num_chunks - 1] = 1.0 - head;
    Schedule::new(&lengths, &vec![total_time / l; num_chunks])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

/// How a single time step with frozen Hamiltonian is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Propagator {
    /// Second-order even/odd splitting into two-site gates.
    #[default]
    Trotter,
    /// Exact exponential of the frozen Hamiltonian (dense registers only).
    Exact,
}

/// Step parameters shared by every chunk of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub ramp: RampKind,
    pub dt: f64,
    pub substeps: usize,
    pub propagator: Propagator,
}

impl StepConfig {
    pub fn from_schedule(s: &Schedule) -> Self {
        Self {
            ramp: s.ramp,
            dt: s.dt,
            substeps: s.trotter_substeps,
            propagator: Propagator::Trotter,
        }
    }

    pub fn with_propagator(mut self, p: Propagator) -> Self {
        self.propagator = p;
        self
    }
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            ramp: RampKind::Linear,
            dt: DEFAULT_DT,
            substeps: DEFAULT_SUBSTEPS,
            propagator: Propagator::Trotter,
        }
    }
}

fn gates(bonds: &[Matrix4<C64>], parity: usize, tau: f64) -> Vec<(usize, Matrix4<C64>)> {
    bonds
        .iter()
        .enumerate()
        .skip(parity)
        .step_by(2)
        .map(|(i, h)| (i, expm_hermitian4(h, tau)))
        .collect()
}

fn apply_layer<R: Register>(state: &mut R, layer: &[(usize, Matrix4<C64>)], reverse: bool) -> Result<f64> {
    let mut w = 0.0;
    if reverse {
        for (site, g) in layer.iter().rev() {
            w += state.apply_two_site(g, *site)?;
        }
    } else {
        for (site, g) in layer {
            w += state.apply_two_site(g, *site)?;
        }
    }
    Ok(w)
}

/// One step `exp(-i dt H)` by the `K`-fold second-order even/odd splitting
/// `[E(h/2) O(h) E(h/2)]^K` with `h = dt / K`; adjacent half layers are
/// merged. A negative `dt` applies the exact inverse sequence.
pub(crate) fn trotter_step_signed<R: Register>(state: &mut R, terms: &HamiltonianTerms, dt: f64, substeps: usize) -> Result<f64> {
    let bonds = terms.bond_operators();
    let h = dt / substeps as f64;
    let half_even = gates(&bonds, 0, h / 2.0);
    let full_even = gates(&bonds, 0, h);
    let full_odd = gates(&bonds, 1, h);
    let mut w = 0.0;
    let mut reverse = false;
    w += apply_layer(state, &half_even, reverse)?;
    for k in 0..substeps {
        reverse = !reverse;
        w += apply_layer(state, &full_odd, reverse)?;
        reverse = !reverse;
        if k + 1 < substeps {
            w += apply_layer(state, &full_even, reverse)?;
        } else {
            w += apply_layer(state, &half_even, reverse)?;
        }
    }
    Ok(w)
}

/// Applies one Trotter step of length `dt` under fixed `terms`.
pub fn trotter_step<R: Register>(state: &mut R, terms: &HamiltonianTerms, dt: f64, substeps: usize) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    if substeps == 0 {
        return Err(invalid("K", "needs at least one substep"));
    }
    trotter_step_signed(state, terms, dt, substeps)
}

/// Step lengths for a chunk: full steps of `dt` and a final remainder.
pub fn step_lengths(time: f64, dt: f64) -> Vec<f64> {
    let n_full = (time / dt).floor() as usize;
    let mut steps = vec![dt; n_full];
    let rem = time - n_full as f64 * dt;
    if rem > dt * 1e-9 {
        steps.push(rem);
    } else if n_full == 0 {
        steps.push(time);
    }
    steps
}

/// Evolves `state` across one chunk.
///
/// Step `m` freezes the Hamiltonian at the ramp value of the step midpoint.
/// `sign = -1` together with `mirrored = true` runs the exact inverse of the
/// forward chunk `(s_end, s_start)`. The hook runs after every step.
#[allow(clippy::too_many_arguments)]
pub(crate) fn evolve_chunk_with<R: Register>(
    state: &mut R,
    h0: &HamiltonianTerms,
    ht: &HamiltonianTerms,
    s_start: f64,
    s_end: f64,
    time: f64,
    cfg: &StepConfig,
    sign: f64,
    mirrored: bool,
    hook: &mut dyn FnMut(&mut R) -> Result<()>,
) -> Result<f64> {
    if !(time > 0.0) || !time.is_finite() {
        return Err(invalid("time", format!("{time} is not a positive chunk time")));
    }
    for (name, v) in [("s_start", s_start), ("s_end", s_end)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(name, format!("{v} is outside [0, 1]")));
        }
    }
    let mut steps = step_lengths(time, cfg.dt);
    if mirrored {
        steps.reverse();
    }
    let mut elapsed = 0.0;
    let mut discarded = 0.0;
    for dt_m in steps {
        let u = ((elapsed + dt_m / 2.0) / time).clamp(0.0, 1.0);
        let lam = ramp_unchecked(cfg.ramp, u, s_start, s_end).clamp(0.0, 1.0);
        let terms = interpolate_unchecked(h0, ht, lam)?;
        match cfg.propagator {
            Propagator::Trotter => discarded += trotter_step_signed(state, &terms, sign * dt_m, cfg.substeps)?,
            Propagator::Exact => state.propagate_exact(&terms, sign * dt_m)?,
        }
        hook(state)?;
        elapsed += dt_m;
    }
    Ok(discarded)
}

/// Evolves `state` along the path from `s_start` to `s_end` in `time`.
/// Equal end points apply the rotation `exp(-i time H(s_start))`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_chunk<R: Register>(
    state: &mut R,
    h0: &HamiltonianTerms,
    ht: &HamiltonianTerms,
    s_start: f64,
    s_end: f64,
    time: f64,
    cfg: &StepConfig,
) -> Result<f64> {
    evolve_chunk_with(state, h0, ht, s_start, s_end, time, cfg, 1.0, false, &mut |_| Ok(()))
}

/// Forward: chunks `0..=stop` in order. Backward: chunks `stop..=0` with
/// reversed end points and the schedule's own times, each chunk the exact
/// inverse sequence of the matching forward chunk.
pub fn evolve_schedule<R: Register>(
    state: &mut R,
    h0: &HamiltonianTerms,
    ht: &HamiltonianTerms,
    sched: &Schedule,
    direction: Direction,
    stop_chunk: Option<usize>,
    propagator: Propagator,
) -> Result<f64> {
    evolve_schedule_with(state, h0, ht, sched, direction, stop_chunk, propagator, &mut |_| Ok(()))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn evolve_schedule_with<R: Register>(
    state: &mut R,
    h0: &HamiltonianTerms,
    ht: &HamiltonianTerms,
    sched: &Schedule,
    direction: Direction,
    stop_chunk: Option<usize>,
    propagator: Propagator,
    hook: &mut dyn FnMut(&mut R) -> Result<()>,
) -> Result<f64> {
    sched.validate()?;
    let l = sched.num_chunks();
    let stop = stop_chunk.unwrap_or(l - 1);
    if stop >= l {
        return Err(invalid("stop_chunk", format!("{stop} out of range for {l} chunks")));
    }
    let cfg = StepConfig::from_schedule(sched).with_propagator(propagator);
    let b = sched.boundaries();
    let mut discarded = 0.0;
    match direction {
        Direction::Forward => {
            for j in 0..=stop {
                discarded += evolve_chunk_with(state, h0, ht, b[j], b[j + 1], sched.chunks[j].t, &cfg, 1.0, false, hook)?;
            }
        }
        Direction::Backward => {
            for j in (0..=stop).rev() {
                discarded += evolve_chunk_with(state, h0, ht, b[j + 1], b[j], sched.chunks[j].t, &cfg, -1.0, true, hook)?;
            }
        }
    }
    Ok(discarded)
}

/// Evolves back from `s_from` to 0 in a single chunk of length `time`.
pub fn evolve_back_constant<R: Register>(
    state: &mut R,
    h0: &HamiltonianTerms,
    ht: &HamiltonianTerms,
    s_from: f64,
    time: f64,
    cfg: &StepConfig,
) -> Result<f64> {
    evolve_chunk_with(state, h0, ht, s_from, 0.0, time, cfg, -1.0, true, &mut |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::exact::ground_state;
    use crate::hamiltonian::{build_zzxz, interpolate, ModelParams};
    use crate::mps::Mps;
    use crate::statevector::{minus_states, StateVector};
    use approx::assert_abs_diff_eq;

    fn setup(n: usize, j: f64) -> (HamiltonianTerms, HamiltonianTerms) {
        build_zzxz(&ModelParams::new(n, j, 1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn naive_schedule_examples() {
        let s = naive_schedule(5, 1.0).unwrap();
        for c in &s.chunks {
            assert_abs_diff_eq!(c.s_len, 0.2, epsilon = 1e-15);
            assert_abs_diff_eq!(c.t, 0.2, epsilon = 1e-15);
        }
        let s = naive_schedule(1, 7.0).unwrap();
        assert_eq!(s.boundaries(), vec![0.0, 1.0]);
        assert_eq!(s.chunks[0].t, 7.0);
        let s = naive_schedule(3, 3.0).unwrap();
        let b = s.boundaries();
        assert_abs_diff_eq!(b[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[2], 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(b[3], 1.0);
        assert_eq!(s.dt, 0.0625);
        assert_eq!(s.trotter_substeps, 2);
    }

    #[test]
    fn schedule_validation_and_json_round_trip() {
        assert!(Schedule::new(&[0.5, 0.4], &[1.0, 1.0]).is_err());
        assert!(Schedule::new(&[0.5, 0.5], &[1.0, 0.0]).is_err());
        assert!(Schedule::new(&[1.2, -0.2], &[1.0, 1.0]).is_err());
        let s = Schedule::new(&[0.0, 1.0], &[1.0, 2.0]).unwrap().with_ramp(RampKind::Smooth);
        let text = s.to_json().unwrap();
        assert!(text.contains("\"s_len\"") && text.contains("\"K\""));
        assert_eq!(Schedule::from_json(&text).unwrap(), s);
    }

    #[test]
    fn step_lengths_keep_total_time() {
        assert_eq!(step_lengths(0.25, 0.0625).len(), 4);
        let s = step_lengths(0.3, 0.0625);
        assert_eq!(s.len(), 5);
        assert_abs_diff_eq!(s.iter().sum::<f64>(), 0.3, epsilon = 1e-15);
        assert_eq!(step_lengths(0.01, 0.0625), vec![0.01]);
    }

    #[test]
    fn commuting_terms_are_exact() {
        let (h0, _) = setup(6, 2.0);
        let mut s = StateVector::product_state(&[[C64::new(0.6, 0.1), C64::new(0.3, -0.7)]; 6]).unwrap();
        let mut exact = s.clone();
        trotter_step(&mut s, &h0, 0.37, 2).unwrap();
        exact.propagate_exact(&h0, 0.37).unwrap();
        assert_abs_diff_eq!(s.fidelity(&exact), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn fixed_hamiltonian_matches_exponential() {
        let (h0, ht) = setup(8, 2.0);
        let terms = interpolate(&h0, &ht, 0.5).unwrap();
        let mut trot = StateVector::product_state(&minus_states(8)).unwrap();
        let mut exact = trot.clone();
        let cfg = StepConfig::default();
        evolve_chunk(&mut trot, &h0, &ht, 0.5, 0.5, 5.0, &cfg).unwrap();
        exact.propagate_exact(&terms, 5.0).unwrap();
        assert!(trot.fidelity(&exact) >= 1.0 - 1e-4);
    }

    #[test]
    fn eigenstate_rotation_is_a_phase() {
        let (h0, ht) = setup(6, 3.0);
        let (_, gs) = ground_state(&ht).unwrap();
        let gs = StateVector::new(6, gs).unwrap();
        let mut s = gs.clone();
        let cfg = StepConfig::default().with_propagator(Propagator::Exact);
        evolve_chunk(&mut s, &h0, &ht, 1.0, 1.0, 3.3, &cfg).unwrap();
        assert_abs_diff_eq!(s.fidelity(&gs), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn slow_naive_path_reaches_the_ground_state() {
        let (h0, ht) = setup(8, 1.0);
        let (_, gs) = ground_state(&ht).unwrap();
        let gs = StateVector::new(8, gs).unwrap();
        let mut s = StateVector::product_state(&minus_states(8)).unwrap();
        let sched = naive_schedule(1, 50.0).unwrap();
        evolve_schedule(&mut s, &h0, &ht, &sched, Direction::Forward, None, Propagator::Trotter).unwrap();
        assert!(s.fidelity(&gs) > 0.9, "{}", s.fidelity(&gs));
    }

    #[test]
    fn forward_then_inverse_returns_initial_state() {
        let (h0, ht) = setup(6, 2.0);
        let psi0 = StateVector::product_state(&minus_states(6)).unwrap();
        let sched = Schedule::new(&[0.3, 0.0, 0.7], &[0.9, 0.4, 1.37]).unwrap().with_ramp(RampKind::Smooth);
        let mut s = psi0.clone();
        evolve_schedule(&mut s, &h0, &ht, &sched, Direction::Forward, None, Propagator::Trotter).unwrap();
        assert!(s.fidelity(&psi0) < 0.999);
        evolve_schedule(&mut s, &h0, &ht, &sched, Direction::Backward, None, Propagator::Trotter).unwrap();
        assert_abs_diff_eq!(s.fidelity(&psi0), 1.0, epsilon = 1e-12);

        let mut m = Mps::product_state(&minus_states(6)).unwrap();
        evolve_schedule(&mut m, &h0, &ht, &sched, Direction::Forward, None, Propagator::Trotter).unwrap();
        evolve_schedule(&mut m, &h0, &ht, &sched, Direction::Backward, None, Propagator::Trotter).unwrap();
        let f = m.to_dense().unwrap().fidelity(&psi0);
        assert!(f >= 1.0 - 10.0 * m.cum_truncation() - 1e-12);
    }

    #[test]
    fn schedule_equals_sequential_chunks() {
        let (h0, ht) = setup(5, 3.0);
        let sched = Schedule::new(&[0.25, 0.5, 0.25], &[0.7, 1.1, 0.5]).unwrap();
        let mut a = StateVector::product_state(&minus_states(5)).unwrap();
        evolve_schedule(&mut a, &h0, &ht, &sched, Direction::Forward, None, Propagator::Trotter).unwrap();
        let mut b = StateVector::product_state(&minus_states(5)).unwrap();
        let cfg = StepConfig::from_schedule(&sched);
        let bd = sched.boundaries();
        for j in 0..3 {
            evolve_chunk(&mut b, &h0, &ht, bd[j], bd[j + 1], sched.chunks[j].t, &cfg).unwrap();
        }
        assert_eq!(a, b);
        assert!(evolve_schedule(&mut a, &h0, &ht, &sched, Direction::Forward, Some(3), Propagator::Trotter).is_err());
    }

    #[test]
    fn longer_time_gives_higher_fidelity() {
        let (h0, ht) = setup(6, 3.0);
        let (_, gs) = ground_state(&ht).unwrap();
        let gs = StateVector::new(6, gs).unwrap();
        let fid = |t: f64| {
            let mut s = StateVector::product_state(&minus_states(6)).unwrap();
            evolve_schedule(&mut s, &h0, &ht, &naive_schedule(1, t).unwrap(), Direction::Forward, None, Propagator::Trotter)
                .unwrap();
            s.fidelity(&gs)
        };
        assert!(fid(100.0) > fid(20.0));
    }

    #[test]
    fn rejects_bad_chunk_arguments() {
        let (h0, ht) = setup(4, 1.0);
        let mut s = StateVector::product_state(&minus_states(4)).unwrap();
        let cfg = StepConfig::default();
        assert!(evolve_chunk(&mut s, &h0, &ht, 0.0, 1.0, 0.0, &cfg).is_err());
        assert!(evolve_chunk(&mut s, &h0, &ht, 0.0, 1.2, 1.0, &cfg).is_err());
    }
}
