//! Discrete Pauli noise along Trotterized trajectories.
//!
//! A noise layer hits every site independently with probability `p` and
//! applies a uniformly chosen Pauli matrix. Layers are inserted before the
//! first Trotter step and after every step.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolve::{evolve_schedule_with, Direction, Propagator, Schedule};
use crate::hamiltonian::{build_zzxz, interpolate, HamiltonianTerms, ModelParams};
use crate::linalg::{pauli_x, pauli_y, pauli_z, C64};
use crate::statevector::{minus_states, Backend, Register, StateVector};

pub const DEFAULT_TRAJECTORIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-site, per-layer probability of a noise event.
    pub p: f64,
    #[serde(default = "default_trajectories")]
    pub n_trajectories: usize,
    /// Simulated measurements per estimate, if any.
    #[serde(default)]
    pub shot_m: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_trajectories() -> usize {
    DEFAULT_TRAJECTORIES
}

impl NoiseConfig {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        let c = Self {
            p,
            n_trajectories: DEFAULT_TRAJECTORIES,
            shot_m: None,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        check_p(self.p)?;
        if self.n_trajectories == 0 {
            return Err(invalid("n_trajectories", "needs at least one trajectory"));
        }
        if self.shot_m == Some(0) {
            return Err(invalid("shot_m", "needs at least one measurement"));
        }
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("p", format!("{p} is outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> Matrix2<C64> {
        match self {
            Pauli::X => pauli_x(),
            Pauli::Y => pauli_y(),
            Pauli::Z => pauli_z(),
        }
    }
}

impl std::str::FromStr for Pauli {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Pauli::X),
            "y" | "Y" => Ok(Pauli::Y),
            "z" | "Z" => Ok(Pauli::Z),
            other => Err(invalid("pauli", format!("expected x, y or z, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseEvent {
    /// 0 is the layer before the first step, `k` follows step `k`.
    pub layer: usize,
    pub site: usize,
    pub pauli: Pauli,
}

/// Independent RNG stream for trajectory `index` of a run seeded by `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Hits each site with probability `p` and returns the `(site, pauli)` events.
pub fn apply_pauli_noise_layer<R: Register, G: Rng + ?Sized>(state: &mut R, p: f64, rng: &mut G) -> Result<Vec<(usize, Pauli)>> {
    check_p(p)?;
    let mut events = Vec::new();
    for site in 0..state.num_sites() {
        if rng.random::<f64>() < p {
            let pauli = [Pauli::X, Pauli::Y, Pauli::Z][rng.random_range(0..3)];
            state.apply_single_site(&pauli.matrix(), site)?;
            events.push((site, pauli));
        }
    }
    Ok(events)
}

/// Forward evolution through `sched` with a noise layer before the first
/// step and after every step.
pub fn evolve_noisy<R: Register, G: Rng + ?Sized>(
    state: &mut R,
    h0: &HamiltonianTerms,
    ht: &HamiltonianTerms,
    sched: &Schedule,
    p: f64,
    rng: &mut G,
) -> Result<Vec<NoiseEvent>> {
    let mut log = Vec::new();
    let tag = |layer: usize, ev: Vec<(usize, Pauli)>, log: &mut Vec<NoiseEvent>| {
        log.extend(ev.into_iter().map(|(site, pauli)| NoiseEvent { layer, site, pauli }));
    };
    let ev = apply_pauli_noise_layer(state, p, rng)?;
    tag(0, ev, &mut log);
    let mut layer = 0;
    evolve_schedule_with(state, h0, ht, sched, Direction::Forward, None, Propagator::Trotter, &mut |s: &mut R| {
        layer += 1;
        let ev = apply_pauli_noise_layer(s, p, rng)?;
        tag(layer, ev, &mut log);
        Ok(())
    })?;
    Ok(log)
}

/// Stateless register used to count layers and draw events without
/// simulating amplitudes.
#[derive(Debug, Clone)]
struct NullRegister(usize);

impl Register for NullRegister {
    fn num_sites(&self) -> usize {
        self.0
    }
    fn apply_single_site(&mut self, _: &Matrix2<C64>, _: usize) -> Result<()> {
        Ok(())
    }
    fn apply_two_site(&mut self, _: &nalgebra::Matrix4<C64>, _: usize) -> Result<f64> {
        Ok(0.0)
    }
    fn inner(&self, _: &Self) -> Result<C64> {
        Ok(C64::new(1.0, 0.0))
    }
    fn energy(&self, _: &HamiltonianTerms) -> Result<f64> {
        Ok(0.0)
    }
    fn to_state_vector(&self) -> Result<StateVector> {
        Err(Error::Unsupported("amplitudes of a null register"))
    }
}

/// Number of noise layers a run of `sched` receives.
pub fn layer_count(num_sites: usize, sched: &Schedule) -> Result<usize> {
    let h = HamiltonianTerms::zero(num_sites)?;
    let mut reg = NullRegister(num_sites);
    let mut steps = 0;
    evolve_schedule_with(&mut reg, &h, &h, sched, Direction::Forward, None, Propagator::Trotter, &mut |_| {
        steps += 1;
        Ok(())
    })?;
    Ok(steps + 1)
}

/// Event counts of `n` trajectories drawn with the layer placement of a
/// real run but without simulating the state.
pub fn dry_run_event_counts(num_sites: usize, sched: &Schedule, p: f64, n: usize, seed: u64) -> Result<Vec<usize>> {
    check_p(p)?;
    let layers = layer_count(num_sites, sched)?;
    (0..n)
        .into_par_iter()
        .map(|t| {
            let mut rng = trajectory_rng(seed, t as u64);
            let mut reg = NullRegister(num_sites);
            let mut count = 0;
            for _ in 0..layers {
                count += apply_pauli_noise_layer(&mut reg, p, &mut rng)?.len();
            }
            Ok(count)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub events: Vec<NoiseEvent>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub mean: f64,
    pub std_err: f64,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl EnsembleResult {
    fn from_records(trajectories: Vec<TrajectoryRecord>) -> Self {
        let n = trajectories.len() as f64;
        let mean = trajectories.iter().map(|t| t.value).sum::<f64>() / n;
        let var = if trajectories.len() > 1 {
            trajectories.iter().map(|t| (t.value - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n).sqrt(),
            trajectories,
        }
    }
}

/// Runs `sched` from `|->^N` once per trajectory and averages `observable`
/// over the final states.
pub fn noisy_ensemble_run<B, F>(backend: &B, params: &ModelParams, sched: &Schedule, noise: &NoiseConfig, observable: F) -> Result<EnsembleResult>
where
    B: Backend + Sync,
    F: Fn(&B::State) -> Result<f64> + Sync,
{
    noise.validate()?;
    let (h0, ht) = build_zzxz(params)?;
    let psi0 = backend.product_state(&minus_states(params.num_sites))?;
    let records: Vec<TrajectoryRecord> = (0..noise.n_trajectories)
        .into_par_iter()
        .map(|t| {
            let mut rng = trajectory_rng(noise.seed, t as u64);
            let mut state = psi0.clone();
            let events = evolve_noisy(&mut state, &h0, &ht, sched, noise.p, &mut rng)?;
            Ok(TrajectoryRecord {
                index: t,
                events,
                value: observable(&state)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EnsembleResult::from_records(records))
}

/// A single Pauli inserted at a chosen layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flip {
    pub site: usize,
    pub layer: usize,
    pub pauli: Pauli,
}

/// Relative energy error `(E - E_gs) / |E_gs|` of the final state under
/// `H(1)` after a run with at most one injected Pauli.
pub fn deliberate_flip_run<B: Backend>(backend: &B, params: &ModelParams, sched: &Schedule, flip: Option<Flip>) -> Result<f64> {
    let (h0, ht) = build_zzxz(params)?;
    let n = params.num_sites;
    if let Some(f) = flip {
        if f.site >= n {
            return Err(invalid("site", format!("{} out of range for {n} sites", f.site)));
        }
        let layers = layer_count(n, sched)?;
        if f.layer >= layers {
            return Err(invalid("layer", format!("{} out of range for {layers} layers", f.layer)));
        }
    }
    let mut state = backend.product_state(&minus_states(n))?;
    let apply = |s: &mut B::State, layer: usize| -> Result<()> {
        match flip {
            Some(f) if f.layer == layer => s.apply_single_site(&f.pauli.matrix(), f.site),
            _ => Ok(()),
        }
    };
    apply(&mut state, 0)?;
    let mut layer = 0;
    evolve_schedule_with(&mut state, &h0, &ht, sched, Direction::Forward, None, Propagator::Trotter, &mut |s| {
        layer += 1;
        apply(s, layer)
    })?;
    let hf = interpolate(&h0, &ht, 1.0)?;
    let (e_gs, _) = backend.ground_state(&hf)?;
    let e = state.energy(&hf)? / state.inner(&state)?.re;
    Ok((e - e_gs) / e_gs.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::naive_schedule;
    use crate::statevector::DenseBackend;
    use approx::assert_abs_diff_eq;

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..1 << n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let mut s = StateVector::new(n, amps).unwrap();
        s.normalize().unwrap();
        s
    }

    #[test]
    fn zero_and_unit_probability() {
        let mut rng = trajectory_rng(1, 0);
        let s0 = random_state(5, 3);
        let mut s = s0.clone();
        assert!(apply_pauli_noise_layer(&mut s, 0.0, &mut rng).unwrap().is_empty());
        assert_eq!(s, s0);
        let ev = apply_pauli_noise_layer(&mut s, 1.0, &mut rng).unwrap();
        assert_eq!(ev.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert!(apply_pauli_noise_layer(&mut s, 1.5, &mut rng).is_err());
    }

    #[test]
    fn layers_are_one_plus_steps() {
        let sched = naive_schedule(1, 5.0).unwrap();
        assert_eq!(layer_count(3, &sched).unwrap(), 81);
        let sched = naive_schedule(3, 1.0).unwrap();
        // 1/3 = 5 full steps plus a remainder per chunk
        assert_eq!(layer_count(3, &sched).unwrap(), 1 + 3 * 6);
    }

    #[test]
    fn event_counts_are_binomial() {
        let sched = naive_schedule(1, 2.0).unwrap();
        let (n, p) = (20, 0.01);
        let counts = dry_run_event_counts(n, &sched, p, 4000, 9).unwrap();
        let trials = (n * layer_count(n, &sched).unwrap()) as f64;
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
        assert_abs_diff_eq!(mean, trials * p, epsilon = 0.15);
        assert_abs_diff_eq!(var, trials * p * (1.0 - p), epsilon = 0.1 * trials * p);
    }

    #[test]
    fn seed_reproducibility() {
        let params = ModelParams::new(4, 1.0, 1.0, 1.0).unwrap();
        let sched = naive_schedule(2, 1.0).unwrap();
        let noise = NoiseConfig {
            p: 0.05,
            n_trajectories: 6,
            shot_m: None,
            seed: 11,
        };
        let obs = |s: &StateVector| Ok(s.amplitudes()[0].re);
        let a = noisy_ensemble_run(&DenseBackend, &params, &sched, &noise, obs).unwrap();
        let b = noisy_ensemble_run(&DenseBackend, &params, &sched, &noise, obs).unwrap();
        assert_eq!(a, b);
        assert!(a.trajectories.iter().any(|t| !t.events.is_empty()));
    }

    #[test]
    fn noiseless_ensemble_has_zero_spread() {
        let params = ModelParams::new(4, 1.0, 1.0, 1.0).unwrap();
        let sched = naive_schedule(1, 1.0).unwrap();
        let noise = NoiseConfig {
            p: 0.0,
            n_trajectories: 4,
            shot_m: None,
            seed: 0,
        };
        let r = noisy_ensemble_run(&DenseBackend, &params, &sched, &noise, |s| Ok(s.amplitudes()[3].norm())).unwrap();
        assert_eq!(r.std_err, 0.0);
    }

    #[test]
    fn initial_x_flip_is_harmless() {
        let params = ModelParams::new(6, 2.0, 1.0, 1.0).unwrap();
        let sched = naive_schedule(1, 3.0).unwrap();
        let base = deliberate_flip_run(&DenseBackend, &params, &sched, None).unwrap();
        let flipped = deliberate_flip_run(
            &DenseBackend,
            &params,
            &sched,
            Some(Flip {
                site: 3,
                layer: 0,
                pauli: Pauli::X,
            }),
        )
        .unwrap();
        assert_abs_diff_eq!(base, flipped, epsilon = 1e-12);
        let z = deliberate_flip_run(
            &DenseBackend,
            &params,
            &sched,
            Some(Flip {
                site: 3,
                layer: 0,
                pauli: Pauli::Z,
            }),
        )
        .unwrap();
        assert!(z > base + 1e-3);
    }
}
