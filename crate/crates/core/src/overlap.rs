//! Eigenstate closeness estimators: the autocorrelation `alpha(tau)`, its
//! tau average `E2`, the entangled-ancilla Bell expectation and simulated
//! shot noise.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolve::{step_lengths, trotter_step_signed, Propagator, StepConfig};
use crate::hamiltonian::exact::full_spectrum;
use crate::hamiltonian::HamiltonianTerms;
use crate::linalg::{hermitian_eigh, pauli_x, pauli_y, C64, I, ZERO};
use crate::statevector::{Register, StateVector};

/// Number of tau values averaged per `E2` estimate.
pub const DEFAULT_TAU_COUNT: usize = 32;
pub const DEFAULT_K_MAX: usize = 100;
/// Largest register for which the ancilla density matrix is formed from a
/// full eigendecomposition.
pub const SPECTRAL_SITE_LIMIT: usize = 12;
/// Largest register for the explicit `N + 1` qubit ancilla circuit.
pub const EXPLICIT_SITE_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapKind {
    DirectOracle,
    ForwardBackward,
    SingleAncillaE2,
    BellPair,
}

impl std::fmt::Display for OverlapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::DirectOracle => "direct_oracle",
            Self::ForwardBackward => "forward_backward",
            Self::SingleAncillaE2 => "single_ancilla_e2",
            Self::BellPair => "bell_pair",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapEstimate {
    pub value: f64,
    pub kind: OverlapKind,
    /// Number of simulated measurements; zero for noiseless values.
    pub samples: usize,
    pub std_err: f64,
}

impl OverlapEstimate {
    pub fn exact(value: f64, kind: OverlapKind) -> Self {
        Self {
            value,
            kind,
            samples: 0,
            std_err: 0.0,
        }
    }
}

/// `<psi| exp(-i tau H) |psi>` for a normalized register.
///
/// Trotter mode evolves a copy under the frozen `terms` with the step
/// configuration; exact mode defers to the register's own propagator.
pub fn alpha<R: Register>(state: &R, terms: &HamiltonianTerms, tau: f64, cfg: &StepConfig) -> Result<C64> {
    if !tau.is_finite() {
        return Err(invalid("tau", "must be finite"));
    }
    if state.num_sites() != terms.num_sites() {
        return Err(Error::SiteMismatch {
            left: state.num_sites(),
            right: terms.num_sites(),
        });
    }
    if tau == 0.0 {
        return state.inner(state);
    }
    let mut evolved = state.clone();
    match cfg.propagator {
        Propagator::Exact => evolved.propagate_exact(terms, tau)?,
        Propagator::Trotter => {
            for dt in step_lengths(tau.abs(), cfg.dt) {
                trotter_step_signed(&mut evolved, terms, dt * tau.signum(), cfg.substeps)?;
            }
        }
    }
    state.inner(&evolved)
}

/// `alpha` from the eigendecomposition: `sum_j |psi_j|^2 exp(-i E_j tau)`.
pub fn alpha_spectral(state: &StateVector, terms: &HamiltonianTerms, tau: f64) -> Result<C64> {
    let (vals, pops) = spectral_populations(state, terms)?;
    Ok(vals.iter().zip(&pops).map(|(e, p)| (-I * e * tau).exp() * p).sum())
}

/// Eigenvalues and populations `|<E_j|psi>|^2` of a dense state.
pub fn spectral_populations(state: &StateVector, terms: &HamiltonianTerms) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = SpectralCache::new(terms)?;
    let pops = cache.populations(state)?;
    Ok((cache.energies, pops))
}

/// Eigendecomposition of a fixed Hamiltonian, reused across many `alpha`
/// evaluations on dense registers.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    energies: Vec<f64>,
    vectors: DMatrix<C64>,
}

impl SpectralCache {
    pub fn new(terms: &HamiltonianTerms) -> Result<Self> {
        if terms.num_sites() > SPECTRAL_SITE_LIMIT {
            return Err(Error::TooLarge {
                num_sites: terms.num_sites(),
                limit: SPECTRAL_SITE_LIMIT,
            });
        }
        let (energies, vectors) = full_spectrum(terms)?;
        Ok(Self { energies, vectors })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `|<E_j|psi>|^2` for every eigenvector.
    pub fn populations(&self, state: &StateVector) -> Result<Vec<f64>> {
        if state.amplitudes().len() != self.energies.len() {
            return Err(invalid("state", "dimension does not match the cached spectrum"));
        }
        let v = DVector::from_column_slice(state.amplitudes());
        let c = self.vectors.adjoint() * v;
        Ok(c.iter().map(|z| z.norm_sqr()).collect())
    }

    pub fn alpha(&self, populations: &[f64], tau: f64) -> C64 {
        self.energies
            .iter()
            .zip(populations)
            .map(|(e, p)| (-I * e * tau).exp() * p)
            .sum()
    }
}

/// `tau = pi l / delta` with `l` uniform on `1..=k_max`.
pub fn sample_tau<G: Rng + ?Sized>(delta_estimate: f64, k_max: usize, rng: &mut G) -> Result<f64> {
    if !(delta_estimate > 0.0) || !delta_estimate.is_finite() {
        return Err(invalid("delta_estimate", format!("{delta_estimate} is not a positive gap")));
    }
    if k_max == 0 {
        return Err(invalid("k_max", "must be at least 1"));
    }
    let l = rng.random_range(1..=k_max);
    Ok(std::f64::consts::PI * l as f64 / delta_estimate)
}

/// Mean of `|alpha(tau)|^2` over the given tau values.
pub fn e2_average<R: Register>(state: &R, terms: &HamiltonianTerms, taus: &[f64], cfg: &StepConfig) -> Result<f64> {
    if taus.is_empty() {
        return Err(invalid("taus", "needs at least one value"));
    }
    let vals: Result<Vec<f64>> = taus
        .par_iter()
        .map(|&t| alpha(state, terms, t, cfg).map(|a| a.norm_sqr()))
        .collect();
    Ok(vals?.iter().sum::<f64>() / taus.len() as f64)
}

/// Lower bound on the dominant population `|psi_0|^2` given `E2`.
pub fn ground_population_bound(e2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&e2) {
        return Err(invalid("e2", format!("{e2} is outside [0, 1]")));
    }
    if e2 < 0.5 {
        return Ok(0.0);
    }
    Ok(0.5 + 0.5 * (2.0 * e2 - 1.0).sqrt())
}

/// Smallest `E2` compatible with `|psi_0| >= theta`.
pub fn e2_threshold(theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(invalid("theta", format!("{theta} is outside [0, 1]")));
    }
    let p = theta * theta;
    if p < 0.5 {
        return Ok(0.5);
    }
    Ok(((2.0 * p - 1.0).powi(2) + 1.0) / 2.0)
}

/// Probability that the singlet projector fires on the two ancillas.
pub fn bell_expectation(alpha_abs2: f64) -> Result<f64> {
    if !(0.0..=1.0 + 1e-12).contains(&alpha_abs2) {
        return Err(invalid("alpha_abs2", format!("{alpha_abs2} is outside [0, 1]")));
    }
    Ok(((1.0 - alpha_abs2) / 4.0).max(0.0))
}

/// Reduced state of a `|+>` ancilla controlling `exp(-i tau H)` on `state`.
pub fn ancilla_density_matrix(state: &StateVector, terms: &HamiltonianTerms, tau: f64) -> Result<Matrix2<C64>> {
    let (vals, pops) = spectral_populations(state, terms)?;
    let total: f64 = pops.iter().sum();
    let mut off = ZERO;
    for (e, p) in vals.iter().zip(&pops) {
        off += (-I * e * tau).exp() * (p / 2.0);
    }
    off /= total;
    Ok(Matrix2::new(C64::new(0.5, 0.0), off.conj(), off, C64::new(0.5, 0.0)))
}

/// Builds the `N + 1` qubit state after the controlled evolution and reads
/// `<sigma_x> + i <sigma_y>` off the ancilla.
pub fn explicit_ancilla_reference(state: &StateVector, terms: &HamiltonianTerms, tau: f64) -> Result<C64> {
    let n = state.num_sites();
    if n > EXPLICIT_SITE_LIMIT {
        return Err(Error::TooLarge {
            num_sites: n,
            limit: EXPLICIT_SITE_LIMIT,
        });
    }
    if terms.num_sites() != n {
        return Err(Error::SiteMismatch {
            left: n,
            right: terms.num_sites(),
        });
    }
    let (vals, vecs) = hermitian_eigh(terms.to_dense()?);
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|e| (-I * e * tau).exp())));
    let u = &vecs * phases * vecs.adjoint();
    let psi = DVector::from_column_slice(state.amplitudes());
    let upsi = &u * &psi;
    let dim = psi.len();
    // ancilla is the most significant qubit, prepared in |+>, controls U on |1>
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut full = vec![ZERO; 2 * dim];
    for k in 0..dim {
        full[k] = psi[k] * h;
        full[dim + k] = upsi[k] * h;
    }
    let mut rho = Matrix2::<C64>::zeros();
    for a in 0..2 {
        for b in 0..2 {
            rho[(a, b)] = (0..dim).map(|k| full[a * dim + k] * full[b * dim + k].conj()).sum();
        }
    }
    let sx = (rho * pauli_x()).trace();
    let sy = (rho * pauli_y()).trace();
    Ok(sx + I * sy)
}

/// Mean of `m` Bernoulli draws with its standard error.
pub fn measure_overlap<G: Rng + ?Sized>(true_expectation: f64, m: usize, kind: OverlapKind, rng: &mut G) -> Result<OverlapEstimate> {
    if !(0.0..=1.0).contains(&true_expectation) {
        return Err(invalid("true_expectation", format!("{true_expectation} is outside [0, 1]")));
    }
    if m == 0 {
        return Err(invalid("m", "needs at least one measurement"));
    }
    let hits = bernoulli_count(true_expectation, m, rng);
    let p = hits as f64 / m as f64;
    Ok(OverlapEstimate {
        value: p,
        kind,
        samples: m,
        std_err: (p * (1.0 - p) / m as f64).sqrt(),
    })
}

pub(crate) fn bernoulli_count<G: Rng + ?Sized>(p: f64, m: usize, rng: &mut G) -> usize {
    (0..m).filter(|_| rng.random::<f64>() < p).count()
}

/// Estimates `alpha` from `m` shots each of `sigma_x` and `sigma_y` on the
/// ancilla, with outcomes `+1` at probability `(1 + <sigma>) / 2`.
pub fn sampled_alpha<G: Rng + ?Sized>(alpha: C64, m: usize, rng: &mut G) -> Result<C64> {
    if m == 0 {
        return Err(invalid("m", "needs at least one measurement"));
    }
    let mut sample = |mean: f64| {
        let p = ((1.0 + mean) / 2.0).clamp(0.0, 1.0);
        2.0 * bernoulli_count(p, m, rng) as f64 / m as f64 - 1.0
    };
    let x = sample(alpha.re);
    let y = sample(alpha.im);
    Ok(C64::new(x, y))
}

/// Converts `E2` into an overlap estimate through the population bound.
pub fn e2_overlap_estimate(e2: f64, samples: usize) -> Result<OverlapEstimate> {
    let bound = ground_population_bound(e2.clamp(0.0, 1.0))?;
    Ok(OverlapEstimate {
        value: bound.sqrt(),
        kind: OverlapKind::SingleAncillaE2,
        samples,
        std_err: 0.0,
    })
}

/// Single-ancilla estimate of the dominant overlap of `state` under `terms`.
///
/// Draws `tau_count` values of tau from the gap estimate, averages
/// `|alpha|^2` (from `shots` simulated measurements per tau, or exactly if
/// `shots` is `None`) and reports the square root of the population bound.
pub fn single_ancilla_estimate<R: Register, G: Rng + ?Sized>(
    state: &R,
    terms: &HamiltonianTerms,
    delta_estimate: f64,
    tau_count: usize,
    shots: Option<usize>,
    cfg: &StepConfig,
    rng: &mut G,
) -> Result<OverlapEstimate> {
    if tau_count == 0 {
        return Err(invalid("tau_count", "needs at least one value"));
    }
    let taus: Vec<f64> = (0..tau_count)
        .map(|_| sample_tau(delta_estimate, DEFAULT_K_MAX, rng))
        .collect::<Result<_>>()?;
    let alphas: Vec<C64> = taus
        .par_iter()
        .map(|&t| alpha(state, terms, t, cfg))
        .collect::<Result<_>>()?;
    let mut e2 = 0.0;
    for a in alphas {
        let a = match shots {
            Some(m) => sampled_alpha(a, m, rng)?,
            None => a,
        };
        e2 += a.norm_sqr().min(1.0);
    }
    e2 /= tau_count as f64;
    let samples = shots.map_or(0, |m| 2 * m * tau_count);
    let mut est = e2_overlap_estimate(e2, samples)?;
    if samples > 0 {
        est.std_err = (1.0 / (samples as f64)).sqrt();
    }
    Ok(est)
}
