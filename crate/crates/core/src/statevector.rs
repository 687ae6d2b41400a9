//! The register abstraction shared by the dense and MPS simulators.

use nalgebra::{Matrix2, Matrix4};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::exact::{exact_spectrum, DENSE_SITE_LIMIT};
use crate::hamiltonian::HamiltonianTerms;
use crate::linalg::{expm_krylov, norm, unitarity_deviation, vdot, C64, ZERO};

pub(crate) const UNITARY_TOL: f64 = 1e-8;

/// An N-qubit pure-state register that gates can act on.
pub trait Register: Clone + Send + Sync {
    fn num_sites(&self) -> usize;

    fn apply_single_site(&mut self, gate: &Matrix2<C64>, site: usize) -> Result<()>;

    /// Applies a gate on `(site, site + 1)` and returns the discarded weight.
    fn apply_two_site(&mut self, gate: &Matrix4<C64>, site: usize) -> Result<f64>;

    /// `<self|other>`.
    fn inner(&self, other: &Self) -> Result<C64>;

    fn energy(&self, terms: &HamiltonianTerms) -> Result<f64>;

    fn to_state_vector(&self) -> Result<StateVector>;

    /// `exp(-i time H)` without Trotter splitting.
    fn propagate_exact(&mut self, _terms: &HamiltonianTerms, _time: f64) -> Result<()> {
        Err(Error::Unsupported("exact propagation"))
    }

    /// `|exp(norm_log) - 1|` for registers that renormalize.
    fn norm_error(&self) -> f64 {
        0.0
    }

    /// Accumulated truncation weight.
    fn discarded_weight(&self) -> f64 {
        0.0
    }
}

/// Dense amplitudes on the 2^N computational basis, site 0 most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    num_sites: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(num_sites: usize, amps: Vec<C64>) -> Result<Self> {
        if num_sites == 0 || num_sites > 26 {
            return Err(invalid("num_sites", format!("{num_sites} sites not supported by the dense register")));
        }
        if amps.len() != 1 << num_sites {
            return Err(invalid("amps", format!("expected {} amplitudes, got {}", 1usize << num_sites, amps.len())));
        }
        Ok(Self { num_sites, amps })
    }

    pub fn product_state(local_states: &[[C64; 2]]) -> Result<Self> {
        let n = local_states.len();
        if n == 0 {
            return Err(invalid("local_states", "empty"));
        }
        let mut amps = vec![C64::new(1.0, 0.0)];
        for (i, v) in local_states.iter().enumerate() {
            let nv = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
            if nv == 0.0 {
                return Err(invalid("local_states", format!("local state {i} is zero")));
            }
            amps = amps.iter().flat_map(|a| [a * v[0] / nv, a * v[1] / nv]).collect();
        }
        Self::new(n, amps)
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        self.amps.iter_mut().for_each(|a| *a /= n);
        Ok(())
    }

    /// `|<self|other>|`.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        vdot(&self.amps, &other.amps).norm()
    }
}

impl Register for StateVector {
    fn num_sites(&self) -> usize {
        self.num_sites
    }

    fn apply_single_site(&mut self, gate: &Matrix2<C64>, site: usize) -> Result<()> {
        if site >= self.num_sites {
            return Err(invalid("site", format!("{site} out of range")));
        }
        let shift = self.num_sites - 1 - site;
        let bit = 1usize << shift;
        for x in 0..self.amps.len() {
            if x & bit == 0 {
                let a0 = self.amps[x];
                let a1 = self.amps[x | bit];
                self.amps[x] = gate[(0, 0)] * a0 + gate[(0, 1)] * a1;
                self.amps[x | bit] = gate[(1, 0)] * a0 + gate[(1, 1)] * a1;
            }
        }
        Ok(())
    }

    fn apply_two_site(&mut self, gate: &Matrix4<C64>, site: usize) -> Result<f64> {
        if site + 1 >= self.num_sites {
            return Err(invalid("site", format!("bond {site} out of range")));
        }
        let deviation = unitarity_deviation(gate);
        if deviation > UNITARY_TOL {
            return Err(Error::NonUnitary { deviation });
        }
        let shift = self.num_sites - 2 - site;
        let mask = 3usize << shift;
        let mut local = [ZERO; 4];
        for x in 0..self.amps.len() {
            if x & mask == 0 {
                for (l, v) in local.iter_mut().enumerate() {
                    *v = self.amps[x | (l << shift)];
                }
                for r in 0..4 {
                    let mut acc = ZERO;
                    for (l, v) in local.iter().enumerate() {
                        acc += gate[(r, l)] * v;
                    }
                    self.amps[x | (r << shift)] = acc;
                }
            }
        }
        Ok(0.0)
    }

    fn inner(&self, other: &Self) -> Result<C64> {
        if self.num_sites != other.num_sites {
            return Err(Error::SiteMismatch {
                left: self.num_sites,
                right: other.num_sites,
            });
        }
        Ok(vdot(&self.amps, &other.amps))
    }

    fn energy(&self, terms: &HamiltonianTerms) -> Result<f64> {
        if terms.num_sites() != self.num_sites {
            return Err(Error::SiteMismatch {
                left: self.num_sites,
                right: terms.num_sites(),
            });
        }
        Ok(terms.expectation(&self.amps) / vdot(&self.amps, &self.amps).re)
    }

    fn to_state_vector(&self) -> Result<StateVector> {
        Ok(self.clone())
    }

    fn propagate_exact(&mut self, terms: &HamiltonianTerms, time: f64) -> Result<()> {
        if terms.num_sites() != self.num_sites {
            return Err(Error::SiteMismatch {
                left: self.num_sites,
                right: terms.num_sites(),
            });
        }
        let bound = spectral_bound(terms);
        self.amps = expm_krylov(|x, y| terms.apply(x, y), &self.amps, time, bound, 1e-13);
        Ok(())
    }
}

/// Cheap upper bound on the operator norm from Frobenius norms of the terms.
pub(crate) fn spectral_bound(terms: &HamiltonianTerms) -> f64 {
    let single: f64 = terms.single_site_terms().map(|(_, m)| m.norm()).sum();
    let bonds: f64 = terms.two_site_terms().map(|(_, m)| m.norm()).sum();
    single + bonds
}

/// Factory for initial and reference states of a given register type.
pub trait Backend {
    type State: Register;

    fn product_state(&self, local_states: &[[C64; 2]]) -> Result<Self::State>;

    fn ground_state(&self, terms: &HamiltonianTerms) -> Result<(f64, Self::State)>;
}

/// Dense statevector simulation with exact ground states.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseBackend;

impl Backend for DenseBackend {
    type State = StateVector;

    fn product_state(&self, local_states: &[[C64; 2]]) -> Result<StateVector> {
        StateVector::product_state(local_states)
    }

    fn ground_state(&self, terms: &HamiltonianTerms) -> Result<(f64, StateVector)> {
        if terms.num_sites() > DENSE_SITE_LIMIT {
            return Err(Error::TooLarge {
                num_sites: terms.num_sites(),
                limit: DENSE_SITE_LIMIT,
            });
        }
        let mut pairs = exact_spectrum(terms, 1)?;
        let (e, v) = pairs.remove(0);
        Ok((e, StateVector::new(terms.num_sites(), v)?))
    }
}

/// `|->` on every site.
pub fn minus_states(num_sites: usize) -> Vec<[C64; 2]> {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    vec![[C64::new(a, 0.0), C64::new(-a, 0.0)]; num_sites]
}

/// `|+>` on every site.
pub fn plus_states(num_sites: usize) -> Vec<[C64; 2]> {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    vec![[C64::new(a, 0.0), C64::new(a, 0.0)]; num_sites]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{build_zzxz, ModelParams};
    use crate::linalg::{expm_hermitian4, hermitian_eigh, kron2, pauli_x, pauli_z, I};
    use approx::assert_abs_diff_eq;

    #[test]
    fn minus_product_state_expansion() {
        let s = StateVector::product_state(&minus_states(2)).unwrap();
        let expect = [0.5, -0.5, -0.5, 0.5];
        for (a, e) in s.amplitudes().iter().zip(expect) {
            assert_abs_diff_eq!(a.re, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn minus_state_energy_under_initial_hamiltonian() {
        let p = ModelParams::new(8, 1.0, 1.0, 1.0).unwrap();
        let (h0, _) = build_zzxz(&p).unwrap();
        let s = StateVector::product_state(&minus_states(8)).unwrap();
        assert_abs_diff_eq!(s.energy(&h0).unwrap(), -8.0, epsilon = 1e-12);
    }

    #[test]
    fn two_site_gate_matches_kronecker_action() {
        let h = kron2(&pauli_z(), &pauli_x()) + kron2(&pauli_x(), &pauli_x()) * C64::new(0.3, 0.0);
        let u = expm_hermitian4(&h, 0.8);
        let mut s = StateVector::product_state(&minus_states(3)).unwrap();
        s.apply_single_site(&(pauli_z() * C64::new(0.0, 1.0) * -I), 0).unwrap();
        let before = s.clone();
        s.apply_two_site(&u, 1).unwrap();
        // kron(I2, U) acting on the dense vector
        let full = nalgebra::DMatrix::<C64>::identity(2, 2).kronecker(&nalgebra::DMatrix::from_fn(4, 4, |r, c| u[(r, c)]));
        let v = full * nalgebra::DVector::from_column_slice(before.amplitudes());
        for (a, b) in s.amplitudes().iter().zip(v.iter()) {
            assert!((a - b).norm() < 1e-14);
        }
        assert!(s.apply_two_site(&(u * C64::new(1.1, 0.0)), 0).is_err());
    }

    #[test]
    fn exact_propagation_matches_eigendecomposition() {
        let p = ModelParams::new(5, 2.0, 1.0, 1.0).unwrap();
        let (_, ht) = build_zzxz(&p).unwrap();
        let mut s = StateVector::product_state(&minus_states(5)).unwrap();
        let v0 = nalgebra::DVector::from_column_slice(s.amplitudes());
        s.propagate_exact(&ht, 1.7).unwrap();
        let (vals, vecs) = hermitian_eigh(ht.to_dense().unwrap());
        let c = vecs.adjoint() * v0;
        let expect = &vecs * nalgebra::DVector::from_fn(32, |k, _| c[k] * (-I * vals[k] * 1.7).exp());
        for (a, b) in s.amplitudes().iter().zip(expect.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
