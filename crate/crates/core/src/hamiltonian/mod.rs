//! The ZZXZ chain family, linear interpolation between Hamiltonians, ramp
//! reparametrizations and exact reference solvers.

pub mod dmrg;
pub mod exact;

use nalgebra::{DMatrix, Matrix2, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_deviation, kron2, pauli_x, pauli_z, C64, ONE, ZERO};

pub use dmrg::{dmrg_excited_state, dmrg_gap_profile, dmrg_ground_state, DmrgOptions, DmrgResult};
pub use exact::{exact_spectrum, exact_spectrum_in_sector, gap_profile, GapPoint, GapSector, Sector};

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub num_sites: usize,
    pub coupling_j: f64,
    pub field_h: f64,
    pub field_g: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl ModelParams {
    pub fn new(num_sites: usize, coupling_j: f64, field_h: f64, field_g: f64) -> Result<Self> {
        let p = Self {
            num_sites,
            coupling_j,
            field_h,
            field_g,
            boundary: Boundary::Open,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sites < 2 {
            return Err(invalid("num_sites", format!("need at least 2 sites, got {}", self.num_sites)));
        }
        for (name, v) in [("J", self.coupling_j), ("h", self.field_h), ("g", self.field_g)] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Local-term description of a nearest-neighbour spin-1/2 chain Hamiltonian.
///
/// Site 0 is the most significant qubit of the dense basis index, and a bond
/// operator on `(i, i+1)` uses the local index `2 a + b` with `a` the state
/// of site `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianTerms {
    single: Vec<Matrix2<C64>>,
    bonds: Vec<Matrix4<C64>>,
}

impl HamiltonianTerms {
    pub fn zero(num_sites: usize) -> Result<Self> {
        if num_sites < 2 {
            return Err(invalid("num_sites", "need at least 2 sites"));
        }
        Ok(Self {
            single: vec![Matrix2::zeros(); num_sites],
            bonds: vec![Matrix4::zeros(); num_sites - 1],
        })
    }

    /// Builds terms from explicit lists; repeated sites are summed.
    pub fn from_terms(
        num_sites: usize,
        single_site: &[(usize, Matrix2<C64>)],
        two_site: &[(usize, Matrix4<C64>)],
    ) -> Result<Self> {
        let mut terms = Self::zero(num_sites)?;
        for (site, m) in single_site {
            if *site >= num_sites {
                return Err(invalid("site", format!("site {site} out of range for {num_sites} sites")));
            }
            if hermitian_deviation(m) > HERMITIAN_TOL {
                return Err(invalid("single_site_terms", format!("term on site {site} is not Hermitian")));
            }
            terms.single[*site] += m;
        }
        for (site, m) in two_site {
            if *site + 1 >= num_sites {
                return Err(invalid("site", format!("bond {site} out of range for {num_sites} sites")));
            }
            if hermitian_deviation(m) > HERMITIAN_TOL {
                return Err(invalid("two_site_terms", format!("term on bond {site} is not Hermitian")));
            }
            terms.bonds[*site] += m;
        }
        Ok(terms)
    }

    pub fn num_sites(&self) -> usize {
        self.single.len()
    }

    pub fn single_site_terms(&self) -> impl Iterator<Item = (usize, &Matrix2<C64>)> {
        self.single.iter().enumerate()
    }

    pub fn two_site_terms(&self) -> impl Iterator<Item = (usize, &Matrix4<C64>)> {
        self.bonds.iter().enumerate()
    }

    pub fn single_site(&self, site: usize) -> &Matrix2<C64> {
        &self.single[site]
    }

    pub fn two_site(&self, bond: usize) -> &Matrix4<C64> {
        &self.bonds[bond]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            single: self.single.iter().map(|m| m * C64::new(factor, 0.0)).collect(),
            bonds: self.bonds.iter().map(|m| m * C64::new(factor, 0.0)).collect(),
        }
    }

    /// Bond operators with every single-site term folded in: half weight to
    /// each adjacent bond, full weight for the two boundary sites.
    pub fn bond_operators(&self) -> Vec<Matrix4<C64>> {
        let n = self.num_sites();
        let id = Matrix2::<C64>::identity();
        let weight = |site: usize| -> f64 {
            if site == 0 || site == n - 1 {
                1.0
            } else {
                0.5
            }
        };
        self.bonds
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let left = self.single[i] * C64::new(weight(i), 0.0);
                let right = self.single[i + 1] * C64::new(weight(i + 1), 0.0);
                b + kron2(&left, &id) + kron2(&id, &right)
            })
            .collect()
    }

    /// True when every coefficient is real, so dense solvers may use the
    /// real-symmetric path.
    pub fn is_real(&self) -> bool {
        let tol = 1e-14;
        self.single.iter().flat_map(|m| m.iter()).all(|z| z.im.abs() < tol)
            && self.bonds.iter().flat_map(|m| m.iter()).all(|z| z.im.abs() < tol)
    }

    /// True when the operator commutes with the site-reversal `i -> N-1-i`.
    pub fn is_reflection_symmetric(&self) -> bool {
        let n = self.num_sites();
        let tol = 1e-12;
        let swap = |m: &Matrix4<C64>| Matrix4::from_fn(|r, c| m[(swap_index(r), swap_index(c))]);
        (0..n).all(|i| (self.single[i] - self.single[n - 1 - i]).camax() < tol)
            && (0..n - 1).all(|i| (self.bonds[i] - swap(&self.bonds[n - 2 - i])).camax() < tol)
    }

    /// `out = H v` on the dense 2^N basis.
    pub fn apply(&self, v: &[C64], out: &mut [C64]) {
        let n = self.num_sites();
        debug_assert_eq!(v.len(), 1 << n);
        out.iter_mut().for_each(|z| *z = ZERO);
        for (site, m) in self.single.iter().enumerate() {
            if m.iter().all(|z| *z == ZERO) {
                continue;
            }
            let shift = n - 1 - site;
            for (x, o) in out.iter_mut().enumerate() {
                let b = (x >> shift) & 1;
                let y = x ^ (1 << shift);
                *o += m[(b, b)] * v[x] + m[(b, 1 - b)] * v[y];
            }
        }
        for (bond, m) in self.bonds.iter().enumerate() {
            if m.iter().all(|z| *z == ZERO) {
                continue;
            }
            let shift = n - 2 - bond;
            let mask = !(3usize << shift);
            for (x, o) in out.iter_mut().enumerate() {
                let local = (x >> shift) & 3;
                let base = x & mask;
                let mut acc = ZERO;
                for l in 0..4 {
                    let coef = m[(local, l)];
                    if coef != ZERO {
                        acc += coef * v[base | (l << shift)];
                    }
                }
                *o += acc;
            }
        }
    }

    pub fn expectation(&self, v: &[C64]) -> f64 {
        let mut w = vec![ZERO; v.len()];
        self.apply(v, &mut w);
        crate::linalg::vdot(v, &w).re
    }

    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        let n = self.num_sites();
        if n > exact::DENSE_SITE_LIMIT {
            return Err(Error::TooLarge {
                num_sites: n,
                limit: exact::DENSE_SITE_LIMIT,
            });
        }
        let dim = 1usize << n;
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        let mut e = vec![ZERO; dim];
        let mut col = vec![ZERO; dim];
        for j in 0..dim {
            e[j] = ONE;
            self.apply(&e, &mut col);
            m.set_column(j, &nalgebra::DVector::from_column_slice(&col));
            e[j] = ZERO;
        }
        Ok(m)
    }
}

fn swap_index(l: usize) -> usize {
    ((l & 1) << 1) | (l >> 1)
}

/// Returns `(H0, H_T)` with `H0 = Σ h X_i` and
/// `H_T = Σ J Z_i Z_{i+1} + Σ (h X_i + g Z_i)` on an open chain.
pub fn build_zzxz(params: &ModelParams) -> Result<(HamiltonianTerms, HamiltonianTerms)> {
    params.validate()?;
    let n = params.num_sites;
    let x = pauli_x();
    let z = pauli_z();
    let h = C64::new(params.field_h, 0.0);
    let g = C64::new(params.field_g, 0.0);
    let j = C64::new(params.coupling_j, 0.0);

    let h0_single: Vec<_> = (0..n).map(|i| (i, x * h)).collect();
    let h0 = HamiltonianTerms::from_terms(n, &h0_single, &[])?;

    let ht_single: Vec<_> = (0..n).map(|i| (i, x * h + z * g)).collect();
    let zz = kron2(&z, &z) * j;
    let ht_bonds: Vec<_> = (0..n - 1).map(|i| (i, zz)).collect();
    let ht = HamiltonianTerms::from_terms(n, &ht_single, &ht_bonds)?;
    Ok((h0, ht))
}

/// `(1 - lam) h0 + lam ht`, term by term.
pub fn interpolate(h0: &HamiltonianTerms, ht: &HamiltonianTerms, lam: f64) -> Result<HamiltonianTerms> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(invalid("lam", format!("{lam} is outside [0, 1]")));
    }
    interpolate_unchecked(h0, ht, lam)
}

pub(crate) fn interpolate_unchecked(h0: &HamiltonianTerms, ht: &HamiltonianTerms, lam: f64) -> Result<HamiltonianTerms> {
    if h0.num_sites() != ht.num_sites() {
        return Err(Error::SiteMismatch {
            left: h0.num_sites(),
            right: ht.num_sites(),
        });
    }
    let a = C64::new(1.0 - lam, 0.0);
    let b = C64::new(lam, 0.0);
    Ok(HamiltonianTerms {
        single: h0.single.iter().zip(&ht.single).map(|(x, y)| x * a + y * b).collect(),
        bonds: h0.bonds.iter().zip(&ht.bonds).map(|(x, y)| x * a + y * b).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RampKind {
    #[default]
    Linear,
    Smooth,
}

impl std::str::FromStr for RampKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "smooth" => Ok(Self::Smooth),
            other => Err(invalid("ramp", format!("expected `linear` or `smooth`, got `{other}`"))),
        }
    }
}

pub fn ramp_value(kind: RampKind, s: f64, lam0: f64, lamf: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid("s", format!("{s} is outside [0, 1]")));
    }
    Ok(ramp_unchecked(kind, s, lam0, lamf))
}

pub(crate) fn ramp_unchecked(kind: RampKind, s: f64, lam0: f64, lamf: f64) -> f64 {
    use std::f64::consts::PI;
    match kind {
        RampKind::Linear => lam0 + s * (lamf - lam0),
        RampKind::Smooth => {
            let inner = (PI * s / 2.0).sin().powi(2);
            lam0 + (lamf - lam0) * (PI / 2.0 * inner).sin().powi(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_state(n: usize, seed: u64) -> Vec<C64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<C64> = (0..1 << n)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let nv = crate::linalg::norm(&v);
        v.iter_mut().for_each(|z| *z /= nv);
        v
    }

    /// Kronecker-product construction, independent of the bitwise matvec.
    fn dense_by_kron(params: &ModelParams, lam: f64) -> DMatrix<C64> {
        let n = params.num_sites;
        let embed = |ops: Vec<(usize, Matrix2<C64>)>| {
            let mut m = DMatrix::<C64>::identity(1, 1);
            for site in 0..n {
                let op = ops
                    .iter()
                    .find(|(s, _)| *s == site)
                    .map(|(_, o)| *o)
                    .unwrap_or_else(Matrix2::identity);
                let opd = DMatrix::from_fn(2, 2, |r, c| op[(r, c)]);
                m = m.kronecker(&opd);
            }
            m
        };
        let dim = 1 << n;
        let mut h = DMatrix::<C64>::zeros(dim, dim);
        let c = |v: f64| C64::new(v, 0.0);
        for i in 0..n {
            h += embed(vec![(i, pauli_x())]) * c(params.field_h);
            h += embed(vec![(i, pauli_z())]) * c(lam * params.field_g);
        }
        for i in 0..n - 1 {
            h += embed(vec![(i, pauli_z()), (i + 1, pauli_z())]) * c(lam * params.coupling_j);
        }
        h
    }

    #[test]
    fn zzxz_matches_kronecker_construction() {
        let p = ModelParams::new(4, 2.0, 1.0, 1.0).unwrap();
        let (h0, ht) = build_zzxz(&p).unwrap();
        for lam in [0.0, 0.3, 1.0] {
            let terms = interpolate(&h0, &ht, lam).unwrap();
            let diff = terms.to_dense().unwrap() - dense_by_kron(&p, lam);
            assert!(diff.camax() < 1e-13, "lam {lam}");
        }
    }

    #[test]
    fn two_site_eigenvalues() {
        // Exact 4x4 oracle for J = h = 1, g = 0: eigenvalues ±1 ± ... solved by
        // the dense decomposition of the Kronecker matrix.
        let p = ModelParams::new(2, 1.0, 1.0, 0.0).unwrap();
        let (_, ht) = build_zzxz(&p).unwrap();
        let (vals, _) = crate::linalg::hermitian_eigh(ht.to_dense().unwrap());
        let (oracle, _) = crate::linalg::hermitian_eigh(dense_by_kron(&p, 1.0));
        for (a, b) in vals.iter().zip(&oracle) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // ZZ + X1 + X2: ground energy -sqrt(5)
        assert_abs_diff_eq!(vals[0], -(5f64).sqrt(), epsilon = 1e-12);
        assert_eq!(ht.two_site_terms().filter(|(_, m)| m.camax() > 0.0).count(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ModelParams::new(1, 1.0, 1.0, 1.0).is_err());
        let p = ModelParams::new(3, 1.0, 1.0, 1.0).unwrap();
        let (h0, ht) = build_zzxz(&p).unwrap();
        assert!(interpolate(&h0, &ht, 1.1).is_err());
        assert!(interpolate(&h0, &ht, -0.1).is_err());
        let (h0b, _) = build_zzxz(&ModelParams::new(4, 1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!(matches!(interpolate(&h0b, &ht, 0.5), Err(Error::SiteMismatch { .. })));
        let bad = Matrix2::new(ZERO, ONE, ZERO, ZERO);
        assert!(HamiltonianTerms::from_terms(3, &[(0, bad)], &[]).is_err());
    }

    #[test]
    fn endpoints_are_exact() {
        let p = ModelParams::new(5, 3.0, 1.0, 1.0).unwrap();
        let (h0, ht) = build_zzxz(&p).unwrap();
        assert_eq!(interpolate(&h0, &ht, 0.0).unwrap(), h0);
        assert_eq!(interpolate(&h0, &ht, 1.0).unwrap(), ht);
    }

    #[test]
    fn decoupled_target_equals_initial() {
        let p = ModelParams::new(3, 0.0, 1.0, 0.0).unwrap();
        let (h0, ht) = build_zzxz(&p).unwrap();
        assert_eq!(h0, ht);
    }

    #[test]
    fn bond_operators_sum_to_hamiltonian() {
        let p = ModelParams::new(5, 2.0, 0.7, -0.4).unwrap();
        let (_, ht) = build_zzxz(&p).unwrap();
        let bonds_only: Vec<_> = ht.bond_operators().into_iter().enumerate().collect();
        let folded = HamiltonianTerms::from_terms(5, &[], &bonds_only).unwrap();
        assert!((folded.to_dense().unwrap() - ht.to_dense().unwrap()).camax() < 1e-13);
    }

    #[test]
    fn reflection_symmetry_detection() {
        let p = ModelParams::new(6, 2.0, 1.0, 1.0).unwrap();
        let (h0, ht) = build_zzxz(&p).unwrap();
        assert!(ht.is_reflection_symmetric() && h0.is_reflection_symmetric());
        let z = pauli_z();
        let skew = HamiltonianTerms::from_terms(6, &[(0, z)], &[]).unwrap();
        assert!(!skew.is_reflection_symmetric());
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(ramp_value(RampKind::Smooth, 0.0, 0.2, 0.9).unwrap(), 0.2);
        assert_abs_diff_eq!(ramp_value(RampKind::Smooth, 1.0, 0.2, 0.9).unwrap(), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(ramp_value(RampKind::Smooth, 0.5, 0.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ramp_value(RampKind::Linear, 0.25, 0.2, 0.6).unwrap(), 0.3, epsilon = 1e-15);
        assert!(ramp_value(RampKind::Linear, 1.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn smooth_ramp_is_flat_at_ends_and_monotone() {
        let f = |s: f64| ramp_unchecked(RampKind::Smooth, s, 0.0, 1.0);
        let h = 1e-5;
        assert!((f(h) - f(0.0)) / h < 1e-4);
        assert!((f(1.0) - f(1.0 - h)) / h < 1e-4);
        let mut prev = f(0.0);
        for k in 1..=1000 {
            let v = f(k as f64 / 1000.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn interpolation_is_affine(lam in 0.0f64..=1.0, seed in 0u64..1000) {
            let p = ModelParams::new(5, 2.0, 1.0, 1.0).unwrap();
            let (h0, ht) = build_zzxz(&p).unwrap();
            let terms = interpolate(&h0, &ht, lam).unwrap();
            let v = random_state(5, seed);
            let mut a = vec![ZERO; 32];
            let mut b0 = vec![ZERO; 32];
            let mut bt = vec![ZERO; 32];
            terms.apply(&v, &mut a);
            h0.apply(&v, &mut b0);
            ht.apply(&v, &mut bt);
            for i in 0..32 {
                let expect = b0[i] * (1.0 - lam) + bt[i] * lam;
                prop_assert!((a[i] - expect).norm() < 1e-12);
            }
        }
    }
}
