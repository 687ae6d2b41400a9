//! Exact diagonalization on the full 2^N space for small chains.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_zzxz, interpolate, HamiltonianTerms, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eigh, lanczos_lowest, symmetric_eigh, LanczosOptions, C64, ZERO};

/// Largest chain handled by the dense solvers.
pub const DENSE_SITE_LIMIT: usize = 14;

/// Subspaces below this dimension are diagonalized directly.
const DIRECT_LIMIT: usize = 600;

const DEGENERACY_TOL: f64 = 1e-10;

/// Reflection-parity sector of the chain (`i -> N-1-i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sector {
    All,
    Even,
    Odd,
}

fn check_size(n: usize) -> Result<()> {
    if n > DENSE_SITE_LIMIT {
        return Err(Error::TooLarge {
            num_sites: n,
            limit: DENSE_SITE_LIMIT,
        });
    }
    Ok(())
}

pub(crate) fn reverse_bits(x: usize, n: usize) -> usize {
    let mut r = 0;
    for i in 0..n {
        r |= ((x >> i) & 1) << (n - 1 - i);
    }
    r
}

/// Orthonormal basis of a parity sector as `(x, Rx)` pairs with `x <= Rx`.
fn sector_pairs(n: usize, sector: Sector) -> Vec<(usize, usize)> {
    let dim = 1usize << n;
    let mut pairs = Vec::new();
    for x in 0..dim {
        let r = reverse_bits(x, n);
        match sector {
            Sector::All => pairs.push((x, x)),
            Sector::Even if x <= r => pairs.push((x, r)),
            Sector::Odd if x < r => pairs.push((x, r)),
            _ => {}
        }
    }
    pairs
}

fn basis_entry(idx: usize, x: usize, rx: usize, sector: Sector) -> C64 {
    if x == rx {
        C64::new(1.0, 0.0)
    } else if idx == rx && sector == Sector::Odd {
        C64::new(-std::f64::consts::FRAC_1_SQRT_2, 0.0)
    } else {
        C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
    }
}

fn direct_sector(terms: &HamiltonianTerms, sector: Sector, k: usize) -> Vec<(f64, Vec<C64>)> {
    let n = terms.num_sites();
    let dim = 1usize << n;
    let pairs = sector_pairs(n, sector);
    let m = pairs.len();
    let mut column = vec![ZERO; dim];
    let mut image = vec![ZERO; dim];
    let mut h = DMatrix::<C64>::zeros(m, m);
    for (c, &(x, rx)) in pairs.iter().enumerate() {
        column[x] = basis_entry(x, x, rx, sector);
        column[rx] = basis_entry(rx, x, rx, sector);
        terms.apply(&column, &mut image);
        column[x] = ZERO;
        column[rx] = ZERO;
        for (r, &(y, ry)) in pairs.iter().enumerate() {
            let mut acc = basis_entry(y, y, ry, sector).conj() * image[y];
            if ry != y {
                acc += basis_entry(ry, y, ry, sector).conj() * image[ry];
            }
            h[(r, c)] = acc;
        }
    }
    let embed = |coefs: &[C64]| -> Vec<C64> {
        let mut out = vec![ZERO; dim];
        for (cf, &(x, rx)) in coefs.iter().zip(&pairs) {
            out[x] += cf * basis_entry(x, x, rx, sector);
            if rx != x {
                out[rx] += cf * basis_entry(rx, x, rx, sector);
            }
        }
        out
    };
    let k = k.min(m);
    if terms.is_real() {
        let (vals, vecs) = symmetric_eigh(h.map(|z| z.re));
        (0..k)
            .map(|j| {
                let coefs: Vec<C64> = vecs.column(j).iter().map(|&x| C64::new(x, 0.0)).collect();
                (vals[j], embed(&coefs))
            })
            .collect()
    } else {
        let (vals, vecs) = hermitian_eigh(h);
        (0..k)
            .map(|j| {
                let coefs: Vec<C64> = vecs.column(j).iter().copied().collect();
                (vals[j], embed(&coefs))
            })
            .collect()
    }
}

fn lanczos_sector(terms: &HamiltonianTerms, sector: Sector, k: usize, seed: u64) -> Result<Vec<(f64, Vec<C64>)>> {
    let n = terms.num_sites();
    let dim = 1usize << n;
    let rev: Vec<usize> = (0..dim).map(|x| reverse_bits(x, n)).collect();
    let project = |v: &mut [C64]| match sector {
        Sector::All => {}
        Sector::Even | Sector::Odd => {
            let sign = if sector == Sector::Even { 1.0 } else { -1.0 };
            for x in 0..dim {
                let r = rev[x];
                if x < r {
                    let a = v[x];
                    let b = v[r];
                    v[x] = (a + b * sign) * 0.5;
                    v[r] = (b + a * sign) * 0.5;
                } else if x == r && sector == Sector::Odd {
                    v[x] = ZERO;
                }
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = terms.is_real();
    let apply = |x: &[C64], y: &mut [C64]| terms.apply(x, y);
    let mut found: Vec<(f64, Vec<C64>)> = Vec::new();
    let mut locked: Vec<Vec<C64>> = Vec::new();
    while found.len() < k {
        let start: Vec<C64> = (0..dim)
            .map(|_| {
                let re = rng.random_range(-1.0..1.0);
                let im = if real { 0.0 } else { rng.random_range(-1.0..1.0) };
                C64::new(re, im)
            })
            .collect();
        match lanczos_lowest(apply, project, &start, &locked, LanczosOptions::default())? {
            Some((e, v)) => {
                locked.push(v.clone());
                found.push((e, v));
            }
            None => break,
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(found)
}

fn sector_dim(n: usize, sector: Sector) -> usize {
    let dim = 1usize << n;
    let palindromes = 1usize << n.div_ceil(2);
    match sector {
        Sector::All => dim,
        Sector::Even => (dim + palindromes) / 2,
        Sector::Odd => (dim - palindromes) / 2,
    }
}

/// The `k` lowest eigenpairs within one reflection-parity sector.
pub fn exact_spectrum_in_sector(terms: &HamiltonianTerms, k: usize, sector: Sector) -> Result<Vec<(f64, Vec<C64>)>> {
    let n = terms.num_sites();
    check_size(n)?;
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    if sector != Sector::All && !terms.is_reflection_symmetric() {
        return Err(invalid("sector", "terms are not reflection symmetric"));
    }
    if sector_dim(n, sector) <= DIRECT_LIMIT {
        return Ok(direct_sector(terms, sector, k));
    }
    lanczos_sector(terms, sector, k, 0x5eed ^ (n as u64) ^ ((sector as u64) << 8))
}

/// The `k` lowest eigenpairs in ascending order.
///
/// Reflection-symmetric operators are solved sector by sector, so that
/// near-degenerate pairs of opposite parity are both resolved.
pub fn exact_spectrum(terms: &HamiltonianTerms, k: usize) -> Result<Vec<(f64, Vec<C64>)>> {
    let n = terms.num_sites();
    check_size(n)?;
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    if (1usize << n) <= DIRECT_LIMIT || !terms.is_reflection_symmetric() {
        return exact_spectrum_in_sector(terms, k, Sector::All);
    }
    let mut all = exact_spectrum_in_sector(terms, k, Sector::Even)?;
    if sector_dim(n, Sector::Odd) > 0 {
        all.extend(exact_spectrum_in_sector(terms, k, Sector::Odd)?);
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all.truncate(k);
    Ok(all)
}

/// Full eigendecomposition as `(energies, eigenvectors as columns)`.
pub fn full_spectrum(terms: &HamiltonianTerms) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let dense = terms.to_dense()?;
    if terms.is_real() {
        let (vals, vecs) = symmetric_eigh(dense.map(|z| z.re));
        Ok((vals, vecs.map(|x| C64::new(x, 0.0))))
    } else {
        Ok(hermitian_eigh(dense))
    }
}

/// Which part of the spectrum the gap is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GapSector {
    /// Lowest two eigenvalues of the whole spectrum.
    #[default]
    Full,
    /// Lowest two eigenvalues of the reflection-even sector, which contains
    /// the uniform initial state and is never left by the dynamics.
    Reachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub s: f64,
    pub ground_energy: f64,
    pub gap: f64,
    pub degenerate: bool,
}

pub fn gap_profile(params: &ModelParams, grid: &[f64]) -> Result<Vec<GapPoint>> {
    gap_profile_in(params, grid, GapSector::Full)
}

/// `E1(s) - E0(s)` on a grid of interpolation parameters. Gaps below 1e-10
/// are reported as zero with the degeneracy flag set.
pub fn gap_profile_in(params: &ModelParams, grid: &[f64], which: GapSector) -> Result<Vec<GapPoint>> {
    let (h0, ht) = build_zzxz(params)?;
    check_size(params.num_sites)?;
    grid.iter()
        .map(|&s| {
            let terms = interpolate(&h0, &ht, s)?;
            let pairs = match which {
                GapSector::Full => exact_spectrum(&terms, 2)?,
                GapSector::Reachable => exact_spectrum_in_sector(&terms, 2, Sector::Even)?,
            };
            let e0 = pairs[0].0;
            let raw = pairs[1].0 - e0;
            let degenerate = raw < DEGENERACY_TOL;
            Ok(GapPoint {
                s,
                ground_energy: e0,
                gap: if degenerate { 0.0 } else { raw },
                degenerate,
            })
        })
        .collect()
}

/// Ground state of `H(s)` on the dense basis.
pub fn ground_state(terms: &HamiltonianTerms) -> Result<(f64, Vec<C64>)> {
    let mut pairs = exact_spectrum(terms, 1)?;
    Ok(pairs.remove(0))
}
