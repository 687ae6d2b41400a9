//! Two-site DMRG for nearest-neighbour chains.

use nalgebra::{DMatrix, Matrix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HamiltonianTerms;
use crate::error::{invalid, Error, Result};
use crate::linalg::{lanczos_lowest, LanczosOptions, C64, ONE, ZERO};
use crate::mps::{truncated_svd, Mps, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmrgOptions {
    pub max_bond: usize,
    pub sweeps: usize,
    pub tol: f64,
    pub svd_cutoff: f64,
    pub seed: u64,
}

impl Default for DmrgOptions {
    fn default() -> Self {
        Self {
            max_bond: 64,
            sweeps: 30,
            tol: 1e-10,
            svd_cutoff: 1e-12,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DmrgResult {
    pub energy: f64,
    pub state: Mps,
    /// Variational energy after each full (right and back) sweep.
    pub sweep_energies: Vec<f64>,
}

/// Matrix product operator site tensor `W[a][b]` as a grid of 2x2 blocks.
#[derive(Debug, Clone)]
struct MpoSite {
    dl: usize,
    dr: usize,
    ops: Vec<Option<Matrix2<C64>>>,
}

impl MpoSite {
    fn new(dl: usize, dr: usize) -> Self {
        Self {
            dl,
            dr,
            ops: vec![None; dl * dr],
        }
    }

    fn get(&self, a: usize, b: usize) -> Option<&Matrix2<C64>> {
        self.ops[a * self.dr + b].as_ref()
    }

    fn set(&mut self, a: usize, b: usize, m: Matrix2<C64>) {
        self.ops[a * self.dr + b] = Some(m);
    }
}

/// Lower-triangular MPO for a sum of bond operators. Each bond operator is
/// split by an operator Schmidt decomposition into at most four products.
fn build_mpo(terms: &HamiltonianTerms) -> Vec<MpoSite> {
    let n = terms.num_sites();
    let mut splits: Vec<Vec<(Matrix2<C64>, Matrix2<C64>)>> = Vec::with_capacity(n - 1);
    for op in terms.bond_operators() {
        // M[(a a'), (b b')] = O[2a+b, 2a'+b']
        let m = DMatrix::<C64>::from_fn(4, 4, |r, c| {
            let (a, ap) = (r / 2, r % 2);
            let (b, bp) = (c / 2, c % 2);
            op[(2 * a + b, 2 * ap + bp)]
        });
        let svd = m.svd(true, true);
        let u = svd.u.expect("U");
        let vt = svd.v_t.expect("V^T");
        let mut parts = Vec::new();
        for k in 0..svd.singular_values.len() {
            let s = svd.singular_values[k];
            if s < 1e-14 {
                continue;
            }
            let rs = C64::new(s.sqrt(), 0.0);
            let left = Matrix2::from_fn(|a, ap| u[(a * 2 + ap, k)] * rs);
            let right = Matrix2::from_fn(|b, bp| vt[(k, b * 2 + bp)] * rs);
            parts.push((left, right));
        }
        splits.push(parts);
    }
    let rank = splits.iter().map(|p| p.len()).max().unwrap_or(0);
    let d = rank + 2;
    let end = d - 1;
    let id = Matrix2::<C64>::identity();
    let mut sites = Vec::with_capacity(n);
    for i in 0..n {
        let mut w = MpoSite::new(d, d);
        w.set(0, 0, id);
        w.set(end, end, id);
        if i + 1 < n {
            for (k, (left, _)) in splits[i].iter().enumerate() {
                w.set(0, k + 1, *left);
            }
        }
        if i > 0 {
            for (k, (_, right)) in splits[i - 1].iter().enumerate() {
                w.set(k + 1, end, *right);
            }
        }
        sites.push(w);
    }
    sites
}

type Env = Vec<DMatrix<C64>>;

fn left_boundary(d: usize) -> Env {
    let mut env = vec![DMatrix::zeros(1, 1); d];
    env[0][(0, 0)] = ONE;
    env
}

fn right_boundary(d: usize) -> Env {
    let mut env = vec![DMatrix::zeros(1, 1); d];
    env[d - 1][(0, 0)] = ONE;
    env
}

fn extend_left(env: &Env, a: &Tensor3, w: &MpoSite) -> Env {
    let slices = [a.slice(0), a.slice(1)];
    let mut out = vec![DMatrix::<C64>::zeros(a.dr, a.dr); w.dr];
    for al in 0..w.dl {
        if env[al].iter().all(|z| *z == ZERO) {
            continue;
        }
        let z = [&env[al] * &slices[0], &env[al] * &slices[1]];
        for be in 0..w.dr {
            if let Some(op) = w.get(al, be) {
                for s in 0..2 {
                    for sp in 0..2 {
                        let c = op[(s, sp)];
                        if c != ZERO {
                            out[be] += slices[s].adjoint() * &z[sp] * c;
                        }
                    }
                }
            }
        }
    }
    out
}

fn extend_right(env: &Env, b: &Tensor3, w: &MpoSite) -> Env {
    let slices = [b.slice(0), b.slice(1)];
    let mut out = vec![DMatrix::<C64>::zeros(b.dl, b.dl); w.dl];
    for be in 0..w.dr {
        if env[be].iter().all(|z| *z == ZERO) {
            continue;
        }
        let z = [&env[be] * slices[0].transpose(), &env[be] * slices[1].transpose()];
        for al in 0..w.dl {
            if let Some(op) = w.get(al, be) {
                for s in 0..2 {
                    for sp in 0..2 {
                        let c = op[(s, sp)];
                        if c != ZERO {
                            out[al] += slices[s].conjugate() * &z[sp] * c;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Effective Hamiltonian on a two-site block, stored as `dl x (4 dr)` with
/// column `s * dr + b` and `s = 2 s1 + s2`.
struct Effective<'a> {
    left: &'a Env,
    right: &'a Env,
    /// `w12[(a, g)]` = 4x4 matrix of `sum_b W1[a,b] (x) W2[b,g]`, if nonzero.
    w12: Vec<Option<nalgebra::Matrix4<C64>>>,
    d_mid_r: usize,
    dl: usize,
    dr: usize,
}

impl<'a> Effective<'a> {
    fn new(left: &'a Env, right: &'a Env, w1: &MpoSite, w2: &MpoSite, dl: usize, dr: usize) -> Self {
        let mut w12 = vec![None; w1.dl * w2.dr];
        for a in 0..w1.dl {
            for g in 0..w2.dr {
                let mut acc = nalgebra::Matrix4::<C64>::zeros();
                let mut any = false;
                for b in 0..w1.dr {
                    if let (Some(x), Some(y)) = (w1.get(a, b), w2.get(b, g)) {
                        acc += crate::linalg::kron2(x, y);
                        any = true;
                    }
                }
                if any {
                    w12[a * w2.dr + g] = Some(acc);
                }
            }
        }
        Self {
            left,
            right,
            w12,
            d_mid_r: w2.dr,
            dl,
            dr,
        }
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let (dl, dr) = (self.dl, self.dr);
        // x is row-major over (a, s, b)
        let theta = DMatrix::<C64>::from_fn(dl, 4 * dr, |a, col| x[a * 4 * dr + col]);
        let mut out = DMatrix::<C64>::zeros(dl, 4 * dr);
        let d_left = self.left.len();
        let xs: Vec<Option<DMatrix<C64>>> = (0..d_left)
            .map(|al| {
                if self.left[al].iter().all(|z| *z == ZERO) {
                    None
                } else {
                    Some(&self.left[al] * &theta)
                }
            })
            .collect();
        for g in 0..self.d_mid_r {
            if self.right[g].iter().all(|z| *z == ZERO) {
                continue;
            }
            let mut yg = DMatrix::<C64>::zeros(dl, 4 * dr);
            let mut touched = false;
            for (al, xa) in xs.iter().enumerate() {
                let (Some(xa), Some(w)) = (xa, &self.w12[al * self.d_mid_r + g]) else {
                    continue;
                };
                touched = true;
                for s in 0..4 {
                    for sp in 0..4 {
                        let c = w[(s, sp)];
                        if c != ZERO {
                            let src = xa.columns(sp * dr, dr) * c;
                            let mut dst = yg.columns_mut(s * dr, dr);
                            dst += src;
                        }
                    }
                }
            }
            if !touched {
                continue;
            }
            let rt = self.right[g].transpose();
            for s in 0..4 {
                let block = yg.columns(s * dr, dr) * &rt;
                let mut dst = out.columns_mut(s * dr, dr);
                dst += block;
            }
        }
        for a in 0..dl {
            for col in 0..4 * dr {
                y[a * 4 * dr + col] = out[(a, col)];
            }
        }
    }
}

/// Two-site block of the MPS flattened row-major over `(a, s1, s2, b)`.
fn block_vector(mps: &Mps, site: usize) -> Vec<C64> {
    let m = mps.two_site_block(site);
    let dl = mps.tensors[site].dl;
    let dr = mps.tensors[site + 1].dr;
    let mut v = vec![ZERO; dl * 4 * dr];
    for a in 0..dl {
        for s1 in 0..2 {
            for s2 in 0..2 {
                for b in 0..dr {
                    v[a * 4 * dr + (2 * s1 + s2) * dr + b] = m[(a * 2 + s1, s2 * dr + b)];
                }
            }
        }
    }
    v
}

fn block_matrix(v: &[C64], dl: usize, dr: usize) -> DMatrix<C64> {
    DMatrix::from_fn(dl * 2, 2 * dr, |row, col| {
        let (a, s1) = (row / 2, row % 2);
        let (s2, b) = (col / dr, col % dr);
        v[a * 4 * dr + (2 * s1 + s2) * dr + b]
    })
}

/// Contractions of the current MPS (bra) with a fixed lower state (ket)
/// from either end, used to lock the lower state out of each local solve.
struct Orthogonal<'a> {
    target: &'a Mps,
    lefts: Vec<DMatrix<C64>>,
    rights: Vec<DMatrix<C64>>,
}

impl<'a> Orthogonal<'a> {
    fn new(psi: &Mps, target: &'a Mps) -> Self {
        let n = psi.num_sites();
        let unit = DMatrix::from_element(1, 1, ONE);
        let mut rights = vec![unit.clone(); n + 1];
        for k in (1..n).rev() {
            rights[k] = Self::right_step(&rights[k + 1], &psi.tensors[k], &target.tensors[k]);
        }
        Self {
            target,
            lefts: vec![unit; n + 1],
            rights,
        }
    }

    fn left_step(env: &DMatrix<C64>, a: &Tensor3, t: &Tensor3) -> DMatrix<C64> {
        (0..2).map(|s| a.slice(s).adjoint() * env * t.slice(s)).fold(DMatrix::zeros(a.dr, t.dr), |x, y| x + y)
    }

    fn right_step(env: &DMatrix<C64>, b: &Tensor3, t: &Tensor3) -> DMatrix<C64> {
        (0..2)
            .map(|s| b.slice(s).conjugate() * env * t.slice(s).transpose())
            .fold(DMatrix::zeros(b.dl, t.dl), |x, y| x + y)
    }

    /// The lower state expressed in the two-site basis of the block at `site`.
    fn local(&self, site: usize, dl: usize, dr: usize) -> Vec<C64> {
        let g = block_vector(self.target, site);
        let (gl, gr) = (self.target.tensors[site].dl, self.target.tensors[site + 1].dr);
        let (l, r) = (&self.lefts[site], &self.rights[site + 2]);
        let mut v = vec![ZERO; dl * 4 * dr];
        for s in 0..4 {
            let gs = DMatrix::from_fn(gl, gr, |a, b| g[a * 4 * gr + s * gr + b]);
            let m = l * gs * r.transpose();
            for a in 0..dl {
                for b in 0..dr {
                    v[a * 4 * dr + s * dr + b] = m[(a, b)];
                }
            }
        }
        v
    }
}

/// Ground state and energy by two-site DMRG.
pub fn dmrg_ground_state(terms: &HamiltonianTerms, opts: &DmrgOptions) -> Result<DmrgResult> {
    dmrg_lowest(terms, opts, &[])
}

/// Lowest state orthogonal to every state in `lower`, by two-site DMRG with
/// the lower states projected out of each local eigenproblem. With the
/// ground state in `lower` this is the first excited state.
pub fn dmrg_excited_state(terms: &HamiltonianTerms, opts: &DmrgOptions, lower: &[Mps]) -> Result<DmrgResult> {
    for m in lower {
        if m.num_sites() != terms.num_sites() {
            return Err(Error::SiteMismatch {
                left: m.num_sites(),
                right: terms.num_sites(),
            });
        }
    }
    dmrg_lowest(terms, opts, lower)
}

fn dmrg_lowest(terms: &HamiltonianTerms, opts: &DmrgOptions, lower: &[Mps]) -> Result<DmrgResult> {
    let n = terms.num_sites();
    if opts.max_bond < 2 {
        return Err(invalid("max_bond", "must be at least 2"));
    }
    if opts.sweeps < 1 {
        return Err(invalid("sweeps", "must be positive"));
    }
    let mpo = build_mpo(terms);
    let d = mpo[0].dl;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut psi = Mps::random(n, opts.max_bond.min(4), &mut rng)?;
    psi.chi_max = opts.max_bond;
    psi.svd_cutoff = opts.svd_cutoff;
    psi.move_center(0)?;

    let mut rights: Vec<Env> = vec![Vec::new(); n + 1];
    rights[n] = right_boundary(d);
    for k in (1..n).rev() {
        rights[k] = extend_right(&rights[k + 1], &psi.tensors[k], &mpo[k]);
    }
    let mut lefts: Vec<Env> = vec![Vec::new(); n + 1];
    lefts[0] = left_boundary(d);
    let mut orth: Vec<Orthogonal> = lower.iter().map(|m| Orthogonal::new(&psi, m)).collect();

    let local_opts = LanczosOptions {
        max_krylov: 40,
        tol: 1e-12,
        max_restarts: 40,
        accept_unconverged: true,
    };
    let solve = |psi: &Mps, lefts: &[Env], rights: &[Env], orth: &[Orthogonal], i: usize| -> Result<Vec<C64>> {
        let dl = psi.tensors[i].dl;
        let dr = psi.tensors[i + 1].dr;
        let eff = Effective::new(&lefts[i], &rights[i + 2], &mpo[i], &mpo[i + 1], dl, dr);
        let locked = locked_basis(orth.iter().map(|o| o.local(i, dl, dr)).collect());
        let mut start = block_vector(psi, i);
        if !locked.is_empty() {
            // keep a component outside the locked space even when the block
            // starts out parallel to a lower state
            for (k, z) in start.iter_mut().enumerate() {
                *z += C64::new(1e-3 * (((k * 7919) % 101) as f64 / 101.0 - 0.5), 0.0);
            }
        }
        let (_, v) = lanczos_lowest(|x, y| eff.apply(x, y), |_| {}, &start, &locked, local_opts)?.ok_or(Error::ZeroNorm)?;
        Ok(v)
    };
    let mut sweep_energies: Vec<f64> = Vec::new();
    let mut last_delta = f64::INFINITY;

    for _sweep in 0..opts.sweeps {
        for i in 0..n - 1 {
            let (dl, dr) = (psi.tensors[i].dl, psi.tensors[i + 1].dr);
            let v = solve(&psi, &lefts, &rights, &orth, i)?;
            let split = truncated_svd(block_matrix(&v, dl, dr), opts.max_bond, opts.svd_cutoff)?;
            psi.tensors[i] = Tensor3::from_left_matrix(&split.left);
            let mut right = split.right;
            for (r, s) in split.singular.iter().enumerate() {
                for c in 0..right.ncols() {
                    right[(r, c)] *= *s;
                }
            }
            psi.tensors[i + 1] = Tensor3::from_right_matrix(&right);
            psi.center = Some(i + 1);
            lefts[i + 1] = extend_left(&lefts[i], &psi.tensors[i], &mpo[i]);
            for o in orth.iter_mut() {
                o.lefts[i + 1] = Orthogonal::left_step(&o.lefts[i], &psi.tensors[i], &o.target.tensors[i]);
            }
        }
        for i in (0..n - 1).rev() {
            let (dl, dr) = (psi.tensors[i].dl, psi.tensors[i + 1].dr);
            let v = solve(&psi, &lefts, &rights, &orth, i)?;
            let split = truncated_svd(block_matrix(&v, dl, dr), opts.max_bond, opts.svd_cutoff)?;
            let mut left = split.left;
            for (c, s) in split.singular.iter().enumerate() {
                for r in 0..left.nrows() {
                    left[(r, c)] *= *s;
                }
            }
            psi.tensors[i] = Tensor3::from_left_matrix(&left);
            psi.tensors[i + 1] = Tensor3::from_right_matrix(&split.right);
            psi.center = Some(i);
            rights[i + 1] = extend_right(&rights[i + 2], &psi.tensors[i + 1], &mpo[i + 1]);
            for o in orth.iter_mut() {
                o.rights[i + 1] = Orthogonal::right_step(&o.rights[i + 2], &psi.tensors[i + 1], &o.target.tensors[i + 1]);
            }
        }
        let nrm = psi.tensors[0].frobenius();
        for z in psi.tensors[0].data.iter_mut() {
            *z /= nrm;
        }
        let energy = psi.energy(terms)?;
        if let Some(prev) = sweep_energies.last() {
            last_delta = (energy - prev).abs();
        }
        sweep_energies.push(energy);
        if last_delta < opts.tol {
            return Ok(DmrgResult {
                energy,
                state: psi,
                sweep_energies,
            });
        }
    }
    Err(Error::NotConverged {
        what: "DMRG",
        iterations: opts.sweeps,
        last_delta,
    })
}

/// `E1(s) - E0(s)` on a grid from a ground and a first-excited DMRG run at
/// each point, for chains beyond the dense limit.
pub fn dmrg_gap_profile(params: &super::ModelParams, grid: &[f64], opts: &DmrgOptions) -> Result<Vec<super::GapPoint>> {
    let (h0, ht) = super::build_zzxz(params)?;
    grid.iter()
        .map(|&s| {
            let terms = super::interpolate(&h0, &ht, s)?;
            let gs = dmrg_ground_state(&terms, opts)?;
            let ex = dmrg_excited_state(&terms, opts, std::slice::from_ref(&gs.state))?;
            let raw = (ex.energy - gs.energy).max(0.0);
            let degenerate = raw < opts.tol.sqrt();
            Ok(super::GapPoint {
                s,
                ground_energy: gs.energy,
                gap: if degenerate { 0.0 } else { raw },
                degenerate,
            })
        })
        .collect()
}

/// Orthonormal basis of the span of `vectors`, dropping negligible ones.
fn locked_basis(vectors: Vec<Vec<C64>>) -> Vec<Vec<C64>> {
    let mut basis: Vec<Vec<C64>> = Vec::new();
    for mut v in vectors {
        for b in &basis {
            let c = crate::linalg::vdot(b, &v);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let nrm = crate::linalg::norm(&v);
        if nrm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nrm);
            basis.push(v);
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::exact::exact_spectrum;
    use crate::hamiltonian::{build_zzxz, interpolate, ModelParams};
    use approx::assert_abs_diff_eq;

    #[test]
    fn matches_exact_ground_energy() {
        for (j, lam) in [(3.0, 0.34), (1.0, 1.0), (2.0, 0.5)] {
            let p = ModelParams::new(8, j, 1.0, 1.0).unwrap();
            let (h0, ht) = build_zzxz(&p).unwrap();
            let terms = interpolate(&h0, &ht, lam).unwrap();
            let exact = exact_spectrum(&terms, 1).unwrap()[0].0;
            let res = dmrg_ground_state(&terms, &DmrgOptions::default()).unwrap();
            assert_abs_diff_eq!(res.energy, exact, epsilon = 1e-8);
            assert!(res.energy >= exact - 1e-10);
            assert_abs_diff_eq!(res.state.norm_sqr(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(res.state.energy(&terms).unwrap(), res.energy, epsilon = 1e-10);
            for w in res.sweep_energies.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn first_excited_state_matches_exact() {
        for (j, lam) in [(3.0, 0.34), (1.0, 0.8)] {
            let p = ModelParams::new(8, j, 1.0, 1.0).unwrap();
            let (h0, ht) = build_zzxz(&p).unwrap();
            let terms = interpolate(&h0, &ht, lam).unwrap();
            let exact = exact_spectrum(&terms, 2).unwrap();
            let gs = dmrg_ground_state(&terms, &DmrgOptions::default()).unwrap();
            let ex = dmrg_excited_state(&terms, &DmrgOptions::default(), std::slice::from_ref(&gs.state)).unwrap();
            assert_abs_diff_eq!(ex.energy, exact[1].0, epsilon = 1e-7);
            assert!(gs.state.overlap(&ex.state).unwrap().norm() < 1e-6);
        }
    }

    #[test]
    fn dmrg_gap_profile_matches_dense() {
        let p = ModelParams::new(8, 2.0, 1.0, 1.0).unwrap();
        let grid = [0.2, 0.5, 0.9];
        let dense = crate::hamiltonian::gap_profile(&p, &grid).unwrap();
        let dmrg = dmrg_gap_profile(&p, &grid, &DmrgOptions::default()).unwrap();
        for (a, b) in dense.iter().zip(&dmrg) {
            assert_abs_diff_eq!(a.gap, b.gap, epsilon = 1e-6);
        }
    }

    #[test]
    fn decoupled_chain() {
        let p = ModelParams::new(3, 0.0, 1.0, 0.0).unwrap();
        let (_, ht) = build_zzxz(&p).unwrap();
        let res = dmrg_ground_state(&ht, &DmrgOptions::default()).unwrap();
        assert_abs_diff_eq!(res.energy, -3.0, epsilon = 1e-10);
        assert_eq!(res.state.max_bond(), 1);
    }

    #[test]
    fn rejects_tiny_bond() {
        let p = ModelParams::new(4, 1.0, 1.0, 1.0).unwrap();
        let (_, ht) = build_zzxz(&p).unwrap();
        let opts = DmrgOptions {
            max_bond: 1,
            ..Default::default()
        };
        assert!(dmrg_ground_state(&ht, &opts).is_err());
    }
}
