//! Matrix product states in mixed canonical form.
//!
//! Tensors are stored with index order (left bond, physical, right bond).
//! When `center` is `Some(k)`, every tensor left of `k` is left-isometric and
//! every tensor right of `k` is right-isometric, so the state norm lives in
//! tensor `k` alone.

use nalgebra::{DMatrix, Matrix2, Matrix4};
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::HamiltonianTerms;
use crate::linalg::{unitarity_deviation, C64, ONE, ZERO};
use crate::statevector::{Register, StateVector, UNITARY_TOL};

pub const DEFAULT_CHI_MAX: usize = 64;
pub const DEFAULT_SVD_CUTOFF: f64 = 1e-10;
const DENSE_EXPORT_LIMIT: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tensor3 {
    pub dl: usize,
    pub dr: usize,
    pub data: Vec<C64>,
}

impl Tensor3 {
    pub fn zeros(dl: usize, dr: usize) -> Self {
        Self {
            dl,
            dr,
            data: vec![ZERO; dl * 2 * dr],
        }
    }

    #[inline]
    pub fn get(&self, l: usize, p: usize, r: usize) -> C64 {
        self.data[(l * 2 + p) * self.dr + r]
    }

    #[inline]
    pub fn get_mut(&mut self, l: usize, p: usize, r: usize) -> &mut C64 {
        &mut self.data[(l * 2 + p) * self.dr + r]
    }

    /// `(dl * 2) x dr` matrix with row index `l * 2 + p`.
    pub fn left_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dl * 2, self.dr, |row, r| self.data[row * self.dr + r])
    }

    /// `dl x (2 * dr)` matrix with column index `p * dr + r`.
    pub fn right_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dl, 2 * self.dr, |l, col| self.get(l, col / self.dr, col % self.dr))
    }

    pub fn from_left_matrix(m: &DMatrix<C64>) -> Self {
        let dl = m.nrows() / 2;
        let dr = m.ncols();
        let mut t = Self::zeros(dl, dr);
        for row in 0..dl * 2 {
            for r in 0..dr {
                t.data[row * dr + r] = m[(row, r)];
            }
        }
        t
    }

    pub fn from_right_matrix(m: &DMatrix<C64>) -> Self {
        let dl = m.nrows();
        let dr = m.ncols() / 2;
        let mut t = Self::zeros(dl, dr);
        for l in 0..dl {
            for col in 0..2 * dr {
                *t.get_mut(l, col / dr, col % dr) = m[(l, col)];
            }
        }
        t
    }

    /// The `dl x dr` slice at physical index `p`.
    pub fn slice(&self, p: usize) -> DMatrix<C64> {
        DMatrix::from_fn(self.dl, self.dr, |l, r| self.get(l, p, r))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Result of a truncated SVD of a two-site block.
pub(crate) struct Split {
    pub left: DMatrix<C64>,
    pub singular: Vec<f64>,
    pub right: DMatrix<C64>,
    pub discarded: f64,
}

/// SVD of `m` keeping at most `chi_max` values above `cutoff`; the kept
/// spectrum is rescaled to preserve the Frobenius norm of `m`.
pub(crate) fn truncated_svd(m: DMatrix<C64>, chi_max: usize, cutoff: f64) -> Result<Split> {
    let (rows, cols) = m.shape();
    let svd = nalgebra::SVD::try_new(m, true, true, f64::EPSILON, 0).ok_or(Error::NotConverged {
        what: "singular value decomposition",
        iterations: 0,
        last_delta: f64::NAN,
    })?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut keep = order
        .iter()
        .take_while(|&&i| svd.singular_values[i] > cutoff)
        .count()
        .min(chi_max)
        .max(1);
    keep = keep.min(rows.min(cols));
    let kept: f64 = order[..keep].iter().map(|&i| svd.singular_values[i].powi(2)).sum();
    let discarded = ((total - kept) / total).max(0.0);
    let rescale = (total / kept).sqrt();
    let left = DMatrix::from_fn(rows, keep, |r, c| u[(r, order[c])]);
    let right = DMatrix::from_fn(keep, cols, |r, c| vt[(order[r], c)]);
    let singular = order[..keep].iter().map(|&i| svd.singular_values[i] * rescale).collect();
    Ok(Split {
        left,
        singular,
        right,
        discarded,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Mps {
    pub(crate) tensors: Vec<Tensor3>,
    pub(crate) center: Option<usize>,
    pub chi_max: usize,
    pub svd_cutoff: f64,
    cum_truncation: f64,
    norm_log: f64,
}

impl Mps {
    pub fn product_state(local_states: &[[C64; 2]]) -> Result<Self> {
        Self::product_state_with(local_states, DEFAULT_CHI_MAX, DEFAULT_SVD_CUTOFF)
    }

    pub fn product_state_with(local_states: &[[C64; 2]], chi_max: usize, svd_cutoff: f64) -> Result<Self> {
        if local_states.is_empty() {
            return Err(invalid("local_states", "empty"));
        }
        if chi_max < 1 {
            return Err(invalid("chi_max", "must be positive"));
        }
        let mut norm_log = 0.0;
        let mut tensors = Vec::with_capacity(local_states.len());
        for (i, v) in local_states.iter().enumerate() {
            let nv = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
            if nv == 0.0 || !nv.is_finite() {
                return Err(invalid("local_states", format!("local state {i} is zero")));
            }
            norm_log += nv.ln();
            let mut t = Tensor3::zeros(1, 1);
            t.data[0] = v[0] / nv;
            t.data[1] = v[1] / nv;
            tensors.push(t);
        }
        Ok(Self {
            tensors,
            center: Some(0),
            chi_max,
            svd_cutoff,
            cum_truncation: 0.0,
            norm_log,
        })
    }

    /// Builds an MPS from raw tensors without any normalization.
    pub fn from_tensors(tensors: Vec<Tensor3>, chi_max: usize, svd_cutoff: f64) -> Result<Self> {
        if tensors.is_empty() {
            return Err(invalid("tensors", "empty"));
        }
        if tensors[0].dl != 1 || tensors[tensors.len() - 1].dr != 1 {
            return Err(invalid("tensors", "boundary bonds must have dimension 1"));
        }
        for (k, w) in tensors.windows(2).enumerate() {
            if w[0].dr != w[1].dl {
                return Err(invalid("tensors", format!("bond mismatch between sites {k} and {}", k + 1)));
            }
        }
        Ok(Self {
            tensors,
            center: None,
            chi_max,
            svd_cutoff,
            cum_truncation: 0.0,
            norm_log: 0.0,
        })
    }

    /// Exact (or truncated, if `chi_max` is small) MPS of a dense state.
    pub fn from_state_vector(state: &StateVector, chi_max: usize, svd_cutoff: f64) -> Result<Self> {
        let n = state.num_sites();
        let amps = state.amplitudes();
        let mut tensors = Vec::with_capacity(n);
        let mut rest = DMatrix::from_row_slice(1, amps.len(), amps);
        let mut discarded = 0.0;
        for _ in 0..n - 1 {
            let dl = rest.nrows();
            let cols = rest.ncols() / 2;
            let m = DMatrix::from_fn(dl * 2, cols, |row, c| rest[(row / 2, (row % 2) * cols + c)]);
            let split = truncated_svd(m, chi_max, svd_cutoff)?;
            discarded += split.discarded;
            tensors.push(Tensor3::from_left_matrix(&split.left));
            let s = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                split.singular.len(),
                split.singular.iter().map(|&x| C64::new(x, 0.0)),
            ));
            rest = s * split.right;
        }
        let dl = rest.nrows();
        let last = DMatrix::from_fn(dl * 2, 1, |row, _| rest[(row / 2, row % 2)]);
        tensors.push(Tensor3::from_left_matrix(&last));
        let mut mps = Self::from_tensors(tensors, chi_max, svd_cutoff)?;
        mps.cum_truncation = discarded;
        mps.center = Some(n - 1);
        mps.normalize_center()?;
        Ok(mps)
    }

    /// Random tensors with the given uniform bond dimension, canonicalized.
    pub fn random<R: Rng>(num_sites: usize, bond: usize, rng: &mut R) -> Result<Self> {
        let mut tensors = Vec::with_capacity(num_sites);
        for k in 0..num_sites {
            let dl = if k == 0 { 1 } else { bond };
            let dr = if k + 1 == num_sites { 1 } else { bond };
            let mut t = Tensor3::zeros(dl, dr);
            for z in t.data.iter_mut() {
                *z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            tensors.push(t);
        }
        let mut mps = Self::from_tensors(tensors, DEFAULT_CHI_MAX.max(bond), DEFAULT_SVD_CUTOFF)?;
        mps.canonicalize()?;
        mps.norm_log = 0.0;
        Ok(mps)
    }

    pub fn num_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[Tensor3] {
        &self.tensors
    }

    pub fn center(&self) -> Option<usize> {
        self.center
    }

    /// Bond dimensions between neighbouring sites (length N-1).
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.tensors.len() - 1].iter().map(|t| t.dr).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn cum_truncation(&self) -> f64 {
        self.cum_truncation
    }

    pub fn norm_log(&self) -> f64 {
        self.norm_log
    }

    pub(crate) fn add_truncation(&mut self, weight: f64) {
        self.cum_truncation += weight;
        if weight > 0.0 {
            self.norm_log += 0.5 * (1.0 - weight).max(f64::MIN_POSITIVE).ln();
        }
    }

    /// Multiplies the state by a scalar (used to build unnormalized states).
    pub fn scale(&mut self, factor: C64) {
        let k = self.center.unwrap_or(0);
        for z in self.tensors[k].data.iter_mut() {
            *z *= factor;
        }
    }

    fn normalize_center(&mut self) -> Result<()> {
        let k = self.center.expect("center set");
        let nrm = self.tensors[k].frobenius();
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(Error::ZeroNorm);
        }
        for z in self.tensors[k].data.iter_mut() {
            *z /= nrm;
        }
        self.norm_log += nrm.ln();
        Ok(())
    }

    /// Brings the state to mixed canonical form with unit norm.
    pub fn canonicalize(&mut self) -> Result<()> {
        let n = self.num_sites();
        // right-to-left sweep then left-to-right, so that every bond is
        // compressed to the rank of its Schmidt decomposition
        self.center = Some(n - 1);
        for k in (1..n).rev() {
            self.shift_left(k)?;
        }
        self.center = Some(0);
        for k in 0..n - 1 {
            self.shift_right(k)?;
        }
        self.center = Some(n - 1);
        self.normalize_center()
    }

    fn shift_right(&mut self, k: usize) -> Result<()> {
        let m = self.tensors[k].left_matrix();
        let qr = m.qr();
        let q = qr.q();
        let r = qr.r();
        self.tensors[k] = Tensor3::from_left_matrix(&q);
        let next = r * self.tensors[k + 1].right_matrix();
        self.tensors[k + 1] = Tensor3::from_right_matrix(&next);
        Ok(())
    }

    fn shift_left(&mut self, k: usize) -> Result<()> {
        let m = self.tensors[k].right_matrix();
        let qr = m.adjoint().qr();
        let q = qr.q();
        let r = qr.r();
        self.tensors[k] = Tensor3::from_right_matrix(&q.adjoint());
        let prev = self.tensors[k - 1].left_matrix() * r.adjoint();
        self.tensors[k - 1] = Tensor3::from_left_matrix(&prev);
        Ok(())
    }

    /// Moves the orthogonality center to `target`.
    pub fn move_center(&mut self, target: usize) -> Result<()> {
        if target >= self.num_sites() {
            return Err(invalid("site", format!("{target} out of range")));
        }
        let mut c = match self.center {
            Some(c) => c,
            None => {
                self.canonicalize()?;
                self.num_sites() - 1
            }
        };
        while c < target {
            self.shift_right(c)?;
            c += 1;
        }
        while c > target {
            self.shift_left(c)?;
            c -= 1;
        }
        self.center = Some(c);
        Ok(())
    }

    /// Applies a two-site unitary on `(site, site + 1)` with explicit
    /// truncation settings and returns the discarded weight.
    pub fn apply_two_site_gate(&mut self, gate: &Matrix4<C64>, site: usize, chi_max: usize, svd_cutoff: f64) -> Result<f64> {
        if site + 1 >= self.num_sites() {
            return Err(invalid("site", format!("bond {site} out of range for {} sites", self.num_sites())));
        }
        let deviation = unitarity_deviation(gate);
        if deviation > UNITARY_TOL {
            return Err(Error::NonUnitary { deviation });
        }
        if chi_max < 1 {
            return Err(invalid("chi_max", "must be positive"));
        }
        // either tensor of the block may hold the center
        if !matches!(self.center, Some(c) if c == site || c == site + 1) {
            self.move_center(site)?;
        }
        let theta = self.two_site_block(site);
        let dl = self.tensors[site].dl;
        let dr = self.tensors[site + 1].dr;
        let mut out = DMatrix::<C64>::zeros(dl * 2, 2 * dr);
        for l in 0..dl {
            for r in 0..dr {
                let mut local = [ZERO; 4];
                for (q, v) in local.iter_mut().enumerate() {
                    *v = theta[(l * 2 + q / 2, (q % 2) * dr + r)];
                }
                for q in 0..4 {
                    let mut acc = ZERO;
                    for (p, v) in local.iter().enumerate() {
                        acc += gate[(q, p)] * v;
                    }
                    out[(l * 2 + q / 2, (q % 2) * dr + r)] = acc;
                }
            }
        }
        self.split_block(out, site, chi_max, svd_cutoff)
    }

    /// `(dl * 2) x (2 * dr)` block of sites `site, site + 1`.
    pub(crate) fn two_site_block(&self, site: usize) -> DMatrix<C64> {
        self.tensors[site].left_matrix() * self.tensors[site + 1].right_matrix()
    }

    /// Splits a two-site block back into tensors, leaving the center at `site + 1`.
    pub(crate) fn split_block(&mut self, block: DMatrix<C64>, site: usize, chi_max: usize, svd_cutoff: f64) -> Result<f64> {
        let split = truncated_svd(block, chi_max, svd_cutoff)?;
        self.tensors[site] = Tensor3::from_left_matrix(&split.left);
        let mut right = split.right;
        for (r, s) in split.singular.iter().enumerate() {
            for c in 0..right.ncols() {
                right[(r, c)] *= *s;
            }
        }
        self.tensors[site + 1] = Tensor3::from_right_matrix(&right);
        self.center = Some(site + 1);
        self.add_truncation(split.discarded);
        Ok(split.discarded)
    }

    pub fn apply_single_site_gate(&mut self, gate: &Matrix2<C64>, site: usize) -> Result<()> {
        if site >= self.num_sites() {
            return Err(invalid("site", format!("{site} out of range")));
        }
        let deviation = unitarity_deviation(gate);
        if deviation > UNITARY_TOL {
            return Err(Error::NonUnitary { deviation });
        }
        let t = &mut self.tensors[site];
        for l in 0..t.dl {
            for r in 0..t.dr {
                let a0 = t.get(l, 0, r);
                let a1 = t.get(l, 1, r);
                *t.get_mut(l, 0, r) = gate[(0, 0)] * a0 + gate[(0, 1)] * a1;
                *t.get_mut(l, 1, r) = gate[(1, 0)] * a0 + gate[(1, 1)] * a1;
            }
        }
        Ok(())
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &Mps) -> Result<C64> {
        if self.num_sites() != other.num_sites() {
            return Err(Error::SiteMismatch {
                left: self.num_sites(),
                right: other.num_sites(),
            });
        }
        let mut env = DMatrix::<C64>::from_element(1, 1, ONE);
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            env = transfer_left(&env, a, b);
        }
        Ok(env[(0, 0)])
    }

    pub fn norm_sqr(&self) -> f64 {
        match self.center {
            Some(c) => self.tensors[c].frobenius().powi(2),
            None => self.overlap(self).map(|z| z.re).unwrap_or(0.0),
        }
    }

    /// Left environments `E_k` (contraction of sites `< k`) for `<self|self>`.
    fn left_environments(&self) -> Vec<DMatrix<C64>> {
        let mut envs = vec![DMatrix::from_element(1, 1, ONE)];
        for t in &self.tensors {
            let next = transfer_left(envs.last().expect("nonempty"), t, t);
            envs.push(next);
        }
        envs
    }

    /// Right environments `F_k` (contraction of sites `>= k`) for `<self|self>`.
    fn right_environments(&self) -> Vec<DMatrix<C64>> {
        let n = self.num_sites();
        let mut envs = vec![DMatrix::from_element(1, 1, ONE); n + 1];
        for k in (0..n).rev() {
            envs[k] = transfer_right(&envs[k + 1], &self.tensors[k], &self.tensors[k]);
        }
        envs
    }

    /// Expectation value of a single-site operator, normalized by `<psi|psi>`.
    pub fn expectation_single(&self, op: &Matrix2<C64>, site: usize) -> Result<C64> {
        if site >= self.num_sites() {
            return Err(invalid("site", format!("{site} out of range")));
        }
        let lefts = self.left_environments();
        let rights = self.right_environments();
        let t = &self.tensors[site];
        let mut acted = t.clone();
        for l in 0..t.dl {
            for r in 0..t.dr {
                let a0 = t.get(l, 0, r);
                let a1 = t.get(l, 1, r);
                *acted.get_mut(l, 0, r) = op[(0, 0)] * a0 + op[(0, 1)] * a1;
                *acted.get_mut(l, 1, r) = op[(1, 0)] * a0 + op[(1, 1)] * a1;
            }
        }
        let num = transfer_left(&lefts[site], t, &acted);
        let val = (num.component_mul(&rights[site + 1])).sum();
        let nrm = lefts[self.num_sites()][(0, 0)];
        Ok(val / nrm)
    }

    /// `<psi|H|psi> / <psi|psi>` using the bond decomposition of `H`.
    pub fn energy(&self, terms: &HamiltonianTerms) -> Result<f64> {
        let n = self.num_sites();
        if terms.num_sites() != n {
            return Err(Error::SiteMismatch {
                left: n,
                right: terms.num_sites(),
            });
        }
        let lefts = self.left_environments();
        let rights = self.right_environments();
        let nrm = lefts[n][(0, 0)].re;
        let mut total = ZERO;
        for (i, op) in terms.bond_operators().iter().enumerate() {
            let theta = self.two_site_block(i);
            let dl = self.tensors[i].dl;
            let dr = self.tensors[i + 1].dr;
            let left = &lefts[i];
            let right = &rights[i + 2];
            // slices over (q1 q2) of the bra and the acted ket
            for q in 0..4 {
                let bra = DMatrix::from_fn(dl, dr, |l, r| theta[(l * 2 + q / 2, (q % 2) * dr + r)]);
                let ket = DMatrix::from_fn(dl, dr, |l, r| {
                    let mut acc = ZERO;
                    for p in 0..4 {
                        let c = op[(q, p)];
                        if c != ZERO {
                            acc += c * theta[(l * 2 + p / 2, (p % 2) * dr + r)];
                        }
                    }
                    acc
                });
                total += (bra.adjoint() * left * ket).component_mul(right).sum();
            }
        }
        Ok(total.re / nrm)
    }

    /// Von Neumann entropy of the bipartition between `bond` and `bond + 1`.
    pub fn entanglement_entropy(&self, bond: usize) -> Result<f64> {
        if bond + 1 >= self.num_sites() {
            return Err(invalid("bond", format!("{bond} out of range")));
        }
        let mut copy = self.clone();
        copy.move_center(bond)?;
        let m = copy.tensors[bond].left_matrix();
        let sv = m.singular_values();
        let total: f64 = sv.iter().map(|s| s * s).sum();
        Ok(sv
            .iter()
            .map(|s| s * s / total)
            .filter(|&p| p > 1e-300)
            .map(|p| -p * p.ln())
            .sum())
    }

    /// Dense amplitudes, for chains of at most 22 sites.
    pub fn to_dense(&self) -> Result<StateVector> {
        let n = self.num_sites();
        if n > DENSE_EXPORT_LIMIT {
            return Err(Error::TooLarge {
                num_sites: n,
                limit: DENSE_EXPORT_LIMIT,
            });
        }
        let mut acc = DMatrix::<C64>::from_element(1, 1, ONE);
        for t in &self.tensors {
            let prod = &acc * t.right_matrix();
            let rows = acc.nrows();
            acc = DMatrix::from_fn(rows * 2, t.dr, |row, r| prod[(row / 2, (row % 2) * t.dr + r)]);
        }
        StateVector::new(n, acc.column(0).iter().copied().collect())
    }

    /// `|exp(norm_log) - 1|`.
    pub fn norm_error(&self) -> f64 {
        (self.norm_log.exp() - 1.0).abs()
    }

    /// Flat JSON dump of tensor shapes and entries, for debugging.
    pub fn dump_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            shapes: Vec<[usize; 3]>,
            entries: Vec<Vec<[f64; 2]>>,
            cum_truncation: f64,
            norm_log: f64,
            #[serde(skip)]
            _m: std::marker::PhantomData<&'a ()>,
        }
        let d = Dump {
            shapes: self.tensors.iter().map(|t| [t.dl, 2, t.dr]).collect(),
            entries: self.tensors.iter().map(|t| t.data.iter().map(|z| [z.re, z.im]).collect()).collect(),
            cum_truncation: self.cum_truncation,
            norm_log: self.norm_log,
            _m: std::marker::PhantomData,
        };
        Ok(serde_json::to_string(&d)?)
    }
}

/// `E' = sum_p A_p^dag E B_p`.
fn transfer_left(env: &DMatrix<C64>, a: &Tensor3, b: &Tensor3) -> DMatrix<C64> {
    let mut out = DMatrix::<C64>::zeros(a.dr, b.dr);
    for p in 0..2 {
        out += a.slice(p).adjoint() * env * b.slice(p);
    }
    out
}

/// `F' = sum_p conj(A_p) F B_p^T`.
fn transfer_right(env: &DMatrix<C64>, a: &Tensor3, b: &Tensor3) -> DMatrix<C64> {
    let mut out = DMatrix::<C64>::zeros(a.dl, b.dl);
    for p in 0..2 {
        out += a.slice(p).conjugate() * env * b.slice(p).transpose();
    }
    out
}

impl Register for Mps {
    fn num_sites(&self) -> usize {
        self.tensors.len()
    }

    fn apply_single_site(&mut self, gate: &Matrix2<C64>, site: usize) -> Result<()> {
        self.apply_single_site_gate(gate, site)
    }

    fn apply_two_site(&mut self, gate: &Matrix4<C64>, site: usize) -> Result<f64> {
        let (chi, cut) = (self.chi_max, self.svd_cutoff);
        self.apply_two_site_gate(gate, site, chi, cut)
    }

    fn inner(&self, other: &Self) -> Result<C64> {
        self.overlap(other)
    }

    fn energy(&self, terms: &HamiltonianTerms) -> Result<f64> {
        Mps::energy(self, terms)
    }

    fn to_state_vector(&self) -> Result<StateVector> {
        self.to_dense()
    }

    fn norm_error(&self) -> f64 {
        Mps::norm_error(self)
    }

    fn discarded_weight(&self) -> f64 {
        self.cum_truncation
    }
}

/// MPS simulation with DMRG ground states.
#[derive(Debug, Clone, Copy)]
pub struct MpsBackend {
    pub chi_max: usize,
    pub svd_cutoff: f64,
    pub dmrg: crate::hamiltonian::DmrgOptions,
}

impl Default for MpsBackend {
    fn default() -> Self {
        Self {
            chi_max: DEFAULT_CHI_MAX,
            svd_cutoff: DEFAULT_SVD_CUTOFF,
            dmrg: crate::hamiltonian::DmrgOptions::default(),
        }
    }
}

impl crate::statevector::Backend for MpsBackend {
    type State = Mps;

    fn product_state(&self, local_states: &[[C64; 2]]) -> Result<Mps> {
        Mps::product_state_with(local_states, self.chi_max, self.svd_cutoff)
    }

    fn ground_state(&self, terms: &HamiltonianTerms) -> Result<(f64, Mps)> {
        let res = crate::hamiltonian::dmrg_ground_state(terms, &self.dmrg)?;
        let mut state = res.state;
        state.chi_max = self.chi_max;
        state.svd_cutoff = self.svd_cutoff;
        Ok((res.energy, state))
    }
}
