//! Small dense helpers shared by the simulators: local-gate exponentials,
//! Lanczos eigensolvers and Krylov propagation for matrix-free operators.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli_x() -> Matrix2<C64> {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

pub fn pauli_y() -> Matrix2<C64> {
    Matrix2::new(ZERO, -I, I, ZERO)
}

pub fn pauli_z() -> Matrix2<C64> {
    Matrix2::new(ONE, ZERO, ZERO, -ONE)
}

/// Kronecker product of two single-site operators, first factor on the left site.
pub fn kron2(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// Max-norm distance of `m` from its adjoint.
pub fn hermitian_deviation<const D: usize>(m: &nalgebra::SMatrix<C64, D, D>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max-norm distance of `u† u` from the identity.
pub fn unitarity_deviation<const D: usize>(u: &nalgebra::SMatrix<C64, D, D>) -> f64 {
    let prod = u.adjoint() * u;
    let mut dev = 0.0f64;
    for r in 0..D {
        for c in 0..D {
            let target = if r == c { ONE } else { ZERO };
            dev = dev.max((prod[(r, c)] - target).norm());
        }
    }
    dev
}

/// `exp(-i t h)` for a Hermitian 4×4 matrix.
pub fn expm_hermitian4(h: &Matrix4<C64>, t: f64) -> Matrix4<C64> {
    let eig = h.symmetric_eigen();
    let phases = Matrix4::from_diagonal(&eig.eigenvalues.map(|e| (-I * e * t).exp()));
    eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

/// `exp(-i t h)` for a Hermitian 2×2 matrix.
pub fn expm_hermitian2(h: &Matrix2<C64>, t: f64) -> Matrix2<C64> {
    let eig = h.symmetric_eigen();
    let phases = Matrix2::from_diagonal(&eig.eigenvalues.map(|e| (-I * e * t).exp()));
    eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

pub fn vdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn scale(a: &mut [C64], s: f64) {
    for z in a.iter_mut() {
        *z *= s;
    }
}

fn orthogonalize(w: &mut [C64], basis: &[Vec<C64>]) {
    // Two passes of classical Gram-Schmidt keep the basis orthogonal to
    // working precision.
    for _ in 0..2 {
        for v in basis {
            let proj = vdot(v, w);
            axpy(-proj, v, w);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub max_krylov: usize,
    pub tol: f64,
    pub max_restarts: usize,
    /// Return the best Ritz pair instead of an error when `tol` is not met.
    pub accept_unconverged: bool,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            max_krylov: 160,
            tol: 1e-11,
            max_restarts: 60,
            accept_unconverged: false,
        }
    }
}

fn tridiagonal_eigen(alphas: &[f64], betas: &[f64]) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    let m = alphas.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    t.symmetric_eigen()
}

fn argmin(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] < v[best] {
            best = i;
        }
    }
    best
}

/// Lowest eigenpair of a Hermitian operator restricted to the complement of
/// `locked` (and to the range of `project`).
///
/// Returns `None` when the start vector has no weight in the admissible
/// subspace, i.e. the subspace is exhausted.
pub fn lanczos_lowest<A, P>(
    apply: A,
    project: P,
    start: &[C64],
    locked: &[Vec<C64>],
    opts: LanczosOptions,
) -> Result<Option<(f64, Vec<C64>)>>
where
    A: Fn(&[C64], &mut [C64]),
    P: Fn(&mut [C64]),
{
    let dim = start.len();
    let mut x = start.to_vec();
    project(&mut x);
    orthogonalize(&mut x, locked);
    let n0 = norm(&x);
    if n0 < 1e-10 {
        return Ok(None);
    }
    scale(&mut x, 1.0 / n0);

    let mut w = vec![ZERO; dim];
    let mut last_residual = f64::INFINITY;
    for _restart in 0..=opts.max_restarts {
        let mut basis: Vec<Vec<C64>> = vec![x.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let (y, converged) = loop {
            let j = basis.len() - 1;
            apply(&basis[j], &mut w);
            project(&mut w);
            let alpha = vdot(&basis[j], &w).re;
            alphas.push(alpha);
            orthogonalize(&mut w, &basis);
            orthogonalize(&mut w, locked);
            let beta = norm(&w);

            let check = alphas.len() % 4 == 0 || beta < 1e-12 || alphas.len() >= opts.max_krylov;
            if check {
                let eig = tridiagonal_eigen(&alphas, &betas);
                let k = argmin(&eig.eigenvalues);
                let theta = eig.eigenvalues[k];
                let y = eig.eigenvectors.column(k).into_owned();
                let residual = beta * y[y.len() - 1].abs();
                last_residual = residual;
                if residual < opts.tol * theta.abs().max(1.0) || beta < 1e-12 {
                    break (y, true);
                }
                if alphas.len() >= opts.max_krylov || alphas.len() >= dim {
                    break (y, false);
                }
            }
            betas.push(beta);
            let mut next = w.clone();
            scale(&mut next, 1.0 / beta);
            basis.push(next);
        };

        let mut xn = vec![ZERO; dim];
        for (coef, v) in y.iter().zip(&basis) {
            axpy(C64::new(*coef, 0.0), v, &mut xn);
        }
        project(&mut xn);
        orthogonalize(&mut xn, locked);
        let nn = norm(&xn);
        scale(&mut xn, 1.0 / nn);
        x = xn;
        if converged {
            apply(&x, &mut w);
            let energy = vdot(&x, &w).re;
            return Ok(Some((energy, x)));
        }
    }
    if opts.accept_unconverged {
        apply(&x, &mut w);
        let energy = vdot(&x, &w).re;
        return Ok(Some((energy, x)));
    }
    Err(Error::NotConverged {
        what: "Lanczos eigensolver",
        iterations: opts.max_restarts * opts.max_krylov,
        last_delta: last_residual,
    })
}

/// `exp(-i t H) v` for a Hermitian operator given as a matrix-vector product.
///
/// `norm_bound` is any upper bound on the spectral radius of `H`; it sets the
/// initial substep. Substeps are halved until the Krylov error estimate drops
/// below `tol`.
pub fn expm_krylov<A>(apply: A, v: &[C64], t: f64, norm_bound: f64, tol: f64) -> Vec<C64>
where
    A: Fn(&[C64], &mut [C64]),
{
    const MAX_KRYLOV: usize = 40;
    let dim = v.len();
    let mut state = v.to_vec();
    if t == 0.0 {
        return state;
    }
    let sign = t.signum();
    let mut remaining = t.abs();
    let dt_max = remaining.min(12.0 / norm_bound.max(1e-12));
    let mut dt = dt_max;
    let mut w = vec![ZERO; dim];

    while remaining > 1e-15 {
        dt = dt.min(remaining);
        let vnorm = norm(&state);
        if vnorm == 0.0 {
            return state;
        }
        let mut basis: Vec<Vec<C64>> = vec![state.iter().map(|z| z / vnorm).collect()];
        let mut alphas = Vec::new();
        let mut betas = Vec::new();
        let mut breakdown = false;
        for j in 0..MAX_KRYLOV.min(dim) {
            apply(&basis[j], &mut w);
            let alpha = vdot(&basis[j], &w).re;
            alphas.push(alpha);
            orthogonalize(&mut w, &basis);
            let beta = norm(&w);
            betas.push(beta);
            if beta < 1e-13 {
                breakdown = true;
                break;
            }
            if j + 1 < MAX_KRYLOV.min(dim) {
                basis.push(w.iter().map(|z| z / beta).collect());
            }
        }
        let m = alphas.len();
        let eig = tridiagonal_eigen(&alphas, &betas[..m - 1]);
        let q = &eig.eigenvectors;
        loop {
            let h = sign * dt;
            // coefficients c = Q exp(-i h Λ) Q^T e1
            let mut coef = vec![ZERO; m];
            for k in 0..m {
                let ph = (-I * eig.eigenvalues[k] * h).exp() * q[(0, k)];
                for (r, cr) in coef.iter_mut().enumerate() {
                    *cr += q[(r, k)] * ph;
                }
            }
            let err = if breakdown || m == dim {
                0.0
            } else {
                betas[m - 1] * coef[m - 1].norm()
            };
            // below a few ulps the estimate is roundoff, not truncation
            let allowed = (tol * dt / t.abs()).max(8.0 * f64::EPSILON * vnorm);
            if err <= allowed || dt < 1e-12 {
                let mut next = vec![ZERO; dim];
                for (cr, b) in coef.iter().zip(&basis) {
                    axpy(cr * vnorm, b, &mut next);
                }
                state = next;
                remaining -= dt;
                if err < 0.1 * allowed {
                    dt = (2.0 * dt).min(dt_max);
                }
                break;
            }
            dt *= 0.5;
        }
    }
    state
}

/// Full eigendecomposition of a dense Hermitian matrix with eigenvalues in
/// ascending order.
pub fn hermitian_eigh(m: DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m_rows(&eig.eigenvectors), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Real-symmetric variant; about four times cheaper than the complex path.
pub fn symmetric_eigh(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

fn m_rows(m: &DMatrix<C64>) -> usize {
    m.nrows()
}
