//! Bounded minimizers used by the black-box schedule search.
//!
//! All three methods work in a reduced coordinate space supplied by a
//! [`Domain`]: for chunk lengths on the simplex only the first `L - 1`
//! lengths are free and the last one is the remainder.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Smallest chunk length an optimizer may propose.
pub const MIN_LEN: f64 = 1e-4;

/// Euclidean projection onto `{x >= min_len, sum x = 1}`.
pub fn project_simplex(x: &[f64], min_len: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(invalid("x", "empty vector"));
    }
    if !(min_len >= 0.0) || min_len * n as f64 > 1.0 {
        return Err(invalid("min_len", format!("{min_len} is infeasible for {n} coordinates")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("x", "non-finite coordinate"));
    }
    let target = 1.0 - min_len * n as f64;
    let y: Vec<f64> = x.iter().map(|v| v - min_len).collect();
    let mut u = y.clone();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - target) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = y.iter().map(|v| (v - theta).max(0.0) + min_len).collect();
    // push rounding residue into the largest coordinate
    let excess = out.iter().sum::<f64>() - 1.0;
    let imax = (0..n).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap_or(0);
    out[imax] -= excess;
    Ok(out)
}

/// Feasible set of an optimization together with its free coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Independent bounds `(lo, hi)` per coordinate.
    Box(Vec<(f64, f64)>),
    /// `dim` lengths `>= min_len` summing to one.
    Simplex { dim: usize, min_len: f64 },
}

impl Domain {
    pub fn simplex(dim: usize) -> Self {
        Domain::Simplex { dim, min_len: MIN_LEN }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Box(b) => {
                if b.is_empty() {
                    return Err(invalid("bounds", "no coordinates"));
                }
                if b.iter().any(|(lo, hi)| !(lo <= hi)) {
                    return Err(invalid("bounds", "lower bound above upper bound"));
                }
            }
            Domain::Simplex { dim, min_len } => {
                if *dim == 0 {
                    return Err(invalid("dim", "no coordinates"));
                }
                if !(*min_len >= 0.0) || *min_len * *dim as f64 > 1.0 {
                    return Err(invalid("min_len", format!("{min_len} is infeasible for {dim} lengths")));
                }
            }
        }
        Ok(())
    }

    pub fn point_dim(&self) -> usize {
        match self {
            Domain::Box(b) => b.len(),
            Domain::Simplex { dim, .. } => *dim,
        }
    }

    pub fn free_dim(&self) -> usize {
        match self {
            Domain::Box(b) => b.len(),
            Domain::Simplex { dim, .. } => dim - 1,
        }
    }

    /// Nearest feasible full point.
    pub fn project_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.point_dim() {
            return Err(invalid("x", format!("expected {} coordinates, got {}", self.point_dim(), x.len())));
        }
        match self {
            Domain::Box(b) => Ok(x.iter().zip(b).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()),
            Domain::Simplex { min_len, .. } => project_simplex(x, *min_len),
        }
    }

    /// Full feasible point for free coordinates `z`.
    pub fn lift(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Domain::Box(_) => self.project_point(z),
            Domain::Simplex { .. } => {
                let mut x = z.to_vec();
                x.push(1.0 - z.iter().sum::<f64>());
                self.project_point(&x)
            }
        }
    }

    pub fn free(&self, x: &[f64]) -> Vec<f64> {
        x[..self.free_dim()].to_vec()
    }

    /// Free coordinates of the projection of `z`.
    pub fn project_free(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.free(&self.lift(z)?))
    }

    /// Whether moving free coordinate `j` by `h` stays feasible.
    fn can_move(&self, z: &[f64], j: usize, h: f64) -> bool {
        match self {
            Domain::Box(b) => {
                let v = z[j] + h;
                v >= b[j].0 && v <= b[j].1
            }
            Domain::Simplex { min_len, .. } => {
                let last = 1.0 - z.iter().sum::<f64>();
                z[j] + h >= *min_len && last - h >= *min_len
            }
        }
    }
}

/// A function to minimize, evaluated in batches of full points.
///
/// Points within a batch are independent, so implementations may evaluate
/// them concurrently.
pub trait Objective {
    fn eval_batch(&mut self, points: &[Vec<f64>]) -> Result<Vec<f64>>;

    fn evaluations(&self) -> usize;

    fn begin_iteration(&mut self, _iteration: usize) {}
}

/// Adapter for plain closures.
pub struct FnObjective<F> {
    f: F,
    evals: usize,
    pub history: Vec<Vec<f64>>,
}

impl<F: FnMut(&[f64]) -> f64> FnObjective<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            evals: 0,
            history: Vec::new(),
        }
    }
}

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn eval_batch(&mut self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.evals += points.len();
        self.history.extend(points.iter().cloned());
        Ok(points.iter().map(|p| (self.f)(p)).collect())
    }

    fn evaluations(&self) -> usize {
        self.evals
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    Converged,
    BudgetExhausted,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    /// Best full point seen.
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub status: OptimStatus,
}

/// Tracks the incumbent and the evaluation budget.
struct Runner<'a, O: Objective> {
    obj: &'a mut O,
    domain: &'a Domain,
    max_evals: usize,
    start: usize,
    best_x: Vec<f64>,
    best_f: f64,
}

impl<'a, O: Objective> Runner<'a, O> {
    fn new(obj: &'a mut O, domain: &'a Domain, max_evals: usize) -> Result<Self> {
        domain.validate()?;
        if max_evals == 0 {
            return Err(invalid("max_evals", "must be positive"));
        }
        let start = obj.evaluations();
        Ok(Self {
            obj,
            domain,
            max_evals,
            start,
            best_x: Vec::new(),
            best_f: f64::INFINITY,
        })
    }

    fn remaining(&self) -> usize {
        self.max_evals.saturating_sub(self.obj.evaluations() - self.start)
    }

    /// `None` when the batch does not fit in the budget.
    fn eval_free(&mut self, zs: &[Vec<f64>]) -> Result<Option<Vec<f64>>> {
        if zs.len() > self.remaining() {
            return Ok(None);
        }
        let xs: Vec<Vec<f64>> = zs.iter().map(|z| self.domain.lift(z)).collect::<Result<_>>()?;
        let fs = self.obj.eval_batch(&xs)?;
        for (x, &f) in xs.iter().zip(&fs) {
            if f < self.best_f {
                self.best_f = f;
                self.best_x = x.clone();
            }
        }
        Ok(Some(fs))
    }

    fn eval_one(&mut self, z: &[f64]) -> Result<Option<f64>> {
        Ok(self.eval_free(&[z.to_vec()])?.map(|v| v[0]))
    }

    fn finish(self, iterations: usize, status: OptimStatus) -> OptimResult {
        OptimResult {
            x: self.best_x,
            value: self.best_f,
            iterations,
            status,
        }
    }
}

fn initial_free(domain: &Domain, x0: &[f64]) -> Result<Vec<f64>> {
    let x = domain.project_point(x0)?;
    Ok(domain.free(&x))
}

/// Evaluates the single feasible point of a zero-dimensional problem.
fn trivial<O: Objective>(obj: &mut O, domain: &Domain, x0: &[f64], max_evals: usize) -> Result<OptimResult> {
    let mut run = Runner::new(obj, domain, max_evals)?;
    let z = initial_free(domain, x0)?;
    run.eval_one(&z)?;
    Ok(run.finish(0, OptimStatus::Converged))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    /// Edge length of the initial simplex in free coordinates.
    pub simplex_scale: f64,
    pub max_evals: usize,
    pub xtol: f64,
    pub ftol: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            simplex_scale: 0.1,
            max_evals: 300,
            xtol: 1e-6,
            ftol: 1e-9,
        }
    }
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(xi, yi)| a * xi + yi).collect()
}

fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Downhill simplex with every candidate projected onto the domain.
pub fn nelder_mead<O: Objective>(obj: &mut O, x0: &[f64], domain: &Domain, cfg: &NelderMeadConfig) -> Result<OptimResult> {
    if !(cfg.simplex_scale > 0.0) {
        return Err(invalid("simplex_scale", "must be positive"));
    }
    let n = domain.free_dim();
    if n == 0 {
        return trivial(obj, domain, x0, cfg.max_evals);
    }
    let mut run = Runner::new(obj, domain, cfg.max_evals)?;
    let z0 = initial_free(domain, x0)?;
    let mut verts = vec![z0.clone()];
    for j in 0..n {
        let mut z = z0.clone();
        let h = if domain.can_move(&z0, j, cfg.simplex_scale) {
            cfg.simplex_scale
        } else {
            -cfg.simplex_scale
        };
        z[j] += h;
        verts.push(domain.project_free(&z)?);
    }
    let Some(mut fs) = run.eval_free(&verts)? else {
        return Ok(run.finish(0, OptimStatus::BudgetExhausted));
    };

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut it = 0;
    loop {
        it += 1;
        run.obj.begin_iteration(it);
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
        verts = order.iter().map(|&i| verts[i].clone()).collect();
        fs = order.iter().map(|&i| fs[i]).collect();

        let fspread = fs[n] - fs[0];
        let xspread = verts[1..].iter().map(|v| max_abs(&sub(v, &verts[0]))).fold(0.0, f64::max);
        if fspread <= cfg.ftol && xspread <= cfg.xtol {
            return Ok(run.finish(it, OptimStatus::Converged));
        }

        let mut c = vec![0.0; n];
        for v in &verts[..n] {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi / n as f64;
            }
        }
        let worst = verts[n].clone();
        let dir = sub(&c, &worst);
        let zr = domain.project_free(&axpy(alpha, &dir, &c))?;
        let Some(fr) = run.eval_one(&zr)? else {
            return Ok(run.finish(it, OptimStatus::BudgetExhausted));
        };
        if fr < fs[0] {
            let ze = domain.project_free(&axpy(gamma, &sub(&zr, &c), &c))?;
            let Some(fe) = run.eval_one(&ze)? else {
                return Ok(run.finish(it, OptimStatus::BudgetExhausted));
            };
            if fe < fr {
                verts[n] = ze;
                fs[n] = fe;
            } else {
                verts[n] = zr;
                fs[n] = fr;
            }
            continue;
        }
        if fr < fs[n - 1] {
            verts[n] = zr;
            fs[n] = fr;
            continue;
        }
        let (zc, accept_below) = if fr < fs[n] {
            (domain.project_free(&axpy(rho, &sub(&zr, &c), &c))?, fr)
        } else {
            (domain.project_free(&axpy(rho, &sub(&worst, &c), &c))?, fs[n])
        };
        let Some(fc) = run.eval_one(&zc)? else {
            return Ok(run.finish(it, OptimStatus::BudgetExhausted));
        };
        if fc < accept_below || (fr < fs[n] && fc <= fr) {
            verts[n] = zc;
            fs[n] = fc;
            continue;
        }
        let shrunk: Vec<Vec<f64>> = verts[1..]
            .iter()
            .map(|v| domain.project_free(&axpy(sigma, &sub(v, &verts[0]), &verts[0])))
            .collect::<Result<_>>()?;
        let Some(fsh) = run.eval_free(&shrunk)? else {
            return Ok(run.finish(it, OptimStatus::BudgetExhausted));
        };
        for (k, (v, f)) in shrunk.into_iter().zip(fsh).enumerate() {
            verts[k + 1] = v;
            fs[k + 1] = f;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiNewtonConfig {
    /// Finite-difference step relative to the coordinate value.
    pub min_rel_step: f64,
    /// Absolute floor of the finite-difference step.
    pub min_step: f64,
    pub memory: usize,
    pub max_iters: usize,
    pub max_evals: usize,
    /// Largest coordinate change of a steepest-descent step.
    pub initial_step: f64,
    pub ftol: f64,
    pub xtol: f64,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        Self {
            min_rel_step: 0.01,
            min_step: 1e-4,
            memory: 5,
            max_iters: 100,
            max_evals: 300,
            initial_step: 0.1,
            ftol: 1e-12,
            xtol: 1e-9,
        }
    }
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 20;

/// Finite-difference gradient: central where both sides are feasible,
/// one-sided at a bound.
fn fd_gradient<O: Objective>(run: &mut Runner<O>, z: &[f64], f: f64, cfg: &QuasiNewtonConfig) -> Result<Option<Vec<f64>>> {
    let n = z.len();
    let mut probes = Vec::new();
    let mut plan = Vec::with_capacity(n);
    for j in 0..n {
        let h = (cfg.min_rel_step * z[j].abs()).max(cfg.min_step);
        let fwd = run.domain.can_move(z, j, h);
        let bwd = run.domain.can_move(z, j, -h);
        let mut idx = (None, None);
        if fwd {
            let mut p = z.to_vec();
            p[j] += h;
            idx.0 = Some(probes.len());
            probes.push(p);
        }
        if bwd {
            let mut p = z.to_vec();
            p[j] -= h;
            idx.1 = Some(probes.len());
            probes.push(p);
        }
        plan.push((h, idx));
    }
    let Some(fp) = run.eval_free(&probes)? else {
        return Ok(None);
    };
    let g = plan
        .iter()
        .map(|&(h, idx)| match idx {
            (Some(a), Some(b)) => (fp[a] - fp[b]) / (2.0 * h),
            (Some(a), None) => (fp[a] - f) / h,
            (None, Some(b)) => (f - fp[b]) / h,
            (None, None) => 0.0,
        })
        .collect();
    Ok(Some(g))
}

fn two_loop(g: &[f64], mem: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y) in mem.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        q = axpy(-a, y, &q);
        alphas.push((a, rho));
    }
    if let Some((s, y)) = mem.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q = axpy(a - b, s, &q);
    }
    q.iter().map(|v| -v).collect()
}

/// Limited-memory quasi-Newton with projected backtracking steps.
pub fn bounded_quasi_newton<O: Objective>(obj: &mut O, x0: &[f64], domain: &Domain, cfg: &QuasiNewtonConfig) -> Result<OptimResult> {
    if !(cfg.min_rel_step > 0.0) || !(cfg.min_step > 0.0) || !(cfg.initial_step > 0.0) {
        return Err(invalid("quasi_newton", "step parameters must be positive"));
    }
    let n = domain.free_dim();
    if n == 0 {
        return trivial(obj, domain, x0, cfg.max_evals);
    }
    let mut run = Runner::new(obj, domain, cfg.max_evals)?;
    let mut z = initial_free(domain, x0)?;
    let Some(mut f) = run.eval_one(&z)? else {
        return Ok(run.finish(0, OptimStatus::BudgetExhausted));
    };
    let Some(mut g) = fd_gradient(&mut run, &z, f, cfg)? else {
        return Ok(run.finish(0, OptimStatus::BudgetExhausted));
    };
    let mut mem: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for it in 1..=cfg.max_iters {
        run.obj.begin_iteration(it);
        let mut d = two_loop(&g, &mem);
        if dot(&g, &d) >= 0.0 {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
        }
        if mem.is_empty() {
            let m = max_abs(&d);
            if m == 0.0 {
                return Ok(run.finish(it, OptimStatus::Converged));
            }
            d.iter_mut().for_each(|v| *v *= cfg.initial_step / m);
        }
        let mut t = 1.0;
        let mut accepted = None;
        let mut tried = false;
        for _ in 0..=MAX_HALVINGS {
            let zt = domain.project_free(&axpy(t, &d, &z))?;
            let step = sub(&zt, &z);
            let decrease = dot(&g, &step);
            if max_abs(&step) <= cfg.xtol {
                break;
            }
            if decrease < 0.0 {
                tried = true;
                let Some(ft) = run.eval_one(&zt)? else {
                    return Ok(run.finish(it, OptimStatus::BudgetExhausted));
                };
                if ft <= f + ARMIJO_C * decrease {
                    accepted = Some((zt, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((zn, fnew)) = accepted else {
            if !mem.is_empty() {
                // retry from steepest descent
                mem.clear();
                continue;
            }
            // no feasible descent left along the projected gradient
            let status = if tried { OptimStatus::LineSearchFailed } else { OptimStatus::Converged };
            return Ok(run.finish(it, status));
        };
        let s = sub(&zn, &z);
        let Some(gn) = fd_gradient(&mut run, &zn, fnew, cfg)? else {
            return Ok(run.finish(it, OptimStatus::BudgetExhausted));
        };
        let y = sub(&gn, &g);
        if dot(&s, &y) > 1e-12 {
            mem.push((s.clone(), y));
            if mem.len() > cfg.memory {
                mem.remove(0);
            }
        }
        let df = f - fnew;
        z = zn;
        f = fnew;
        g = gn;
        if df <= cfg.ftol * (1.0 + f.abs()) || max_abs(&s) <= cfg.xtol {
            return Ok(run.finish(it, OptimStatus::Converged));
        }
    }
    Ok(run.finish(cfg.max_iters, OptimStatus::MaxIterations))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobylaConfig {
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evals: usize,
}

impl Default for CobylaConfig {
    fn default() -> Self {
        Self {
            rho_begin: 0.1,
            rho_end: 1e-4,
            max_evals: 300,
        }
    }
}

/// Derivative-free trust-region search on linear interpolation models.
///
/// Each iteration fits a linear model through `n + 1` points spaced `rho`
/// apart, steps a distance `rho` along its steepest descent and halves
/// `rho` when the step fails to improve.
pub fn cobyla_like<O: Objective>(obj: &mut O, x0: &[f64], domain: &Domain, cfg: &CobylaConfig) -> Result<OptimResult> {
    if !(cfg.rho_begin > 0.0) || !(cfg.rho_end > 0.0) || cfg.rho_end > cfg.rho_begin {
        return Err(invalid("rho", "need 0 < rho_end <= rho_begin"));
    }
    let n = domain.free_dim();
    if n == 0 {
        return trivial(obj, domain, x0, cfg.max_evals);
    }
    let mut run = Runner::new(obj, domain, cfg.max_evals)?;
    let mut z = initial_free(domain, x0)?;
    let Some(mut f) = run.eval_one(&z)? else {
        return Ok(run.finish(0, OptimStatus::BudgetExhausted));
    };
    let mut rho = cfg.rho_begin;
    let mut it = 0;
    while rho >= cfg.rho_end {
        it += 1;
        run.obj.begin_iteration(it);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let h = if domain.can_move(&z, j, rho) { rho } else { -rho };
                let mut p = z.clone();
                p[j] += h;
                domain.project_free(&p)
            })
            .collect::<Result<_>>()?;
        let Some(fp) = run.eval_free(&pts)? else {
            return Ok(run.finish(it, OptimStatus::BudgetExhausted));
        };
        let dm = DMatrix::from_fn(n, n, |r, c| pts[r][c] - z[c]);
        let df = DVector::from_iterator(n, fp.iter().map(|v| v - f));
        let Some(grad) = dm.lu().solve(&df) else {
            rho *= 0.5;
            continue;
        };
        let gnorm = grad.norm();
        if !(gnorm > 0.0) {
            rho *= 0.5;
            continue;
        }
        let trial: Vec<f64> = z.iter().zip(grad.iter()).map(|(zi, gi)| zi - rho * gi / gnorm).collect();
        let zt = domain.project_free(&trial)?;
        let Some(ft) = run.eval_one(&zt)? else {
            return Ok(run.finish(it, OptimStatus::BudgetExhausted));
        };
        // best interpolation point also counts as progress
        let (jbest, fbest) = fp
            .iter()
            .enumerate()
            .fold((usize::MAX, ft), |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc });
        if fbest < f {
            z = if jbest == usize::MAX { zt } else { pts[jbest].clone() };
            f = fbest;
        } else {
            rho *= 0.5;
        }
    }
    Ok(run.finish(it, OptimStatus::Converged))
}
