//! The two non-SVM block updates: a nonnegative quadratic program in the
//! stacked kernel weights, and the closed-form refresh of the neighborhood
//! matrices.
//!
//! The weight subproblem minimizes `(eta/2) th'A th - th'((eta/2) b + q)`
//! over `th >= 0` by projected gradient with a Barzilai-Borwein step,
//! diagonal preconditioning, and a backtracking line search.
//!
//! The neighborhood subproblem minimizes a quadratic whose matrix is
//! `(eta - 4 beta) I + (beta/2) P`, `P` the orthogonal projector onto the
//! column space of `V`, with target `a = (eta V th - beta V g)/2` where
//! `g` solves the ridge system against `d`. Since `a` already lies in that
//! column space, the solve collapses to a scalar division: the minimizer is
//! `2a / (2 eta - 7 beta)`, which per task reads
//!
//! ```text
//!     Khat_t = (eta K_t(th) - beta * sum_m g_t^m K_t^m) / (2 eta - 7 beta)
//! ```
//!
//! This requires `eta > 4 beta`; at the boundary the quadratic is singular
//! off the column space and the minimizer stops being unique, so the
//! boundary is refused.

use crate::error::{Error, Result};
use crate::kernels::KernelBank;
use crate::linalg::{dot, DenseMatrix};
use crate::structure::{shared_index, task_index, BVector, StructureCache};

/// Shared and task-specific nonnegative kernel weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    mu: Vec<f64>,
    lambdas: Vec<Vec<f64>>, // [task][base]
}

impl ThetaParams {
    pub fn new(mu: Vec<f64>, lambdas: Vec<Vec<f64>>) -> Result<Self> {
        if lambdas.iter().any(|l| l.len() != mu.len()) {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: lambdas.iter().map(|l| l.len()).find(|&n| n != mu.len()).unwrap_or(0),
            });
        }
        let all = mu.iter().chain(lambdas.iter().flatten());
        for &v in all {
            if !v.is_finite() {
                return Err(Error::NonFinite("theta"));
            }
            if v < 0.0 {
                return Err(Error::Invalid("theta entries must be nonnegative".into()));
            }
        }
        Ok(ThetaParams { mu, lambdas })
    }

    /// Uniform start: shared weights `1/M`, task weights zero.
    pub fn uniform(bases: usize, tasks: usize) -> Self {
        ThetaParams {
            mu: vec![1.0 / bases as f64; bases],
            lambdas: vec![vec![0.0; bases]; tasks],
        }
    }

    pub fn bases(&self) -> usize {
        self.mu.len()
    }

    pub fn tasks(&self) -> usize {
        self.lambdas.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn lambdas(&self) -> &[Vec<f64>] {
        &self.lambdas
    }

    /// Effective per-task weights `mu + lambda_t`.
    pub fn per_task(&self, t: usize) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.lambdas[t])
            .map(|(m, l)| m + l)
            .collect()
    }

    /// Stacked layout: shared block, then task weights grouped by base.
    pub fn stacked(&self) -> Vec<f64> {
        let bases = self.bases();
        let tasks = self.tasks();
        let mut out = vec![0.0; crate::structure::theta_dim(bases, tasks)];
        out[..bases].copy_from_slice(&self.mu);
        for m in 0..bases {
            for t in 0..tasks {
                out[task_index(bases, tasks, m, t)] = self.lambdas[t][m];
            }
        }
        out
    }

    pub fn from_stacked(v: &[f64], bases: usize, tasks: usize) -> Result<Self> {
        if v.len() != crate::structure::theta_dim(bases, tasks) {
            return Err(Error::DimensionMismatch {
                expected: crate::structure::theta_dim(bases, tasks),
                got: v.len(),
            });
        }
        let mu = v[..bases].to_vec();
        let mut lambdas = vec![vec![0.0; bases]; tasks];
        for m in 0..bases {
            for (t, l) in lambdas.iter_mut().enumerate() {
                l[m] = v[task_index(bases, tasks, m, t)];
            }
        }
        ThetaParams::new(mu, lambdas)
    }
}

/// Symmetric neighborhood matrices, one per task. Not required to be
/// positive semidefinite. When produced by the closed form they also carry
/// their expansion coefficients in the base kernels.
#[derive(Debug, Clone)]
pub struct NeighborhoodSet {
    matrices: Vec<DenseMatrix>,
    coefficients: Option<Vec<Vec<f64>>>, // [task][base]
}

impl NeighborhoodSet {
    pub(crate) fn assemble(
        matrices: Vec<DenseMatrix>,
        coefficients: Option<Vec<Vec<f64>>>,
    ) -> Self {
        NeighborhoodSet {
            matrices,
            coefficients,
        }
    }

    pub fn from_matrices(matrices: Vec<DenseMatrix>) -> Result<Self> {
        for (t, k) in matrices.iter().enumerate() {
            if !k.is_symmetric(1e-12) {
                return Err(Error::Invalid(format!(
                    "neighborhood matrix {t} is not symmetric"
                )));
            }
        }
        Ok(NeighborhoodSet {
            matrices,
            coefficients: None,
        })
    }

    pub fn matrices(&self) -> &[DenseMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, t: usize) -> &DenseMatrix {
        &self.matrices[t]
    }

    /// Expansion coefficients in the base kernels, when the set came from
    /// the closed form.
    pub fn coefficients(&self) -> Option<&[Vec<f64>]> {
        self.coefficients.as_deref()
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// Regularization and stopping knobs shared by the trainer.
#[derive(Debug, Clone, Copy)]
pub struct HyperParams {
    pub c: f64,
    pub eta: f64,
    pub beta: f64,
    pub theta_tolerance: f64,
    pub outer_cap: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            c: 1.0,
            eta: 8.0,
            beta: 1.0,
            theta_tolerance: 1e-8,
            outer_cap: 50,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidHyperParams(format!("C = {}", self.c)));
        }
        check_eta_beta(self.eta, self.beta)?;
        if !(self.theta_tolerance > 0.0) {
            return Err(Error::InvalidHyperParams("theta tolerance must be positive".into()));
        }
        if self.outer_cap == 0 {
            return Err(Error::InvalidHyperParams("outer cap must be positive".into()));
        }
        Ok(())
    }
}

fn check_eta_beta(eta: f64, beta: f64) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() || !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidHyperParams(format!(
            "eta = {eta}, beta = {beta}"
        )));
    }
    if eta <= 4.0 * beta {
        return Err(Error::InvalidHyperParams(format!(
            "need eta > 4*beta (got eta = {eta}, beta = {beta})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ThetaSolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ThetaSolverOptions {
    fn default() -> Self {
        ThetaSolverOptions {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

/// Minimizes `(eta/2) th'A th - th'((eta/2) b + q)` over `th >= 0`.
pub fn solve_theta(
    cache: &StructureCache,
    b: &BVector,
    q: &[f64],
    eta: f64,
    opts: ThetaSolverOptions,
) -> Result<ThetaParams> {
    let dim = cache.theta_dim();
    if b.len() != dim || q.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: if b.len() != dim { b.len() } else { q.len() },
        });
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidHyperParams(format!("eta = {eta}")));
    }
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("q"));
    }
    let linear: Vec<f64> = b
        .as_slice()
        .iter()
        .zip(q)
        .map(|(bi, qi)| 0.5 * eta * bi + qi)
        .collect();
    let stacked = minimize_nonneg_quadratic(cache.a(), eta, &linear, opts)?;
    ThetaParams::from_stacked(&stacked, cache.bases(), cache.tasks())
}

/// Projected-gradient core for `min (eta/2) x'A x - x'h` over `x >= 0`,
/// optionally warm-started.
pub(crate) fn minimize_nonneg_quadratic_from(
    a: &DenseMatrix,
    eta: f64,
    h: &[f64],
    opts: ThetaSolverOptions,
    start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let dim = a.rows();
    let objective = |x: &[f64], ax: &[f64]| 0.5 * eta * dot(x, ax) - dot(x, h);
    // Diagonal preconditioner; guards zero diagonals.
    let mut precond = vec![0.0; dim];
    let max_diag = (0..dim).map(|i| a.at(i, i)).fold(0.0, f64::max).max(1e-12);
    for (i, p) in precond.iter_mut().enumerate() {
        *p = 1.0 / (eta * a.at(i, i).max(1e-8 * max_diag));
    }

    let mut x = match start {
        Some(s0) => s0.iter().map(|v| v.max(0.0)).collect(),
        None => vec![0.0; dim],
    };
    let mut ax = a.matvec(&x)?;
    let mut f = objective(&x, &ax);
    let mut grad: Vec<f64> = (0..dim).map(|i| eta * ax[i] - h[i]).collect();
    let mut prev_x: Option<Vec<f64>> = None;
    let mut prev_grad: Option<Vec<f64>> = None;
    let mut step = 1.0;

    for _ in 0..opts.max_iterations {
        // Stationarity of the projected gradient map.
        let stat = x
            .iter()
            .zip(&grad)
            .map(|(&xi, &gi)| (xi - (xi - gi).max(0.0)).abs())
            .fold(0.0, f64::max);
        if stat <= opts.tolerance {
            break;
        }

        // Barzilai-Borwein step from the previous pair, safeguarded.
        if let (Some(px), Some(pg)) = (&prev_x, &prev_grad) {
            let mut sy = 0.0;
            let mut ss = 0.0;
            for i in 0..dim {
                let si = x[i] - px[i];
                let yi = grad[i] - pg[i];
                sy += si * yi;
                ss += si * si;
            }
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-10, 1e10);
            }
        }

        prev_x = Some(x.clone());
        prev_grad = Some(grad.clone());

        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = (0..dim)
                .map(|i| (x[i] - t * precond[i] * grad[i]).max(0.0))
                .collect();
            let cand_ax = a.matvec(&cand)?;
            let cand_f = objective(&cand, &cand_ax);
            // Projected Armijo: sufficient decrease against the step taken.
            let decrease: f64 = (0..dim)
                .map(|i| grad[i] * (x[i] - cand[i]))
                .sum();
            if cand_f <= f - 1e-4 * decrease.max(0.0) + 1e-15 * f.abs() {
                x = cand;
                ax = cand_ax;
                f = cand_f;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        for i in 0..dim {
            grad[i] = eta * ax[i] - h[i];
        }
    }
    Ok(x)
}

pub(crate) fn minimize_nonneg_quadratic(
    a: &DenseMatrix,
    eta: f64,
    h: &[f64],
    opts: ThetaSolverOptions,
) -> Result<Vec<f64>> {
    minimize_nonneg_quadratic_from(a, eta, h, opts, None)
}

/// Closed-form neighborhood refresh for fixed weights.
pub fn solve_neighborhood(
    cache: &StructureCache,
    theta: &ThetaParams,
    eta: f64,
    beta: f64,
) -> Result<NeighborhoodSet> {
    check_eta_beta(eta, beta)?;
    let bank = cache.bank();
    let m_count = bank.bases();
    let t_count = bank.tasks();
    if theta.bases() != m_count || theta.tasks() != t_count {
        return Err(Error::DimensionMismatch {
            expected: crate::structure::theta_dim(m_count, t_count),
            got: crate::structure::theta_dim(theta.bases(), theta.tasks()),
        });
    }
    let g = cache.solve(cache.d())?;
    let denom = 2.0 * eta - 7.0 * beta;
    let mut matrices = Vec::with_capacity(t_count);
    let mut coefficients = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let th_t = theta.per_task(t);
        let n = bank.task_size(t);
        let mut k = DenseMatrix::zeros(n, n);
        let mut coef = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let g_tm = g[shared_index(m)] + g[task_index(m_count, t_count, m, t)];
            let c_tm = (eta * th_t[m] - beta * g_tm) / denom;
            coef.push(c_tm);
            k.add_scaled(c_tm, bank.gram(t, m))?;
        }
        matrices.push(k);
        coefficients.push(coef);
    }
    Ok(NeighborhoodSet {
        matrices,
        coefficients: Some(coefficients),
    })
}

/// `K_t(th) = sum_m (mu^m + lambda_t^m) K_t^m`.
pub fn combined_kernel(bank: &KernelBank, theta: &ThetaParams, task: usize) -> Result<DenseMatrix> {
    if task >= bank.tasks() {
        return Err(Error::DimensionMismatch {
            expected: bank.tasks(),
            got: task,
        });
    }
    let th = theta.per_task(task);
    if th.len() != bank.bases() {
        return Err(Error::DimensionMismatch {
            expected: bank.bases(),
            got: th.len(),
        });
    }
    let n = bank.task_size(task);
    let mut k = DenseMatrix::zeros(n, n);
    for (m, &w) in th.iter().enumerate() {
        if w != 0.0 {
            k.add_scaled(w, bank.gram(task, m))?;
        }
    }
    Ok(k)
}
