//! Per-task dual solvers: soft-margin SVM classification and epsilon-SVR
//! regression on a fixed kernel matrix, via sequential minimal optimization
//! with maximal-violating-pair selection.
//!
//! Both duals are instances of one box-and-equality QP
//!
//! ```text
//!     maximize   p'z - 1/2 z' (S K S) z
//!     subject to 0 <= z <= C,  s'z = 0
//! ```
//!
//! with `s = y`, `p = 1` for classification and, for regression, `2n`
//! variables with `s = (+1..., -1...)` and `p_i = y_i - eps`,
//! `p_{n+i} = -y_i - eps`. The pairwise update preserves the equality
//! constraint exactly; box clipping preserves the bounds.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Converged dual solution for one task.
#[derive(Debug, Clone)]
pub struct SvmSolution {
    /// Dual variables: `alpha` for classification, `alpha` of the positive
    /// tube side for regression.
    pub alpha: Vec<f64>,
    /// Second dual block for regression (`alpha*`); absent for
    /// classification.
    pub alpha_star: Option<Vec<f64>>,
    /// Signed expansion coefficients: `y .* alpha` or `alpha - alpha*`.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub kkt_violation: f64,
    pub iterations: usize,
}

impl SvmSolution {
    /// Score for a query point given its kernel row against the training
    /// points.
    pub fn score(&self, k_row: &[f64]) -> Result<f64> {
        if k_row.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: k_row.len(),
            });
        }
        Ok(crate::linalg::dot(&self.coefficients, k_row) + self.bias)
    }
}

/// Classification label from a score; ties break to +1.
pub fn predict_label(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Score for a query point: expansion coefficients dotted with the kernel
/// row, plus the bias.
pub fn predict(model: &SvmSolution, k_row: &[f64]) -> Result<f64> {
    model.score(k_row)
}

pub(crate) struct SmoProblem<'a> {
    kernel: &'a DenseMatrix,
    signs: Vec<f64>,
    linear: Vec<f64>,
    upper: f64,
}

impl<'a> SmoProblem<'a> {
    fn n_vars(&self) -> usize {
        self.signs.len()
    }

    #[inline]
    fn base(&self, a: usize) -> usize {
        // Regression doubles the variables over the same kernel.
        let n = self.kernel.rows();
        if a < n {
            a
        } else {
            a - n
        }
    }

    #[inline]
    fn k(&self, a: usize, b: usize) -> f64 {
        self.kernel.at(self.base(a), self.base(b))
    }
}

pub(crate) struct SmoState<'a> {
    prob: SmoProblem<'a>,
    z: Vec<f64>,
    grad: Vec<f64>, // gradient of 1/2 z'Qz - p'z, i.e. Qz - p
    pub iterations: usize,
}

impl<'a> SmoState<'a> {
    pub(crate) fn new(prob: SmoProblem<'a>) -> Self {
        let grad = prob.linear.iter().map(|p| -p).collect();
        let n = prob.n_vars();
        SmoState {
            prob,
            z: vec![0.0; n],
            grad,
            iterations: 0,
        }
    }

    /// Bias implied by variable `a` if it were a free support vector.
    #[inline]
    fn implied_bias(&self, a: usize) -> f64 {
        -self.prob.signs[a] * self.grad[a]
    }

    fn select_pair(&self) -> Option<(usize, usize, f64)> {
        let c = self.prob.upper;
        let mut up: Option<(usize, f64)> = None;
        let mut low: Option<(usize, f64)> = None;
        for a in 0..self.prob.n_vars() {
            let s = self.prob.signs[a];
            let f = self.implied_bias(a);
            let movable_up = (s > 0.0 && self.z[a] < c) || (s < 0.0 && self.z[a] > 0.0);
            let movable_down = (s > 0.0 && self.z[a] > 0.0) || (s < 0.0 && self.z[a] < c);
            if movable_up && up.map_or(true, |(_, best)| f > best) {
                up = Some((a, f));
            }
            if movable_down && low.map_or(true, |(_, best)| f < best) {
                low = Some((a, f));
            }
        }
        match (up, low) {
            (Some((i, fi)), Some((j, fj))) => Some((i, j, fi - fj)),
            _ => None,
        }
    }

    /// One pairwise update. Returns the violation before the step, or None
    /// when no movable pair exists.
    pub(crate) fn step(&mut self, tol: f64) -> Option<f64> {
        let (i, j, violation) = self.select_pair()?;
        if violation <= tol {
            return Some(violation);
        }
        let c = self.prob.upper;
        let si = self.prob.signs[i];
        let sj = self.prob.signs[j];
        let kappa = (self.prob.k(i, i) + self.prob.k(j, j) - 2.0 * self.prob.k(i, j)).max(1e-12);
        let mut delta = violation / kappa;

        // Box limits along the direction (z_i += si*delta, z_j -= sj*delta).
        let lim_i = if si > 0.0 { c - self.z[i] } else { self.z[i] };
        let lim_j = if sj > 0.0 { self.z[j] } else { c - self.z[j] };
        delta = delta.min(lim_i).min(lim_j);
        if delta <= 0.0 {
            return Some(violation);
        }

        self.z[i] += si * delta;
        self.z[j] -= sj * delta;
        // Exact re-clip against rounding.
        self.z[i] = self.z[i].clamp(0.0, c);
        self.z[j] = self.z[j].clamp(0.0, c);

        let n = self.prob.n_vars();
        for a in 0..n {
            let sa = self.prob.signs[a];
            self.grad[a] += delta * sa * (self.prob.k(a, i) - self.prob.k(a, j));
        }
        self.iterations += 1;
        Some(violation)
    }

    pub(crate) fn violation(&self) -> f64 {
        self.select_pair().map_or(0.0, |(_, _, v)| v.max(0.0))
    }

    #[cfg(test)]
    pub(crate) fn equality_residual(&self) -> f64 {
        self.z
            .iter()
            .zip(&self.prob.signs)
            .map(|(z, s)| z * s)
            .sum::<f64>()
            .abs()
    }

    pub(crate) fn objective(&self) -> f64 {
        // p'z - 1/2 z'Qz with grad = Qz - p.
        0.5 * self
            .z
            .iter()
            .zip(self.grad.iter().zip(&self.prob.linear))
            .map(|(z, (g, p))| z * (p - g))
            .sum::<f64>()
    }

    fn bias(&self) -> f64 {
        let c = self.prob.upper;
        let free: Vec<f64> = (0..self.prob.n_vars())
            .filter(|&a| self.z[a] > 0.0 && self.z[a] < c)
            .map(|a| self.implied_bias(a))
            .collect();
        if !free.is_empty() {
            return free.iter().sum::<f64>() / free.len() as f64;
        }
        // Fall back to the midpoint of the feasibility interval.
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for a in 0..self.prob.n_vars() {
            let s = self.prob.signs[a];
            let f = self.implied_bias(a);
            if (s > 0.0 && self.z[a] < c) || (s < 0.0 && self.z[a] > 0.0) {
                hi = hi.max(f);
            }
            if (s > 0.0 && self.z[a] > 0.0) || (s < 0.0 && self.z[a] < c) {
                lo = lo.min(f);
            }
        }
        if hi.is_finite() && lo.is_finite() {
            0.5 * (hi + lo)
        } else {
            0.0
        }
    }

    fn run(&mut self, tol: f64, max_iter: usize) -> f64 {
        let mut violation = f64::INFINITY;
        while self.iterations < max_iter {
            match self.step(tol) {
                Some(v) => {
                    violation = v;
                    if v <= tol {
                        break;
                    }
                }
                None => {
                    violation = 0.0;
                    break;
                }
            }
        }
        violation.min(self.violation())
    }
}

fn check_kernel(k: &DenseMatrix, n: usize) -> Result<()> {
    if k.rows() != n || k.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: k.rows(),
        });
    }
    k.validate_finite("kernel matrix")
}

const MAX_SMO_ITER: usize = 1_000_000;

/// Soft-margin classification dual. Labels must be -1/+1 with both classes
/// present.
pub fn solve_svc(k: &DenseMatrix, y: &[f64], c: f64, tol: f64) -> Result<SvmSolution> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("labels"));
    }
    check_kernel(k, n)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidHyperParams(format!("C = {c}")));
    }
    if !y.iter().all(|&v| v == 1.0 || v == -1.0) {
        return Err(Error::Invalid("labels must be -1/+1".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::SingleClass(0));
    }
    let prob = SmoProblem {
        kernel: k,
        signs: y.to_vec(),
        linear: vec![1.0; n],
        upper: c,
    };
    let mut state = SmoState::new(prob);
    let violation = state.run(tol, MAX_SMO_ITER);
    let bias = state.bias();
    let alpha = state.z.clone();
    let coefficients: Vec<f64> = alpha.iter().zip(y).map(|(a, yi)| a * yi).collect();
    Ok(SvmSolution {
        objective: state.objective(),
        kkt_violation: violation,
        iterations: state.iterations,
        alpha,
        alpha_star: None,
        coefficients,
        bias,
    })
}

/// Epsilon-insensitive regression dual.
pub fn solve_svr(
    k: &DenseMatrix,
    y: &[f64],
    c: f64,
    epsilon: f64,
    tol: f64,
) -> Result<SvmSolution> {
    let n = y.len();
    if n == 0 {
        return Err(Error::Empty("targets"));
    }
    check_kernel(k, n)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidHyperParams(format!("C = {c}")));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidHyperParams(format!("epsilon = {epsilon}")));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    let mut signs = vec![1.0; n];
    signs.extend(std::iter::repeat(-1.0).take(n));
    let mut linear: Vec<f64> = y.iter().map(|yi| yi - epsilon).collect();
    linear.extend(y.iter().map(|yi| -yi - epsilon));
    let prob = SmoProblem {
        kernel: k,
        signs,
        linear,
        upper: c,
    };
    let mut state = SmoState::new(prob);
    let violation = state.run(tol, MAX_SMO_ITER);
    let bias = state.bias();
    let alpha = state.z[..n].to_vec();
    let alpha_star = state.z[n..].to_vec();
    let coefficients: Vec<f64> = alpha
        .iter()
        .zip(&alpha_star)
        .map(|(a, b)| a - b)
        .collect();
    Ok(SvmSolution {
        objective: state.objective(),
        kkt_violation: violation,
        iterations: state.iterations,
        alpha,
        alpha_star: Some(alpha_star),
        coefficients,
        bias,
    })
}
