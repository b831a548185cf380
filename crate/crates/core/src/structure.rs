//! Gram-trace structure objects: the quadratic-form matrix `A`, the stacked
//! trace vectors `b`, `d`, `q`, and the tall design matrix `V` used by test
//! oracles.
//!
//! Everything lives in the stacked weight coordinate system of length
//! `M + M*T`: first the M shared weights, then the task weights grouped by
//! base kernel and ordered by task, i.e. index `M + m*T + t` holds the
//! weight of base kernel `m` for task `t`. Stacked vectors put the sum over
//! tasks into the shared block, and the shared-block entries are computed
//! by summing the exact same per-task floats in task order, so the
//! structural identities (shared column = sum of task columns) hold in
//! floating point, not just on paper.
//!
//! `V` stacks one row block per task; block `t` has `n_t^2` rows holding
//! each base Gram matrix flattened column-wise, once in the shared columns
//! and once in that task's own column group. `V` is materialized only at
//! test scale; production code uses the trace identities `A = V'V` and the
//! closed forms downstream.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::KernelBank;
use crate::linalg::{DenseMatrix, SymmetricFactorization};

/// Ridge policy for factoring `A`: `eps = max(abs, rel * trace(A) / dim)`.
///
/// `A` is structurally rank deficient (the shared-weight columns are exact
/// sums of task-weight columns), so some ridge is always required.
#[derive(Debug, Clone, Copy)]
pub struct RidgePolicy {
    pub abs: f64,
    pub rel: f64,
}

impl Default for RidgePolicy {
    fn default() -> Self {
        RidgePolicy {
            abs: 1e-10,
            rel: 1e-8,
        }
    }
}

impl RidgePolicy {
    pub fn epsilon_for(&self, a: &DenseMatrix) -> f64 {
        let dim = a.rows().max(1);
        self.abs.max(self.rel * a.trace() / dim as f64)
    }
}

/// `A`, `d`, and a reusable factorization of `A + eps*I`.
#[derive(Debug, Clone)]
pub struct StructureCache {
    bank: Arc<KernelBank>,
    a: DenseMatrix,
    d: Vec<f64>,
    fact: SymmetricFactorization,
}

impl StructureCache {
    pub fn bank(&self) -> &Arc<KernelBank> {
        &self.bank
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn ridge(&self) -> f64 {
        self.fact.ridge()
    }

    pub fn factorization(&self) -> &SymmetricFactorization {
        &self.fact
    }

    /// Solves `(A + eps*I) x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.fact.solve(rhs)
    }

    pub fn bases(&self) -> usize {
        self.bank.bases()
    }

    pub fn tasks(&self) -> usize {
        self.bank.tasks()
    }

    pub fn theta_dim(&self) -> usize {
        theta_dim(self.bases(), self.tasks())
    }
}

pub fn theta_dim(bases: usize, tasks: usize) -> usize {
    bases + bases * tasks
}

/// Index of the shared weight for base kernel `m`.
#[inline]
pub fn shared_index(m: usize) -> usize {
    m
}

/// Index of the task weight for base kernel `m`, task `t`.
#[inline]
pub fn task_index(bases: usize, tasks: usize, m: usize, t: usize) -> usize {
    debug_assert!(m < bases && t < tasks);
    bases + m * tasks + t
}

/// Stacks per-(task, base) scalars into the shared/task layout. The shared
/// block sums the identical per-task floats in task order, which makes the
/// structural cancellation exact in floating point.
pub fn stack_per_task(raw: &[Vec<f64>]) -> Vec<f64> {
    let tasks = raw.len();
    let bases = raw.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; theta_dim(bases, tasks)];
    for m in 0..bases {
        let mut shared = 0.0;
        for (t, row) in raw.iter().enumerate() {
            shared += row[m];
            out[task_index(bases, tasks, m, t)] = row[m];
        }
        out[shared_index(m)] = shared;
    }
    out
}

/// Builds `A` and `d` from the bank and factors `A + eps*I`.
pub fn build_a(bank: Arc<KernelBank>, ridge: RidgePolicy) -> Result<StructureCache> {
    let m_count = bank.bases();
    let t_count = bank.tasks();
    let dim = theta_dim(m_count, t_count);

    // Per-task pairwise Gram traces; everything in A derives from these.
    let mut pair = vec![vec![vec![0.0; t_count]; m_count]; m_count];
    for m1 in 0..m_count {
        for m2 in m1..m_count {
            for t in 0..t_count {
                let s = bank.gram(t, m1).frob_dot(bank.gram(t, m2))?;
                pair[m1][m2][t] = s;
                pair[m2][m1][t] = s;
            }
        }
    }

    let mut a = DenseMatrix::zeros(dim, dim);
    for m1 in 0..m_count {
        for m2 in 0..m_count {
            let per_task = &pair[m1][m2];
            let total: f64 = per_task.iter().sum();
            a.set(shared_index(m1), shared_index(m2), total);
            for (t, &s) in per_task.iter().enumerate() {
                a.set(shared_index(m1), task_index(m_count, t_count, m2, t), s);
                a.set(task_index(m_count, t_count, m1, t), shared_index(m2), s);
                a.set(
                    task_index(m_count, t_count, m1, t),
                    task_index(m_count, t_count, m2, t),
                    s,
                );
            }
        }
    }

    let traces: Vec<Vec<f64>> = (0..t_count)
        .map(|t| (0..m_count).map(|m| bank.gram(t, m).trace()).collect())
        .collect();
    let d = stack_per_task(&traces);

    let eps = ridge.epsilon_for(&a);
    let fact = SymmetricFactorization::new(&a, eps)?;
    Ok(StructureCache {
        bank,
        a,
        d,
        fact,
    })
}

/// The stacked alignment-coupling vector built from neighborhood matrices.
///
/// The per-entry scalars are `2 * trace(K_t^m Khat_t)`, the coefficients of
/// the linear term in the expansion of the summed squared Frobenius
/// distances. The half-scaled view (`alignment()`) equals `V' vhat`, the
/// vector the regularizer and the neighborhood closed form are written in.
#[derive(Debug, Clone)]
pub struct BVector {
    stacked: Vec<f64>,
}

impl BVector {
    /// Coefficients of the Frobenius-expansion linear term (factor 2).
    pub fn as_slice(&self) -> &[f64] {
        &self.stacked
    }

    /// The alignment vector `V' vhat`: half of the expansion coefficients.
    pub fn alignment(&self) -> Vec<f64> {
        self.stacked.iter().map(|v| 0.5 * v).collect()
    }

    pub fn len(&self) -> usize {
        self.stacked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacked.is_empty()
    }
}

/// Builds `b` with entries `2 * trace(K_t^m Khat_t)` in the stacked layout.
pub fn build_b(bank: &KernelBank, neighborhoods: &[DenseMatrix]) -> Result<BVector> {
    if neighborhoods.len() != bank.tasks() {
        return Err(Error::DimensionMismatch {
            expected: bank.tasks(),
            got: neighborhoods.len(),
        });
    }
    let mut raw = Vec::with_capacity(bank.tasks());
    for (t, khat) in neighborhoods.iter().enumerate() {
        if khat.rows() != bank.task_size(t) || khat.cols() != bank.task_size(t) {
            return Err(Error::DimensionMismatch {
                expected: bank.task_size(t),
                got: khat.rows(),
            });
        }
        let mut row = Vec::with_capacity(bank.bases());
        for m in 0..bank.bases() {
            row.push(2.0 * bank.gram(t, m).frob_dot(khat)?);
        }
        raw.push(row);
    }
    Ok(BVector {
        stacked: stack_per_task(&raw),
    })
}

/// `c = sum_t ||Khat_t||_F^2` for symmetric neighborhoods.
pub fn build_c(neighborhoods: &[DenseMatrix]) -> f64 {
    neighborhoods
        .iter()
        .map(|k| k.frob_dot(k).expect("same shape"))
        .sum()
}

/// Builds `q` from per-task signed dual coefficients: `y .* alpha` for
/// classification, `alpha - alpha*` for regression. Entries are
/// `0.5 * z' K_t^m z`.
pub fn build_q(bank: &KernelBank, coefficients: &[Vec<f64>]) -> Result<Vec<f64>> {
    if coefficients.len() != bank.tasks() {
        return Err(Error::DimensionMismatch {
            expected: bank.tasks(),
            got: coefficients.len(),
        });
    }
    let mut raw = Vec::with_capacity(bank.tasks());
    for (t, z) in coefficients.iter().enumerate() {
        if z.len() != bank.task_size(t) {
            return Err(Error::DimensionMismatch {
                expected: bank.task_size(t),
                got: z.len(),
            });
        }
        let mut row = Vec::with_capacity(bank.bases());
        for m in 0..bank.bases() {
            row.push(0.5 * crate::linalg::quadratic_form(bank.gram(t, m), z, z)?);
        }
        raw.push(row);
    }
    Ok(stack_per_task(&raw))
}

/// Default row cap for materializing `V` (sum over tasks of `n_t^2`).
pub const V_ROW_CAP: usize = 10_000;

/// Materializes `V` for oracles and small-instance cross-checks.
pub fn materialize_v(bank: &KernelBank, cap: usize) -> Result<DenseMatrix> {
    let m_count = bank.bases();
    let t_count = bank.tasks();
    let total_rows: usize = (0..t_count).map(|t| bank.task_size(t).pow(2)).sum();
    if total_rows > cap {
        return Err(Error::CapExceeded {
            got: total_rows,
            cap,
        });
    }
    let dim = theta_dim(m_count, t_count);
    let mut v = DenseMatrix::zeros(total_rows, dim);
    let mut row_base = 0usize;
    for t in 0..t_count {
        let n = bank.task_size(t);
        for m in 0..m_count {
            let g = bank.gram(t, m);
            // Column-wise flattening: row index r encodes (i, j) = (r % n, r / n).
            for j in 0..n {
                for i in 0..n {
                    let r = row_base + j * n + i;
                    let val = g.at(i, j);
                    v.set(r, shared_index(m), val);
                    v.set(r, task_index(m_count, t_count, m, t), val);
                }
            }
        }
        row_base += n * n;
    }
    Ok(v)
}

/// Flattens neighborhood matrices column-wise into the stacked `vhat`.
pub fn vec_stack(neighborhoods: &[DenseMatrix]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in neighborhoods {
        for j in 0..k.cols() {
            for i in 0..k.rows() {
                out.push(k.at(i, j));
            }
        }
    }
    out
}
