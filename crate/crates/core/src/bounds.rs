//! The theory surface: the neighborhood regularizer, the complexity bound
//! on the hypothesis class, and the sign-vector moment identity with its
//! Monte-Carlo verification oracle.
//!
//! Two stacked vectors appear with different scalings. The feasible-set
//! expansion vector (entries `2 tr(K_t^m Khat_t)`) drives the bound, which
//! is derived from the constraint `th'A th - th'b + c <= rho`. The
//! regularizer and the neighborhood update are written in the half-scaled
//! alignment vector `V' vhat`; [`crate::structure::BVector`] carries both
//! views.

use rayon::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::structure::{BVector, StructureCache};
use crate::subproblems::{minimize_nonneg_quadratic_from, ThetaSolverOptions};

/// Inputs for the complexity bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs<'a> {
    /// Weight-norm budget.
    pub r_budget: f64,
    /// Frobenius-ball radius around the neighborhood matrices.
    pub rho: f64,
    /// Samples per task.
    pub n: usize,
    pub cache: &'a StructureCache,
    pub b: &'a BVector,
    pub c: f64,
}

/// Regularizer `d'A^-1 w + 1/2 w'A^-1 w - 4c` where `w` is the alignment
/// vector (half the expansion coefficients).
pub fn omega(cache: &StructureCache, b: &BVector, c: f64) -> Result<f64> {
    let w = b.alignment();
    let g = cache.solve(cache.d())?;
    let aw = cache.solve(&w)?;
    Ok(dot(&g, &w) + 0.5 * dot(&aw, &w) - 4.0 * c)
}

/// `trace((A + eps I)^-1 A)`, the ridge form of `trace(V A^-1 V')`.
pub fn ridge_trace(cache: &StructureCache) -> Result<f64> {
    let dim = cache.theta_dim();
    let mut tr = 0.0;
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        let x = cache.solve(&e)?;
        tr += dot(&x, cache.a().row(i));
    }
    Ok(tr)
}

/// Upper bound on the empirical complexity of the hypothesis class at fixed
/// neighborhood matrices:
///
/// ```text
///   (1/n) sqrt(R / (2T)) * sqrt( d'A^-1 b
///       + 1/2 [ (d'A^-1 d + 2 tr(V A^-1 V')) + (b'A^-1 b + 4 (rho - c)) ] )
/// ```
pub fn rademacher_bound(inputs: &BoundInputs) -> Result<f64> {
    if !(inputs.r_budget > 0.0) || !(inputs.rho >= 0.0) || inputs.n == 0 {
        return Err(Error::InvalidHyperParams(format!(
            "R = {}, rho = {}, n = {}",
            inputs.r_budget, inputs.rho, inputs.n
        )));
    }
    let cache = inputs.cache;
    let b = inputs.b.as_slice();
    let d = cache.d();
    let inv_b = cache.solve(b)?;
    let inv_d = cache.solve(d)?;
    let trace_term = ridge_trace(cache)?;
    let radicand = dot(d, &inv_b)
        + 0.5 * ((dot(d, &inv_d) + 2.0 * trace_term)
            + (dot(b, &inv_b) + 4.0 * (inputs.rho - inputs.c)));
    if radicand < 0.0 {
        return Err(Error::NegativeRadicand { value: radicand });
    }
    let t_count = cache.tasks() as f64;
    Ok((inputs.r_budget / (2.0 * t_count)).sqrt() / inputs.n as f64 * radicand.sqrt())
}

/// Fourth-moment identity for a vector of independent signs:
/// `E[(s'As)(s'Bs)] = tr(A) tr(B) + 2 (tr(AB) - tr(A o B))`.
///
/// Quadratic forms see only the symmetric part of a matrix, so both inputs
/// are symmetrized first; the closed form as written assumes that.
pub fn rademacher_quartic_expectation(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: b.rows(),
        });
    }
    let n = a.rows();
    let sym = |m: &DenseMatrix| {
        let mut s = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s.set(i, j, 0.5 * (m.at(i, j) + m.at(j, i)));
            }
        }
        s
    };
    let sa = sym(a);
    let sb = sym(b);
    let tr_ab = sa.matmul(&sb)?.trace();
    let tr_hadamard: f64 = (0..n).map(|i| sa.at(i, i) * sb.at(i, i)).sum();
    Ok(sa.trace() * sb.trace() + 2.0 * (tr_ab - tr_hadamard))
}

/// Monte-Carlo estimate of the empirical complexity of the class: for each
/// sign draw, the inner supremum over feasible weights of `sqrt(th'u)` is
/// solved as a constrained QP by bisection on the constraint multiplier,
/// reusing the nonnegative-QP solver. The estimate must stay below the
/// closed-form bound up to sampling noise.
pub fn empirical_complexity_estimate(
    inputs: &BoundInputs,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let cache = inputs.cache;
    let bank = cache.bank();
    let t_count = bank.tasks();
    let b = inputs.b.as_slice();
    let sup_values: Result<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|draw| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(draw as u64 + 1);
            // u entries: per task, the quadratic form of the signs through
            // each base gram, stacked like every other structure vector.
            let mut raw = Vec::with_capacity(t_count);
            for t in 0..t_count {
                let n = bank.task_size(t);
                let signs: Vec<f64> = (0..n)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let mut row = Vec::with_capacity(bank.bases());
                for m in 0..bank.bases() {
                    row.push(crate::linalg::quadratic_form(
                        bank.gram(t, m),
                        &signs,
                        &signs,
                    )?);
                }
                raw.push(row);
            }
            let u = crate::structure::stack_per_task(&raw);
            let sup = feasible_sup(cache, &u, b, inputs.c, inputs.rho)?;
            Ok(sup.max(0.0).sqrt())
        })
        .collect();
    let sup_values = sup_values?;
    let mean = sup_values.iter().sum::<f64>() / draws.max(1) as f64;
    Ok((inputs.r_budget / t_count as f64).sqrt() / inputs.n as f64 * mean)
}

/// Supremum of `th'u` over `th >= 0, th'A th - th'b + c <= rho` via
/// bisection on the Lagrange multiplier of the quadratic constraint.
fn feasible_sup(
    cache: &StructureCache,
    u: &[f64],
    b: &[f64],
    c: f64,
    rho: f64,
) -> Result<f64> {
    let constraint = |th: &[f64]| -> Result<f64> {
        let ath = cache.a().matvec(th)?;
        Ok(dot(th, &ath) - dot(th, b) + c)
    };
    let solve_for = |nu: f64, warm: Option<&[f64]>| -> Result<Vec<f64>> {
        // max th'u - nu (th'A th - th'b) == min nu th'A th - th'(u + nu b)
        let h: Vec<f64> = u.iter().zip(b).map(|(ui, bi)| ui + nu * bi).collect();
        minimize_nonneg_quadratic_from(
            cache.a(),
            2.0 * nu,
            &h,
            ThetaSolverOptions {
                tolerance: 1e-7,
                max_iterations: 800,
            },
            warm,
        )
    };
    // The constraint value decreases as the multiplier grows; bracket it.
    let lo0 = 1e-4;
    let mut hi = 2.0;
    let mut th_hi = solve_for(hi, None)?;
    for _ in 0..40 {
        if constraint(&th_hi)? <= rho {
            break;
        }
        hi *= 4.0;
        th_hi = solve_for(hi, Some(&th_hi))?;
    }
    let th_lo = solve_for(lo0, None)?;
    if constraint(&th_lo)? <= rho {
        // Constraint inactive even for a tiny multiplier: the value at the
        // near-unconstrained point is the supremum for our purposes.
        return Ok(dot(&th_lo, u));
    }
    let mut lo = lo0;
    let mut best = th_hi;
    for _ in 0..22 {
        if hi - lo <= 1e-3 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let th = solve_for(mid, Some(&best))?;
        if constraint(&th)? <= rho {
            hi = mid;
            best = th;
        } else {
            lo = mid;
        }
    }
    Ok(dot(&best, u))
}
