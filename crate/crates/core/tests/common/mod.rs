//! Independent oracles shared by the integration suites. Everything here
//! recomputes results through a different route than the library code:
//! exhaustive enumeration, dense factorizations from nalgebra, or direct
//! definitions.

use std::sync::Arc;

use mtonmkl::data::{synth_related_tasks, MultiTaskDataset, TaskKind};
use mtonmkl::kernels::{build_bank, KernelBank, KernelOptions, KernelSpec};
use mtonmkl::linalg::DenseMatrix;
use mtonmkl::structure::StructureCache;
use mtonmkl::subproblems::ThetaParams;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.at(i, j))
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let mut k = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// Random PSD kernel with unit diagonal.
pub fn random_psd_kernel(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let g = DenseMatrix::from_vec(
        n,
        n,
        (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let mut m = g.transposed().matmul(&g).unwrap();
    for i in 0..n {
        m.add_at(i, i, 0.3);
    }
    mtonmkl::kernels::normalize_gram(&m).unwrap()
}

pub fn mixed_specs() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Linear,
        KernelSpec::Polynomial {
            degree: 2,
            offset: 1.0,
        },
        KernelSpec::Gaussian { spread: 1.0 },
        KernelSpec::Gaussian { spread: 4.0 },
    ]
}

pub fn random_bank(
    seed: u64,
    tasks: usize,
    n: usize,
    bases: usize,
) -> (Arc<KernelBank>, MultiTaskDataset) {
    let data = synth_related_tasks(seed, tasks, n, 3, 0.7, 0.3, TaskKind::Classification).unwrap();
    let specs: Vec<KernelSpec> = mixed_specs().into_iter().take(bases).collect();
    let bank = build_bank(&data, &specs, KernelOptions::default()).unwrap();
    (bank, data)
}

pub fn random_neighborhoods(
    bank: &KernelBank,
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> Vec<DenseMatrix> {
    (0..bank.tasks())
        .map(|t| random_symmetric(bank.task_size(t), rng).scaled(scale))
        .collect()
}

/// Maximum of `p'z - 1/2 z'(SKS)z` over `0 <= z <= c`, `s'z = 0`, by
/// enumerating every lower/upper/free assignment of the box constraints and
/// solving the equality-constrained system on the free set.
pub fn brute_force_box_qp(kernel: &DenseMatrix, p: &[f64], s: &[f64], c: f64) -> f64 {
    let n_vars = p.len();
    let n = kernel.rows();
    let q = |a: usize, b: usize| -> f64 { s[a] * s[b] * kernel.at(a % n, b % n) };
    let objective = |z: &[f64]| -> f64 {
        let mut quad = 0.0;
        for a in 0..n_vars {
            if z[a] == 0.0 {
                continue;
            }
            for b in 0..n_vars {
                quad += z[a] * q(a, b) * z[b];
            }
        }
        let lin: f64 = z.iter().zip(p).map(|(za, pa)| za * pa).sum();
        lin - 0.5 * quad
    };

    let mut best = f64::NEG_INFINITY;
    let mut assignment = vec![0u8; n_vars]; // 0 = lower, 1 = upper, 2 = free
    let total = 3usize.pow(n_vars as u32);
    for code in 0..total {
        let mut rem = code;
        for slot in assignment.iter_mut() {
            *slot = (rem % 3) as u8;
            rem /= 3;
        }
        let free: Vec<usize> = (0..n_vars).filter(|&a| assignment[a] == 2).collect();
        let mut z = vec![0.0; n_vars];
        for a in 0..n_vars {
            if assignment[a] == 1 {
                z[a] = c;
            }
        }
        if free.is_empty() {
            let balance: f64 = z.iter().zip(s).map(|(za, sa)| za * sa).sum();
            if balance.abs() <= 1e-9 {
                best = best.max(objective(&z));
            }
            continue;
        }
        // KKT system on the free set: stationarity plus the equality
        // constraint with multiplier mu.
        let k = free.len();
        let mut mat = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (r, &a) in free.iter().enumerate() {
            for (cidx, &b) in free.iter().enumerate() {
                mat[(r, cidx)] = q(a, b);
            }
            mat[(r, k)] = s[a];
            let mut fixed_term = 0.0;
            for b in 0..n_vars {
                if assignment[b] == 1 {
                    fixed_term += q(a, b) * c;
                }
            }
            rhs[r] = p[a] - fixed_term;
        }
        let mut fixed_balance = 0.0;
        for b in 0..n_vars {
            if assignment[b] == 1 {
                fixed_balance += s[b] * c;
            }
        }
        for (cidx, &b) in free.iter().enumerate() {
            mat[(k, cidx)] = s[b];
        }
        rhs[k] = -fixed_balance;

        let svd = mat.clone().svd(true, true);
        let sol = match svd.solve(&rhs, 1e-12) {
            Ok(sol) => sol,
            Err(_) => continue,
        };
        // Reject inconsistent systems.
        let residual = (&mat * &sol - &rhs).norm();
        if residual > 1e-8 * (rhs.norm() + 1.0) {
            continue;
        }
        let mut feasible = true;
        for (r, &a) in free.iter().enumerate() {
            let v = sol[r];
            if !(-1e-9..=c + 1e-9).contains(&v) {
                feasible = false;
                break;
            }
            z[a] = v.clamp(0.0, c);
        }
        if feasible {
            best = best.max(objective(&z));
        }
    }
    best
}

/// Classification oracle: `p = 1`, `s = y`.
pub fn brute_force_svc(kernel: &DenseMatrix, y: &[f64], c: f64) -> f64 {
    brute_force_box_qp(kernel, &vec![1.0; y.len()], y, c)
}

/// Regression oracle on the doubled variable set.
pub fn brute_force_svr(kernel: &DenseMatrix, y: &[f64], c: f64, epsilon: f64) -> f64 {
    let n = y.len();
    let mut s = vec![1.0; n];
    s.extend(std::iter::repeat(-1.0).take(n));
    let mut p: Vec<f64> = y.iter().map(|yi| yi - epsilon).collect();
    p.extend(y.iter().map(|yi| -yi - epsilon));
    brute_force_box_qp(kernel, &p, &s, c)
}

/// Minimum of `(eta/2) x'A x - x'h` over `x >= 0` by enumerating all 2^dim
/// zero/free assignments and solving the stationarity system on the free
/// coordinates.
pub fn brute_force_nonneg_qp(a: &DenseMatrix, eta: f64, h: &[f64]) -> f64 {
    let dim = h.len();
    let objective = |x: &[f64]| -> f64 {
        let ax = a.matvec(x).unwrap();
        0.5 * eta * mtonmkl::linalg::dot(x, &ax) - mtonmkl::linalg::dot(x, h)
    };
    let mut best = f64::INFINITY;
    for mask in 0..(1usize << dim) {
        let free: Vec<usize> = (0..dim).filter(|&i| mask >> i & 1 == 1).collect();
        if free.is_empty() {
            best = best.min(0.0);
            continue;
        }
        let k = free.len();
        let mat = DMatrix::from_fn(k, k, |r, c| eta * a.at(free[r], free[c]));
        let rhs = DVector::from_fn(k, |r, _| h[free[r]]);
        let svd = mat.clone().svd(true, true);
        let sol = match svd.solve(&rhs, 1e-12) {
            Ok(sol) => sol,
            Err(_) => continue,
        };
        if (&mat * &sol - &rhs).norm() > 1e-7 * (rhs.norm() + 1.0) {
            continue;
        }
        if sol.iter().any(|&v| v < -1e-9) {
            continue;
        }
        let mut x = vec![0.0; dim];
        for (r, &i) in free.iter().enumerate() {
            x[i] = sol[r].max(0.0);
        }
        best = best.min(objective(&x));
    }
    best
}

/// Dense solve of the neighborhood subproblem with `V` materialized: the
/// quadratic matrix is `(eta - 4 beta) I + (beta/2) V V^+` and the target is
/// `(eta V th - beta V g) / 2` with `g` the ridge solve against `d`.
pub fn dense_neighborhood_solve(
    cache: &StructureCache,
    bank: &KernelBank,
    theta: &ThetaParams,
    eta: f64,
    beta: f64,
) -> Vec<DenseMatrix> {
    let v = mtonmkl::structure::materialize_v(bank, usize::MAX).unwrap();
    let v_na = to_na(&v);
    let rows = v.rows();
    let pinv = v_na.clone().pseudo_inverse(1e-10).unwrap();
    let proj = &v_na * &pinv;
    let g = cache.solve(cache.d()).unwrap();
    let th = theta.stacked();
    let target: Vec<f64> = {
        let vt = v.matvec(&th).unwrap();
        let vg = v.matvec(&g).unwrap();
        vt.iter()
            .zip(&vg)
            .map(|(a, b)| 0.5 * (eta * a - beta * b))
            .collect()
    };
    let mut sigma = DMatrix::from_fn(rows, rows, |i, j| 0.5 * beta * proj[(i, j)]);
    for i in 0..rows {
        sigma[(i, i)] += eta - 4.0 * beta;
    }
    let rhs = DVector::from_vec(target);
    let sol = sigma.lu().solve(&rhs).unwrap();

    let mut out = Vec::with_capacity(bank.tasks());
    let mut base = 0usize;
    for t in 0..bank.tasks() {
        let n = bank.task_size(t);
        let mut k = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                k.set(i, j, sol[base + j * n + i]);
            }
        }
        out.push(k);
        base += n * n;
    }
    out
}

/// Exhaustive fourth-moment average over all sign vectors.
pub fn exhaustive_sign_quartic(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut total = 0.0;
    for bits in 0..(1u32 << n) {
        let s: Vec<f64> = (0..n)
            .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let qa = mtonmkl::linalg::quadratic_form(a, &s, &s).unwrap();
        let qb = mtonmkl::linalg::quadratic_form(b, &s, &s).unwrap();
        total += qa * qb;
    }
    total / (1u64 << n) as f64
}
