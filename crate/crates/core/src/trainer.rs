//! Block coordinate descent over the three blocks (neighborhood matrices,
//! per-task SVM duals, kernel weights), the four in-paper baselines, and
//! everything a trained model needs for out-of-sample prediction.
//!
//! One outer iteration refreshes the neighborhoods in closed form, solves
//! the T SVM duals in parallel on the current combined kernels, and then
//! solves the nonnegative weight QP. The monitored objective is the primal
//! value reconstructed from the current duals: hinge (or tube) losses plus
//! the weighted squared-norm terms, the Frobenius fit, and the neighborhood
//! regularizer.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{MultiTaskDataset, TaskData, TaskKind};
use crate::error::{Error, Result};
use crate::kernels::{
    alignment, build_bank, evaluate_kernel, KernelBank, KernelOptions, KernelSpec,
};
use crate::linalg::{quadratic_form, DenseMatrix};
use crate::structure::{build_a, build_b, build_c, build_q, RidgePolicy, StructureCache};
use crate::subproblems::{
    combined_kernel, solve_neighborhood, solve_theta, HyperParams, NeighborhoodSet, ThetaParams,
    ThetaSolverOptions,
};
use crate::svm::{predict_label, solve_svc, solve_svr, SvmSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MtOnmkl,
    Itl,
    AvMtMkl,
    MtMkl,
    Kta,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::MtOnmkl => "MT-ONMKL",
            Method::Itl => "ITL",
            Method::AvMtMkl => "AVMTMKL",
            Method::MtMkl => "MT-MKL",
            Method::Kta => "KTA",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_uppercase().as_str() {
            "MT-ONMKL" | "MTONMKL" => Ok(Method::MtOnmkl),
            "ITL" => Ok(Method::Itl),
            "AVMTMKL" => Ok(Method::AvMtMkl),
            "MT-MKL" | "MTMKL" => Ok(Method::MtMkl),
            "KTA" => Ok(Method::Kta),
            other => Err(Error::Invalid(format!("unknown method {other}"))),
        }
    }

    fn code(&self) -> u8 {
        match self {
            Method::MtOnmkl => 0,
            Method::Itl => 1,
            Method::AvMtMkl => 2,
            Method::MtMkl => 3,
            Method::Kta => 4,
        }
    }

    fn from_code(code: u8) -> Result<Method> {
        Ok(match code {
            0 => Method::MtOnmkl,
            1 => Method::Itl,
            2 => Method::AvMtMkl,
            3 => Method::MtMkl,
            4 => Method::Kta,
            x => return Err(Error::ModelFormat(format!("bad method code {x}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTag {
    Initial,
    Neighborhood,
    Svm,
    Theta,
}

impl BlockTag {
    pub fn name(&self) -> &'static str {
        match self {
            BlockTag::Initial => "initial",
            BlockTag::Neighborhood => "neighborhood",
            BlockTag::Svm => "svm",
            BlockTag::Theta => "theta",
        }
    }

    fn code(&self) -> u8 {
        match self {
            BlockTag::Initial => 0,
            BlockTag::Neighborhood => 1,
            BlockTag::Svm => 2,
            BlockTag::Theta => 3,
        }
    }

    fn from_code(code: u8) -> Result<BlockTag> {
        Ok(match code {
            0 => BlockTag::Initial,
            1 => BlockTag::Neighborhood,
            2 => BlockTag::Svm,
            3 => BlockTag::Theta,
            x => return Err(Error::ModelFormat(format!("bad block code {x}"))),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceEntry {
    pub outer: usize,
    pub block: BlockTag,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub hp: HyperParams,
    pub svm_tolerance: f64,
    pub svr_epsilon: f64,
    /// Stop when the relative decrease of the monitored objective over one
    /// outer iteration falls below this.
    pub relative_objective_tolerance: f64,
    /// Solve the weight QP in its printed equal-weights form (quadratic and
    /// alignment terms weighted as if eta were 2).
    pub printed_theta_form: bool,
    pub ridge: RidgePolicy,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hp: HyperParams::default(),
            svm_tolerance: 1e-4,
            svr_epsilon: 0.1,
            relative_objective_tolerance: 1e-5,
            printed_theta_form: false,
            ridge: RidgePolicy::default(),
        }
    }
}

/// Everything needed to score new points for one task.
#[derive(Debug, Clone)]
pub struct TaskModel {
    pub id: String,
    pub kind: TaskKind,
    pub features: DenseMatrix,
    pub targets: Vec<f64>,
    pub solution: SvmSolution,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: Method,
    pub theta: ThetaParams,
    pub tasks: Vec<TaskModel>,
    pub neighborhood: Option<NeighborhoodSet>,
    pub specs: Vec<KernelSpec>,
    pub kernel_options: KernelOptions,
    /// Per-feature (mean, std) applied before kernel evaluation, when the
    /// training pipeline standardized features.
    pub standardization: Option<(Vec<f64>, Vec<f64>)>,
    pub trace: Vec<TraceEntry>,
    pub hp: HyperParams,
    pub svr_epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct Metrics {
    pub kind: TaskKind,
    /// Accuracy per task (classification) or MSE per task (regression).
    pub per_task: Vec<f64>,
    pub mean: f64,
}

enum NeighborhoodRule {
    ClosedForm,
    Frozen(NeighborhoodSet),
}

struct BcdState<'a> {
    bank: &'a Arc<KernelBank>,
    cache: StructureCache,
    data: &'a MultiTaskDataset,
    kind: TaskKind,
    opts: &'a TrainOptions,
}

impl<'a> BcdState<'a> {
    fn new(
        bank: &'a Arc<KernelBank>,
        data: &'a MultiTaskDataset,
        opts: &'a TrainOptions,
    ) -> Result<Self> {
        opts.hp.validate()?;
        let kind = data.uniform_kind()?;
        if bank.tasks() != data.tasks().len() {
            return Err(Error::DimensionMismatch {
                expected: data.tasks().len(),
                got: bank.tasks(),
            });
        }
        for (t, task) in data.tasks().iter().enumerate() {
            if bank.task_size(t) != task.len() {
                return Err(Error::DimensionMismatch {
                    expected: task.len(),
                    got: bank.task_size(t),
                });
            }
        }
        let cache = build_a(bank.clone(), opts.ridge)?;
        Ok(BcdState {
            bank,
            cache,
            data,
            kind,
            opts,
        })
    }

    fn solve_all_svms(&self, theta: &ThetaParams) -> Result<Vec<SvmSolution>> {
        let opts = self.opts;
        let kind = self.kind;
        (0..self.data.tasks().len())
            .into_par_iter()
            .map(|t| {
                let k = combined_kernel(self.bank, theta, t)?;
                let task = &self.data.tasks()[t];
                match kind {
                    TaskKind::Classification => {
                        solve_svc(&k, &task.targets, opts.hp.c, opts.svm_tolerance).map_err(|e| {
                            match e {
                                Error::SingleClass(_) => Error::SingleClass(t),
                                other => other,
                            }
                        })
                    }
                    TaskKind::Regression => solve_svr(
                        &k,
                        &task.targets,
                        opts.hp.c,
                        opts.svr_epsilon,
                        opts.svm_tolerance,
                    ),
                }
            })
            .collect()
    }

    /// Reconstructed primal value at the current blocks. Slack losses are
    /// rebuilt from the dual expansion; the fit and regularizer terms are
    /// included only when a neighborhood rule is active.
    fn objective(
        &self,
        theta: &ThetaParams,
        neighborhood: Option<&NeighborhoodSet>,
        sols: &[Option<SvmSolution>],
        with_coupling: bool,
    ) -> Result<f64> {
        let hp = &self.opts.hp;
        let mut total = 0.0;
        for (t, task) in self.data.tasks().iter().enumerate() {
            let k = combined_kernel(self.bank, theta, t)?;
            let (wnorm, scores): (f64, Vec<f64>) = match &sols[t] {
                Some(sol) => {
                    let w = quadratic_form(&k, &sol.coefficients, &sol.coefficients)?;
                    let f0 = k.matvec(&sol.coefficients)?;
                    (w, f0.iter().map(|v| v + sol.bias).collect())
                }
                None => (0.0, vec![0.0; task.len()]),
            };
            let loss: f64 = match self.kind {
                TaskKind::Classification => task
                    .targets
                    .iter()
                    .zip(&scores)
                    .map(|(y, f)| (1.0 - y * f).max(0.0))
                    .sum(),
                TaskKind::Regression => task
                    .targets
                    .iter()
                    .zip(&scores)
                    .map(|(y, f)| ((y - f).abs() - self.opts.svr_epsilon).max(0.0))
                    .sum(),
            };
            total += 0.5 * wnorm + hp.c * loss;
            if with_coupling {
                let fit = match neighborhood {
                    Some(nb) => {
                        let mut diff = k.clone();
                        diff.add_scaled(-1.0, nb.matrix(t))?;
                        let f = diff.frob_norm();
                        f * f
                    }
                    None => {
                        let f = k.frob_norm();
                        f * f
                    }
                };
                total += 0.5 * hp.eta * fit;
            }
        }
        if with_coupling {
            if let Some(nb) = neighborhood {
                let b = build_b(self.bank, nb.matrices())?;
                let c = build_c(nb.matrices());
                total += 0.5 * hp.beta * crate::bounds::omega(&self.cache, &b, c)?;
            }
        }
        Ok(total)
    }
}

fn signed_coefficients(sols: &[SvmSolution]) -> Vec<Vec<f64>> {
    sols.iter().map(|s| s.coefficients.clone()).collect()
}

/// Target matrices `y y'` used by the fixed-alignment baseline.
fn label_outer_products(data: &MultiTaskDataset) -> Result<NeighborhoodSet> {
    let mats = data
        .tasks()
        .iter()
        .map(|task| {
            let n = task.len();
            let mut m = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    m.set(i, j, task.targets[i] * task.targets[j]);
                }
            }
            m
        })
        .collect();
    NeighborhoodSet::from_matrices(mats)
}

fn run_bcd(
    bank: &Arc<KernelBank>,
    data: &MultiTaskDataset,
    opts: &TrainOptions,
    rule: NeighborhoodRule,
    method: Method,
) -> Result<TrainedModel> {
    let state = BcdState::new(bank, data, opts)?;
    let hp = &opts.hp;
    let mut theta = ThetaParams::uniform(bank.bases(), bank.tasks());
    let mut sols: Vec<Option<SvmSolution>> = vec![None; bank.tasks()];
    let mut neighborhood: Option<NeighborhoodSet> = None;
    let mut trace = Vec::new();

    let initial = state.objective(&theta, None, &sols, true)?;
    trace.push(TraceEntry {
        outer: 0,
        block: BlockTag::Initial,
        objective: initial,
    });
    let mut outer_end = initial;

    for outer in 1..=hp.outer_cap {
        match &rule {
            NeighborhoodRule::ClosedForm => {
                neighborhood = Some(solve_neighborhood(&state.cache, &theta, hp.eta, hp.beta)?);
            }
            NeighborhoodRule::Frozen(frozen) => {
                if neighborhood.is_none() {
                    neighborhood = Some(frozen.clone());
                }
            }
        }
        trace.push(TraceEntry {
            outer,
            block: BlockTag::Neighborhood,
            objective: state.objective(&theta, neighborhood.as_ref(), &sols, true)?,
        });

        let solved = state.solve_all_svms(&theta)?;
        sols = solved.into_iter().map(Some).collect();
        trace.push(TraceEntry {
            outer,
            block: BlockTag::Svm,
            objective: state.objective(&theta, neighborhood.as_ref(), &sols, true)?,
        });

        let nb = neighborhood
            .as_ref()
            .expect("coupled methods set the neighborhood before the weight step");
        let b = build_b(bank, nb.matrices())?;
        let coeffs = signed_coefficients(
            &sols
                .iter()
                .map(|s| s.clone().expect("svm pass filled all tasks"))
                .collect::<Vec<_>>(),
        );
        let q = build_q(bank, &coeffs)?;
        let eta_for_qp = if opts.printed_theta_form { 2.0 } else { hp.eta };
        theta = solve_theta(
            &state.cache,
            &b,
            &q,
            eta_for_qp,
            ThetaSolverOptions {
                tolerance: hp.theta_tolerance,
                max_iterations: 10_000,
            },
        )?;
        let after_theta = state.objective(&theta, neighborhood.as_ref(), &sols, true)?;
        trace.push(TraceEntry {
            outer,
            block: BlockTag::Theta,
            objective: after_theta,
        });

        // The monitored value is a reconstruction, not a Lyapunov function
        // of the three-block scheme, so stop when it stabilizes rather than
        // on signed decrease (which would halt at the first oscillation).
        let change = (outer_end - after_theta).abs();
        outer_end = after_theta;
        if change <= opts.relative_objective_tolerance * outer_end.abs().max(1e-12) && outer > 1 {
            break;
        }
    }

    // Final SVM pass so the stored duals match the final weights.
    let final_sols = state.solve_all_svms(&theta)?;
    let tasks = data
        .tasks()
        .iter()
        .zip(final_sols)
        .map(|(task, solution)| TaskModel {
            id: task.id.clone(),
            kind: task.kind,
            features: task.features.clone(),
            targets: task.targets.clone(),
            solution,
        })
        .collect();
    Ok(TrainedModel {
        method,
        theta,
        tasks,
        neighborhood,
        specs: bank.specs().to_vec(),
        kernel_options: bank.options(),
        standardization: None,
        trace,
        hp: *hp,
        svr_epsilon: opts.svr_epsilon,
    })
}

/// The full model: alternating neighborhood, SVM, and weight updates.
pub fn train_mtonmkl(
    bank: &Arc<KernelBank>,
    data: &MultiTaskDataset,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    run_bcd(bank, data, opts, NeighborhoodRule::ClosedForm, Method::MtOnmkl)
}

/// Dispatches on the method tag.
pub fn train(
    method: Method,
    bank: &Arc<KernelBank>,
    data: &MultiTaskDataset,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    match method {
        Method::MtOnmkl => train_mtonmkl(bank, data, opts),
        other => train_baseline(other, bank, data, opts),
    }
}

pub fn train_baseline(
    method: Method,
    bank: &Arc<KernelBank>,
    data: &MultiTaskDataset,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    match method {
        Method::MtOnmkl => train_mtonmkl(bank, data, opts),
        Method::Kta => {
            let frozen = label_outer_products(data)?;
            run_bcd(bank, data, opts, NeighborhoodRule::Frozen(frozen), Method::Kta)
        }
        Method::AvMtMkl => train_uniform(bank, data, opts),
        Method::MtMkl => train_mtmkl(bank, data, opts, Method::MtMkl),
        Method::Itl => train_itl(bank, data, opts),
    }
}

/// Uniform kernel weights, a single SVM pass per task.
fn train_uniform(
    bank: &Arc<KernelBank>,
    data: &MultiTaskDataset,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    let state = BcdState::new(bank, data, opts)?;
    let theta = ThetaParams::uniform(bank.bases(), bank.tasks());
    let sols = state.solve_all_svms(&theta)?;
    let wrapped: Vec<Option<SvmSolution>> = sols.iter().cloned().map(Some).collect();
    let objective = state.objective(&theta, None, &wrapped, false)?;
    let tasks = data
        .tasks()
        .iter()
        .zip(sols)
        .map(|(task, solution)| TaskModel {
            id: task.id.clone(),
            kind: task.kind,
            features: task.features.clone(),
            targets: task.targets.clone(),
            solution,
        })
        .collect();
    Ok(TrainedModel {
        method: Method::AvMtMkl,
        theta,
        tasks,
        neighborhood: None,
        specs: bank.specs().to_vec(),
        kernel_options: bank.options(),
        standardization: None,
        trace: vec![TraceEntry {
            outer: 1,
            block: BlockTag::Svm,
            objective,
        }],
        hp: opts.hp,
        svr_epsilon: opts.svr_epsilon,
    })
}

/// Jointly learned weights without the neighborhood machinery. The weight
/// update redistributes mass by the per-component norms of the dual
/// expansion and rescales into the group norm ball
/// `||mu||_2 + sum_t ||lambda_t||_2 <= 1`; a step that fails to decrease
/// the SVM primal is rejected and training stops there. This comparator is
/// an approximation; the reference formulation is underspecified.
fn train_mtmkl(
    bank: &Arc<KernelBank>,
    data: &MultiTaskDataset,
    opts: &TrainOptions,
    method: Method,
) -> Result<TrainedModel> {
    let state = BcdState::new(bank, data, opts)?;
    let m_count = bank.bases();
    let t_count = bank.tasks();
    let normalize = |mu: &mut Vec<f64>, lambdas: &mut Vec<Vec<f64>>| {
        let group_norm = crate::linalg::norm2(mu)
            + lambdas.iter().map(|l| crate::linalg::norm2(l)).sum::<f64>();
        if group_norm > 0.0 {
            for v in mu.iter_mut() {
                *v /= group_norm;
            }
            for l in lambdas.iter_mut() {
                for v in l.iter_mut() {
                    *v /= group_norm;
                }
            }
        }
    };

    let mut mu = vec![1.0 / m_count as f64; m_count];
    let mut lambdas = vec![vec![0.0; m_count]; t_count];
    normalize(&mut mu, &mut lambdas);
    let mut theta = ThetaParams::new(mu, lambdas)?;

    let mut best_sols = state.solve_all_svms(&theta)?;
    let wrapped: Vec<Option<SvmSolution>> = best_sols.iter().cloned().map(Some).collect();
    let mut best_obj = state.objective(&theta, None, &wrapped, false)?;
    let mut best_theta = theta.clone();
    let mut trace = vec![TraceEntry {
        outer: 1,
        block: BlockTag::Svm,
        objective: best_obj,
    }];

    let cap = opts.hp.outer_cap.min(25);
    for outer in 2..=cap {
        // Importance of each component: squared norm of its share of the
        // dual expansion, split between shared and task weights in
        // proportion to their contribution.
        let coeffs = signed_coefficients(&best_sols);
        let q = build_q(bank, &coeffs)?;
        let mut new_mu = vec![0.0; m_count];
        let mut new_lambdas = vec![vec![0.0; m_count]; t_count];
        for m in 0..m_count {
            let mut shared_importance = 0.0;
            for t in 0..t_count {
                let th_tm = best_theta.mu()[m] + best_theta.lambdas()[t][m];
                if th_tm <= 0.0 {
                    continue;
                }
                let q_tm = q[crate::structure::task_index(m_count, t_count, m, t)];
                let component = 2.0 * th_tm * th_tm * q_tm;
                let mu_share = best_theta.mu()[m] / th_tm;
                shared_importance += component * mu_share;
                new_lambdas[t][m] = (component * (1.0 - mu_share)).cbrt();
            }
            new_mu[m] = shared_importance.cbrt();
        }
        normalize(&mut new_mu, &mut new_lambdas);
        let candidate = ThetaParams::new(new_mu, new_lambdas)?;
        let sols = state.solve_all_svms(&candidate)?;
        let wrapped: Vec<Option<SvmSolution>> = sols.iter().cloned().map(Some).collect();
        let obj = state.objective(&candidate, None, &wrapped, false)?;
        if obj < best_obj - 1e-12 * best_obj.abs().max(1.0) {
            best_obj = obj;
            best_theta = candidate;
            best_sols = sols;
            trace.push(TraceEntry {
                outer,
                block: BlockTag::Svm,
                objective: obj,
            });
        } else {
            break;
        }
    }
    theta = best_theta;

    let tasks = data
        .tasks()
        .iter()
        .zip(best_sols)
        .map(|(task, solution)| TaskModel {
            id: task.id.clone(),
            kind: task.kind,
            features: task.features.clone(),
            targets: task.targets.clone(),
            solution,
        })
        .collect();
    Ok(TrainedModel {
        method,
        theta,
        tasks,
        neighborhood: None,
        specs: bank.specs().to_vec(),
        kernel_options: bank.options(),
        standardization: None,
        trace,
        hp: opts.hp,
        svr_epsilon: opts.svr_epsilon,
    })
}

/// Independent single-task learning: each task runs the joint-weights
/// update on its own, with no sharing; the learned weights land in that
/// task's own weight vector.
fn train_itl(
    bank: &Arc<KernelBank>,
    data: &MultiTaskDataset,
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    let m_count = bank.bases();
    let t_count = bank.tasks();
    let mut mu = vec![0.0; m_count];
    let mut lambdas = Vec::with_capacity(t_count);
    let mut tasks = Vec::with_capacity(t_count);
    let mut total = 0.0;
    for t in 0..t_count {
        let sub_bank = bank_for_task(bank, t);
        let sub_data = MultiTaskDataset::new(vec![data.tasks()[t].clone()])?;
        let sub = train_mtmkl(&sub_bank, &sub_data, opts, Method::MtMkl)?;
        let combined: Vec<f64> = sub
            .theta
            .mu()
            .iter()
            .zip(&sub.theta.lambdas()[0])
            .map(|(a, b)| a + b)
            .collect();
        lambdas.push(combined);
        total += sub.trace.last().map_or(0.0, |e| e.objective);
        tasks.push(sub.tasks.into_iter().next().expect("one task"));
    }
    // ITL keeps no shared component.
    for v in mu.iter_mut() {
        *v = 0.0;
    }
    Ok(TrainedModel {
        method: Method::Itl,
        theta: ThetaParams::new(mu, lambdas)?,
        tasks,
        neighborhood: None,
        specs: bank.specs().to_vec(),
        kernel_options: bank.options(),
        standardization: None,
        trace: vec![TraceEntry {
            outer: 1,
            block: BlockTag::Svm,
            objective: total,
        }],
        hp: opts.hp,
        svr_epsilon: opts.svr_epsilon,
    })
}

fn bank_for_task(bank: &Arc<KernelBank>, task: usize) -> Arc<KernelBank> {
    Arc::new(bank.subset(&[task]))
}

impl TrainedModel {
    fn transformed(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardization {
            Some((mean, std)) => x
                .iter()
                .enumerate()
                .map(|(j, v)| (v - mean[j]) / std[j])
                .collect(),
            None => x.to_vec(),
        }
    }

    /// Combined-kernel row of a query point against a task's training set,
    /// with the same cosine normalization the bank applied at build time.
    pub fn kernel_row(&self, task: usize, x_raw: &[f64]) -> Result<Vec<f64>> {
        let tm = &self.tasks[task];
        if x_raw.len() != tm.features.cols() {
            return Err(Error::DimensionMismatch {
                expected: tm.features.cols(),
                got: x_raw.len(),
            });
        }
        let x = self.transformed(x_raw);
        let th = self.theta.per_task(task);
        let n = tm.features.rows();
        let mut row = vec![0.0; n];
        for (m, spec) in self.specs.iter().enumerate() {
            if th[m] == 0.0 {
                continue;
            }
            let kxx = evaluate_kernel(*spec, self.kernel_options, &x, &x)?;
            if !(kxx > 0.0) {
                return Err(Error::DegenerateDiagonal {
                    index: 0,
                    value: kxx,
                });
            }
            for i in 0..n {
                let xi = tm.features.row(i);
                let kxi = evaluate_kernel(*spec, self.kernel_options, xi, &x)?;
                let kii = evaluate_kernel(*spec, self.kernel_options, xi, xi)?;
                if !(kii > 0.0) {
                    return Err(Error::DegenerateDiagonal {
                        index: i,
                        value: kii,
                    });
                }
                row[i] += th[m] * kxi / (kii * kxx).sqrt();
            }
        }
        Ok(row)
    }

    /// Decision value for one query point.
    pub fn decision(&self, task: usize, x_raw: &[f64]) -> Result<f64> {
        let row = self.kernel_row(task, x_raw)?;
        self.tasks[task].solution.score(&row)
    }

    /// Prediction: class label or regression value.
    pub fn predict(&self, task: usize, x_raw: &[f64]) -> Result<f64> {
        let score = self.decision(task, x_raw)?;
        Ok(match self.tasks[task].kind {
            TaskKind::Classification => predict_label(score),
            TaskKind::Regression => score,
        })
    }

    /// Rebuilds the training bank from the stored features.
    pub fn rebuild_bank(&self) -> Result<Arc<KernelBank>> {
        let tasks = self
            .tasks
            .iter()
            .map(|tm| {
                TaskData::new(
                    tm.id.clone(),
                    tm.features.clone(),
                    tm.targets.clone(),
                    tm.kind,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let data = MultiTaskDataset::new(tasks)?;
        build_bank(&data, &self.specs, self.kernel_options)
    }
}

/// Per-task and mean metrics on a held-out split: accuracy for
/// classification, MSE for regression.
pub fn evaluate(model: &TrainedModel, test: &MultiTaskDataset) -> Result<Metrics> {
    if test.tasks().len() != model.tasks.len() {
        return Err(Error::DimensionMismatch {
            expected: model.tasks.len(),
            got: test.tasks().len(),
        });
    }
    let kind = test.uniform_kind()?;
    let mut per_task = Vec::with_capacity(test.tasks().len());
    for (t, task) in test.tasks().iter().enumerate() {
        if task.is_empty() {
            return Err(Error::Empty("test split"));
        }
        let mut metric = 0.0;
        for i in 0..task.len() {
            let pred = model.predict(t, task.features.row(i))?;
            match kind {
                TaskKind::Classification => {
                    if pred == task.targets[i] {
                        metric += 1.0;
                    }
                }
                TaskKind::Regression => {
                    let d = pred - task.targets[i];
                    metric += d * d;
                }
            }
        }
        per_task.push(metric / task.len() as f64);
    }
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(Metrics {
        kind,
        per_task,
        mean,
    })
}

/// Pairwise Frobenius alignment between each task's combined kernel and
/// each neighborhood matrix; `None` marks size-mismatched pairs.
pub fn alignment_report(model: &TrainedModel) -> Result<Vec<Vec<Option<f64>>>> {
    let neighborhood = model
        .neighborhood
        .as_ref()
        .ok_or_else(|| Error::Invalid("model has no neighborhood matrices".into()))?;
    let bank = model.rebuild_bank()?;
    let t_count = model.tasks.len();
    let mut combined = Vec::with_capacity(t_count);
    for s in 0..t_count {
        combined.push(combined_kernel(&bank, &model.theta, s)?);
    }
    let mut out = vec![vec![None; t_count]; t_count];
    for (s, row) in out.iter_mut().enumerate() {
        for (t, cell) in row.iter_mut().enumerate() {
            let k_s = &combined[s];
            let khat_t = neighborhood.matrix(t);
            if k_s.rows() == khat_t.rows() {
                *cell = Some(alignment(k_s, khat_t)?);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Model persistence.
//
// Single-file little-endian binary layout, in order:
//   magic "MTOMDL\x01\x00" (8 bytes), method u8,
//   T u64, M u64, p u64, gaussian-form u8,
//   specs: M x (tag u8, degree u32, param f64),
//   theta: mu M f64, lambdas T*M f64 (task-major),
//   standardization flag u8 (0/1), then mean p f64, std p f64 when 1,
//   svr_epsilon f64, hp (c, eta, beta, theta_tol f64, outer_cap u64),
//   neighborhood flag u8: 0 none / 1 coefficients T*M f64 / 2 matrices,
//     (flag 2: per task n_t u64 then n_t^2 f64 row-major),
//   tasks: per task id (len u64 + utf8), kind u8, n u64,
//     features n*p f64 row-major, targets n f64,
//     has_star u8, alpha n f64, alpha_star n f64 when present,
//     coefficients n f64, bias f64, objective f64, kkt f64, iters u64,
//   trace: count u64 x (outer u64, block u8, objective f64).
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 8] = b"MTOMDL\x01\x00";

struct Writer<W: Write> {
    w: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.w.write_all(&[v])?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.w.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b)?;
        Ok(())
    }
}

struct Reader<R: Read> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.r.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.r.read_exact(&mut b)?;
        Ok(b)
    }
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut w = Writer {
        w: BufWriter::new(std::fs::File::create(path)?),
    };
    w.bytes(MODEL_MAGIC)?;
    w.u8(model.method.code())?;
    let t_count = model.tasks.len();
    let m_count = model.specs.len();
    let p = model.tasks.first().map_or(0, |t| t.features.cols());
    w.u64(t_count as u64)?;
    w.u64(m_count as u64)?;
    w.u64(p as u64)?;
    w.u8(match model.kernel_options.gaussian_form {
        crate::kernels::GaussianForm::HalvedSquare => 0,
        crate::kernels::GaussianForm::Direct => 1,
    })?;
    for spec in &model.specs {
        match *spec {
            KernelSpec::Linear => {
                w.u8(0)?;
                w.u32(0)?;
                w.f64(0.0)?;
            }
            KernelSpec::Polynomial { degree, offset } => {
                w.u8(1)?;
                w.u32(degree)?;
                w.f64(offset)?;
            }
            KernelSpec::Gaussian { spread } => {
                w.u8(2)?;
                w.u32(0)?;
                w.f64(spread)?;
            }
        }
    }
    w.f64s(model.theta.mu())?;
    for l in model.theta.lambdas() {
        w.f64s(l)?;
    }
    match &model.standardization {
        Some((mean, std)) => {
            w.u8(1)?;
            w.f64s(mean)?;
            w.f64s(std)?;
        }
        None => w.u8(0)?,
    }
    w.f64(model.svr_epsilon)?;
    w.f64(model.hp.c)?;
    w.f64(model.hp.eta)?;
    w.f64(model.hp.beta)?;
    w.f64(model.hp.theta_tolerance)?;
    w.u64(model.hp.outer_cap as u64)?;
    match &model.neighborhood {
        None => w.u8(0)?,
        Some(nb) => match nb.coefficients() {
            Some(coefs) => {
                w.u8(1)?;
                for c in coefs {
                    w.f64s(c)?;
                }
            }
            None => {
                w.u8(2)?;
                for m in nb.matrices() {
                    w.u64(m.rows() as u64)?;
                    w.f64s(m.data())?;
                }
            }
        },
    }
    for task in &model.tasks {
        let id = task.id.as_bytes();
        w.u64(id.len() as u64)?;
        w.bytes(id)?;
        w.u8(match task.kind {
            TaskKind::Classification => 0,
            TaskKind::Regression => 1,
        })?;
        w.u64(task.features.rows() as u64)?;
        w.f64s(task.features.data())?;
        w.f64s(&task.targets)?;
        let sol = &task.solution;
        w.u8(u8::from(sol.alpha_star.is_some()))?;
        w.f64s(&sol.alpha)?;
        if let Some(star) = &sol.alpha_star {
            w.f64s(star)?;
        }
        w.f64s(&sol.coefficients)?;
        w.f64(sol.bias)?;
        w.f64(sol.objective)?;
        w.f64(sol.kkt_violation)?;
        w.u64(sol.iterations as u64)?;
    }
    w.u64(model.trace.len() as u64)?;
    for e in &model.trace {
        w.u64(e.outer as u64)?;
        w.u8(e.block.code())?;
        w.f64(e.objective)?;
    }
    w.w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let mut r = Reader {
        r: BufReader::new(std::fs::File::open(path)?),
    };
    let magic = r.bytes(8)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad model magic".into()));
    }
    let method = Method::from_code(r.u8()?)?;
    let t_count = r.u64()? as usize;
    let m_count = r.u64()? as usize;
    let p = r.u64()? as usize;
    let gaussian_form = match r.u8()? {
        0 => crate::kernels::GaussianForm::HalvedSquare,
        1 => crate::kernels::GaussianForm::Direct,
        x => return Err(Error::ModelFormat(format!("bad gaussian form {x}"))),
    };
    let mut specs = Vec::with_capacity(m_count);
    for _ in 0..m_count {
        let tag = r.u8()?;
        let degree = r.u32()?;
        let param = r.f64()?;
        specs.push(match tag {
            0 => KernelSpec::Linear,
            1 => KernelSpec::Polynomial {
                degree,
                offset: param,
            },
            2 => KernelSpec::Gaussian { spread: param },
            x => return Err(Error::ModelFormat(format!("bad kernel tag {x}"))),
        });
    }
    let mu = r.f64s(m_count)?;
    let mut lambdas = Vec::with_capacity(t_count);
    for _ in 0..t_count {
        lambdas.push(r.f64s(m_count)?);
    }
    let theta = ThetaParams::new(mu, lambdas)?;
    let standardization = match r.u8()? {
        0 => None,
        1 => {
            let mean = r.f64s(p)?;
            let std = r.f64s(p)?;
            Some((mean, std))
        }
        x => return Err(Error::ModelFormat(format!("bad standardization flag {x}"))),
    };
    let svr_epsilon = r.f64()?;
    let hp = HyperParams {
        c: r.f64()?,
        eta: r.f64()?,
        beta: r.f64()?,
        theta_tolerance: r.f64()?,
        outer_cap: r.u64()? as usize,
    };
    let neighborhood_flag = r.u8()?;
    let mut neighborhood_coefs: Option<Vec<Vec<f64>>> = None;
    let mut neighborhood_mats: Option<Vec<DenseMatrix>> = None;
    match neighborhood_flag {
        0 => {}
        1 => {
            let mut coefs = Vec::with_capacity(t_count);
            for _ in 0..t_count {
                coefs.push(r.f64s(m_count)?);
            }
            neighborhood_coefs = Some(coefs);
        }
        2 => {
            let mut mats = Vec::with_capacity(t_count);
            for _ in 0..t_count {
                let n = r.u64()? as usize;
                mats.push(DenseMatrix::from_vec(n, n, r.f64s(n * n)?)?);
            }
            neighborhood_mats = Some(mats);
        }
        x => return Err(Error::ModelFormat(format!("bad neighborhood flag {x}"))),
    }
    let mut tasks = Vec::with_capacity(t_count);
    for _ in 0..t_count {
        let id_len = r.u64()? as usize;
        let id = String::from_utf8(r.bytes(id_len)?)
            .map_err(|_| Error::ModelFormat("task id is not utf-8".into()))?;
        let kind = match r.u8()? {
            0 => TaskKind::Classification,
            1 => TaskKind::Regression,
            x => return Err(Error::ModelFormat(format!("bad task kind {x}"))),
        };
        let n = r.u64()? as usize;
        let features = DenseMatrix::from_vec(n, p, r.f64s(n * p)?)?;
        let targets = r.f64s(n)?;
        let has_star = r.u8()? == 1;
        let alpha = r.f64s(n)?;
        let alpha_star = if has_star { Some(r.f64s(n)?) } else { None };
        let coefficients = r.f64s(n)?;
        let bias = r.f64()?;
        let objective = r.f64()?;
        let kkt_violation = r.f64()?;
        let iterations = r.u64()? as usize;
        tasks.push(TaskModel {
            id,
            kind,
            features,
            targets,
            solution: SvmSolution {
                alpha,
                alpha_star,
                coefficients,
                bias,
                objective,
                kkt_violation,
                iterations,
            },
        });
    }
    let trace_len = r.u64()? as usize;
    let mut trace = Vec::with_capacity(trace_len);
    for _ in 0..trace_len {
        let outer = r.u64()? as usize;
        let block = BlockTag::from_code(r.u8()?)?;
        let objective = r.f64()?;
        trace.push(TraceEntry {
            outer,
            block,
            objective,
        });
    }
    let mut model = TrainedModel {
        method,
        theta,
        tasks,
        neighborhood: None,
        specs,
        kernel_options: KernelOptions { gaussian_form },
        standardization,
        trace,
        hp,
        svr_epsilon,
    };
    // Neighborhood matrices from coefficients need the rebuilt bank.
    model.neighborhood = match (neighborhood_coefs, neighborhood_mats) {
        (Some(coefs), _) => {
            let bank = model.rebuild_bank()?;
            let mut mats = Vec::with_capacity(t_count);
            for (t, c) in coefs.iter().enumerate() {
                let n = bank.task_size(t);
                let mut k = DenseMatrix::zeros(n, n);
                for (m, &w) in c.iter().enumerate() {
                    k.add_scaled(w, bank.gram(t, m))?;
                }
                mats.push(k);
            }
            Some(NeighborhoodSet::from_parts(mats, Some(coefs)))
        }
        (None, Some(mats)) => Some(NeighborhoodSet::from_matrices(mats)?),
        (None, None) => None,
    };
    Ok(model)
}

impl NeighborhoodSet {
    pub(crate) fn from_parts(
        matrices: Vec<DenseMatrix>,
        coefficients: Option<Vec<Vec<f64>>>,
    ) -> Self {
        // Internal constructor for reload paths; symmetry was checked when
        // the set was first built.
        NeighborhoodSet::assemble(matrices, coefficients)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_related_tasks;
    use crate::kernels::default_specs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_options() -> TrainOptions {
        TrainOptions {
            hp: HyperParams {
                c: 1.0,
                eta: 8.0,
                beta: 1.0,
                theta_tolerance: 1e-8,
                outer_cap: 15,
            },
            svm_tolerance: 1e-6,
            ..TrainOptions::default()
        }
    }

    fn class_bank(
        seed: u64,
        tasks: usize,
        n: usize,
    ) -> (Arc<KernelBank>, MultiTaskDataset) {
        let data =
            synth_related_tasks(seed, tasks, n, 4, 0.9, 0.2, TaskKind::Classification).unwrap();
        let bank =
            build_bank(&data, &default_specs(), KernelOptions::default()).unwrap();
        (bank, data)
    }

    #[test]
    fn degenerate_pipeline_matches_plain_svm() {
        // Single task, single kernel, weights fixed at one: the trained
        // model predicts exactly like the bare dual solver.
        let data =
            synth_related_tasks(3, 1, 12, 3, 1.0, 0.1, TaskKind::Classification).unwrap();
        let specs = vec![KernelSpec::Gaussian { spread: 2.0 }];
        let bank = build_bank(&data, &specs, KernelOptions::default()).unwrap();
        let opts = toy_options();
        let model = train_baseline(Method::AvMtMkl, &bank, &data, &opts).unwrap();
        // Uniform weights over one kernel = weight exactly one.
        assert_eq!(model.theta.per_task(0), vec![1.0]);

        let k = bank.gram(0, 0);
        let direct = solve_svc(k, &data.tasks()[0].targets, 1.0, 1e-6).unwrap();
        for i in 0..data.tasks()[0].len() {
            let x = data.tasks()[0].features.row(i);
            let row = model.kernel_row(0, x).unwrap();
            let via_model = model.tasks[0].solution.score(&row).unwrap();
            let via_direct = direct.score(k.row(i)).unwrap();
            assert!(
                (via_model - via_direct).abs() <= 1e-8,
                "{via_model} vs {via_direct}"
            );
        }
    }

    #[test]
    fn uniform_baseline_has_frozen_weights_and_single_trace_entry() {
        let (bank, data) = class_bank(5, 3, 14);
        let model = train_baseline(Method::AvMtMkl, &bank, &data, &toy_options()).unwrap();
        assert_eq!(model.trace.len(), 1);
        for t in 0..3 {
            let th = model.theta.per_task(t);
            for w in th {
                assert!((w - 0.1).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn kta_uses_label_outer_products() {
        let (bank, data) = class_bank(7, 2, 10);
        let model = train_baseline(Method::Kta, &bank, &data, &toy_options()).unwrap();
        let nb = model.neighborhood.as_ref().unwrap();
        // Hand trace of the rank-one target: b entry = 2 y'K y.
        let b = build_b(&bank, nb.matrices()).unwrap();
        for t in 0..2 {
            let y = &data.tasks()[t].targets;
            for m in 0..bank.bases() {
                let want = 2.0 * quadratic_form(bank.gram(t, m), y, y).unwrap();
                let got = b.as_slice()
                    [crate::structure::task_index(bank.bases(), 2, m, t)];
                assert!((want - got).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn kta_is_bcd_with_frozen_neighborhood() {
        let (bank, data) = class_bank(11, 2, 10);
        let opts = toy_options();
        let via_method = train_baseline(Method::Kta, &bank, &data, &opts).unwrap();
        let frozen = label_outer_products(&data).unwrap();
        let via_rule = run_bcd(
            &bank,
            &data,
            &opts,
            NeighborhoodRule::Frozen(frozen),
            Method::Kta,
        )
        .unwrap();
        assert_eq!(via_method.theta, via_rule.theta);
        for (a, b) in via_method.tasks.iter().zip(&via_rule.tasks) {
            assert_eq!(a.solution.alpha, b.solution.alpha);
            assert_eq!(a.solution.bias, b.solution.bias);
        }
    }

    #[test]
    fn itl_with_one_task_matches_mtmkl() {
        let data =
            synth_related_tasks(13, 1, 16, 3, 0.5, 0.2, TaskKind::Classification).unwrap();
        let bank =
            build_bank(&data, &default_specs(), KernelOptions::default()).unwrap();
        let opts = toy_options();
        let itl = train_baseline(Method::Itl, &bank, &data, &opts).unwrap();
        let mtmkl = train_baseline(Method::MtMkl, &bank, &data, &opts).unwrap();
        // Same effective weights (ITL folds everything into the task slot).
        let a = itl.theta.per_task(0);
        let b = mtmkl.theta.per_task(0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert_eq!(
            itl.tasks[0].solution.alpha,
            mtmkl.tasks[0].solution.alpha
        );
    }

    #[test]
    fn mtonmkl_trace_is_recorded_and_bounded() {
        let (bank, data) = class_bank(17, 3, 12);
        let model = train_mtonmkl(&bank, &data, &toy_options()).unwrap();
        assert!(model.trace.len() >= 4);
        assert!(model.trace.iter().all(|e| e.objective.is_finite()));
        let outer_max = model.trace.iter().map(|e| e.outer).max().unwrap();
        assert!(outer_max <= 15);
        assert!(model.neighborhood.is_some());
    }

    #[test]
    fn evaluate_perfect_toy_and_constant_regression() {
        let (bank, data) = class_bank(19, 2, 20);
        let model = train_mtonmkl(&bank, &data, &toy_options()).unwrap();
        // Evaluating on the training split of a separable toy: not asserted
        // perfect, but must be well-formed; perfect case below.
        let m = evaluate(&model, &data).unwrap();
        assert!(m.per_task.iter().all(|a| (0.0..=1.0).contains(a)));

        // Constant-prediction regression vs constant targets: MSE zero.
        let reg = synth_related_tasks(23, 1, 10, 2, 1.0, 0.0, TaskKind::Regression).unwrap();
        let flat = MultiTaskDataset::new(vec![TaskData::new(
            "flat".into(),
            reg.tasks()[0].features.clone(),
            vec![1.5; 10],
            TaskKind::Regression,
        )
        .unwrap()])
        .unwrap();
        let bank_r =
            build_bank(&flat, &default_specs(), KernelOptions::default()).unwrap();
        let model_r =
            train_baseline(Method::AvMtMkl, &bank_r, &flat, &toy_options()).unwrap();
        let m_r = evaluate(&model_r, &flat).unwrap();
        assert!(m_r.mean <= 0.011, "tube-width slack only, got {}", m_r.mean);
    }

    #[test]
    fn random_labels_score_near_chance() {
        let mut accs = Vec::new();
        for seed in 0..4u64 {
            let (bank, data) = class_bank(31 + seed, 1, 20);
            let model =
                train_baseline(Method::AvMtMkl, &bank, &data, &toy_options()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let n_test = 400;
            let mut rows = Vec::with_capacity(n_test);
            let mut targets = Vec::with_capacity(n_test);
            for _ in 0..n_test {
                rows.push((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
                targets.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
            }
            let test = MultiTaskDataset::new(vec![TaskData::new(
                "rand".into(),
                DenseMatrix::from_rows(&rows).unwrap(),
                targets,
                TaskKind::Classification,
            )
            .unwrap()])
            .unwrap();
            accs.push(evaluate(&model, &test).unwrap().mean);
        }
        let mean_acc = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!(
            (mean_acc - 0.5).abs() <= 0.1,
            "chance-level check failed: {mean_acc}"
        );
    }

    #[test]
    fn alignment_report_shape_and_self_alignment() {
        let (bank, data) = class_bank(37, 3, 10);
        let mut model = train_mtonmkl(&bank, &data, &toy_options()).unwrap();
        let report = alignment_report(&model).unwrap();
        assert_eq!(report.len(), 3);
        for row in &report {
            for cell in row {
                let v = cell.expect("equal sizes here");
                assert!((-1.0..=1.0).contains(&v));
            }
        }
        // Setting each neighborhood to the task's own combined kernel makes
        // the diagonal exactly one.
        let rebuilt = model.rebuild_bank().unwrap();
        let mats: Vec<DenseMatrix> = (0..3)
            .map(|t| combined_kernel(&rebuilt, &model.theta, t).unwrap())
            .collect();
        model.neighborhood = Some(NeighborhoodSet::from_matrices(mats).unwrap());
        let self_report = alignment_report(&model).unwrap();
        for (t, row) in self_report.iter().enumerate() {
            assert!((row[t].unwrap() - 1.0).abs() <= 1e-12);
        }
        // A model with no neighborhood refuses the report.
        let plain = train_baseline(Method::AvMtMkl, &bank, &data, &toy_options()).unwrap();
        assert!(alignment_report(&plain).is_err());
    }

    #[test]
    fn model_roundtrips_through_file() {
        let (bank, data) = class_bank(41, 2, 10);
        let model = train_mtonmkl(&bank, &data, &toy_options()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.method, model.method);
        assert_eq!(loaded.theta, model.theta);
        assert_eq!(loaded.trace.len(), model.trace.len());
        // Predictions are identical after reload.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..2 {
            for _ in 0..5 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert_eq!(
                    model.decision(t, &x).unwrap(),
                    loaded.decision(t, &x).unwrap()
                );
            }
        }
        let a = alignment_report(&model).unwrap();
        let b = alignment_report(&loaded).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            for (ca, cb) in ra.iter().zip(rb) {
                assert!((ca.unwrap() - cb.unwrap()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_class_task_is_rejected() {
        let good =
            synth_related_tasks(43, 2, 10, 3, 0.8, 0.1, TaskKind::Classification).unwrap();
        let mut tasks = good.tasks().to_vec();
        tasks[1] = TaskData::new(
            "allpos".into(),
            tasks[1].features.clone(),
            vec![1.0; tasks[1].len()],
            TaskKind::Classification,
        )
        .unwrap();
        let data = MultiTaskDataset::new(tasks).unwrap();
        let bank =
            build_bank(&data, &default_specs(), KernelOptions::default()).unwrap();
        match train_mtonmkl(&bank, &data, &toy_options()) {
            Err(Error::SingleClass(t)) => assert_eq!(t, 1),
            other => panic!("expected single-class error, got {other:?}"),
        }
    }

    #[test]
    fn regression_pipeline_trains_and_predicts() {
        let data = synth_related_tasks(47, 2, 18, 3, 0.9, 0.1, TaskKind::Regression).unwrap();
        let bank =
            build_bank(&data, &default_specs(), KernelOptions::default()).unwrap();
        let model = train_mtonmkl(&bank, &data, &toy_options()).unwrap();
        let m = evaluate(&model, &data).unwrap();
        assert!(m.mean.is_finite());
        assert_eq!(m.kind, TaskKind::Regression);
    }
}
