//! Dataset ingestion, the train/validation/test split protocol, and a
//! synthetic related-tasks generator for desk-scale experiments.
//!
//! Tasks arrive as one CSV per task (first column target, remaining columns
//! features) listed in a plain-text manifest, one relative path per line,
//! `#` for comments. Classification is detected when every target is in
//! {-1, 0, +1}; 0/1 targets are remapped to -1/+1.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

/// One task: features (rows are samples) and targets.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub id: String,
    pub features: DenseMatrix,
    pub targets: Vec<f64>,
    pub kind: TaskKind,
}

impl TaskData {
    pub fn new(
        id: String,
        features: DenseMatrix,
        targets: Vec<f64>,
        kind: TaskKind,
    ) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: features.rows(),
                got: targets.len(),
            });
        }
        features.validate_finite("features")?;
        if !targets.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("targets"));
        }
        if kind == TaskKind::Classification && !targets.iter().all(|&y| y == 1.0 || y == -1.0) {
            return Err(Error::Invalid(format!(
                "classification targets for task {id} must be -1/+1"
            )));
        }
        Ok(TaskData {
            id,
            features,
            targets,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> TaskData {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.features.row(i).to_vec()).collect();
        TaskData {
            id: self.id.clone(),
            features: DenseMatrix::from_rows(&rows).expect("nonempty subset"),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiTaskDataset {
    tasks: Vec<TaskData>,
}

impl MultiTaskDataset {
    pub fn new(tasks: Vec<TaskData>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Empty("tasks"));
        }
        let p = tasks[0].features.cols();
        for (t, task) in tasks.iter().enumerate() {
            if task.features.cols() != p {
                return Err(Error::TaskTooSmall {
                    task: t,
                    detail: format!(
                        "feature dimension {} differs from {}",
                        task.features.cols(),
                        p
                    ),
                });
            }
        }
        Ok(MultiTaskDataset { tasks })
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    pub fn feature_dim(&self) -> usize {
        self.tasks[0].features.cols()
    }

    /// All tasks share one kind, or the dataset is rejected by the trainer.
    pub fn uniform_kind(&self) -> Result<TaskKind> {
        let kind = self.tasks[0].kind;
        if self.tasks.iter().all(|t| t.kind == kind) {
            Ok(kind)
        } else {
            Err(Error::Invalid(
                "tasks mix classification and regression".into(),
            ))
        }
    }

    /// Per-feature mean and standard deviation over all tasks' rows.
    pub fn feature_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.feature_dim();
        let mut mean = vec![0.0; p];
        let mut count = 0usize;
        for task in &self.tasks {
            for i in 0..task.features.rows() {
                for (j, m) in mean.iter_mut().enumerate() {
                    *m += task.features.at(i, j);
                }
            }
            count += task.features.rows();
        }
        for m in mean.iter_mut() {
            *m /= count as f64;
        }
        let mut var = vec![0.0; p];
        for task in &self.tasks {
            for i in 0..task.features.rows() {
                for (j, v) in var.iter_mut().enumerate() {
                    let d = task.features.at(i, j) - mean[j];
                    *v += d * d;
                }
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        (mean, std)
    }

    /// Applies a per-feature affine transform `(x - mean) / std`.
    pub fn standardized(&self, mean: &[f64], std: &[f64]) -> Result<MultiTaskDataset> {
        let p = self.feature_dim();
        if mean.len() != p || std.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: mean.len(),
            });
        }
        let tasks = self
            .tasks
            .iter()
            .map(|task| {
                let mut rows = Vec::with_capacity(task.features.rows());
                for i in 0..task.features.rows() {
                    rows.push(
                        task.features
                            .row(i)
                            .iter()
                            .enumerate()
                            .map(|(j, x)| (x - mean[j]) / std[j])
                            .collect::<Vec<f64>>(),
                    );
                }
                TaskData {
                    id: task.id.clone(),
                    features: DenseMatrix::from_rows(&rows).expect("same shape"),
                    targets: task.targets.clone(),
                    kind: task.kind,
                }
            })
            .collect();
        MultiTaskDataset::new(tasks)
    }
}

/// Fractions for the per-task split; defaults follow the small-training
/// protocol: 20% train, 40% validation, 40% test.
#[derive(Debug, Clone, Copy)]
pub struct SplitPlan {
    pub seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            seed: 0,
            train_fraction: 0.2,
            validation_fraction: 0.4,
            test_fraction: 0.4,
            stratified: true,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let fr = [
            self.train_fraction,
            self.validation_fraction,
            self.test_fraction,
        ];
        if fr.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Invalid("split fractions must be positive".into()));
        }
        let sum: f64 = fr.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("split fractions sum to {sum}")));
        }
        Ok(())
    }
}

/// Parses one CSV file into (features, targets, kind).
fn parse_csv(path: &Path) -> Result<(DenseMatrix, Vec<f64>, TaskKind)> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        let mut parsed = Vec::with_capacity(cells.len());
        let mut ok = true;
        for (col, cell) in cells.iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                _ => {
                    // A non-numeric first row is an optional header.
                    if lineno == 0 && rows.is_empty() {
                        ok = false;
                        break;
                    }
                    return Err(Error::Parse {
                        path: display,
                        line: lineno + 1,
                        msg: format!("non-numeric cell in column {}", col + 1),
                    });
                }
            }
        }
        if !ok {
            continue;
        }
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Parse {
                    path: display,
                    line: lineno + 1,
                    msg: format!("ragged row: {} cells, expected {w}", parsed.len()),
                });
            }
            _ => {}
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv rows"));
    }
    if rows[0].len() < 2 {
        return Err(Error::Parse {
            path: display,
            line: 1,
            msg: "need a target column plus at least one feature".into(),
        });
    }
    let mut targets: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let feats: Vec<Vec<f64>> = rows.into_iter().map(|r| r[1..].to_vec()).collect();
    let classification = targets.iter().all(|&y| y == -1.0 || y == 0.0 || y == 1.0);
    let kind = if classification {
        for y in targets.iter_mut() {
            *y = if *y == 1.0 { 1.0 } else { -1.0 };
        }
        TaskKind::Classification
    } else {
        TaskKind::Regression
    };
    Ok((DenseMatrix::from_rows(&feats)?, targets, kind))
}

/// Loads a manifest of per-task CSV paths.
pub fn load_manifest(manifest: &Path) -> Result<MultiTaskDataset> {
    let text = std::fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut tasks = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let path: PathBuf = base.join(trimmed);
        let (features, targets, kind) = parse_csv(&path)?;
        let id = Path::new(trimmed)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| trimmed.to_string());
        tasks.push(TaskData::new(id, features, targets, kind)?);
    }
    MultiTaskDataset::new(tasks)
}

/// Writes a dataset back out as per-task CSVs plus a manifest.
pub fn write_dataset(data: &MultiTaskDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.txt");
    let mut manifest = std::fs::File::create(&manifest_path)?;
    writeln!(manifest, "# one CSV per task; first column is the target")?;
    for task in data.tasks() {
        let file = format!("{}.csv", task.id);
        writeln!(manifest, "{file}")?;
        let mut f = std::fs::File::create(dir.join(&file))?;
        for i in 0..task.len() {
            let mut line = format!("{}", task.targets[i]);
            for v in task.features.row(i) {
                line.push(',');
                line.push_str(&format!("{v}"));
            }
            writeln!(f, "{line}")?;
        }
    }
    Ok(manifest_path)
}

fn rounded_counts(n: usize, plan: &SplitPlan) -> (usize, usize, usize) {
    let n_train = (plan.train_fraction * n as f64).round() as usize;
    let n_val = (plan.validation_fraction * n as f64).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    (n_train, n_val, n - n_train - n_val)
}

/// Splits each task into disjoint train/validation/test parts,
/// deterministically for a fixed seed.
pub fn split(
    data: &MultiTaskDataset,
    plan: &SplitPlan,
) -> Result<(MultiTaskDataset, MultiTaskDataset, MultiTaskDataset)> {
    plan.validate()?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (t, task) in data.tasks().iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(t as u64 + 1);
        let (i_tr, i_va, i_te) = if plan.stratified && task.kind == TaskKind::Classification {
            split_stratified(task, plan, t, &mut rng)?
        } else {
            let mut idx: Vec<usize> = (0..task.len()).collect();
            idx.shuffle(&mut rng);
            let (a, b, _) = rounded_counts(task.len(), plan);
            (
                idx[..a].to_vec(),
                idx[a..a + b].to_vec(),
                idx[a + b..].to_vec(),
            )
        };
        if i_tr.is_empty() || i_va.is_empty() || i_te.is_empty() {
            return Err(Error::TaskTooSmall {
                task: t,
                detail: "split produced an empty part".into(),
            });
        }
        train.push(task.subset(&i_tr));
        val.push(task.subset(&i_va));
        test.push(task.subset(&i_te));
    }
    Ok((
        MultiTaskDataset::new(train)?,
        MultiTaskDataset::new(val)?,
        MultiTaskDataset::new(test)?,
    ))
}

fn split_stratified(
    task: &TaskData,
    plan: &SplitPlan,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &y) in task.targets.iter().enumerate() {
        by_class.entry(y as i64).or_default().push(i);
    }
    for (cls, members) in &by_class {
        let min_needed = 5;
        if members.len() < min_needed {
            return Err(Error::TaskTooSmall {
                task: t,
                detail: format!("class {cls} has {} samples (< {min_needed})", members.len()),
            });
        }
    }
    let mut i_tr = Vec::new();
    let mut i_va = Vec::new();
    let mut i_te = Vec::new();
    for members in by_class.values() {
        let mut idx = members.clone();
        idx.shuffle(rng);
        let (a, b, _) = rounded_counts(idx.len(), plan);
        i_tr.extend_from_slice(&idx[..a]);
        i_va.extend_from_slice(&idx[a..a + b]);
        i_te.extend_from_slice(&idx[a + b..]);
    }
    i_tr.sort_unstable();
    i_va.sort_unstable();
    i_te.sort_unstable();
    Ok((i_tr, i_va, i_te))
}

/// Draws related linear tasks: a shared weight vector plus per-task
/// perturbations, standard-normal features, and sign or real-valued targets.
pub fn synth_related_tasks(
    seed: u64,
    tasks: usize,
    n_per_task: usize,
    dim: usize,
    relatedness: f64,
    noise: f64,
    kind: TaskKind,
) -> Result<MultiTaskDataset> {
    if tasks == 0 || n_per_task == 0 || dim == 0 {
        return Err(Error::Empty("synthetic dataset shape"));
    }
    if !(0.0..=1.0).contains(&relatedness) {
        return Err(Error::Invalid("relatedness must be in [0, 1]".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let mut out = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let mut trng = ChaCha8Rng::seed_from_u64(seed);
        trng.set_stream(1000 + t as u64);
        let u: Vec<f64> = (0..dim).map(|_| normal.sample(&mut trng)).collect();
        let w: Vec<f64> = w0
            .iter()
            .zip(&u)
            .map(|(a, b)| relatedness * a + (1.0 - relatedness) * b)
            .collect();
        let mut rows = Vec::with_capacity(n_per_task);
        let mut targets = Vec::with_capacity(n_per_task);
        for _ in 0..n_per_task {
            let x: Vec<f64> = (0..dim).map(|_| normal.sample(&mut trng)).collect();
            let clean: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let eps: f64 = normal.sample(&mut trng);
            match kind {
                TaskKind::Classification => {
                    let score = clean + noise * eps;
                    targets.push(if score >= 0.0 { 1.0 } else { -1.0 });
                }
                TaskKind::Regression => targets.push(clean + noise * eps),
            }
            rows.push(x);
        }
        out.push(TaskData::new(
            format!("task{t}"),
            DenseMatrix::from_rows(&rows)?,
            targets,
            kind,
        )?);
    }
    MultiTaskDataset::new(out)
}
