//! Base kernel functions, Gram-matrix banks, cosine normalization, and the
//! Frobenius alignment score.
//!
//! The default bank is one linear kernel, one inhomogeneous quadratic
//! kernel, and eight gaussians with spreads 2, 4, ..., 256. Every Gram
//! matrix is cosine-normalized once at construction, so the whole pipeline
//! downstream sees unit-diagonal matrices.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::MultiTaskDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};

/// One base kernel function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    Polynomial { degree: u32, offset: f64 },
    Gaussian { spread: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 {
                    Err(Error::Invalid("polynomial degree must be >= 1".into()))
                } else if !offset.is_finite() {
                    Err(Error::NonFinite("polynomial offset"))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Gaussian { spread } => {
                if spread > 0.0 && spread.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Invalid("gaussian spread must be positive".into()))
                }
            }
        }
    }
}

/// How the gaussian spread enters the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaussianForm {
    /// `exp(-||x-y||^2 / (2 * spread^2))`
    #[default]
    HalvedSquare,
    /// `exp(-||x-y||^2 / spread)`
    Direct,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KernelOptions {
    pub gaussian_form: GaussianForm,
}

/// The default ten-kernel bank: linear, quadratic, gaussians 2^1 .. 2^8.
pub fn default_specs() -> Vec<KernelSpec> {
    let mut specs = vec![
        KernelSpec::Linear,
        KernelSpec::Polynomial {
            degree: 2,
            offset: 1.0,
        },
    ];
    for k in 1..=8 {
        specs.push(KernelSpec::Gaussian {
            spread: f64::from(1u32 << k),
        });
    }
    specs
}

pub fn evaluate_kernel(
    spec: KernelSpec,
    opts: KernelOptions,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let v = match spec {
        KernelSpec::Linear => dot(x, y),
        KernelSpec::Polynomial { degree, offset } => (offset + dot(x, y)).powi(degree as i32),
        KernelSpec::Gaussian { spread } => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            match opts.gaussian_form {
                GaussianForm::HalvedSquare => (-d2 / (2.0 * spread * spread)).exp(),
                GaussianForm::Direct => (-d2 / spread).exp(),
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("kernel value"))
    }
}

/// Cosine normalization: `K_ij / sqrt(K_ii * K_jj)`.
pub fn normalize_gram(k: &DenseMatrix) -> Result<DenseMatrix> {
    let n = k.rows();
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let d = k.at(i, i);
        if !(d > 0.0) {
            return Err(Error::DegenerateDiagonal { index: i, value: d });
        }
        inv_sqrt.push(1.0 / d.sqrt());
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, k.at(i, j) * inv_sqrt[i] * inv_sqrt[j]);
        }
    }
    Ok(out)
}

/// Per-task, per-base-kernel normalized Gram matrices.
#[derive(Debug, Clone)]
pub struct KernelBank {
    specs: Vec<KernelSpec>,
    options: KernelOptions,
    grams: Vec<Vec<DenseMatrix>>, // [task][base]
}

impl KernelBank {
    pub fn tasks(&self) -> usize {
        self.grams.len()
    }

    pub fn bases(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[KernelSpec] {
        &self.specs
    }

    pub fn options(&self) -> KernelOptions {
        self.options
    }

    pub fn gram(&self, task: usize, base: usize) -> &DenseMatrix {
        &self.grams[task][base]
    }

    pub fn task_size(&self, task: usize) -> usize {
        self.grams[task][0].rows()
    }

    pub fn task_sizes(&self) -> Vec<usize> {
        (0..self.tasks()).map(|t| self.task_size(t)).collect()
    }

    pub(crate) fn from_parts(
        specs: Vec<KernelSpec>,
        options: KernelOptions,
        grams: Vec<Vec<DenseMatrix>>,
    ) -> KernelBank {
        KernelBank {
            specs,
            options,
            grams,
        }
    }

    /// Bank restricted to a subset of tasks, sharing the same specs.
    pub fn subset(&self, tasks: &[usize]) -> KernelBank {
        let grams = tasks
            .iter()
            .map(|&t| self.grams[t].clone())
            .collect();
        KernelBank::from_parts(self.specs.clone(), self.options, grams)
    }
}

/// Builds the normalized Gram bank for every (task, base kernel) pair.
pub fn build_bank(
    data: &MultiTaskDataset,
    specs: &[KernelSpec],
    opts: KernelOptions,
) -> Result<Arc<KernelBank>> {
    if specs.is_empty() {
        return Err(Error::Empty("kernel specs"));
    }
    if data.tasks().is_empty() {
        return Err(Error::Empty("dataset"));
    }
    for s in specs {
        s.validate()?;
    }
    let pairs: Vec<(usize, usize)> = (0..data.tasks().len())
        .flat_map(|t| (0..specs.len()).map(move |m| (t, m)))
        .collect();
    let grams: Result<Vec<(usize, usize, DenseMatrix)>> = pairs
        .par_iter()
        .map(|&(t, m)| {
            let feats = &data.tasks()[t].features;
            let n = feats.rows();
            let mut k = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = evaluate_kernel(specs[m], opts, feats.row(i), feats.row(j))?;
                    k.set(i, j, v);
                    k.set(j, i, v);
                }
            }
            Ok((t, m, normalize_gram(&k)?))
        })
        .collect();
    let mut bank = vec![Vec::new(); data.tasks().len()];
    let mut sorted = grams?;
    sorted.sort_by_key(|&(t, m, _)| (t, m));
    for (t, _, g) in sorted {
        bank[t].push(g);
    }
    Ok(Arc::new(KernelBank {
        specs: specs.to_vec(),
        options: opts,
        grams: bank,
    }))
}

/// Frobenius cosine between two matrices, in [-1, 1].
pub fn alignment(k1: &DenseMatrix, k2: &DenseMatrix) -> Result<f64> {
    let n1 = k1.frob_norm();
    let n2 = k2.frob_norm();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroAlignment);
    }
    Ok(k1.frob_dot(k2)? / (n1 * n2))
}

const BANK_MAGIC: &[u8; 8] = b"MKLBANK\x01";

/// Writes the bank as a binary cache: magic, T, M, gaussian-form byte,
/// per-task sizes, spec list, then row-major matrices as little-endian
/// 8-byte floats, task-major then base-kernel order.
pub fn save_bank(bank: &KernelBank, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(BANK_MAGIC)?;
    w.write_all(&(bank.tasks() as u64).to_le_bytes())?;
    w.write_all(&(bank.bases() as u64).to_le_bytes())?;
    w.write_all(&[match bank.options.gaussian_form {
        GaussianForm::HalvedSquare => 0u8,
        GaussianForm::Direct => 1u8,
    }])?;
    for t in 0..bank.tasks() {
        w.write_all(&(bank.task_size(t) as u64).to_le_bytes())?;
    }
    for spec in &bank.specs {
        match *spec {
            KernelSpec::Linear => {
                w.write_all(&[0u8])?;
                w.write_all(&0u32.to_le_bytes())?;
                w.write_all(&0f64.to_le_bytes())?;
            }
            KernelSpec::Polynomial { degree, offset } => {
                w.write_all(&[1u8])?;
                w.write_all(&degree.to_le_bytes())?;
                w.write_all(&offset.to_le_bytes())?;
            }
            KernelSpec::Gaussian { spread } => {
                w.write_all(&[2u8])?;
                w.write_all(&0u32.to_le_bytes())?;
                w.write_all(&spread.to_le_bytes())?;
            }
        }
    }
    for t in 0..bank.tasks() {
        for m in 0..bank.bases() {
            for v in bank.gram(t, m).data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_bank(path: &Path) -> Result<Arc<KernelBank>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BANK_MAGIC {
        return Err(Error::ModelFormat("bad bank magic".into()));
    }
    let t_count = read_u64(&mut r)? as usize;
    let m_count = read_u64(&mut r)? as usize;
    let mut form = [0u8; 1];
    r.read_exact(&mut form)?;
    let options = KernelOptions {
        gaussian_form: match form[0] {
            0 => GaussianForm::HalvedSquare,
            1 => GaussianForm::Direct,
            x => return Err(Error::ModelFormat(format!("bad gaussian form {x}"))),
        },
    };
    let sizes: Vec<usize> = (0..t_count)
        .map(|_| read_u64(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let mut specs = Vec::with_capacity(m_count);
    for _ in 0..m_count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let degree = read_u32(&mut r)?;
        let param = read_f64(&mut r)?;
        specs.push(match tag[0] {
            0 => KernelSpec::Linear,
            1 => KernelSpec::Polynomial {
                degree,
                offset: param,
            },
            2 => KernelSpec::Gaussian { spread: param },
            x => return Err(Error::ModelFormat(format!("bad kernel tag {x}"))),
        });
    }
    let mut grams = Vec::with_capacity(t_count);
    for &n in &sizes {
        let mut per_task = Vec::with_capacity(m_count);
        for _ in 0..m_count {
            let mut data = Vec::with_capacity(n * n);
            for _ in 0..n * n {
                data.push(read_f64(&mut r)?);
            }
            per_task.push(DenseMatrix::from_vec(n, n, data)?);
        }
        grams.push(per_task);
    }
    Ok(Arc::new(KernelBank {
        specs,
        options,
        grams,
    }))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
