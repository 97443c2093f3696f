//! Total causal effect matrices and companion-form stability.
//!
//! `T_k` is the sensitivity of `x_{t+k}` to an additive change in `x_t`,
//! obtained by summing over all paths of the unrolled time graph:
//! `T_0 = I`, `T_k = 0` for `k < 0` and `T_k = sum_q B_q T_{k-q}`.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::VarModel;

/// Iterator over `T_0, T_1, ...` that keeps only the last Q matrices.
#[derive(Debug, Clone)]
pub struct EffectIter<'a> {
    model: &'a VarModel,
    /// Most recent first: `recent[0] = T_{k-1}`.
    recent: VecDeque<DMatrix<f64>>,
}

impl<'a> EffectIter<'a> {
    pub fn new(model: &'a VarModel) -> Self {
        Self {
            model,
            recent: VecDeque::with_capacity(model.lag()),
        }
    }
}

impl Iterator for EffectIter<'_> {
    type Item = DMatrix<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        let dim = self.model.dim();
        let next = if self.recent.is_empty() {
            DMatrix::identity(dim, dim)
        } else {
            let mut acc = DMatrix::zeros(dim, dim);
            for (b, prev) in self.model.coeffs().iter().zip(&self.recent) {
                acc.gemm(1.0, b, prev, 1.0);
            }
            acc
        };
        self.recent.push_front(next.clone());
        self.recent.truncate(self.model.lag());
        Some(next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectMatrices {
    matrices: Vec<DMatrix<f64>>,
}

impl EffectMatrices {
    /// Largest horizon `K` held.
    pub fn max_horizon(&self) -> usize {
        self.matrices.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn get(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.matrices.get(k)
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// Long-format CSV `k,i,j,value` with 1-based `i, j`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "k,i,j,value").map_err(io)?;
        for (k, m) in self.matrices.iter().enumerate() {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    writeln!(out, "{k},{},{},{}", i + 1, j + 1, m[(i, j)]).map_err(io)?;
                }
            }
        }
        out.flush().map_err(io)
    }
}

/// `T_0..T_K`.
pub fn total_effects(model: &VarModel, max_horizon: usize) -> EffectMatrices {
    EffectMatrices {
        matrices: EffectIter::new(model).take(max_horizon + 1).collect(),
    }
}

/// `T_k` alone, holding only Q matrices in memory.
pub fn total_effect_at(model: &VarModel, k: usize) -> DMatrix<f64> {
    EffectIter::new(model)
        .nth(k)
        .expect("effect iterator is unbounded")
}

/// Additive change `T_k e_i delta` at horizon `k` caused by adding `delta`
/// to node `node` now.
pub fn point_effect(
    effects: &EffectMatrices,
    node: usize,
    delta: f64,
    k: usize,
) -> Result<DVector<f64>> {
    let dim = effects.dim();
    if node >= dim {
        return Err(Error::NodeOutOfRange { node, dim });
    }
    let t = effects.get(k).ok_or(Error::HorizonOutOfRange {
        k,
        max: effects.max_horizon(),
    })?;
    Ok(t.column(node) * delta)
}

/// VAR(1) lift of the model: `[B_1 ... B_Q]` on top, shifted identities below.
pub fn companion_matrix(model: &VarModel) -> DMatrix<f64> {
    let dim = model.dim();
    let lag = model.lag();
    let n = dim * lag;
    let mut a = DMatrix::zeros(n, n);
    for (q, b) in model.coeffs().iter().enumerate() {
        a.view_mut((0, q * dim), (dim, dim)).copy_from(b);
    }
    for r in dim..n {
        a[(r, r - dim)] = 1.0;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub spectral_radius: f64,
    pub stable: bool,
}

pub fn stability(model: &VarModel) -> StabilityReport {
    let a = companion_matrix(model);
    let spectral_radius = spectral_radius(&a);
    StabilityReport {
        spectral_radius,
        stable: spectral_radius < 1.0 - 1e-12,
    }
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    match Schur::try_new(a.clone(), f64::EPSILON, 100_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        // Gelfand fallback: ||A^k||^(1/k) for a large power.
        None => {
            let mut p = a.clone();
            let mut log_scale = 0.0;
            for _ in 0..10 {
                p = &p * &p;
                let norm = p.norm();
                if norm == 0.0 {
                    return 0.0;
                }
                p /= norm;
                log_scale = 2.0 * log_scale + norm.ln();
            }
            (log_scale / 1024.0).exp()
        }
    }
}
