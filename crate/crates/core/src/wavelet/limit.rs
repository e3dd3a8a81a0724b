//! Gaussian covariance structure of the expansion coordinates and sampling
//! of the limit variable `Z = Σ γ_{kl} (Z_k Z_l - A_{kl})`.

use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{build_basis, WaveletBasis, WaveletFamily};
use super::expansion::{expand_truncated, from_nested, ExpansionConfig, KernelExpansion};
use crate::error::{Error, Result};
use crate::kernels::{truncate, Kernel};
use crate::process::{simulate, ProcessModel};
use crate::rng::{self, Purpose};
use crate::ustat::NeumaierSum;

/// Shortest path accepted for covariance estimation.
pub const MIN_PATH_LEN: usize = 100_000;
/// Rows per gemm block when accumulating covariances.
const CHUNK: usize = 4096;
/// Relative tolerance on negative eigenvalues before flooring is refused.
const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatisticKind {
    U,
    V,
}

/// Default Bartlett lag cut `⌈4 (T/100)^{1/4}⌉`.
pub fn default_lag_cut(path_len: usize) -> usize {
    (4.0 * (path_len as f64 / 100.0).powf(0.25)).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitModel {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expansion: Option<KernelExpansion>,
    /// Coordinates (indices into the expansion) carried by the matrices below.
    pub active: Vec<usize>,
    pub gamma: Vec<Vec<f64>>,
    pub a0: Vec<Vec<f64>>,
    pub sigma_lr: Vec<Vec<f64>>,
    pub v_offset: f64,
    pub path_len: usize,
    pub lag_cut: usize,
    /// Most negative eigenvalue of the long-run covariance before flooring.
    pub min_eigenvalue: f64,
}

impl LimitModel {
    /// A model given directly by its matrices.
    pub fn from_matrices(gamma: Vec<Vec<f64>>, a0: Vec<Vec<f64>>, sigma_lr: Vec<Vec<f64>>, v_offset: f64) -> Result<Self> {
        let m = gamma.len();
        for mat in [&gamma, &a0, &sigma_lr] {
            if mat.len() != m || mat.iter().any(|r| r.len() != m) {
                return Err(Error::DimensionMismatch { expected: m, got: mat.len() });
            }
        }
        Ok(LimitModel {
            expansion: None,
            active: (0..m).collect(),
            gamma,
            a0,
            sigma_lr,
            v_offset,
            path_len: 0,
            lag_cut: 0,
            min_eigenvalue: 0.0,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Lag-0 and Bartlett long-run covariance of the rows of `q` (`T × m`),
/// after centering each column by its mean.
///
/// The long-run estimate uses the overlapping-batch form
/// `Σ_u S_u S_uᵀ / ((T - R)(R + 1))` with `S_u` the sums over windows of
/// `R + 1` consecutive rows. Away from the sample ends it weights lag `r`
/// by `1 - r/(R+1)` exactly as the Bartlett window does, and it is positive
/// semidefinite by construction.
pub fn long_run_covariance(q: &DMatrix<f64>, lag_cut: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t = q.nrows();
    let means: Vec<f64> = (0..q.ncols()).map(|k| q.column(k).iter().copied().collect::<NeumaierSum>().value() / t as f64).collect();
    accumulate(t, q.ncols(), lag_cut, &means, |i, out| out.copy_from_slice(&q.row(i).iter().copied().collect::<Vec<_>>()))
}

/// Streams rows produced by `row(i, out)` through the covariance accumulators.
fn accumulate<F: Fn(usize, &mut [f64])>(
    t: usize,
    m: usize,
    lag_cut: usize,
    means: &[f64],
    row: F,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if t <= lag_cut + 1 {
        return Err(Error::PathTooShort { needed: lag_cut + 2, got: t });
    }
    let w = lag_cut + 1;
    let mut a0 = DMatrix::<f64>::zeros(m, m);
    let mut lr = DMatrix::<f64>::zeros(m, m);
    let mut ring = vec![vec![0.0; m]; w];
    let mut window = vec![0.0; m];
    let mut qbuf = DMatrix::<f64>::zeros(CHUNK, m);
    let mut sbuf = DMatrix::<f64>::zeros(CHUNK, m);
    let (mut nq, mut ns) = (0usize, 0usize);
    let mut cur = vec![0.0; m];
    for i in 0..t {
        row(i, &mut cur);
        cur.iter_mut().zip(means).for_each(|(v, mu)| *v -= mu);
        let slot = i % w;
        for k in 0..m {
            window[k] += cur[k] - if i >= w { ring[slot][k] } else { 0.0 };
            qbuf[(nq, k)] = cur[k];
        }
        ring[slot].copy_from_slice(&cur);
        nq += 1;
        if i + 1 >= w {
            for k in 0..m {
                sbuf[(ns, k)] = window[k];
            }
            ns += 1;
        }
        if nq == CHUNK {
            a0.gemm_tr(1.0, &qbuf, &qbuf, 1.0);
            nq = 0;
        }
        if ns == CHUNK {
            lr.gemm_tr(1.0, &sbuf, &sbuf, 1.0);
            ns = 0;
            // refresh the running window sum from the ring to stop drift
            for k in 0..m {
                window[k] = ring.iter().map(|r| r[k]).sum();
            }
        }
    }
    if nq > 0 {
        let b = qbuf.rows(0, nq);
        a0.gemm_tr(1.0, &b, &b, 1.0);
    }
    if ns > 0 {
        let b = sbuf.rows(0, ns);
        lr.gemm_tr(1.0, &b, &b, 1.0);
    }
    a0 /= t as f64;
    lr /= ((t - lag_cut) * w) as f64;
    let a0 = 0.5 * (&a0 + a0.transpose());
    let lr = 0.5 * (&lr + lr.transpose());
    Ok((a0, lr))
}

/// Eigenvalue floor at zero. Returns the floored matrix and the smallest
/// eigenvalue before flooring.
pub fn floor_psd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if m.nrows() == 0 {
        return Ok((m.clone(), 0.0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1e-300);
    if min < -PSD_TOL * scale.max(1.0) && min < -1e-6 * scale {
        return Err(Error::NotPsd(min));
    }
    let floored = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    Ok((out, min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovarianceConfig {
    pub path_len: usize,
    /// Bartlett lag cut; `None` selects [`default_lag_cut`].
    pub lag_cut: Option<usize>,
    /// Burn-in of the long path; `None` selects the model default.
    pub burn_in: Option<usize>,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        CovarianceConfig { path_len: 200_000, lag_cut: None, burn_in: None }
    }
}

fn long_path(model: &ProcessModel, config: &CovarianceConfig, seed: u64) -> Result<Vec<f64>> {
    if config.path_len < MIN_PATH_LEN {
        return Err(Error::PathTooShort { needed: MIN_PATH_LEN, got: config.path_len });
    }
    if model.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: model.dim });
    }
    let burn = config.burn_in.unwrap_or_else(|| model.default_burn_in());
    Ok(simulate(model, config.path_len, rng::derive_seed(seed, Purpose::LimitPath, 0), burn)?.values)
}

/// Estimates the coordinate covariances on one long null path and the
/// V-statistic offset `E h(X, X)` of `kernel`.
pub fn estimate_covariances<K: Kernel + ?Sized>(
    expansion: &KernelExpansion,
    basis: &WaveletBasis,
    model: &ProcessModel,
    kernel: &K,
    config: &CovarianceConfig,
    seed: u64,
) -> Result<LimitModel> {
    let path = long_path(model, config, seed)?;
    covariances_on_path(expansion, basis, &path, kernel, config.lag_cut)
}

fn covariances_on_path<K: Kernel + ?Sized>(
    expansion: &KernelExpansion,
    basis: &WaveletBasis,
    path: &[f64],
    kernel: &K,
    lag_cut: Option<usize>,
) -> Result<LimitModel> {
    expansion.check_basis(basis)?;
    let t = path.len();
    let lag_cut = lag_cut.unwrap_or_else(|| default_lag_cut(t));
    if lag_cut > t / 100 {
        return Err(Error::InvalidParams(format!("lag cut {lag_cut} exceeds path_len / 100")));
    }
    let gamma_full = expansion.gamma_matrix();
    let active: Vec<usize> = (0..expansion.len()).filter(|&k| gamma_full.row(k).iter().any(|g| *g != 0.0)).collect();
    let coords: Vec<_> = active.iter().map(|&k| expansion.coords[k]).collect();
    let m = active.len();
    let gamma = DMatrix::from_fn(m, m, |i, j| gamma_full[(active[i], active[j])]);

    let means: Vec<f64> = {
        let sums = path
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut s = vec![NeumaierSum::default(); m];
                for &x in chunk {
                    for (k, c) in coords.iter().enumerate() {
                        s[k].add(c.eval(basis, x));
                    }
                }
                s
            })
            .collect::<Vec<_>>();
        (0..m)
            .map(|k| {
                let mut acc = NeumaierSum::default();
                sums.iter().for_each(|s| acc.merge(s[k]));
                acc.value() / t as f64
            })
            .collect()
    };
    let (a0, lr) = if m == 0 {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    } else {
        accumulate(t, m, lag_cut, &means, |i, out| {
            for (k, c) in coords.iter().enumerate() {
                out[k] = c.eval(basis, path[i]);
            }
        })?
    };
    let (sigma, min_eigenvalue) = floor_psd(&lr)?;
    if min_eigenvalue < 0.0 {
        warn!("long-run covariance floored; smallest eigenvalue {min_eigenvalue:e}");
    }
    let v_offset = path.iter().map(|&x| kernel.eval(&[x], &[x])).collect::<NeumaierSum>().value() / t as f64;
    let nested = |mat: &DMatrix<f64>| (0..mat.nrows()).map(|i| mat.row(i).iter().copied().collect()).collect();
    Ok(LimitModel {
        expansion: Some(expansion.clone()),
        active,
        gamma: nested(&gamma),
        a0: nested(&a0),
        sigma_lr: nested(&sigma),
        v_offset,
        path_len: t,
        lag_cut,
        min_eigenvalue,
    })
}

/// Precomputed spectral form `Σ λ_i χ²_1 - tr(γ A0)` of the limit variable.
#[derive(Debug, Clone)]
pub struct LimitSampler {
    pub lambdas: Vec<f64>,
    pub centering: f64,
    pub v_offset: f64,
}

impl LimitSampler {
    pub fn new(model: &LimitModel) -> Result<Self> {
        let gamma = from_nested(&model.gamma);
        let a0 = from_nested(&model.a0);
        let sigma = from_nested(&model.sigma_lr);
        let m = gamma.nrows();
        if m == 0 {
            return Ok(LimitSampler { lambdas: Vec::new(), centering: 0.0, v_offset: model.v_offset });
        }
        let (sigma, _) = floor_psd(&sigma)?;
        let eig = SymmetricEigen::new(sigma);
        let root_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&root_vals) * eig.eigenvectors.transpose();
        let inner = &root * &gamma * &root;
        let inner = 0.5 * (&inner + inner.transpose());
        let lam = SymmetricEigen::new(inner).eigenvalues;
        let cut = 1e-14 * lam.amax();
        let lambdas: Vec<f64> = lam.iter().copied().filter(|l| l.abs() > cut).collect();
        let centering = (&gamma * &a0).trace();
        Ok(LimitSampler { lambdas, centering, v_offset: model.v_offset })
    }

    /// Draw `index` from the stream of `seed`.
    pub fn draw(&self, seed: u64, index: u64, kind: StatisticKind) -> f64 {
        let mut rng = rng::stream(seed, Purpose::LimitDraw, index);
        let mut s = NeumaierSum::default();
        for l in &self.lambdas {
            let z: f64 = StandardNormal.sample(&mut rng);
            s.add(l * z * z);
        }
        let u = s.value() - self.centering;
        match kind {
            StatisticKind::U => u,
            StatisticKind::V => u + self.v_offset,
        }
    }
}

/// `draws` independent realizations of the limit variable.
pub fn sample_limit(model: &LimitModel, draws: usize, seed: u64, kind: StatisticKind) -> Result<Vec<f64>> {
    let sampler = LimitSampler::new(model)?;
    Ok((0..draws as u64).into_par_iter().map(|d| sampler.draw(seed, d, kind)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitConfig {
    pub family: WaveletFamily,
    pub resolution: u32,
    pub expansion: ExpansionConfig,
    /// Truncation half-width; `None` selects five path standard deviations.
    pub c: Option<f64>,
    pub covariance: CovarianceConfig,
    /// Size of the equally spaced subsample of the long path used to center
    /// the truncated kernel.
    pub centering_atoms: usize,
}

impl Default for LimitConfig {
    fn default() -> Self {
        LimitConfig {
            family: WaveletFamily::default(),
            resolution: 10,
            expansion: ExpansionConfig::default(),
            c: None,
            covariance: CovarianceConfig::default(),
            centering_atoms: 4000,
        }
    }
}

/// Full pipeline: long null path, truncation, expansion, covariances.
pub fn build_limit_model(
    kernel: Arc<dyn Kernel>,
    model: &ProcessModel,
    config: &LimitConfig,
    seed: u64,
) -> Result<(LimitModel, WaveletBasis)> {
    let basis = build_basis(config.family, config.resolution)?;
    let path = long_path(model, &config.covariance, seed)?;
    let c = match config.c {
        Some(c) => c,
        None => {
            let n = path.len() as f64;
            let mean = path.iter().sum::<f64>() / n;
            5.0 * (path.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
        }
    };
    let stride = (path.len() / config.centering_atoms.max(1)).max(1);
    let atoms: Vec<f64> = path.iter().step_by(stride).copied().collect();
    let tk = truncate(kernel.clone(), c, &atoms)?;
    let expansion = expand_truncated(&tk, &basis, &config.expansion)?;
    let lm = covariances_on_path(&expansion, &basis, &path, kernel.as_ref(), config.covariance.lag_cut)?;
    Ok((lm, basis))
}
