//! Tensor wavelet expansion of a bounded univariate kernel.
//!
//! Coordinates are `Φ_{j,k}(x) = 2^{j/2} φ(2^j x - k)` and
//! `Ψ_{j,k}(x) = 2^{j/2} ψ(2^j x - k)` for levels `j = 0..J-1` and shifts
//! `k = -L..=L`. The kernel is represented as `Σ γ_{kl} q_k(x) q_l(y)` where
//! γ is nonzero only on the blocks `(Φ_0, Φ_0)` and, per level, `(Ψ_j, Ψ_j)`,
//! `(Ψ_j, Φ_j)`, `(Φ_j, Ψ_j)`. Coefficients are inner products computed by a
//! Riemann sum on a uniform dyadic grid.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{WaveletBasis, WaveletFamily};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, TruncatedKernel};

/// Largest `grid points × coordinates` product accepted by the quadrature.
pub const QUADRATURE_BUDGET: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordKind {
    Phi,
    Psi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coord {
    pub kind: CoordKind,
    pub level: u32,
    pub shift: i64,
}

impl Coord {
    #[inline]
    pub fn eval(&self, basis: &WaveletBasis, x: f64) -> f64 {
        let s = (1u64 << self.level) as f64;
        let u = s * x - self.shift as f64;
        let v = match self.kind {
            CoordKind::Phi => basis.phi(u),
            CoordKind::Psi => basis.psi(u),
        };
        s.sqrt() * v
    }

    /// Closed support `[lo, hi]`.
    pub fn support(&self, basis: &WaveletBasis) -> (f64, f64) {
        let s = (1u64 << self.level) as f64;
        (self.shift as f64 / s, (self.shift as f64 + basis.support_len as f64) / s)
    }
}

/// Flattened coordinate order: per level, the Φ block then the Ψ block.
pub fn coordinates(levels: usize, half_range: usize) -> Vec<Coord> {
    let l = half_range as i64;
    let mut out = Vec::with_capacity(2 * levels * (2 * half_range + 1));
    for j in 0..levels as u32 {
        for kind in [CoordKind::Phi, CoordKind::Psi] {
            out.extend((-l..=l).map(|shift| Coord { kind, level: j, shift }));
        }
    }
    out
}

/// Whether `γ_{ab}` belongs to one of the expansion blocks.
pub fn in_expansion(a: &Coord, b: &Coord) -> bool {
    match (a.kind, b.kind) {
        (CoordKind::Phi, CoordKind::Phi) => a.level == 0 && b.level == 0,
        _ => a.level == b.level,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Number of detail levels `J`.
    pub levels: usize,
    /// Shift half-range `L`.
    pub half_range: usize,
    /// Quadrature step `2^-quad_level`.
    pub quad_level: u32,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig { levels: 4, half_range: 12, quad_level: 6 }
    }
}

/// Per-level detail coefficients, each `(2L+1) × (2L+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoefficients {
    pub psi_psi: Vec<Vec<f64>>,
    pub psi_phi: Vec<Vec<f64>>,
    pub phi_psi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub family: WaveletFamily,
    pub resolution: u32,
    pub config: ExpansionConfig,
    /// Truncation half-width and clip level, when the kernel was truncated.
    pub c: Option<f64>,
    pub c_h: Option<f64>,
    pub coords: Vec<Coord>,
    /// `(Φ_0, Φ_0)` block.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<LevelCoefficients>,
    /// Full symmetric `M × M` coefficient matrix in coordinate order.
    pub gamma: Vec<Vec<f64>>,
}

fn to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn from_nested(v: &[Vec<f64>]) -> DMatrix<f64> {
    let r = v.len();
    let c = v.first().map_or(0, |x| x.len());
    DMatrix::from_fn(r, c, |i, j| v[i][j])
}

/// Values of every coordinate at `xs`, as an `xs.len() × M` matrix.
pub fn coordinate_matrix(coords: &[Coord], basis: &WaveletBasis, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), coords.len(), |i, k| coords[k].eval(basis, xs[i]))
}

/// Expands `kernel` in the tensor basis.
pub fn expand_kernel<K: Kernel + ?Sized>(
    kernel: &K,
    basis: &WaveletBasis,
    config: &ExpansionConfig,
) -> Result<KernelExpansion> {
    kernel.check_dim(1)?;
    if config.levels == 0 || config.half_range == 0 {
        return Err(Error::InvalidParams("expansion needs J >= 1 and L >= 1".into()));
    }
    if config.quad_level > basis.resolution {
        return Err(Error::InvalidParams(format!(
            "quadrature level {} finer than table resolution {}",
            config.quad_level, basis.resolution
        )));
    }
    let coords = coordinates(config.levels, config.half_range);
    let m = coords.len();
    let l = config.half_range as f64;
    let per_unit = 1usize << config.quad_level;
    let delta = 1.0 / per_unit as f64;
    let span = 2 * config.half_range + basis.support_len;
    let p = span * per_unit + 1;
    if p.saturating_mul(m) > QUADRATURE_BUDGET {
        return Err(Error::QuadratureOverflow(p * m));
    }
    let grid: Vec<f64> = (0..p).map(|a| -l + a as f64 * delta).collect();

    // sparse columns of Q: (first grid index, values over the support)
    let columns: Vec<(usize, Vec<f64>)> = coords
        .iter()
        .map(|c| {
            let (lo, hi) = c.support(basis);
            let a0 = (((lo + l) / delta).floor().max(0.0)) as usize;
            let a1 = ((((hi + l) / delta).ceil()) as usize).min(p - 1);
            (a0, (a0..=a1).map(|a| c.eval(basis, grid[a])).collect())
        })
        .collect();

    let bound = kernel.bind(&grid, 1);
    // HQ, one grid row at a time
    let hq: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|a| {
            let row: Vec<f64> = (0..p).map(|b| bound.pair(a, b)).collect();
            columns
                .iter()
                .map(|(start, vals)| vals.iter().zip(&row[*start..]).map(|(q, h)| q * h).sum())
                .collect()
        })
        .collect();
    drop(bound);

    let w = delta * delta;
    let mut gamma = DMatrix::<f64>::zeros(m, m);
    for (k, (start, vals)) in columns.iter().enumerate() {
        for ll in 0..m {
            if !in_expansion(&coords[k], &coords[ll]) {
                continue;
            }
            let s: f64 = vals.iter().enumerate().map(|(i, q)| q * hq[start + i][ll]).sum();
            gamma[(k, ll)] = w * s;
        }
    }
    let gamma = 0.5 * (&gamma + gamma.transpose());

    let b = 2 * config.half_range + 1;
    let block = |r0: usize, c0: usize| -> Vec<Vec<f64>> {
        (0..b).map(|i| (0..b).map(|j| gamma[(r0 + i, c0 + j)]).collect()).collect()
    };
    let alpha = block(0, 0);
    let beta = (0..config.levels)
        .map(|j| {
            let phi0 = 2 * j * b;
            let psi0 = phi0 + b;
            LevelCoefficients { psi_psi: block(psi0, psi0), psi_phi: block(psi0, phi0), phi_psi: block(phi0, psi0) }
        })
        .collect();
    Ok(KernelExpansion {
        family: basis.family,
        resolution: basis.resolution,
        config: *config,
        c: None,
        c_h: None,
        coords,
        alpha,
        beta,
        gamma: to_nested(&gamma),
    })
}

/// Expands a truncated kernel and records its truncation constants.
pub fn expand_truncated(kernel: &TruncatedKernel, basis: &WaveletBasis, config: &ExpansionConfig) -> Result<KernelExpansion> {
    let mut e = expand_kernel(kernel, basis, config)?;
    e.c = Some(kernel.c);
    e.c_h = Some(kernel.c_h);
    Ok(e)
}

impl KernelExpansion {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        from_nested(&self.gamma)
    }

    pub fn check_basis(&self, basis: &WaveletBasis) -> Result<()> {
        if basis.family != self.family || basis.resolution != self.resolution {
            return Err(Error::InvalidParams("expansion was built with a different wavelet basis".into()));
        }
        Ok(())
    }

    /// `Σ γ_{kl} q_k(x) q_l(y)`.
    pub fn reconstruct(&self, basis: &WaveletBasis, x: f64, y: f64) -> f64 {
        let vx: Vec<f64> = self.coords.iter().map(|c| c.eval(basis, x)).collect();
        let vy: Vec<f64> = self.coords.iter().map(|c| c.eval(basis, y)).collect();
        let mut s = 0.0;
        for (k, a) in vx.iter().enumerate().filter(|(_, a)| **a != 0.0) {
            let row = &self.gamma[k];
            s += a * vy.iter().zip(row).map(|(b, g)| b * g).sum::<f64>();
        }
        s
    }

    /// Reconstruction on the grid `xs × ys`.
    pub fn reconstruct_grid(&self, basis: &WaveletBasis, xs: &[f64], ys: &[f64]) -> DMatrix<f64> {
        let vx = coordinate_matrix(&self.coords, basis, xs);
        let vy = coordinate_matrix(&self.coords, basis, ys);
        vx * self.gamma_matrix() * vy.transpose()
    }

    /// Sum of squared coefficients whose shifts exceed `radius` in absolute
    /// value, as a fraction of the total.
    pub fn mass_outside(&self, radius: i64) -> f64 {
        let (mut out, mut total) = (0.0, 0.0);
        for (k, row) in self.gamma.iter().enumerate() {
            for (l, g) in row.iter().enumerate() {
                let g2 = g * g;
                total += g2;
                if self.coords[k].shift.abs().max(self.coords[l].shift.abs()) > radius {
                    out += g2;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            out / total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BivariateKernel, CustomKernel};
    use crate::wavelet::basis::build_basis;
    use std::sync::Arc;

    #[test]
    fn coordinate_count_and_order() {
        let c = coordinates(4, 12);
        assert_eq!(c.len(), 2 * 4 * 25);
        assert_eq!(c[0], Coord { kind: CoordKind::Phi, level: 0, shift: -12 });
        assert_eq!(c[25], Coord { kind: CoordKind::Psi, level: 0, shift: -12 });
        assert_eq!(c[50], Coord { kind: CoordKind::Phi, level: 1, shift: -12 });
    }

    #[test]
    fn zero_kernel_has_zero_coefficients() {
        let basis = build_basis(WaveletFamily::Daubechies(4), 10).unwrap();
        let zero = BivariateKernel::Custom(CustomKernel::new("zero", 1, |_, _| 0.0).unwrap());
        let cfg = ExpansionConfig { levels: 2, half_range: 3, quad_level: 5 };
        let e = expand_kernel(&zero, &basis, &cfg).unwrap();
        assert_eq!(e.len(), 2 * 2 * 7);
        assert!(e.gamma.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn pure_basis_element_expands_to_one_coefficient() {
        let basis = Arc::new(build_basis(WaveletFamily::Daubechies(4), 10).unwrap());
        let b = basis.clone();
        let k = BivariateKernel::Custom(CustomKernel::new("phi x phi", 1, move |x, y| b.phi(x[0]) * b.phi(y[0])).unwrap());
        let cfg = ExpansionConfig { levels: 1, half_range: 2, quad_level: 10 };
        let e = expand_kernel(&k, &basis, &cfg).unwrap();
        let centre = 2;
        for (i, row) in e.alpha.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                let expect = if i == centre && j == centre { 1.0 } else { 0.0 };
                assert!((a - expect).abs() < 1e-6, "alpha[{i}][{j}] = {a}");
            }
        }
        for lvl in &e.beta {
            for g in lvl.psi_psi.iter().chain(&lvl.psi_phi).chain(&lvl.phi_psi).flatten() {
                assert!(g.abs() < 1e-6, "{g}");
            }
        }
    }

    #[test]
    fn reconstruction_of_smooth_kernel_is_accurate() {
        let basis = build_basis(WaveletFamily::Daubechies(4), 10).unwrap();
        let k = BivariateKernel::symmetry(1.0, 0.0).unwrap();
        let cfg = ExpansionConfig { levels: 2, half_range: 8, quad_level: 6 };
        let e = expand_kernel(&k, &basis, &cfg).unwrap();
        let xs: Vec<f64> = (0..21).map(|i| -2.0 + 0.2 * i as f64).collect();
        let r = e.reconstruct_grid(&basis, &xs, &xs);
        let mut err: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in xs.iter().enumerate() {
                err = err.max((r[(i, j)] - k.eval(&[x], &[y])).abs());
                assert!((r[(i, j)] - e.reconstruct(&basis, x, y)).abs() < 1e-12);
            }
        }
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn quadrature_budget_is_enforced() {
        let basis = build_basis(WaveletFamily::Daubechies(4), 14).unwrap();
        let cfg = ExpansionConfig { levels: 4, half_range: 50, quad_level: 14 };
        assert!(matches!(
            expand_kernel(&BivariateKernel::Product, &basis, &cfg),
            Err(Error::QuadratureOverflow(_))
        ));
    }
}
