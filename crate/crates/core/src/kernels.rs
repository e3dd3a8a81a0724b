//! Symmetric bivariate kernels, clipping, and empirical degeneration.
//!
//! Kernels act on points stored as flat `f64` slices of a fixed dimension.
//! For the double sums in [`crate::ustat`], a kernel is first *bound* to a
//! point set: the bound evaluator precomputes per-point quantities (centered
//! coordinates, residuals, centering terms) so that each pair costs one
//! exponential.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::process::RegressionMap;
use crate::rng::{self, Purpose};
use crate::ustat::NeumaierSum;

/// Pairwise evaluator over a fixed point set.
pub trait PairEval: Send + Sync {
    fn len(&self) -> usize;
    fn pair(&self, i: usize, j: usize) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A symmetric kernel `h(x, y)`.
pub trait Kernel: Send + Sync {
    /// Point dimension, `None` when any dimension is accepted.
    fn dim(&self) -> Option<usize>;
    fn eval(&self, x: &[f64], y: &[f64]) -> f64;
    /// Binds the kernel to `points` (row-major, `dim` columns).
    fn bind(&self, points: &[f64], dim: usize) -> Box<dyn PairEval + '_>;

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self.dim() {
            Some(d) if d != dim => Err(Error::DimensionMismatch { expected: d, got: dim }),
            _ => Ok(()),
        }
    }
}

/// `(g sqrt(2 pi) / 2)`, the constant in front of the closed-form symmetry kernel.
#[inline]
fn symmetry_scale(gamma: f64) -> f64 {
    gamma * (2.0 * PI).sqrt() / 2.0
}

/// `int sin(t(x-mu)) sin(t(y-mu)) exp(-t^2 / (2 gamma^2)) dt` in closed form.
pub fn eval_symmetry_kernel(x: f64, y: f64, gamma: f64, mu: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidScale(gamma));
    }
    Ok(symmetry_closed_form(x, y, gamma, mu))
}

#[inline]
fn symmetry_closed_form(x: f64, y: f64, gamma: f64, mu: f64) -> f64 {
    let g2 = gamma * gamma;
    let d = x - y;
    let s = x + y - 2.0 * mu;
    symmetry_scale(gamma) * ((-0.5 * g2 * d * d).exp() - (-0.5 * g2 * s * s).exp())
}

/// Gaussian bump `exp(-u^2/2)`.
#[inline]
pub fn gaussian_bump(u: f64) -> f64 {
    (-0.5 * u * u).exp()
}

/// `(x1 - g0(p1)) (x2 - g0(p2)) K((p1 - p2) / bw) / sqrt(bw)` for points
/// `z = (x, x_prev)`.
pub fn eval_modelspec_kernel(z1: (f64, f64), z2: (f64, f64), g0: &RegressionMap, bw: f64) -> Result<f64> {
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(Error::InvalidBandwidth(bw));
    }
    Ok(modelspec_form(z1, z2, g0, bw))
}

#[inline]
fn modelspec_form(z1: (f64, f64), z2: (f64, f64), g0: &RegressionMap, bw: f64) -> f64 {
    let r1 = z1.0 - g0.eval(z1.1);
    let r2 = z2.0 - g0.eval(z2.1);
    r1 * r2 * gaussian_bump((z1.1 - z2.1) / bw) / bw.sqrt()
}

type KernelFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// User-supplied kernel. Symmetry is checked on random probes at construction.
#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    pub dim: usize,
    f: Arc<KernelFn>,
}

impl CustomKernel {
    pub fn new<F>(name: impl Into<String>, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        let k = CustomKernel { name: name.into(), dim, f: Arc::new(f) };
        let mut rng = rng::stream(0x5eed, Purpose::Probe, 0);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let (a, b) = ((k.f)(&x, &y), (k.f)(&y, &x));
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::InvalidParams(format!("custom kernel '{}' is not symmetric", k.name)));
            }
        }
        Ok(k)
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomKernel").field("name", &self.name).field("dim", &self.dim).finish()
    }
}

/// The concrete kernel forms.
#[derive(Debug, Clone)]
pub enum BivariateKernel {
    /// Characteristic-function symmetry kernel with Gaussian weight of scale `gamma`.
    SymmetryCF { gamma: f64, mu: f64 },
    /// Model-specification kernel on lagged pairs `(x, x_prev)`.
    ModelSpec { g0: RegressionMap, bw: f64 },
    /// `h(x, y) = <x, y>`.
    Product,
    Custom(CustomKernel),
}

impl BivariateKernel {
    pub fn symmetry(gamma: f64, mu: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidScale(gamma));
        }
        Ok(BivariateKernel::SymmetryCF { gamma, mu })
    }

    pub fn modelspec(g0: RegressionMap, bw: f64) -> Result<Self> {
        if !(bw > 0.0 && bw.is_finite()) {
            return Err(Error::InvalidBandwidth(bw));
        }
        Ok(BivariateKernel::ModelSpec { g0, bw })
    }

    /// Global Lipschitz bound in each argument, where one is known.
    pub fn lip_bound(&self) -> Option<f64> {
        match self {
            // |d/dx| <= 2 * gamma * e^{-1/2} * (gamma sqrt(2 pi) / 2), with a 10% margin
            BivariateKernel::SymmetryCF { gamma, .. } => {
                Some(1.1 * gamma * gamma * (2.0 * PI).sqrt() * (-0.5f64).exp())
            }
            _ => None,
        }
    }
}

impl Kernel for BivariateKernel {
    fn dim(&self) -> Option<usize> {
        match self {
            BivariateKernel::SymmetryCF { .. } => Some(1),
            BivariateKernel::ModelSpec { .. } => Some(2),
            BivariateKernel::Product => None,
            BivariateKernel::Custom(c) => Some(c.dim),
        }
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            BivariateKernel::SymmetryCF { gamma, mu } => symmetry_closed_form(x[0], y[0], *gamma, *mu),
            BivariateKernel::ModelSpec { g0, bw } => modelspec_form((x[0], x[1]), (y[0], y[1]), g0, *bw),
            BivariateKernel::Product => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            BivariateKernel::Custom(c) => (c.f)(x, y),
        }
    }

    fn bind(&self, points: &[f64], dim: usize) -> Box<dyn PairEval + '_> {
        match self {
            BivariateKernel::SymmetryCF { gamma, mu } => Box::new(SymmetryBound::new(points, *gamma, *mu)),
            BivariateKernel::ModelSpec { g0, bw } => Box::new(ModelSpecBound::new(points, g0, *bw)),
            BivariateKernel::Product if dim == 1 => Box::new(ProductBound { x: points.to_vec() }),
            _ => Box::new(DirectBound { kernel: self, points: points.to_vec(), dim }),
        }
    }
}

struct DirectBound<'a, K: Kernel + ?Sized> {
    kernel: &'a K,
    points: Vec<f64>,
    dim: usize,
}

impl<K: Kernel + ?Sized> PairEval for DirectBound<'_, K> {
    fn len(&self) -> usize {
        self.points.len() / self.dim.max(1)
    }

    #[inline]
    fn pair(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        self.kernel.eval(&self.points[i * d..(i + 1) * d], &self.points[j * d..(j + 1) * d])
    }
}

struct ProductBound {
    x: Vec<f64>,
}

impl PairEval for ProductBound {
    fn len(&self) -> usize {
        self.x.len()
    }

    #[inline]
    fn pair(&self, i: usize, j: usize) -> f64 {
        self.x[i] * self.x[j]
    }
}

/// Uses `e^{-g2 (u-v)^2/2} - e^{-g2 (u+v)^2/2} = 2 e^{-g2 u^2/2} e^{-g2 v^2/2} sinh(g2 u v)`
/// with `u = x - mu`, `v = y - mu`.
struct SymmetryBound {
    u: Vec<f64>,
    w: Vec<f64>,
    g2: f64,
    scale: f64,
    gamma: f64,
}

impl SymmetryBound {
    fn new(points: &[f64], gamma: f64, mu: f64) -> Self {
        let g2 = gamma * gamma;
        let u: Vec<f64> = points.iter().map(|x| x - mu).collect();
        let w = u.iter().map(|u| (-0.5 * g2 * u * u).exp()).collect();
        SymmetryBound { u, w, g2, scale: 2.0 * symmetry_scale(gamma), gamma }
    }
}

impl PairEval for SymmetryBound {
    fn len(&self) -> usize {
        self.u.len()
    }

    #[inline]
    fn pair(&self, i: usize, j: usize) -> f64 {
        let t = self.g2 * self.u[i] * self.u[j];
        if t.abs() < 300.0 {
            let e = t.exp();
            self.scale * self.w[i] * self.w[j] * 0.5 * (e - 1.0 / e)
        } else {
            symmetry_closed_form(self.u[i], self.u[j], self.gamma, 0.0)
        }
    }
}

struct ModelSpecBound {
    resid: Vec<f64>,
    prev: Vec<f64>,
    inv_bw: f64,
}

impl ModelSpecBound {
    fn new(points: &[f64], g0: &RegressionMap, bw: f64) -> Self {
        let norm = bw.sqrt().sqrt();
        let (resid, prev) = points.chunks_exact(2).map(|z| ((z[0] - g0.eval(z[1])) / norm, z[1])).unzip();
        ModelSpecBound { resid, prev, inv_bw: 1.0 / bw }
    }
}

impl PairEval for ModelSpecBound {
    fn len(&self) -> usize {
        self.resid.len()
    }

    #[inline]
    fn pair(&self, i: usize, j: usize) -> f64 {
        self.resid[i] * self.resid[j] * gaussian_bump((self.prev[i] - self.prev[j]) * self.inv_bw)
    }
}

/// `h*(x, y) = h(x, y) - m(x) - m(y) + m_bar`, centered against an equally
/// weighted atom set so that the mean over atoms of `h*(., y)` vanishes.
#[derive(Clone)]
pub struct DegenerateKernel {
    base: Arc<dyn Kernel>,
    atoms: Vec<f64>,
    atom_dim: usize,
    row_means: Vec<f64>,
    grand_mean: f64,
    table: Option<CenteringTable>,
}

/// `m` tabulated on a uniform grid and read back by cubic interpolation.
#[derive(Debug, Clone)]
struct CenteringTable {
    lo: f64,
    step: f64,
    values: Vec<f64>,
}

impl CenteringTable {
    #[inline]
    fn get(&self, y: f64) -> Option<f64> {
        let t = (y - self.lo) / self.step;
        let i = t.floor();
        if !(i >= 1.0 && (i as usize) + 2 < self.values.len()) {
            return None;
        }
        let k = i as usize;
        let s = t - i;
        let v = &self.values[k - 1..k + 3];
        // four-point Lagrange through nodes -1, 0, 1, 2
        let w0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
        let w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
        let w2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
        let w3 = (s + 1.0) * s * (s - 1.0) / 6.0;
        Some(w0 * v[0] + w1 * v[1] + w2 * v[2] + w3 * v[3])
    }
}

impl fmt::Debug for DegenerateKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DegenerateKernel")
            .field("atoms", &self.atom_count())
            .field("grand_mean", &self.grand_mean)
            .finish()
    }
}

/// Centers `base` against `atoms` (row-major points of dimension `dim`).
pub fn degenerate(base: Arc<dyn Kernel>, atoms: &[f64], dim: usize) -> Result<DegenerateKernel> {
    if atoms.is_empty() {
        return Err(Error::EmptyAtoms);
    }
    base.check_dim(dim)?;
    if atoms.len() % dim != 0 {
        return Err(Error::DimensionMismatch { expected: dim, got: atoms.len() % dim });
    }
    let bound = base.bind(atoms, dim);
    let a = bound.len();
    let row_means: Vec<f64> = (0..a)
        .into_par_iter()
        .map(|j| {
            let mut s = NeumaierSum::default();
            for i in 0..a {
                s.add(bound.pair(i, j));
            }
            s.value() / a as f64
        })
        .collect();
    let mut g = NeumaierSum::default();
    row_means.iter().for_each(|m| g.add(*m));
    let grand_mean = g.value() / a as f64;
    drop(bound);
    Ok(DegenerateKernel { base, atoms: atoms.to_vec(), atom_dim: dim, row_means, grand_mean, table: None })
}

impl DegenerateKernel {
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len() / self.atom_dim
    }

    pub fn row_means(&self) -> &[f64] {
        &self.row_means
    }

    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }

    pub fn base(&self) -> &Arc<dyn Kernel> {
        &self.base
    }

    /// Replaces exact evaluation of `m` by a cubic table with `nodes` points
    /// spanning the atom range plus a margin. Points outside the table are
    /// still evaluated exactly. Univariate atoms only; ignored otherwise.
    /// Intended for smooth bases, where it turns the O(atoms) cost of each
    /// centering term into O(1).
    pub fn with_centering_table(mut self, nodes: usize) -> Self {
        if self.atom_dim != 1 || nodes < 8 {
            return self;
        }
        let (min, max) = self.atoms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let pad = 0.25 * (max - min) + 1.0;
        let (lo, hi) = (min - pad, max + pad);
        let step = (hi - lo) / (nodes - 1) as f64;
        let grid: Vec<f64> = (0..nodes).map(|i| lo + step * i as f64).collect();
        self.table = None;
        let values = self.centering_many(&grid);
        self.table = Some(CenteringTable { lo, step, values });
        self
    }

    /// `m(y)`: mean over atoms `x` of `h(x, y)`.
    pub fn centering(&self, y: &[f64]) -> f64 {
        if let Some(v) = self.table.as_ref().and_then(|t| t.get(y[0])) {
            return v;
        }
        self.centering_exact(y)
    }

    fn centering_exact(&self, y: &[f64]) -> f64 {
        let d = self.atom_dim;
        let mut s = NeumaierSum::default();
        for x in self.atoms.chunks_exact(d) {
            s.add(self.base.eval(x, y));
        }
        s.value() / self.atom_count() as f64
    }

    /// `m` at each of `points`, evaluated through one bound evaluator.
    pub fn centering_many(&self, points: &[f64]) -> Vec<f64> {
        if let Some(t) = &self.table {
            return points.iter().map(|&y| t.get(y).unwrap_or_else(|| self.centering_exact(&[y]))).collect();
        }
        let a = self.atom_count();
        let mut joint = self.atoms.clone();
        joint.extend_from_slice(points);
        let bound = self.base.bind(&joint, self.atom_dim);
        let n = points.len() / self.atom_dim;
        (0..n)
            .into_par_iter()
            .map(|j| {
                let mut s = NeumaierSum::default();
                for i in 0..a {
                    s.add(bound.pair(i, a + j));
                }
                s.value() / a as f64
            })
            .collect()
    }
}

impl Kernel for DegenerateKernel {
    fn dim(&self) -> Option<usize> {
        Some(self.atom_dim)
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.base.eval(x, y) - self.centering(x) - self.centering(y) + self.grand_mean
    }

    fn bind(&self, points: &[f64], dim: usize) -> Box<dyn PairEval + '_> {
        let m = self.centering_many(points);
        Box::new(CenteredBound { inner: self.base.bind(points, dim), m, grand: self.grand_mean })
    }
}

struct CenteredBound<'a> {
    inner: Box<dyn PairEval + 'a>,
    m: Vec<f64>,
    grand: f64,
}

impl PairEval for CenteredBound<'_> {
    fn len(&self) -> usize {
        self.m.len()
    }

    #[inline]
    fn pair(&self, i: usize, j: usize) -> f64 {
        self.inner.pair(i, j) - self.m[i] - self.m[j] + self.grand
    }
}

/// `h` clipped to `[-c_h, c_h]`.
#[derive(Clone)]
pub struct ClippedKernel {
    base: Arc<dyn Kernel>,
    c_h: f64,
}

impl Kernel for ClippedKernel {
    fn dim(&self) -> Option<usize> {
        self.base.dim()
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.base.eval(x, y).clamp(-self.c_h, self.c_h)
    }

    fn bind(&self, points: &[f64], dim: usize) -> Box<dyn PairEval + '_> {
        Box::new(ClippedBound { inner: self.base.bind(points, dim), c_h: self.c_h })
    }
}

struct ClippedBound<'a> {
    inner: Box<dyn PairEval + 'a>,
    c_h: f64,
}

impl PairEval for ClippedBound<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    #[inline]
    fn pair(&self, i: usize, j: usize) -> f64 {
        self.inner.pair(i, j).clamp(-self.c_h, self.c_h)
    }
}

/// Bounded kernel `h_c`: `h` clipped at `c_h = max_{[-c,c]^2} |h|`, then
/// re-centered against the atom set (when one is given).
#[derive(Clone)]
pub struct TruncatedKernel {
    pub c: f64,
    pub c_h: f64,
    clipped: Arc<ClippedKernel>,
    centered: Option<DegenerateKernel>,
}

impl fmt::Debug for TruncatedKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncatedKernel").field("c", &self.c).field("c_h", &self.c_h).finish()
    }
}

/// Number of grid points per axis used to locate `c_h`.
pub const TRUNCATION_GRID: usize = 201;

/// Builds `h_c` for a univariate kernel. An empty atom set skips re-centering.
pub fn truncate(base: Arc<dyn Kernel>, c: f64, atoms: &[f64]) -> Result<TruncatedKernel> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidC(c));
    }
    base.check_dim(1)?;
    let grid: Vec<f64> = (0..TRUNCATION_GRID)
        .map(|i| -c + 2.0 * c * i as f64 / (TRUNCATION_GRID - 1) as f64)
        .collect();
    let bound = base.bind(&grid, 1);
    let c_h = (0..TRUNCATION_GRID)
        .into_par_iter()
        .map(|i| (i..TRUNCATION_GRID).map(|j| bound.pair(i, j).abs()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    drop(bound);
    let clipped = Arc::new(ClippedKernel { base, c_h });
    let centered = if atoms.is_empty() { None } else { Some(degenerate(clipped.clone(), atoms, 1)?) };
    Ok(TruncatedKernel { c, c_h, clipped, centered })
}

impl TruncatedKernel {
    /// The clipped kernel before re-centering.
    pub fn clipped(&self) -> &ClippedKernel {
        &self.clipped
    }

    pub fn centered(&self) -> Option<&DegenerateKernel> {
        self.centered.as_ref()
    }
}

impl Kernel for TruncatedKernel {
    fn dim(&self) -> Option<usize> {
        Some(1)
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.centered {
            Some(k) => k.eval(x, y),
            None => self.clipped.eval(x, y),
        }
    }

    fn bind(&self, points: &[f64], dim: usize) -> Box<dyn PairEval + '_> {
        match &self.centered {
            Some(k) => k.bind(points, dim),
            None => self.clipped.bind(points, dim),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal<R: Rng>(rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }

    /// Adaptive Simpson on [a, b].
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    fn quadrature_symmetry(x: f64, y: f64, gamma: f64, mu: f64) -> f64 {
        let f = |t: f64| (t * (x - mu)).sin() * (t * (y - mu)).sin() * (-t * t / (2.0 * gamma * gamma)).exp();
        // even integrand; Gaussian weight negligible beyond 12 gamma
        let upper = 12.0 * gamma;
        let pieces = 48;
        (0..pieces)
            .map(|k| {
                let a = upper * k as f64 / pieces as f64;
                let b = upper * (k + 1) as f64 / pieces as f64;
                2.0 * adaptive_simpson(&f, a, b, 1e-13)
            })
            .sum()
    }

    #[test]
    fn symmetry_kernel_basic_values() {
        assert_eq!(eval_symmetry_kernel(0.3, 0.3, 1.0, 0.3).unwrap(), 0.0);
        let (g, s) = (1.3, 0.7);
        let v = eval_symmetry_kernel(0.5 + s, 0.5 - s, g, 0.5).unwrap();
        let expect = -(g * (2.0 * PI).sqrt() / 2.0) * (1.0 - (-2.0 * g * g * s * s).exp());
        assert!((v - expect).abs() < 1e-14);
        assert!(v <= 0.0);
        assert!((v - quadrature_symmetry(0.5 + s, 0.5 - s, g, 0.5)).abs() < 1e-8);
        let v = eval_symmetry_kernel(1.0, 2.0, 1.0, 0.0).unwrap();
        assert!((v - quadrature_symmetry(1.0, 2.0, 1.0, 0.0)).abs() < 1e-8);
        assert!(matches!(eval_symmetry_kernel(1.0, 2.0, 0.0, 0.0), Err(Error::InvalidScale(_))));
    }

    #[test]
    fn symmetry_kernel_matches_quadrature_on_random_inputs() {
        let mut rng = rng::stream(1, Purpose::Probe, 0);
        for _ in 0..100 {
            let x = rng.random_range(-3.0..3.0);
            let y = rng.random_range(-3.0..3.0);
            let g = rng.random_range(0.3..2.0);
            let closed = eval_symmetry_kernel(x, y, g, 0.0).unwrap();
            let quad = quadrature_symmetry(x, y, g, 0.0);
            assert!((closed - quad).abs() <= 1e-7, "({x},{y},{g}): {closed} vs {quad}");
        }
    }

    #[test]
    fn modelspec_kernel_values() {
        let g0 = RegressionMap::Linear { a: 0.5 };
        assert_eq!(eval_modelspec_kernel((0.5, 1.0), (3.0, -2.0), &g0, 0.7).unwrap(), 0.0);
        let a = eval_modelspec_kernel((1.2, 0.3), (-0.4, 2.0), &g0, 0.8).unwrap();
        let b = eval_modelspec_kernel((-0.4, 2.0), (1.2, 0.3), &g0, 0.8).unwrap();
        assert_eq!(a, b);
        let v = eval_modelspec_kernel((1.0, 0.0), (2.0, 0.0), &RegressionMap::Zero, 1.0).unwrap();
        assert_eq!(v, 2.0);
        assert!(matches!(
            eval_modelspec_kernel((1.0, 0.0), (2.0, 0.0), &RegressionMap::Zero, -1.0),
            Err(Error::InvalidBandwidth(_))
        ));
    }

    fn kernel_catalog() -> Vec<BivariateKernel> {
        vec![
            BivariateKernel::symmetry(1.0, 0.0).unwrap(),
            BivariateKernel::symmetry(0.6, 0.4).unwrap(),
            BivariateKernel::modelspec(RegressionMap::ScaledTanh { scale: 0.8 }, 0.7).unwrap(),
            BivariateKernel::Product,
            BivariateKernel::Custom(CustomKernel::new("abs-diff", 1, |x, y| -(x[0] - y[0]).abs()).unwrap()),
        ]
    }

    #[test]
    fn every_form_is_symmetric() {
        let mut rng = rng::stream(2, Purpose::Probe, 0);
        for k in kernel_catalog() {
            let d = k.dim().unwrap_or(1);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..d).map(|_| 2.0 * normal(&mut rng)).collect();
                let y: Vec<f64> = (0..d).map(|_| 2.0 * normal(&mut rng)).collect();
                assert!((k.eval(&x, &y) - k.eval(&y, &x)).abs() <= 1e-12, "{k:?}");
            }
        }
    }

    #[test]
    fn bound_evaluators_match_direct_evaluation() {
        let mut rng = rng::stream(3, Purpose::Probe, 0);
        for k in kernel_catalog() {
            let d = k.dim().unwrap_or(1);
            let pts: Vec<f64> = (0..40 * d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let b = k.bind(&pts, d);
            for i in 0..40 {
                for j in 0..40 {
                    let direct = k.eval(&pts[i * d..(i + 1) * d], &pts[j * d..(j + 1) * d]);
                    assert!((b.pair(i, j) - direct).abs() < 1e-12, "{k:?}");
                }
            }
        }
    }

    #[test]
    fn custom_kernel_must_be_symmetric() {
        assert!(CustomKernel::new("skew", 1, |x, y| x[0] - 2.0 * y[0]).is_err());
    }

    #[test]
    fn symmetry_lipschitz_certificate() {
        let mut rng = rng::stream(4, Purpose::Probe, 0);
        for gamma in [0.5, 1.0, 2.0] {
            let k = BivariateKernel::symmetry(gamma, 0.0).unwrap();
            let bound = k.lip_bound().unwrap();
            for _ in 0..5000 {
                let x = rng.random_range(-4.0..4.0);
                let dx = rng.random_range(-0.01..0.01);
                let y = rng.random_range(-4.0..4.0);
                let slope = (k.eval(&[x + dx], &[y]) - k.eval(&[x], &[y])).abs() / dx.abs();
                assert!(slope <= bound, "gamma {gamma}: slope {slope} > {bound}");
            }
        }
    }

    #[test]
    fn degenerate_product_kernel_on_three_atoms() {
        let atoms = [-1.0, 0.0, 2.0];
        let dk = degenerate(Arc::new(BivariateKernel::Product), &atoms, 1).unwrap();
        // brute force over the atoms: m(y) = mean(x) y = y/3, m_bar = 1/9
        for &x in &[-2.0, 0.5, 3.0] {
            for &y in &[-1.0, 0.0, 4.0] {
                let expect = (x - 1.0 / 3.0) * (y - 1.0 / 3.0);
                assert!((dk.eval(&[x], &[y]) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn degenerate_constant_kernel_vanishes() {
        let c = CustomKernel::new("const", 1, |_, _| 3.5).unwrap();
        let dk = degenerate(Arc::new(BivariateKernel::Custom(c)), &[0.1, 0.2, 5.0], 1).unwrap();
        assert!(dk.eval(&[1.0], &[-7.0]).abs() < 1e-14);
    }

    #[test]
    fn degenerating_a_centered_kernel_is_identity_on_atoms() {
        // Product kernel with mean-zero atoms is already centered.
        let atoms = [-2.0, -0.5, 0.5, 2.0];
        let dk = degenerate(Arc::new(BivariateKernel::Product), &atoms, 1).unwrap();
        for &x in &atoms {
            for &y in &atoms {
                assert!((dk.eval(&[x], &[y]) - x * y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empirical_degeneracy_holds_on_atoms() {
        let mut rng = rng::stream(5, Purpose::Probe, 0);
        let atoms: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..3.0)).collect();
        let dk = degenerate(Arc::new(BivariateKernel::symmetry(1.0, 0.0).unwrap()), &atoms, 1).unwrap();
        let b = dk.bind(&atoms, 1);
        for j in 0..atoms.len() {
            let mean = (0..atoms.len()).map(|i| b.pair(i, j)).sum::<f64>() / atoms.len() as f64;
            assert!(mean.abs() <= 1e-10);
        }
        assert!(matches!(
            degenerate(Arc::new(BivariateKernel::Product), &[], 1),
            Err(Error::EmptyAtoms)
        ));
    }

    #[test]
    fn symmetric_atoms_make_symmetry_kernel_degenerate() {
        let mu = 0.7;
        let half: Vec<f64> = (1..=50).map(|i| 0.07 * i as f64).collect();
        let atoms: Vec<f64> = half.iter().flat_map(|d| [mu + d, mu - d]).collect();
        let dk = degenerate(Arc::new(BivariateKernel::symmetry(1.0, mu).unwrap()), &atoms, 1).unwrap();
        assert!(dk.row_means().iter().all(|m| m.abs() < 1e-10));
        assert!(dk.grand_mean().abs() < 1e-10);
        for y in [-1.0, 0.0, 2.5] {
            assert!(dk.centering(&[y]).abs() < 1e-10);
        }
    }

    #[test]
    fn centering_table_matches_exact_centering() {
        let mut rng = rng::stream(7, Purpose::Probe, 0);
        let atoms: Vec<f64> = (0..2000).map(|_| 1.5 * normal(&mut rng)).collect();
        let exact = degenerate(Arc::new(BivariateKernel::symmetry(1.0, 0.0).unwrap()), &atoms, 1).unwrap();
        let tabled = exact.clone().with_centering_table(4096);
        let probe: Vec<f64> = (0..500).map(|_| rng.random_range(-12.0..12.0)).collect();
        let a = exact.centering_many(&probe);
        let b = tabled.centering_many(&probe);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn truncation_of_product_kernel() {
        let tk = truncate(Arc::new(BivariateKernel::Product), 1.0, &[]).unwrap();
        assert!((tk.c_h - 1.0).abs() < 1e-12);
        assert_eq!(tk.clipped().eval(&[10.0], &[10.0]), 1.0);
        assert_eq!(tk.clipped().eval(&[-10.0], &[10.0]), -1.0);
        assert_eq!(tk.clipped().eval(&[0.5], &[0.5]), 0.25);
        assert!(matches!(truncate(Arc::new(BivariateKernel::Product), 0.0, &[]), Err(Error::InvalidC(_))));
    }

    #[test]
    fn truncation_is_inactive_inside_the_box_for_symmetry_kernel() {
        let k = Arc::new(BivariateKernel::symmetry(1.0, 0.0).unwrap());
        let c = 3.0;
        let tk = truncate(k.clone(), c, &[]).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..TRUNCATION_GRID {
            for j in 0..TRUNCATION_GRID {
                let x = -c + 2.0 * c * i as f64 / 200.0;
                let y = -c + 2.0 * c * j as f64 / 200.0;
                sup = sup.max((tk.clipped().eval(&[x], &[y]) - k.eval(&[x], &[y])).abs());
            }
        }
        assert_eq!(sup, 0.0);
    }

    #[test]
    fn truncation_is_identity_when_c_covers_the_atoms() {
        let atoms = [-1.0, -0.25, 0.5, 1.0];
        let tk = truncate(Arc::new(BivariateKernel::Product), 2.0, &atoms).unwrap();
        let dk = degenerate(Arc::new(BivariateKernel::Product), &atoms, 1).unwrap();
        for &x in &atoms {
            for &y in &atoms {
                assert!((tk.eval(&[x], &[y]) - dk.eval(&[x], &[y])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn truncated_kernel_bounded_by_four_c_h() {
        let mut rng = rng::stream(6, Purpose::Probe, 0);
        let atoms: Vec<f64> = (0..200).map(|_| 3.0 * normal(&mut rng)).collect();
        let tk = truncate(Arc::new(BivariateKernel::Product), 1.5, &atoms).unwrap();
        for _ in 0..5000 {
            let x = rng.random_range(-20.0..20.0);
            let y = rng.random_range(-20.0..20.0);
            assert!(tk.eval(&[x], &[y]).abs() <= 4.0 * tk.c_h + 1e-12);
        }
    }
}
