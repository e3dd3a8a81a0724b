//! Exact O(n²) evaluation of nUₙ and nVₙ.
//!
//! Off-diagonal pairs `i < j` are evaluated once and doubled. The index range
//! is cut into fixed tiles; each tile row is reduced with compensated
//! summation and the row partials are combined in index order, so the result
//! does not depend on how many threads ran the rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, PairEval};
use crate::process::TimeSeries;

/// Tile edge for the blocked double sum.
pub const TILE: usize = 64;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn merge(&mut self, other: NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticValue {
    /// nUₙ = (1/n) Σ_{j≠k} h(X_j, X_k)
    pub n_u: f64,
    /// nVₙ = (1/n) Σ_{j,k} h(X_j, X_k)
    pub n_v: f64,
    /// (1/n) Σ_k h(X_k, X_k)
    pub diag_mean: f64,
    pub n: usize,
}

/// `(Σ_{i<j} h, Σ_i h(i,i))` over a bound point set.
pub fn pair_sums(bound: &dyn PairEval) -> (f64, f64) {
    let n = bound.len();
    let tiles = n.div_ceil(TILE);
    let rows: Vec<NeumaierSum> = (0..tiles)
        .into_par_iter()
        .map(|r| {
            let mut acc = NeumaierSum::default();
            let i0 = r * TILE;
            let i1 = (i0 + TILE).min(n);
            for c in r..tiles {
                let j0 = c * TILE;
                let j1 = (j0 + TILE).min(n);
                let mut tile = NeumaierSum::default();
                for i in i0..i1 {
                    for j in j0.max(i + 1)..j1 {
                        tile.add(bound.pair(i, j));
                    }
                }
                acc.merge(tile);
            }
            acc
        })
        .collect();
    let mut off = NeumaierSum::default();
    rows.into_iter().for_each(|r| off.merge(r));
    let diag: NeumaierSum = (0..n).map(|i| bound.pair(i, i)).collect();
    (off.value(), diag.value())
}

/// Statistic over a bound evaluator.
pub fn from_bound(bound: &dyn PairEval) -> Result<StatisticValue> {
    let n = bound.len();
    if n < 2 {
        return Err(Error::SampleTooSmall { needed: 2, got: n });
    }
    let (off, diag) = pair_sums(bound);
    let nf = n as f64;
    Ok(StatisticValue { n_u: 2.0 * off / nf, n_v: (2.0 * off + diag) / nf, diag_mean: diag / nf, n })
}

/// Statistic over raw row-major points of dimension `dim`.
pub fn compute_points<K: Kernel + ?Sized>(points: &[f64], dim: usize, kernel: &K) -> Result<StatisticValue> {
    kernel.check_dim(dim)?;
    let n = points.len() / dim.max(1);
    if n < 2 {
        return Err(Error::SampleTooSmall { needed: 2, got: n });
    }
    from_bound(kernel.bind(points, dim).as_ref())
}

/// nUₙ and nVₙ of `kernel` over the sample.
pub fn compute<K: Kernel + ?Sized>(series: &TimeSeries, kernel: &K) -> Result<StatisticValue> {
    compute_points(&series.values, series.dim, kernel)
}

/// Lagged pair points `Z_k = (X_k, X_{k-1})`, `k = 1..n-1`, row-major.
pub fn lagged_pairs(values: &[f64]) -> Vec<f64> {
    values.windows(2).flat_map(|w| [w[1], w[0]]).collect()
}

/// Statistic over the `n-1` lagged pair points of a univariate series.
/// `n_u` carries Tₙ.
pub fn compute_for_pairs<K: Kernel + ?Sized>(series: &TimeSeries, kernel: &K) -> Result<StatisticValue> {
    if series.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: series.dim });
    }
    if series.len() < 3 {
        return Err(Error::SampleTooSmall { needed: 3, got: series.len() });
    }
    compute_points(&lagged_pairs(&series.values), 2, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BivariateKernel, CustomKernel};
    use crate::process::RegressionMap;
    use crate::rng::{stream, Purpose};
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn naive(points: &[f64], dim: usize, k: &dyn Kernel) -> (f64, f64) {
        let n = points.len() / dim;
        let (mut u, mut v) = (0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let h = k.eval(&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]);
                v += h;
                if i != j {
                    u += h;
                }
            }
        }
        (u / n as f64, v / n as f64)
    }

    #[test]
    fn three_point_product_example() {
        let s = TimeSeries::from_values(vec![1.0, -1.0, 2.0]);
        let st = compute(&s, &BivariateKernel::Product).unwrap();
        assert!((st.n_v - 4.0 / 3.0).abs() < 1e-15);
        assert!((st.n_u + 2.0 / 3.0).abs() < 1e-15);
        assert!((st.diag_mean - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let zero = BivariateKernel::Custom(CustomKernel::new("zero", 1, |_, _| 0.0).unwrap());
        let st = compute(&TimeSeries::from_values(vec![0.3, 1.0, -2.0, 5.0]), &zero).unwrap();
        assert_eq!((st.n_u, st.n_v), (0.0, 0.0));
    }

    #[test]
    fn product_identity_and_scaling() {
        let mut rng = stream(11, Purpose::Probe, 0);
        let x: Vec<f64> = (0..777).map(|_| rng.random_range(-3.0..3.0)).collect();
        let n = x.len() as f64;
        let s: f64 = x.iter().sum();
        let q: f64 = x.iter().map(|v| v * v).sum();
        let st = compute(&TimeSeries::from_values(x.clone()), &BivariateKernel::Product).unwrap();
        assert!((st.n_u - (s * s - q) / n).abs() < 1e-9 * st.n_u.abs().max(1.0));
        let c = -2.5;
        let scaled = compute(&TimeSeries::from_values(x.iter().map(|v| c * v).collect()), &BivariateKernel::Product).unwrap();
        assert!((scaled.n_u - c * c * st.n_u).abs() < 1e-9 * scaled.n_u.abs().max(1.0));
        assert!((scaled.n_v - c * c * st.n_v).abs() < 1e-9 * scaled.n_v.abs().max(1.0));
    }

    #[test]
    fn blocked_sum_matches_naive_loop() {
        let mut rng = stream(12, Purpose::Probe, 0);
        let kernels = [
            BivariateKernel::symmetry(1.0, 0.0).unwrap(),
            BivariateKernel::modelspec(RegressionMap::Linear { a: 0.5 }, 1.0).unwrap(),
            BivariateKernel::Product,
        ];
        for (case, n) in [2usize, 3, 63, 64, 65, 200, 333].into_iter().enumerate() {
            let k = &kernels[case % 3];
            let dim = k.dim().unwrap_or(1);
            let pts: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            let st = compute_points(&pts, dim, k).unwrap();
            let (u, v) = naive(&pts, dim, k);
            assert!((st.n_u - u).abs() <= 1e-9 * u.abs().max(1.0), "n={n}");
            assert!((st.n_v - v).abs() <= 1e-9 * v.abs().max(1.0), "n={n}");
        }
    }

    #[test]
    fn symmetry_statistic_is_permutation_invariant() {
        let mut rng = stream(13, Purpose::Probe, 0);
        let mut x: Vec<f64> = (0..300).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k = BivariateKernel::symmetry(1.0, 0.0).unwrap();
        let a = compute(&TimeSeries::from_values(x.clone()), &k).unwrap();
        x.shuffle(&mut rng);
        let b = compute(&TimeSeries::from_values(x), &k).unwrap();
        assert!((a.n_u - b.n_u).abs() < 1e-10 * a.n_u.abs().max(1.0));
    }

    #[test]
    fn pairs_statistic_brute_force() {
        let x = [0.4, -1.1, 0.7, 2.0];
        let k = BivariateKernel::modelspec(RegressionMap::Zero, 1.0).unwrap();
        let st = compute_for_pairs(&TimeSeries::from_values(x.to_vec()), &k).unwrap();
        let z: Vec<(f64, f64)> = (1..4).map(|t| (x[t], x[t - 1])).collect();
        let mut t = 0.0;
        for j in 0..3 {
            for i in 0..3 {
                if i != j {
                    t += z[i].0 * z[j].0 * (-0.5 * (z[i].1 - z[j].1).powi(2)).exp();
                }
            }
        }
        assert!((st.n_u - t / 3.0).abs() < 1e-14);
        assert_eq!(st.n, 3);
    }

    #[test]
    fn pairs_statistic_vanishes_without_innovations() {
        let mut x = vec![1.7];
        for _ in 0..50 {
            let p = *x.last().unwrap();
            x.push(0.5 * p);
        }
        let k = BivariateKernel::modelspec(RegressionMap::Linear { a: 0.5 }, 1.0).unwrap();
        let st = compute_for_pairs(&TimeSeries::from_values(x), &k).unwrap();
        assert_eq!(st.n_u, 0.0);
    }

    #[test]
    fn small_samples_rejected() {
        assert!(matches!(
            compute(&TimeSeries::from_values(vec![1.0]), &BivariateKernel::Product),
            Err(Error::SampleTooSmall { .. })
        ));
        let k = BivariateKernel::modelspec(RegressionMap::Zero, 1.0).unwrap();
        assert!(matches!(
            compute_for_pairs(&TimeSeries::from_values(vec![1.0, 2.0]), &k),
            Err(Error::SampleTooSmall { .. })
        ));
        assert!(matches!(
            compute(&TimeSeries::from_values(vec![1.0, 2.0]), &k),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn result_independent_of_thread_count() {
        let mut rng = stream(14, Purpose::Probe, 0);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let k = BivariateKernel::symmetry(1.0, 0.0).unwrap();
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| compute(&TimeSeries::from_values(x.clone()), &k).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.n_u.to_bits(), b.n_u.to_bits());
        assert_eq!(a.n_v.to_bits(), b.n_v.to_bits());
    }
}
