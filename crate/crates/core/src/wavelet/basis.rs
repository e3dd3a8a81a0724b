//! Daubechies scaling functions and wavelets tabulated on a dyadic grid.
//!
//! The low-pass filter comes from spectral factorization of the Daubechies
//! polynomial; φ at the integers is the normalized fixed point of the
//! refinement operator, and the cascade fills in the dyadic points level by
//! level. ψ follows from the quadrature-mirror filter applied to the φ table.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;
/// Largest eigen residual accepted for the integer-point eigenproblem.
pub const EIGEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", content = "order")]
pub enum WaveletFamily {
    /// Extremal-phase Daubechies wavelet with `N` vanishing moments (2N taps).
    Daubechies(usize),
}

impl Default for WaveletFamily {
    fn default() -> Self {
        WaveletFamily::Daubechies(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletBasis {
    pub family: WaveletFamily,
    /// Low-pass coefficients `c_k`, summing to √2.
    pub filter: Vec<f64>,
    pub resolution: u32,
    /// Both φ and ψ live on `[0, support_len]`.
    pub support_len: usize,
    /// φ(i / 2^resolution) for `i = 0..=support_len * 2^resolution`.
    pub phi_table: Vec<f64>,
    pub psi_table: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn poly_eval(coef: &[f64], z: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
    // value and derivative by Horner, coefficients in ascending order
    let mut p = Complex::new(0.0, 0.0);
    let mut dp = Complex::new(0.0, 0.0);
    for &c in coef.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of the real polynomial with ascending coefficients `coef`.
fn real_poly_roots(coef: &[f64]) -> Vec<Complex<f64>> {
    let deg = coef.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = coef[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coef[i] / lead;
    }
    comp.complex_eigenvalues()
        .iter()
        .map(|&r| {
            let mut z = r;
            for _ in 0..5 {
                let (p, dp) = poly_eval(coef, z);
                if dp.norm() == 0.0 {
                    break;
                }
                z -= p / dp;
            }
            z
        })
        .collect()
}

/// Daubechies low-pass filter with `n` vanishing moments, `2n` taps, sum √2.
pub fn daubechies_filter(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::UnsupportedFamily("Daubechies order must be >= 1".into()));
    }
    let p: Vec<f64> = (0..n).map(|k| binomial(n - 1 + k, k)).collect();
    // m0(z) = ((1 + z) / 2)^n * prod (z - z_i) / (1 - z_i), |z_i| < 1
    let mut m0 = vec![Complex::new(1.0, 0.0)];
    let mul = |poly: &Vec<Complex<f64>>, a: Complex<f64>, b: Complex<f64>| {
        // poly * (a + b z)
        let mut out = vec![Complex::new(0.0, 0.0); poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            out[i] += c * a;
            out[i + 1] += c * b;
        }
        out
    };
    for _ in 0..n {
        m0 = mul(&m0, Complex::new(0.5, 0.0), Complex::new(0.5, 0.0));
    }
    for y in real_poly_roots(&p) {
        let b = Complex::new(2.0, 0.0) - y * 4.0;
        let disc = (b * b - 4.0).sqrt();
        let (z1, z2) = ((b + disc) / 2.0, (b - disc) / 2.0);
        let z = if z1.norm() < z2.norm() { z1 } else { z2 };
        let scale = Complex::new(1.0, 0.0) / (Complex::new(1.0, 0.0) - z);
        m0 = mul(&m0, -z * scale, scale);
    }
    let mut c: Vec<f64> = m0.iter().map(|v| SQRT2 * v.re).collect();
    c.reverse();
    Ok(c)
}

/// φ at the integers `0..=2N-1`: the eigenvector for eigenvalue 1 of
/// `M[k][m] = √2 c_{2k-m}`, normalized to sum to one.
pub fn phi_at_integers(filter: &[f64]) -> Result<Vec<f64>> {
    let s = filter.len() - 1;
    let tap = |i: isize| if i >= 0 && (i as usize) < filter.len() { filter[i as usize] } else { 0.0 };
    let mut a = DMatrix::<f64>::zeros(s + 1, s + 1);
    for k in 0..=s {
        for m in 0..=s {
            a[(k, m)] = SQRT2 * tap(2 * k as isize - m as isize);
        }
        a[(k, k)] -= 1.0;
    }
    let svd = a.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("svd computed with v");
    let (imin, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if smin > EIGEN_TOL {
        return Err(Error::EigenFailure(smin));
    }
    let v: Vec<f64> = v_t.row(imin).iter().copied().collect();
    let total: f64 = v.iter().sum();
    if total.abs() < 1e-12 {
        return Err(Error::EigenFailure(smin));
    }
    let phi: Vec<f64> = v.iter().map(|x| x / total).collect();
    let resid = (&a * DMatrix::from_column_slice(s + 1, 1, &phi)).amax();
    if resid > EIGEN_TOL {
        return Err(Error::EigenFailure(resid));
    }
    Ok(phi)
}

/// Builds φ and ψ tables for `family` at dyadic depth `resolution`.
pub fn build_basis(family: WaveletFamily, resolution: u32) -> Result<WaveletBasis> {
    let WaveletFamily::Daubechies(n) = family;
    if n < 3 {
        return Err(Error::UnsupportedFamily(format!(
            "Daubechies-{n} is not Lipschitz; order 3 or higher is required"
        )));
    }
    if !(6..=14).contains(&resolution) {
        return Err(Error::InvalidParams(format!("resolution {resolution} outside [6, 14]")));
    }
    let filter = daubechies_filter(n)?;
    let s = 2 * n - 1;
    let scale = 1usize << resolution;
    let len = s * scale + 1;
    let mut phi = vec![0.0; len];
    for (k, v) in phi_at_integers(&filter)?.into_iter().enumerate() {
        phi[k * scale] = v;
    }
    // level l fills the odd multiples of 2^(resolution - l)
    for l in 1..=resolution {
        let step = 1usize << (resolution - l);
        let mut i = step;
        while i < len {
            let mut acc = 0.0;
            for (k, &c) in filter.iter().enumerate() {
                let idx = 2 * i as isize - (k * scale) as isize;
                if idx >= 0 && (idx as usize) < len {
                    acc += c * phi[idx as usize];
                }
            }
            phi[i] = SQRT2 * acc;
            i += 2 * step;
        }
    }
    let mut psi = vec![0.0; len];
    for (i, out) in psi.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..filter.len() {
            let d = if k % 2 == 0 { filter[s - k] } else { -filter[s - k] };
            let idx = 2 * i as isize - (k * scale) as isize;
            if idx >= 0 && (idx as usize) < len {
                acc += d * phi[idx as usize];
            }
        }
        *out = SQRT2 * acc;
    }
    Ok(WaveletBasis { family, filter, resolution, support_len: s, phi_table: phi, psi_table: psi })
}

impl WaveletBasis {
    /// Table spacing `2^-resolution`.
    pub fn step(&self) -> f64 {
        1.0 / (1u64 << self.resolution) as f64
    }

    #[inline]
    fn lookup(&self, table: &[f64], x: f64) -> f64 {
        if !(x > 0.0 && x < self.support_len as f64) {
            return 0.0;
        }
        let t = x * (1u64 << self.resolution) as f64;
        let i = t.floor();
        let k = i as usize;
        let w = t - i;
        if k + 1 >= table.len() {
            return table[table.len() - 1];
        }
        table[k] + w * (table[k + 1] - table[k])
    }

    /// φ(x) by linear interpolation in the table; zero off the support.
    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        self.lookup(&self.phi_table, x)
    }

    #[inline]
    pub fn psi(&self, x: f64) -> f64 {
        self.lookup(&self.psi_table, x)
    }

    /// Trapezoid integrals of φ and ψ over the table.
    pub fn integrals(&self) -> (f64, f64) {
        let h = self.step();
        let trap = |t: &[f64]| h * (t.iter().sum::<f64>() - 0.5 * (t[0] + t[t.len() - 1]));
        (trap(&self.phi_table), trap(&self.psi_table))
    }

    /// Largest `|Σ_k φ(x - k) - 1|` over the table points of `[0, 1)`.
    pub fn partition_of_unity_error(&self) -> f64 {
        let scale = 1usize << self.resolution;
        (0..scale)
            .map(|i| {
                let s: f64 = (0..self.support_len).map(|k| self.phi_table[i + k * scale]).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `|φ(x) - √2 Σ c_k φ(2x - k)|` at the table point `x = i / 2^resolution`,
    /// for `i` even so that `2x - k` stays on the table.
    pub fn refinement_residual(&self, i: usize) -> f64 {
        let scale = 1usize << self.resolution;
        let len = self.phi_table.len();
        let mut acc = 0.0;
        for (k, &c) in self.filter.iter().enumerate() {
            let idx = 2 * i as isize - (k * scale) as isize;
            if idx >= 0 && (idx as usize) < len {
                acc += c * self.phi_table[idx as usize];
            }
        }
        (self.phi_table[i] - SQRT2 * acc).abs()
    }
}
