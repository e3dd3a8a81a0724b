//! Model-based bootstrap for the two shipped tests.
//!
//! The model-specification test resamples recentered residuals of the null
//! regression map. The symmetry test fits a linear AR(1) with intercept,
//! resamples its residuals, and evaluates replicates with the symmetry kernel
//! re-centered against a long auxiliary bootstrap path.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{degenerate, BivariateKernel, DegenerateKernel};
use crate::process::{residuals, RegressionMap, TimeSeries};
use crate::rng::{self, Purpose};
use crate::ustat;

/// Smallest replicate count considered adequate for a decision.
pub const MIN_DECISION_REPLICATES: usize = 99;
/// Largest fitted AR coefficient magnitude kept by the symmetry bootstrap.
pub const AR_CLIP: f64 = 0.99;
/// Nodes of the tabulated centering function used for bootstrap kernels.
pub const CENTERING_NODES: usize = 4096;
/// Auxiliary path length per observation for the symmetry bootstrap atoms.
/// Centering noise enters the replicates at order sqrt(n / atoms), so the
/// atom path must grow with the sample.
pub const ATOMS_PER_OBS: usize = 25;
/// Minimum sample size for either test.
pub const MIN_SAMPLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BootstrapScheme {
    /// Resample residuals of a known null map.
    ResidualAR1,
    /// Resample residuals of a least-squares AR(1) fit.
    LinearARFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub scheme: BootstrapScheme,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(default = "default_star_burn_in")]
    pub star_burn_in: usize,
    /// Minimum auxiliary path length for the symmetry bootstrap atoms.
    #[serde(default = "default_marg_path_len")]
    pub marg_path_len: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_star_burn_in() -> usize {
    200
}

fn default_marg_path_len() -> usize {
    2000
}

impl BootstrapPlan {
    pub fn new(scheme: BootstrapScheme, b: usize, seed: u64) -> Self {
        BootstrapPlan { scheme, b, star_burn_in: default_star_burn_in(), marg_path_len: default_marg_path_len(), seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        BootstrapPlan { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidParams("bootstrap replicate count B must be >= 1".into()));
        }
        if self.marg_path_len < 2 {
            return Err(Error::InvalidParams("marg_path_len must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks_vs_replicates: Option<f64>,
    /// Fitted AR(1) slope and intercept (symmetry test).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_intercept: Option<f64>,
    #[serde(default)]
    pub a_clipped: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub replicates: Vec<f64>,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub diagnostics: Diagnostics,
}

impl TestOutcome {
    fn new(statistic: f64, replicates: Vec<f64>, alpha: f64, diagnostics: Diagnostics) -> Result<Self> {
        let p_value = pvalue(statistic, &replicates)?;
        Ok(TestOutcome { statistic, replicates, p_value, alpha, reject: p_value <= alpha, diagnostics })
    }
}

/// `(1 + #{r >= statistic}) / (B + 1)`.
pub fn pvalue(statistic: f64, replicates: &[f64]) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::EmptyReplicates);
    }
    let exceed = replicates.iter().filter(|&&r| r >= statistic).count();
    Ok((1 + exceed) as f64 / (replicates.len() + 1) as f64)
}

/// Writes one replicate per line under the header `replicate,value`.
pub fn write_replicates_csv(path: &Path, replicates: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "replicate,value")?;
    for (i, r) in replicates.iter().enumerate() {
        writeln!(f, "{i},{r:.16e}")?;
    }
    f.flush()?;
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn small_b_warning(plan: &BootstrapPlan, diag: &mut Diagnostics) {
    if plan.b < MIN_DECISION_REPLICATES {
        let msg = format!("B = {} is below {MIN_DECISION_REPLICATES}; p-values are coarse", plan.b);
        warn!("{msg}");
        diag.warnings.push(msg);
    }
}

fn recenter(mut eps: Vec<f64>) -> Vec<f64> {
    let mean = eps.iter().sum::<f64>() / eps.len() as f64;
    eps.iter_mut().for_each(|e| *e -= mean);
    eps
}

/// A bootstrap path of `len` values: the start is `burn_in` recursion steps
/// from a random residual atom, and every innovation is a uniform draw from
/// `atoms`.
fn bootstrap_path<R: Rng, F: Fn(f64) -> f64>(g: F, atoms: &[f64], len: usize, burn_in: usize, rng: &mut R) -> Vec<f64> {
    let k = atoms.len();
    let mut x = atoms[rng.random_range(0..k)];
    for _ in 0..burn_in {
        x = g(x) + atoms[rng.random_range(0..k)];
    }
    let mut path = Vec::with_capacity(len);
    path.push(x);
    for _ in 1..len {
        x = g(x) + atoms[rng.random_range(0..k)];
        path.push(x);
    }
    path
}

/// Tₙ* on the path `x0, g0(x0) + eps[0], ...` (one value per innovation plus
/// the start).
pub fn modelspec_replicate(g0: &RegressionMap, bw: f64, x0: f64, eps: &[f64]) -> Result<f64> {
    let kernel = BivariateKernel::modelspec(g0.clone(), bw)?;
    let mut path = Vec::with_capacity(eps.len() + 1);
    let mut x = x0;
    path.push(x);
    for e in eps {
        x = g0.eval(x) + e;
        path.push(x);
    }
    Ok(ustat::compute_points(&ustat::lagged_pairs(&path), 2, &kernel)?.n_u)
}

/// Residual-bootstrap model-specification test of `H0: X_t = g0(X_{t-1}) + e_t`.
pub fn bootstrap_modelspec(
    series: &TimeSeries,
    g0: &RegressionMap,
    bw: f64,
    plan: &BootstrapPlan,
    alpha: f64,
) -> Result<TestOutcome> {
    plan.validate()?;
    check_alpha(alpha)?;
    if series.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: series.dim });
    }
    if series.len() < MIN_SAMPLE {
        return Err(Error::SampleTooSmall { needed: MIN_SAMPLE, got: series.len() });
    }
    g0.check_contracting()?;
    let kernel = BivariateKernel::modelspec(g0.clone(), bw)?;
    let statistic = ustat::compute_for_pairs(series, &kernel)?.n_u;
    let eps = recenter(residuals(series, g0)?);
    let n = series.len();
    let mut diag = Diagnostics::default();
    small_b_warning(plan, &mut diag);

    let replicates = (0..plan.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(plan.seed, Purpose::BootstrapReplicate, b as u64);
            let path = bootstrap_path(|x| g0.eval(x), &eps, n, plan.star_burn_in, &mut rng);
            Ok(ustat::compute_points(&ustat::lagged_pairs(&path), 2, &kernel)?.n_u)
        })
        .collect::<Result<Vec<f64>>>()?;
    TestOutcome::new(statistic, replicates, alpha, diag)
}

/// Least-squares AR(1) with intercept: `(c, a)` minimizing `sum (x_t - c - a x_{t-1})^2`.
pub fn fit_ar1(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 3 {
        return Err(Error::SampleTooSmall { needed: 3, got: values.len() });
    }
    let m = (values.len() - 1) as f64;
    let mean_prev = values[..values.len() - 1].iter().sum::<f64>() / m;
    let mean_next = values[1..].iter().sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for w in values.windows(2) {
        let dp = w[0] - mean_prev;
        sxy += dp * (w[1] - mean_next);
        sxx += dp * dp;
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidParams("AR(1) fit on a constant series".into()));
    }
    let a = sxy / sxx;
    Ok((mean_next - a * mean_prev, a))
}

/// The bootstrap kernel: the symmetry kernel centered against the values of
/// one auxiliary bootstrap path.
pub fn symmetry_bootstrap_kernel(
    gamma: f64,
    mu: f64,
    atoms: &[f64],
) -> Result<DegenerateKernel> {
    let base = Arc::new(BivariateKernel::symmetry(gamma, mu)?);
    Ok(degenerate(base, atoms, 1)?.with_centering_table(CENTERING_NODES))
}

/// Bootstrap test of symmetry of the marginal law about `mu`.
///
/// The observed statistic is the V-statistic of the raw kernel; replicates
/// use the kernel re-centered against the bootstrap marginal.
pub fn bootstrap_symmetry(
    series: &TimeSeries,
    gamma: f64,
    mu: f64,
    plan: &BootstrapPlan,
    alpha: f64,
) -> Result<TestOutcome> {
    plan.validate()?;
    check_alpha(alpha)?;
    if plan.scheme != BootstrapScheme::LinearARFit {
        return Err(Error::InvalidParams("symmetry test requires the LinearARFit scheme".into()));
    }
    if series.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: series.dim });
    }
    if series.len() < MIN_SAMPLE {
        return Err(Error::SampleTooSmall { needed: MIN_SAMPLE, got: series.len() });
    }
    let raw = BivariateKernel::symmetry(gamma, mu)?;
    let statistic = ustat::compute(series, &raw)?.n_v;

    let mut diag = Diagnostics::default();
    small_b_warning(plan, &mut diag);
    let (c, mut a) = fit_ar1(&series.values)?;
    if a.abs() >= AR_CLIP {
        let msg = format!("fitted AR coefficient {a:.4} clipped to {:.2}", a.signum() * AR_CLIP);
        warn!("{msg}");
        diag.warnings.push(msg);
        diag.a_clipped = true;
        a = a.signum() * AR_CLIP;
    }
    diag.fitted_a = Some(a);
    diag.fitted_intercept = Some(c);
    let eps = recenter(series.values.windows(2).map(|w| w[1] - c - a * w[0]).collect());
    let g = |x: f64| c + a * x;
    let n = series.len();

    let mut atom_rng = rng::stream(plan.seed, Purpose::BootstrapAtoms, 0);
    let atom_len = plan.marg_path_len.max(ATOMS_PER_OBS * n);
    let atoms = bootstrap_path(g, &eps, atom_len, plan.star_burn_in, &mut atom_rng);
    let hstar = symmetry_bootstrap_kernel(gamma, mu, &atoms)?;

    let replicates = (0..plan.b)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(plan.seed, Purpose::BootstrapReplicate, b as u64);
            let path = bootstrap_path(g, &eps, n, plan.star_burn_in, &mut rng);
            Ok(ustat::compute_points(&path, 1, &hstar)?.n_v)
        })
        .collect::<Result<Vec<f64>>>()?;
    TestOutcome::new(statistic, replicates, alpha, diag)
}
