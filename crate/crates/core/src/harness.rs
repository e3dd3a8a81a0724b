//! Experiment runner: Monte Carlo size and power studies, bootstrap versus
//! truth comparisons, limit-sampler studies and coupling diagnostics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{self, BootstrapPlan, BootstrapScheme, TestOutcome};
use crate::error::{Error, Result};
use crate::kernels::{BivariateKernel, Kernel};
use crate::process::{simulate, Innovation, ProcessModel, RegressionMap, TimeSeries};
use crate::rng::{derive_seed, Purpose};
use crate::tau::{self, CovarianceCheck, SummabilityReport, TauProfile};
use crate::ustat;
use crate::wavelet::{build_limit_model, LimitConfig, LimitModel, LimitSampler, StatisticKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    McSize,
    McPower,
    DistCompare,
    LimitStudy,
    TauStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestSpec {
    Symmetry { gamma: f64, mu: f64 },
    ModelSpec { g0: RegressionMap, bw: f64 },
}

impl TestSpec {
    pub fn scheme(&self) -> BootstrapScheme {
        match self {
            TestSpec::Symmetry { .. } => BootstrapScheme::LinearARFit,
            TestSpec::ModelSpec { .. } => BootstrapScheme::ResidualAR1,
        }
    }

    /// The observed test statistic on `series`.
    pub fn statistic(&self, series: &TimeSeries) -> Result<f64> {
        match self {
            TestSpec::Symmetry { gamma, mu } => {
                Ok(ustat::compute(series, &BivariateKernel::symmetry(*gamma, *mu)?)?.n_v)
            }
            TestSpec::ModelSpec { g0, bw } => {
                Ok(ustat::compute_for_pairs(series, &BivariateKernel::modelspec(g0.clone(), *bw)?)?.n_u)
            }
        }
    }

    pub fn run(&self, series: &TimeSeries, plan: &BootstrapPlan, alpha: f64) -> Result<TestOutcome> {
        match self {
            TestSpec::Symmetry { gamma, mu } => bootstrap::bootstrap_symmetry(series, *gamma, *mu, plan, alpha),
            TestSpec::ModelSpec { g0, bw } => bootstrap::bootstrap_modelspec(series, g0, *bw, plan, alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitKernel {
    /// The kernel of the configured test (symmetry only).
    Test,
    /// `h(x, y) = xy`.
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitStudyConfig {
    pub kernel: LimitKernel,
    pub statistic: StatisticKind,
    pub config: LimitConfig,
    /// Number of limit-law draws.
    pub draws: usize,
    /// Reuse the limit model stored here, or store a freshly built one.
    pub cache: Option<PathBuf>,
}

impl Default for LimitStudyConfig {
    fn default() -> Self {
        LimitStudyConfig {
            kernel: LimitKernel::Test,
            statistic: StatisticKind::V,
            config: LimitConfig::default(),
            draws: 5000,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TauStudyConfig {
    pub max_lag: usize,
    pub delta: f64,
    /// Trajectories for the covariance-inequality check; zero skips it.
    pub probe_samples: usize,
}

impl Default for TauStudyConfig {
    fn default() -> Self {
        TauStudyConfig { max_lag: 30, delta: 0.5, probe_samples: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ProcessModel,
    pub alt_model: Option<ProcessModel>,
    pub test: TestSpec,
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub plan: BootstrapPlan,
    pub alpha: f64,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Observed samples whose bootstrap distributions are compared with the
    /// Monte Carlo truth.
    pub base_samples: usize,
    /// Burn-in of simulated data; `None` uses the model default.
    pub burn_in: Option<usize>,
    pub limit: LimitStudyConfig,
    pub tau: TauStudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g0 = RegressionMap::Linear { a: 0.5 };
        ExperimentConfig {
            experiment: ExperimentKind::McSize,
            model: ProcessModel::linear_ar1(0.5, Innovation::GaussianStd),
            alt_model: None,
            test: TestSpec::ModelSpec { g0, bw: 1.0 },
            n: 200,
            m: 100,
            plan: BootstrapPlan::new(BootstrapScheme::ResidualAR1, 199, 0),
            alpha: 0.05,
            master_seed: 0,
            output_dir: None,
            base_samples: 20,
            burn_in: None,
            limit: LimitStudyConfig::default(),
            tau: TauStudyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.m < 1 {
            return bad("M must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        self.model.validate().map_err(|e| Error::ConfigInvalid(format!("model: {e}")))?;
        if let Some(alt) = &self.alt_model {
            alt.validate().map_err(|e| Error::ConfigInvalid(format!("alt_model: {e}")))?;
        }
        match self.experiment {
            ExperimentKind::McSize | ExperimentKind::McPower | ExperimentKind::DistCompare => {
                self.plan.validate().map_err(|e| Error::ConfigInvalid(format!("plan: {e}")))?;
                if self.plan.scheme != self.test.scheme() {
                    return bad(format!("{:?} test needs the {:?} scheme", self.test, self.test.scheme()));
                }
                if self.n < bootstrap::MIN_SAMPLE {
                    return bad(format!("n must be >= {}", bootstrap::MIN_SAMPLE));
                }
            }
            _ => {}
        }
        match self.experiment {
            ExperimentKind::McPower if self.alt_model.is_none() => bad("McPower needs alt_model".into()),
            ExperimentKind::DistCompare if self.base_samples < 1 => bad("base_samples must be >= 1".into()),
            ExperimentKind::LimitStudy if self.limit.draws < 1 => bad("limit.draws must be >= 1".into()),
            ExperimentKind::LimitStudy
                if self.limit.kernel == LimitKernel::Test && !matches!(self.test, TestSpec::Symmetry { .. }) =>
            {
                bad("the limit sampler covers univariate kernels only".into())
            }
            ExperimentKind::TauStudy if self.m < 2 => bad("TauStudy needs M >= 2 coupled pairs".into()),
            _ => Ok(()),
        }
    }

    fn burn_in_for(&self, model: &ProcessModel) -> usize {
        self.burn_in.unwrap_or_else(|| model.default_burn_in())
    }

    /// Data and bootstrap plan of replication `m` (drawn from `model`).
    pub fn replication_inputs(&self, model: &ProcessModel, m: usize) -> Result<(TimeSeries, BootstrapPlan)> {
        let data_seed = derive_seed(self.master_seed, Purpose::ReplicationData, m as u64);
        let series = simulate(model, self.n, data_seed, self.burn_in_for(model))?;
        let plan = self.plan.with_seed(derive_seed(self.master_seed, Purpose::ReplicationBootstrap, m as u64));
        Ok((series, plan))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsSummary {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub ks_vs_monte_carlo: f64,
    pub eigenvalues: Vec<f64>,
    pub centering: f64,
    pub v_offset: f64,
    pub draws_mean: f64,
    pub truth_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub profile: TauProfile,
    pub summability: Option<SummabilityReport>,
    pub covariance_checks: Vec<CovarianceCheck>,
    pub covariance_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate: Option<f64>,
    /// `sqrt(rate (1 - rate) / M)`
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_se: Option<f64>,
    pub replications: Vec<ReplicationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks: Option<KsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauSummary>,
    pub warnings: Vec<String>,
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    /// Writes the per-replication CSV `rep,statistic,p_value,reject`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "rep,statistic,p_value,reject")?;
        for r in &self.replications {
            writeln!(f, "{},{:.16e},{:.16e},{}", r.rep, r.statistic, r.p_value, r.reject)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`,
/// exact over the merged sample.
pub fn compare_distributions(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = if a[i].total_cmp(&b[j]).is_le() { a[i] } else { b[j] };
        while i < a.len() && a[i].total_cmp(&x).is_le() {
            i += 1;
        }
        while j < b.len() && b[j].total_cmp(&x).is_le() {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

fn tag(index: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Replication { index, source: Box::new(e) }
}

fn rejection(reps: &[ReplicationResult]) -> (f64, f64) {
    let m = reps.len() as f64;
    let rate = reps.iter().filter(|r| r.reject).count() as f64 / m;
    (rate, (rate * (1.0 - rate) / m).sqrt())
}

fn run_tests(config: &ExperimentConfig, model: &ProcessModel) -> Result<Vec<ReplicationResult>> {
    (0..config.m)
        .into_par_iter()
        .map(|m| {
            let (series, plan) = config.replication_inputs(model, m).map_err(tag(m))?;
            let out = config.test.run(&series, &plan, config.alpha).map_err(tag(m))?;
            Ok(ReplicationResult { rep: m, statistic: out.statistic, p_value: out.p_value, reject: out.reject })
        })
        .collect()
}

/// `M` Monte Carlo draws of the test statistic under `config.model`.
fn truth_draws(config: &ExperimentConfig, statistic: impl Fn(&TimeSeries) -> Result<f64> + Sync) -> Result<Vec<f64>> {
    let burn = config.burn_in_for(&config.model);
    (0..config.m)
        .into_par_iter()
        .map(|m| {
            let seed = derive_seed(config.master_seed, Purpose::TruthDraw, m as u64);
            let series = simulate(&config.model, config.n, seed, burn).map_err(tag(m))?;
            statistic(&series).map_err(tag(m))
        })
        .collect()
}

fn dist_compare(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let truth = truth_draws(config, |s| config.test.statistic(s))?;
    let results = (0..config.base_samples)
        .into_par_iter()
        .map(|m| {
            let (series, plan) = config.replication_inputs(&config.model, m).map_err(tag(m))?;
            let out = config.test.run(&series, &plan, config.alpha).map_err(tag(m))?;
            let ks = compare_distributions(&out.replicates, &truth)?;
            Ok((ReplicationResult { rep: m, statistic: out.statistic, p_value: out.p_value, reject: out.reject }, ks))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_sample: Vec<f64> = results.iter().map(|r| r.1).collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    report.replications = results.into_iter().map(|r| r.0).collect();
    report.ks = Some(KsSummary { mean, per_sample });
    Ok(())
}

fn limit_kernel(config: &ExperimentConfig) -> Result<BivariateKernel> {
    match (config.limit.kernel, &config.test) {
        (LimitKernel::Product, _) => Ok(BivariateKernel::Product),
        (LimitKernel::Test, TestSpec::Symmetry { gamma, mu }) => BivariateKernel::symmetry(*gamma, *mu),
        _ => Err(Error::ConfigInvalid("the limit sampler covers univariate kernels only".into())),
    }
}

/// Loads the cached limit model when present, otherwise builds it (and
/// stores it when a cache path is configured).
pub fn limit_model_for(config: &ExperimentConfig) -> Result<LimitModel> {
    if let Some(path) = &config.limit.cache {
        if path.exists() {
            info!("loading limit model from {}", path.display());
            return LimitModel::load_json(path);
        }
    }
    let kernel: Arc<dyn Kernel> = Arc::new(limit_kernel(config)?);
    let seed = derive_seed(config.master_seed, Purpose::LimitPath, 0);
    let (model, _) = build_limit_model(kernel, &config.model, &config.limit.config, seed)?;
    if let Some(path) = &config.limit.cache {
        model.save_json(path)?;
    }
    Ok(model)
}

fn limit_study(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<Vec<f64>> {
    let lm = limit_model_for(config)?;
    let sampler = LimitSampler::new(&lm)?;
    let kind = config.limit.statistic;
    let draw_seed = derive_seed(config.master_seed, Purpose::LimitDraw, 0);
    let draws: Vec<f64> =
        (0..config.limit.draws as u64).into_par_iter().map(|d| sampler.draw(draw_seed, d, kind)).collect();
    let kernel = limit_kernel(config)?;
    let truth = truth_draws(config, |s| {
        let v = ustat::compute(s, &kernel)?;
        Ok(match kind {
            StatisticKind::U => v.n_u,
            StatisticKind::V => v.n_v,
        })
    })?;
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    // limit-law p-value of each Monte Carlo statistic
    report.replications = truth
        .iter()
        .enumerate()
        .map(|(m, &t)| {
            let above = sorted.len() - sorted.partition_point(|d| *d < t);
            let p_value = (1 + above) as f64 / (sorted.len() + 1) as f64;
            ReplicationResult { rep: m, statistic: t, p_value, reject: p_value <= config.alpha }
        })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    report.limit = Some(LimitSummary {
        ks_vs_monte_carlo: compare_distributions(&draws, &truth)?,
        eigenvalues: sampler.lambdas.clone(),
        centering: sampler.centering,
        v_offset: sampler.v_offset,
        draws_mean: mean(&draws),
        truth_mean: mean(&truth),
    });
    Ok(draws)
}

fn tau_study(config: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let lags: Vec<usize> = (0..=config.tau.max_lag).collect();
    let profile = tau::estimate_tau_profile(&config.model, &lags, config.m, config.master_seed)?;
    let summability = match tau::check_summability(&profile, config.tau.delta) {
        Ok(s) => Some(s),
        Err(Error::NoFit) => {
            report.warnings.push("no decay model could be fitted".into());
            None
        }
        Err(e) => return Err(e),
    };
    let covariance_checks = if config.tau.probe_samples >= 2 && config.model.is_markovian() {
        let seed = derive_seed(config.master_seed, Purpose::Probe, 0);
        tau::covariance_inequality_check(&config.model, &profile, config.tau.probe_samples, seed)?
    } else {
        Vec::new()
    };
    let covariance_violations = covariance_checks.iter().filter(|c| !c.holds).count();
    report.tau = Some(TauSummary { profile, summability, covariance_checks, covariance_violations });
    Ok(())
}

/// Runs the configured experiment and, when `output_dir` is set, writes
/// `report.json` plus the per-replication CSV (`replications.csv`; the
/// τ-study writes `tau.csv`, the limit study also `limit_draws.csv`).
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let mut report = ExperimentReport {
        version: VERSION.to_string(),
        master_seed: config.master_seed,
        config: config.clone(),
        rejection_rate: None,
        rejection_se: None,
        replications: Vec::new(),
        ks: None,
        limit: None,
        tau: None,
        warnings: Vec::new(),
        wall_clock_secs: 0.0,
    };
    for m in std::iter::once(&config.model).chain(config.alt_model.as_ref()) {
        if !m.innovation.has_moment_above_four() {
            let msg = format!("{:?} innovations lack a finite moment above four", m.innovation);
            warn!("{msg}");
            report.warnings.push(msg);
        }
    }
    let mut limit_draws = None;
    match config.experiment {
        ExperimentKind::McSize => report.replications = run_tests(config, &config.model)?,
        ExperimentKind::McPower => {
            report.replications = run_tests(config, config.alt_model.as_ref().expect("validated"))?
        }
        ExperimentKind::DistCompare => dist_compare(config, &mut report)?,
        ExperimentKind::LimitStudy => limit_draws = Some(limit_study(config, &mut report)?),
        ExperimentKind::TauStudy => tau_study(config, &mut report)?,
    }
    if matches!(config.experiment, ExperimentKind::McSize | ExperimentKind::McPower | ExperimentKind::DistCompare) {
        let (rate, se) = rejection(&report.replications);
        report.rejection_rate = Some(rate);
        report.rejection_se = Some(se);
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)?;
        match &report.tau {
            Some(t) => t.profile.write_csv(&dir.join("tau.csv"))?,
            None => report.write_csv(&dir.join("replications.csv"))?,
        }
        if let Some(draws) = &limit_draws {
            bootstrap::write_replicates_csv(&dir.join("limit_draws.csv"), draws)?;
        }
        report.write_json(&dir.join("report.json"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_examples() {
        assert_eq!(compare_distributions(&[1.0, 2.0, 5.0], &[5.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(compare_distributions(&[0.0], &[1.0]).unwrap(), 1.0);
        let d = compare_distributions(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(compare_distributions(&[], &[1.0]), Err(Error::EmptyInput)));
    }

    #[test]
    fn ks_handles_ties() {
        // F_a jumps to 1 at 1 while F_b reaches 1/2
        let d = compare_distributions(&[1.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig { m: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        c.m = 1;
        c.alpha = 1.0;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        c.alpha = 0.05;
        c.experiment = ExperimentKind::McPower;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        c.experiment = ExperimentKind::McSize;
        c.plan.scheme = BootstrapScheme::LinearARFit;
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"n": 50, "M": 3}"#).unwrap();
        assert_eq!((partial.n, partial.m), (50, 3));
    }

    #[test]
    fn rejection_rate_is_exact_fraction() {
        let config = ExperimentConfig { m: 6, n: 40, plan: BootstrapPlan::new(BootstrapScheme::ResidualAR1, 19, 0), ..Default::default() };
        let r = run(&config).unwrap();
        let k = r.replications.iter().filter(|x| x.reject).count();
        assert_eq!(r.rejection_rate.unwrap(), k as f64 / 6.0);
        assert_eq!(r.replications.iter().map(|x| x.rep).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn errors_carry_replication_index() {
        let bad = ExperimentConfig {
            m: 2,
            n: 40,
            test: TestSpec::ModelSpec { g0: RegressionMap::Linear { a: 0.5 }, bw: -1.0 },
            ..Default::default()
        };
        match run(&bad) {
            Err(Error::Replication { source, .. }) => assert!(matches!(*source, Error::InvalidBandwidth(_))),
            other => panic!("unexpected {other:?}"),
        }
    }
}
