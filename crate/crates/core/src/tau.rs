//! Coupling diagnostics for τ-dependence.
//!
//! Two chains started from independent approximately stationary states and
//! driven by one innovation stream give `E|X_r - X̃_r|`, an upper bound on the
//! τ-coefficient at lag `r` (the shared-innovation coupling is admissible but
//! need not be optimal).

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{simulate_coupled, ProcessKind, ProcessModel};
use crate::rng::{self, Purpose};

/// Burn-in of each coupling start.
pub const START_BURN_IN: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauProfile {
    pub lags: Vec<usize>,
    pub tau_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_bound: Option<Vec<f64>>,
    /// Slope of `-ln tau_hat(r)` against `r` over positive entries with `r >= 1`;
    /// infinite when every such entry is zero, NaN when no fit exists.
    pub fitted_rate: f64,
    pub reps: usize,
}

fn approx_stationary_start(model: &ProcessModel, seed: u64, index: u64) -> Result<f64> {
    let step = model.stepper()?;
    let mut rng = rng::stream(seed, Purpose::InitialState, index);
    let mut x = model.draw_innovation(&mut rng);
    for _ in 0..START_BURN_IN {
        x = step(x, model.draw_innovation(&mut rng));
    }
    Ok(x)
}

fn log_linear_rate(lags: &[usize], tau: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        lags.iter().zip(tau).filter(|(r, t)| **r >= 1 && **t > 0.0).map(|(r, t)| (*r as f64, t.ln())).collect();
    let positive_lags = lags.iter().filter(|r| **r >= 1).count();
    if pts.is_empty() && positive_lags > 0 {
        return f64::INFINITY;
    }
    if pts.len() < 2 {
        return f64::NAN;
    }
    let (slope, _) = least_squares(&pts);
    -slope
}

/// `(slope, intercept)` of the least-squares line through `pts`.
fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Coupling estimate of `τ_r` at each lag, averaged over `reps` coupled pairs.
pub fn estimate_tau_profile(model: &ProcessModel, lags: &[usize], reps: usize, seed: u64) -> Result<TauProfile> {
    if lags.is_empty() || reps < 2 {
        return Err(Error::InvalidParams("need at least one lag and two replicates".into()));
    }
    model.validate()?;
    if model.dim != 1 {
        return Err(Error::UnsupportedModel("coupling diagnostics are univariate".into()));
    }
    let max_lag = *lags.iter().max().expect("nonempty");
    let gaps: Vec<Vec<f64>> = if model.kind == ProcessKind::IIDd {
        // no state: the coupled copies coincide after one step
        (0..reps as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng::stream(seed, Purpose::InitialState, i);
                let (a, b) = (model.draw_innovation(&mut rng), model.draw_innovation(&mut rng));
                lags.iter().map(|&r| if r == 0 { (a - b).abs() } else { 0.0 }).collect()
            })
            .collect()
    } else {
        if model.contraction() >= 1.0 {
            return Err(Error::UnsupportedModel("coupling diagnostics need a contracting model".into()));
        }
        (0..reps as u64)
            .into_par_iter()
            .map(|i| {
                let a0 = approx_stationary_start(model, seed, 2 * i)?;
                let b0 = approx_stationary_start(model, seed, 2 * i + 1)?;
                let (a, b) = simulate_coupled(model, max_lag, rng::derive_seed(seed, Purpose::Coupling, i), a0, b0)?;
                Ok(lags
                    .iter()
                    .map(|&r| if r == 0 { (a0 - b0).abs() } else { (a.values[r - 1] - b.values[r - 1]).abs() })
                    .collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?
    };
    let n = reps as f64;
    let tau_hat: Vec<f64> = (0..lags.len()).map(|j| gaps.iter().map(|g| g[j]).sum::<f64>() / n).collect();
    let stderr: Vec<f64> = (0..lags.len())
        .map(|j| {
            let m = tau_hat[j];
            (gaps.iter().map(|g| (g[j] - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        })
        .collect();
    let analytic_bound = match model.kind {
        ProcessKind::LinearAR1 | ProcessKind::NonlinearAR1 => {
            let l = model.regression_map()?.lipschitz();
            match lags.iter().position(|&r| r == 0) {
                Some(p) if l < 1.0 => Some(lags.iter().map(|&r| l.powi(r as i32) * tau_hat[p]).collect()),
                _ => None,
            }
        }
        _ => None,
    };
    let fitted_rate = log_linear_rate(lags, &tau_hat);
    Ok(TauProfile { lags: lags.to_vec(), tau_hat, stderr, analytic_bound, fitted_rate, reps })
}

impl TauProfile {
    /// Writes `lag,tau_hat,analytic_bound,stderr`; the bound column is empty
    /// when unavailable.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "lag,tau_hat,analytic_bound,stderr")?;
        for i in 0..self.lags.len() {
            let bound = self.analytic_bound.as_ref().map(|b| format!("{:.16e}", b[i])).unwrap_or_default();
            writeln!(f, "{},{:.16e},{},{:.16e}", self.lags[i], self.tau_hat[i], bound, self.stderr[i])?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form")]
pub enum DecayModel {
    /// `τ_r ≈ exp(intercept - rate * r)`
    Geometric { rate: f64, intercept: f64 },
    /// `τ_r ≈ exp(intercept) * r^-exponent`
    PowerLaw { exponent: f64, intercept: f64 },
}

impl DecayModel {
    fn tau(&self, r: f64) -> f64 {
        match *self {
            DecayModel::Geometric { rate, intercept } => (intercept - rate * r).exp(),
            DecayModel::PowerLaw { exponent, intercept } => (intercept - exponent * r.ln()).exp(),
        }
    }

    /// Whether `Σ r τ_r^e` converges.
    fn converges(&self, e: f64) -> bool {
        match *self {
            DecayModel::Geometric { rate, .. } => rate > 0.0,
            DecayModel::PowerLaw { exponent, .. } => exponent * e > 2.0,
        }
    }

    /// `Σ_{r > from} r τ_r^e` under the model.
    fn tail(&self, from: usize, e: f64) -> f64 {
        if !self.converges(e) {
            return f64::INFINITY;
        }
        match *self {
            DecayModel::Geometric { rate, .. } if rate.is_infinite() => 0.0,
            DecayModel::Geometric { .. } => {
                let mut s = 0.0;
                let mut r = from + 1;
                loop {
                    let term = r as f64 * self.tau(r as f64).powf(e);
                    s += term;
                    if term <= 1e-18 * s.max(1e-300) || r > from + 1_000_000 {
                        break;
                    }
                    r += 1;
                }
                s
            }
            DecayModel::PowerLaw { exponent, intercept } => {
                // integral of r^{1 - p e} from from + 1/2
                let q = exponent * e - 2.0;
                (intercept * e).exp() * (from as f64 + 0.5).powf(-q) / q
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    pub delta: f64,
    pub model: DecayModel,
    /// Σ r τ_r^δ
    pub finite_delta: bool,
    /// Σ r τ_r^{δ²}
    pub finite_delta_sq: bool,
    /// `(r, Σ_{s<=r} s τ_s^δ, Σ_{s<=r} s τ_s^{δ²})` over `r = 1..=max lag`.
    pub partial_sums: Vec<(usize, f64, f64)>,
    pub total_delta: f64,
    pub total_delta_sq: f64,
}

/// Checks the summability conditions `Σ r τ_r^δ < ∞` and `Σ r τ_r^{δ²} < ∞`
/// by extrapolating the better of a geometric and a power-law tail fit.
pub fn check_summability(profile: &TauProfile, delta: f64) -> Result<SummabilityReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParams(format!("delta must lie in (0, 1), got {delta}")));
    }
    let pts: Vec<(usize, f64)> =
        profile.lags.iter().zip(&profile.tau_hat).filter(|(r, _)| **r >= 1).map(|(r, t)| (*r, *t)).collect();
    let positive: Vec<(usize, f64)> = pts.iter().copied().filter(|p| p.1 > 0.0).collect();
    let model = if !pts.is_empty() && positive.is_empty() {
        DecayModel::Geometric { rate: f64::INFINITY, intercept: 0.0 }
    } else {
        if positive.len() < 2 {
            return Err(Error::NoFit);
        }
        let geo: Vec<(f64, f64)> = positive.iter().map(|(r, t)| (*r as f64, t.ln())).collect();
        let pow: Vec<(f64, f64)> = positive.iter().map(|(r, t)| ((*r as f64).ln(), t.ln())).collect();
        let (gs, gi) = least_squares(&geo);
        let (ps, pi) = least_squares(&pow);
        let sse = |pts: &[(f64, f64)], s: f64, i: f64| pts.iter().map(|p| (p.1 - i - s * p.0).powi(2)).sum::<f64>();
        if sse(&geo, gs, gi) <= sse(&pow, ps, pi) {
            DecayModel::Geometric { rate: -gs, intercept: gi }
        } else {
            DecayModel::PowerLaw { exponent: -ps, intercept: pi }
        }
    };
    let max_lag = pts.iter().map(|p| p.0).max().unwrap_or(0);
    let observed = |r: usize| pts.iter().find(|p| p.0 == r).map(|p| p.1).unwrap_or_else(|| model.tau(r as f64));
    let mut partial_sums = Vec::with_capacity(max_lag);
    let (mut s1, mut s2) = (0.0, 0.0);
    for r in 1..=max_lag {
        let t = observed(r);
        s1 += r as f64 * t.powf(delta);
        s2 += r as f64 * t.powf(delta * delta);
        partial_sums.push((r, s1, s2));
    }
    Ok(SummabilityReport {
        delta,
        model,
        finite_delta: model.converges(delta),
        finite_delta_sq: model.converges(delta * delta),
        partial_sums,
        total_delta: s1 + model.tail(max_lag, delta),
        total_delta_sq: s2 + model.tail(max_lag, delta * delta),
    })
}

/// Bounded test function `h` (sup norm 1) or Lipschitz test function `k`
/// (Lipschitz constant 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Probe {
    Tanh,
    Sin,
    Cos,
    /// `x` clipped to `[-1, 1]`
    Clip,
}

impl Probe {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Probe::Tanh => x.tanh(),
            Probe::Sin => x.sin(),
            Probe::Cos => x.cos(),
            Probe::Clip => x.clamp(-1.0, 1.0),
        }
    }
}

/// Pairs `(h, k)` checked against the covariance inequality.
pub const PROBE_CATALOG: [(Probe, Probe); 6] = [
    (Probe::Tanh, Probe::Sin),
    (Probe::Sin, Probe::Tanh),
    (Probe::Cos, Probe::Clip),
    (Probe::Clip, Probe::Cos),
    (Probe::Sin, Probe::Sin),
    (Probe::Clip, Probe::Tanh),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCheck {
    pub h: Probe,
    pub k: Probe,
    pub lag: usize,
    pub covariance: f64,
    pub covariance_se: f64,
    /// `2 ‖h‖∞ Lip(k) (τ̂_r + 3 se(τ̂_r))`
    pub bound: f64,
    /// `|cov| <= bound + 3 se(cov)`
    pub holds: bool,
}

/// Monte Carlo check of `|cov(h(X_0), k(X_r))| <= 2 ‖h‖∞ Lip(k) τ_r` with τ
/// taken from `profile` inflated by three standard errors. Covariances come
/// from `samples` independent stationary trajectories.
pub fn covariance_inequality_check(
    model: &ProcessModel,
    profile: &TauProfile,
    samples: usize,
    seed: u64,
) -> Result<Vec<CovarianceCheck>> {
    if samples < 2 {
        return Err(Error::InvalidParams("need at least two samples".into()));
    }
    let lags: Vec<(usize, usize)> =
        profile.lags.iter().enumerate().filter(|(_, r)| **r >= 1).map(|(i, r)| (i, *r)).collect();
    let max_lag = lags.iter().map(|l| l.1).max().unwrap_or(0);
    let step = model.stepper()?;
    let paths: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::Probe, i);
            let mut x = model.draw_innovation(&mut rng);
            for _ in 0..START_BURN_IN {
                x = step(x, model.draw_innovation(&mut rng));
            }
            let mut p = Vec::with_capacity(max_lag + 1);
            p.push(x);
            for _ in 0..max_lag {
                x = step(x, model.draw_innovation(&mut rng));
                p.push(x);
            }
            p
        })
        .collect();
    let n = samples as f64;
    let mut out = Vec::new();
    for &(h, k) in PROBE_CATALOG.iter() {
        for &(idx, r) in &lags {
            let hv: Vec<f64> = paths.iter().map(|p| h.eval(p[0])).collect();
            let kv: Vec<f64> = paths.iter().map(|p| k.eval(p[r])).collect();
            let mh = hv.iter().sum::<f64>() / n;
            let mk = kv.iter().sum::<f64>() / n;
            let prods: Vec<f64> = hv.iter().zip(&kv).map(|(a, b)| (a - mh) * (b - mk)).collect();
            let cov = prods.iter().sum::<f64>() / (n - 1.0);
            let se = (prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            let bound = 2.0 * (profile.tau_hat[idx] + 3.0 * profile.stderr[idx]);
            out.push(CovarianceCheck { h, k, lag: r, covariance: cov, covariance_se: se, bound, holds: cov.abs() <= bound + 3.0 * se });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{Innovation, RegressionMap};

    #[test]
    fn linear_ar_decays_at_ln2() {
        let m = ProcessModel::linear_ar1(0.5, Innovation::GaussianStd);
        let lags: Vec<usize> = (0..=20).collect();
        let p = estimate_tau_profile(&m, &lags, 2000, 1).unwrap();
        for r in 0..20 {
            assert!((p.tau_hat[r] / p.tau_hat[r + 1] - 2.0).abs() < 1e-9);
        }
        assert!((p.fitted_rate - 2f64.ln()).abs() < 0.1 * 2f64.ln());
        let bound = p.analytic_bound.as_ref().unwrap();
        for (t, b) in p.tau_hat.iter().zip(bound) {
            assert!(t <= &(b * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn iid_profile_vanishes_after_lag_zero() {
        let m = ProcessModel::iid(Innovation::GaussianStd, 1);
        let p = estimate_tau_profile(&m, &[0, 1, 5], 100, 2).unwrap();
        assert!(p.tau_hat[0] > 0.0);
        assert_eq!(&p.tau_hat[1..], &[0.0, 0.0]);
        assert!(p.fitted_rate.is_infinite());
        let rep = check_summability(&p, 0.5).unwrap();
        assert!(rep.finite_delta && rep.finite_delta_sq);
    }

    #[test]
    fn tanh_model_obeys_pointwise_contraction() {
        let m = ProcessModel::nonlinear_ar1(RegressionMap::ScaledTanh { scale: 0.8 }, Innovation::GaussianStd);
        let lags: Vec<usize> = (0..=15).collect();
        let p = estimate_tau_profile(&m, &lags, 500, 3).unwrap();
        for (r, t) in p.tau_hat.iter().enumerate() {
            assert!(*t <= 0.8f64.powi(r as i32) * p.tau_hat[0] * (1.0 + 1e-12));
        }
    }

    fn synthetic(taus: impl Fn(usize) -> f64, max: usize) -> TauProfile {
        let lags: Vec<usize> = (1..=max).collect();
        let tau_hat: Vec<f64> = lags.iter().map(|&r| taus(r)).collect();
        let fitted_rate = log_linear_rate(&lags, &tau_hat);
        TauProfile { stderr: vec![0.0; max], lags, tau_hat, analytic_bound: None, fitted_rate, reps: 1 }
    }

    #[test]
    fn summability_verdicts() {
        let geo = check_summability(&synthetic(|r| 0.7f64.powi(r as i32), 30), 0.3).unwrap();
        assert!(matches!(geo.model, DecayModel::Geometric { .. }));
        assert!(geo.finite_delta && geo.finite_delta_sq);
        let harmonic = check_summability(&synthetic(|r| 1.0 / r as f64, 30), 0.5).unwrap();
        assert!(matches!(harmonic.model, DecayModel::PowerLaw { .. }));
        assert!(!harmonic.finite_delta);
        assert!(harmonic.total_delta.is_infinite());
        let steep = check_summability(&synthetic(|r| (r as f64).powi(-6), 30), 0.5).unwrap();
        assert!(steep.finite_delta && !steep.finite_delta_sq);
        assert!(matches!(check_summability(&synthetic(|_| 0.5, 1), 0.5), Err(Error::NoFit)));
    }

    #[test]
    fn ar_partial_sums_stabilize() {
        let m = ProcessModel::linear_ar1(0.5, Innovation::GaussianStd);
        let lags: Vec<usize> = (0..=60).collect();
        let p = estimate_tau_profile(&m, &lags, 500, 4).unwrap();
        let rep = check_summability(&p, 0.5).unwrap();
        assert!(rep.finite_delta);
        let at60 = rep.partial_sums.last().unwrap().1;
        assert!((rep.total_delta - at60).abs() < 1e-6);
    }

    #[test]
    fn covariance_inequality_holds_for_ar() {
        let m = ProcessModel::linear_ar1(0.5, Innovation::GaussianStd);
        let lags: Vec<usize> = (0..=10).collect();
        let p = estimate_tau_profile(&m, &lags, 2000, 5).unwrap();
        let checks = covariance_inequality_check(&m, &p, 20_000, 6).unwrap();
        assert_eq!(checks.len(), PROBE_CATALOG.len() * 10);
        assert!(checks.iter().all(|c| c.holds));
    }

    #[test]
    fn csv_layout() {
        let m = ProcessModel::linear_ar1(0.5, Innovation::GaussianStd);
        let p = estimate_tau_profile(&m, &[0, 1], 10, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tau.csv");
        p.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "lag,tau_hat,analytic_bound,stderr");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 4);
    }
}
