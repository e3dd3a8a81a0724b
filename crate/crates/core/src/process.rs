//! Weakly dependent processes used as null and alternative models.
//!
//! Four first-order models are supported: i.i.d. vectors, linear AR(1),
//! nonlinear AR(1) `X_t = g(X_{t-1}) + e_t` with `g` from a small catalog of
//! Lipschitz maps, and ARCH(1). Innovations are centered and, unless
//! `innovation_variance` is `None`, rescaled to the requested variance.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessKind {
    IIDd,
    LinearAR1,
    NonlinearAR1,
    ARCH1,
}

/// Innovation law before centering/standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist")]
pub enum Innovation {
    GaussianStd,
    /// `Exp(rate) - 1/rate`.
    CenteredExponential { rate: f64 },
    /// `U(-b, b)`.
    Uniform { b: f64 },
    /// Student t scaled to unit variance; requires `df > 2`.
    StudentT { df: f64 },
}

impl Innovation {
    fn validate(&self) -> Result<()> {
        match *self {
            Innovation::GaussianStd => Ok(()),
            Innovation::CenteredExponential { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            Innovation::Uniform { b } if b > 0.0 && b.is_finite() => Ok(()),
            Innovation::StudentT { df } if df > 2.0 => Ok(()),
            other => Err(Error::InvalidParams(format!("bad innovation parameters {other:?}"))),
        }
    }

    /// Variance of the centered raw draw.
    pub fn raw_variance(&self) -> f64 {
        match *self {
            Innovation::GaussianStd => 1.0,
            Innovation::CenteredExponential { rate } => 1.0 / (rate * rate),
            Innovation::Uniform { b } => b * b / 3.0,
            Innovation::StudentT { .. } => 1.0,
        }
    }

    /// `E e^4 / (E e^2)^2`.
    pub fn kurtosis(&self) -> f64 {
        match *self {
            Innovation::GaussianStd => 3.0,
            Innovation::CenteredExponential { .. } => 9.0,
            Innovation::Uniform { .. } => 1.8,
            Innovation::StudentT { df } if df > 4.0 => 3.0 * (df - 2.0) / (df - 4.0),
            Innovation::StudentT { .. } => f64::INFINITY,
        }
    }

    /// Whether `E|e|^{4+delta}` is finite for some `delta > 0`.
    pub fn has_moment_above_four(&self) -> bool {
        !matches!(*self, Innovation::StudentT { df } if df <= 4.0)
    }

    fn draw_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Innovation::GaussianStd => StandardNormal.sample(rng),
            Innovation::CenteredExponential { rate } => {
                let e: f64 = Exp::new(rate).expect("validated rate").sample(rng);
                e - 1.0 / rate
            }
            Innovation::Uniform { b } => rng.random_range(-b..b),
            Innovation::StudentT { df } => {
                let t: f64 = StudentT::new(df).expect("validated df").sample(rng);
                t * ((df - 2.0) / df).sqrt()
            }
        }
    }
}

/// Catalog of regression maps `g` for nonlinear AR(1) models and the
/// model-specification test. Each entry knows its exact Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map")]
pub enum RegressionMap {
    Zero,
    Linear { a: f64 },
    /// `scale * tanh(x)`
    ScaledTanh { scale: f64 },
    /// `scale * sin(x)`
    ScaledSin { scale: f64 },
    /// slope `left` on `x < 0`, slope `right` on `x >= 0`
    PiecewiseLinear { left: f64, right: f64 },
    /// `a * x + amp * cos(x)`, the Pitman-type alternative to `a * x`
    CosPerturbed { a: f64, amp: f64 },
}

impl RegressionMap {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RegressionMap::Zero => 0.0,
            RegressionMap::Linear { a } => a * x,
            RegressionMap::ScaledTanh { scale } => scale * x.tanh(),
            RegressionMap::ScaledSin { scale } => scale * x.sin(),
            RegressionMap::PiecewiseLinear { left, right } => {
                if x < 0.0 {
                    left * x
                } else {
                    right * x
                }
            }
            RegressionMap::CosPerturbed { a, amp } => a * x + amp * x.cos(),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            RegressionMap::Zero => 0.0,
            RegressionMap::Linear { a } => a.abs(),
            RegressionMap::ScaledTanh { scale } | RegressionMap::ScaledSin { scale } => scale.abs(),
            RegressionMap::PiecewiseLinear { left, right } => left.abs().max(right.abs()),
            RegressionMap::CosPerturbed { a, amp } => a.abs() + amp.abs(),
        }
    }

    /// Slope of the linear envelope `|g(x)| <= s |x| + const`.
    pub fn growth_slope(&self) -> f64 {
        match *self {
            RegressionMap::Zero | RegressionMap::ScaledTanh { .. } | RegressionMap::ScaledSin { .. } => 0.0,
            RegressionMap::Linear { a } | RegressionMap::CosPerturbed { a, .. } => a.abs(),
            RegressionMap::PiecewiseLinear { left, right } => left.abs().max(right.abs()),
        }
    }

    /// Contraction requirement for simulation: `Lip(g) < 1`, or `Lip(g) = 1`
    /// with a linear envelope of slope below one.
    pub fn check_contracting(&self) -> Result<()> {
        let lip = self.lipschitz();
        if lip < 1.0 || (lip <= 1.0 && self.growth_slope() < 1.0) {
            Ok(())
        } else {
            Err(Error::NonContractive(lip))
        }
    }

    /// Encoding as `[catalog_id, params...]`.
    pub fn to_params(&self) -> Vec<f64> {
        match *self {
            RegressionMap::Zero => vec![0.0],
            RegressionMap::Linear { a } => vec![1.0, a],
            RegressionMap::ScaledTanh { scale } => vec![2.0, scale],
            RegressionMap::ScaledSin { scale } => vec![3.0, scale],
            RegressionMap::PiecewiseLinear { left, right } => vec![4.0, left, right],
            RegressionMap::CosPerturbed { a, amp } => vec![5.0, a, amp],
        }
    }

    pub fn from_params(p: &[f64]) -> Result<Self> {
        let bad = || Error::InvalidParams(format!("unknown regression map encoding {p:?}"));
        let id = *p.first().ok_or_else(bad)?;
        let args = &p[1..];
        let map = match (id as i64, args) {
            (0, []) => RegressionMap::Zero,
            (1, [a]) => RegressionMap::Linear { a: *a },
            (2, [s]) => RegressionMap::ScaledTanh { scale: *s },
            (3, [s]) => RegressionMap::ScaledSin { scale: *s },
            (4, [l, r]) => RegressionMap::PiecewiseLinear { left: *l, right: *r },
            (5, [a, amp]) => RegressionMap::CosPerturbed { a: *a, amp: *amp },
            _ => return Err(bad()),
        };
        if id.fract() != 0.0 || args.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        Ok(map)
    }
}

fn default_dim() -> usize {
    1
}

fn default_variance() -> Option<f64> {
    Some(1.0)
}

/// A process model. Serializes as
/// `{"kind": ..., "params": [...], "innovation": {...}, "lip_const": x, "dim": d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessModel {
    pub kind: ProcessKind,
    #[serde(default)]
    pub params: Vec<f64>,
    pub innovation: Innovation,
    #[serde(default)]
    pub lip_const: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Target innovation variance; `None` keeps the raw centered law.
    #[serde(default = "default_variance")]
    pub innovation_variance: Option<f64>,
}

impl ProcessModel {
    pub fn iid(innovation: Innovation, dim: usize) -> Self {
        ProcessModel {
            kind: ProcessKind::IIDd,
            params: vec![],
            innovation,
            lip_const: 0.0,
            dim,
            innovation_variance: Some(1.0),
        }
    }

    pub fn linear_ar1(a: f64, innovation: Innovation) -> Self {
        ProcessModel {
            kind: ProcessKind::LinearAR1,
            params: vec![a],
            innovation,
            lip_const: a.abs(),
            dim: 1,
            innovation_variance: Some(1.0),
        }
    }

    pub fn nonlinear_ar1(map: RegressionMap, innovation: Innovation) -> Self {
        ProcessModel {
            kind: ProcessKind::NonlinearAR1,
            params: map.to_params(),
            innovation,
            lip_const: map.lipschitz(),
            dim: 1,
            innovation_variance: Some(1.0),
        }
    }

    pub fn arch1(omega: f64, alpha: f64, innovation: Innovation) -> Self {
        ProcessModel {
            kind: ProcessKind::ARCH1,
            params: vec![omega, alpha],
            innovation,
            lip_const: alpha.max(0.0).sqrt(),
            dim: 1,
            innovation_variance: Some(1.0),
        }
    }

    pub fn with_innovation_variance(mut self, variance: Option<f64>) -> Self {
        self.innovation_variance = variance;
        self
    }

    /// Conditional-mean map for the AR kinds.
    pub fn regression_map(&self) -> Result<RegressionMap> {
        match self.kind {
            ProcessKind::LinearAR1 => match self.params.as_slice() {
                [a] => Ok(RegressionMap::Linear { a: *a }),
                p => Err(Error::InvalidParams(format!("LinearAR1 expects [a], got {p:?}"))),
            },
            ProcessKind::NonlinearAR1 => RegressionMap::from_params(&self.params),
            _ => Err(Error::UnsupportedModel(format!("{:?} has no regression map", self.kind))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.innovation.validate()?;
        if let Some(v) = self.innovation_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("innovation variance {v}")));
            }
        }
        if self.dim == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        if self.kind != ProcessKind::IIDd && self.dim != 1 {
            return Err(Error::UnsupportedModel(format!("{:?} is univariate only", self.kind)));
        }
        match self.kind {
            ProcessKind::IIDd => {
                if !self.params.is_empty() {
                    return Err(Error::InvalidParams("IIDd takes no parameters".into()));
                }
            }
            ProcessKind::LinearAR1 => {
                let map = self.regression_map()?;
                if map.lipschitz() >= 1.0 {
                    return Err(Error::NonContractive(map.lipschitz()));
                }
            }
            ProcessKind::NonlinearAR1 => {
                let map = self.regression_map()?;
                if self.lip_const + 1e-12 < map.lipschitz() {
                    return Err(Error::InvalidParams(format!(
                        "declared Lipschitz constant {} below exact value {}",
                        self.lip_const,
                        map.lipschitz()
                    )));
                }
                map.check_contracting()?;
            }
            ProcessKind::ARCH1 => {
                let (omega, alpha) = self.arch_params()?;
                if !(omega > 0.0) || alpha < 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "ARCH(1) needs omega > 0 and alpha >= 0, got ({omega}, {alpha})"
                    )));
                }
                if alpha * alpha * self.innovation.kurtosis() >= 1.0 {
                    return Err(Error::InvalidParams(format!(
                        "ARCH(1) alpha = {alpha} has no finite fourth moment"
                    )));
                }
            }
        }
        Ok(())
    }

    fn arch_params(&self) -> Result<(f64, f64)> {
        match self.params.as_slice() {
            [omega, alpha] => Ok((*omega, *alpha)),
            p => Err(Error::InvalidParams(format!("ARCH1 expects [omega, alpha], got {p:?}"))),
        }
    }

    /// Contraction factor governing geometric forgetting of the start.
    pub fn contraction(&self) -> f64 {
        match self.kind {
            ProcessKind::IIDd => 0.0,
            ProcessKind::LinearAR1 | ProcessKind::NonlinearAR1 => self
                .regression_map()
                .map(|m| if m.lipschitz() < 1.0 { m.lipschitz() } else { m.growth_slope() })
                .unwrap_or(self.lip_const),
            ProcessKind::ARCH1 => self.arch_params().map(|(_, a)| a.sqrt()).unwrap_or(self.lip_const),
        }
    }

    /// `10 * ceil(1 / (1 - L))` steps; zero for i.i.d. data.
    pub fn default_burn_in(&self) -> usize {
        if self.kind == ProcessKind::IIDd {
            return 0;
        }
        let l = self.contraction().min(0.999);
        10 * (1.0 / (1.0 - l)).ceil() as usize
    }

    pub fn is_markovian(&self) -> bool {
        self.kind != ProcessKind::IIDd
    }

    fn innovation_scale(&self) -> f64 {
        match self.innovation_variance {
            Some(v) => (v / self.innovation.raw_variance()).sqrt(),
            None => 1.0,
        }
    }

    /// Draws one centered, scaled innovation.
    #[inline]
    pub fn draw_innovation<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.innovation.draw_raw(rng) * self.innovation_scale()
    }

    /// One step of a univariate Markov recursion.
    pub fn stepper(&self) -> Result<Box<dyn Fn(f64, f64) -> f64 + Send + Sync>> {
        self.validate()?;
        let step: Box<dyn Fn(f64, f64) -> f64 + Send + Sync> = match self.kind {
            ProcessKind::IIDd => {
                return Err(Error::UnsupportedModel("IIDd has no state".into()));
            }
            ProcessKind::LinearAR1 | ProcessKind::NonlinearAR1 => {
                let g = self.regression_map()?;
                Box::new(move |x, e| g.eval(x) + e)
            }
            ProcessKind::ARCH1 => {
                let (omega, alpha) = self.arch_params()?;
                Box::new(move |x, e| (omega + alpha * x * x).sqrt() * e)
            }
        };
        Ok(step)
    }
}

/// A sample path. Values are stored row-major: point `t` occupies
/// `values[t * dim .. (t + 1) * dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub dim: usize,
    pub model: Option<ProcessModel>,
    pub seed: u64,
    pub burn_in: usize,
}

impl TimeSeries {
    /// Wraps observed univariate data.
    pub fn from_values(values: Vec<f64>) -> Self {
        TimeSeries { values, dim: 1, model: None, seed: 0, burn_in: 0 }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// The innovation sequence `simulate` consumes for `(model, seed)`.
pub fn innovation_stream(model: &ProcessModel, seed: u64, len: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, Purpose::Innovations, 0);
    (0..len).map(|_| model.draw_innovation(&mut rng)).collect()
}

/// Simulates `n` observations after discarding `burn_in` steps.
pub fn simulate(model: &ProcessModel, n: usize, seed: u64, burn_in: usize) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::SampleTooSmall { needed: 1, got: 0 });
    }
    model.validate()?;
    let values = if model.kind == ProcessKind::IIDd {
        let draws = innovation_stream(model, seed, (burn_in + n) * model.dim);
        draws[burn_in * model.dim..].to_vec()
    } else {
        let step = model.stepper()?;
        let mut init_rng = rng::stream(seed, Purpose::InitialState, 0);
        let mut x = model.draw_innovation(&mut init_rng);
        let mut rng = rng::stream(seed, Purpose::Innovations, 0);
        let mut out = Vec::with_capacity(n);
        for t in 0..burn_in + n {
            x = step(x, model.draw_innovation(&mut rng));
            if t >= burn_in {
                out.push(x);
            }
        }
        out
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("simulation produced non-finite values".into()));
    }
    Ok(TimeSeries { values, dim: model.dim, model: Some(model.clone()), seed, burn_in })
}

/// Two trajectories `X_1..X_n` from starts `x0_a`, `x0_b` driven by one
/// shared innovation stream.
pub fn simulate_coupled(
    model: &ProcessModel,
    n: usize,
    seed: u64,
    x0_a: f64,
    x0_b: f64,
) -> Result<(TimeSeries, TimeSeries)> {
    if !model.is_markovian() {
        return Err(Error::UnsupportedModel("IIDd has no state to couple".into()));
    }
    let step = model.stepper()?;
    let mut rng = rng::stream(seed, Purpose::Coupling, 0);
    let (mut a, mut b) = (x0_a, x0_b);
    let mut va = Vec::with_capacity(n);
    let mut vb = Vec::with_capacity(n);
    for _ in 0..n {
        let e = model.draw_innovation(&mut rng);
        a = step(a, e);
        b = step(b, e);
        va.push(a);
        vb.push(b);
    }
    let wrap = |values| TimeSeries { values, dim: 1, model: Some(model.clone()), seed, burn_in: 0 };
    Ok((wrap(va), wrap(vb)))
}

/// `e_t = X_t - g0(X_{t-1})` for every consecutive pair.
pub fn residuals(series: &TimeSeries, g0: &RegressionMap) -> Result<Vec<f64>> {
    if series.dim != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: series.dim });
    }
    if series.len() < 2 {
        return Err(Error::SampleTooSmall { needed: 2, got: series.len() });
    }
    Ok(series.values.windows(2).map(|w| w[1] - g0.eval(w[0])).collect())
}
