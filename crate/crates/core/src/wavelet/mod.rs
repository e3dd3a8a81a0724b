//! Wavelet expansion of truncated kernels and sampling of the limit law.

pub mod basis;
pub mod expansion;
pub mod limit;

pub use basis::{build_basis, WaveletBasis, WaveletFamily};
pub use expansion::{expand_kernel, expand_truncated, ExpansionConfig, KernelExpansion};
pub use limit::{
    build_limit_model, estimate_covariances, sample_limit, CovarianceConfig, LimitConfig, LimitModel, LimitSampler,
    StatisticKind,
};
