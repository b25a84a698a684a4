//! Hierarchical LogNormal models of reading times, including finite-mixture
//! accounts of agreement attraction, fit by NUTS and compared by PSIS-LOO.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`]: load and validate crossed subject/item datasets.
//! - [`models`]: the four generative models as log posteriors with exact
//!   gradients.
//! - [`sampler`]: NUTS with warmup adaptation, R-hat and ESS.
//! - [`psis_loo`]: Pareto-smoothed importance-sampling LOO and model
//!   comparison, plus an exact refit LOO for validation.
//! - [`simulate`]: generative simulators and recovery studies.
//! - [`cli`]: the `mixrt` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod models;
pub mod psis_loo;
pub mod sampler;
pub mod simulate;

pub use data::{Condition, DataError, Dataset, Trial};
pub use models::{Family, ModelError, ModelSpec, ParameterVector, Posterior, PriorConfig};
pub use psis_loo::{compare, elpd_loo, ComparisonResult, LooResult};
pub use sampler::{sample, LogDensity, PosteriorDraws, SamplerConfig};
