//! Anytime-valid sequential testing for the existence of a subgroup with a
//! positive treatment effect.
//!
//! Batches of `(y, a, x)` observations are scored by a doubly robust
//! (AIPW) contrast between the estimated optimal treatment rule and the
//! all-control rule. Standardised batch means are combined into a
//! statistic `R_k`, and `Λ_k`, a mixture of normal probability ratios over
//! a half-normal prior on the value difference, is compared with `1/α`
//! after every batch. Nuisance functions are random forests refit on all
//! earlier batches.
//!
//! Module map:
//! - [`types`]: observations, link functions, configuration, verdicts.
//! - [`forest`]: CART regression forests and classification trees.
//! - [`nuisance`]: arm-wise outcome forests, propensity, estimated rule.
//! - [`aipw`]: the per-observation contrast, batch summaries, IPW values.
//! - [`mixture`]: `Λ_k` in closed form and by adaptive quadrature.
//! - [`sequential`]: the batch loop, stopping rule, subgroup extraction.
//! - [`baselines`]: mSPRT for paired streams and the fixed-horizon test.
//! - [`simgen`]: generative models, oracle value differences, replications.

pub mod aipw;
pub mod baselines;
pub mod error;
pub mod forest;
pub mod mixture;
pub mod normal;
pub mod nuisance;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod sequential;
pub mod simgen;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    apply_inverse_link, apply_link, validate_stream_header, Decision, LinkFunction, Observation,
    StreamSchema, TestConfig, Verdict, ZeroVariancePolicy,
};
