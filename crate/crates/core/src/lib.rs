//! Nested Gibbs posteriors over a chain of clients.
//!
//! Each client tilts the measure it receives from its predecessor by its own
//! empirical risk and forwards the result. The last client's measure is
//! relayed back so every client ends with the same final measure.

pub mod conjugate;
pub mod config;
pub mod error;
pub mod gibbs;
pub mod measure;
pub mod protocol;
pub mod risk;
pub mod verify;

pub use error::{Error, Result};
pub use gibbs::{
    chain_constant, cumulant, gamma_max, gibbs_posterior, multi_gibbs_closed_form, pooled_gibbs,
    solve_lambda_for_radius, ChainConstant, GibbsResult,
};
pub use measure::{
    exponential_tilt, kl_divergence, log_rn_derivative, logsumexp, normalize, rn_derivative,
    sup_log_distance, DiscreteMeasure, ModelSpace,
};
pub use protocol::{
    apply_channel, assign_lambdas, run_backward, run_chain, run_forward, ChainConfig,
    ChannelTransform, ClientConfig, LambdaSpec, Transcript,
};
pub use risk::{aggregate, empirical_risk, expected_risk, risk_vector, DataPoint, Dataset, LossSpec, RiskSource};
pub use verify::{full_report, ReportOptions, Verdict, VerificationReport};
