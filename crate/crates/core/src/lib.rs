//! Federated fairness laboratory: multi-attribute fairness-regularized
//! training under FedAvg, group fairness metrics, and causal analysis
//! (discovery, backdoor-adjusted effects, mediation, refutation) of the
//! resulting group (un)fairness on synthetic data with known ground truth.

pub mod causal;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod federation;
pub mod io;
pub mod model;
pub mod numkit;
pub mod scmdata;

pub use error::{Error, ErrorKind, Result};
