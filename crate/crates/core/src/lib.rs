//! Distributed multi-agent policy gradients: one central policy trained from
//! per-agent inner adaptation and a two-term outer gradient, plus the
//! environments, estimators and harness around it.

pub mod dimapg;
pub mod envs;
pub mod harness;
pub mod error;
pub mod nn;
pub mod oracle;
pub mod pg;
pub mod policy;
pub mod rollout;

pub use error::{Error, Result};
pub use nn::{Activation, MlpSpec, ParamVector};
pub use policy::{Action, ActionDistribution, ActionHead, PolicySpec};
