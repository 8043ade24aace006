//! Deterministic simulator for broker-mediated parameter trading between
//! learning agents.
//!
//! Agents train locally, a broker evaluates prospective merges on held-out
//! data, and trades settle through bargaining over private valuations. The
//! numeric core is generic over [`Scalar`] (`f32`/`f64`); the engine and its
//! file formats run in `f64` via the aliases below.

pub mod bounds;
pub mod broker;
pub mod engine;
pub mod error;
mod linalg;
pub mod linear_task;
pub mod mlp;
pub mod params;
pub mod pricing;
pub mod scalar;

pub use broker::{
    fedavg_weight, gain_error_ratio, gain_loss_difference, optimize_merge_weight, propose_merge,
    DatasetObjective, GainKind, GainReport, GramObjective, MergeProposal, Objective,
};
pub use error::{MarketError, Result};
pub use linear_task::{
    estimation_error, loss_ratio_bounds, spectrum, synthesize_task, LinearTask, SpectrumSummary,
};
pub use params::{
    empirical_loss, gradient_step, merge, LabeledDataset, LossSpec, ParameterVector,
};
pub use scalar::Scalar;

pub type Params = ParameterVector<f64>;
pub type Dataset = LabeledDataset<f64>;
pub type Task = LinearTask<f64>;
pub type Proposal = MergeProposal<f64>;
pub type Gain = GainReport<f64>;
