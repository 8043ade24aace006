//! Multi-round market simulation.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod output;
pub mod sim;

pub use config::{
    AgentSpec, BrokerSpec, ConvergenceMetric, EndowmentSpec, InitKind, MarketConfig, Policy,
    SweepAxis, SweepSpec,
};
pub use experiments::{run_sweep, spearman, SweepResult};
pub use metrics::{convergence_metrics, geometric_decay_check, relative_improvement, DecayReport};
pub use model::{LinearMarket, MarketModel};
pub use output::write_outputs;
pub use sim::{
    run_linear, run_market, run_round, run_simulation, run_with_twin, CurvePoint, Decide,
    DecisionInput, MarketLog, MarketState, RoundOutcome, TradeRecord,
};
