//! Run configuration: a flat `key = value` text format with `[agent]`,
//! `[broker]` and `[sweep]` blocks.
//!
//! ```text
//! seed = 7
//! rounds = 100
//! dim = 1000
//! gain_kind = error_ratio
//!
//! [agent]
//! name = A
//! n = 500
//! noise = 0.5
//!
//! [agent]
//! name = B
//! n = 800
//! noise = 0.5
//!
//! [broker]
//! n = 10000
//! ```
//!
//! Blank lines and text after `#` are ignored. Every key is optional except
//! the per-agent sample count (unless an endowment pool is configured).

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::broker::GainKind;
use crate::error::{MarketError, Result};
use crate::params::LossSpec;
use crate::pricing::SellerPrior;

/// An agent's buying behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    TradeWhenBeneficial,
    NeverTrade,
    AlwaysTrade,
    /// Trades when beneficial, starting `delay` rounds after everyone else.
    Async { delay: usize },
    /// Always merges at the seller's data share, without broker search.
    FedAvg,
}

impl Policy {
    pub fn delay(self) -> usize {
        match self {
            Policy::Async { delay } => delay,
            _ => 0,
        }
    }

    pub fn buys(self) -> bool {
        self != Policy::NeverTrade
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::TradeWhenBeneficial => f.write_str("trade_when_beneficial"),
            Policy::NeverTrade => f.write_str("never_trade"),
            Policy::AlwaysTrade => f.write_str("always_trade"),
            Policy::Async { delay } => write!(f, "async:{delay}"),
            Policy::FedAvg => f.write_str("fedavg"),
        }
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "trade_when_beneficial" => Ok(Policy::TradeWhenBeneficial),
            "never_trade" => Ok(Policy::NeverTrade),
            "always_trade" => Ok(Policy::AlwaysTrade),
            "fedavg" => Ok(Policy::FedAvg),
            _ => match s.strip_prefix("async:") {
                Some(d) => d
                    .trim()
                    .parse()
                    .map(|delay| Policy::Async { delay })
                    .map_err(|_| format!("invalid async delay {d:?}")),
                None => Err(format!(
                    "unknown policy {s:?} (expected trade_when_beneficial, never_trade, \
                     always_trade, fedavg or async:<rounds>)"
                )),
            },
        }
    }
}

impl Serialize for Policy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Zeros,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceMetric {
    /// Broker loss minus its minimum over all parameters.
    #[default]
    ExcessBrokerLoss,
    /// Norm of the gradient of the agent's own loss.
    GradNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSpec {
    pub name: String,
    pub n: usize,
    pub noise: f64,
    pub policy: Policy,
    /// Distance of this agent's true parameters from the reference task.
    pub task_distance: f64,
    /// Explicit step size; derived from the smoothness constant when absent.
    pub step_size: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BrokerSpec {
    pub n: usize,
    pub noise: f64,
}

impl Default for BrokerSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            noise: 0.0,
        }
    }
}

/// A shared sample pool split between exactly two agents: agent 0 holds the
/// first half plus `fraction` of the second, agent 1 the mirror image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndowmentSpec {
    pub pool: usize,
    pub fraction: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TaskDistance,
    Endowment,
    TradeEvery,
    TradeStart,
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "task_distance" => Ok(SweepAxis::TaskDistance),
            "endowment" => Ok(SweepAxis::Endowment),
            "trade_every" => Ok(SweepAxis::TradeEvery),
            "trade_start" => Ok(SweepAxis::TradeStart),
            _ => Err(format!(
                "unknown sweep axis {s:?} (expected task_distance, endowment, trade_every \
                 or trade_start)"
            )),
        }
    }
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::TaskDistance => "task_distance",
            SweepAxis::Endowment => "endowment",
            SweepAxis::TradeEvery => "trade_every",
            SweepAxis::TradeStart => "trade_start",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Seeds per cell: `seed, seed + 1, …`.
    pub seeds: usize,
    /// Agent whose improvement is reported.
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketConfig {
    pub seed: u64,
    pub rounds: usize,
    pub dim: usize,
    pub loss: LossSpec,
    pub gain_kind: GainKind,
    pub trade_every: usize,
    pub trade_start: usize,
    /// Competitive mode: trades are priced and paid for.
    pub pricing: bool,
    pub seller_prior: SellerPrior,
    /// Step size as a fraction of `1/L`.
    pub step_scale: f64,
    pub init: InitKind,
    pub init_scale: f64,
    pub theta_scale: f64,
    pub epsilon: f64,
    pub convergence_metric: ConvergenceMetric,
    pub endowment: Option<EndowmentSpec>,
    pub agents: Vec<AgentSpec>,
    pub broker: BrokerSpec,
    pub sweep: Option<SweepSpec>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 100,
            dim: 10,
            loss: LossSpec::SumOfSquares,
            gain_kind: GainKind::ErrorRatio,
            trade_every: 1,
            trade_start: 0,
            pricing: false,
            seller_prior: SellerPrior::UniformOnBounds,
            step_scale: 0.9,
            init: InitKind::Zeros,
            init_scale: 1.0,
            theta_scale: 1.0,
            epsilon: 1e-6,
            convergence_metric: ConvergenceMetric::ExcessBrokerLoss,
            endowment: None,
            agents: Vec::new(),
            broker: BrokerSpec::default(),
            sweep: None,
        }
    }
}

impl MarketConfig {
    /// A two-agent configuration with the given sample counts and noise.
    pub fn two_agents(dim: usize, agents: [(usize, f64); 2], broker_n: usize) -> Self {
        Self {
            dim,
            agents: agents
                .iter()
                .enumerate()
                .map(|(i, &(n, noise))| AgentSpec {
                    name: ["A", "B"][i].to_string(),
                    n,
                    noise,
                    policy: Policy::TradeWhenBeneficial,
                    task_distance: 0.0,
                    step_size: None,
                })
                .collect(),
            broker: BrokerSpec {
                n: broker_n,
                noise: 0.0,
            },
            ..Self::default()
        }
    }

    /// The same market with every agent ignoring it.
    pub fn out_of_market(&self) -> Self {
        let mut c = self.clone();
        for a in &mut c.agents {
            a.policy = Policy::NeverTrade;
        }
        c
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    /// Whether agent `agent` may buy in `round` (rounds count from 1).
    pub fn is_trading_round(&self, agent: usize, round: usize) -> bool {
        let policy = self.agents[agent].policy;
        policy.buys()
            && round >= self.trade_start + policy.delay()
            && round % self.trade_every == 0
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(MarketError::Config { line: 0, message: m });
        if self.rounds == 0 {
            return err("rounds must be at least 1".into());
        }
        if self.dim == 0 {
            return err("dim must be at least 1".into());
        }
        if self.trade_every == 0 {
            return err("trade_every must be at least 1".into());
        }
        if self.agents.len() < 2 {
            return err(format!("need at least 2 agents, found {}", self.agents.len()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if self.agents[..i].iter().any(|b| b.name == a.name) {
                return err(format!("duplicate agent name {:?}", a.name));
            }
            if self.endowment.is_none() && a.n == 0 {
                return err(format!("agent {:?} needs n ≥ 1", a.name));
            }
            if !(a.noise >= 0.0) || !a.noise.is_finite() {
                return err(format!("agent {:?} noise must be non-negative", a.name));
            }
            if !a.task_distance.is_finite() || a.task_distance < 0.0 {
                return err(format!("agent {:?} task_distance must be ≥ 0", a.name));
            }
            if let Some(s) = a.step_size {
                if !(s > 0.0) || !s.is_finite() {
                    return err(format!("agent {:?} step_size must be positive", a.name));
                }
            }
        }
        if let Some(e) = &self.endowment {
            if self.agents.len() != 2 {
                return err("an endowment pool needs exactly 2 agents".into());
            }
            if e.pool < 2 {
                return err("pool must hold at least 2 samples".into());
            }
            if !(0.0..=1.0).contains(&e.fraction) {
                return err(format!("endowment must lie in [0, 1], got {}", e.fraction));
            }
            if !(e.noise >= 0.0) {
                return err("pool_noise must be non-negative".into());
            }
            if self.agents.iter().any(|a| a.task_distance != 0.0) {
                return err("an endowment pool serves a single task; drop task_distance".into());
            }
        }
        if self.broker.n == 0 {
            return err("broker n must be at least 1".into());
        }
        if !(self.broker.noise >= 0.0) {
            return err("broker noise must be non-negative".into());
        }
        if !(self.step_scale > 0.0) || !(self.epsilon > 0.0) {
            return err("step_scale and epsilon must be positive".into());
        }
        if self.pricing && self.gain_kind != GainKind::ErrorRatio {
            return err("pricing = on requires gain_kind = error_ratio".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() || s.seeds == 0 {
                return err("sweep needs at least one value and one seed".into());
            }
            if s.target >= self.agents.len() {
                return err("sweep target is not an agent".into());
            }
            if s.axis == SweepAxis::Endowment && self.endowment.is_none() {
                return err("endowment sweep needs a pool (set pool = <n>)".into());
            }
        }
        Ok(())
    }

    /// Applies one sweep-axis value.
    pub fn with_axis_value(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(MarketError::domain(format!("{} needs a whole number, got {v}", axis.as_str())))
            }
        };
        match axis {
            SweepAxis::TaskDistance => {
                for a in c.agents.iter_mut().skip(1) {
                    a.task_distance = value;
                }
            }
            SweepAxis::Endowment => match c.endowment.as_mut() {
                Some(e) => e.fraction = value,
                None => return Err(MarketError::domain("endowment sweep needs a pool")),
            },
            SweepAxis::TradeEvery => c.trade_every = count(value)?,
            SweepAxis::TradeStart => c.trade_start = count(value)?,
        }
        c.sweep = None;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Parser::default().parse(text)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Agent,
    Broker,
    Sweep,
}

#[derive(Default)]
struct PartialSweep {
    axis: Option<SweepAxis>,
    values: Vec<f64>,
    seeds: Option<usize>,
    target: Option<(usize, String)>,
}

#[derive(Default)]
struct Parser {
    pool: Option<usize>,
    fraction: Option<f64>,
    pool_noise: Option<f64>,
    agent_lines: Vec<usize>,
    agent_has_n: Vec<bool>,
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| MarketError::Config {
        line,
        message: format!("invalid value {raw:?} for {key}"),
    })
}

fn choice<T>(line: usize, key: &str, raw: &str, options: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    options
        .iter()
        .find(|(name, _)| *name == raw)
        .map(|(_, v)| *v)
        .ok_or_else(|| MarketError::Config {
            line,
            message: format!(
                "invalid value {raw:?} for {key} (expected one of: {})",
                options.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ),
        })
}

impl Parser {
    fn parse(mut self, text: &str) -> Result<MarketConfig> {
        let mut c = MarketConfig::default();
        let mut section = Section::Top;
        let mut sweep: Option<(usize, PartialSweep)> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = match name.trim() {
                    "agent" => {
                        c.agents.push(AgentSpec {
                            name: format!("agent{}", c.agents.len()),
                            n: 0,
                            noise: 0.0,
                            policy: Policy::TradeWhenBeneficial,
                            task_distance: 0.0,
                            step_size: None,
                        });
                        self.agent_lines.push(line);
                        self.agent_has_n.push(false);
                        Section::Agent
                    }
                    "broker" => Section::Broker,
                    "sweep" => {
                        sweep.get_or_insert_with(|| (line, PartialSweep::default()));
                        Section::Sweep
                    }
                    other => {
                        return Err(MarketError::Config {
                            line,
                            message: format!("unknown section [{other}]"),
                        })
                    }
                };
                continue;
            }
            let Some((key, raw)) = content.split_once('=') else {
                return Err(MarketError::Config {
                    line,
                    message: format!("expected `key = value`, found {content:?}"),
                });
            };
            let (key, raw) = (key.trim(), raw.trim());
            match section {
                Section::Top => self.top(&mut c, line, key, raw)?,
                Section::Agent => self.agent(&mut c, line, key, raw)?,
                Section::Broker => match key {
                    "n" => c.broker.n = value(line, key, raw)?,
                    "noise" => c.broker.noise = value(line, key, raw)?,
                    _ => return Err(unknown(line, key, "[broker]")),
                },
                Section::Sweep => {
                    let s = &mut sweep.as_mut().expect("section opened").1;
                    match key {
                        "axis" => {
                            s.axis = Some(raw.parse().map_err(|m| MarketError::Config {
                                line,
                                message: m,
                            })?)
                        }
                        "values" => {
                            s.values = raw
                                .split(',')
                                .map(|v| value(line, key, v.trim()))
                                .collect::<Result<_>>()?
                        }
                        "seeds" => s.seeds = Some(value(line, key, raw)?),
                        "target" => s.target = Some((line, raw.to_string())),
                        _ => return Err(unknown(line, key, "[sweep]")),
                    }
                }
            }
        }

        for (i, has_n) in self.agent_has_n.iter().enumerate() {
            if !has_n && self.pool.is_none() {
                return Err(MarketError::Config {
                    line: self.agent_lines[i],
                    message: format!("agent {:?} is missing n", c.agents[i].name),
                });
            }
        }
        match (self.pool, self.fraction) {
            (Some(pool), fraction) => {
                c.endowment = Some(EndowmentSpec {
                    pool,
                    fraction: fraction.unwrap_or(0.0),
                    noise: self.pool_noise.unwrap_or(0.0),
                });
            }
            (None, Some(_)) => {
                return Err(MarketError::Config {
                    line: 0,
                    message: "endowment requires pool = <samples>".into(),
                })
            }
            (None, None) => {}
        }
        if let Some((line, s)) = sweep {
            let axis = s.axis.ok_or(MarketError::Config {
                line,
                message: "[sweep] is missing axis".into(),
            })?;
            let target = match s.target {
                None => 0,
                Some((tline, name)) => c
                    .agent_index(&name)
                    .or_else(|| name.parse().ok().filter(|i| *i < c.agents.len()))
                    .ok_or(MarketError::Config {
                        line: tline,
                        message: format!("sweep target {name:?} is not an agent"),
                    })?,
            };
            c.sweep = Some(SweepSpec {
                axis,
                values: s.values,
                seeds: s.seeds.unwrap_or(5),
                target,
            });
        }
        c.validate()?;
        Ok(c)
    }

    fn top(&mut self, c: &mut MarketConfig, line: usize, key: &str, raw: &str) -> Result<()> {
        match key {
            "seed" => c.seed = value(line, key, raw)?,
            "rounds" => c.rounds = value(line, key, raw)?,
            "dim" => c.dim = value(line, key, raw)?,
            "loss" => {
                c.loss = choice(
                    line,
                    key,
                    raw,
                    &[
                        ("sum_of_squares", LossSpec::SumOfSquares),
                        ("mean_per_sample", LossSpec::MeanPerSample),
                    ],
                )?
            }
            "gain_kind" => {
                c.gain_kind = choice(
                    line,
                    key,
                    raw,
                    &[
                        ("error_ratio", GainKind::ErrorRatio),
                        ("loss_difference", GainKind::LossDifference),
                    ],
                )?
            }
            "trade_every" => c.trade_every = value(line, key, raw)?,
            "trade_start" => c.trade_start = value(line, key, raw)?,
            "pricing" => {
                c.pricing = choice(
                    line,
                    key,
                    raw,
                    &[("on", true), ("off", false), ("true", true), ("false", false)],
                )?
            }
            "seller_prior" => {
                c.seller_prior = choice(
                    line,
                    key,
                    raw,
                    &[
                        ("uniform_on_bounds", SellerPrior::UniformOnBounds),
                        ("lower_bound", SellerPrior::LowerBound),
                    ],
                )?
            }
            "step_scale" => c.step_scale = value(line, key, raw)?,
            "init" => {
                c.init = choice(
                    line,
                    key,
                    raw,
                    &[("zeros", InitKind::Zeros), ("gaussian", InitKind::Gaussian)],
                )?
            }
            "init_scale" => c.init_scale = value(line, key, raw)?,
            "theta_scale" => c.theta_scale = value(line, key, raw)?,
            "epsilon" => c.epsilon = value(line, key, raw)?,
            "convergence_metric" => {
                c.convergence_metric = choice(
                    line,
                    key,
                    raw,
                    &[
                        ("excess_broker_loss", ConvergenceMetric::ExcessBrokerLoss),
                        ("grad_norm", ConvergenceMetric::GradNorm),
                    ],
                )?
            }
            "pool" => self.pool = Some(value(line, key, raw)?),
            "endowment" => self.fraction = Some(value(line, key, raw)?),
            "pool_noise" => self.pool_noise = Some(value(line, key, raw)?),
            _ => return Err(unknown(line, key, "the top level")),
        }
        Ok(())
    }

    fn agent(&mut self, c: &mut MarketConfig, line: usize, key: &str, raw: &str) -> Result<()> {
        let a = c.agents.last_mut().expect("section opened");
        match key {
            "name" => a.name = raw.to_string(),
            "n" => {
                a.n = value(line, key, raw)?;
                *self.agent_has_n.last_mut().expect("section opened") = true;
            }
            "noise" => a.noise = value(line, key, raw)?,
            "policy" => {
                a.policy = raw
                    .parse()
                    .map_err(|m| MarketError::Config { line, message: m })?
            }
            "task_distance" => a.task_distance = value(line, key, raw)?,
            "step_size" => {
                a.step_size = if raw == "auto" {
                    None
                } else {
                    Some(value(line, key, raw)?)
                }
            }
            _ => return Err(unknown(line, key, "[agent]")),
        }
        Ok(())
    }
}

fn unknown(line: usize, key: &str, place: &str) -> MarketError {
    MarketError::Config {
        line,
        message: format!("unknown key {key:?} in {place}"),
    }
}
