//! The per-round trading protocol and full simulations.

use std::collections::BTreeMap;

use crate::broker::{fedavg_weight, gain_error_ratio, GainKind, GainReport};
use crate::engine::config::{MarketConfig, Policy};
use crate::engine::model::{LinearMarket, MarketModel};
use crate::error::{MarketError, Result};
use crate::linear_task::estimation_error;
use crate::params::merge;
use crate::pricing::{seller_virtual_valuation, settle};
use crate::{Gain, Params, Proposal};

/// Valuation standing in for an unbounded error-ratio gain.
pub const VALUATION_CAP: f64 = 1e12;

/// One evaluated purchase opportunity.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeRecord {
    pub round: usize,
    pub buyer: usize,
    pub seller: usize,
    pub merge_weight: f64,
    pub gain: Gain,
    pub buyer_valuation: Option<f64>,
    pub seller_valuation: Option<f64>,
    /// Amount the buyer pays; zero in collaborative mode, absent when no
    /// trade took place.
    pub payment: Option<f64>,
    /// The buyer ends the round with the merged parameters.
    pub indicator: bool,
}

/// Per-agent state after a round (round 0 is the initial state).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub round: usize,
    pub agent: usize,
    pub broker_loss: f64,
    pub own_loss: f64,
    pub est_error: Option<f64>,
    pub grad_norm: f64,
    pub cum_payment: f64,
    /// Own loss right after this round's local step, before any purchase.
    pub step_own_loss: Option<f64>,
    /// Estimation error right after this round's local step.
    pub step_est_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketLog {
    pub config: MarketConfig,
    pub agent_names: Vec<String>,
    pub step_sizes: Vec<f64>,
    pub broker_floor: Vec<f64>,
    /// Ordered by round, then agent.
    pub curves: Vec<CurvePoint>,
    pub trades: Vec<TradeRecord>,
    pub final_params: Vec<Params>,
}

impl MarketLog {
    pub fn num_agents(&self) -> usize {
        self.agent_names.len()
    }

    pub fn rounds(&self) -> usize {
        self.curves.len() / self.num_agents() - 1
    }

    pub fn point(&self, round: usize, agent: usize) -> &CurvePoint {
        &self.curves[round * self.num_agents() + agent]
    }

    pub fn agent_curve(&self, agent: usize) -> impl Iterator<Item = &CurvePoint> {
        self.curves.iter().filter(move |p| p.agent == agent)
    }

    pub fn final_point(&self, agent: usize) -> &CurvePoint {
        self.point(self.rounds(), agent)
    }

    /// Trades that executed, with `agent` as buyer.
    pub fn purchases(&self, agent: usize) -> impl Iterator<Item = &TradeRecord> {
        self.trades
            .iter()
            .filter(move |t| t.buyer == agent && t.indicator)
    }
}

/// What an agent sees when deciding whether to buy: its own gain and the
/// purchased weights, never the counterparty's gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionInput {
    pub round: usize,
    pub own_gain: Gain,
    pub own_weight: f64,
    /// The seller's weight for the reverse purchase, when it was evaluated.
    pub counterparty_weight: Option<f64>,
}

pub trait Decide: Send + Sync {
    fn wants_to_buy(&self, input: &DecisionInput) -> bool;
}

impl Decide for Policy {
    fn wants_to_buy(&self, input: &DecisionInput) -> bool {
        match self {
            Policy::TradeWhenBeneficial | Policy::Async { .. } => input.own_gain.trade_beneficial,
            Policy::AlwaysTrade | Policy::FedAvg => true,
            Policy::NeverTrade => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub params: Vec<Params>,
    pub cum_payment: Vec<f64>,
}

impl MarketState {
    pub fn initial(model: &dyn MarketModel) -> Self {
        let n = model.num_agents();
        Self {
            params: (0..n).map(|u| model.initial_params(u)).collect(),
            cum_payment: vec![0.0; n],
        }
    }
}

/// Result of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub state: MarketState,
    pub trades: Vec<TradeRecord>,
    /// Parameters after the local step, before any purchase.
    pub local: Vec<Params>,
}

struct Evaluation {
    proposal: Proposal,
    gain: Gain,
}

fn gain_of(
    model: &dyn MarketModel,
    kind: GainKind,
    buyer: usize,
    dot: &Params,
    proposal: &Proposal,
) -> Result<Gain> {
    match kind {
        GainKind::LossDifference => Ok(GainReport::loss_difference(
            proposal.broker_loss_before,
            proposal.broker_loss_after,
        )),
        GainKind::ErrorRatio => {
            let star = model.theta_star(buyer).ok_or_else(|| {
                MarketError::domain("error-ratio gain needs known true parameters")
            })?;
            match gain_error_ratio(dot, &proposal.merged, star) {
                Err(MarketError::PerfectMerge) => Ok(GainReport::unbounded_ratio()),
                other => other,
            }
        }
    }
}

fn evaluate(
    model: &dyn MarketModel,
    config: &MarketConfig,
    dots: &[Params],
    buyer: usize,
    seller: usize,
) -> Result<Evaluation> {
    let share = fedavg_weight::<f64>(model.data_size(buyer), model.data_size(seller))?;
    let proposal = if config.agents[buyer].policy == Policy::FedAvg {
        let merged = merge(&dots[buyer], &dots[seller], share)?;
        Proposal {
            weight: share,
            broker_loss_before: model.broker_loss(buyer, &dots[buyer])?,
            broker_loss_after: model.broker_loss(buyer, &merged)?,
            merged,
        }
    } else {
        let aligned = model.align(&dots[buyer], &dots[seller])?;
        model.propose(buyer, &dots[buyer], &aligned, &[share])?
    };
    let gain = gain_of(model, config.gain_kind, buyer, &dots[buyer], &proposal)?;
    Ok(Evaluation { proposal, gain })
}

fn valuation(gain: f64) -> f64 {
    gain.min(VALUATION_CAP)
}

/// One round: local steps for everyone, then try-before-purchase, decisions,
/// pricing and settlement for every agent allowed to buy.
pub fn run_round(
    model: &dyn MarketModel,
    config: &MarketConfig,
    deciders: &[&dyn Decide],
    state: &MarketState,
    round: usize,
) -> Result<RoundOutcome> {
    let n = model.num_agents();
    let dots = (0..n)
        .map(|u| model.local_step(u, &state.params[u]))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_round(round))?;

    let buyers: Vec<usize> = (0..n).filter(|&u| config.is_trading_round(u, round)).collect();
    let mut cache: BTreeMap<(usize, usize), Evaluation> = BTreeMap::new();
    let ensure = |cache: &mut BTreeMap<(usize, usize), Evaluation>, u: usize, v: usize| -> Result<()> {
        if !cache.contains_key(&(u, v)) {
            let e = evaluate(model, config, &dots, u, v).map_err(|e| e.at_round(round))?;
            cache.insert((u, v), e);
        }
        Ok(())
    };

    let mut records = Vec::with_capacity(buyers.len());
    let mut next = dots.clone();
    let mut transfers: Vec<(usize, usize, f64)> = Vec::new();
    for &u in &buyers {
        let mut best: Option<usize> = None;
        for v in (0..n).filter(|&v| v != u) {
            ensure(&mut cache, u, v)?;
            let better = match best {
                None => true,
                Some(b) => cache[&(u, v)].gain.value > cache[&(u, b)].gain.value,
            };
            if better {
                best = Some(v);
            }
        }
        let v = best.expect("at least two agents");
        let counterparty_weight = if buyers.contains(&v) {
            ensure(&mut cache, v, u)?;
            Some(cache[&(v, u)].proposal.weight)
        } else {
            None
        };
        let eval = &cache[&(u, v)];
        let input = DecisionInput {
            round,
            own_gain: eval.gain,
            own_weight: eval.proposal.weight,
            counterparty_weight,
        };
        let wants = deciders[u].wants_to_buy(&input);

        let mut record = TradeRecord {
            round,
            buyer: u,
            seller: v,
            merge_weight: eval.proposal.weight,
            gain: eval.gain,
            buyer_valuation: None,
            seller_valuation: None,
            payment: None,
            indicator: false,
        };
        if wants {
            if config.pricing {
                let buyer_val = valuation(eval.gain.value);
                let buyer_weight = eval.proposal.weight;
                ensure(&mut cache, v, u)?;
                let reverse = &cache[&(v, u)];
                let seller_gain = valuation(reverse.gain.value);
                let seller_val = if seller_gain > 0.0 {
                    seller_virtual_valuation(
                        seller_gain,
                        reverse.proposal.weight,
                        buyer_weight,
                        config.seller_prior,
                    )
                    .map_err(|e| e.at_round(round))?
                } else {
                    0.0
                };
                record.buyer_valuation = Some(buyer_val);
                record.seller_valuation = Some(seller_val);
                record.payment = settle(buyer_val, seller_val);
            } else {
                record.payment = Some(0.0);
            }
            record.indicator = record.payment.is_some();
        }
        if record.indicator {
            next[u] = cache[&(u, v)].proposal.merged.clone();
            if let Some(p) = record.payment.filter(|p| *p != 0.0) {
                transfers.push((u, v, p));
            }
        }
        records.push(record);
    }

    // Net each pair's payments into one signed transfer so that the two
    // ledgers move by exactly opposite amounts.
    let mut cum = state.cum_payment.clone();
    let mut net: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (buyer, seller, p) in transfers {
        let (lo, hi) = (buyer.min(seller), buyer.max(seller));
        // Positive values flow from `hi` to `lo`.
        *net.entry((lo, hi)).or_insert(0.0) += if seller == lo { p } else { -p };
    }
    for ((lo, hi), x) in net {
        cum[lo] += x;
        cum[hi] -= x;
    }

    Ok(RoundOutcome {
        state: MarketState {
            params: next,
            cum_payment: cum,
        },
        trades: records,
        local: dots,
    })
}

fn curve_points(
    model: &dyn MarketModel,
    state: &MarketState,
    local: Option<&[Params]>,
    round: usize,
) -> Result<Vec<CurvePoint>> {
    (0..model.num_agents())
        .map(|u| {
            let p = &state.params[u];
            Ok(CurvePoint {
                round,
                agent: u,
                broker_loss: model.broker_loss(u, p)?,
                own_loss: model.own_loss(u, p)?,
                est_error: model
                    .theta_star(u)
                    .map(|s| estimation_error(p, s))
                    .transpose()?,
                grad_norm: model.grad_norm(u, p)?,
                cum_payment: state.cum_payment[u],
                step_own_loss: local.map(|l| model.own_loss(u, &l[u])).transpose()?,
                step_est_error: match (local, model.theta_star(u)) {
                    (Some(l), Some(s)) => Some(estimation_error(&l[u], s)?),
                    _ => None,
                },
            })
        })
        .collect::<Result<_>>()
        .map_err(|e: MarketError| e.at_round(round))
}

/// Runs `config.rounds` rounds on `model`. Decisions follow each agent's
/// policy unless `deciders` overrides them.
pub fn run_market(
    model: &dyn MarketModel,
    config: &MarketConfig,
    step_sizes: Vec<f64>,
    deciders: Option<&[&dyn Decide]>,
) -> Result<MarketLog> {
    config.validate()?;
    let n = model.num_agents();
    if n != config.agents.len() {
        return Err(MarketError::domain(format!(
            "model has {n} agents, config has {}",
            config.agents.len()
        )));
    }
    let policies: Vec<&dyn Decide> = config.agents.iter().map(|a| &a.policy as &dyn Decide).collect();
    let deciders = deciders.unwrap_or(&policies);
    if deciders.len() != n {
        return Err(MarketError::domain("one decider per agent required"));
    }

    let mut state = MarketState::initial(model);
    let mut curves = curve_points(model, &state, None, 0)?;
    let mut trades = Vec::new();
    for round in 1..=config.rounds {
        let outcome = run_round(model, config, deciders, &state, round)?;
        state = outcome.state;
        trades.extend(outcome.trades);
        curves.extend(curve_points(model, &state, Some(&outcome.local), round)?);
    }
    Ok(MarketLog {
        config: config.clone(),
        agent_names: config.agents.iter().map(|a| a.name.clone()).collect(),
        step_sizes,
        broker_floor: (0..n).map(|u| model.broker_loss_floor(u)).collect(),
        curves,
        trades,
        final_params: state.params,
    })
}

/// Builds the linear market described by `config` and runs it.
pub fn run_simulation(config: &MarketConfig) -> Result<MarketLog> {
    let model = LinearMarket::build(config)?;
    run_linear(&model, config, None)
}

pub fn run_linear(
    model: &LinearMarket,
    config: &MarketConfig,
    deciders: Option<&[&dyn Decide]>,
) -> Result<MarketLog> {
    let steps = (0..model.num_agents()).map(|u| model.step_size(u)).collect();
    run_market(model, config, steps, deciders)
}

/// The market run and its out-of-market twin on one shared model.
pub fn run_with_twin(config: &MarketConfig) -> Result<(MarketLog, MarketLog)> {
    let model = LinearMarket::build(config)?;
    let market = run_linear(&model, config, None)?;
    let twin = run_linear(&model, &config.out_of_market(), None)?;
    Ok((market, twin))
}
