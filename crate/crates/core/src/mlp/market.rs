//! Agents training small classifiers on two-moons data.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::broker::{propose_merge, FnObjective};
use crate::engine::model::MarketModel;
use crate::error::{MarketError, Result};
use crate::mlp::align::align_to;
use crate::mlp::moons::two_moons;
use crate::mlp::net::{mlp_forward_loss, mlp_loss_gradient, mlp_step, MlpParams, MlpTaskKind};
use crate::{Dataset, Params, Proposal};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpMarketSpec {
    pub seed: u64,
    pub widths: Vec<usize>,
    /// Training-set size per agent.
    pub agent_sizes: Vec<usize>,
    pub broker_n: usize,
    pub noise: f64,
    pub step_size: f64,
    pub align_sweeps: usize,
    /// Re-index the seller's hidden units to match the buyer before merging.
    pub align: bool,
}

impl Default for MlpMarketSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            widths: vec![2, 16, 16, 16, 2],
            agent_sizes: vec![30, 300],
            broker_n: 500,
            noise: 0.2,
            step_size: 0.1,
            align_sweeps: 10,
            align: true,
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_BROKER: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_DATA: u64 = 100;
const STREAM_INIT: u64 = 200;

pub struct MlpMarket {
    spec: MlpMarketSpec,
    kind: MlpTaskKind,
    data: Vec<Dataset>,
    broker: Dataset,
    test: Dataset,
    init: Vec<Params>,
}

impl MlpMarket {
    pub fn build(spec: MlpMarketSpec) -> Result<Self> {
        if spec.agent_sizes.len() < 2 {
            return Err(MarketError::domain("need at least two agents"));
        }
        if spec.widths.first() != Some(&2) || spec.widths.last() != Some(&2) {
            return Err(MarketError::Architecture(
                "two-moons networks map 2 inputs to 2 classes".into(),
            ));
        }
        if !(spec.step_size > 0.0) || spec.align_sweeps == 0 {
            return Err(MarketError::domain("step size and sweeps must be positive"));
        }
        let data = spec
            .agent_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| two_moons(n, spec.noise, &mut stream(spec.seed, STREAM_DATA + i as u64)))
            .collect::<Result<_>>()?;
        let broker = two_moons(spec.broker_n, spec.noise, &mut stream(spec.seed, STREAM_BROKER))?;
        let test = two_moons(2000, spec.noise, &mut stream(spec.seed, STREAM_TEST))?;
        let init = (0..spec.agent_sizes.len())
            .map(|i| {
                MlpParams::<f64>::random(&spec.widths, &mut stream(spec.seed, STREAM_INIT + i as u64))
                    .map(|p| p.flatten())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            kind: MlpTaskKind::Classification,
            data,
            broker,
            test,
            init,
        })
    }

    pub fn spec(&self) -> &MlpMarketSpec {
        &self.spec
    }

    pub fn net(&self, params: &Params) -> Result<MlpParams<f64>> {
        MlpParams::unflatten(&self.spec.widths, params)
    }

    pub fn agent_data(&self, agent: usize) -> &Dataset {
        &self.data[agent]
    }

    pub fn broker_data(&self) -> &Dataset {
        &self.broker
    }

    /// Held-out data disjoint from every training and broker set.
    pub fn test_data(&self) -> &Dataset {
        &self.test
    }

    pub fn loss_on(&self, params: &Params, data: &Dataset) -> Result<f64> {
        mlp_forward_loss(&self.net(params)?, data, self.kind)
    }

    /// Broker-optimized merge restricted to `layers`; the seller is expected
    /// to be aligned already.
    pub fn propose_subset(
        &self,
        buyer: &Params,
        seller: &Params,
        layers: &BTreeSet<usize>,
        extra_weights: &[f64],
    ) -> Result<Proposal> {
        let spliced = splice(&self.net(buyer)?, &self.net(seller)?, layers)?.flatten();
        let objective = FnObjective::new(buyer.dim(), |p: &Params| self.broker_loss(0, p));
        propose_merge(buyer, &spliced, &objective, extra_weights)
    }
}

/// `buyer` with the layers in `layers` taken from `seller`. Merging `buyer`
/// with this at weight `w` equals the layer-subset merge at `w`.
pub fn splice(
    buyer: &MlpParams<f64>,
    seller: &MlpParams<f64>,
    layers: &BTreeSet<usize>,
) -> Result<MlpParams<f64>> {
    crate::mlp::align::subset_merge(buyer, seller, layers, 1.0)
}

impl MarketModel for MlpMarket {
    fn num_agents(&self) -> usize {
        self.data.len()
    }

    fn initial_params(&self, agent: usize) -> Params {
        self.init[agent].clone()
    }

    fn local_step(&self, agent: usize, params: &Params) -> Result<Params> {
        Ok(mlp_step(&self.net(params)?, &self.data[agent], self.kind, self.spec.step_size)?.flatten())
    }

    fn own_loss(&self, agent: usize, params: &Params) -> Result<f64> {
        self.loss_on(params, &self.data[agent])
    }

    fn grad_norm(&self, agent: usize, params: &Params) -> Result<f64> {
        let (_, g) = mlp_loss_gradient(&self.net(params)?, &self.data[agent], self.kind)?;
        Ok(g.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    fn broker_loss(&self, _agent: usize, params: &Params) -> Result<f64> {
        self.loss_on(params, &self.broker)
    }

    fn broker_loss_floor(&self, _agent: usize) -> f64 {
        0.0
    }

    fn align(&self, reference: &Params, candidate: &Params) -> Result<Params> {
        if !self.spec.align {
            return Ok(candidate.clone());
        }
        Ok(align_to(&self.net(reference)?, &self.net(candidate)?, self.spec.align_sweeps)?.flatten())
    }

    fn propose(
        &self,
        buyer: usize,
        buyer_dot: &Params,
        seller: &Params,
        extra_weights: &[f64],
    ) -> Result<Proposal> {
        let objective = FnObjective::new(buyer_dot.dim(), |p: &Params| self.broker_loss(buyer, p));
        propose_merge(buyer_dot, seller, &objective, extra_weights)
    }

    fn theta_star(&self, _agent: usize) -> Option<&Params> {
        None
    }

    fn data_size(&self, agent: usize) -> usize {
        self.data[agent].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::GainKind;
    use crate::engine::config::{MarketConfig, Policy};
    use crate::engine::sim::run_market;
    use crate::params::merge;

    fn small() -> MlpMarketSpec {
        MlpMarketSpec {
            widths: vec![2, 8, 8, 2],
            agent_sizes: vec![20, 120],
            broker_n: 150,
            ..MlpMarketSpec::default()
        }
    }

    fn schedule(rounds: usize) -> MarketConfig {
        let mut c = MarketConfig::two_agents(2, [(20, 0.0), (120, 0.0)], 10);
        c.rounds = rounds;
        c.gain_kind = GainKind::LossDifference;
        c
    }

    #[test]
    fn engine_runs_an_mlp_market() {
        let m = MlpMarket::build(small()).unwrap();
        let c = schedule(15);
        let log = run_market(&m, &c, vec![m.spec().step_size; 2], None).unwrap();
        assert_eq!(log.rounds(), 15);
        for t in log.trades.iter().filter(|t| t.indicator) {
            assert!(t.gain.value > 0.0);
        }
        let again = run_market(&m, &c, vec![m.spec().step_size; 2], None).unwrap();
        assert_eq!(log, again);
        let twin = run_market(&m, &c.out_of_market(), vec![m.spec().step_size; 2], None).unwrap();
        assert!(log.final_point(0).broker_loss < twin.final_point(0).broker_loss);
    }

    #[test]
    fn optimized_weight_beats_half_merge() {
        let m = MlpMarket::build(small()).unwrap();
        let a = m.initial_params(0);
        let b = m.align(&a, &m.initial_params(1)).unwrap();
        let p = m.propose(0, &a, &b, &[]).unwrap();
        let half = m.broker_loss(0, &merge(&a, &b, 0.5).unwrap()).unwrap();
        assert!(p.broker_loss_after <= half);
    }

    #[test]
    fn spliced_full_merge_equals_subset_merge() {
        let m = MlpMarket::build(small()).unwrap();
        let (a, b) = (m.initial_params(0), m.initial_params(1));
        let layers = BTreeSet::from([1]);
        let p = m.propose_subset(&a, &b, &layers, &[]).unwrap();
        let direct = crate::mlp::align::subset_merge(&m.net(&a).unwrap(), &m.net(&b).unwrap(), &layers, p.weight)
            .unwrap()
            .flatten();
        for (x, y) in p.merged.as_slice().iter().zip(direct.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn fedavg_policy_skips_alignment() {
        let m = MlpMarket::build(small()).unwrap();
        let mut c = schedule(3);
        c.agents.iter_mut().for_each(|a| a.policy = Policy::FedAvg);
        let log = run_market(&m, &c, vec![0.1; 2], None).unwrap();
        assert!(log.trades.iter().all(|t| t.indicator));
        assert_eq!(log.trades[0].merge_weight, 120.0 / 140.0);
    }

    #[test]
    fn rejects_wrong_io_widths() {
        let spec = MlpMarketSpec {
            widths: vec![3, 4, 2],
            ..small()
        };
        assert!(MlpMarket::build(spec).is_err());
    }
}
