//! What the round engine needs from a family of models, and the synthetic
//! linear-regression market.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::broker::{propose_merge, DatasetObjective, GramObjective, Objective};
use crate::engine::config::{InitKind, MarketConfig};
use crate::error::{MarketError, Result};
use crate::linear_task::{
    gaussian_params, random_direction, smoothness, spectrum, synthesize_task, LinearTask,
    SpectrumSummary,
};
use crate::params::{empirical_loss, gradient_step, loss_gradient, LossSpec};
use crate::{Dataset, Params, Proposal};

/// A population of agents plus the broker's evaluation data.
pub trait MarketModel: Sync {
    fn num_agents(&self) -> usize;

    fn initial_params(&self, agent: usize) -> Params;

    /// One local training step on the agent's own data.
    fn local_step(&self, agent: usize, params: &Params) -> Result<Params>;

    fn own_loss(&self, agent: usize, params: &Params) -> Result<f64>;

    fn grad_norm(&self, agent: usize, params: &Params) -> Result<f64>;

    /// Loss on the broker's validation data for `agent`'s task.
    fn broker_loss(&self, agent: usize, params: &Params) -> Result<f64>;

    /// Smallest attainable broker loss for `agent`'s task.
    fn broker_loss_floor(&self, agent: usize) -> f64;

    /// Re-indexes `candidate` to match `reference`; identity by default.
    fn align(&self, _reference: &Params, candidate: &Params) -> Result<Params> {
        Ok(candidate.clone())
    }

    /// Broker's optimized merge of `seller` into `buyer_dot`.
    fn propose(
        &self,
        buyer: usize,
        buyer_dot: &Params,
        seller: &Params,
        extra_weights: &[f64],
    ) -> Result<Proposal>;

    fn theta_star(&self, agent: usize) -> Option<&Params>;

    fn data_size(&self, agent: usize) -> usize;
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_THETA: u64 = 1;
const STREAM_DIRECTION: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_POOL: u64 = 4;
const STREAM_BROKER_INPUTS: u64 = 5;
const STREAM_BROKER_NOISE: u64 = 100;
const STREAM_AGENT: u64 = 1000;

enum BrokerObjective {
    Gram(GramObjective<f64>),
    Direct,
}

struct BrokerTask {
    data: Dataset,
    objective: BrokerObjective,
    spec: LossSpec,
    floor: f64,
}

impl Objective<f64> for BrokerTask {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn loss(&self, params: &Params) -> Result<f64> {
        match &self.objective {
            BrokerObjective::Gram(g) => g.loss(params),
            BrokerObjective::Direct => DatasetObjective::new(&self.data, self.spec).loss(params),
        }
    }

    fn line_minimizer(&self, from: &Params, to: &Params) -> Result<Option<f64>> {
        match &self.objective {
            BrokerObjective::Gram(g) => g.line_minimizer(from, to),
            BrokerObjective::Direct => {
                DatasetObjective::new(&self.data, self.spec).line_minimizer(from, to)
            }
        }
    }
}

/// Agents holding synthetic linear-regression tasks.
///
/// Agents whose `task_distance` coincide share a task (and a broker
/// validation set); the broker's validation sets share one input matrix.
pub struct LinearMarket {
    loss: LossSpec,
    tasks: Vec<LinearTask<f64>>,
    task_of: Vec<usize>,
    step_sizes: Vec<f64>,
    broker: Vec<BrokerTask>,
    init: Params,
}

impl LinearMarket {
    pub fn build(config: &MarketConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let seed = config.seed;
        let base = gaussian_params(d, config.theta_scale, &mut stream(seed, STREAM_THETA));
        let direction: Params = random_direction(d, &mut stream(seed, STREAM_DIRECTION));

        // Distinct distances define distinct true parameters.
        let mut task_ids: BTreeMap<u64, usize> = BTreeMap::new();
        let mut stars: Vec<Params> = Vec::new();
        let mut task_of = Vec::with_capacity(config.agents.len());
        for a in &config.agents {
            let id = *task_ids.entry(a.task_distance.to_bits()).or_insert_with(|| {
                stars.push(
                    base.add_scaled(a.task_distance, &direction)
                        .expect("matching dimensions"),
                );
                stars.len() - 1
            });
            task_of.push(id);
        }

        let tasks: Vec<LinearTask<f64>> = match &config.endowment {
            Some(e) => {
                let pool = synthesize_task(
                    d,
                    e.pool,
                    e.noise,
                    &stars[task_of[0]],
                    &mut stream(seed, STREAM_POOL),
                )?;
                let half = e.pool / 2;
                let take_second = (e.fraction * (e.pool - half) as f64).floor() as usize;
                let take_first = (e.fraction * half as f64).floor() as usize;
                let a = pool.data.select_rows(|i| i < half + take_second)?;
                let b = pool.data.select_rows(|i| i >= half || i < take_first)?;
                [a, b]
                    .into_iter()
                    .map(|data| LinearTask {
                        data,
                        true_params: pool.true_params.clone(),
                        noise_variance: pool.noise_variance,
                    })
                    .collect()
            }
            None => config
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    synthesize_task(
                        d,
                        a.n,
                        a.noise,
                        &stars[task_of[i]],
                        &mut stream(seed, STREAM_AGENT + i as u64),
                    )
                })
                .collect::<Result<_>>()?,
        };

        let step_sizes = config
            .agents
            .iter()
            .zip(&tasks)
            .map(|(a, t)| {
                a.step_size
                    .unwrap_or_else(|| config.step_scale / smoothness(&t.data, config.loss))
            })
            .collect::<Vec<_>>();
        if let Some(bad) = step_sizes.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(MarketError::domain(format!(
                "agent {:?} has a degenerate step size (all-zero inputs?)",
                config.agents[bad].name
            )));
        }

        let broker = build_broker(config, &stars)?;

        let init = match config.init {
            InitKind::Zeros => Params::zeros(d),
            InitKind::Gaussian => gaussian_params(d, config.init_scale, &mut stream(seed, STREAM_INIT)),
        };

        Ok(Self {
            loss: config.loss,
            tasks,
            task_of,
            step_sizes,
            broker,
            init,
        })
    }

    pub fn task(&self, agent: usize) -> &LinearTask<f64> {
        &self.tasks[agent]
    }

    pub fn step_size(&self, agent: usize) -> f64 {
        self.step_sizes[agent]
    }

    pub fn broker_data(&self, agent: usize) -> &Dataset {
        &self.broker[self.task_of[agent]].data
    }

    /// Swaps in new training data for one agent, keeping its true
    /// parameters.
    pub fn replace_agent_data(&mut self, agent: usize, data: Dataset, step_size: f64) -> Result<()> {
        let task = &mut self.tasks[agent];
        if data.dim() != task.data.dim() {
            return Err(MarketError::DimensionMismatch {
                context: "replacement data",
                expected: task.data.dim(),
                found: data.dim(),
            });
        }
        if !(step_size > 0.0) || !step_size.is_finite() {
            return Err(MarketError::domain(format!("step size must be positive, got {step_size}")));
        }
        task.data = data;
        self.step_sizes[agent] = step_size;
        Ok(())
    }

    /// Condition of the agent's own `XᵀX`.
    pub fn own_spectrum(&self, agent: usize) -> Result<SpectrumSummary<f64>> {
        spectrum(&self.tasks[agent].data)
    }
}

fn build_broker(config: &MarketConfig, stars: &[Params]) -> Result<Vec<BrokerTask>> {
    let (n, d) = (config.broker.n, config.dim);
    let mut rng = stream(config.seed, STREAM_BROKER_INPUTS);
    let inputs: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let sd = config.broker.noise.sqrt();
    let mut factor: Option<Option<(Vec<f64>, Vec<f64>)>> = None;
    let mut out = Vec::with_capacity(stars.len());
    for (k, star) in stars.iter().enumerate() {
        let mut noise = stream(config.seed, STREAM_BROKER_NOISE + k as u64);
        let labels = inputs
            .chunks_exact(d)
            .map(|row| {
                let clean: f64 = row.iter().zip(star.as_slice()).map(|(x, t)| x * t).sum();
                if sd > 0.0 {
                    clean + sd * noise.sample::<f64, _>(StandardNormal)
                } else {
                    clean
                }
            })
            .collect();
        let data = Dataset::new(inputs.clone(), labels, d)?;
        let shared = factor.get_or_insert_with(|| {
            if n >= d {
                GramObjective::factorize(&data).ok()
            } else {
                None
            }
        });
        let task = match shared {
            Some((gram, chol)) => {
                let g = GramObjective::from_factor(gram.clone(), chol, &data, config.loss)?;
                let floor = g.min_loss();
                BrokerTask {
                    data,
                    objective: BrokerObjective::Gram(g),
                    spec: config.loss,
                    floor,
                }
            }
            None => BrokerTask {
                data,
                objective: BrokerObjective::Direct,
                spec: config.loss,
                floor: 0.0,
            },
        };
        out.push(task);
    }
    Ok(out)
}

impl MarketModel for LinearMarket {
    fn num_agents(&self) -> usize {
        self.tasks.len()
    }

    fn initial_params(&self, _agent: usize) -> Params {
        self.init.clone()
    }

    fn local_step(&self, agent: usize, params: &Params) -> Result<Params> {
        gradient_step(params, &self.tasks[agent].data, self.step_sizes[agent], self.loss)
    }

    fn own_loss(&self, agent: usize, params: &Params) -> Result<f64> {
        empirical_loss(params, &self.tasks[agent].data, self.loss)
    }

    fn grad_norm(&self, agent: usize, params: &Params) -> Result<f64> {
        let g = loss_gradient(params, &self.tasks[agent].data, self.loss)?;
        Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    fn broker_loss(&self, agent: usize, params: &Params) -> Result<f64> {
        self.broker[self.task_of[agent]].loss(params)
    }

    fn broker_loss_floor(&self, agent: usize) -> f64 {
        self.broker[self.task_of[agent]].floor
    }

    fn propose(
        &self,
        buyer: usize,
        buyer_dot: &Params,
        seller: &Params,
        extra_weights: &[f64],
    ) -> Result<Proposal> {
        propose_merge(buyer_dot, seller, &self.broker[self.task_of[buyer]], extra_weights)
    }

    fn theta_star(&self, agent: usize) -> Option<&Params> {
        Some(&self.tasks[agent].true_params)
    }

    fn data_size(&self, agent: usize) -> usize {
        self.tasks[agent].data.len()
    }
}
