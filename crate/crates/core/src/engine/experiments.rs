//! Parameter sweeps over paired market/out-of-market runs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::config::{MarketConfig, SweepAxis};
use crate::engine::metrics::relative_improvement;
use crate::engine::output::fmt_f64;
use crate::engine::sim::run_with_twin;
use crate::error::{MarketError, Result};

pub const SWEEP_ROWS_HEADER: &str =
    "cell,axis,value,seed,agent,market_broker_loss,twin_broker_loss,improvement";
pub const SWEEP_AGGREGATE_HEADER: &str =
    "cell,axis,value,agent,seeds,mean_improvement,std_improvement,mean_market_broker_loss,mean_twin_broker_loss";

/// One (cell, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub value: f64,
    pub seed: u64,
    pub market_broker_loss: f64,
    pub twin_broker_loss: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepAggregate {
    pub cell: usize,
    pub value: f64,
    pub seeds: usize,
    pub mean_improvement: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std_improvement: f64,
    pub mean_market_broker_loss: f64,
    pub mean_twin_broker_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub agent: String,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepResult {
    /// Rank correlation between axis values and mean improvement.
    pub fn spearman(&self) -> f64 {
        let x: Vec<f64> = self.aggregates.iter().map(|a| a.value).collect();
        let y: Vec<f64> = self.aggregates.iter().map(|a| a.mean_improvement).collect();
        spearman(&x, &y)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = format!("{SWEEP_ROWS_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.cell,
                self.axis.as_str(),
                fmt_f64(r.value),
                r.seed,
                self.agent,
                fmt_f64(r.market_broker_loss),
                fmt_f64(r.twin_broker_loss),
                fmt_f64(r.improvement),
            );
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = format!("{SWEEP_AGGREGATE_HEADER}\n");
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                a.cell,
                self.axis.as_str(),
                fmt_f64(a.value),
                self.agent,
                a.seeds,
                fmt_f64(a.mean_improvement),
                fmt_f64(a.std_improvement),
                fmt_f64(a.mean_market_broker_loss),
                fmt_f64(a.mean_twin_broker_loss),
            );
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs every (value, seed) cell of `config.sweep` on up to `jobs` threads.
/// Row order depends only on the config.
pub fn run_sweep(config: &MarketConfig, jobs: usize) -> Result<SweepResult> {
    config.validate()?;
    let spec = config
        .sweep
        .as_ref()
        .ok_or_else(|| MarketError::domain("config has no [sweep] section"))?;
    let cells: Vec<(usize, f64, u64)> = spec
        .values
        .iter()
        .enumerate()
        .flat_map(|(cell, &v)| (0..spec.seeds as u64).map(move |k| (cell, v, config.seed + k)))
        .collect();
    let configs = cells
        .iter()
        .map(|&(_, v, seed)| {
            let mut c = config.with_axis_value(spec.axis, v)?;
            c.seed = seed;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let target = spec.target;
    let run = |(&(cell, value, seed), c): (&(usize, f64, u64), &MarketConfig)| -> Result<SweepRow> {
        let (market, twin) = run_with_twin(c)?;
        Ok(SweepRow {
            cell,
            value,
            seed,
            market_broker_loss: market.final_point(target).broker_loss,
            twin_broker_loss: twin.final_point(target).broker_loss,
            improvement: relative_improvement(&market, &twin, target),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| MarketError::domain(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .zip(configs.par_iter())
            .map(run)
            .collect::<Result<Vec<_>>>()
    })?;

    let aggregates = spec
        .values
        .iter()
        .enumerate()
        .map(|(cell, &value)| {
            let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.cell == cell).collect();
            let imp: Vec<f64> = mine.iter().map(|r| r.improvement).collect();
            let market: Vec<f64> = mine.iter().map(|r| r.market_broker_loss).collect();
            let twin: Vec<f64> = mine.iter().map(|r| r.twin_broker_loss).collect();
            SweepAggregate {
                cell,
                value,
                seeds: mine.len(),
                mean_improvement: mean(&imp),
                std_improvement: sample_std(&imp),
                mean_market_broker_loss: mean(&market),
                mean_twin_broker_loss: mean(&twin),
            }
        })
        .collect();

    Ok(SweepResult {
        axis: spec.axis,
        agent: config.agents[target].name.clone(),
        rows,
        aggregates,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
