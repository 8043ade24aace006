//! CSV and JSON artifacts for a market run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::engine::config::MarketConfig;
use crate::engine::metrics::{summarize, AgentSummary};
use crate::engine::sim::MarketLog;
use crate::error::Result;

pub const TRADES_HEADER: &str = "round,buyer,seller,merge_weight,gain_kind,gain_value,trade_beneficial,buyer_valuation,seller_valuation,payment,indicator";
pub const CURVES_HEADER: &str = "round,agent,broker_loss,own_loss,est_error,cum_payment";

pub const TRADES_FILE: &str = "trades.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// 17 significant digits, so values round-trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn trades_csv(log: &MarketLog) -> String {
    let mut out = String::with_capacity(128 * (log.trades.len() + 1));
    out.push_str(TRADES_HEADER);
    out.push('\n');
    for t in &log.trades {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            t.round,
            log.agent_names[t.buyer],
            log.agent_names[t.seller],
            fmt_f64(t.merge_weight),
            t.gain.kind.as_str(),
            fmt_f64(t.gain.value),
            t.gain.trade_beneficial,
            fmt_opt(t.buyer_valuation),
            fmt_opt(t.seller_valuation),
            fmt_opt(t.payment),
            t.indicator,
        );
    }
    out
}

pub fn curves_csv(log: &MarketLog) -> String {
    let mut out = String::with_capacity(96 * (log.curves.len() + 1));
    out.push_str(CURVES_HEADER);
    out.push('\n');
    for p in &log.curves {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.round,
            log.agent_names[p.agent],
            fmt_f64(p.broker_loss),
            fmt_f64(p.own_loss),
            fmt_opt(p.est_error),
            fmt_f64(p.cum_payment),
        );
    }
    out
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub config: &'a MarketConfig,
    pub rounds: usize,
    pub trades_evaluated: usize,
    pub trades_executed: usize,
    pub agents: Vec<AgentSummary>,
}

pub fn summary(log: &MarketLog) -> Summary<'_> {
    Summary {
        config: &log.config,
        rounds: log.rounds(),
        trades_evaluated: log.trades.len(),
        trades_executed: log.trades.iter().filter(|t| t.indicator).count(),
        agents: summarize(log),
    }
}

pub fn summary_json(log: &MarketLog) -> String {
    let mut s = serde_json::to_string_pretty(&summary(log)).expect("summary is serializable");
    s.push('\n');
    s
}

/// Writes `contents` to a sibling temporary file, then renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `trades.csv`, `curves.csv` and `summary.json` into `dir`.
pub fn write_outputs(log: &MarketLog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(TRADES_FILE), &trades_csv(log))?;
    write_atomic(&dir.join(CURVES_FILE), &curves_csv(log))?;
    write_atomic(&dir.join(SUMMARY_FILE), &summary_json(log))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::sim::run_simulation;

    fn log(pricing: bool) -> MarketLog {
        let mut c = MarketConfig::two_agents(6, [(20, 0.3), (30, 0.3)], 100);
        c.rounds = 5;
        c.pricing = pricing;
        run_simulation(&c).unwrap()
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn csv_shapes() {
        let l = log(true);
        let trades = trades_csv(&l);
        let mut lines = trades.lines();
        assert_eq!(lines.next(), Some(TRADES_HEADER));
        assert_eq!(lines.count(), l.trades.len());
        for line in trades.lines() {
            assert_eq!(line.split(',').count(), 11);
        }
        let curves = curves_csv(&l);
        assert_eq!(curves.lines().count(), 1 + 2 * 6);
        assert!(curves.lines().nth(1).unwrap().starts_with("0,A,"));
        assert!(curves.lines().all(|line| line.split(',').count() == 6));
    }

    #[test]
    fn outputs_are_written_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_outputs(&log(false), &a).unwrap();
        write_outputs(&log(false), &b).unwrap();
        for f in [TRADES_FILE, CURVES_FILE, SUMMARY_FILE] {
            let x = fs::read(a.join(f)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, fs::read(b.join(f)).unwrap());
        }
        let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 3, "no temporary files left behind");
        let json: serde_json::Value =
            serde_json::from_slice(&fs::read(a.join(SUMMARY_FILE)).unwrap()).unwrap();
        assert_eq!(json["config"]["rounds"], 5);
        assert_eq!(json["agents"][1]["name"], "B");
    }
}
