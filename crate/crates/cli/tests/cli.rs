use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parmarket"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn golden_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("never_trade.cfg");
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        header(&dir.path().join("trades.csv")),
        "round,buyer,seller,merge_weight,gain_kind,gain_value,trade_beneficial,buyer_valuation,seller_valuation,payment,indicator"
    );
    assert_eq!(
        header(&dir.path().join("curves.csv")),
        "round,agent,broker_loss,own_loss,est_error,cum_payment"
    );
}

#[test]
fn never_trade_config_has_no_trades() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("never_trade.cfg");
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let trades = fs::read_to_string(dir.path().join("trades.csv")).unwrap();
    assert_eq!(trades.lines().count(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trades_executed"], 0);
    assert_eq!(summary["config"]["rounds"], 50);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = configs().join("paper_linear.cfg");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("dim = 1000", "dim = 40")
        .replace("n = 10000", "n = 400")
        .replace("rounds = 100", "rounds = 20");
    let work = tempfile::tempdir().unwrap();
    let small = work.path().join("small.cfg");
    fs::write(&small, text).unwrap();
    let outs: Vec<PathBuf> = (0..2).map(|k| work.path().join(format!("run{k}"))).collect();
    for out in &outs {
        let o = run(&["simulate", small.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "7"]);
        assert!(o.status.success());
    }
    for f in ["trades.csv", "curves.csv", "summary.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(outs[0].join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 7"));
}

#[test]
fn schema_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\n\nrounds = many\n").unwrap();
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("bad.cfg:3:"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn divergence_reports_the_round() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("never_trade.cfg"))
        .unwrap()
        .replace("policy = never_trade", "policy = never_trade\nstep_size = 1e8");
    let cfg = dir.path().join("diverge.cfg");
    fs::write(&cfg, text).unwrap();
    let o = run(&["simulate", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("round"), "{err}");
}

#[test]
fn bounds_check_finds_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bounds-check", "--trials", "2000", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("buy_sell         violations 0"));
    let csv = fs::read_to_string(dir.path().join("bounds_check.csv")).unwrap();
    assert_eq!(csv, "trial,scenario,gain_a,alpha,beta,realized,lower,upper\n");
}

#[test]
fn price_bargaining_midpoint() {
    let o = run(&["price", "--v-a-self", "1", "--v-b-of-a", "3", "--v-b-self", "1", "--v-a-of-b", "2"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("price_difference_range -1.0000000000000000e0 2.0000000000000000e0"), "{s}");
    assert!(s.contains("nash_price_difference 5.0000000000000000e-1"), "{s}");
}

#[test]
fn price_quote_and_settlement() {
    let o = run(&["price", "--gain", "2", "--alpha", "0.4", "--beta", "0.6", "--buyer-valuation", "5"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("buyer_gain_upper inf"));
    assert!(s.lines().any(|l| l.starts_with("payment ") && l != "payment none"));
    let o = run(&["price", "--gain", "2", "--alpha", "0.4"]);
    assert!(!o.status.success());
}

#[test]
fn align_demo_recovers_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "align-demo",
        "--seed",
        "1",
        "--clones",
        "5",
        "--subset-seeds",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("recovered 5/5"));
    assert!(s.contains("alpha,naive_loss,aligned_loss\n"));
    assert_eq!(header(&dir.path().join("align_curve.csv")), "alpha,naive_loss,aligned_loss");
    assert_eq!(
        header(&dir.path().join("subset_table.csv")),
        "seed,layers,aligned,merge_weight,broker_loss_before,broker_loss_after,improvement,test_accuracy"
    );
}

#[test]
fn sweep_writes_rows_and_aggregates_independent_of_jobs() {
    let text = fs::read_to_string(configs().join("sweep_endowment.cfg"))
        .unwrap()
        .replace("seeds = 10", "seeds = 3")
        .replace("rounds = 100", "rounds = 30");
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("sweep.cfg");
    fs::write(&cfg, text).unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = work.path().join(format!("jobs{jobs}"));
        let o = run(&["sweep", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs]);
        assert!(o.status.success());
        outputs.push(out);
    }
    for f in ["sweep_rows.csv", "sweep_aggregate.csv"] {
        assert_eq!(fs::read(outputs[0].join(f)).unwrap(), fs::read(outputs[1].join(f)).unwrap());
    }
    assert_eq!(
        header(&outputs[0].join("sweep_rows.csv")),
        "cell,axis,value,seed,agent,market_broker_loss,twin_broker_loss,improvement"
    );
    assert_eq!(
        header(&outputs[0].join("sweep_aggregate.csv")),
        "cell,axis,value,agent,seeds,mean_improvement,std_improvement,mean_market_broker_loss,mean_twin_broker_loss"
    );
    let rows = fs::read_to_string(outputs[0].join("sweep_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 5 * 3);
}
