use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use parmarket::bounds::{buyer_gain_bounds, soundness_sweep, Scenario};
use parmarket::engine::config::MarketConfig;
use parmarket::engine::experiments::run_sweep;
use parmarket::engine::output::{write_atomic, write_outputs};
use parmarket::engine::sim::run_simulation;
use parmarket::mlp::harness::{align_demo, layer_subset_experiment, subset_csv};
use parmarket::mlp::market::MlpMarketSpec;
use parmarket::pricing::{
    midpoint_prices, nash_price_difference, seller_virtual_valuation, settle, SellerPrior,
    ValuationQuadruple,
};
use parmarket::MarketError;

#[derive(Parser)]
#[command(name = "parmarket", version, about = "Parameter-market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one market and write trades.csv, curves.csv and summary.json.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check the gain bounds against random instances.
    BoundsCheck {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        slack: f64,
        /// Also write bounds_check.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Price one trade: bargaining from four valuations, or a seller quote
    /// and settlement from a gain and purchased weights.
    Price(PriceArgs),
    /// Recover planted hidden-unit permutations and print interpolation
    /// losses as CSV.
    AlignDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        clones: usize,
        /// Also write align_curve.csv and the layer-subset table here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds for the layer-subset table.
        #[arg(long, default_value_t = 5)]
        subset_seeds: u64,
    },
    /// Run the config's [sweep] grid against out-of-market twins.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(clap::Args)]
struct PriceArgs {
    /// A's valuation of its own parameters.
    #[arg(long, requires_all = ["v_b_of_a", "v_b_self", "v_a_of_b"])]
    v_a_self: Option<f64>,
    /// B's valuation of A's parameters.
    #[arg(long)]
    v_b_of_a: Option<f64>,
    #[arg(long)]
    v_b_self: Option<f64>,
    #[arg(long)]
    v_a_of_b: Option<f64>,
    /// Seller's own gain from the reverse purchase.
    #[arg(long, requires_all = ["alpha", "beta"], conflicts_with = "v_a_self")]
    gain: Option<f64>,
    /// Seller's purchased weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Buyer's purchased weight.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum, default_value_t = Prior::UniformOnBounds)]
    prior: Prior,
    /// Settle against this buyer valuation.
    #[arg(long, requires = "gain")]
    buyer_valuation: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prior {
    UniformOnBounds,
    LowerBound,
}

impl From<Prior> for SellerPrior {
    fn from(p: Prior) -> Self {
        match p {
            Prior::UniformOnBounds => SellerPrior::UniformOnBounds,
            Prior::LowerBound => SellerPrior::LowerBound,
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<MarketConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = MarketConfig::parse(&text).map_err(|e| match e {
        MarketError::Config { line, message } => {
            anyhow::anyhow!("{}:{line}: {message}", path.display())
        }
        other => anyhow::anyhow!("{}: {other}", path.display()),
    })?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<bool> {
    let config = load_config(config, seed)?;
    let log = run_simulation(&config)?;
    write_outputs(&log, out).with_context(|| format!("writing to {}", out.display()))?;
    for (u, name) in log.agent_names.iter().enumerate() {
        let last = log.final_point(u);
        println!(
            "{name}: final broker loss {:.6e}, purchases {}, cumulative payment {:.6e}",
            last.broker_loss,
            log.purchases(u).count(),
            last.cum_payment
        );
    }
    println!("wrote {}", out.display());
    Ok(true)
}

fn bounds_check(trials: usize, seed: u64, slack: f64, out: Option<&Path>) -> Result<bool> {
    let report = soundness_sweep(trials, seed, slack)?;
    println!(
        "trials {} checked {} skipped {} clamped_lower {} unbounded_upper {}",
        report.trials, report.checked, report.skipped, report.clamped_lower, report.unbounded_upper
    );
    for s in Scenario::ALL {
        let n = report.violations.iter().filter(|v| v.scenario == s).count();
        println!("{:<16} violations {n}", s.as_str());
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("trial,scenario,gain_a,alpha,beta,realized,lower,upper\n");
        for v in &report.violations {
            csv.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                v.trial,
                v.scenario.as_str(),
                v.gain_a,
                v.alpha,
                v.beta,
                v.realized,
                v.lower,
                v.upper
            ));
        }
        write_atomic(&dir.join("bounds_check.csv"), &csv)?;
    }
    Ok(report.violations.is_empty())
}

fn price(args: &PriceArgs) -> Result<bool> {
    if let (Some(a), Some(b), Some(c), Some(d)) = (args.v_a_self, args.v_b_of_a, args.v_b_self, args.v_a_of_b) {
        let q = ValuationQuadruple::new(a, b, c, d)?;
        let (lo, hi) = q.price_difference_range();
        let dp = nash_price_difference(&q);
        let (pa, pb) = midpoint_prices(&q);
        println!("price_difference_range {lo:.16e} {hi:.16e}");
        println!("nash_price_difference {dp:.16e}");
        println!("price_a {pa:.16e}");
        println!("price_b {pb:.16e}");
        println!("a_sale_feasible {}", q.a_sale_feasible());
        return Ok(true);
    }
    let (Some(gain), Some(alpha), Some(beta)) = (args.gain, args.alpha, args.beta) else {
        bail!("give either --v-a-self/--v-b-of-a/--v-b-self/--v-a-of-b or --gain/--alpha/--beta");
    };
    let bounds = buyer_gain_bounds(gain, alpha, beta)?;
    let quote = seller_virtual_valuation(gain, alpha, beta, args.prior.into())?;
    println!("buyer_gain_lower {:.16e}", bounds.lower);
    println!("buyer_gain_upper {:.16e}", bounds.upper);
    println!("lower_clamped {}", bounds.lower_clamped);
    println!("seller_valuation {quote:.16e}");
    if let Some(v) = args.buyer_valuation {
        match settle(v, quote) {
            Some(p) => println!("payment {p:.16e}"),
            None => println!("payment none"),
        }
    }
    Ok(true)
}

fn align(seed: u64, clones: usize, out: Option<&Path>, subset_seeds: u64) -> Result<bool> {
    let demo = align_demo(seed, clones, &[2, 16, 16, 16, 2])?;
    println!(
        "recovered {}/{} planted permutations; max output change {:.3e}; max clone merge loss gap {:.3e}",
        demo.recovered, demo.clones, demo.max_function_gap, demo.max_clone_merge_gap
    );
    print!("{}", demo.curve_csv());
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("align_curve.csv"), &demo.curve_csv())?;
        let experiments = (0..subset_seeds)
            .map(|s| {
                layer_subset_experiment(
                    MlpMarketSpec {
                        seed: seed + s,
                        ..MlpMarketSpec::default()
                    },
                    300,
                )
            })
            .collect::<parmarket::Result<Vec<_>>>()?;
        let wins = experiments.iter().filter(|e| e.full_set_is_best()).count();
        write_atomic(&dir.join("subset_table.csv"), &subset_csv(&experiments))?;
        println!("full layer set best in {wins}/{subset_seeds} seeds");
    }
    Ok(demo.all_recovered())
}

fn sweep(config: &Path, out: &Path, seed: Option<u64>, jobs: usize) -> Result<bool> {
    let config = load_config(config, seed)?;
    let result = run_sweep(&config, jobs)?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join("sweep_rows.csv"), &result.rows_csv())?;
    write_atomic(&out.join("sweep_aggregate.csv"), &result.aggregate_csv())?;
    for a in &result.aggregates {
        println!(
            "{} = {}: mean improvement {:.4} (sd {:.4}, {} seeds)",
            result.axis.as_str(),
            a.value,
            a.mean_improvement,
            a.std_improvement,
            a.seeds
        );
    }
    println!("spearman(value, mean improvement) = {:.4}", result.spearman());
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { config, out, seed } => simulate(&config, &out, seed),
        Command::BoundsCheck {
            trials,
            seed,
            slack,
            out,
        } => bounds_check(trials, seed, slack, out.as_deref()),
        Command::Price(args) => price(&args),
        Command::AlignDemo {
            seed,
            clones,
            out,
            subset_seeds,
        } => align(seed, clones, out.as_deref(), subset_seeds),
        Command::Sweep {
            config,
            out,
            seed,
            jobs,
        } => sweep(&config, &out, seed, jobs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
