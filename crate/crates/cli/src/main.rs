use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use m5kit::synthetic::SyntheticConfig;
use m5kit::{Error, Result};
use m5kit_cli::{
    cmd_backtest, cmd_evaluate, cmd_forecast, cmd_gen_synthetic, cmd_prepare, cmd_quantiles, cmd_train, error_line,
    exit_code, EvalKind, Overrides, Run,
};

#[derive(Parser)]
#[command(name = "m5kit", version, about = "Hierarchical retail-sales forecasting pipeline")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    /// Single worker thread; every seed comes from the config.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Override every model seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Point,
    Quantile,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the inputs and build the feature caches.
    Prepare,
    /// Train, forecast and score the validation splits.
    Backtest,
    /// Train every model group on the whole panel.
    Train,
    /// Point forecast for the 28 days after the panel.
    Forecast,
    /// Quantile submission from the point forecast.
    Quantiles,
    /// Score a forecast file against the panel's actuals.
    Evaluate {
        /// Point forecast (`id,F1..Fh`) or quantile submission.
        #[arg(long)]
        file: PathBuf,
        #[arg(long, value_enum, default_value = "point")]
        kind: Kind,
        /// First truth day (1-based); defaults to the panel's last 28 days.
        #[arg(long)]
        start: Option<usize>,
        /// Id suffix of a quantile submission.
        #[arg(long)]
        suffix: Option<String>,
        /// Breakdown CSV; defaults to `evaluation.csv` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic panel as sales, calendar and prices CSVs.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        stores: Option<usize>,
        #[arg(long)]
        items_per_dept: Option<usize>,
    },
}

fn open(cli: &Cli) -> Result<Run> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    Run::open(
        path,
        &Overrides {
            seed: cli.seed,
            output_dir: cli.output_dir.clone(),
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    let jobs = if cli.deterministic { Some(1) } else { cli.jobs };
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Prepare => {
            let s = cmd_prepare(&open(&cli)?)?;
            println!("series {} days {}", s.n_series, s.n_days);
            for (p, status) in s.caches {
                println!("cache {status:?} {}", p.display());
            }
        }
        Command::Backtest => {
            let run = open(&cli)?;
            let report = cmd_backtest(&run)?;
            for c in report.columns() {
                println!("{c} mean {:.6} std {:.6}", report.mean(&c), report.std(&c));
            }
            println!("run {}", run.dir.display());
        }
        Command::Train => {
            for p in cmd_train(&open(&cli)?)? {
                println!("model {}", p.display());
            }
        }
        Command::Forecast => {
            let run = open(&cli)?;
            cmd_forecast(&run)?;
            println!("forecast {}", run.path(m5kit_cli::files::FORECAST).display());
        }
        Command::Quantiles => {
            let p = cmd_quantiles(&open(&cli)?)?;
            println!("quantiles {}", p.display());
        }
        Command::Evaluate {
            file,
            kind,
            start,
            suffix,
            out,
        } => {
            let run = open(&cli)?;
            let out = out.clone().unwrap_or_else(|| run.path("evaluation.csv"));
            let kind = match kind {
                Kind::Point => EvalKind::Point,
                Kind::Quantile => EvalKind::Quantile,
            };
            let r = cmd_evaluate(&run, file, kind, *start, suffix.as_deref(), &out)?;
            for (l, v) in r.per_level.iter().enumerate() {
                println!("level {} {v:.6}", l + 1);
            }
            println!("total w{} {:.6}", r.metric.to_lowercase(), r.total);
        }
        Command::GenSynthetic {
            out,
            seed,
            days,
            stores,
            items_per_dept,
        } => {
            let mut cfg = match &cli.config {
                Some(_) => open(&cli)?.config.data.synthetic.unwrap_or_default(),
                None => SyntheticConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.n_days = days.unwrap_or(cfg.n_days);
            cfg.n_stores = stores.unwrap_or(cfg.n_stores);
            cfg.items_per_dept = items_per_dept.unwrap_or(cfg.items_per_dept);
            cmd_gen_synthetic(&cfg, out)?;
            println!("synthetic panel {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
