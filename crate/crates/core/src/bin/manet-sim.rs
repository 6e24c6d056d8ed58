use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use manet_sim::config::ScenarioConfig;
use manet_sim::harness::{self, Grid, HarnessError};
use manet_sim::{Protocol, Strategy};

/// Discrete-event MANET simulator: AODV and DSR under misbehaving nodes.
///
/// Log verbosity comes from MANET_SIM_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and print one CSV row per run.
    Run(ScenarioArgs),
    /// Run a protocol x strategy x nodes x range x fraction x seed grid and
    /// write rows plus a summary block.
    Sweep(ScenarioArgs),
    /// Turn a sweep CSV into the four figure tables.
    Figures {
        /// Sweep output to read.
        csv: PathBuf,
        /// Directory for the tables.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Flags override the config file. List-valued flags take comma-separated
/// values and expand into a grid.
#[derive(Args)]
struct ScenarioArgs {
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    protocol: Vec<Protocol>,
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<usize>,
    /// Communication range in metres.
    #[arg(long, value_delimiter = ',')]
    range: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    adversary_fraction: Vec<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Runs seeds 1..=N.
    #[arg(long)]
    seeds: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Output CSV; `run` prints to stdout without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ScenarioArgs {
    fn base(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(t) = self.tolerance {
            cfg.trust.tolerance = t;
        }
        if let Some(d) = self.duration {
            cfg.scenario.duration = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid from the flags; axes without a flag use `fallback`.
    fn grid(&self, fallback: Grid) -> Grid {
        fn pick<T: Clone>(flag: &[T], fallback: Vec<T>) -> Vec<T> {
            if flag.is_empty() {
                fallback
            } else {
                flag.to_vec()
            }
        }
        let seeds = match (self.seed, self.seeds) {
            (Some(s), _) => vec![s],
            (None, Some(n)) => (1..=n).collect(),
            (None, None) => fallback.seeds,
        };
        Grid {
            protocols: pick(&self.protocol, fallback.protocols),
            strategies: pick(&self.strategy, fallback.strategies),
            nodes: pick(&self.nodes, fallback.nodes),
            ranges: pick(&self.range, fallback.ranges),
            fractions: pick(&self.adversary_fraction, fallback.fractions),
            seeds,
        }
    }
}

fn run(args: ScenarioArgs) -> Result<(), HarnessError> {
    let base = args.base()?;
    let grid = args.grid(Grid::single(&base));
    let rows = harness::run_all(&grid.points(&base))?;
    match &args.out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|source| HarnessError::Unwritable {
                path: p.display().to_string(),
                source,
            })?;
            harness::write_rows(f, &rows)
        }
        None => harness::write_rows(io::stdout().lock(), &rows),
    }
}

fn sweep(args: ScenarioArgs) -> Result<(), HarnessError> {
    let base = args.base()?;
    let fallback = Grid {
        protocols: vec![Protocol::Aodv, Protocol::Dsr],
        strategies: vec![Strategy::None, Strategy::Eliminate, Strategy::SecondChance],
        nodes: vec![30, 40, 50],
        seeds: (1..=10).collect(),
        ..Grid::single(&base)
    };
    let grid = args.grid(fallback);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    let summary = harness::sweep(&base, &grid, &out)?;
    eprintln!(
        "{} runs, {} grid points -> {}",
        grid.len(),
        summary.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MANET_SIM_LOG", "warn")).init();
    let result = match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Figures { csv, out } => harness::figures(&csv, &out).map(|o| {
            for f in &o.files {
                eprintln!("wrote {}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
