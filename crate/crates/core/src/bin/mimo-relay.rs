use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use mimo_relay::harness::{run_campaign, write_plot_script, write_results, Sweep};
use mimo_relay::model::db_to_linear;
use mimo_relay::{Mode, NetworkConfig, Scheme};

#[derive(Parser)]
#[command(name = "mimo-relay", version, about = "Two-user MIMO amplify-and-forward relay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo campaign and write CSV results.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Power,
    Lsr,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Capacity,
    Mse,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Design criterion.
    #[arg(long, value_enum, default_value = "capacity")]
    mode: ModeArg,
    /// Comma-separated schemes out of jds, nas, sos, nod; empty for none.
    #[arg(long, default_value = "jds,nas,sos,nod")]
    schemes: String,
    #[arg(long, value_enum, default_value = "power")]
    sweep: SweepKind,
    /// Comma-separated sweep values. Defaults to 20,28 (dB) for power and
    /// 2..8 for l_sr.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 500)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    ns: usize,
    #[arg(long, default_value_t = 4)]
    nr: usize,
    #[arg(long, default_value_t = 4)]
    nd: usize,
    /// Power at both sources and the relay when not sweeping power (dB).
    #[arg(long = "p-db", default_value_t = 20.0, allow_negative_numbers = true)]
    p_db: f64,
    #[arg(long, default_value_t = 5.0)]
    lsr: f64,
    #[arg(long, default_value_t = 5.0)]
    lrd: f64,
    /// Path-loss exponent.
    #[arg(long, default_value_t = 3.0)]
    tau: f64,
    #[arg(long, default_value_t = 1e-4)]
    outer_tol: f64,
    #[arg(long, default_value_t = 50)]
    outer_max: usize,
    #[arg(long, default_value_t = 1e-6)]
    inner_tol: f64,
    #[arg(long, default_value_t = 50)]
    inner_max: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write a matplotlib script that renders the CSVs.
    #[arg(long)]
    plot_script: bool,
}

fn parse_schemes(list: &str) -> mimo_relay::Result<Vec<Scheme>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

fn simulate(args: SimulateArgs) -> mimo_relay::Result<()> {
    let p = db_to_linear(args.p_db);
    let config = NetworkConfig {
        n_s: args.ns,
        n_r: args.nr,
        n_d: args.nd,
        p1: p,
        p2: p,
        p_r: p,
        l_sr: args.lsr,
        l_rd: args.lrd,
        tau: args.tau,
        mode: match args.mode {
            ModeArg::Capacity => Mode::Capacity,
            ModeArg::Mse => Mode::Mse,
        },
        outer_max_iters: args.outer_max,
        inner_max_iters: args.inner_max,
        outer_tol: args.outer_tol,
        inner_tol: args.inner_tol,
        seed: args.seed,
    };
    let schemes = parse_schemes(&args.schemes)?;
    let sweep = match args.sweep {
        SweepKind::Power => Sweep::Power(args.values.unwrap_or_else(|| vec![20.0, 28.0])),
        SweepKind::Lsr => Sweep::Lsr(args.values.unwrap_or_else(|| (2..=8).map(f64::from).collect())),
        SweepKind::None => Sweep::None,
    };
    if args.threads > 0 {
        // only fails if the global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global();
    }

    let result = run_campaign(&config, &schemes, &sweep, args.trials)?;
    let mut files = write_results(&result, &args.out)?;
    if args.plot_script {
        files.push(write_plot_script(&args.out)?);
    }
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
