use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltev_core::harness::{self, ExperimentConfig, TrafficAdapter, STATS_FILE};
use ltev_core::Error;

#[derive(Debug, Parser)]
#[command(name = "ltev", version, about = "LTE-V sidelink link-level simulator")]
struct Cli {
    /// Config file of dotted `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set channel.model=awgn`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Master seed; overrides `master_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// BLER mean/std/q99 over the power x MCS grid.
    BlerSweep,
    /// Throughput per MCS at one transmit power.
    ThroughputSweep,
    /// Multi-vehicle SPS scenarios.
    SpsSim,
    /// Back-off analysis over an existing sweep output.
    Backoff {
        /// Statistics CSV; defaults to the one in --out-dir.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Ideal-channel loopback over every MCS and allocation width.
    Selftest {
        #[arg(long, default_value_t = 20)]
        subframes: usize,
    },
    /// Serve the PKT/RES line protocol.
    Traffic {
        /// `stdio` or `tcp:<port>`.
        #[arg(long, default_value = "stdio")]
        traffic: String,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::BlerSweep => report(&harness::run_bler_sweep_cmd(&cfg, &cli.out_dir, cli.workers)?),
        Command::ThroughputSweep => report(&harness::run_throughput_cmd(&cfg, &cli.out_dir, cli.workers)?),
        Command::SpsSim => report(&harness::run_sps_cmd(&cfg, &cli.out_dir, cli.workers)?),
        Command::Backoff { input } => {
            let input = input.clone().unwrap_or_else(|| cli.out_dir.join(STATS_FILE));
            report(&harness::run_backoff_cmd(&cfg, &input, &cli.out_dir)?)
        }
        Command::Selftest { subframes } => {
            let r = harness::run_selftest(*subframes, cli.workers)?;
            print!("{}", r.render());
            return Ok(r.all_passed());
        }
        Command::Traffic { traffic } => {
            let mut adapter = TrafficAdapter::new(&cfg)?;
            if traffic == "stdio" {
                harness::serve(&mut adapter, io::stdin().lock(), io::stdout().lock())?;
            } else if let Some(port) = traffic.strip_prefix("tcp:") {
                let port: u16 = port
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad port in --traffic {traffic}")))?;
                let listener = TcpListener::bind(("127.0.0.1", port))?;
                eprintln!("listening on {}", listener.local_addr()?);
                let (stream, _) = listener.accept()?;
                harness::serve(&mut adapter, BufReader::new(stream.try_clone()?), stream)?;
            } else {
                return Err(Error::Parse(format!("--traffic must be stdio or tcp:<port>, got {traffic}")));
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
