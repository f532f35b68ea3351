//! Experiment runner: configuration, CSV outputs, manifests, the traffic
//! protocol and the loopback self-test. Each `run_*` function backs one CLI
//! subcommand and writes its files into an output directory.

pub mod config;
pub mod output;
pub mod selftest;
pub mod traffic;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::ExperimentConfig;
pub use output::{
    from_csv, read_csv, to_csv, write_csv, write_manifest, BackoffCsvRow, RawCsvRow, SpsCsvRow,
    SweepCsvRow, ThroughputCsvRow, MANIFEST_FILE,
};
pub use selftest::{run_selftest, SelftestReport};
pub use traffic::{parse_request, serve, TrafficAdapter, TrafficEvent};

use crate::error::{Error, Result};
use crate::evaluator::{
    crossing_power, pool, run_bler_sweep, run_throughput_sweep, SweepPlan, DEFAULT_BLER_FLOOR,
};
use crate::link::{derive_stream, LinkSimulator};
use crate::mac_sps::{
    calibration_scenario, collision_rate, packet_reception_ratio, Network, PhyMode, ThresholdTable,
};

pub const STATS_FILE: &str = "bler_stats.csv";
pub const RAW_FILE: &str = "bler_raw.csv";
pub const THROUGHPUT_FILE: &str = "throughput.csv";
pub const SPS_FILE: &str = "sps.csv";
pub const BACKOFF_FILE: &str = "backoff.csv";

fn prepare(out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    Ok(())
}

/// BLER statistics and raw window samples over the configured sweep.
pub fn run_bler_sweep_cmd(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    prepare(out_dir)?;
    let sim = LinkSimulator::new(cfg.link.clone())?;
    let res = run_bler_sweep(&sim, &cfg.sweep_plan(workers))?;
    let stats: Vec<SweepCsvRow> = res.stats.iter().map(SweepCsvRow::from).collect();
    let raw: Vec<RawCsvRow> = res.raw.iter().map(RawCsvRow::from).collect();
    let (s, r) = (out_dir.join(STATS_FILE), out_dir.join(RAW_FILE));
    write_csv(&s, &stats)?;
    write_csv(&r, &raw)?;
    let m = write_manifest(out_dir, "bler-sweep", cfg)?;
    Ok(vec![s, r, m])
}

/// Mean BLER and throughput per MCS at one transmit power.
pub fn run_throughput_cmd(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    prepare(out_dir)?;
    let sim = LinkSimulator::new(cfg.link.clone())?;
    let plan = SweepPlan {
        powers_dbm: vec![cfg.throughput.tx_power_dbm],
        mcs: cfg.throughput.mcs.clone(),
        ..cfg.sweep_plan(workers)
    };
    let rows: Vec<ThroughputCsvRow> = run_throughput_sweep(&sim, &plan)?
        .iter()
        .map(|r| ThroughputCsvRow::new(cfg.throughput.tx_power_dbm, r))
        .collect();
    let t = out_dir.join(THROUGHPUT_FILE);
    write_csv(&t, &rows)?;
    let m = write_manifest(out_dir, "throughput-sweep", cfg)?;
    Ok(vec![t, m])
}

/// Abstract-mode SNR thresholds for the SPS scenario, from the config or
/// from a short AWGN calibration run.
pub fn sps_thresholds(cfg: &ExperimentConfig, workers: usize) -> Result<ThresholdTable> {
    if let Some(t) = cfg.sps.snr_threshold_db {
        return Ok(ThresholdTable::from_points(&[(cfg.sps.mcs, t)]));
    }
    let net = cfg.network(cfg.sps.n_vehicles[0], cfg.sps.policies[0], 0);
    let sim = LinkSimulator::new(calibration_scenario(&net))?;
    let plan = SweepPlan {
        powers_dbm: (-25..=35).map(f64::from).collect(),
        mcs: vec![cfg.sps.mcs],
        trials: cfg.sps.calibration_trials,
        windows_per_trial: 1,
        window_blocks: 50,
        master_seed: derive_stream(cfg.master_seed, &[0xCA1]),
        workers,
    };
    ThresholdTable::calibrate(&sim, &plan, 0.1)
}

/// Collision rate and PRR per (vehicle count, policy). Replica `r` uses
/// the same seed for every policy, so policies are compared on paired
/// draws.
pub fn run_sps_cmd(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    prepare(out_dir)?;
    let thresholds = match cfg.sps.mode {
        PhyMode::Abstract => sps_thresholds(cfg, workers)?,
        PhyMode::FullPhy => ThresholdTable::default(),
    };
    let mut rows = Vec::new();
    for &n in &cfg.sps.n_vehicles {
        for &policy in &cfg.sps.policies {
            let logs = pool(workers)?.install(|| {
                (0..cfg.sps.replicas)
                    .into_par_iter()
                    .map(|r| {
                        let seed = derive_stream(cfg.master_seed, &[0x5B5, n as u64, r]);
                        let mut net =
                            Network::new(cfg.network(n, policy, seed), thresholds.clone())?;
                        net.run(cfg.sps.duration_ms)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            let log: Vec<_> = logs.into_iter().flatten().collect();
            rows.push(SpsCsvRow {
                policy: policy.name().to_string(),
                load: cfg.network(n, policy, 0).load(),
                collision_rate: collision_rate(&log)?,
                prr: packet_reception_ratio(&log)?,
            });
        }
    }
    let p = out_dir.join(SPS_FILE);
    write_csv(&p, &rows)?;
    let m = write_manifest(out_dir, "sps-sim", cfg)?;
    Ok(vec![p, m])
}

/// Back-off per MCS from an existing statistics file. MCS values whose
/// curves never reach the target get NaN entries.
pub fn run_backoff_cmd(
    cfg: &ExperimentConfig,
    input: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if !input.is_file() {
        return Err(Error::Parse(format!("input {} not found", input.display())));
    }
    let rows: Vec<SweepCsvRow> = read_csv(input)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("sweep statistics"));
    }
    prepare(out_dir)?;
    let target = cfg.backoff_target_bler;
    let mut mcs: Vec<u8> = rows.iter().map(|r| r.mcs).collect();
    mcs.sort_unstable();
    mcs.dedup();
    let out: Vec<BackoffCsvRow> = mcs
        .into_iter()
        .map(|m| {
            let mut pts: Vec<&SweepCsvRow> = rows.iter().filter(|r| r.mcs == m).collect();
            pts.sort_by(|a, b| a.tx_power_dbm.total_cmp(&b.tx_power_dbm));
            let mean: Vec<(f64, f64)> = pts.iter().map(|r| (r.tx_power_dbm, r.bler_mean)).collect();
            let q99: Vec<(f64, f64)> = pts.iter().map(|r| (r.tx_power_dbm, r.bler_q99)).collect();
            let cross =
                |c: &[(f64, f64)], name| crossing_power(c, target, DEFAULT_BLER_FLOOR, name);
            let pm = cross(&mean, "mean").unwrap_or(f64::NAN);
            let pq = cross(&q99, "q99").unwrap_or(f64::NAN);
            BackoffCsvRow {
                mcs: m,
                target_bler: target,
                p_mean_dbm: pm,
                p_q99_dbm: pq,
                backoff_db: pq - pm,
            }
        })
        .collect();
    let p = out_dir.join(BACKOFF_FILE);
    write_csv(&p, &out)?;
    let m = write_manifest(out_dir, "backoff", cfg)?;
    Ok(vec![p, m])
}
