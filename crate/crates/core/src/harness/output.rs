//! CSV schemas and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluator::{RawRow, StatsRow, ThroughputRow};

/// One row of the per-(power, MCS) statistics file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub tx_power_dbm: f64,
    pub mcs: u8,
    pub n_samples: usize,
    pub bler_mean: f64,
    pub bler_std: f64,
    pub bler_q99: f64,
}

impl From<&StatsRow> for SweepCsvRow {
    fn from(r: &StatsRow) -> Self {
        Self {
            tx_power_dbm: r.tx_power_dbm,
            mcs: r.mcs,
            n_samples: r.stats.n_samples,
            bler_mean: r.stats.mean,
            bler_std: r.stats.std,
            bler_q99: r.stats.q99,
        }
    }
}

/// One windowed BLER sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawCsvRow {
    pub trial: u64,
    pub tx_power_dbm: f64,
    pub mcs: u8,
    pub window_idx: u64,
    pub n_blocks: u64,
    pub n_errors: u64,
}

impl From<&RawRow> for RawCsvRow {
    fn from(r: &RawRow) -> Self {
        Self {
            trial: r.trial,
            tx_power_dbm: r.tx_power_dbm,
            mcs: r.mcs,
            window_idx: r.window_idx,
            n_blocks: r.n_blocks,
            n_errors: r.n_errors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsCsvRow {
    pub policy: String,
    pub load: f64,
    pub collision_rate: f64,
    pub prr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputCsvRow {
    pub tx_power_dbm: f64,
    pub mcs: u8,
    pub tb_bits: usize,
    pub bler_mean: f64,
    pub throughput_bps: f64,
}

impl ThroughputCsvRow {
    pub fn new(tx_power_dbm: f64, r: &ThroughputRow) -> Self {
        Self {
            tx_power_dbm,
            mcs: r.mcs,
            tb_bits: r.tb_bits,
            bler_mean: r.bler_mean,
            throughput_bps: r.throughput_bps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffCsvRow {
    pub mcs: u8,
    pub target_bler: f64,
    pub p_mean_dbm: f64,
    pub p_q99_dbm: f64,
    pub backoff_db: f64,
}

/// Serialises rows with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    fs::write(path, to_csv(rows)?)?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    from_csv(&text)
}

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Writes the config snapshot under a comment header naming the command and
/// code version. The file is itself a loadable config.
pub fn write_manifest(out_dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = out_dir.join(MANIFEST_FILE);
    let text = format!(
        "# command: {command}\n# version: {} {}\n{}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        cfg.to_text()
    );
    fs::write(&path, text)?;
    Ok(path)
}
