//! Decode-outcome caching and offline BLER statistics.
//!
//! Runs append one [`DecodeRecord`] per transmitted block; statistics are
//! computed afterwards from an immutable, canonically sorted snapshot so
//! that worker scheduling never affects results.

use std::collections::HashSet;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::{derive_stream, LinkSimulator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub trial_idx: u64,
    pub subframe_idx: u64,
    pub tx_power_dbm: f64,
    pub mcs: u8,
    pub crc_pass: bool,
    pub tb_bits: usize,
}

#[derive(Debug, Default)]
struct CacheInner {
    records: Vec<DecodeRecord>,
    keys: HashSet<(u64, u64)>,
}

/// Append-only record store keyed by (trial, subframe), safe to share
/// between worker threads.
#[derive(Debug, Default)]
pub struct DecodeCache {
    inner: Mutex<CacheInner>,
}

impl DecodeCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, rec: DecodeRecord) -> Result<()> {
        let mut inner = self.inner.lock().expect("cache lock poisoned");
        if !inner.keys.insert((rec.trial_idx, rec.subframe_idx)) {
            return Err(Error::DuplicateKey {
                trial: rec.trial_idx,
                subframe: rec.subframe_idx,
            });
        }
        inner.records.push(rec);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner
            .lock()
            .expect("cache lock poisoned")
            .records
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records sorted by (trial, subframe).
    pub fn snapshot(&self) -> Vec<DecodeRecord> {
        let mut v = self
            .inner
            .lock()
            .expect("cache lock poisoned")
            .records
            .clone();
        v.sort_by_key(|r| (r.trial_idx, r.subframe_idx));
        v
    }

    /// Splits each trial's records, in subframe order, into consecutive
    /// windows of `window_blocks`; a shorter tail window is kept.
    pub fn windows(&self, window_blocks: usize) -> Result<Vec<BlerSample>> {
        if window_blocks == 0 {
            return Err(Error::Contract("window_blocks must be positive".into()));
        }
        let snap = self.snapshot();
        let mut out = Vec::new();
        for trial in snap.chunk_by(|a, b| a.trial_idx == b.trial_idx) {
            for (w, chunk) in trial.chunks(window_blocks).enumerate() {
                out.push(BlerSample {
                    trial: trial[0].trial_idx,
                    window_idx: w as u64,
                    n_blocks: chunk.len() as u64,
                    n_errors: chunk.iter().filter(|r| !r.crc_pass).count() as u64,
                });
            }
        }
        Ok(out)
    }
}

/// BLER over one observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlerSample {
    pub trial: u64,
    pub window_idx: u64,
    pub n_blocks: u64,
    pub n_errors: u64,
}

impl BlerSample {
    pub fn bler(&self) -> f64 {
        self.n_errors as f64 / self.n_blocks as f64
    }
}

/// Fewer samples than this make the 99th percentile unreliable.
pub const MIN_SAMPLES_FOR_Q99: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlerStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for one sample).
    pub std: f64,
    /// Nearest-rank 99th percentile.
    pub q99: f64,
    pub n_samples: usize,
    pub low_confidence: bool,
}

/// Nearest-rank percentile of `sorted` (ascending): the value at 1-based
/// rank `ceil(p * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn bler_stats(samples: &[f64]) -> Result<BlerStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("BLER samples"));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(BlerStats {
        mean,
        std,
        q99: nearest_rank(&sorted, 0.99),
        n_samples: n,
        low_confidence: n < MIN_SAMPLES_FOR_Q99,
    })
}

/// Normal-approximation confidence interval for the mean BLER at
/// two-sided quantile `z` (2.576 for 99 %).
pub fn mean_confidence_interval(stats: &BlerStats, z: f64) -> (f64, f64) {
    let half = z * stats.std / (stats.n_samples as f64).sqrt();
    (stats.mean - half, stats.mean + half)
}

/// BLER values at or below zero are raised to this before taking logs.
pub const DEFAULT_BLER_FLOOR: f64 = 1e-6;

/// Power at which a BLER curve first falls to `target`, interpolating
/// linearly in (power dB, log10 BLER) between the last point above the
/// target and the first point at or below it.
pub fn crossing_power(
    curve: &[(f64, f64)],
    target: f64,
    floor: f64,
    name: &'static str,
) -> Result<f64> {
    if curve.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Contract(format!(
            "{name} curve powers not strictly increasing"
        )));
    }
    let lg = |b: f64| b.max(floor).log10();
    let t = lg(target);
    for w in curve.windows(2) {
        let ((p0, b0), (p1, b1)) = (w[0], w[1]);
        if lg(b0) > t && lg(b1) <= t {
            let frac = (t - lg(b0)) / (lg(b1) - lg(b0));
            return Ok(p0 + frac * (p1 - p0));
        }
    }
    Err(Error::NotCrossed {
        curve: name,
        target,
    })
}

/// Extra transmit power the 99th-percentile curve needs over the mean
/// curve to reach `target_bler`.
pub fn backoff_db(
    curve_mean: &[(f64, f64)],
    curve_q99: &[(f64, f64)],
    target_bler: f64,
) -> Result<f64> {
    backoff_db_with_floor(curve_mean, curve_q99, target_bler, DEFAULT_BLER_FLOOR)
}

pub fn backoff_db_with_floor(
    curve_mean: &[(f64, f64)],
    curve_q99: &[(f64, f64)],
    target_bler: f64,
    floor: f64,
) -> Result<f64> {
    let m = crossing_power(curve_mean, target_bler, floor, "mean")?;
    let q = crossing_power(curve_q99, target_bler, floor, "q99")?;
    Ok(q - m)
}

/// Delivered bits per second.
pub fn throughput_bps(mean_bler: f64, tb_bits: usize, blocks_per_second: f64) -> f64 {
    (1.0 - mean_bler) * tb_bits as f64 * blocks_per_second
}

/// What a BLER sweep runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub powers_dbm: Vec<f64>,
    pub mcs: Vec<u8>,
    pub trials: u64,
    pub windows_per_trial: usize,
    pub window_blocks: usize,
    pub master_seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.powers_dbm.is_empty() {
            return Err(Error::config("sweep.tx_power_dbm", "empty"));
        }
        if self.mcs.is_empty() {
            return Err(Error::config("sweep.mcs", "empty"));
        }
        if self.trials == 0 {
            return Err(Error::config("sweep.trials", "must be >= 1"));
        }
        if self.window_blocks == 0 {
            return Err(Error::config("sweep.window_blocks", "must be >= 1"));
        }
        if self.windows_per_trial == 0 {
            return Err(Error::config("sweep.windows_per_trial", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub tx_power_dbm: f64,
    pub mcs: u8,
    pub stats: BlerStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub trial: u64,
    pub tx_power_dbm: f64,
    pub mcs: u8,
    pub window_idx: u64,
    pub n_blocks: u64,
    pub n_errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by (power, mcs).
    pub stats: Vec<StatsRow>,
    /// Sorted by (power, mcs, trial, window).
    pub raw: Vec<RawRow>,
    pub tb_bits: Vec<(u8, usize)>,
}

impl SweepResult {
    /// (power, value) curve for one MCS.
    pub fn curve(&self, mcs: u8, pick: impl Fn(&BlerStats) -> f64) -> Vec<(f64, f64)> {
        self.stats
            .iter()
            .filter(|r| r.mcs == mcs)
            .map(|r| (r.tx_power_dbm, pick(&r.stats)))
            .collect()
    }

    pub fn get(&self, tx_power_dbm: f64, mcs: u8) -> Option<&BlerStats> {
        self.stats
            .iter()
            .find(|r| r.mcs == mcs && r.tx_power_dbm == tx_power_dbm)
            .map(|r| &r.stats)
    }
}

/// Dedicated worker pool; 0 threads lets rayon pick.
pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Contract(format!("worker pool: {e}")))
}

/// Runs every trial at every (power, MCS) point. Each trial draws its
/// fading, noise and payloads from a stream derived from the master seed
/// and the trial index only, so all points of a trial share one channel
/// realisation and results do not depend on the worker count.
pub fn run_bler_sweep(sim: &LinkSimulator, plan: &SweepPlan) -> Result<SweepResult> {
    plan.validate()?;
    let n_pow = plan.powers_dbm.len();
    let caches: Vec<DecodeCache> = (0..n_pow * plan.mcs.len())
        .map(|_| DecodeCache::new())
        .collect();
    let blocks = plan.windows_per_trial * plan.window_blocks;
    let interval = u64::from(sim.scenario().block_interval);

    let jobs: Vec<(u64, usize)> = (0..plan.trials)
        .flat_map(|t| (0..plan.mcs.len()).map(move |m| (t, m)))
        .collect();
    pool(plan.workers)?.install(|| {
        jobs.par_iter().try_for_each(|&(trial, mi)| -> Result<()> {
            let mcs = plan.mcs[mi];
            let seed = derive_stream(plan.master_seed, &[trial]);
            let out = sim.run_blocks(seed, mcs, &plan.powers_dbm, 0, blocks)?;
            for (pi, outcomes) in out.into_iter().enumerate() {
                let cache = &caches[mi * n_pow + pi];
                for (b, o) in outcomes.into_iter().enumerate() {
                    cache.record(DecodeRecord {
                        trial_idx: trial,
                        subframe_idx: b as u64 * interval,
                        tx_power_dbm: plan.powers_dbm[pi],
                        mcs,
                        crc_pass: o.success,
                        tb_bits: o.tb_bits,
                    })?;
                }
            }
            Ok(())
        })
    })?;

    let mut stats = Vec::new();
    let mut raw = Vec::new();
    for (mi, &mcs) in plan.mcs.iter().enumerate() {
        for (pi, &p) in plan.powers_dbm.iter().enumerate() {
            let windows = caches[mi * n_pow + pi].windows(plan.window_blocks)?;
            let values: Vec<f64> = windows.iter().map(BlerSample::bler).collect();
            stats.push(StatsRow {
                tx_power_dbm: p,
                mcs,
                stats: bler_stats(&values)?,
            });
            raw.extend(windows.iter().map(|w| RawRow {
                trial: w.trial,
                tx_power_dbm: p,
                mcs,
                window_idx: w.window_idx,
                n_blocks: w.n_blocks,
                n_errors: w.n_errors,
            }));
        }
    }
    stats.sort_by(|a, b| {
        a.tx_power_dbm
            .total_cmp(&b.tx_power_dbm)
            .then(a.mcs.cmp(&b.mcs))
    });
    raw.sort_by(|a, b| {
        a.tx_power_dbm
            .total_cmp(&b.tx_power_dbm)
            .then(a.mcs.cmp(&b.mcs))
            .then(a.trial.cmp(&b.trial))
            .then(a.window_idx.cmp(&b.window_idx))
    });
    let tb_bits = plan
        .mcs
        .iter()
        .map(|&m| sim.tb_bits(m).map(|t| (m, t)))
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        stats,
        raw,
        tb_bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub mcs: u8,
    pub tb_bits: usize,
    pub bler_mean: f64,
    pub throughput_bps: f64,
}

/// Mean throughput per MCS at one transmit power.
pub fn run_throughput_sweep(sim: &LinkSimulator, plan: &SweepPlan) -> Result<Vec<ThroughputRow>> {
    let res = run_bler_sweep(sim, plan)?;
    let bps = sim.scenario().blocks_per_second();
    plan.mcs
        .iter()
        .map(|&mcs| {
            let tb_bits = sim.tb_bits(mcs)?;
            let rows: Vec<&StatsRow> = res.stats.iter().filter(|r| r.mcs == mcs).collect();
            let bler_mean = rows.iter().map(|r| r.stats.mean).sum::<f64>() / rows.len() as f64;
            Ok(ThroughputRow {
                mcs,
                tb_bits,
                bler_mean,
                throughput_bps: throughput_bps(bler_mean, tb_bits, bps),
            })
        })
        .collect()
}
