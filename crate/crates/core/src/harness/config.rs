//! Experiment configuration: a flat file of dotted `section.key = value`
//! lines (a subset of TOML), plus `key=value` overrides.

use std::path::Path;

use toml::Value;

use crate::channel::{ChannelConfig, ChannelModel, Tap};
use crate::error::{Error, Result};
use crate::evaluator::SweepPlan;
use crate::link::LinkScenario;
use crate::mac_sps::{NetworkConfig, PhyMode, PolicyKind, PoolConfig};
use crate::phy_rx::Equalizer;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxes {
    pub tx_power_dbm: Vec<f64>,
    pub mcs: Vec<u8>,
    pub trials: u64,
    pub window_blocks: usize,
    pub windows_per_trial: usize,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            tx_power_dbm: (0..8).map(|i| -20.0 + 2.0 * i as f64).collect(),
            mcs: vec![0, 5, 10, 15],
            trials: 100,
            window_blocks: 1000,
            windows_per_trial: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputAxes {
    pub tx_power_dbm: f64,
    pub mcs: Vec<u8>,
}

impl Default for ThroughputAxes {
    fn default() -> Self {
        Self {
            tx_power_dbm: -6.0,
            mcs: (0..=28).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsAxes {
    pub policies: Vec<PolicyKind>,
    pub n_vehicles: Vec<usize>,
    pub width: usize,
    pub mcs: u8,
    pub rx_power_dbm: f64,
    pub noise_dbm: f64,
    pub sci_threshold_db: f64,
    pub mode: PhyMode,
    pub duration_ms: u64,
    pub replicas: u64,
    /// Fixed abstract-mode SNR threshold; calibrated from AWGN link runs
    /// when absent.
    pub snr_threshold_db: Option<f64>,
    pub calibration_trials: u64,
}

impl Default for SpsAxes {
    fn default() -> Self {
        let net = NetworkConfig::default();
        Self {
            policies: vec![PolicyKind::Random, PolicyKind::Sensing],
            n_vehicles: vec![20],
            width: net.width,
            mcs: net.mcs,
            rx_power_dbm: net.rx_power_dbm,
            noise_dbm: net.noise_dbm,
            sci_threshold_db: net.sci_threshold_db,
            mode: net.mode,
            duration_ms: 10_000,
            replicas: 10,
            snr_threshold_db: None,
            calibration_trials: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficAxes {
    pub tx_power_dbm: f64,
    pub mcs: u8,
}

impl Default for TrafficAxes {
    fn default() -> Self {
        Self {
            tx_power_dbm: -6.0,
            mcs: 0,
        }
    }
}

/// Everything a run needs, with defaults for every key.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub master_seed: u64,
    pub link: LinkScenario,
    pub sweep: SweepAxes,
    pub throughput: ThroughputAxes,
    pub backoff_target_bler: f64,
    pub pool: PoolConfig,
    pub sps: SpsAxes,
    pub traffic: TrafficAxes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            master_seed: 1,
            link: LinkScenario::default(),
            sweep: SweepAxes::default(),
            throughput: ThroughputAxes::default(),
            backoff_target_bler: 1e-2,
            pool: PoolConfig {
                n_subchannels: 4,
                selection_period_ms: 10,
                ..PoolConfig::default()
            },
            sps: SpsAxes::default(),
            traffic: TrafficAxes::default(),
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::config(field, message)
}

fn as_f64(field: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(field, format!("expected a number, got {v}"))),
    }
}

fn as_u64(field: &str, v: &Value) -> Result<u64> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        // Seeds above i64::MAX are written as strings.
        Value::String(s) => s
            .parse()
            .map_err(|_| bad(field, format!("expected a non-negative integer, got {s:?}"))),
        _ => Err(bad(
            field,
            format!("expected a non-negative integer, got {v}"),
        )),
    }
}

fn as_small<T: TryFrom<u64>>(field: &str, v: &Value) -> Result<T> {
    let n = as_u64(field, v)?;
    T::try_from(n).map_err(|_| bad(field, format!("{n} out of range")))
}

fn as_bool(field: &str, v: &Value) -> Result<bool> {
    match v {
        Value::Boolean(b) => Ok(*b),
        _ => Err(bad(field, format!("expected true or false, got {v}"))),
    }
}

fn as_str<'a>(field: &str, v: &'a Value) -> Result<&'a str> {
    match v {
        Value::String(s) => Ok(s),
        _ => Err(bad(field, format!("expected a string, got {v}"))),
    }
}

fn as_list<T>(field: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
    match v {
        Value::Array(a) => a.iter().map(|x| item(field, x)).collect(),
        // A scalar stands for a one-element list.
        other => Ok(vec![item(field, other)?]),
    }
}

fn parse_enum<T>(
    field: &str,
    v: &Value,
    parse: impl Fn(&str) -> Option<T>,
    allowed: &str,
) -> Result<T> {
    let s = as_str(field, v)?;
    parse(s).ok_or_else(|| {
        bad(
            field,
            format!("unknown value {s:?}; expected one of {allowed}"),
        )
    })
}

fn equalizer_name(e: Equalizer) -> &'static str {
    match e {
        Equalizer::Mmse => "mmse",
        Equalizer::ZeroForcing => "zf",
    }
}

fn parse_equalizer(s: &str) -> Option<Equalizer> {
    match s {
        "mmse" => Some(Equalizer::Mmse),
        "zf" => Some(Equalizer::ZeroForcing),
        _ => None,
    }
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

fn fmt_list<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    format!("[{}]", xs.iter().map(f).collect::<Vec<_>>().join(", "))
}

fn fmt_seed(s: u64) -> String {
    if s <= i64::MAX as u64 {
        s.to_string()
    } else {
        format!("\"{s}\"")
    }
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies every key of `text` without validating the result.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &table, &mut flat);
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies one `key=value` override. Values use TOML syntax; anything
    /// that does not parse is taken as a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key, &value)
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        let l = &mut self.link;
        match key {
            "scenario" => self.scenario = as_str(key, v)?.to_string(),
            "master_seed" => self.master_seed = as_u64(key, v)?,

            "grid.n_subchannels" => l.grid.n_subchannels = as_small(key, v)?,
            "grid.sc_per_subchannel" => l.grid.sc_per_subchannel = as_small(key, v)?,
            "ofdm.fft_size" => l.ofdm.fft_size = as_small(key, v)?,
            "ofdm.cp_len" => l.ofdm.cp_len = as_small(key, v)?,

            "channel.model" => {
                l.channel.model = parse_enum(
                    key,
                    v,
                    ChannelModel::parse,
                    "ideal, awgn, rayleigh_flat, rayleigh_tdl",
                )?
            }
            "channel.doppler_hz" => l.channel.doppler_hz = as_f64(key, v)?,
            "channel.tap_delays" => {
                let d: Vec<usize> = as_list(key, v, as_small)?;
                resize_taps(&mut l.channel.taps, d.len());
                l.channel
                    .taps
                    .iter_mut()
                    .zip(d)
                    .for_each(|(t, d)| t.delay_samples = d);
            }
            "channel.tap_powers" => {
                let p = as_list(key, v, as_f64)?;
                resize_taps(&mut l.channel.taps, p.len());
                l.channel
                    .taps
                    .iter_mut()
                    .zip(p)
                    .for_each(|(t, p)| t.power = p);
            }

            "impairments.cfo_hz" => l.impairments.cfo_hz = as_f64(key, v)?,
            "impairments.cfo_enabled" => l.impairments.cfo_enabled = as_bool(key, v)?,
            "impairments.timing_offset_samples" => {
                l.impairments.timing_offset_samples = match v {
                    Value::Integer(i) => *i,
                    _ => return Err(bad(key, format!("expected an integer, got {v}"))),
                }
            }
            "impairments.timing_enabled" => l.impairments.timing_enabled = as_bool(key, v)?,

            "calibration.gain_offset_db" => l.calibration.gain_offset_db = as_f64(key, v)?,

            "link.allocation_start" => l.allocation.start_subchannel = as_small(key, v)?,
            "link.allocation_width" => l.allocation.n_subchannels = as_small(key, v)?,
            "link.vehicle_id" => l.vehicle_id = as_small(key, v)?,
            "link.block_interval" => l.block_interval = as_small(key, v)?,

            "rx.cfo_correction" => l.rx.cfo_correction = as_bool(key, v)?,
            "rx.equalizer" => l.rx.equalizer = parse_enum(key, v, parse_equalizer, "mmse, zf")?,

            "sweep.tx_power_dbm" => self.sweep.tx_power_dbm = as_list(key, v, as_f64)?,
            "sweep.mcs" => self.sweep.mcs = as_list(key, v, as_small)?,
            "sweep.trials" => self.sweep.trials = as_u64(key, v)?,
            "sweep.window_blocks" => self.sweep.window_blocks = as_small(key, v)?,
            "sweep.windows_per_trial" => self.sweep.windows_per_trial = as_small(key, v)?,

            "throughput.tx_power_dbm" => self.throughput.tx_power_dbm = as_f64(key, v)?,
            "throughput.mcs" => self.throughput.mcs = as_list(key, v, as_small)?,

            "backoff.target_bler" => self.backoff_target_bler = as_f64(key, v)?,

            "pool.n_subchannels" => self.pool.n_subchannels = as_small(key, v)?,
            "pool.selection_period_ms" => self.pool.selection_period_ms = as_small(key, v)?,
            "pool.sensing_window_ms" => self.pool.sensing_window_ms = as_small(key, v)?,
            "pool.keep_fraction" => self.pool.keep_fraction = as_f64(key, v)?,
            "pool.rssi_threshold_dbm" => self.pool.rssi_threshold_dbm = as_f64(key, v)?,
            "pool.counter_min" => self.pool.counter_min = as_small(key, v)?,
            "pool.counter_max" => self.pool.counter_max = as_small(key, v)?,

            "sps.policies" => {
                self.sps.policies = as_list(key, v, |f, x| {
                    parse_enum(f, x, PolicyKind::parse, "random, preconfigured, sensing")
                })?
            }
            "sps.n_vehicles" => self.sps.n_vehicles = as_list(key, v, as_small)?,
            "sps.width" => self.sps.width = as_small(key, v)?,
            "sps.mcs" => self.sps.mcs = as_small(key, v)?,
            "sps.rx_power_dbm" => self.sps.rx_power_dbm = as_f64(key, v)?,
            "sps.noise_dbm" => self.sps.noise_dbm = as_f64(key, v)?,
            "sps.sci_threshold_db" => self.sps.sci_threshold_db = as_f64(key, v)?,
            "sps.mode" => self.sps.mode = parse_enum(key, v, PhyMode::parse, "abstract, full_phy")?,
            "sps.duration_ms" => self.sps.duration_ms = as_u64(key, v)?,
            "sps.replicas" => self.sps.replicas = as_u64(key, v)?,
            "sps.snr_threshold_db" => self.sps.snr_threshold_db = Some(as_f64(key, v)?),
            "sps.calibration_trials" => self.sps.calibration_trials = as_u64(key, v)?,

            "traffic.tx_power_dbm" => self.traffic.tx_power_dbm = as_f64(key, v)?,
            "traffic.mcs" => self.traffic.mcs = as_small(key, v)?,

            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        let s = &self.sweep;
        if s.tx_power_dbm.is_empty() {
            return Err(bad("sweep.tx_power_dbm", "empty"));
        }
        if s.tx_power_dbm.iter().any(|p| !p.is_finite()) {
            return Err(bad("sweep.tx_power_dbm", "non-finite power"));
        }
        if s.mcs.is_empty() {
            return Err(bad("sweep.mcs", "empty"));
        }
        check_mcs("sweep.mcs", &s.mcs)?;
        if s.trials == 0 {
            return Err(bad("sweep.trials", "must be >= 1"));
        }
        if s.window_blocks == 0 {
            return Err(bad("sweep.window_blocks", "must be >= 1"));
        }
        if s.windows_per_trial == 0 {
            return Err(bad("sweep.windows_per_trial", "must be >= 1"));
        }
        if self.throughput.mcs.is_empty() {
            return Err(bad("throughput.mcs", "empty"));
        }
        check_mcs("throughput.mcs", &self.throughput.mcs)?;
        if !(self.backoff_target_bler > 0.0 && self.backoff_target_bler < 1.0) {
            return Err(bad("backoff.target_bler", "must lie in (0, 1)"));
        }
        self.pool.validate()?;
        if self.sps.policies.is_empty() {
            return Err(bad("sps.policies", "empty"));
        }
        if self.sps.n_vehicles.is_empty() || self.sps.n_vehicles.contains(&0) {
            return Err(bad("sps.n_vehicles", "need at least one positive count"));
        }
        if self.sps.replicas == 0 {
            return Err(bad("sps.replicas", "must be >= 1"));
        }
        if self.sps.calibration_trials == 0 {
            return Err(bad("sps.calibration_trials", "must be >= 1"));
        }
        check_mcs("sps.mcs", &[self.sps.mcs])?;
        check_mcs("traffic.mcs", &[self.traffic.mcs])?;
        for n in &self.sps.n_vehicles {
            self.network(*n, PolicyKind::Random, 0).validate()?;
        }
        Ok(())
    }

    /// Every key with its current value, one per line, in a fixed order.
    /// Parsing the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let l = &self.link;
        let f = |x: &f64| fmt_f64(*x);
        let d = |x: &dyn ToString| x.to_string();
        let q = |s: &str| format!("{s:?}");
        let mut lines = vec![
            ("scenario", q(&self.scenario)),
            ("master_seed", fmt_seed(self.master_seed)),
            ("grid.n_subchannels", d(&l.grid.n_subchannels)),
            ("grid.sc_per_subchannel", d(&l.grid.sc_per_subchannel)),
            ("ofdm.fft_size", d(&l.ofdm.fft_size)),
            ("ofdm.cp_len", d(&l.ofdm.cp_len)),
            ("channel.model", q(l.channel.model.name())),
            ("channel.doppler_hz", f(&l.channel.doppler_hz)),
            (
                "channel.tap_delays",
                fmt_list(&l.channel.taps, |t| t.delay_samples.to_string()),
            ),
            (
                "channel.tap_powers",
                fmt_list(&l.channel.taps, |t| fmt_f64(t.power)),
            ),
            ("impairments.cfo_hz", f(&l.impairments.cfo_hz)),
            ("impairments.cfo_enabled", d(&l.impairments.cfo_enabled)),
            (
                "impairments.timing_offset_samples",
                d(&l.impairments.timing_offset_samples),
            ),
            (
                "impairments.timing_enabled",
                d(&l.impairments.timing_enabled),
            ),
            (
                "calibration.gain_offset_db",
                f(&l.calibration.gain_offset_db),
            ),
            ("link.allocation_start", d(&l.allocation.start_subchannel)),
            ("link.allocation_width", d(&l.allocation.n_subchannels)),
            ("link.vehicle_id", d(&l.vehicle_id)),
            ("link.block_interval", d(&l.block_interval)),
            ("rx.cfo_correction", d(&l.rx.cfo_correction)),
            ("rx.equalizer", q(equalizer_name(l.rx.equalizer))),
            ("sweep.tx_power_dbm", fmt_list(&self.sweep.tx_power_dbm, f)),
            ("sweep.mcs", fmt_list(&self.sweep.mcs, |m| m.to_string())),
            ("sweep.trials", d(&self.sweep.trials)),
            ("sweep.window_blocks", d(&self.sweep.window_blocks)),
            ("sweep.windows_per_trial", d(&self.sweep.windows_per_trial)),
            ("throughput.tx_power_dbm", f(&self.throughput.tx_power_dbm)),
            (
                "throughput.mcs",
                fmt_list(&self.throughput.mcs, |m| m.to_string()),
            ),
            ("backoff.target_bler", f(&self.backoff_target_bler)),
            ("pool.n_subchannels", d(&self.pool.n_subchannels)),
            (
                "pool.selection_period_ms",
                d(&self.pool.selection_period_ms),
            ),
            ("pool.sensing_window_ms", d(&self.pool.sensing_window_ms)),
            ("pool.keep_fraction", f(&self.pool.keep_fraction)),
            ("pool.rssi_threshold_dbm", f(&self.pool.rssi_threshold_dbm)),
            ("pool.counter_min", d(&self.pool.counter_min)),
            ("pool.counter_max", d(&self.pool.counter_max)),
            (
                "sps.policies",
                fmt_list(&self.sps.policies, |p| q(p.name())),
            ),
            (
                "sps.n_vehicles",
                fmt_list(&self.sps.n_vehicles, |n| n.to_string()),
            ),
            ("sps.width", d(&self.sps.width)),
            ("sps.mcs", d(&self.sps.mcs)),
            ("sps.rx_power_dbm", f(&self.sps.rx_power_dbm)),
            ("sps.noise_dbm", f(&self.sps.noise_dbm)),
            ("sps.sci_threshold_db", f(&self.sps.sci_threshold_db)),
            ("sps.mode", q(self.sps.mode.name())),
            ("sps.duration_ms", d(&self.sps.duration_ms)),
            ("sps.replicas", d(&self.sps.replicas)),
            ("sps.calibration_trials", d(&self.sps.calibration_trials)),
            ("traffic.tx_power_dbm", f(&self.traffic.tx_power_dbm)),
            ("traffic.mcs", d(&self.traffic.mcs)),
        ];
        if let Some(t) = self.sps.snr_threshold_db {
            lines.push(("sps.snr_threshold_db", fmt_f64(t)));
        }
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The BLER sweep this config describes.
    pub fn sweep_plan(&self, workers: usize) -> SweepPlan {
        SweepPlan {
            powers_dbm: self.sweep.tx_power_dbm.clone(),
            mcs: self.sweep.mcs.clone(),
            trials: self.sweep.trials,
            windows_per_trial: self.sweep.windows_per_trial,
            window_blocks: self.sweep.window_blocks,
            master_seed: self.master_seed,
            workers,
        }
    }

    /// The SPS network for one vehicle count and policy.
    pub fn network(&self, n_vehicles: usize, policy: PolicyKind, seed: u64) -> NetworkConfig {
        NetworkConfig {
            pool: self.pool.clone(),
            n_vehicles,
            policy,
            width: self.sps.width,
            mcs: self.sps.mcs,
            rx_power_dbm: self.sps.rx_power_dbm,
            noise_dbm: self.sps.noise_dbm,
            sci_threshold_db: self.sps.sci_threshold_db,
            mode: self.sps.mode,
            channel: ChannelConfig::with_model(ChannelModel::Awgn),
            seed,
        }
    }
}

fn check_mcs(field: &str, mcs: &[u8]) -> Result<()> {
    match mcs.iter().find(|&&m| m > crate::coding::MAX_MCS) {
        Some(m) => Err(bad(
            field,
            format!("MCS {m} above {}", crate::coding::MAX_MCS),
        )),
        None => Ok(()),
    }
}

fn resize_taps(taps: &mut Vec<Tap>, n: usize) {
    taps.resize(
        n,
        Tap {
            delay_samples: 0,
            power: 0.0,
        },
    );
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}
