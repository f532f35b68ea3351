//! Python bindings: configuration, single-link simulation, BLER sweeps and
//! statistics, the SPS network and the traffic adapter.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ltev_core::evaluator::{self, SweepResult};
use ltev_core::grid::{Allocation, GridConfig};
use ltev_core::harness::{self, ExperimentConfig};
use ltev_core::link::{self, LinkSimulator};
use ltev_core::mac_sps::{self, PolicyKind, ThresholdTable, TxRecord};
use ltev_core::phy_tx;

fn py_err(e: ltev_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Experiment configuration built from dotted `section.key = value` text.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_text(text).map_err(py_err)?,
        })
    }

    /// Applies one `key=value` override and revalidates.
    fn set(&mut self, assignment: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.apply_override(assignment).map_err(py_err)?;
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    fn __repr__(&self) -> String {
        format!("Config(scenario={:?}, master_seed={})", self.inner.scenario, self.inner.master_seed)
    }
}

/// One transmitter/receiver pair over the configured channel.
#[pyclass(name = "LinkSimulator")]
struct PyLinkSimulator {
    inner: LinkSimulator,
}

#[pymethods]
impl PyLinkSimulator {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(Self {
            inner: LinkSimulator::new(config.inner.link.clone()).map_err(py_err)?,
        })
    }

    fn tb_bits(&self, mcs: u8) -> PyResult<usize> {
        self.inner.tb_bits(mcs).map_err(py_err)
    }

    /// Success flags indexed `[power][block]`.
    fn run_blocks(
        &self,
        trial_seed: u64,
        mcs: u8,
        powers_dbm: Vec<f64>,
        first_block: u64,
        n_blocks: usize,
    ) -> PyResult<Vec<Vec<bool>>> {
        let out = self
            .inner
            .run_blocks(trial_seed, mcs, &powers_dbm, first_block, n_blocks)
            .map_err(py_err)?;
        Ok(out.into_iter().map(|v| v.into_iter().map(|o| o.success).collect()).collect())
    }

    fn run_block(&self, trial_seed: u64, mcs: u8, tx_power_dbm: f64, block: u64) -> PyResult<bool> {
        let o = self.inner.run_block(trial_seed, mcs, tx_power_dbm, block).map_err(py_err)?;
        Ok(o.success)
    }
}

#[pyclass(name = "StatsRow", get_all, frozen)]
struct PyStatsRow {
    tx_power_dbm: f64,
    mcs: u8,
    n_samples: usize,
    bler_mean: f64,
    bler_std: f64,
    bler_q99: f64,
}

#[pymethods]
impl PyStatsRow {
    fn __repr__(&self) -> String {
        format!(
            "StatsRow(tx_power_dbm={}, mcs={}, n={}, mean={}, std={}, q99={})",
            self.tx_power_dbm, self.mcs, self.n_samples, self.bler_mean, self.bler_std, self.bler_q99
        )
    }
}

fn stats_rows(res: &SweepResult) -> Vec<PyStatsRow> {
    res.stats
        .iter()
        .map(|r| PyStatsRow {
            tx_power_dbm: r.tx_power_dbm,
            mcs: r.mcs,
            n_samples: r.stats.n_samples,
            bler_mean: r.stats.mean,
            bler_std: r.stats.std,
            bler_q99: r.stats.q99,
        })
        .collect()
}

/// BLER statistics over the config's power x MCS sweep, sorted by (power,
/// MCS).
#[pyfunction]
#[pyo3(signature = (config, workers = 0))]
fn bler_sweep(py: Python<'_>, config: &PyConfig, workers: usize) -> PyResult<Vec<PyStatsRow>> {
    let cfg = config.inner.clone();
    let res = py
        .detach(|| {
            let sim = LinkSimulator::new(cfg.link.clone())?;
            evaluator::run_bler_sweep(&sim, &cfg.sweep_plan(workers))
        })
        .map_err(py_err)?;
    Ok(stats_rows(&res))
}

/// (mean, std, q99, n_samples, low_confidence) of per-window BLER samples.
#[pyfunction]
fn bler_stats(samples: Vec<f64>) -> PyResult<(f64, f64, f64, usize, bool)> {
    let s = evaluator::bler_stats(&samples).map_err(py_err)?;
    Ok((s.mean, s.std, s.q99, s.n_samples, s.low_confidence))
}

/// Power gap between the q99 and mean curves at `target_bler`; curves are
/// lists of (power_dbm, bler).
#[pyfunction]
fn backoff_db(curve_mean: Vec<(f64, f64)>, curve_q99: Vec<(f64, f64)>, target_bler: f64) -> PyResult<f64> {
    evaluator::backoff_db(&curve_mean, &curve_q99, target_bler).map_err(py_err)
}

#[pyfunction]
fn throughput_bps(mean_bler: f64, tb_bits: usize, blocks_per_second: f64) -> f64 {
    evaluator::throughput_bps(mean_bler, tb_bits, blocks_per_second)
}

#[pyfunction]
#[pyo3(signature = (mcs, n_subchannels = 6))]
fn transport_block_bits(mcs: u8, n_subchannels: usize) -> PyResult<usize> {
    let cfg = GridConfig::default();
    phy_tx::transport_block_bits(&cfg, &Allocation::new(0, n_subchannels), mcs).map_err(py_err)
}

/// (bit errors, bits) for hard-decision QPSK through the OFDM modem.
#[pyfunction]
fn uncoded_qpsk_ber(ebn0_db: f64, n_subframes: usize, seed: u64) -> PyResult<(u64, u64)> {
    link::uncoded_qpsk_ber(ebn0_db, n_subframes, seed).map_err(py_err)
}

/// (all passed, rendered report) for the ideal-channel loopback.
#[pyfunction]
#[pyo3(signature = (n_subframes = 5, workers = 0))]
fn selftest(py: Python<'_>, n_subframes: usize, workers: usize) -> PyResult<(bool, String)> {
    let r = py
        .detach(|| harness::run_selftest(n_subframes, workers))
        .map_err(py_err)?;
    Ok((r.all_passed(), r.render()))
}

/// Multi-vehicle SPS network in abstract PHY mode.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: mac_sps::Network,
    log: Vec<TxRecord>,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (config, n_vehicles, policy, seed, snr_threshold_db = 0.0))]
    fn new(config: &PyConfig, n_vehicles: usize, policy: &str, seed: u64, snr_threshold_db: f64) -> PyResult<Self> {
        let kind = PolicyKind::parse(policy)
            .ok_or_else(|| PyValueError::new_err(format!("unknown policy {policy:?}")))?;
        let mut net_cfg = config.inner.network(n_vehicles, kind, seed);
        net_cfg.mode = mac_sps::PhyMode::Abstract;
        let table = ThresholdTable::from_points(&[(net_cfg.mcs, snr_threshold_db)]);
        Ok(Self {
            inner: mac_sps::Network::new(net_cfg, table).map_err(py_err)?,
            log: Vec::new(),
        })
    }

    /// Advances `n_subframes` and returns the number of transmissions made.
    fn run(&mut self, n_subframes: u64) -> PyResult<usize> {
        let recs = self.inner.run(n_subframes).map_err(py_err)?;
        let n = recs.len();
        self.log.extend(recs);
        Ok(n)
    }

    fn collision_rate(&self) -> PyResult<f64> {
        mac_sps::collision_rate(&self.log).map_err(py_err)
    }

    fn packet_reception_ratio(&self) -> PyResult<f64> {
        mac_sps::packet_reception_ratio(&self.log).map_err(py_err)
    }

    #[getter]
    fn load(&self) -> f64 {
        self.inner.config().load()
    }
}

/// PKT/RES line protocol handler.
#[pyclass(name = "TrafficAdapter")]
struct PyTrafficAdapter {
    inner: harness::TrafficAdapter,
}

#[pymethods]
impl PyTrafficAdapter {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(Self {
            inner: harness::TrafficAdapter::new(&config.inner).map_err(py_err)?,
        })
    }

    fn handle_line(&mut self, line: &str) -> String {
        self.inner.handle_line(line)
    }
}

#[pymodule]
fn ltev(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyLinkSimulator>()?;
    m.add_class::<PyStatsRow>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyTrafficAdapter>()?;
    m.add_function(wrap_pyfunction!(bler_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(bler_stats, m)?)?;
    m.add_function(wrap_pyfunction!(backoff_db, m)?)?;
    m.add_function(wrap_pyfunction!(throughput_bps, m)?)?;
    m.add_function(wrap_pyfunction!(transport_block_bits, m)?)?;
    m.add_function(wrap_pyfunction!(uncoded_qpsk_ber, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
