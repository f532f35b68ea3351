//! Semi-persistent resource selection for a population of vehicles sharing
//! one sub-channelised pool.
//!
//! A resource is a (subframe offset within the selection period, first
//! sub-channel) pair. Every vehicle holds a [`Grant`] that repeats once per
//! period until its reselection counter runs out. All vehicles are in range
//! of each other; there is no geometry.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{add_awgn, ChannelConfig, ChannelModel, FadingChannel, PowerCalibration};
use crate::error::{Error, Result};
use crate::evaluator::{crossing_power, run_bler_sweep, SweepPlan, DEFAULT_BLER_FLOOR};
use crate::grid::{Allocation, GridConfig};
use crate::link::{derive_stream, LinkScenario, LinkSimulator};
use crate::phy_rx::{receive_grid, RxOptions};
use crate::phy_tx::{
    build_tx_subframe, dbm_to_mw, transport_block_bits, LinkIds, OfdmConfig, OfdmEngine, Sci,
};

/// Selection periods the pool accepts, in ms.
pub const SELECTION_PERIODS_MS: [u32; 5] = [1, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub n_subchannels: usize,
    pub selection_period_ms: u32,
    pub sensing_window_ms: usize,
    /// Share of the ranked candidates kept for the final uniform draw.
    pub keep_fraction: f64,
    /// Decoded reservations are honoured only when their measured energy
    /// exceeds this level. Negative infinity honours all of them.
    pub rssi_threshold_dbm: f64,
    pub counter_min: u32,
    pub counter_max: u32,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            n_subchannels: 6,
            selection_period_ms: 100,
            sensing_window_ms: 100,
            keep_fraction: 0.2,
            rssi_threshold_dbm: f64::NEG_INFINITY,
            counter_min: 5,
            counter_max: 15,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subchannels == 0 {
            return Err(Error::config("pool.n_subchannels", "must be at least 1"));
        }
        if !SELECTION_PERIODS_MS.contains(&self.selection_period_ms) {
            return Err(Error::config(
                "pool.selection_period_ms",
                format!(
                    "{} not one of {:?}",
                    self.selection_period_ms, SELECTION_PERIODS_MS
                ),
            ));
        }
        if self.sensing_window_ms == 0 {
            return Err(Error::config(
                "pool.sensing_window_ms",
                "must be at least 1",
            ));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::config("pool.keep_fraction", "must lie in (0, 1]"));
        }
        if self.rssi_threshold_dbm.is_nan() {
            return Err(Error::config("pool.rssi_threshold_dbm", "is NaN"));
        }
        if self.counter_min == 0 || self.counter_min > self.counter_max {
            return Err(Error::config(
                "pool.counter_min",
                "need 1 <= counter_min <= counter_max",
            ));
        }
        Ok(())
    }

    /// Number of distinct resources of the given width.
    pub fn n_resources(&self, width: usize) -> usize {
        self.selection_period_ms as usize * (self.n_subchannels + 1).saturating_sub(width)
    }

    fn candidates(&self, width: usize) -> Vec<(usize, usize)> {
        let period = self.selection_period_ms as usize;
        (0..period)
            .flat_map(|o| (0..=self.n_subchannels - width).map(move |s| (o, s)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub subframe_offset: usize,
    pub start_subchannel: usize,
    pub n_subchannels: usize,
    pub period_ms: u32,
    pub reselection_counter: u32,
}

impl Grant {
    pub fn allocation(&self) -> Allocation {
        Allocation::new(self.start_subchannel, self.n_subchannels)
    }

    /// Whether the grant is due in `subframe`.
    pub fn active_at(&self, subframe: u64) -> bool {
        subframe % u64::from(self.period_ms) == self.subframe_offset as u64
    }
}

/// A reservation announced by a decoded SCI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub start_subchannel: usize,
    pub n_subchannels: usize,
    pub period_ms: u32,
    /// Energy measured on the reserved sub-channels, dBm.
    pub energy_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SensingEntry {
    subframe: u64,
    // Per sub-channel, mW. `None` while the vehicle was transmitting.
    energy_mw: Option<Vec<f64>>,
    reservations: Vec<Reservation>,
}

/// Ring buffer holding the last `sensing_window_ms` subframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingHistory {
    n_subchannels: usize,
    noise_floor_mw: f64,
    entries: Vec<Option<SensingEntry>>,
}

impl SensingHistory {
    pub fn new(pool: &PoolConfig, noise_floor_mw: f64) -> Self {
        Self {
            n_subchannels: pool.n_subchannels,
            noise_floor_mw,
            entries: vec![None; pool.sensing_window_ms],
        }
    }

    pub fn window_len(&self) -> usize {
        self.entries.len()
    }

    /// Stores one sensed subframe, overwriting the slot from one window
    /// ago. `energy_mw = None` marks a subframe the vehicle could not sense.
    pub fn record(
        &mut self,
        subframe: u64,
        energy_mw: Option<Vec<f64>>,
        reservations: Vec<Reservation>,
    ) -> Result<()> {
        if let Some(e) = &energy_mw {
            if e.len() != self.n_subchannels {
                return Err(Error::Contract(format!(
                    "energy for {} sub-channels, pool has {}",
                    e.len(),
                    self.n_subchannels
                )));
            }
        }
        let slot = (subframe % self.entries.len() as u64) as usize;
        self.entries[slot] = Some(SensingEntry {
            subframe,
            energy_mw,
            reservations,
        });
        Ok(())
    }

    fn live(&self) -> impl Iterator<Item = &SensingEntry> {
        self.entries.iter().flatten()
    }

    /// Mean energy per sub-channel, in mW, over the sensed subframes that
    /// share `offset` modulo `period`. Unsensed offsets read as the noise
    /// floor.
    fn projected_energy(&self, offset: usize, start: usize, width: usize, period: u32) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for e in self.live() {
            if e.subframe % u64::from(period) != offset as u64 {
                continue;
            }
            if let Some(en) = &e.energy_mw {
                sum += en[start..start + width].iter().sum::<f64>() / width as f64;
                n += 1;
            }
        }
        if n == 0 {
            self.noise_floor_mw
        } else {
            sum / n as f64
        }
    }

    /// Whether a decoded reservation above `threshold_dbm` will recur on
    /// resource (`offset`, `start`..`start + width`) of a grant with the
    /// given period.
    fn reserved(
        &self,
        offset: usize,
        start: usize,
        width: usize,
        period: u32,
        threshold_dbm: f64,
    ) -> bool {
        let mine = Allocation::new(start, width);
        self.live().any(|e| {
            e.reservations.iter().any(|r| {
                if r.period_ms == 0 || r.energy_dbm <= threshold_dbm {
                    return false;
                }
                if !mine.overlaps(&Allocation::new(r.start_subchannel, r.n_subchannels)) {
                    return false;
                }
                // e.subframe + k * r.period meets offset + j * period for
                // some k, j iff their difference is a multiple of the gcd.
                let g = gcd(u64::from(r.period_ms), u64::from(period));
                (e.subframe % g) == (offset as u64 % g)
            })
        })
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Preconfigured,
    Sensing,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Preconfigured => "preconfigured",
            PolicyKind::Sensing => "sensing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(PolicyKind::Random),
            "preconfigured" => Some(PolicyKind::Preconfigured),
            "sensing" => Some(PolicyKind::Sensing),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Random,
    Preconfigured {
        subframe_offset: usize,
        start_subchannel: usize,
    },
    Sensing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub grant: Grant,
    /// Every candidate was excluded and the choice fell back to pure energy
    /// ranking.
    pub fallback: bool,
}

/// Picks a resource of `width` sub-channels and draws a fresh reselection
/// counter.
pub fn select_resource<R: Rng>(
    policy: Policy,
    history: &SensingHistory,
    pool: &PoolConfig,
    width: usize,
    rng: &mut R,
) -> Result<Selection> {
    pool.validate()?;
    if width == 0 || width > pool.n_subchannels {
        return Err(Error::Range(format!(
            "grant width {width} in a pool of {} sub-channels",
            pool.n_subchannels
        )));
    }
    let period = pool.selection_period_ms;
    let mut fallback = false;
    let (offset, start) = match policy {
        Policy::Random => {
            let c = pool.candidates(width);
            c[rng.gen_range(0..c.len())]
        }
        Policy::Preconfigured {
            subframe_offset,
            start_subchannel,
        } => {
            if subframe_offset >= period as usize || start_subchannel + width > pool.n_subchannels {
                return Err(Error::Range(format!(
                    "preconfigured resource ({subframe_offset}, {start_subchannel}) outside the pool"
                )));
            }
            (subframe_offset, start_subchannel)
        }
        Policy::Sensing => {
            let mut all = pool.candidates(width);
            // Shuffle first so the stable sort breaks energy ties at random.
            all.shuffle(rng);
            let mut kept: Vec<(usize, usize)> = all
                .iter()
                .copied()
                .filter(|&(o, s)| !history.reserved(o, s, width, period, pool.rssi_threshold_dbm))
                .collect();
            if kept.is_empty() {
                fallback = true;
                kept = all;
            }
            let energy = |&(o, s): &(usize, usize)| history.projected_energy(o, s, width, period);
            kept.sort_by(|a, b| energy(a).total_cmp(&energy(b)));
            let n_keep =
                ((kept.len() as f64 * pool.keep_fraction).ceil() as usize).clamp(1, kept.len());
            kept[rng.gen_range(0..n_keep)]
        }
    };
    Ok(Selection {
        grant: Grant {
            subframe_offset: offset,
            start_subchannel: start,
            n_subchannels: width,
            period_ms: period,
            reselection_counter: rng.gen_range(pool.counter_min..=pool.counter_max),
        },
        fallback,
    })
}

/// Minimum sample-domain SNR per MCS for a block to be received in the
/// abstract PHY mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdTable {
    thresholds: BTreeMap<u8, f64>,
}

impl ThresholdTable {
    pub fn from_points(points: &[(u8, f64)]) -> Self {
        Self {
            thresholds: points.iter().copied().collect(),
        }
    }

    pub fn get(&self, mcs: u8) -> Option<f64> {
        self.thresholds.get(&mcs).copied()
    }

    pub fn entries(&self) -> Vec<(u8, f64)> {
        self.thresholds.iter().map(|(&m, &t)| (m, t)).collect()
    }

    /// Runs a BLER sweep over `plan` with `sim` and keeps, per MCS, the SNR
    /// at which the mean BLER first falls to `target_bler`.
    pub fn calibrate(sim: &LinkSimulator, plan: &SweepPlan, target_bler: f64) -> Result<Self> {
        let res = run_bler_sweep(sim, plan)?;
        let cal: PowerCalibration = sim.scenario().calibration;
        let mut thresholds = BTreeMap::new();
        for &mcs in &plan.mcs {
            let p = crossing_power(
                &res.curve(mcs, |s| s.mean),
                target_bler,
                DEFAULT_BLER_FLOOR,
                "mean",
            )?;
            thresholds.insert(mcs, cal.snr_db(p));
        }
        Ok(Self { thresholds })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhyMode {
    /// Collision check plus an SNR threshold per MCS.
    Abstract,
    /// Superimposed waveforms through the full receiver.
    FullPhy,
}

impl PhyMode {
    pub fn name(self) -> &'static str {
        match self {
            PhyMode::Abstract => "abstract",
            PhyMode::FullPhy => "full_phy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "abstract" => Some(PhyMode::Abstract),
            "full_phy" => Some(PhyMode::FullPhy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub pool: PoolConfig,
    pub n_vehicles: usize,
    pub policy: PolicyKind,
    /// Sub-channels per grant.
    pub width: usize,
    pub mcs: u8,
    /// Power every receiver sees from every transmitter.
    pub rx_power_dbm: f64,
    pub noise_dbm: f64,
    /// Lowest SNR at which a lone SCI is decoded in abstract mode.
    pub sci_threshold_db: f64,
    pub mode: PhyMode,
    /// Per-link channel in full-PHY mode.
    pub channel: ChannelConfig,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            pool: PoolConfig::default(),
            n_vehicles: 20,
            policy: PolicyKind::Sensing,
            width: 1,
            mcs: 5,
            rx_power_dbm: -80.0,
            noise_dbm: -100.0,
            sci_threshold_db: -5.0,
            mode: PhyMode::Abstract,
            channel: ChannelConfig::with_model(ChannelModel::Awgn),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.pool.validate()?;
        if self.width == 0 || self.width > self.pool.n_subchannels {
            return Err(Error::config(
                "sps.width",
                "must lie in 1..=pool.n_subchannels",
            ));
        }
        if self.n_vehicles == 0 {
            return Err(Error::config("sps.n_vehicles", "must be at least 1"));
        }
        if !self.rx_power_dbm.is_finite() || !self.noise_dbm.is_finite() {
            return Err(Error::config("sps.rx_power_dbm", "powers must be finite"));
        }
        Ok(())
    }

    pub fn link_snr_db(&self) -> f64 {
        self.rx_power_dbm - self.noise_dbm
    }

    /// Offered load: occupied resources over available resources.
    pub fn load(&self) -> f64 {
        (self.n_vehicles * self.width) as f64
            / (self.pool.n_subchannels * self.pool.selection_period_ms as usize) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub grant: Grant,
    pub history: SensingHistory,
    pub has_traffic: bool,
    /// Reselections that fell back to energy-only ranking.
    pub fallbacks: u32,
    preconfigured: (usize, usize),
}

/// One transmission and how the other vehicles fared receiving it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub subframe: u64,
    pub vehicle: u32,
    pub start_subchannel: usize,
    pub n_subchannels: usize,
    /// Another transmission in the same subframe overlapped this one.
    pub collided: bool,
    pub n_receivers: u32,
    pub n_success: u32,
    /// The counter ran out and a new resource was chosen afterwards.
    pub reselected: bool,
}

/// Fraction of transmissions that overlapped another one in the same
/// subframe.
pub fn collision_rate(log: &[TxRecord]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::EmptyInput("transmission log"));
    }
    Ok(log.iter().filter(|r| r.collided).count() as f64 / log.len() as f64)
}

/// Successful receptions over (transmissions x potential receivers).
pub fn packet_reception_ratio(log: &[TxRecord]) -> Result<f64> {
    let opportunities: u64 = log.iter().map(|r| u64::from(r.n_receivers)).sum();
    if opportunities == 0 {
        return Err(Error::EmptyInput("reception opportunities"));
    }
    let ok: u64 = log.iter().map(|r| u64::from(r.n_success)).sum();
    Ok(ok as f64 / opportunities as f64)
}

struct FullPhy {
    grid: GridConfig,
    ofdm: OfdmConfig,
    engine: OfdmEngine,
}

/// Owns every vehicle and advances them one subframe at a time.
pub struct Network {
    cfg: NetworkConfig,
    thresholds: ThresholdTable,
    vehicles: Vec<Vehicle>,
    rng: ChaCha8Rng,
    subframe: u64,
    phy: Option<FullPhy>,
}

impl Network {
    /// Every vehicle makes its first selection on an empty history.
    /// `thresholds` must cover `cfg.mcs` in abstract mode.
    pub fn new(cfg: NetworkConfig, thresholds: ThresholdTable) -> Result<Self> {
        cfg.validate()?;
        let phy = match cfg.mode {
            PhyMode::Abstract => {
                if thresholds.get(cfg.mcs).is_none() {
                    return Err(Error::config(
                        "sps.mcs",
                        format!("no SNR threshold for MCS {}", cfg.mcs),
                    ));
                }
                None
            }
            PhyMode::FullPhy => {
                let grid = GridConfig {
                    n_subchannels: cfg.pool.n_subchannels,
                    ..GridConfig::default()
                };
                let ofdm = OfdmConfig::default();
                ofdm.validate(&grid)?;
                cfg.channel.validate(ofdm.cp_len)?;
                transport_block_bits(&grid, &Allocation::new(0, cfg.width), cfg.mcs)?;
                Some(FullPhy {
                    engine: OfdmEngine::new(ofdm),
                    grid,
                    ofdm,
                })
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise_mw = dbm_to_mw(cfg.noise_dbm);
        // Preconfigured positions tile the pool with disjoint resources.
        let tiles: Vec<(usize, usize)> = (0..cfg.pool.selection_period_ms as usize)
            .flat_map(|o| (0..cfg.pool.n_subchannels / cfg.width).map(move |k| (o, k * cfg.width)))
            .collect();
        let mut vehicles = Vec::with_capacity(cfg.n_vehicles);
        for i in 0..cfg.n_vehicles {
            let history = SensingHistory::new(&cfg.pool, noise_mw);
            let preconfigured = tiles[i % tiles.len()];
            let sel = select_resource(
                policy_for(cfg.policy, preconfigured),
                &history,
                &cfg.pool,
                cfg.width,
                &mut rng,
            )?;
            vehicles.push(Vehicle {
                id: i as u32 + 1,
                grant: sel.grant,
                history,
                has_traffic: true,
                fallbacks: u32::from(sel.fallback),
                preconfigured,
            });
        }
        Ok(Self {
            cfg,
            thresholds,
            vehicles,
            rng,
            subframe: 0,
            phy,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicles_mut(&mut self) -> &mut [Vehicle] {
        &mut self.vehicles
    }

    /// Index of the next subframe [`Network::step`] will simulate.
    pub fn subframe(&self) -> u64 {
        self.subframe
    }

    /// Simulates one subframe and returns its transmissions.
    pub fn step(&mut self) -> Result<Vec<TxRecord>> {
        let t = self.subframe;
        self.subframe += 1;
        let txs: Vec<usize> = (0..self.vehicles.len())
            .filter(|&i| self.vehicles[i].has_traffic && self.vehicles[i].grant.active_at(t))
            .collect();
        let allocs: Vec<Allocation> = txs
            .iter()
            .map(|&i| self.vehicles[i].grant.allocation())
            .collect();
        let collided: Vec<bool> = (0..txs.len())
            .map(|a| (0..txs.len()).any(|b| b != a && allocs[a].overlaps(&allocs[b])))
            .collect();
        let is_tx: Vec<bool> = {
            let mut v = vec![false; self.vehicles.len()];
            txs.iter().for_each(|&i| v[i] = true);
            v
        };
        let n_receivers = self.vehicles.len() as u32 - 1;

        let success = match self.cfg.mode {
            PhyMode::Abstract => {
                let ok = self.cfg.link_snr_db()
                    >= self.thresholds.get(self.cfg.mcs).unwrap_or(f64::INFINITY);
                // Half-duplex: a transmitting vehicle hears nobody.
                let listeners = is_tx.iter().filter(|&&b| !b).count() as u32;
                collided
                    .iter()
                    .map(|&c| if c || !ok { 0 } else { listeners })
                    .collect::<Vec<u32>>()
            }
            PhyMode::FullPhy => self.full_phy_receptions(t, &txs, &is_tx)?,
        };

        self.sense(t, &txs, &allocs, &is_tx)?;

        let mut records = Vec::with_capacity(txs.len());
        for (k, &i) in txs.iter().enumerate() {
            let v = &mut self.vehicles[i];
            v.grant.reselection_counter -= 1;
            let reselected = v.grant.reselection_counter == 0;
            if reselected {
                let sel = select_resource(
                    policy_for(self.cfg.policy, v.preconfigured),
                    &v.history,
                    &self.cfg.pool,
                    self.cfg.width,
                    &mut self.rng,
                )?;
                v.grant = sel.grant;
                v.fallbacks += u32::from(sel.fallback);
            }
            records.push(TxRecord {
                subframe: t,
                vehicle: v.id,
                start_subchannel: allocs[k].start_subchannel,
                n_subchannels: allocs[k].n_subchannels,
                collided: collided[k],
                n_receivers,
                n_success: success[k],
                reselected,
            });
        }
        Ok(records)
    }

    /// Runs `n_subframes` steps and concatenates the records.
    pub fn run(&mut self, n_subframes: u64) -> Result<Vec<TxRecord>> {
        let mut log = Vec::new();
        for _ in 0..n_subframes {
            log.extend(self.step()?);
        }
        Ok(log)
    }

    // Energy and SCI sensing for every vehicle that listened in subframe t.
    fn sense(
        &mut self,
        t: u64,
        txs: &[usize],
        allocs: &[Allocation],
        is_tx: &[bool],
    ) -> Result<()> {
        let rx_mw = dbm_to_mw(self.cfg.rx_power_dbm);
        let noise_mw = dbm_to_mw(self.cfg.noise_dbm);
        let n_sc = self.cfg.pool.n_subchannels;
        let mut energy = vec![noise_mw; n_sc];
        for a in allocs {
            for e in &mut energy[a.start_subchannel..a.end()] {
                *e += rx_mw;
            }
        }
        let sci_ok = self.cfg.link_snr_db() >= self.cfg.sci_threshold_db;
        let mut reservations = Vec::new();
        for (k, &i) in txs.iter().enumerate() {
            // The control channel sits in the first sub-channel, so only a
            // shared start sub-channel destroys the SCI.
            let clash = allocs
                .iter()
                .enumerate()
                .any(|(j, b)| j != k && b.start_subchannel == allocs[k].start_subchannel);
            if !sci_ok || clash {
                continue;
            }
            let g = &self.vehicles[i].grant;
            // A grant on its last transmission announces no reservation.
            let period_ms = if g.reselection_counter > 1 {
                g.period_ms
            } else {
                0
            };
            let a = allocs[k];
            let mean_mw =
                energy[a.start_subchannel..a.end()].iter().sum::<f64>() / a.n_subchannels as f64;
            reservations.push(Reservation {
                start_subchannel: a.start_subchannel,
                n_subchannels: a.n_subchannels,
                period_ms,
                energy_dbm: 10.0 * mean_mw.log10(),
            });
        }
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            if is_tx[i] {
                v.history.record(t, None, Vec::new())?;
            } else {
                v.history
                    .record(t, Some(energy.clone()), reservations.clone())?;
            }
        }
        Ok(())
    }

    fn full_phy_receptions(&mut self, t: u64, txs: &[usize], is_tx: &[bool]) -> Result<Vec<u32>> {
        let phy = self
            .phy
            .as_ref()
            .expect("full-PHY state present in full-PHY mode");
        let sf_len = phy.ofdm.subframe_len(&phy.grid);
        let subframe_idx = t as u32;
        let mut sent = Vec::with_capacity(txs.len());
        for &i in txs {
            let v = &self.vehicles[i];
            let alloc = v.grant.allocation();
            let tbs = transport_block_bits(&phy.grid, &alloc, self.cfg.mcs)?;
            let payload: Vec<u8> = (0..tbs).map(|_| self.rng.gen_range(0..2u8)).collect();
            let rri = Sci::rri_code_for(v.grant.period_ms).unwrap_or(0);
            let sci = Sci::new(self.cfg.mcs, alloc.n_subchannels as u8, rri, 0)?;
            let ids = LinkIds::new(v.id, subframe_idx);
            let x = build_tx_subframe(
                &payload,
                &sci,
                &alloc,
                ids,
                &phy.grid,
                &phy.engine,
                self.cfg.rx_power_dbm,
            )?;
            sent.push((x, payload, sci, ids, alloc));
        }
        let mut success = vec![0u32; txs.len()];
        if txs.is_empty() {
            return Ok(success);
        }
        let noise_var = dbm_to_mw(self.cfg.noise_dbm);
        let rx_opts = RxOptions::default();
        for r in 0..self.vehicles.len() {
            if is_tx[r] {
                continue;
            }
            let mut y = vec![Complex64::new(0.0, 0.0); sf_len];
            for (k, &i) in txs.iter().enumerate() {
                let mut ch = self.cfg.channel.clone();
                ch.seed = derive_stream(self.cfg.seed, &[i as u64, r as u64]);
                let mut fading = FadingChannel::new(&ch, phy.ofdm.sample_rate());
                fading.set_time(t * sf_len as u64);
                for (acc, s) in y.iter_mut().zip(fading.filter(&sent[k].0)) {
                    *acc += s;
                }
            }
            if self.cfg.channel.model.has_noise() {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_stream(
                    self.cfg.seed,
                    &[u64::MAX, t, r as u64],
                ));
                add_awgn(&mut y, 0.0, noise_var, &mut noise_rng);
            }
            let grid = phy.engine.demodulate(&y, &phy.grid)?;
            for (k, (_, payload, sci, ids, alloc)) in sent.iter().enumerate() {
                let rx = receive_grid(grid.clone(), &phy.grid, &phy.ofdm, *ids, &rx_opts)?;
                let hit = rx
                    .detected_scis
                    .iter()
                    .position(|(s, d)| *s == alloc.start_subchannel && d == sci)
                    .is_some_and(|j| rx.blocks[j].crc_pass && rx.blocks[j].payload == *payload);
                success[k] += u32::from(hit);
            }
        }
        Ok(success)
    }
}

fn policy_for(kind: PolicyKind, preconfigured: (usize, usize)) -> Policy {
    match kind {
        PolicyKind::Random => Policy::Random,
        PolicyKind::Sensing => Policy::Sensing,
        PolicyKind::Preconfigured => Policy::Preconfigured {
            subframe_offset: preconfigured.0,
            start_subchannel: preconfigured.1,
        },
    }
}

/// Convenience: a link scenario matching a network's grant width on an
/// AWGN channel, for threshold calibration.
pub fn calibration_scenario(cfg: &NetworkConfig) -> LinkScenario {
    let grid = GridConfig {
        n_subchannels: cfg.pool.n_subchannels,
        ..GridConfig::default()
    };
    LinkScenario {
        grid,
        channel: ChannelConfig::with_model(ChannelModel::Awgn),
        impairments: crate::channel::ImpairmentConfig::none(),
        calibration: PowerCalibration {
            gain_offset_db: 0.0,
        },
        allocation: Allocation::new(0, cfg.width),
        ..LinkScenario::default()
    }
}
