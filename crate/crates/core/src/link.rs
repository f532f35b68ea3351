//! One transmitter/receiver pair: transmit chain, fading channel,
//! impairments, noise and the buffered receiver, driven block by block.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{add_awgn, ChannelConfig, FadingChannel, ImpairmentConfig, PowerCalibration};
use crate::coding::{modulate, Modulation};
use crate::error::{Error, Result};
use crate::grid::{data_positions, Allocation, GridConfig, SubframeGrid};
use crate::phy_rx::{receive_grid, RxOptions};
use crate::phy_tx::{
    build_tx_subframe, dbm_to_mw, transport_block_bits, LinkIds, OfdmConfig, OfdmEngine, Sci,
};

/// Derives an independent 64-bit stream seed from a master seed and a path
/// of indices (splitmix64 over each component).
pub fn derive_stream(master: u64, path: &[u64]) -> u64 {
    let mut z = master;
    for &p in path {
        z = mix(z ^ mix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    z
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkScenario {
    pub grid: GridConfig,
    pub ofdm: OfdmConfig,
    pub channel: ChannelConfig,
    pub impairments: ImpairmentConfig,
    pub calibration: PowerCalibration,
    pub allocation: Allocation,
    pub rx: RxOptions,
    pub vehicle_id: u32,
    /// Subframes between consecutive blocks of a trial (1 = every
    /// subframe).
    pub block_interval: u32,
}

impl Default for LinkScenario {
    fn default() -> Self {
        let grid = GridConfig::default();
        let allocation = grid.full_band();
        Self {
            grid,
            ofdm: OfdmConfig::default(),
            channel: ChannelConfig::default(),
            impairments: ImpairmentConfig::indoor_v2v(),
            calibration: PowerCalibration::default(),
            allocation,
            rx: RxOptions::default(),
            vehicle_id: 1,
            block_interval: 1,
        }
    }
}

impl LinkScenario {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.ofdm.validate(&self.grid)?;
        self.channel.validate(self.ofdm.cp_len)?;
        self.impairments.validate(self.ofdm.cp_len)?;
        self.allocation.validate(&self.grid)?;
        if self.block_interval == 0 {
            return Err(Error::config("link.block_interval", "must be >= 1"));
        }
        Ok(())
    }

    /// Blocks per second at one block every `block_interval` subframes.
    pub fn blocks_per_second(&self) -> f64 {
        1000.0 / f64::from(self.block_interval)
    }

    /// Mean per-resource-element SNR for a given sample-domain SNR: the
    /// transmit power is spread over the allocated subcarriers of every
    /// symbol except the empty guard symbol.
    pub fn re_snr_db(&self, sample_snr_db: f64) -> f64 {
        let (lo, hi) = self.grid.subcarrier_span(&self.allocation);
        let n = self.grid.n_symbols as f64;
        let ratio = self.ofdm.fft_size as f64 * n / ((n - 1.0) * (hi - lo) as f64);
        sample_snr_db + 10.0 * ratio.log10()
    }
}

/// What happened to one transmitted block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockOutcome {
    pub subframe_idx: u32,
    pub sci_detected: bool,
    pub crc_pass: bool,
    /// SCI found at the transmit allocation, CRC passed and payload exact.
    pub success: bool,
    pub tb_bits: usize,
}

/// Runs the transmit/receive chain for a fixed scenario.
#[derive(Debug, Clone)]
pub struct LinkSimulator {
    scenario: LinkScenario,
    engine: OfdmEngine,
}

impl LinkSimulator {
    pub fn new(scenario: LinkScenario) -> Result<Self> {
        scenario.validate()?;
        let engine = OfdmEngine::new(scenario.ofdm);
        Ok(Self { scenario, engine })
    }

    pub fn scenario(&self) -> &LinkScenario {
        &self.scenario
    }

    pub fn engine(&self) -> &OfdmEngine {
        &self.engine
    }

    /// Transport block size at `mcs` on the scenario allocation.
    pub fn tb_bits(&self, mcs: u8) -> Result<usize> {
        transport_block_bits(&self.scenario.grid, &self.scenario.allocation, mcs)
    }

    /// Noiseless faded and impaired transmission at 0 dBm, plus what was
    /// sent. Noise is added separately so one realisation can serve several
    /// powers.
    fn transmit(
        &self,
        fading: &mut FadingChannel,
        payload_rng: &mut ChaCha8Rng,
        subframe_idx: u32,
        mcs: u8,
    ) -> Result<(Vec<Complex64>, Vec<u8>, Sci)> {
        let sc = &self.scenario;
        let tbs = self.tb_bits(mcs)?;
        let payload: Vec<u8> = (0..tbs).map(|_| payload_rng.gen_range(0..2u8)).collect();
        let sci = Sci::new(mcs, sc.allocation.n_subchannels as u8, 0, 0)?;
        let ids = LinkIds::new(sc.vehicle_id, subframe_idx);
        let x = build_tx_subframe(
            &payload,
            &sci,
            &sc.allocation,
            ids,
            &sc.grid,
            &self.engine,
            0.0,
        )?;
        let mut y = fading.filter(&x);
        sc.impairments.apply(&mut y, sc.ofdm.sample_rate());
        Ok((y, payload, sci))
    }

    fn receive(
        &self,
        grid: SubframeGrid,
        subframe_idx: u32,
        payload: &[u8],
        sci: &Sci,
    ) -> Result<BlockOutcome> {
        let sc = &self.scenario;
        let ids = LinkIds::new(sc.vehicle_id, subframe_idx);
        let rx = receive_grid(grid, &sc.grid, &sc.ofdm, ids, &sc.rx)?;
        let start = sc.allocation.start_subchannel;
        let idx = rx
            .detected_scis
            .iter()
            .position(|(s, d)| *s == start && d == sci);
        let (crc_pass, success) = match idx {
            Some(i) => {
                let b = &rx.blocks[i];
                (b.crc_pass, b.crc_pass && b.payload == payload)
            }
            None => (false, false),
        };
        Ok(BlockOutcome {
            subframe_idx,
            sci_detected: idx.is_some(),
            crc_pass,
            success,
            tb_bits: payload.len(),
        })
    }

    /// Runs `n_blocks` consecutive blocks of one trial at every power in
    /// `powers_dbm`, reusing the same fading, payload and noise draws across
    /// powers (common random numbers). Returns outcomes indexed
    /// `[power][block]`.
    ///
    /// The channel clock starts at `first_block * block_interval`
    /// subframes, so consecutive windows of one trial see a continuous
    /// fading process.
    pub fn run_blocks(
        &self,
        trial_seed: u64,
        mcs: u8,
        powers_dbm: &[f64],
        first_block: u64,
        n_blocks: usize,
    ) -> Result<Vec<Vec<BlockOutcome>>> {
        let sc = &self.scenario;
        let mut chan_cfg = sc.channel.clone();
        chan_cfg.seed = derive_stream(trial_seed, &[1]);
        let mut fading = FadingChannel::new(&chan_cfg, sc.ofdm.sample_rate());
        let sf_len = sc.ofdm.subframe_len(&sc.grid) as u64;
        let interval = u64::from(sc.block_interval);
        let noisy = sc.channel.model.has_noise();

        let mut out = vec![Vec::with_capacity(n_blocks); powers_dbm.len()];
        for b in 0..n_blocks as u64 {
            let block = first_block + b;
            let subframe = block * interval;
            fading.set_time(subframe * sf_len);
            // Per-block streams keep draws aligned across MCS values too.
            let mut payload_rng =
                ChaCha8Rng::seed_from_u64(derive_stream(trial_seed, &[2, block, u64::from(mcs)]));
            let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_stream(trial_seed, &[3, block]));
            let subframe_idx = subframe as u32;
            let (y0, payload, sci) =
                self.transmit(&mut fading, &mut payload_rng, subframe_idx, mcs)?;
            // The receiver front end is linear, so signal and unit-variance
            // noise are demodulated once and combined per power. White noise
            // through a unitary FFT stays white with the same variance, so
            // it is drawn directly on the grid cells.
            let signal = self.engine.demodulate(&y0, &sc.grid)?;
            let noise = if noisy {
                let mut n = SubframeGrid::for_config(&sc.grid);
                add_awgn(n.cells_mut(), 0.0, 1.0, &mut noise_rng);
                Some(n)
            } else {
                None
            };
            for (pi, &p) in powers_dbm.iter().enumerate() {
                let amp = dbm_to_mw(p).sqrt();
                let mut grid = signal.clone();
                match &noise {
                    Some(n) => {
                        let sigma =
                            (dbm_to_mw(p) / 10f64.powf(sc.calibration.snr_db(p) / 10.0)).sqrt();
                        for (g, v) in grid.cells_mut().iter_mut().zip(n.cells()) {
                            *g = *g * amp + v * sigma;
                        }
                    }
                    None => grid.cells_mut().iter_mut().for_each(|g| *g *= amp),
                }
                out[pi].push(self.receive(grid, subframe_idx, &payload, &sci)?);
            }
        }
        Ok(out)
    }

    /// Single block at one power; convenience wrapper over
    /// [`LinkSimulator::run_blocks`].
    pub fn run_block(
        &self,
        trial_seed: u64,
        mcs: u8,
        tx_power_dbm: f64,
        block: u64,
    ) -> Result<BlockOutcome> {
        let mut v = self.run_blocks(trial_seed, mcs, &[tx_power_dbm], block, 1)?;
        Ok(v.remove(0).remove(0))
    }
}

/// Uncoded QPSK through the OFDM modem over AWGN at the given Eb/N0: every
/// data cell of the full band carries a random QPSK symbol, decisions are
/// hard. Returns (bit errors, bits).
pub fn uncoded_qpsk_ber(ebn0_db: f64, n_subframes: usize, seed: u64) -> Result<(u64, u64)> {
    let cfg = GridConfig::default();
    let engine = OfdmEngine::new(OfdmConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pscch, pssch) = data_positions(&cfg, &cfg.full_band());
    let positions: Vec<(usize, usize)> = pscch.into_iter().chain(pssch).collect();
    // Unit-energy symbols and a unitary FFT: per-cell noise equals
    // per-sample noise, and Es/N0 = Eb/N0 + 3 dB.
    let esn0_db = ebn0_db + 10.0 * 2f64.log10();
    let (mut errors, mut total) = (0u64, 0u64);
    for _ in 0..n_subframes {
        let bits: Vec<u8> = (0..2 * positions.len())
            .map(|_| rng.gen_range(0..2u8))
            .collect();
        let symbols = modulate(&bits, Modulation::Qpsk)?;
        let mut grid = SubframeGrid::for_config(&cfg);
        for (&(s, k), &v) in positions.iter().zip(&symbols) {
            grid.set(s, k, v);
        }
        let mut y = engine.modulate(&grid);
        add_awgn(&mut y, esn0_db, 1.0, &mut rng);
        let rx = engine.demodulate(&y, &cfg)?;
        for (i, &(s, k)) in positions.iter().enumerate() {
            let v = rx.get(s, k);
            // Gray QPSK: bit 0 on I, bit 1 on Q, 0 maps to positive.
            let hard = [u8::from(v.re < 0.0), u8::from(v.im < 0.0)];
            errors += u64::from(hard[0] != bits[2 * i]) + u64::from(hard[1] != bits[2 * i + 1]);
            total += 2;
        }
    }
    Ok((errors, total))
}
