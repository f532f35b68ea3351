//! Transmit chain: SCI packing, PSCCH/PSSCH encoding, grid mapping and OFDM
//! modulation.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::coding::{
    conv_encode, crc_attach, derive_seed, interleave, mcs_lookup, modulate, rate_match, scramble,
    tbs_for, CrcKind, Modulation, SeedTag, MAX_MCS,
};
use crate::error::{Error, Result};
use crate::grid::{
    dmrs_for_allocation, map_subframe, pscch_re_count, pssch_re_count, Allocation, GridConfig,
    SubframeGrid,
};

pub const SCI_BITS: usize = 32;

/// Reservation intervals in ms indexed by `rri_code` (0 = no reservation).
pub const RRI_MS: [u32; 6] = [0, 1, 10, 20, 50, 100];

/// Sidelink control information carried on the PSCCH.
///
/// Packed MSB first as mcs (5) | n_subchannels (4) | rri_code (4) |
/// priority (3) | 16 reserved zero bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sci {
    pub mcs: u8,
    pub n_subchannels: u8,
    pub rri_code: u8,
    pub priority: u8,
}

impl Sci {
    pub fn new(mcs: u8, n_subchannels: u8, rri_code: u8, priority: u8) -> Result<Self> {
        let sci = Self {
            mcs,
            n_subchannels,
            rri_code,
            priority,
        };
        sci.validate()?;
        Ok(sci)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mcs > MAX_MCS {
            return Err(Error::Range(format!("SCI mcs {}", self.mcs)));
        }
        if self.n_subchannels == 0 || self.n_subchannels > 15 {
            return Err(Error::Range(format!(
                "SCI n_subchannels {}",
                self.n_subchannels
            )));
        }
        if usize::from(self.rri_code) >= RRI_MS.len() {
            return Err(Error::Range(format!("SCI rri_code {}", self.rri_code)));
        }
        if self.priority > 7 {
            return Err(Error::Range(format!("SCI priority {}", self.priority)));
        }
        Ok(())
    }

    pub fn rri_ms(&self) -> u32 {
        RRI_MS[usize::from(self.rri_code)]
    }

    /// Smallest code for a reservation period in ms.
    pub fn rri_code_for(period_ms: u32) -> Option<u8> {
        RRI_MS.iter().position(|&p| p == period_ms).map(|i| i as u8)
    }

    pub fn to_bits(&self) -> [u8; SCI_BITS] {
        let word = u32::from(self.mcs) << 27
            | u32::from(self.n_subchannels) << 23
            | u32::from(self.rri_code) << 19
            | u32::from(self.priority) << 16;
        let mut bits = [0u8; SCI_BITS];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = ((word >> (31 - i)) & 1) as u8;
        }
        bits
    }

    /// Unpacks and validates; reserved bits must be zero.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.len() != SCI_BITS {
            return Err(Error::Contract(format!(
                "SCI needs {SCI_BITS} bits, got {}",
                bits.len()
            )));
        }
        let word = bits
            .iter()
            .fold(0u32, |acc, &b| (acc << 1) | u32::from(b & 1));
        if word & 0xFFFF != 0 {
            return Err(Error::Range("SCI reserved bits set".into()));
        }
        let sci = Self {
            mcs: (word >> 27) as u8,
            n_subchannels: ((word >> 23) & 0xF) as u8,
            rri_code: ((word >> 19) & 0xF) as u8,
            priority: ((word >> 16) & 0x7) as u8,
        };
        sci.validate()?;
        Ok(sci)
    }
}

/// OFDM numerology. Subcarrier spacing is fixed at 15 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub fft_size: usize,
    pub cp_len: usize,
}

pub const SUBCARRIER_SPACING_HZ: f64 = 15_000.0;

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            fft_size: 512,
            cp_len: 64,
        }
    }
}

impl OfdmConfig {
    pub fn sample_rate(&self) -> f64 {
        self.fft_size as f64 * SUBCARRIER_SPACING_HZ
    }

    pub fn symbol_len(&self) -> usize {
        self.fft_size + self.cp_len
    }

    pub fn subframe_len(&self, grid: &GridConfig) -> usize {
        grid.n_symbols * self.symbol_len()
    }

    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if self.fft_size < grid.n_subcarriers() {
            return Err(Error::config(
                "ofdm.fft_size",
                format!(
                    "{} < {} active subcarriers",
                    self.fft_size,
                    grid.n_subcarriers()
                ),
            ));
        }
        if self.cp_len >= self.fft_size {
            return Err(Error::config("ofdm.cp_len", "must be shorter than the FFT"));
        }
        Ok(())
    }

    /// FFT bin of grid column `sc`; the active band is centred on DC.
    #[inline]
    pub fn bin_of(&self, sc: usize, n_subcarriers: usize) -> usize {
        (sc + self.fft_size - n_subcarriers / 2) % self.fft_size
    }

    /// Signed frequency index of grid column `sc`.
    pub fn signed_bin(&self, sc: usize, n_subcarriers: usize) -> i64 {
        sc as i64 - (n_subcarriers / 2) as i64
    }
}

/// Which vehicle transmits in which subframe; seeds every pseudo-random
/// sequence of the transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkIds {
    pub vehicle_id: u32,
    pub subframe_idx: u32,
}

impl LinkIds {
    pub fn new(vehicle_id: u32, subframe_idx: u32) -> Self {
        Self {
            vehicle_id,
            subframe_idx,
        }
    }

    pub(crate) fn seed(&self, tag: SeedTag) -> u32 {
        derive_seed(tag, self.vehicle_id, self.subframe_idx)
    }
}

/// SCI + CRC-16, convolutional code, rate matching to the PSCCH region,
/// scrambling and QPSK.
pub fn encode_pscch(sci: &Sci, ids: LinkIds, cfg: &GridConfig) -> Result<Vec<Complex64>> {
    sci.validate()?;
    let block = crc_attach(&sci.to_bits(), CrcKind::Control16);
    let coded = conv_encode(&block);
    let matched = rate_match(&coded, 2 * pscch_re_count(cfg));
    let scrambled = scramble(&matched, ids.seed(SeedTag::Pscch))?;
    modulate(&scrambled, Modulation::Qpsk)
}

/// Transport block size for an MCS over an allocation.
pub fn transport_block_bits(cfg: &GridConfig, alloc: &Allocation, mcs: u8) -> Result<usize> {
    tbs_for(&mcs_lookup(mcs)?, pssch_re_count(cfg, alloc)?)
}

/// Payload + CRC-24, convolutional code, rate matching to the PSSCH region,
/// scrambling, modulation and symbol interleaving.
pub fn encode_pssch(
    payload: &[u8],
    mcs: u8,
    alloc: &Allocation,
    ids: LinkIds,
    cfg: &GridConfig,
) -> Result<Vec<Complex64>> {
    let entry = mcs_lookup(mcs)?;
    let n_re = pssch_re_count(cfg, alloc)?;
    let tbs = tbs_for(&entry, n_re)?;
    if payload.len() != tbs {
        return Err(Error::Contract(format!(
            "payload has {} bits, MCS {mcs} over {n_re} REs needs {tbs}",
            payload.len()
        )));
    }
    let block = crc_attach(payload, CrcKind::Data24);
    let coded = conv_encode(&block);
    let matched = rate_match(&coded, n_re * entry.modulation.bits_per_symbol());
    let scrambled = scramble(&matched, ids.seed(SeedTag::Pssch))?;
    Ok(interleave(&modulate(&scrambled, entry.modulation)?))
}

/// Builds the frequency-domain grid of one transmission.
pub fn build_tx_grid(
    payload: &[u8],
    sci: &Sci,
    alloc: &Allocation,
    ids: LinkIds,
    cfg: &GridConfig,
) -> Result<SubframeGrid> {
    if usize::from(sci.n_subchannels) != alloc.n_subchannels {
        return Err(Error::Contract(format!(
            "SCI claims {} sub-channels, allocation has {}",
            sci.n_subchannels, alloc.n_subchannels
        )));
    }
    let pscch = encode_pscch(sci, ids, cfg)?;
    let pssch = encode_pssch(payload, sci.mcs, alloc, ids, cfg)?;
    let dmrs = dmrs_for_allocation(cfg, alloc, ids.vehicle_id, ids.subframe_idx);
    map_subframe(cfg, alloc, &pscch, &pssch, &dmrs)
}

/// Reusable FFT plans for one numerology.
#[derive(Clone)]
pub struct OfdmEngine {
    cfg: OfdmConfig,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for OfdmEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OfdmEngine")
            .field("cfg", &self.cfg)
            .finish()
    }
}

impl OfdmEngine {
    pub fn new(cfg: OfdmConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            cfg,
            inverse: planner.plan_fft_inverse(cfg.fft_size),
            forward: planner.plan_fft_forward(cfg.fft_size),
            scale: 1.0 / (cfg.fft_size as f64).sqrt(),
        }
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Unitary inverse FFT per symbol with cyclic prefix.
    pub fn modulate(&self, grid: &SubframeGrid) -> Vec<Complex64> {
        let n = self.cfg.fft_size;
        let cp = self.cfg.cp_len;
        let width = grid.n_subcarriers();
        let mut out = Vec::with_capacity(grid.n_symbols() * (n + cp));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for sym in 0..grid.n_symbols() {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (sc, &v) in grid.row(sym).iter().enumerate() {
                buf[self.cfg.bin_of(sc, width)] = v;
            }
            self.inverse.process(&mut buf);
            out.extend(buf[n - cp..].iter().map(|v| v * self.scale));
            out.extend(buf.iter().map(|v| v * self.scale));
        }
        out
    }

    /// CP removal and unitary forward FFT per symbol.
    pub fn demodulate(&self, samples: &[Complex64], grid_cfg: &GridConfig) -> Result<SubframeGrid> {
        let n = self.cfg.fft_size;
        let sym_len = self.cfg.symbol_len();
        let want = grid_cfg.n_symbols * sym_len;
        if samples.len() != want {
            return Err(Error::Contract(format!(
                "{} samples, subframe needs {want}",
                samples.len()
            )));
        }
        let width = grid_cfg.n_subcarriers();
        let mut grid = SubframeGrid::for_config(grid_cfg);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for sym in 0..grid_cfg.n_symbols {
            let start = sym * sym_len + self.cfg.cp_len;
            buf.copy_from_slice(&samples[start..start + n]);
            self.forward.process(&mut buf);
            for (sc, cell) in grid.row_mut(sym).iter_mut().enumerate() {
                *cell = buf[self.cfg.bin_of(sc, width)] * self.scale;
            }
        }
        Ok(grid)
    }
}

/// Mean power in mW for a level in dBm.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Scales samples so their mean power equals `tx_power_dbm` (in mW). An
/// all-zero input stays zero.
pub fn scale_to_power(samples: &mut [Complex64], tx_power_dbm: f64) {
    let mean = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len().max(1) as f64;
    if mean > 0.0 {
        let g = (dbm_to_mw(tx_power_dbm) / mean).sqrt();
        samples.iter_mut().for_each(|s| *s *= g);
    }
}

/// Complete transmit subframe in the time domain at `tx_power_dbm`.
#[allow(clippy::too_many_arguments)]
pub fn build_tx_subframe(
    payload: &[u8],
    sci: &Sci,
    alloc: &Allocation,
    ids: LinkIds,
    cfg: &GridConfig,
    ofdm: &OfdmEngine,
    tx_power_dbm: f64,
) -> Result<Vec<Complex64>> {
    ofdm.config().validate(cfg)?;
    let grid = build_tx_grid(payload, sci, alloc, ids, cfg)?;
    let mut samples = ofdm.modulate(&grid);
    scale_to_power(&mut samples, tx_power_dbm);
    Ok(samples)
}
