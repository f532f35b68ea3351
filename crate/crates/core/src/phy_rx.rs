//! Buffered whole-subframe receiver.
//!
//! The full subframe is demodulated first; CFO is estimated from the phase
//! drift between DMRS columns, the channel from least-squares DMRS
//! observations interpolated in time, and only then is every sub-channel
//! searched for control information and the announced data decoded.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coding::conv::coded_len;
use crate::coding::{
    crc_check, deinterleave, descramble_llrs, mcs_lookup, rate_dematch, soft_demod_with_vars,
    tbs_for, viterbi_decode, CrcKind, Modulation, SeedTag,
};
use crate::error::{Error, Result};
use crate::grid::{
    data_positions, dmrs_full_band, dmrs_positions, pssch_re_count, Allocation, GridConfig,
    SubframeGrid,
};
use crate::phy_tx::{LinkIds, OfdmConfig, OfdmEngine, Sci, SCI_BITS};

/// Demodulates one subframe of samples (CP removal + unitary FFT).
pub fn ofdm_demodulate(
    samples: &[Complex64],
    cfg: &GridConfig,
    ofdm: &OfdmEngine,
) -> Result<SubframeGrid> {
    ofdm.demodulate(samples, cfg)
}

// Least-squares DMRS observations, one row per DMRS symbol over the given
// subcarrier span.
fn ls_dmrs(
    grid: &SubframeGrid,
    cfg: &GridConfig,
    lo: usize,
    hi: usize,
    expected: &[Complex64],
) -> Vec<Vec<Complex64>> {
    let width = hi - lo;
    cfg.dmrs_symbols
        .iter()
        .enumerate()
        .map(|(i, &sym)| {
            (lo..hi)
                .map(|sc| {
                    let d = expected[i * width + sc - lo];
                    if d.norm_sqr() > 0.0 {
                        grid.get(sym, sc) / d
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// CFO in Hz from the average phase rotation between successive DMRS
/// columns. `dmrs_expected` is the full-band reference in DMRS mapping
/// order.
pub fn estimate_cfo(
    grid: &SubframeGrid,
    cfg: &GridConfig,
    ofdm: &OfdmConfig,
    dmrs_expected: &[Complex64],
) -> Result<f64> {
    if cfg.dmrs_symbols.len() < 2 {
        return Err(Error::Contract(
            "CFO estimation needs two DMRS columns".into(),
        ));
    }
    let ls = ls_dmrs(grid, cfg, 0, cfg.n_subcarriers(), dmrs_expected);
    let sym_time = ofdm.symbol_len() as f64 / ofdm.sample_rate();
    // Per-pair estimates weighted by correlation magnitude.
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for (i, pair) in ls.windows(2).enumerate() {
        let z: Complex64 = pair[0]
            .iter()
            .zip(&pair[1])
            .map(|(a, b)| a.conj() * b)
            .sum();
        let dt = (cfg.dmrs_symbols[i + 1] - cfg.dmrs_symbols[i]) as f64 * sym_time;
        let w = z.norm();
        weighted += w * z.arg() / (2.0 * PI * dt);
        weight += w;
    }
    Ok(if weight > 0.0 { weighted / weight } else { 0.0 })
}

/// Removes the common phase a CFO of `cfo_hz` puts on each symbol.
pub fn correct_cfo(grid: &mut SubframeGrid, cfo_hz: f64, ofdm: &OfdmConfig) {
    let fs = ofdm.sample_rate();
    for sym in 0..grid.n_symbols() {
        let start = (sym * ofdm.symbol_len() + ofdm.cp_len) as f64;
        let rot = Complex64::from_polar(1.0, -2.0 * PI * cfo_hz * start / fs);
        grid.row_mut(sym).iter_mut().for_each(|v| *v *= rot);
    }
}

/// Per-cell channel gains and the noise variance seen on the DMRS.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub gains: SubframeGrid,
    pub noise_var: f64,
}

/// Least-squares estimates on the DMRS cells of `alloc`, linearly
/// interpolated in time and held constant outside the first and last DMRS
/// columns. The noise variance comes from leave-one-out residuals: each
/// DMRS column is predicted from the others and the residual power is
/// normalised by its known noise gain.
///
/// `dmrs_expected` covers the allocation in DMRS mapping order.
pub fn estimate_channel(
    grid: &SubframeGrid,
    cfg: &GridConfig,
    alloc: &Allocation,
    dmrs_expected: &[Complex64],
) -> ChannelEstimate {
    let (lo, hi) = cfg.subcarrier_span(alloc);
    let ls = ls_dmrs(grid, cfg, lo, hi, dmrs_expected);
    let cols = &cfg.dmrs_symbols;
    let mut gains = SubframeGrid::zeros(grid.n_symbols(), grid.n_subcarriers());

    for sym in 0..grid.n_symbols() {
        let (a, b, w) = interp_weights(cols, sym);
        let row = gains.row_mut(sym);
        for (j, sc) in (lo..hi).enumerate() {
            row[sc] = ls[a][j] * (1.0 - w) + ls[b][j] * w;
        }
    }

    let mut residual = 0.0;
    let mut gain_sum = 0.0;
    if cols.len() >= 2 {
        for i in 0..cols.len() {
            let others: Vec<usize> = (0..cols.len()).filter(|&k| k != i).collect();
            let other_cols: Vec<usize> = others.iter().map(|&k| cols[k]).collect();
            let (a, b, w) = interp_weights(&other_cols, cols[i]);
            let (a, b) = (others[a], others[b]);
            let noise_gain = if a == b {
                2.0
            } else {
                1.0 + (1.0 - w) * (1.0 - w) + w * w
            };
            for j in 0..hi - lo {
                let pred = ls[a][j] * (1.0 - w) + ls[b][j] * w;
                residual += (ls[i][j] - pred).norm_sqr();
                gain_sum += noise_gain;
            }
        }
    }
    ChannelEstimate {
        gains,
        noise_var: if gain_sum > 0.0 {
            residual / gain_sum
        } else {
            0.0
        },
    }
}

// Indices into `cols` bracketing `sym` and the weight of the upper one.
fn interp_weights(cols: &[usize], sym: usize) -> (usize, usize, f64) {
    let last = cols.len() - 1;
    if sym <= cols[0] {
        return (0, 0, 0.0);
    }
    if sym >= cols[last] {
        return (last, last, 0.0);
    }
    let b = cols.iter().position(|&c| c >= sym).unwrap();
    let a = b - 1;
    let w = (sym - cols[a]) as f64 / (cols[b] - cols[a]) as f64;
    (a, b, w)
}

/// Per-cell MMSE: `s = conj(h) y / (|h|^2 + noise_var)`, with error variance
/// `noise_var / (|h|^2 + noise_var)`. A zero noise variance gives the
/// zero-forcing solution `y / h`.
pub fn equalize(
    cells: &[Complex64],
    gains: &[Complex64],
    noise_var: f64,
) -> (Vec<Complex64>, Vec<f64>) {
    cells
        .iter()
        .zip(gains)
        .map(|(&y, &h)| {
            let den = h.norm_sqr() + noise_var;
            if den > 0.0 {
                (h.conj() * y / den, noise_var / den)
            } else {
                (Complex64::new(0.0, 0.0), 1.0)
            }
        })
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Equalizer {
    #[default]
    Mmse,
    /// `y / h` with the DMRS noise variance handed to the demapper for
    /// every cell, i.e. no per-cell reliability.
    ZeroForcing,
}

/// Equalised symbols with the noise variance the demapper should assume
/// for each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizedGrid {
    pub symbols: SubframeGrid,
    pub noise_vars: Vec<f64>,
}

impl EqualizedGrid {
    /// Treats `grid` as already equalised with the given uniform noise.
    pub fn from_grid(grid: SubframeGrid, noise_var: f64) -> Self {
        let n = grid.cells().len();
        Self {
            symbols: grid,
            noise_vars: vec![noise_var; n],
        }
    }

    pub fn equalize(grid: &SubframeGrid, est: &ChannelEstimate, kind: Equalizer) -> Self {
        let (cells, vars) = match kind {
            Equalizer::Mmse => equalize(grid.cells(), est.gains.cells(), est.noise_var),
            Equalizer::ZeroForcing => {
                let (c, _) = equalize(grid.cells(), est.gains.cells(), 0.0);
                let n = c.len();
                (c, vec![est.noise_var; n])
            }
        };
        Self {
            symbols: SubframeGrid::from_cells(grid.n_symbols(), grid.n_subcarriers(), cells)
                .expect("same shape"),
            noise_vars: vars,
        }
    }

    fn gather(&self, pos: &[(usize, usize)]) -> (Vec<Complex64>, Vec<f64>) {
        let width = self.symbols.n_subcarriers();
        pos.iter()
            .map(|&(s, k)| (self.symbols.get(s, k), self.noise_vars[s * width + k]))
            .unzip()
    }
}

/// Attempts to decode control information in the PSCCH region of
/// sub-channel `start`.
pub fn decode_pscch_at(
    eq: &EqualizedGrid,
    cfg: &GridConfig,
    start: usize,
    ids: LinkIds,
) -> Option<Sci> {
    let alloc = Allocation::new(start, 1);
    alloc.validate(cfg).ok()?;
    let (pscch_pos, _) = data_positions(cfg, &alloc);
    if pscch_pos.is_empty() {
        return None;
    }
    let (syms, vars) = eq.gather(&pscch_pos);
    let mut llrs = soft_demod_with_vars(&syms, Modulation::Qpsk, &vars);
    descramble_llrs(&mut llrs, ids.seed(SeedTag::Pscch)).ok()?;
    let soft = rate_dematch(&llrs, coded_len(SCI_BITS + CrcKind::Control16.width()));
    let bits = viterbi_decode(&soft).ok()?;
    if !crc_check(&bits, CrcKind::Control16) {
        return None;
    }
    Sci::from_bits(&bits[..SCI_BITS]).ok()
}

/// Searches every sub-channel for control information. A detection at `s`
/// claims sub-channels `[s, s + n)`; later detections inside a claimed
/// range, and claims running past the band, are dropped.
pub fn blind_decode_pscch(eq: &EqualizedGrid, cfg: &GridConfig, ids: LinkIds) -> Vec<(usize, Sci)> {
    let mut found = Vec::new();
    let mut claimed_until = 0;
    for s in 0..cfg.n_subchannels {
        if s < claimed_until {
            continue;
        }
        if let Some(sci) = decode_pscch_at(eq, cfg, s, ids) {
            let end = s + usize::from(sci.n_subchannels);
            if end <= cfg.n_subchannels {
                claimed_until = end;
                found.push((s, sci));
            }
        }
    }
    found
}

/// Result of decoding one PSSCH transport block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsschDecode {
    pub payload: Vec<u8>,
    pub crc_pass: bool,
}

/// Decodes the data announced by `sci` at sub-channel `start`. Failures of
/// any kind come back as `crc_pass = false`.
pub fn decode_pssch(
    eq: &EqualizedGrid,
    cfg: &GridConfig,
    sci: &Sci,
    start: usize,
    ids: LinkIds,
) -> PsschDecode {
    let fail = PsschDecode {
        payload: Vec::new(),
        crc_pass: false,
    };
    let alloc = Allocation::new(start, usize::from(sci.n_subchannels));
    let Ok(entry) = mcs_lookup(sci.mcs) else {
        return fail;
    };
    let Ok(n_re) = pssch_re_count(cfg, &alloc) else {
        return fail;
    };
    let Ok(tbs) = tbs_for(&entry, n_re) else {
        return fail;
    };
    let (_, pssch_pos) = data_positions(cfg, &alloc);
    let (syms, vars) = eq.gather(&pssch_pos);
    let (syms, vars) = (deinterleave(&syms), deinterleave(&vars));
    let mut llrs = soft_demod_with_vars(&syms, entry.modulation, &vars);
    if descramble_llrs(&mut llrs, ids.seed(SeedTag::Pssch)).is_err() {
        return fail;
    }
    let soft = rate_dematch(&llrs, coded_len(tbs + CrcKind::Data24.width()));
    let Ok(bits) = viterbi_decode(&soft) else {
        return fail;
    };
    let crc_pass = crc_check(&bits, CrcKind::Data24);
    PsschDecode {
        payload: bits[..tbs].to_vec(),
        crc_pass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RxOptions {
    pub cfo_correction: bool,
    pub equalizer: Equalizer,
}

impl Default for RxOptions {
    fn default() -> Self {
        Self {
            cfo_correction: true,
            equalizer: Equalizer::Mmse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedBlock {
    pub start_subchannel: usize,
    pub payload: Vec<u8>,
    pub crc_pass: bool,
    pub mcs: u8,
    pub n_re: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RxResult {
    pub detected_scis: Vec<(usize, Sci)>,
    pub blocks: Vec<DecodedBlock>,
    pub channel_estimate: SubframeGrid,
    pub noise_var_estimate: f64,
    pub cfo_estimate_hz: f64,
}

/// Demodulate, correct CFO, estimate the channel over the whole band,
/// equalise, search for control and decode every announced block.
pub fn receive_subframe(
    samples: &[Complex64],
    cfg: &GridConfig,
    ofdm: &OfdmEngine,
    ids: LinkIds,
    opts: &RxOptions,
) -> Result<RxResult> {
    let grid = ofdm_demodulate(samples, cfg, ofdm)?;
    receive_grid(grid, cfg, ofdm.config(), ids, opts)
}

/// [`receive_subframe`] from an already demodulated grid.
pub fn receive_grid(
    mut grid: SubframeGrid,
    cfg: &GridConfig,
    ofdm: &OfdmConfig,
    ids: LinkIds,
    opts: &RxOptions,
) -> Result<RxResult> {
    let expected = dmrs_full_band(cfg, ids.vehicle_id, ids.subframe_idx);
    debug_assert_eq!(expected.len(), dmrs_positions(cfg, &cfg.full_band()).len());

    let cfo = if cfg.dmrs_symbols.len() >= 2 {
        estimate_cfo(&grid, cfg, ofdm, &expected)?
    } else {
        0.0
    };
    if opts.cfo_correction {
        correct_cfo(&mut grid, cfo, ofdm);
    }
    let est = estimate_channel(&grid, cfg, &cfg.full_band(), &expected);
    let eq = EqualizedGrid::equalize(&grid, &est, opts.equalizer);

    let detected = blind_decode_pscch(&eq, cfg, ids);
    let blocks = detected
        .iter()
        .map(|&(start, sci)| {
            let d = decode_pssch(&eq, cfg, &sci, start, ids);
            let alloc = Allocation::new(start, usize::from(sci.n_subchannels));
            DecodedBlock {
                start_subchannel: start,
                payload: d.payload,
                crc_pass: d.crc_pass,
                mcs: sci.mcs,
                n_re: pssch_re_count(cfg, &alloc).unwrap_or(0),
            }
        })
        .collect();
    Ok(RxResult {
        detected_scis: detected,
        blocks,
        channel_estimate: est.gains,
        noise_var_estimate: est.noise_var,
        cfo_estimate_hz: cfo,
    })
}
