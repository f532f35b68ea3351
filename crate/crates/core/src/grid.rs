//! Sidelink subframe geometry and resource-element mapping.
//!
//! A subframe is `n_symbols` OFDM symbols by `sc_per_subchannel *
//! n_subchannels` subcarriers. One symbol is reserved for AGC settling, one
//! for the guard period, and a set of symbols carries DMRS across the whole
//! allocation. Everything else is data: the control channel (PSCCH) takes
//! the lowest `pscch_width_sc` subcarriers of the first allocated
//! sub-channel on every data symbol and the shared channel (PSSCH) takes the
//! rest. Both are filled frequency-first, then time.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coding::{derive_seed, modulate, Lfsr, Modulation, SeedTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n_symbols: usize,
    pub sc_per_subchannel: usize,
    pub n_subchannels: usize,
    pub dmrs_symbols: Vec<usize>,
    pub agc_symbol: usize,
    pub guard_symbol: usize,
    pub pscch_width_sc: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_symbols: 14,
            sc_per_subchannel: 48,
            n_subchannels: 6,
            dmrs_symbols: vec![2, 5, 8, 11],
            agc_symbol: 0,
            guard_symbol: 13,
            pscch_width_sc: 12,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let in_range = |field: &str, idx: usize| {
            if idx >= self.n_symbols {
                Err(Error::config(
                    field,
                    format!("symbol {idx} outside 0..{}", self.n_symbols),
                ))
            } else {
                Ok(())
            }
        };
        in_range("grid.agc_symbol", self.agc_symbol)?;
        in_range("grid.guard_symbol", self.guard_symbol)?;
        for &d in &self.dmrs_symbols {
            in_range("grid.dmrs_symbols", d)?;
        }
        if self.agc_symbol == self.guard_symbol {
            return Err(Error::config(
                "grid.guard_symbol",
                "coincides with the AGC symbol",
            ));
        }
        let mut sorted = self.dmrs_symbols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.dmrs_symbols.len() || sorted != self.dmrs_symbols {
            return Err(Error::config(
                "grid.dmrs_symbols",
                "must be strictly increasing",
            ));
        }
        if sorted.contains(&self.agc_symbol) || sorted.contains(&self.guard_symbol) {
            return Err(Error::config(
                "grid.dmrs_symbols",
                "overlaps the AGC or guard symbol",
            ));
        }
        if self.sc_per_subchannel == 0 || self.n_subchannels == 0 {
            return Err(Error::config("grid.n_subchannels", "must be at least 1"));
        }
        if self.pscch_width_sc > self.sc_per_subchannel {
            return Err(Error::config(
                "grid.pscch_width_sc",
                "wider than a sub-channel",
            ));
        }
        if self.agc_symbol + 1 >= self.n_symbols {
            return Err(Error::config(
                "grid.agc_symbol",
                "no symbol follows the AGC symbol",
            ));
        }
        Ok(())
    }

    /// Total subcarriers across all sub-channels.
    pub fn n_subcarriers(&self) -> usize {
        self.sc_per_subchannel * self.n_subchannels
    }

    /// Symbols carrying PSCCH/PSSCH, ascending.
    pub fn data_symbols(&self) -> Vec<usize> {
        (0..self.n_symbols)
            .filter(|s| {
                *s != self.agc_symbol && *s != self.guard_symbol && !self.dmrs_symbols.contains(s)
            })
            .collect()
    }

    pub fn n_data_symbols(&self) -> usize {
        self.n_symbols - 2 - self.dmrs_symbols.len()
    }

    /// Subcarrier range `[lo, hi)` of an allocation.
    pub fn subcarrier_span(&self, alloc: &Allocation) -> (usize, usize) {
        let lo = alloc.start_subchannel * self.sc_per_subchannel;
        (lo, lo + alloc.n_subchannels * self.sc_per_subchannel)
    }

    /// The allocation covering every sub-channel.
    pub fn full_band(&self) -> Allocation {
        Allocation {
            start_subchannel: 0,
            n_subchannels: self.n_subchannels,
        }
    }
}

/// A run of consecutive sub-channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub start_subchannel: usize,
    pub n_subchannels: usize,
}

impl Allocation {
    pub fn new(start_subchannel: usize, n_subchannels: usize) -> Self {
        Self {
            start_subchannel,
            n_subchannels,
        }
    }

    pub fn end(&self) -> usize {
        self.start_subchannel + self.n_subchannels
    }

    pub fn validate(&self, cfg: &GridConfig) -> Result<()> {
        if self.n_subchannels == 0 || self.end() > cfg.n_subchannels {
            return Err(Error::Range(format!(
                "allocation {}+{} outside {} sub-channels",
                self.start_subchannel, self.n_subchannels, cfg.n_subchannels
            )));
        }
        Ok(())
    }

    pub fn overlaps(&self, other: &Allocation) -> bool {
        self.start_subchannel < other.end() && other.start_subchannel < self.end()
    }
}

/// Complex cells of one subframe, stored symbol-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SubframeGrid {
    n_symbols: usize,
    n_subcarriers: usize,
    cells: Vec<Complex64>,
}

impl SubframeGrid {
    pub fn zeros(n_symbols: usize, n_subcarriers: usize) -> Self {
        Self {
            n_symbols,
            n_subcarriers,
            cells: vec![Complex64::new(0.0, 0.0); n_symbols * n_subcarriers],
        }
    }

    pub fn for_config(cfg: &GridConfig) -> Self {
        Self::zeros(cfg.n_symbols, cfg.n_subcarriers())
    }

    pub fn from_cells(
        n_symbols: usize,
        n_subcarriers: usize,
        cells: Vec<Complex64>,
    ) -> Result<Self> {
        if cells.len() != n_symbols * n_subcarriers {
            return Err(Error::Contract(format!(
                "{} cells for a {n_symbols}x{n_subcarriers} grid",
                cells.len()
            )));
        }
        Ok(Self {
            n_symbols,
            n_subcarriers,
            cells,
        })
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    #[inline]
    pub fn get(&self, symbol: usize, subcarrier: usize) -> Complex64 {
        self.cells[symbol * self.n_subcarriers + subcarrier]
    }

    #[inline]
    pub fn set(&mut self, symbol: usize, subcarrier: usize, value: Complex64) {
        self.cells[symbol * self.n_subcarriers + subcarrier] = value;
    }

    pub fn row(&self, symbol: usize) -> &[Complex64] {
        &self.cells[symbol * self.n_subcarriers..(symbol + 1) * self.n_subcarriers]
    }

    pub fn row_mut(&mut self, symbol: usize) -> &mut [Complex64] {
        &mut self.cells[symbol * self.n_subcarriers..(symbol + 1) * self.n_subcarriers]
    }

    pub fn cells(&self) -> &[Complex64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Complex64] {
        &mut self.cells
    }

    pub fn energy(&self) -> f64 {
        self.cells.iter().map(|c| c.norm_sqr()).sum()
    }

    fn check_dims(&self, cfg: &GridConfig) -> Result<()> {
        if self.n_symbols != cfg.n_symbols || self.n_subcarriers != cfg.n_subcarriers() {
            return Err(Error::Contract(format!(
                "grid is {}x{}, config expects {}x{}",
                self.n_symbols,
                self.n_subcarriers,
                cfg.n_symbols,
                cfg.n_subcarriers()
            )));
        }
        Ok(())
    }
}

/// Number of PSSCH resource elements in an allocation.
pub fn pssch_re_count(cfg: &GridConfig, alloc: &Allocation) -> Result<usize> {
    alloc.validate(cfg)?;
    let width = alloc.n_subchannels * cfg.sc_per_subchannel;
    Ok(cfg.n_data_symbols() * (width - cfg.pscch_width_sc))
}

/// Number of PSCCH resource elements (independent of allocation width).
pub fn pscch_re_count(cfg: &GridConfig) -> usize {
    cfg.n_data_symbols() * cfg.pscch_width_sc
}

/// Cell coordinates of the PSCCH and PSSCH regions in mapping order.
pub fn data_positions(
    cfg: &GridConfig,
    alloc: &Allocation,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let (lo, hi) = cfg.subcarrier_span(alloc);
    let data = cfg.data_symbols();
    let mut pscch = Vec::with_capacity(data.len() * cfg.pscch_width_sc);
    let mut pssch = Vec::with_capacity(data.len() * (hi - lo - cfg.pscch_width_sc));
    for &sym in &data {
        pscch.extend((lo..lo + cfg.pscch_width_sc).map(|sc| (sym, sc)));
        pssch.extend((lo + cfg.pscch_width_sc..hi).map(|sc| (sym, sc)));
    }
    (pscch, pssch)
}

/// Cell coordinates of the DMRS in an allocation, in mapping order.
pub fn dmrs_positions(cfg: &GridConfig, alloc: &Allocation) -> Vec<(usize, usize)> {
    let (lo, hi) = cfg.subcarrier_span(alloc);
    cfg.dmrs_symbols
        .iter()
        .flat_map(|&sym| (lo..hi).map(move |sc| (sym, sc)))
        .collect()
}

fn expect_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Contract(format!(
            "{what}: {got} symbols, expected {want}"
        )));
    }
    Ok(())
}

/// Places control, data and DMRS symbols into a fresh grid. The AGC symbol
/// repeats the following symbol over the allocation; the guard symbol and
/// all unallocated cells stay zero.
pub fn map_subframe(
    cfg: &GridConfig,
    alloc: &Allocation,
    pscch_syms: &[Complex64],
    pssch_syms: &[Complex64],
    dmrs_seq: &[Complex64],
) -> Result<SubframeGrid> {
    cfg.validate()?;
    alloc.validate(cfg)?;
    let (pscch_pos, pssch_pos) = data_positions(cfg, alloc);
    let dmrs_pos = dmrs_positions(cfg, alloc);
    expect_len("PSCCH", pscch_syms.len(), pscch_pos.len())?;
    expect_len("PSSCH", pssch_syms.len(), pssch_pos.len())?;
    expect_len("DMRS", dmrs_seq.len(), dmrs_pos.len())?;

    let mut grid = SubframeGrid::for_config(cfg);
    for (&(sym, sc), &v) in pscch_pos.iter().zip(pscch_syms) {
        grid.set(sym, sc, v);
    }
    for (&(sym, sc), &v) in pssch_pos.iter().zip(pssch_syms) {
        grid.set(sym, sc, v);
    }
    for (&(sym, sc), &v) in dmrs_pos.iter().zip(dmrs_seq) {
        grid.set(sym, sc, v);
    }
    let (lo, hi) = cfg.subcarrier_span(alloc);
    let source = cfg.agc_symbol + 1;
    for sc in lo..hi {
        let v = grid.get(source, sc);
        grid.set(cfg.agc_symbol, sc, v);
    }
    Ok(grid)
}

/// Symbols read back out of a grid by [`extract_subframe`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub pscch: Vec<Complex64>,
    pub pssch: Vec<Complex64>,
    pub dmrs: Vec<Complex64>,
}

/// Inverse of [`map_subframe`].
pub fn extract_subframe(
    cfg: &GridConfig,
    alloc: &Allocation,
    grid: &SubframeGrid,
) -> Result<Extracted> {
    alloc.validate(cfg)?;
    grid.check_dims(cfg)?;
    let (pscch_pos, pssch_pos) = data_positions(cfg, alloc);
    let read = |pos: &[(usize, usize)]| pos.iter().map(|&(s, k)| grid.get(s, k)).collect();
    Ok(Extracted {
        pscch: read(&pscch_pos),
        pssch: read(&pssch_pos),
        dmrs: read(&dmrs_positions(cfg, alloc)),
    })
}

/// Unit-magnitude QPSK reference sequence from the LFSR seeded with
/// (vehicle, subframe).
pub fn dmrs_sequence(vehicle_id: u32, subframe_idx: u32, length: usize) -> Vec<Complex64> {
    let seed = derive_seed(SeedTag::Dmrs, vehicle_id, subframe_idx);
    let bits: Vec<u8> = Lfsr::new(seed)
        .expect("derived seeds are non-zero")
        .take(2 * length)
        .collect();
    modulate(&bits, Modulation::Qpsk).expect("even bit count")
}

/// Full-band DMRS laid out like [`dmrs_positions`] for the full band. A
/// transmitter on a narrower allocation sends the matching slice, so any
/// receiver can form its reference without knowing the allocation.
pub fn dmrs_full_band(cfg: &GridConfig, vehicle_id: u32, subframe_idx: u32) -> Vec<Complex64> {
    dmrs_sequence(
        vehicle_id,
        subframe_idx,
        cfg.dmrs_symbols.len() * cfg.n_subcarriers(),
    )
}

/// The part of the full-band DMRS that falls inside `alloc`.
pub fn dmrs_for_allocation(
    cfg: &GridConfig,
    alloc: &Allocation,
    vehicle_id: u32,
    subframe_idx: u32,
) -> Vec<Complex64> {
    let full = dmrs_full_band(cfg, vehicle_id, subframe_idx);
    let width = cfg.n_subcarriers();
    let (lo, hi) = cfg.subcarrier_span(alloc);
    (0..cfg.dmrs_symbols.len())
        .flat_map(|i| full[i * width + lo..i * width + hi].iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    // Independent count by walking every grid coordinate.
    fn enumerate_counts(cfg: &GridConfig, alloc: &Allocation) -> (usize, usize, usize, usize) {
        let (lo, hi) = cfg.subcarrier_span(alloc);
        let (mut pscch, mut pssch, mut dmrs, mut other) = (0, 0, 0, 0);
        for sym in 0..cfg.n_symbols {
            for sc in lo..hi {
                if sym == cfg.agc_symbol || sym == cfg.guard_symbol {
                    other += 1;
                } else if cfg.dmrs_symbols.contains(&sym) {
                    dmrs += 1;
                } else if sc < lo + cfg.pscch_width_sc {
                    pscch += 1;
                } else {
                    pssch += 1;
                }
            }
        }
        (pscch, pssch, dmrs, other)
    }

    #[test]
    fn default_geometry() {
        let cfg = GridConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.data_symbols(), vec![1, 3, 4, 6, 7, 9, 10, 12]);
        assert_eq!(cfg.n_data_symbols(), 8);
        assert_eq!(cfg.n_subcarriers(), 288);
    }

    #[test]
    fn pssch_counts() {
        let cfg = GridConfig::default();
        for (n, want) in [(1, 288), (2, 672), (6, 2208)] {
            let alloc = Allocation::new(0, n);
            assert_eq!(pssch_re_count(&cfg, &alloc).unwrap(), want);
            assert_eq!(enumerate_counts(&cfg, &alloc).1, want);
        }
        assert!(pssch_re_count(&cfg, &Allocation::new(5, 2)).is_err());
        assert!(pssch_re_count(&cfg, &Allocation::new(0, 0)).is_err());
    }

    #[test]
    fn pssch_count_is_additive() {
        let cfg = GridConfig::default();
        let one = pssch_re_count(&cfg, &Allocation::new(0, 1)).unwrap();
        for k in 1..=6 {
            let got = pssch_re_count(&cfg, &Allocation::new(0, k)).unwrap();
            assert_eq!(
                got,
                one + (k - 1) * cfg.n_data_symbols() * cfg.sc_per_subchannel
            );
        }
    }

    #[test]
    fn pscch_counts() {
        let mut cfg = GridConfig::default();
        assert_eq!(pscch_re_count(&cfg), 96);
        assert_eq!(enumerate_counts(&cfg, &Allocation::new(0, 1)).0, 96);
        cfg.pscch_width_sc = 0;
        assert_eq!(pscch_re_count(&cfg), 0);
        let short = GridConfig {
            n_symbols: 10,
            dmrs_symbols: vec![3, 6],
            guard_symbol: 9,
            ..GridConfig::default()
        };
        short.validate().unwrap();
        assert_eq!(pscch_re_count(&short), 72);
    }

    #[test]
    fn region_counts_partition_allocation() {
        let cfg = GridConfig::default();
        for n in 1..=6 {
            let alloc = Allocation::new(6 - n, n);
            let (a, b, d, o) = enumerate_counts(&cfg, &alloc);
            assert_eq!(a, pscch_re_count(&cfg));
            assert_eq!(b, pssch_re_count(&cfg, &alloc).unwrap());
            assert_eq!(d, dmrs_positions(&cfg, &alloc).len());
            assert_eq!(a + b + d + o, cfg.n_symbols * n * cfg.sc_per_subchannel);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = GridConfig::default();
        let bad = [
            GridConfig {
                dmrs_symbols: vec![0, 5],
                ..base.clone()
            },
            GridConfig {
                guard_symbol: 14,
                ..base.clone()
            },
            GridConfig {
                pscch_width_sc: 49,
                ..base.clone()
            },
            GridConfig {
                dmrs_symbols: vec![5, 2],
                ..base.clone()
            },
            GridConfig {
                guard_symbol: 0,
                ..base.clone()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_payload_leaves_only_dmrs() {
        let cfg = GridConfig::default();
        let alloc = Allocation::new(1, 2);
        let dmrs = dmrs_for_allocation(&cfg, &alloc, 4, 2);
        let zero = c(0.0, 0.0);
        let grid = map_subframe(
            &cfg,
            &alloc,
            &vec![zero; pscch_re_count(&cfg)],
            &vec![zero; pssch_re_count(&cfg, &alloc).unwrap()],
            &dmrs,
        )
        .unwrap();
        for sym in 0..cfg.n_symbols {
            for sc in 0..cfg.n_subcarriers() {
                let v = grid.get(sym, sc);
                let in_dmrs = cfg.dmrs_symbols.contains(&sym) && (48..144).contains(&sc);
                assert_eq!(v.norm() > 0.0, in_dmrs, "({sym},{sc})");
            }
        }
    }

    #[test]
    fn first_pssch_symbol_lands_after_pscch() {
        let cfg = GridConfig::default();
        let alloc = Allocation::new(0, 1);
        let zero = c(0.0, 0.0);
        let mut pssch = vec![zero; 288];
        pssch[0] = c(1.0, 0.0);
        let grid = map_subframe(&cfg, &alloc, &[zero; 96], &pssch, &[zero; 192]).unwrap();
        assert_eq!(grid.get(1, 12), c(1.0, 0.0));
        // AGC symbol mirrors symbol 1.
        assert_eq!(grid.get(0, 12), c(1.0, 0.0));
        let ones = grid.cells().iter().filter(|v| v.norm() > 0.0).count();
        assert_eq!(ones, 2);
        let back = extract_subframe(&cfg, &alloc, &grid).unwrap();
        assert_eq!(back.pssch, pssch);
    }

    #[test]
    fn length_mismatch_rejected() {
        let cfg = GridConfig::default();
        let alloc = Allocation::new(0, 1);
        let zero = c(0.0, 0.0);
        assert!(map_subframe(&cfg, &alloc, &[zero; 95], &[zero; 288], &[zero; 192]).is_err());
        assert!(map_subframe(&cfg, &alloc, &[zero; 96], &[zero; 287], &[zero; 192]).is_err());
        assert!(map_subframe(&cfg, &alloc, &[zero; 96], &[zero; 288], &[zero; 191]).is_err());
        let wrong = SubframeGrid::zeros(14, 100);
        assert!(extract_subframe(&cfg, &alloc, &wrong).is_err());
    }

    #[test]
    fn zero_grid_extracts_zero() {
        let cfg = GridConfig::default();
        let alloc = Allocation::new(2, 3);
        let out = extract_subframe(&cfg, &alloc, &SubframeGrid::for_config(&cfg)).unwrap();
        assert!(out
            .pscch
            .iter()
            .chain(&out.pssch)
            .chain(&out.dmrs)
            .all(|v| v.norm() == 0.0));
        assert_eq!(out.pssch.len(), pssch_re_count(&cfg, &alloc).unwrap());
    }

    #[test]
    fn dmrs_sequence_properties() {
        let a = dmrs_sequence(1, 0, 192);
        assert_eq!(a, dmrs_sequence(1, 0, 192));
        assert_ne!(a, dmrs_sequence(1, 1, 192));
        assert!(a.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        // Golden value for (1, 0): pins the seed derivation and LFSR.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((a[0] - c(-h, h)).norm() < 1e-12);
    }

    #[test]
    fn allocation_slice_of_full_band() {
        let cfg = GridConfig::default();
        let full = dmrs_full_band(&cfg, 9, 3);
        let part = dmrs_for_allocation(&cfg, &Allocation::new(2, 1), 9, 3);
        assert_eq!(part.len(), 4 * 48);
        assert_eq!(part[0], full[96]);
        assert_eq!(part[48], full[288 + 96]);
    }

    fn random_cells(seed: u64, n: usize) -> Vec<Complex64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    proptest! {
        #[test]
        fn map_extract_roundtrip(
            n_sub in 1usize..8,
            start in 0usize..8,
            width in 1usize..8,
            pscch_w in 0usize..=48,
            seed in any::<u64>(),
        ) {
            let cfg = GridConfig { n_subchannels: n_sub, pscch_width_sc: pscch_w, ..GridConfig::default() };
            let alloc = Allocation::new(start, width);
            prop_assume!(alloc.validate(&cfg).is_ok());
            let a = random_cells(seed, pscch_re_count(&cfg));
            let b = random_cells(seed ^ 1, pssch_re_count(&cfg, &alloc).unwrap());
            let d = random_cells(seed ^ 2, dmrs_positions(&cfg, &alloc).len());
            let grid = map_subframe(&cfg, &alloc, &a, &b, &d).unwrap();
            prop_assert!(grid.row(cfg.guard_symbol).iter().all(|v| v.norm() == 0.0));
            let back = extract_subframe(&cfg, &alloc, &grid).unwrap();
            prop_assert_eq!(back.pscch, a);
            prop_assert_eq!(back.pssch, b);
            prop_assert_eq!(back.dmrs, d);
        }
    }
}
