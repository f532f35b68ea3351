//! Gray-mapped QPSK / 16QAM / 64QAM with unit average power and max-log
//! soft demapping.
//!
//! Even-indexed bits of a symbol select the in-phase level, odd-indexed bits
//! the quadrature level. Within each axis the first bit is the sign
//! (0 = positive) and the remaining bits select the magnitude.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    fn scale(self) -> f64 {
        match self {
            Modulation::Qpsk => 1.0 / 2f64.sqrt(),
            Modulation::Qam16 => 1.0 / 10f64.sqrt(),
            Modulation::Qam64 => 1.0 / 42f64.sqrt(),
        }
    }

    // Unnormalised amplitude on one axis for its `bits_per_symbol / 2` bits.
    fn axis_level(self, axis_bits: &[u8]) -> f64 {
        let sign = if axis_bits[0] == 0 { 1.0 } else { -1.0 };
        let magnitude = match (self, &axis_bits[1..]) {
            (Modulation::Qpsk, _) => 1.0,
            (Modulation::Qam16, [0]) => 1.0,
            (Modulation::Qam16, _) => 3.0,
            (Modulation::Qam64, [0, 0]) => 3.0,
            (Modulation::Qam64, [0, 1]) => 1.0,
            (Modulation::Qam64, [1, 0]) => 5.0,
            (Modulation::Qam64, _) => 7.0,
        };
        sign * magnitude
    }

    // Every normalised axis level with its bit label (label bit 0 = first
    // axis bit).
    fn axis_points(self) -> Vec<(f64, u8)> {
        let per_axis = self.bits_per_symbol() / 2;
        (0..1u8 << per_axis)
            .map(|label| {
                let bits: Vec<u8> = (0..per_axis).map(|i| (label >> i) & 1).collect();
                (self.axis_level(&bits) * self.scale(), label)
            })
            .collect()
    }
}

/// Maps bits to constellation symbols. The bit count must be a multiple of
/// the bits per symbol.
pub fn modulate(bits: &[u8], modulation: Modulation) -> Result<Vec<Complex64>> {
    let q = modulation.bits_per_symbol();
    if !bits.len().is_multiple_of(q) {
        return Err(Error::Contract(format!(
            "{} bits is not a multiple of {q} bits per symbol",
            bits.len()
        )));
    }
    let half = q / 2;
    let scale = modulation.scale();
    let mut i_bits = [0u8; 3];
    let mut q_bits = [0u8; 3];
    Ok(bits
        .chunks_exact(q)
        .map(|sym| {
            for k in 0..half {
                i_bits[k] = sym[2 * k] & 1;
                q_bits[k] = sym[2 * k + 1] & 1;
            }
            Complex64::new(
                modulation.axis_level(&i_bits[..half]) * scale,
                modulation.axis_level(&q_bits[..half]) * scale,
            )
        })
        .collect())
}

/// Max-log LLRs for symbols observed in complex noise of variance
/// `noise_var` (positive LLR favours bit 0).
pub fn soft_demod(symbols: &[Complex64], modulation: Modulation, noise_var: f64) -> Vec<f64> {
    let vars = vec![noise_var; symbols.len()];
    soft_demod_with_vars(symbols, modulation, &vars)
}

/// As [`soft_demod`] with a separate noise variance for every symbol.
pub fn soft_demod_with_vars(
    symbols: &[Complex64],
    modulation: Modulation,
    noise_vars: &[f64],
) -> Vec<f64> {
    assert_eq!(symbols.len(), noise_vars.len());
    let mut out = Vec::with_capacity(symbols.len() * modulation.bits_per_symbol());
    match modulation {
        Modulation::Qpsk => demod_all::<2, 1>(symbols, noise_vars, modulation, &mut out),
        Modulation::Qam16 => demod_all::<4, 2>(symbols, noise_vars, modulation, &mut out),
        Modulation::Qam64 => demod_all::<8, 3>(symbols, noise_vars, modulation, &mut out),
    }
    out
}

const MIN_NOISE_VAR: f64 = 1e-12;

// M axis levels carrying H bits each; fixed sizes let the inner loops unroll.
fn demod_all<const M: usize, const H: usize>(
    symbols: &[Complex64],
    noise_vars: &[f64],
    modulation: Modulation,
    out: &mut Vec<f64>,
) {
    let points = modulation.axis_points();
    let levels: [f64; M] = std::array::from_fn(|i| points[i].0);
    // sets[k][b]: indices of the M / 2 levels whose bit k equals b.
    let sets: [[[usize; 4]; 2]; H] = std::array::from_fn(|k| {
        std::array::from_fn(|b| {
            let mut idx = [0usize; 4];
            let members = (0..M).filter(|&i| usize::from((points[i].1 >> k) & 1) == b);
            for (slot, i) in idx.iter_mut().zip(members) {
                *slot = i;
            }
            idx
        })
    });
    for (&s, &v) in symbols.iter().zip(noise_vars) {
        let inv = 1.0 / v.max(MIN_NOISE_VAR);
        let li = axis_llrs::<M, H>(s.re, &levels, &sets, inv);
        let lq = axis_llrs::<M, H>(s.im, &levels, &sets, inv);
        for k in 0..H {
            out.push(li[k]);
            out.push(lq[k]);
        }
    }
}

fn axis_llrs<const M: usize, const H: usize>(
    y: f64,
    levels: &[f64; M],
    sets: &[[[usize; 4]; 2]; H],
    inv_var: f64,
) -> [f64; H] {
    let d: [f64; M] = std::array::from_fn(|i| (y - levels[i]) * (y - levels[i]));
    let nearest = |idx: &[usize; 4]| {
        idx[..M / 2]
            .iter()
            .map(|&i| d[i])
            .fold(f64::INFINITY, f64::min)
    };
    std::array::from_fn(|k| (nearest(&sets[k][1]) - nearest(&sets[k][0])) * inv_var)
}
