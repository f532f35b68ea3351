use serde::{Deserialize, Serialize};

use super::modulation::Modulation;
use crate::error::{Error, Result};

pub const MAX_MCS: u8 = 28;
const CRC_BITS: f64 = 24.0;

/// One row of the modulation and coding scheme table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    pub index: u8,
    pub modulation: Modulation,
    pub code_rate: f64,
}

/// Indices 0-9 are QPSK with rate `0.10 + 0.05 i`, 10-16 are 16QAM with rate
/// `0.33 + 0.045 (i - 10)`, 17-28 are 64QAM with rate `0.43 + 0.0455 (i - 17)`.
pub fn mcs_lookup(index: u8) -> Result<McsEntry> {
    let i = f64::from(index);
    let (modulation, code_rate) = match index {
        0..=9 => (Modulation::Qpsk, 0.10 + 0.05 * i),
        10..=16 => (Modulation::Qam16, 0.33 + 0.045 * (i - 10.0)),
        17..=MAX_MCS => (Modulation::Qam64, 0.43 + 0.0455 * (i - 17.0)),
        _ => return Err(Error::Range(format!("MCS index {index} exceeds {MAX_MCS}"))),
    };
    Ok(McsEntry {
        index,
        modulation,
        code_rate,
    })
}

/// Transport block size: the largest multiple of 8 not above
/// `n_re * bits_per_symbol * code_rate - 24`.
pub fn tbs_for(mcs: &McsEntry, n_re: usize) -> Result<usize> {
    let raw = n_re as f64 * mcs.modulation.bits_per_symbol() as f64 * mcs.code_rate - CRC_BITS;
    // The epsilon keeps exact products like 57.6 - 24 from rounding down.
    let bits = ((raw + 1e-9) / 8.0).floor() as i64 * 8;
    if bits < 8 {
        return Err(Error::AllocationTooSmall {
            mcs: mcs.index,
            n_re,
            bits,
        });
    }
    Ok(bits as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let e = mcs_lookup(0).unwrap();
        assert_eq!(e.modulation, Modulation::Qpsk);
        assert!((e.code_rate - 0.10).abs() < 1e-12);
        let e = mcs_lookup(10).unwrap();
        assert_eq!(e.modulation, Modulation::Qam16);
        assert!((e.code_rate - 0.33).abs() < 1e-12);
        let e = mcs_lookup(28).unwrap();
        assert_eq!(e.modulation, Modulation::Qam64);
        assert!((e.code_rate - 0.9305).abs() < 1e-12);
        assert!(mcs_lookup(29).is_err());
    }

    #[test]
    fn rates_increase_within_each_modulation() {
        let rows: Vec<_> = (0..=MAX_MCS).map(|i| mcs_lookup(i).unwrap()).collect();
        for w in rows.windows(2) {
            assert!(w[1].modulation.bits_per_symbol() >= w[0].modulation.bits_per_symbol());
            if w[1].modulation == w[0].modulation {
                assert!(w[1].code_rate > w[0].code_rate);
            }
            assert!(w[1].code_rate > 0.0 && w[1].code_rate < 1.0);
        }
    }

    #[test]
    fn tbs_examples() {
        assert_eq!(tbs_for(&mcs_lookup(0).unwrap(), 288).unwrap(), 32);
        assert_eq!(tbs_for(&mcs_lookup(10).unwrap(), 2208).unwrap(), 2888);
        assert!(matches!(
            tbs_for(&mcs_lookup(0).unwrap(), 100),
            Err(Error::AllocationTooSmall { .. })
        ));
    }

    #[test]
    fn tbs_monotone_in_mcs_and_re_count() {
        for n_re in (200..3000).step_by(37) {
            let mut last = 0;
            for i in 0..=MAX_MCS {
                let t = tbs_for(&mcs_lookup(i).unwrap(), n_re).unwrap_or(0);
                assert!(t >= last);
                last = t;
            }
        }
        for i in 0..=MAX_MCS {
            let m = mcs_lookup(i).unwrap();
            let mut last = 0;
            for n_re in 1..3000 {
                let t = tbs_for(&m, n_re).unwrap_or(0);
                assert!(t >= last);
                last = t;
            }
        }
    }
}
