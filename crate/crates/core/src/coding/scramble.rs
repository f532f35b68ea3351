//! Length-31 LFSR (x^31 + x^3 + 1) used for scrambling and DMRS generation.

use crate::error::{Error, Result};

const STATE_MASK: u32 = 0x7FFF_FFFF;

/// Fibonacci LFSR: output is bit 0 of the state, feedback `s[0] ^ s[3]`
/// enters at bit 30, one shift per output bit.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u32,
}

impl Lfsr {
    pub fn new(seed: u32) -> Result<Self> {
        let state = seed & STATE_MASK;
        if state == 0 {
            return Err(Error::Contract("LFSR seed must be non-zero".into()));
        }
        Ok(Self { state })
    }
}

impl Iterator for Lfsr {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        let out = (self.state & 1) as u8;
        let feedback = (self.state ^ (self.state >> 3)) & 1;
        self.state = (self.state >> 1) | (feedback << 30);
        Some(out)
    }
}

/// Distinguishes the sequences derived for one (vehicle, subframe) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedTag {
    Pscch = 1,
    Pssch = 2,
    Dmrs = 3,
}

/// Maps (tag, vehicle, subframe) to a non-zero 31-bit LFSR seed.
pub fn derive_seed(tag: SeedTag, vehicle_id: u32, subframe_idx: u32) -> u32 {
    // splitmix64 finaliser
    let mut z = (u64::from(vehicle_id) << 32 | u64::from(subframe_idx))
        .wrapping_add((tag as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let seed = (z as u32) & STATE_MASK;
    if seed == 0 {
        1
    } else {
        seed
    }
}

/// XORs `bits` with the LFSR stream. Applying it twice is the identity.
pub fn scramble(bits: &[u8], seed: u32) -> Result<Vec<u8>> {
    let lfsr = Lfsr::new(seed)?;
    Ok(bits.iter().zip(lfsr).map(|(&b, c)| b ^ c).collect())
}

/// Soft-domain descrambling: flips the sign of every LLR whose scrambling
/// bit is 1.
pub fn descramble_llrs(llrs: &mut [f64], seed: u32) -> Result<()> {
    let lfsr = Lfsr::new(seed)?;
    for (l, c) in llrs.iter_mut().zip(lfsr) {
        if c == 1 {
            *l = -*l;
        }
    }
    Ok(())
}
