//! Bit-level processing shared by the control and data chains.
//!
//! Bits are carried as `u8` values restricted to 0 and 1. Soft values are
//! log-likelihood ratios with the convention that a positive LLR favours a
//! 0 bit.

pub mod conv;
pub mod crc;
pub mod interleave;
pub mod mcs;
pub mod modulation;
pub mod rate_match;
pub mod scramble;

pub use conv::{conv_encode, viterbi_decode, TAIL_BITS};
pub use crc::{crc_attach, crc_check, CrcKind};
pub use interleave::{deinterleave, interleave};
pub use mcs::{mcs_lookup, tbs_for, McsEntry, MAX_MCS};
pub use modulation::{modulate, soft_demod, soft_demod_with_vars, Modulation};
pub use rate_match::{rate_dematch, rate_match};
pub use scramble::{derive_seed, descramble_llrs, scramble, Lfsr, SeedTag};
