//! Rate-1/3, constraint-length-7 convolutional code (generators 133, 171,
//! 165 octal) with zero-tail termination, and its soft-input Viterbi decoder.

use crate::error::{Error, Result};

pub const CONSTRAINT_LENGTH: usize = 7;
pub const TAIL_BITS: usize = CONSTRAINT_LENGTH - 1;
const N_STATES: usize = 1 << TAIL_BITS;
const GENERATORS: [u32; 3] = [0o133, 0o171, 0o165];

// Output triple for every 7-bit register value, packed as g0<<2 | g1<<1 | g2.
// Register bit 6 is the current input, bit 0 the oldest.
const fn output_table() -> [u8; 128] {
    let mut table = [0u8; 128];
    let mut reg = 0;
    while reg < 128 {
        let mut packed = 0u8;
        let mut g = 0;
        while g < 3 {
            let bit = ((reg as u32) & GENERATORS[g]).count_ones() & 1;
            packed = (packed << 1) | bit as u8;
            g += 1;
        }
        table[reg] = packed;
        reg += 1;
    }
    table
}

const OUTPUTS: [u8; 128] = output_table();

/// Number of coded bits produced for `n_info` information bits.
pub fn coded_len(n_info: usize) -> usize {
    3 * (n_info + TAIL_BITS)
}

/// Encodes `bits` followed by six zero tail bits. Output is interleaved per
/// input bit: `g0, g1, g2, g0, g1, g2, ...`.
pub fn conv_encode(bits: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(coded_len(bits.len()));
    let mut state = 0usize;
    for &b in bits.iter().chain(std::iter::repeat_n(&0, TAIL_BITS)) {
        let reg = (usize::from(b & 1) << TAIL_BITS) | state;
        let o = OUTPUTS[reg];
        out.extend_from_slice(&[(o >> 2) & 1, (o >> 1) & 1, o & 1]);
        state = reg >> 1;
    }
    out
}

// Soft inputs are clamped so that infinite-SNR LLRs stay finite.
const LLR_CLAMP: f64 = 1e6;
// Start metric of states the zero-started encoder cannot be in.
const UNREACHABLE: f32 = -1e30;
const HALF: usize = N_STATES / 2;

/// Maximum-likelihood decoding of zero-tail terminated code words.
///
/// `llrs` holds one LLR per coded bit (positive favours 0) in the encoder's
/// output order. Returns the information bits without the tail.
pub fn viterbi_decode(llrs: &[f64]) -> Result<Vec<u8>> {
    if !llrs.len().is_multiple_of(3) {
        return Err(Error::Contract(format!(
            "LLR length {} is not a multiple of 3",
            llrs.len()
        )));
    }
    let steps = llrs.len() / 3;
    if steps < TAIL_BITS {
        return Err(Error::Contract(format!(
            "{steps} trellis steps cannot hold the {TAIL_BITS}-bit tail"
        )));
    }

    // All three generators tap both the newest and the oldest register bit,
    // so the four branches of the butterfly joining predecessors 2j, 2j+1
    // with successors j, j+32 carry +-B[j], where B[j] is the metric of the
    // branch 2j -> j.
    let signs: [[f32; HALF]; 3] = std::array::from_fn(|g| {
        std::array::from_fn(|j| {
            if (OUTPUTS[j << 1] >> (2 - g)) & 1 == 0 {
                1.0
            } else {
                -1.0
            }
        })
    });

    // Metrics of even and odd states, split so the butterfly loop runs
    // over contiguous arrays.
    let mut even = [UNREACHABLE; HALF];
    let mut odd = [UNREACHABLE; HALF];
    even[0] = 0.0;
    let mut lo = [0.0f32; HALF];
    let mut hi = [0.0f32; HALF];
    let mut decisions: Vec<[u8; N_STATES]> = Vec::with_capacity(steps);

    for triple in llrs.chunks_exact(3) {
        let l = [
            triple[0].clamp(-LLR_CLAMP, LLR_CLAMP) as f32,
            triple[1].clamp(-LLR_CLAMP, LLR_CLAMP) as f32,
            triple[2].clamp(-LLR_CLAMP, LLR_CLAMP) as f32,
        ];
        let mut dec = [0u8; N_STATES];
        let (dec_lo, dec_hi) = dec.split_at_mut(HALF);
        for j in 0..HALF {
            let b = signs[0][j] * l[0] + signs[1][j] * l[1] + signs[2][j] * l[2];
            let (lo0, lo1) = (even[j] + b, odd[j] - b);
            let (hi0, hi1) = (even[j] - b, odd[j] + b);
            lo[j] = if lo1 > lo0 { lo1 } else { lo0 };
            hi[j] = if hi1 > hi0 { hi1 } else { hi0 };
            dec_lo[j] = u8::from(lo1 > lo0);
            dec_hi[j] = u8::from(hi1 > hi0);
        }
        decisions.push(dec);
        // Successor j is lo[j], successor j + 32 is hi[j]. Re-split by
        // parity and keep metrics near zero; only differences matter.
        let top = lo[0];
        for k in 0..HALF / 2 {
            even[k] = lo[2 * k] - top;
            odd[k] = lo[2 * k + 1] - top;
            even[k + HALF / 2] = hi[2 * k] - top;
            odd[k + HALF / 2] = hi[2 * k + 1] - top;
        }
    }

    let mut bits = vec![0u8; steps];
    let mut state = 0usize;
    for step in (0..steps).rev() {
        bits[step] = (state >> (TAIL_BITS - 1)) as u8;
        let oldest = usize::from(decisions[step][state]);
        state = ((state << 1) | oldest) & (N_STATES - 1);
    }
    bits.truncate(steps - TAIL_BITS);
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn perfect_llrs(coded: &[u8]) -> Vec<f64> {
        coded
            .iter()
            .map(|&c| if c == 0 { 4.0 } else { -4.0 })
            .collect()
    }

    #[test]
    fn zero_input_gives_zero_codeword() {
        let coded = conv_encode(&[0; 20]);
        assert_eq!(coded.len(), 3 * 26);
        assert!(coded.iter().all(|&b| b == 0));
    }

    #[test]
    fn impulse_response_matches_generators() {
        let coded = conv_encode(&[1]);
        // Step t emits the generator taps at delay t, most significant first.
        for (step, triple) in coded.chunks(3).enumerate() {
            for (g, &bit) in GENERATORS.iter().zip(triple) {
                assert_eq!(u32::from(bit), (g >> (6 - step)) & 1, "step {step}");
            }
        }
    }

    #[test]
    fn noiseless_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let bits: Vec<u8> = (0..100).map(|_| rng.gen_range(0..2)).collect();
            let decoded = viterbi_decode(&perfect_llrs(&conv_encode(&bits))).unwrap();
            assert_eq!(decoded, bits);
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(viterbi_decode(&[0.0; 10]).is_err());
        assert!(viterbi_decode(&[0.0; 9]).is_err());
    }

    // Exhaustive ML search over every k-bit message.
    fn brute_force_ml(llrs: &[f64], k: usize) -> Vec<u8> {
        let mut best = (f64::NEG_INFINITY, 0u32);
        for msg in 0..(1u32 << k) {
            let bits: Vec<u8> = (0..k).map(|i| ((msg >> i) & 1) as u8).collect();
            let corr: f64 = conv_encode(&bits)
                .iter()
                .zip(llrs)
                .map(|(&c, &l)| if c == 0 { l } else { -l })
                .sum();
            if corr > best.0 {
                best = (corr, msg);
            }
        }
        (0..k).map(|i| ((best.1 >> i) & 1) as u8).collect()
    }

    #[test]
    fn agrees_with_exhaustive_ml_on_noisy_short_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut disagreements = 0;
        let mut decode_errors = 0;
        for trial in 0..60 {
            let k = 6 + trial % 7; // 6..=12
            let bits: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2)).collect();
            let coded = conv_encode(&bits);
            // BPSK at about 0 dB Es/N0 gives plenty of channel bit errors.
            let sigma = 1.0;
            let llrs: Vec<f64> = coded
                .iter()
                .map(|&c| {
                    let x = if c == 0 { 1.0 } else { -1.0 };
                    let n: f64 = rng.sample(StandardNormal);
                    2.0 * (x + sigma * n) / (sigma * sigma)
                })
                .collect();
            let ml = brute_force_ml(&llrs, k);
            let vit = viterbi_decode(&llrs).unwrap();
            if ml != vit {
                disagreements += 1;
            }
            if vit != bits {
                decode_errors += 1;
            }
        }
        assert_eq!(disagreements, 0);
        // The oracle comparison only means something if noise caused errors
        // somewhere in the channel; the decoder itself should fix most.
        assert!(decode_errors < 30);
    }
}
