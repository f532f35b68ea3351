//! Circular-buffer repetition and uniform puncturing.
//!
//! Output position `i` reads source position `i mod S` when repeating and
//! `floor(i * S / T)` when puncturing, where `S` is the source length and
//! `T` the target length.

#[inline]
fn source_index(i: usize, source_len: usize, target_len: usize) -> usize {
    if target_len >= source_len {
        i % source_len
    } else {
        i * source_len / target_len
    }
}

/// Repeats or punctures `coded` to exactly `target_len` bits.
pub fn rate_match(coded: &[u8], target_len: usize) -> Vec<u8> {
    if coded.is_empty() {
        return vec![0; target_len];
    }
    (0..target_len)
        .map(|i| coded[source_index(i, coded.len(), target_len)])
        .collect()
}

/// Inverse of [`rate_match`] on soft values: repeated positions are summed,
/// punctured positions come back as zero LLRs.
pub fn rate_dematch(llrs: &[f64], source_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; source_len];
    if source_len == 0 {
        return out;
    }
    for (i, &l) in llrs.iter().enumerate() {
        out[source_index(i, source_len, llrs.len())] += l;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_length_is_identity() {
        let coded: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        assert_eq!(rate_match(&coded, 30), coded);
    }

    #[test]
    fn doubling_repeats_each_bit_twice() {
        let coded: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let out = rate_match(&coded, 24);
        let llrs: Vec<f64> = out.iter().map(|&b| 1.0 - 2.0 * f64::from(b)).collect();
        let back = rate_dematch(&llrs, 12);
        for (b, l) in coded.iter().zip(back) {
            assert_eq!(l, 2.0 * (1.0 - 2.0 * f64::from(*b)));
        }
    }

    #[test]
    fn puncture_144_to_96_leaves_every_third_position_empty() {
        let coded = vec![1u8; 144];
        let out = rate_match(&coded, 96);
        let back = rate_dematch(&vec![-1.0; out.len()], 144);
        let zeros: Vec<usize> = (0..144).filter(|&i| back[i] == 0.0).collect();
        assert_eq!(zeros.len(), 48);
        assert!(zeros.iter().enumerate().all(|(k, &i)| i == 3 * k + 2));
    }
}
