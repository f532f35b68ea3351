//! Row-in, column-out block interleaver over modulation symbols.
//!
//! Symbols are written row by row into a matrix of [`COLUMNS`] columns and
//! read column by column, skipping the unfilled tail of the last row. With
//! frequency-first resource mapping, neighbours in the coded stream end up
//! about `len / COLUMNS` subcarriers apart instead of side by side.

pub const COLUMNS: usize = 32;

/// `perm[j]` is the input index read into output position `j`.
pub fn permutation(len: usize) -> Vec<usize> {
    let rows = len.div_ceil(COLUMNS);
    let mut perm = Vec::with_capacity(len);
    for c in 0..COLUMNS {
        for r in 0..rows {
            let i = r * COLUMNS + c;
            if i < len {
                perm.push(i);
            }
        }
    }
    perm
}

pub fn interleave<T: Copy>(x: &[T]) -> Vec<T> {
    permutation(x.len()).into_iter().map(|i| x[i]).collect()
}

pub fn deinterleave<T: Copy + Default>(y: &[T]) -> Vec<T> {
    let mut x = vec![T::default(); y.len()];
    for (j, i) in permutation(y.len()).into_iter().enumerate() {
        x[i] = y[j];
    }
    x
}
