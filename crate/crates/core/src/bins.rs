use crate::error::{Error, Result};

/// Relative-position bin of the 1-based step `t` in a sequence of length
/// `len`: `floor(t / len * k)`, with `t == len` folded into the last bin.
///
/// Integer arithmetic keeps the floor exact.
pub fn bin_index(t: usize, len: usize, k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    if t == 0 || t > len {
        return Err(Error::IndexOutOfRange { index: t, len });
    }
    Ok(((t * k) / len).min(k - 1))
}

/// Bin of every 1-based position of a length-`len` sequence.
pub fn bins_for_length(len: usize, k: usize) -> Result<Vec<usize>> {
    (1..=len).map(|t| bin_index(t, len, k)).collect()
}
