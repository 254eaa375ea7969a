//! Run-length encoded masks: `(start, length)` pairs with 1-based starts
//! into column-major pixel order.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::Mask;

pub fn decode_rle(runs: &[(usize, usize)], height: usize, width: usize) -> Result<Mask> {
    let total = height * width;
    let mut mask = Mask::zeros(height, width);
    for &(start, len) in runs {
        if start == 0 {
            return Err(Error::Format("RLE starts are 1-based; got 0".into()));
        }
        let end = start - 1 + len;
        if end > total {
            return Err(Error::Format(format!(
                "run ({start}, {len}) exceeds {height}x{width} = {total} pixels"
            )));
        }
        for k in start - 1..end {
            mask.set(k % height, k / height, true);
        }
    }
    Ok(mask)
}

/// Parses `"start length start length ..."`.
pub fn parse_rle(text: &str) -> Result<Vec<(usize, usize)>> {
    let nums = text
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::Format(format!("bad RLE token {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if nums.len() % 2 != 0 {
        return Err(Error::Format("RLE string has an odd number of values".into()));
    }
    Ok(nums.chunks_exact(2).map(|p| (p[0], p[1])).collect())
}

pub fn encode_rle(mask: &Mask) -> Vec<(usize, usize)> {
    let h = mask.height;
    let mut runs = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for k in 0..mask.height * mask.width {
        if mask.get(k % h, k / h) {
            match current.as_mut() {
                Some((_, len)) => *len += 1,
                None => current = Some((k + 1, 1)),
            }
        } else if let Some(run) = current.take() {
            runs.push(run);
        }
    }
    runs.extend(current);
    runs
}
