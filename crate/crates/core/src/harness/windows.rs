//! Neighborhoods cut from a frame sequence.

use crate::blender::{FrameFeature, Neighborhood};
use crate::error::Result;
use crate::tensor::Real;

/// Time offsets of the first `count` neighbors: `-1, +1, -2, +2, …`.
pub fn neighbor_offsets(count: usize) -> Vec<i64> {
    (0..count)
        .map(|k| {
            let step = (k / 2 + 1) as i64;
            if k % 2 == 0 {
                -step
            } else {
                step
            }
        })
        .collect()
}

/// Frames of a `len`-frame sequence whose `count` neighbors all exist.
pub fn full_frames(len: usize, count: usize) -> Vec<usize> {
    let offsets = neighbor_offsets(count);
    let back = offsets.iter().map(|o| -o).max().unwrap_or(0).max(0) as usize;
    let ahead = offsets.iter().copied().max().unwrap_or(0).max(0) as usize;
    (back..len.saturating_sub(ahead)).collect()
}

/// Smallest sequence length with at least one full neighborhood of `count`.
pub fn min_length(count: usize) -> usize {
    (count + 1).max(3)
}

/// Neighborhood of frame `t`. Offsets falling outside the sequence are
/// dropped; `None` when nothing is left.
pub fn neighborhood<T: Real>(
    frames: &[FrameFeature<T>],
    t: usize,
    count: usize,
    include_self: bool,
) -> Result<Option<Neighborhood<T>>> {
    let neighbors: Vec<FrameFeature<T>> = neighbor_offsets(count)
        .into_iter()
        .filter_map(|o| {
            let s = t as i64 + o;
            (s >= 0 && (s as usize) < frames.len()).then(|| frames[s as usize].clone())
        })
        .collect();
    if neighbors.is_empty() {
        return Ok(None);
    }
    Neighborhood::new(frames[t].clone(), neighbors, include_self).map(Some)
}
