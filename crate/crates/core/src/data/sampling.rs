use super::VideoSample;
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;

/// Fast (`M`-frame) and slow (`N`-frame) views of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipPair {
    pub source_id: u64,
    pub fast: Vec<usize>,
    pub slow: Vec<usize>,
}

fn segment_bounds(total: usize, segments: usize, i: usize) -> (usize, usize) {
    (i * total / segments, (i + 1) * total / segments)
}

fn check_segments(total: usize, segments: usize) -> Result<()> {
    if segments == 0 || segments > total {
        return Err(Error::InvalidArgument(format!(
            "cannot take {segments} segments from {total} frames"
        )));
    }
    Ok(())
}

/// TSN sampling: one frame drawn uniformly from each of `segments`
/// consecutive non-overlapping segments `[⌊iL/K⌋, ⌊(i+1)L/K⌋)`.
pub fn tsn_sample_indices(total: usize, segments: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    check_segments(total, segments)?;
    Ok((0..segments)
        .map(|i| {
            let (lo, hi) = segment_bounds(total, segments, i);
            lo + rng.random_range(0..hi - lo)
        })
        .collect())
}

/// Deterministic test-time variant: the middle frame of every segment.
pub fn center_indices(total: usize, segments: usize) -> Result<Vec<usize>> {
    check_segments(total, segments)?;
    Ok((0..segments)
        .map(|i| {
            let (lo, hi) = segment_bounds(total, segments, i);
            lo + (hi - lo) / 2
        })
        .collect())
}

/// Independent TSN draws of `fast` and `slow` frames from `video`.
pub fn make_clip_pair(video: &VideoSample, fast: usize, slow: usize, rng: &mut Rng) -> Result<ClipPair> {
    if slow >= fast {
        return Err(Error::InvalidArgument(format!(
            "slow clip ({slow} frames) must be shorter than fast clip ({fast})"
        )));
    }
    Ok(ClipPair {
        source_id: video.id,
        fast: tsn_sample_indices(video.num_frames, fast, rng)?,
        slow: tsn_sample_indices(video.num_frames, slow, rng)?,
    })
}
