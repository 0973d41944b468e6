//! Synthetic moving-blob videos, labeled/unlabeled splits, TSN frame
//! sampling and batch composition.

mod batch;
mod domain;
pub mod io;
mod sampling;
mod split;
mod synth;

use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub use batch::{Batch, BatchSampler, LabeledClip, SamplerState, UnlabeledPair};
pub use domain::{mix_domains, DomainMixSpec};
pub use sampling::{center_indices, make_clip_pair, tsn_sample_indices, ClipPair};
pub use split::{split_labeled, DatasetSplit, SplitMode};
pub use synth::{generate_dataset, DatasetSpec, RenderParams};

/// Which visual domain a video was rendered in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Target,
    Shifted,
}

/// One synthetic grayscale video.
///
/// `truth` is the generator's class and is always known; `label` is what a
/// learner may see and is `None` for unlabeled videos.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: u64,
    pub label: Option<usize>,
    pub truth: usize,
    pub domain: Domain,
    pub speed: f64,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    frames: Arc<Vec<f32>>,
}

impl VideoSample {
    pub fn new(
        id: u64,
        truth: usize,
        domain: Domain,
        speed: f64,
        (num_frames, height, width): (usize, usize, usize),
        frames: Vec<f32>,
    ) -> Self {
        assert_eq!(frames.len(), num_frames * height * width);
        Self {
            id,
            label: Some(truth),
            truth,
            domain,
            speed,
            num_frames,
            height,
            width,
            frames: Arc::new(frames),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    /// Same video with its label hidden.
    pub fn unlabeled(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }

    /// Same video carrying `label` in place of its current one.
    pub fn relabeled(&self, label: usize) -> Self {
        Self {
            label: Some(label),
            ..self.clone()
        }
    }

    /// Appends the selected frames, widened to `f64`, to `out`.
    pub fn extend_frames(&self, indices: &[usize], out: &mut Vec<f64>) {
        for &t in indices {
            out.extend(self.frame(t).iter().map(|&p| f64::from(p)));
        }
    }
}
