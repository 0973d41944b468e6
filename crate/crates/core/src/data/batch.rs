use super::{make_clip_pair, tsn_sample_indices, ClipPair, VideoSample};
use crate::error::{Error, Result};
use crate::rng::{self, Rng, RngState, Stream};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

/// A fast clip of a labeled video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledClip {
    /// Position in the labeled pool.
    pub index: usize,
    pub frames: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlabeledPair {
    /// Position in the unlabeled pool.
    pub index: usize,
    pub pair: ClipPair,
}

/// One optimisation step's worth of data: `B_l` labeled clips and
/// `μ·B_l` unlabeled clip pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Batch {
    pub labeled: Vec<LabeledClip>,
    pub unlabeled: Vec<UnlabeledPair>,
}

/// Draws batches with one RNG stream per purpose, so the labeled side of
/// every batch is the same whether or not unlabeled data is drawn.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pub batch_size: usize,
    pub mu: usize,
    pub fast: usize,
    pub slow: usize,
    order: Rng,
    labeled_clips: Rng,
    draw: Rng,
    pair_clips: Rng,
}

/// Serializable position of a [`BatchSampler`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub order: RngState,
    pub labeled_clips: RngState,
    pub draw: RngState,
    pub pair_clips: RngState,
}

impl BatchSampler {
    /// `offset` separates the streams of different training stages.
    pub fn new(seed: u64, offset: u64, batch_size: usize, mu: usize, fast: usize, slow: usize) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::config("batch_size", "labeled batch size must be at least 2"));
        }
        if slow >= fast {
            return Err(Error::config("slow_frames", "slow clip must have fewer frames than the fast clip"));
        }
        let s = |k: Stream| rng::stream_raw(seed, offset + k as u64);
        Ok(Self {
            batch_size,
            mu,
            fast,
            slow,
            order: s(Stream::LabeledOrder),
            labeled_clips: s(Stream::LabeledClips),
            draw: s(Stream::UnlabeledDraw),
            pair_clips: s(Stream::UnlabeledClips),
        })
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            order: RngState::capture(&self.order),
            labeled_clips: RngState::capture(&self.labeled_clips),
            draw: RngState::capture(&self.draw),
            pair_clips: RngState::capture(&self.pair_clips),
        }
    }

    pub fn restore(&mut self, s: &SamplerState) {
        self.order = s.order.restore();
        self.labeled_clips = s.labeled_clips.restore();
        self.draw = s.draw.restore();
        self.pair_clips = s.pair_clips.restore();
    }

    /// Shuffled partition of `0..n` into chunks of `batch_size`. A trailing
    /// singleton joins the previous chunk so every batch has two anchors.
    pub fn epoch_plan(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.order);
        let mut chunks: Vec<Vec<usize>> = order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
            let tail = chunks.pop().unwrap();
            chunks.last_mut().unwrap().extend(tail);
        }
        chunks
    }

    /// Builds the batch for the given labeled pool positions and draws
    /// `μ·|members|` distinct unlabeled videos uniformly.
    pub fn compose_batch(&mut self, labeled: &[VideoSample], members: &[usize], unlabeled: &[VideoSample]) -> Result<Batch> {
        let mut batch = Batch::default();
        for &i in members {
            let v = &labeled[i];
            let label = v
                .label
                .ok_or_else(|| Error::Data(format!("video {} in labeled pool has no label", v.id)))?;
            batch.labeled.push(LabeledClip {
                index: i,
                frames: tsn_sample_indices(v.num_frames, self.fast, &mut self.labeled_clips)?,
                label,
            });
        }
        let want = self.mu * members.len();
        if want > 0 {
            if unlabeled.len() < want {
                return Err(Error::Data(format!(
                    "unlabeled pool has {} videos, batch needs {want}",
                    unlabeled.len()
                )));
            }
            for i in index::sample(&mut self.draw, unlabeled.len(), want) {
                batch.unlabeled.push(UnlabeledPair {
                    index: i,
                    pair: make_clip_pair(&unlabeled[i], self.fast, self.slow, &mut self.pair_clips)?,
                });
            }
        }
        Ok(batch)
    }

    /// Every batch of one epoch: a single pass over the labeled pool.
    pub fn epoch(&mut self, labeled: &[VideoSample], unlabeled: &[VideoSample]) -> Result<Vec<Batch>> {
        self.epoch_plan(labeled.len())
            .iter()
            .map(|m| self.compose_batch(labeled, m, unlabeled))
            .collect()
    }

    /// A pass over `pool` as unlabeled pairs only, `μ·B_l` per batch.
    pub fn unlabeled_epoch(&mut self, pool: &[VideoSample]) -> Result<Vec<Batch>> {
        let per = (self.mu.max(1) * self.batch_size).min(pool.len());
        if per < 2 {
            return Err(Error::Data("need at least two unlabeled videos".into()));
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut self.order);
        let mut chunks: Vec<Vec<usize>> = order.chunks(per).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
            let tail = chunks.pop().unwrap();
            chunks.last_mut().unwrap().extend(tail);
        }
        chunks
            .into_iter()
            .map(|members| {
                let unlabeled = members
                    .into_iter()
                    .map(|i| {
                        Ok(UnlabeledPair {
                            index: i,
                            pair: make_clip_pair(&pool[i], self.fast, self.slow, &mut self.pair_clips)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(Batch {
                    labeled: Vec::new(),
                    unlabeled,
                })
            })
            .collect()
    }
}
