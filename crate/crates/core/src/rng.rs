//! Deterministic random streams derived from a master seed.
//!
//! Every consumer of randomness gets its own ChaCha stream, selected by a
//! fixed [`Stream`] label, so adding draws in one place never perturbs
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng = ChaCha8Rng;

/// Purpose labels for independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    TrainVideos = 1,
    TestVideos = 2,
    ShiftedVideos = 3,
    Split = 4,
    DomainMix = 5,
    Init = 6,
    LabeledOrder = 7,
    LabeledClips = 8,
    UnlabeledDraw = 9,
    UnlabeledClips = 10,
    Pretrain = 11,
    Finetune = 12,
}

pub fn stream(seed: u64, purpose: Stream) -> Rng {
    stream_raw(seed, purpose as u64)
}

pub fn stream_raw(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Exact position of a ChaCha stream, for checkpointing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
