use super::VideoSample;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Per-class selection; never leaves a class without labels.
    #[default]
    Stratified,
    Uniform,
}

/// Labeled, unlabeled and held-out test videos, disjoint by id.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub labeled: Vec<VideoSample>,
    pub unlabeled: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
}

impl DatasetSplit {
    pub fn new(train: &[VideoSample], test: Vec<VideoSample>, label_pct: f64, seed: u64, mode: SplitMode, classes: usize) -> Result<Self> {
        let (labeled, unlabeled) = split_labeled(train, label_pct, seed, mode, classes)?;
        Ok(Self {
            labeled,
            unlabeled,
            test,
        })
    }
}

fn round_count(n: usize, pct: f64) -> usize {
    (n as f64 * pct / 100.0).round() as usize
}

/// Keeps labels for `label_pct` percent of `train` and hides the rest.
///
/// The per-class shuffle depends only on `seed`, so for one seed the
/// labeled set at a smaller percentage is a subset of the set at a larger
/// one.
pub fn split_labeled(
    train: &[VideoSample],
    label_pct: f64,
    seed: u64,
    mode: SplitMode,
    classes: usize,
) -> Result<(Vec<VideoSample>, Vec<VideoSample>)> {
    if !(label_pct > 0.0 && label_pct <= 100.0) {
        return Err(Error::config("label_fraction", format!("{label_pct} is outside (0, 100]")));
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let mut keep = vec![false; train.len()];
    match mode {
        SplitMode::Stratified => {
            for c in 0..classes {
                let mut members: Vec<usize> = (0..train.len()).filter(|&i| train[i].truth == c).collect();
                members.shuffle(&mut rng);
                let k = round_count(members.len(), label_pct);
                if k == 0 {
                    return Err(Error::Data(format!(
                        "{label_pct}% of {} videos leaves class {c} without labels",
                        members.len()
                    )));
                }
                for &i in &members[..k] {
                    keep[i] = true;
                }
            }
        }
        SplitMode::Uniform => {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            let k = round_count(train.len(), label_pct);
            for &i in &order[..k] {
                keep[i] = true;
            }
            for c in 0..classes {
                if !train.iter().zip(&keep).any(|(v, &k)| k && v.truth == c) {
                    return Err(Error::Data(format!("uniform split leaves class {c} without labels")));
                }
            }
        }
    }
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (v, k) in train.iter().zip(keep) {
        if k {
            labeled.push(VideoSample {
                label: Some(v.truth),
                ..v.clone()
            });
        } else {
            unlabeled.push(v.unlabeled());
        }
    }
    Ok((labeled, unlabeled))
}
