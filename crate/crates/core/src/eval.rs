//! Test-set evaluation and pseudo-label quality.
//!
//! Every video is scored on one deterministic fast clip whose frames are
//! the segment centres.

use crate::data::{center_indices, VideoSample};
use crate::encoder::{infer_logits, predict_logits, EncoderParams};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const REPORT_VERSION: u32 = 1;
pub const QUALITY_THRESHOLDS: [f64; 4] = [0.0, 0.5, 0.8, 0.9];

/// Anything that maps videos to `(class, confidence)`.
pub trait Classifier {
    fn classify(&self, videos: &[VideoSample]) -> Result<Vec<(usize, f64)>>;
    fn classes(&self) -> usize;
}

/// The encoder scored on segment-centre clips of `frames` frames.
#[derive(Debug, Clone, Copy)]
pub struct CenterClipClassifier<'a> {
    pub params: &'a EncoderParams,
    pub frames: usize,
}

impl Classifier for CenterClipClassifier<'_> {
    fn classify(&self, videos: &[VideoSample]) -> Result<Vec<(usize, f64)>> {
        let clips = videos
            .iter()
            .map(|v| Ok((v, center_indices(v.num_frames, self.frames)?)))
            .collect::<Result<Vec<_>>>()?;
        let logits = infer_logits(self.params, clips, 256)?;
        Ok(logits.iter().map(|l| predict_logits(l)).collect())
    }

    fn classes(&self) -> usize {
        self.params.classes
    }
}

/// Accuracy tables over a labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub total: usize,
    pub correct: usize,
    /// `None` for classes absent from the set.
    pub per_class: Vec<Option<f64>>,
    pub support: Vec<usize>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Accuracy {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, classes: usize) -> Result<Self> {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (truth, pred) in pairs {
            if truth >= classes || pred >= classes {
                return Err(Error::InvalidArgument(format!("class pair ({truth}, {pred}) outside 0..{classes}")));
            }
            confusion[truth][pred] += 1;
        }
        let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let total: usize = support.iter().sum();
        if total == 0 {
            return Err(Error::Data("cannot evaluate an empty set".into()));
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = (0..classes)
            .map(|c| (support[c] > 0).then(|| confusion[c][c] as f64 / support[c] as f64))
            .collect();
        Ok(Self {
            top1: correct as f64 / total as f64,
            total,
            correct,
            per_class,
            support,
            confusion,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQuality {
    pub threshold: f64,
    /// Videos whose confidence is strictly above the threshold. A
    /// threshold of zero admits everything.
    pub admitted: usize,
    /// `None` when nothing is admitted.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelQuality {
    pub pool: usize,
    pub overall: f64,
    pub thresholds: Vec<ThresholdQuality>,
}

impl PseudoLabelQuality {
    pub fn at(&self, threshold: f64) -> Option<&ThresholdQuality> {
        self.thresholds.iter().find(|t| t.threshold == threshold)
    }
}

fn admits(confidence: f64, threshold: f64) -> bool {
    threshold == 0.0 || confidence > threshold
}

/// Pseudo-label accuracy against the hidden ground truth, overall and
/// among videos above each confidence threshold.
pub fn pseudo_label_quality(model: &dyn Classifier, pool: &[VideoSample], thresholds: &[f64]) -> Result<PseudoLabelQuality> {
    if pool.is_empty() {
        return Ok(PseudoLabelQuality {
            pool: 0,
            overall: 0.0,
            thresholds: thresholds
                .iter()
                .map(|&threshold| ThresholdQuality {
                    threshold,
                    admitted: 0,
                    accuracy: None,
                })
                .collect(),
        });
    }
    let preds = model.classify(pool)?;
    let hits: Vec<bool> = pool.iter().zip(&preds).map(|(v, p)| v.truth == p.0).collect();
    let overall = hits.iter().filter(|&&h| h).count() as f64 / pool.len() as f64;
    let thresholds = thresholds
        .iter()
        .map(|&threshold| {
            let (mut n, mut ok) = (0usize, 0usize);
            for (p, &h) in preds.iter().zip(&hits) {
                if admits(p.1, threshold) {
                    n += 1;
                    ok += usize::from(h);
                }
            }
            ThresholdQuality {
                threshold,
                admitted: n,
                accuracy: (n > 0).then(|| ok as f64 / n as f64),
            }
        })
        .collect();
    Ok(PseudoLabelQuality {
        pool: pool.len(),
        overall,
        thresholds,
    })
}

/// Top-1 of `model` on `test`.
pub fn accuracy(model: &dyn Classifier, test: &[VideoSample]) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::Data("cannot evaluate an empty test set".into()));
    }
    let preds = model.classify(test)?;
    Accuracy::from_pairs(test.iter().zip(&preds).map(|(v, p)| (v.truth, p.0)), model.classes())
}

/// The `report.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub seed: u64,
    pub fingerprint: String,
    #[serde(flatten)]
    pub accuracy: Accuracy,
    pub pseudo_labels: Option<PseudoLabelQuality>,
}

pub fn evaluate(
    model: &dyn Classifier,
    test: &[VideoSample],
    unlabeled: Option<&[VideoSample]>,
    seed: u64,
    fingerprint: &str,
) -> Result<EvalReport> {
    let accuracy = accuracy(model, test)?;
    let pseudo_labels = unlabeled
        .map(|pool| pseudo_label_quality(model, pool, &QUALITY_THRESHOLDS))
        .transpose()?;
    Ok(EvalReport {
        version: REPORT_VERSION,
        seed,
        fingerprint: fingerprint.to_string(),
        accuracy,
        pseudo_labels,
    })
}

/// `class,<a>,<b>,delta` rows comparing two reports class by class.
pub fn per_class_delta_csv(a_name: &str, a: &Accuracy, b_name: &str, b: &Accuracy) -> Result<String> {
    if a.per_class.len() != b.per_class.len() {
        return Err(Error::InvalidArgument("reports cover different class counts".into()));
    }
    let mut out = format!("class,{a_name},{b_name},delta\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (c, (x, y)) in a.per_class.iter().zip(&b.per_class).enumerate() {
        let d = x.zip(*y).map(|(x, y)| y - x);
        out.push_str(&format!("{c},{},{},{}\n", cell(*x), cell(*y), cell(d)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Domain;

    struct Oracle(usize);

    impl Classifier for Oracle {
        fn classify(&self, videos: &[VideoSample]) -> Result<Vec<(usize, f64)>> {
            Ok(videos.iter().map(|v| (v.truth, 1.0)).collect())
        }
        fn classes(&self) -> usize {
            self.0
        }
    }

    fn videos(n: usize, classes: usize) -> Vec<VideoSample> {
        (0..n)
            .map(|i| VideoSample::new(i as u64, i % classes, Domain::Target, 1.0, (1, 1, 1), vec![0.0]))
            .collect()
    }

    #[test]
    fn oracle_is_perfect() {
        let v = videos(40, 4);
        let a = accuracy(&Oracle(4), &v).unwrap();
        assert_eq!(a.top1, 1.0);
        let q = pseudo_label_quality(&Oracle(4), &v, &QUALITY_THRESHOLDS).unwrap();
        assert_eq!(q.overall, 1.0);
        assert!(q.thresholds.iter().all(|t| t.accuracy == Some(1.0)));
    }

    #[test]
    fn confusion_identities() {
        let pairs = [(0, 0), (0, 1), (1, 1), (2, 0), (2, 2), (2, 2)];
        let a = Accuracy::from_pairs(pairs, 3).unwrap();
        let trace: usize = (0..3).map(|c| a.confusion[c][c]).sum();
        assert_eq!(a.top1, trace as f64 / a.total as f64);
        let weighted: f64 = a
            .per_class
            .iter()
            .zip(&a.support)
            .map(|(p, &s)| p.unwrap() * s as f64)
            .sum::<f64>()
            / a.total as f64;
        assert!((weighted - a.top1).abs() < 1e-15);
        assert!(Accuracy::from_pairs([(0, 3)], 3).is_err());
        assert!(Accuracy::from_pairs(std::iter::empty(), 3).is_err());
    }

    #[test]
    fn delta_csv() {
        let a = Accuracy::from_pairs([(0, 0), (1, 0)], 2).unwrap();
        let b = Accuracy::from_pairs([(0, 0), (1, 1)], 2).unwrap();
        let csv = per_class_delta_csv("sup", &a, "tcl", &b).unwrap();
        assert_eq!(csv, "class,sup,tcl,delta\n0,1,1,0\n1,0,1,1\n");
    }
}
