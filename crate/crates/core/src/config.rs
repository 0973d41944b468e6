//! Experiment configuration: one JSON document with every knob of a run.
//!
//! Unknown keys are rejected. [`ExperimentConfig::set`] applies dotted
//! `key=value` overrides, and [`ExperimentConfig::fingerprint`] hashes the
//! resolved document.

use crate::data::{DatasetSpec, Domain, RenderParams, SplitMode};
use crate::encoder::{EncoderKind, InputNorm};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SimilarityConfig};
use crate::optim::OptimizerConfig;
use crate::rng::{self, Stream};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub speeds: Vec<f64>,
    pub train_videos: usize,
    pub test_videos: usize,
    /// Percentage of training videos that keep their label.
    pub label_percent: f64,
    pub split: SplitMode,
    /// Fraction of the unlabeled pool drawn from the target domain.
    pub rho: f64,
    pub render: RenderParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            classes: d.classes,
            frames: d.frames,
            height: d.height,
            width: d.width,
            speeds: d.speeds,
            train_videos: 2000,
            test_videos: 800,
            label_percent: 5.0,
            split: SplitMode::Stratified,
            rho: 1.0,
            render: d.render,
        }
    }
}

impl DataConfig {
    pub fn spec(&self, num_videos: usize, domain: Domain, seed: u64, first_id: u64) -> DatasetSpec {
        DatasetSpec {
            num_videos,
            classes: self.classes,
            frames: self.frames,
            height: self.height,
            width: self.width,
            speeds: self.speeds.clone(),
            domain,
            seed,
            first_id,
            render: self.render.clone(),
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    pub fast: usize,
    pub slow: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self { fast: 8, slow: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub norm: InputNorm,
    pub hidden: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::FrameMlp,
            norm: InputNorm::Frame,
            hidden: vec![64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let (s, w) = (SimilarityConfig::default(), LossWeights::default());
        Self {
            temperature: s.temperature,
            epsilon: s.epsilon,
            gamma: w.gamma,
            beta: w.beta,
        }
    }
}

impl LossConfig {
    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            temperature: self.temperature,
            epsilon: self.epsilon,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            gamma: self.gamma,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchConfig {
    /// `B_l`, labeled clips per step.
    pub labeled: usize,
    /// `μ`, unlabeled pairs per labeled clip.
    pub mu: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { labeled: 8, mu: 3 }
    }
}

/// Epoch counts per stage, before scaling. Effective counts are
/// `round(count · scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSchedule {
    pub pretrain: usize,
    pub warmup: usize,
    pub combined: usize,
    pub finetune: usize,
    pub scale: f64,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            pretrain: 200,
            warmup: 50,
            combined: 300,
            finetune: 50,
            scale: 0.1,
        }
    }
}

/// Effective epochs per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEpochs {
    pub pretrain: usize,
    pub warmup: usize,
    pub combined: usize,
    pub finetune: usize,
}

impl StageSchedule {
    pub fn epochs(&self) -> StageEpochs {
        let s = |n: usize| (n as f64 * self.scale).round() as usize;
        StageEpochs {
            pretrain: s(self.pretrain),
            warmup: s(self.warmup),
            combined: s(self.combined),
            finetune: s(self.finetune),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Pseudo-labels are admitted when their confidence is strictly above
    /// this value.
    pub threshold: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { threshold: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub clips: ClipConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub batch: BatchConfig,
    pub schedule: StageSchedule,
    pub optimizer: OptimizerConfig,
    pub finetune: FinetuneConfig,
}


fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} must be positive")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_pretty()? + "\n")?;
        Ok(())
    }

    /// Checks every field, reporting the first offending key.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 {
            return Err(Error::config("data.classes", "need at least 2 classes"));
        }
        if d.frames < 8 {
            return Err(Error::config("data.frames", "need at least 8 frames"));
        }
        if d.height == 0 || d.width == 0 {
            return Err(Error::config("data.height", "frame size must be positive"));
        }
        if d.speeds.is_empty() || d.speeds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("data.speeds", "speeds must be positive and non-empty"));
        }
        if d.train_videos < d.classes {
            return Err(Error::config("data.train_videos", "fewer training videos than classes"));
        }
        if d.test_videos == 0 {
            return Err(Error::config("data.test_videos", "test set must be non-empty"));
        }
        if !(d.label_percent > 0.0 && d.label_percent <= 100.0) {
            return Err(Error::config("data.label_percent", format!("{} is outside (0, 100]", d.label_percent)));
        }
        if !(0.0..=1.0).contains(&d.rho) {
            return Err(Error::config("data.rho", format!("{} is outside [0, 1]", d.rho)));
        }
        d.spec(1, Domain::Target, 0, 0).validate()?;
        let c = &self.clips;
        if c.fast == 0 || c.fast > d.frames {
            return Err(Error::config("clips.fast", format!("must lie in 1..={}", d.frames)));
        }
        if c.slow == 0 || c.slow >= c.fast {
            return Err(Error::config("clips.slow", "must be positive and below clips.fast"));
        }
        if self.encoder.kind == EncoderKind::TemporalDiff && c.slow < 2 {
            return Err(Error::config("clips.slow", "temporal encoder needs at least 2 frames"));
        }
        if self.encoder.hidden.contains(&0) {
            return Err(Error::config("encoder.hidden", "layer sizes must be positive"));
        }
        positive("loss.temperature", self.loss.temperature)?;
        positive("loss.epsilon", self.loss.epsilon)?;
        if !(self.loss.gamma >= 0.0 && self.loss.gamma.is_finite()) {
            return Err(Error::config("loss.gamma", "must be non-negative"));
        }
        if !(self.loss.beta >= 0.0 && self.loss.beta.is_finite()) {
            return Err(Error::config("loss.beta", "must be non-negative"));
        }
        if self.batch.labeled < 2 {
            return Err(Error::config("batch.labeled", "need at least 2 labeled clips per batch"));
        }
        let s = &self.schedule;
        if !(s.scale > 0.0 && s.scale.is_finite()) {
            return Err(Error::config("schedule.scale", "must be positive"));
        }
        let e = s.epochs();
        if e.warmup + e.combined == 0 {
            return Err(Error::config("schedule.combined", "warmup and combined stages are both empty"));
        }
        self.optimizer.validate()?;
        let t = self.finetune.threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::config("finetune.threshold", format!("{t} is outside (0, 1]")));
        }
        Ok(())
    }

    /// Applies `key=value` with a dotted key such as `loss.beta`. The value
    /// is parsed as JSON when possible and otherwise taken as a string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
        let key = key.trim();
        let value: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::config(key, "unknown key"))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::config(key, e.to_string()))?;
        Ok(())
    }

    /// Lowercase hex SHA-256 of the compact JSON form.
    pub fn fingerprint(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&serde_json::to_value(self)?)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Seed for one purpose, derived from the master seed.
    pub fn derived_seed(&self, purpose: Stream) -> u64 {
        rng::stream(self.seed, purpose).next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_scale() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let e = c.schedule.epochs();
        assert_eq!((e.pretrain, e.warmup, e.combined, e.finetune), (20, 5, 30, 5));
        assert_eq!((c.loss.gamma, c.loss.beta, c.loss.temperature), (9.0, 1.0, 0.5));
        assert_eq!((c.batch.labeled, c.batch.mu, c.clips.fast, c.clips.slow), (8, 3, 8, 4));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&c.to_json_pretty().unwrap()).unwrap();
        assert_eq!(c, back);
        assert!(ExperimentConfig::from_json(r#"{"sed": 1}"#).is_err());
        let partial = ExperimentConfig::from_json(r#"{"seed": 4, "loss": {"beta": 0}}"#).unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.loss.beta, 0.0);
        assert_eq!(partial.loss.gamma, 9.0);
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.set("loss.beta=0.5").unwrap();
        c.set("data.split=uniform").unwrap();
        c.set("encoder.hidden=[16, 8]").unwrap();
        assert_eq!(c.loss.beta, 0.5);
        assert_eq!(c.data.split, SplitMode::Uniform);
        assert_eq!(c.encoder.hidden, vec![16, 8]);
        let err = c.set("loss.bta=1").unwrap_err();
        assert!(err.to_string().contains("loss.bta"), "{err}");
        assert!(c.set("novalue").is_err());
        assert!(c.set("loss.beta=\"x\"").is_err());
    }

    #[test]
    fn first_offending_key_is_reported() {
        let mut c = ExperimentConfig::default();
        c.clips.slow = 8;
        c.loss.temperature = 0.0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("clips.slow"), "{err}");
        let mut c = ExperimentConfig::default();
        c.data.rho = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("data.rho"));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        b.seed = 1;
        assert_ne!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        assert_eq!(a.fingerprint().unwrap().len(), 64);
    }
}
