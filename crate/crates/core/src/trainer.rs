//! Staged training: optional instance-contrastive pretraining, supervised
//! warmup, combined training and pseudo-label finetuning.
//!
//! A run is a sequence of epochs driven by [`advance`]. All of its
//! progress lives in [`TrainState`], which can be saved after any epoch and
//! resumed to the same bits as an uninterrupted run.

use crate::autodiff::{Graph, Var};
use crate::checkpoint::TensorArchive;
use crate::config::{ExperimentConfig, StageEpochs};
use crate::data::{generate_dataset, mix_domains, split_labeled, Batch, BatchSampler, Domain, DomainMixSpec, SamplerState, VideoSample};
use crate::encoder::{encode_clips, init_params, ClipBatch, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{self, CenterClipClassifier, Classifier, EvalReport};
use crate::losses::{assign_pseudo_labels, form_groups, group_contrastive_loss, instance_contrastive_loss, supervised_loss};
use crate::optim::{cosine_lr, sgd_step};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Warmup,
    Combined,
    Finetune,
}

impl Stage {
    pub const ORDER: [Stage; 4] = [Stage::Pretrain, Stage::Warmup, Stage::Combined, Stage::Finetune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Warmup => "warmup",
            Stage::Combined => "combined",
            Stage::Finetune => "finetune",
        }
    }

    fn next(self) -> Option<Stage> {
        let i = Stage::ORDER.iter().position(|&s| s == self).expect("listed");
        Stage::ORDER.get(i + 1).copied()
    }

    fn stream_offset(self) -> u64 {
        100 * (1 + self as u64)
    }

    pub fn epochs(self, e: &StageEpochs) -> usize {
        match self {
            Stage::Pretrain => e.pretrain,
            Stage::Warmup => e.warmup,
            Stage::Combined => e.combined,
            Stage::Finetune => e.finetune,
        }
    }
}

/// Which of the pipeline's stages and loss terms are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `L_sup` only, on labeled data.
    Supervised,
    /// Supervised training followed by finetuning on confident
    /// pseudo-labels.
    PseudoLabel,
    /// Combined training with `β = 0`.
    TclNoGroup,
    Tcl,
    TclFinetune,
    TclPretrainFinetune,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Supervised,
        Variant::PseudoLabel,
        Variant::TclNoGroup,
        Variant::Tcl,
        Variant::TclFinetune,
        Variant::TclPretrainFinetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Supervised => "supervised",
            Variant::PseudoLabel => "pseudo_label",
            Variant::TclNoGroup => "tcl_no_group",
            Variant::Tcl => "tcl",
            Variant::TclFinetune => "tcl_finetune",
            Variant::TclPretrainFinetune => "tcl_pretrain_finetune",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`")))
    }

    /// The configuration this variant trains with.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        let s = &mut c.schedule;
        match self {
            Variant::Supervised | Variant::PseudoLabel => {
                c.loss.gamma = 0.0;
                c.loss.beta = 0.0;
                c.batch.mu = 0;
                s.pretrain = 0;
                if self == Variant::Supervised {
                    s.finetune = 0;
                }
            }
            Variant::TclNoGroup | Variant::Tcl => {
                if self == Variant::TclNoGroup {
                    c.loss.beta = 0.0;
                }
                s.pretrain = 0;
                s.finetune = 0;
            }
            Variant::TclFinetune => s.pretrain = 0,
            Variant::TclPretrainFinetune => {}
        }
        c
    }
}

/// Labeled, unlabeled and test videos of one run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub labeled: Vec<VideoSample>,
    pub unlabeled: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
}

impl PreparedData {
    /// Training and test videos come from streams derived from the master
    /// seed; the shifted pool is rendered only when `ρ < 1`.
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let d = &cfg.data;
        let train_spec = d.spec(d.train_videos, Domain::Target, cfg.derived_seed(Stream::TrainVideos), 0);
        let test_spec = d.spec(
            d.test_videos,
            Domain::Target,
            cfg.derived_seed(Stream::TestVideos),
            d.train_videos as u64,
        );
        let train = generate_dataset(&train_spec)?;
        let test = generate_dataset(&test_spec)?;
        let (labeled, pool) = split_labeled(&train, d.label_percent, cfg.seed, d.split, d.classes)?;
        let mix = DomainMixSpec {
            rho: d.rho,
            total: pool.len(),
        };
        let unlabeled = if mix.shifted_count() == 0 {
            pool
        } else {
            let shifted_spec = d.spec(
                pool.len(),
                Domain::Shifted,
                cfg.derived_seed(Stream::ShiftedVideos),
                (d.train_videos + d.test_videos) as u64,
            );
            let shifted = generate_dataset(&shifted_spec)?;
            mix_domains(&pool, &shifted, mix, &mut rng::stream(cfg.seed, Stream::DomainMix))?
        };
        Ok(Self {
            labeled,
            unlabeled,
            test,
        })
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based position over the whole run.
    pub epoch: usize,
    pub stage: Stage,
    /// 1-based position within the stage.
    pub stage_epoch: usize,
    pub lr: f64,
    #[serde(rename = "L_sup")]
    pub sup: Option<f64>,
    #[serde(rename = "L_ic")]
    pub ic: Option<f64>,
    #[serde(rename = "L_gc")]
    pub gc: Option<f64>,
    pub total: f64,
    pub val_top1: f64,
    /// Pseudo-label accuracy on the unlabeled pool.
    pub pl_acc: Option<f64>,
    /// Pseudo-label accuracy among videos above the finetuning threshold.
    pub pl_acc_confident: Option<f64>,
    pub pl_confident: usize,
    pub steps: usize,
    /// Steps whose group loss had no valid positive/negative structure.
    pub gc_degenerate: usize,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in history {
        w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams,
    pub buffers: Vec<Tensor>,
    pub stage: Stage,
    /// Epochs completed in `stage`.
    pub stage_epoch: usize,
    pub finished: bool,
    /// Sampler position after the last completed epoch of `stage`.
    pub sampler: Option<SamplerState>,
    /// `(unlabeled index, pseudo-label)` admitted for finetuning, fixed at
    /// the start of that stage.
    pub admitted: Option<Vec<(usize, usize)>>,
    pub history: Vec<EpochMetrics>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    stage: Stage,
    stage_epoch: usize,
    finished: bool,
    sampler: Option<SamplerState>,
    admitted: Option<Vec<(usize, usize)>>,
    history: Vec<EpochMetrics>,
}

fn zero_buffers(params: &EncoderParams) -> Vec<Tensor> {
    params.tensors().map(|t| Tensor::zeros(t.shape())).collect()
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut params = init_params(
            cfg.encoder.kind,
            cfg.data.pixels(),
            &cfg.encoder.hidden,
            cfg.data.classes,
            cfg.derived_seed(Stream::Init),
        )?;
        params.norm = cfg.encoder.norm;
        Ok(Self {
            buffers: zero_buffers(&params),
            params,
            stage: Stage::Pretrain,
            stage_epoch: 0,
            finished: false,
            sampler: None,
            admitted: None,
            history: Vec::new(),
        })
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut a = self.params.to_archive();
        let meta = serde_json::to_value(StateMeta {
            stage: self.stage,
            stage_epoch: self.stage_epoch,
            finished: self.finished,
            sampler: self.sampler,
            admitted: self.admitted.clone(),
            history: self.history.clone(),
        })?;
        let obj = a.meta.as_object_mut().expect("encoder meta is an object");
        obj.insert("format".into(), "tcl-train-state".into());
        obj.insert("state".into(), meta);
        for (i, b) in self.buffers.iter().enumerate() {
            a.tensors.push((format!("momentum{i}"), b.clone()));
        }
        Ok(a)
    }

    pub fn from_archive(a: &TensorArchive, path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.into(),
            reason: reason.into(),
        };
        if a.meta.get("format").and_then(|f| f.as_str()) != Some("tcl-train-state") {
            return Err(bad("not a training-state file"));
        }
        let params = EncoderParams::from_archive(a, path)?;
        let meta: StateMeta = serde_json::from_value(a.meta.get("state").cloned().ok_or_else(|| bad("missing state"))?)?;
        let buffers = params
            .tensors()
            .enumerate()
            .map(|(i, p)| {
                let b = a.get(&format!("momentum{i}")).ok_or_else(|| bad("missing momentum buffer"))?;
                if b.shape() != p.shape() {
                    return Err(bad("momentum buffer shape differs from its parameter"));
                }
                Ok(b.clone())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            params,
            buffers,
            stage: meta.stage,
            stage_epoch: meta.stage_epoch,
            finished: meta.finished,
            sampler: meta.sampler,
            admitted: meta.admitted,
            history: meta.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?, path)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Encoder checkpoints are written here at the end of every stage.
    pub checkpoint_dir: Option<PathBuf>,
    /// Return after this many epochs even if the run is unfinished.
    pub max_epochs: Option<usize>,
}

/// Per-step loss weights.
#[derive(Debug, Clone, Copy)]
struct StepWeights {
    sup: f64,
    ic: f64,
    gc: f64,
}

#[derive(Debug, Default)]
struct StepLosses {
    sup: Option<f64>,
    ic: Option<f64>,
    gc: Option<f64>,
    total: f64,
    gc_degenerate: bool,
}

/// One SGD step on `batch`.
fn train_step(
    cfg: &ExperimentConfig,
    params: &mut EncoderParams,
    buffers: &mut [Tensor],
    batch: &Batch,
    labeled: &[VideoSample],
    unlabeled: &[VideoSample],
    w: StepWeights,
    lr: f64,
) -> Result<StepLosses> {
    let sim = cfg.loss.similarity();
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let mut out = StepLosses::default();
    let mut terms: Vec<(Var, f64)> = Vec::new();

    if !batch.labeled.is_empty() {
        let mut clips = ClipBatch::new(params);
        for c in &batch.labeled {
            clips.push_video(&labeled[c.index], &c.frames)?;
        }
        let labels: Vec<usize> = batch.labeled.iter().map(|c| c.label).collect();
        let z = encode_clips(&mut g, params, &vars, &clips)?;
        let sup = supervised_loss(&mut g, z, &labels)?;
        out.sup = Some(g.value(sup).item());
        terms.push((sup, w.sup));
    }
    if batch.unlabeled.len() >= 2 && (w.ic > 0.0 || w.gc > 0.0) {
        let mut fast = ClipBatch::new(params);
        let mut slow = ClipBatch::new(params);
        for u in &batch.unlabeled {
            let v = &unlabeled[u.index];
            fast.push_video(v, &u.pair.fast)?;
            slow.push_video(v, &u.pair.slow)?;
        }
        let f = encode_clips(&mut g, params, &vars, &fast)?;
        let s = encode_clips(&mut g, params, &vars, &slow)?;
        let ic = instance_contrastive_loss(&mut g, f, s, &sim)?;
        out.ic = Some(g.value(ic).item());
        terms.push((ic, w.ic));
        let fl = assign_pseudo_labels(g.value(f))?;
        let sl = assign_pseudo_labels(g.value(s))?;
        let groups = form_groups(&mut g, f, s, &fl, &sl)?;
        let gl = group_contrastive_loss(&mut g, &groups, &sim)?;
        out.gc = Some(g.value(gl.loss).item());
        out.gc_degenerate = gl.degenerate;
        terms.push((gl.loss, w.gc));
    }

    let mut total: Option<Var> = None;
    for (v, weight) in terms {
        if weight == 0.0 {
            continue;
        }
        let scaled = if weight == 1.0 { v } else { g.scale(v, weight)? };
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    let total = total.ok_or_else(|| Error::Data("batch produced no loss term".into()))?;
    out.total = g.value(total).item();
    if !out.total.is_finite() {
        return Err(Error::NonFinite { op: "total_loss" });
    }
    let grads = g.backward(total)?;
    let grads = params.collect_grads(&vars, &grads);
    let mut refs: Vec<&mut Tensor> = params.tensors_mut().collect();
    sgd_step(&mut refs, &grads, buffers, lr, cfg.optimizer.momentum)?;
    Ok(out)
}

fn mean_of(xs: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = xs.iter().flatten().copied().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Pseudo-labels above the finetuning threshold, computed once.
pub fn admit_pseudo_labels(cfg: &ExperimentConfig, params: &EncoderParams, pool: &[VideoSample]) -> Result<Vec<(usize, usize)>> {
    let model = CenterClipClassifier {
        params,
        frames: cfg.clips.fast,
    };
    let preds = model.classify(pool)?;
    Ok(preds
        .into_iter()
        .enumerate()
        .filter(|(_, (_, conf))| *conf > cfg.finetune.threshold)
        .map(|(i, (label, _))| (i, label))
        .collect())
}

fn run_epoch(cfg: &ExperimentConfig, state: &mut TrainState, data: &PreparedData, total_epochs: usize) -> Result<EpochMetrics> {
    let stage = state.stage;
    let contrastive = cfg.loss.gamma > 0.0 || cfg.loss.beta > 0.0;
    let mu = match stage {
        Stage::Combined if contrastive => cfg.batch.mu,
        Stage::Pretrain => cfg.batch.mu,
        _ => 0,
    };
    let mut sampler = BatchSampler::new(
        cfg.seed,
        stage.stream_offset(),
        cfg.batch.labeled,
        mu,
        cfg.clips.fast,
        cfg.clips.slow,
    )?;
    if let Some(s) = &state.sampler {
        sampler.restore(s);
    }
    let base_lr = match stage {
        Stage::Finetune => cfg.optimizer.finetune_lr,
        _ => cfg.optimizer.base_lr,
    };
    let lr = cosine_lr(base_lr, state.stage_epoch, total_epochs)?;

    let pretrain_pool: Vec<VideoSample>;
    let finetune_pool: Vec<VideoSample>;
    let (batches, labeled, unlabeled, weights): (Vec<Batch>, &[VideoSample], &[VideoSample], StepWeights) = match stage {
        Stage::Pretrain => {
            pretrain_pool = data
                .labeled
                .iter()
                .map(VideoSample::unlabeled)
                .chain(data.unlabeled.iter().cloned())
                .collect();
            let w = StepWeights {
                sup: 0.0,
                ic: 1.0,
                gc: 0.0,
            };
            (sampler.unlabeled_epoch(&pretrain_pool)?, &[], &pretrain_pool, w)
        }
        Stage::Warmup => {
            let w = StepWeights {
                sup: 1.0,
                ic: 0.0,
                gc: 0.0,
            };
            (sampler.epoch(&data.labeled, &[])?, &data.labeled, &[], w)
        }
        Stage::Combined => {
            let w = StepWeights {
                sup: 1.0,
                ic: cfg.loss.gamma,
                gc: cfg.loss.beta,
            };
            (sampler.epoch(&data.labeled, &data.unlabeled)?, &data.labeled, &data.unlabeled, w)
        }
        Stage::Finetune => {
            let admitted = match &state.admitted {
                Some(a) => a,
                None => {
                    let a = admit_pseudo_labels(cfg, &state.params, &data.unlabeled)?;
                    if a.is_empty() {
                        log::warn!("no pseudo-label above {}; finetuning on labeled data only", cfg.finetune.threshold);
                    }
                    state.admitted.insert(a)
                }
            };
            finetune_pool = data
                .labeled
                .iter()
                .cloned()
                .chain(admitted.iter().map(|&(i, label)| data.unlabeled[i].relabeled(label)))
                .collect();
            let w = StepWeights {
                sup: 1.0,
                ic: 0.0,
                gc: 0.0,
            };
            (sampler.epoch(&finetune_pool, &[])?, &finetune_pool, &[], w)
        }
    };

    let mut rows = Vec::with_capacity(batches.len());
    for batch in &batches {
        rows.push(train_step(cfg, &mut state.params, &mut state.buffers, batch, labeled, unlabeled, weights, lr)?);
    }
    state.sampler = Some(sampler.state());

    let model = CenterClipClassifier {
        params: &state.params,
        frames: cfg.clips.fast,
    };
    let val = eval::accuracy(&model, &data.test)?;
    let (pl_acc, pl_acc_confident, pl_confident) = if data.unlabeled.is_empty() {
        (None, None, 0)
    } else {
        let q = eval::pseudo_label_quality(&model, &data.unlabeled, &[cfg.finetune.threshold])?;
        let t = &q.thresholds[0];
        (Some(q.overall), t.accuracy, t.admitted)
    };
    let col = |f: fn(&StepLosses) -> Option<f64>| mean_of(&rows.iter().map(f).collect::<Vec<_>>());
    Ok(EpochMetrics {
        epoch: state.history.len() + 1,
        stage,
        stage_epoch: state.stage_epoch + 1,
        lr,
        sup: col(|r| r.sup),
        ic: col(|r| r.ic),
        gc: col(|r| r.gc),
        total: rows.iter().map(|r| r.total).sum::<f64>() / rows.len().max(1) as f64,
        val_top1: val.top1,
        pl_acc,
        pl_acc_confident,
        pl_confident,
        steps: rows.len(),
        gc_degenerate: rows.iter().filter(|r| r.gc_degenerate).count(),
    })
}

/// Runs epochs until the schedule is exhausted or `opts.max_epochs` have
/// run. Returns whether the run is finished.
pub fn advance(cfg: &ExperimentConfig, state: &mut TrainState, data: &PreparedData, opts: &RunOptions) -> Result<bool> {
    let epochs = cfg.schedule.epochs();
    let mut ran = 0;
    while !state.finished {
        let total = state.stage.epochs(&epochs);
        if state.stage_epoch >= total {
            if total > 0 {
                if let Some(dir) = &opts.checkpoint_dir {
                    state.params.save(&dir.join(format!("{}.ckpt", state.stage.name())))?;
                }
            }
            match state.stage.next() {
                Some(next) => {
                    state.stage = next;
                    state.stage_epoch = 0;
                    state.sampler = None;
                    state.buffers = zero_buffers(&state.params);
                }
                None => state.finished = true,
            }
            continue;
        }
        if opts.max_epochs.is_some_and(|m| ran >= m) {
            return Ok(false);
        }
        let row = run_epoch(cfg, state, data, total)?;
        log::info!(
            "epoch {} {} {}/{} lr {:.3e} total {:.4} val {:.4}",
            row.epoch,
            row.stage.name(),
            row.stage_epoch,
            total,
            row.lr,
            row.total,
            row.val_top1
        );
        state.history.push(row);
        state.stage_epoch += 1;
        ran += 1;
    }
    Ok(true)
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub state: TrainState,
    pub report: EvalReport,
}

/// JSON summary written beside `metrics.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: u32,
    pub seed: u64,
    pub fingerprint: String,
    pub epochs: StageEpochs,
    pub top1: f64,
    pub admitted_pseudo_labels: Option<usize>,
    pub final_metrics: Option<EpochMetrics>,
}

impl PipelineResult {
    pub fn summary(&self, cfg: &ExperimentConfig) -> RunSummary {
        RunSummary {
            version: eval::REPORT_VERSION,
            seed: cfg.seed,
            fingerprint: self.report.fingerprint.clone(),
            epochs: cfg.schedule.epochs(),
            top1: self.report.accuracy.top1,
            admitted_pseudo_labels: self.state.admitted.as_ref().map(Vec::len),
            final_metrics: self.state.history.last().cloned(),
        }
    }
}

/// Writes `config.json`, `metrics.csv`, `report.json` and `summary.json`
/// into `dir`, creating it if needed.
pub fn write_run_outputs(dir: &Path, cfg: &ExperimentConfig, result: &PipelineResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    cfg.save(&dir.join("config.json"))?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&result.state.history)?)?;
    write_json(&dir.join("report.json"), &result.report)?;
    write_json(&dir.join("summary.json"), &result.summary(cfg))
}

/// Pretty JSON with a trailing newline, as every artifact is written.
pub fn json_pretty(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, json_pretty(value)?)?;
    Ok(())
}

/// Trains from scratch through every enabled stage and evaluates on the
/// test set.
pub fn run_pipeline(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PipelineResult> {
    cfg.validate()?;
    let data = PreparedData::build(cfg)?;
    run_pipeline_on(cfg, &data, opts)
}

pub fn run_pipeline_on(cfg: &ExperimentConfig, data: &PreparedData, opts: &RunOptions) -> Result<PipelineResult> {
    cfg.validate()?;
    let mut state = TrainState::new(cfg)?;
    let done = advance(cfg, &mut state, data, &RunOptions {
        max_epochs: None,
        ..opts.clone()
    })?;
    debug_assert!(done);
    let report = final_report(cfg, &state.params, data)?;
    Ok(PipelineResult { state, report })
}

pub fn final_report(cfg: &ExperimentConfig, params: &EncoderParams, data: &PreparedData) -> Result<EvalReport> {
    let model = CenterClipClassifier {
        params,
        frames: cfg.clips.fast,
    };
    eval::evaluate(&model, &data.test, Some(&data.unlabeled), cfg.seed, &cfg.fingerprint()?)
}
