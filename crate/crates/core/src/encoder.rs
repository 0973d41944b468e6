//! The shared backbone `g(·)`: a per-frame MLP whose clip representation
//! is the mean of its frame logits.
//!
//! Both pathways call [`encode_clips`] with the same [`ParamVars`], so the
//! fast and slow clips of a batch are encoded by one parameter set.

use crate::autodiff::{Graph, Var};
use crate::checkpoint::TensorArchive;
use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How a clip's frames become encoder input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// One row per frame. Order-blind once logits are averaged.
    #[default]
    FrameMlp,
    /// One row per consecutive frame pair: `[f_t, f_{t+1} − f_t]`.
    TemporalDiff,
}

impl EncoderKind {
    pub fn input_dim(self, pixels: usize) -> usize {
        match self {
            EncoderKind::FrameMlp => pixels,
            EncoderKind::TemporalDiff => 2 * pixels,
        }
    }

    /// Input rows produced by a clip of `frames` frames.
    pub fn rows_for(self, frames: usize) -> usize {
        match self {
            EncoderKind::FrameMlp => frames,
            EncoderKind::TemporalDiff => frames.saturating_sub(1),
        }
    }
}

/// Fixed per-frame preprocessing applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// Raw pixel values.
    None,
    /// Each frame shifted to zero mean and scaled to unit variance.
    #[default]
    Frame,
}

impl InputNorm {
    fn apply(self, frame: &[f64], out: &mut Vec<f64>) {
        match self {
            InputNorm::None => out.extend_from_slice(frame),
            InputNorm::Frame => {
                let n = frame.len() as f64;
                let mean = frame.iter().sum::<f64>() / n;
                let var = frame.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let inv = 1.0 / var.sqrt().max(1e-6);
                out.extend(frame.iter().map(|x| (x - mean) * inv));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub kind: EncoderKind,
    pub norm: InputNorm,
    pub pixels: usize,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

/// Graph handles for one binding of [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
}

/// The `C`-dimensional representation of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRepresentation {
    pub logits: Vec<f64>,
}

/// He-uniform gain for ReLU layers; the output layer uses gain 1.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Weights `U(−a, a)` with `a = gain·√(3 / fan_in)` (variance
/// `gain² / fan_in`), biases zero.
pub fn init_params(kind: EncoderKind, pixels: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<EncoderParams> {
    if pixels == 0 || classes < 2 || hidden.contains(&0) {
        return Err(Error::config("encoder.hidden", "layer sizes must be positive and classes >= 2"));
    }
    let mut rng = rng::stream(seed, rng::Stream::Init);
    let mut dims = vec![kind.input_dim(pixels)];
    dims.extend_from_slice(hidden);
    dims.push(classes);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if i + 2 < dims.len() { RELU_GAIN } else { 1.0 };
            let a = gain * (3.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
            Layer {
                weight: Tensor::from_parts(vec![fan_in, fan_out], data),
                bias: Tensor::zeros(&[fan_out]),
            }
        })
        .collect();
    Ok(EncoderParams {
        kind,
        norm: InputNorm::default(),
        pixels,
        classes,
        layers,
    })
}

impl EncoderParams {
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect(),
        }
    }

    pub fn bind_constant(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            layers: self
                .layers
                .iter()
                .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
                .collect(),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// All parameters concatenated into one vector.
    pub fn to_flat(&self) -> Tensor {
        Tensor::vector(self.tensors().flat_map(|t| t.data().iter().copied()).collect())
    }

    /// Replaces all parameters from a vector laid out as [`Self::to_flat`].
    pub fn with_flat(&self, flat: &Tensor) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("with_flat", format!("{} values for {} params", flat.len(), self.num_params())));
        }
        let mut out = self.clone();
        let mut off = 0;
        for t in out.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat.data()[off..off + n]);
            off += n;
        }
        Ok(out)
    }

    /// Gradients of every parameter, in [`Self::tensors`] order.
    pub fn collect_grads(&self, vars: &ParamVars, grads: &crate::autodiff::Gradients) -> Vec<Tensor> {
        self.layers
            .iter()
            .zip(&vars.layers)
            .flat_map(|(l, &(w, b))| {
                [
                    grads.get_or_zeros(w, l.weight.shape()),
                    grads.get_or_zeros(b, l.bias.shape()),
                ]
            })
            .collect()
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "format": "tcl-encoder",
            "kind": self.kind,
            "norm": self.norm,
            "pixels": self.pixels,
            "classes": self.classes,
            "layers": self.layers.len(),
        })
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut tensors = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            tensors.push((format!("layer{i}.weight"), l.weight.clone()));
            tensors.push((format!("layer{i}.bias"), l.bias.clone()));
        }
        TensorArchive {
            meta: self.meta(),
            tensors,
        }
    }

    pub fn from_archive(a: &TensorArchive, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.into(),
            reason,
        };
        let field = |k: &str| a.meta.get(k).cloned().ok_or_else(|| bad(format!("metadata lacks `{k}`")));
        let kind: EncoderKind = serde_json::from_value(field("kind")?)?;
        let norm: InputNorm = serde_json::from_value(field("norm")?)?;
        let pixels: usize = serde_json::from_value(field("pixels")?)?;
        let classes: usize = serde_json::from_value(field("classes")?)?;
        let n: usize = serde_json::from_value(field("layers")?)?;
        let mut layers = Vec::with_capacity(n);
        let mut fan_in = kind.input_dim(pixels);
        for i in 0..n {
            let get = |s: &str| {
                a.get(&format!("layer{i}.{s}"))
                    .cloned()
                    .ok_or_else(|| bad(format!("missing layer{i}.{s}")))
            };
            let (weight, bias) = (get("weight")?, get("bias")?);
            let (wi, wo) = weight.dims2("checkpoint")?;
            if wi != fan_in || bias.shape() != [wo] {
                return Err(bad(format!("layer{i} has inconsistent shapes")));
            }
            fan_in = wo;
            layers.push(Layer { weight, bias });
        }
        if fan_in != classes {
            return Err(bad("output width differs from class count".into()));
        }
        Ok(Self {
            kind,
            norm,
            pixels,
            classes,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?, path)
    }
}

/// Encoder input rows for a set of clips, with the row count of each clip.
#[derive(Debug, Clone)]
pub struct ClipBatch {
    pub rows: Vec<f64>,
    pub lens: Vec<usize>,
    kind: EncoderKind,
    norm: InputNorm,
    pixels: usize,
}

impl ClipBatch {
    /// An empty batch laid out for `params`.
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            rows: Vec::new(),
            lens: Vec::new(),
            kind: params.kind,
            norm: params.norm,
            pixels: params.pixels,
        }
    }

    pub fn num_clips(&self) -> usize {
        self.lens.len()
    }

    pub fn width(&self) -> usize {
        self.kind.input_dim(self.pixels)
    }

    /// Appends a clip given as consecutive frames of `pixels` values each.
    pub fn push_frames(&mut self, frames: &[f64]) -> Result<()> {
        let pixels = self.pixels;
        if frames.is_empty() || !frames.len().is_multiple_of(pixels) {
            return Err(Error::shape(
                "encode_clip",
                format!("{} values is not a whole number of {pixels}-pixel frames", frames.len()),
            ));
        }
        let n = frames.len() / pixels;
        let mut normed = Vec::with_capacity(frames.len());
        for f in frames.chunks(pixels) {
            self.norm.apply(f, &mut normed);
        }
        match self.kind {
            EncoderKind::FrameMlp => {
                self.rows.extend_from_slice(&normed);
                self.lens.push(n);
            }
            EncoderKind::TemporalDiff => {
                if n < 2 {
                    return Err(Error::shape("encode_clip", "temporal encoder needs at least 2 frames"));
                }
                for t in 0..n - 1 {
                    let cur = &normed[t * pixels..(t + 1) * pixels];
                    let next = &normed[(t + 1) * pixels..(t + 2) * pixels];
                    self.rows.extend_from_slice(cur);
                    self.rows.extend(next.iter().zip(cur).map(|(b, a)| b - a));
                }
                self.lens.push(n - 1);
            }
        }
        Ok(())
    }

    pub fn push_video(&mut self, video: &VideoSample, indices: &[usize]) -> Result<()> {
        let mut buf = Vec::with_capacity(indices.len() * video.frame_len());
        video.extend_frames(indices, &mut buf);
        self.push_frames(&buf)
    }
}

/// Encodes every clip of `batch`: frame rows → MLP → per-clip mean of the
/// frame logits. Returns `[num_clips, C]`.
pub fn encode_clips(g: &mut Graph, params: &EncoderParams, vars: &ParamVars, batch: &ClipBatch) -> Result<Var> {
    let total: usize = batch.lens.iter().sum();
    let width = params.kind.input_dim(params.pixels);
    if batch.width() != width || batch.norm != params.norm || batch.rows.len() != total * width {
        return Err(Error::shape(
            "encode_clips",
            format!("input rows of width {} for an encoder expecting {width}", batch.width()),
        ));
    }
    let x = g.constant(Tensor::new(vec![total, width], batch.rows.clone())?);
    let mut h = x;
    for (i, &(w, b)) in vars.layers.iter().enumerate() {
        let z = g.matmul(h, w)?;
        h = g.add_bias(z, b)?;
        if i + 1 < vars.layers.len() {
            h = g.relu(h)?;
        }
    }
    g.segment_mean(h, batch.lens.clone())
}

/// Smallest `|pre-activation|` over all ReLU units for `batch`: the
/// distance to the nearest kink, used to keep finite-difference checks on
/// smooth ground.
pub fn relu_margin(params: &EncoderParams, batch: &ClipBatch) -> Result<f64> {
    let mut g = Graph::new();
    let vars = params.bind_constant(&mut g);
    let total: usize = batch.lens.iter().sum();
    let width = params.kind.input_dim(params.pixels);
    let mut h = g.constant(Tensor::new(vec![total, width], batch.rows.clone())?);
    let mut margin = f64::INFINITY;
    for &(w, b) in &vars.layers[..vars.layers.len() - 1] {
        let z = g.matmul(h, w)?;
        let z = g.add_bias(z, b)?;
        margin = g.value(z).data().iter().fold(margin, |m, v| m.min(v.abs()));
        h = g.relu(z)?;
    }
    Ok(margin)
}

/// Representation of a single clip given as stacked frames.
pub fn encode_clip(params: &EncoderParams, frames: &[f64]) -> Result<ClipRepresentation> {
    let mut batch = ClipBatch::new(params);
    batch.push_frames(frames)?;
    let mut g = Graph::new();
    let vars = params.bind_constant(&mut g);
    let out = encode_clips(&mut g, params, &vars, &batch)?;
    Ok(ClipRepresentation {
        logits: g.value(out).data().to_vec(),
    })
}

/// Logits of many clips without recording gradients, `chunk` clips at a
/// time.
pub fn infer_logits<'a>(
    params: &EncoderParams,
    clips: impl IntoIterator<Item = (&'a VideoSample, Vec<usize>)>,
    chunk: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let mut batch = ClipBatch::new(params);
    let flush = |batch: &mut ClipBatch, out: &mut Vec<Vec<f64>>| -> Result<()> {
        if batch.num_clips() == 0 {
            return Ok(());
        }
        let mut g = Graph::new();
        let vars = params.bind_constant(&mut g);
        let reps = encode_clips(&mut g, params, &vars, batch)?;
        let t = g.value(reps);
        out.extend((0..batch.num_clips()).map(|i| t.row(i).to_vec()));
        *batch = ClipBatch::new(params);
        Ok(())
    };
    for (video, indices) in clips {
        batch.push_video(video, &indices)?;
        if batch.num_clips() >= chunk {
            flush(&mut batch, &mut out)?;
        }
    }
    flush(&mut batch, &mut out)?;
    Ok(out)
}

/// Argmax class (ties go to the lowest index) and its softmax probability.
pub fn predict(rep: &ClipRepresentation) -> (usize, f64) {
    predict_logits(&rep.logits)
}

pub fn predict_logits(logits: &[f64]) -> (usize, f64) {
    let (class, &max) = logits
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
    let denom: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    (class, 1.0 / denom)
}
