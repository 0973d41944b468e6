//! Central finite differences and the randomized loss-gradient suite.

use crate::autodiff::{Graph, Var};
use crate::encoder::{encode_clips, init_params, relu_margin, ClipBatch, EncoderKind, EncoderParams};
use crate::error::{Error, Result};
use crate::losses::{
    assign_pseudo_labels, form_groups, group_contrastive_loss, instance_contrastive_loss, supervised_loss, total_loss,
    LossWeights, SimilarityConfig,
};
use crate::rng::stream_raw;
use crate::tensor::Tensor;
use rand::Rng as _;
use serde::Serialize;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference_gradient(mut f: impl FnMut(&Tensor) -> Result<f64>, x: &Tensor, step: f64) -> Result<Tensor> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite {
                op: "finite_difference_gradient",
            });
        }
        out.push((plus - minus) / (2.0 * step));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `max_i |a_i − n_i| / max(‖a‖∞, ‖n‖∞)`: the worst coordinate error
/// relative to the gradient's scale. Zero when both are identically zero.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> Result<f64> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape(
            "relative_error",
            format!("{:?} vs {:?}", analytic.shape(), numeric.shape()),
        ));
    }
    let inf = |t: &Tensor| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let worst = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    Ok(worst / scale)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Tensor,
    pub numeric: Tensor,
    pub rel_error: f64,
}

/// Compares backward against finite differences for a scalar function
/// built on a graph from the single input `x`.
pub fn check_graph_fn(f: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor, step: f64) -> Result<GradCheck> {
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    let analytic = g.backward(loss)?.get_or_zeros(xv, x.shape());
    let numeric = finite_difference_gradient(
        |p| {
            let mut g = Graph::new();
            let xv = g.param(p.clone());
            let l = f(&mut g, xv)?;
            Ok(g.value(l).item())
        },
        x,
        step,
    )?;
    let rel_error = relative_error(&analytic, &numeric)?;
    Ok(GradCheck {
        analytic,
        numeric,
        rel_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Supervised,
    Instance,
    Group,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Supervised, LossKind::Instance, LossKind::Group, LossKind::Total];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Supervised => "L_sup",
            LossKind::Instance => "L_ic",
            LossKind::Group => "L_gc",
            LossKind::Total => "total",
        }
    }
}

/// One random problem: an encoder, labeled clips and fast/slow clips of
/// `B` unlabeled videos, with pseudo-labels frozen at the base point.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub params: EncoderParams,
    pub labeled: ClipBatch,
    pub labels: Vec<usize>,
    pub fast: ClipBatch,
    pub slow: ClipBatch,
    pub fast_labels: Vec<usize>,
    pub slow_labels: Vec<usize>,
}

impl GradInstance {
    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.params.classes
    }

    fn loss(&self, g: &mut Graph, params: &EncoderParams, kind: LossKind, cfg: &SimilarityConfig) -> Result<(Var, Vec<(Var, Var)>)> {
        let vars = params.bind(g);
        let mut sup = || -> Result<Var> {
            let z = encode_clips(g, params, &vars, &self.labeled)?;
            supervised_loss(g, z, &self.labels)
        };
        let loss = match kind {
            LossKind::Supervised => sup()?,
            _ => {
                let sup_v = if kind == LossKind::Total { Some(sup()?) } else { None };
                let f = encode_clips(g, params, &vars, &self.fast)?;
                let s = encode_clips(g, params, &vars, &self.slow)?;
                let ic = instance_contrastive_loss(g, f, s, cfg)?;
                let groups = form_groups(g, f, s, &self.fast_labels, &self.slow_labels)?;
                let gc = group_contrastive_loss(g, &groups, cfg)?.loss;
                match kind {
                    LossKind::Instance => ic,
                    LossKind::Group => gc,
                    _ => total_loss(g, sup_v.expect("set for total"), ic, gc, &LossWeights::default())?,
                }
            }
        };
        Ok((loss, vars.layers))
    }

    /// Analytic gradient of `kind` with respect to all encoder parameters,
    /// laid out like [`EncoderParams::to_flat`].
    pub fn analytic_gradient(&self, kind: LossKind, cfg: &SimilarityConfig) -> Result<Tensor> {
        let mut g = Graph::new();
        let (loss, layers) = self.loss(&mut g, &self.params, kind, cfg)?;
        let grads = g.backward(loss)?;
        let vars = crate::encoder::ParamVars { layers };
        let flat = self
            .params
            .collect_grads(&vars, &grads)
            .into_iter()
            .flat_map(Tensor::into_data)
            .collect();
        Ok(Tensor::vector(flat))
    }

    pub fn loss_value(&self, params: &EncoderParams, kind: LossKind, cfg: &SimilarityConfig) -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = self.loss(&mut g, params, kind, cfg)?;
        Ok(g.value(loss).item())
    }

    pub fn check(&self, kind: LossKind, cfg: &SimilarityConfig, step: f64) -> Result<GradCheck> {
        let analytic = self.analytic_gradient(kind, cfg)?;
        let numeric = finite_difference_gradient(
            |flat| self.loss_value(&self.params.with_flat(flat)?, kind, cfg),
            &self.params.to_flat(),
            step,
        )?;
        let rel_error = relative_error(&analytic, &numeric)?;
        Ok(GradCheck {
            analytic,
            numeric,
            rel_error,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub step: f64,
    pub pixels: usize,
    pub hidden: Vec<usize>,
    pub fast_frames: usize,
    pub slow_frames: usize,
    pub batch_sizes: Vec<usize>,
    pub class_counts: Vec<usize>,
    /// Instances whose ReLU pre-activations come closer than this to zero
    /// are redrawn, so no probe crosses a kink.
    pub min_relu_margin: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            instances: 120,
            seed: 0,
            step: DEFAULT_STEP,
            pixels: 6,
            hidden: vec![5],
            fast_frames: 4,
            slow_frames: 2,
            batch_sizes: vec![2, 3, 4],
            class_counts: vec![3, 8],
            min_relu_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossSummary {
    pub loss: LossKind,
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    /// Draws rejected for lying near a ReLU kink or having a degenerate
    /// group loss.
    pub redraws: usize,
    /// Instances with at least one pseudo-label group of two or more.
    pub multi_member_groups: usize,
    pub losses: Vec<LossSummary>,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.losses.iter().fold(0.0, |m, l| m.max(l.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.losses.iter().all(|l| l.max_rel_error < self.tolerance)
    }
}

fn random_clips(rng: &mut crate::rng::Rng, params: &EncoderParams, clips: usize, frames: usize) -> Result<ClipBatch> {
    let mut batch = ClipBatch::new(params);
    for _ in 0..clips {
        let f: Vec<f64> = (0..frames * params.pixels).map(|_| rng.random::<f64>()).collect();
        batch.push_frames(&f)?;
    }
    Ok(batch)
}

/// Draws instance `index` of the suite: `B` and `C` cycle through the
/// configured values; draws are repeated until the group loss is
/// non-degenerate and every ReLU is at least `min_relu_margin` from its kink.
pub fn draw_instance(cfg: &SuiteConfig, index: usize) -> Result<(GradInstance, usize)> {
    let b = cfg.batch_sizes[index % cfg.batch_sizes.len()];
    let c = cfg.class_counts[(index / cfg.batch_sizes.len()) % cfg.class_counts.len()];
    let mut rng = stream_raw(cfg.seed, 1000 + index as u64);
    let sim = SimilarityConfig::default();
    let kind = EncoderKind::FrameMlp;
    for attempt in 0..10_000 {
        let params = init_params(kind, cfg.pixels, &cfg.hidden, c, rng.random())?;
        // non-zero biases so their gradients are exercised at a generic point
        let mut params = params;
        for layer in &mut params.layers {
            for v in layer.bias.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let labeled = random_clips(&mut rng, &params, b, cfg.fast_frames)?;
        let fast = random_clips(&mut rng, &params, b, cfg.fast_frames)?;
        let slow = random_clips(&mut rng, &params, b, cfg.slow_frames)?;
        let labels = (0..b).map(|_| rng.random_range(0..c)).collect();
        let margin = [&labeled, &fast, &slow]
            .into_iter()
            .map(|batch| relu_margin(&params, batch))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if margin < cfg.min_relu_margin {
            continue;
        }
        let mut g = Graph::new();
        let vars = params.bind_constant(&mut g);
        let f = encode_clips(&mut g, &params, &vars, &fast)?;
        let s = encode_clips(&mut g, &params, &vars, &slow)?;
        let fast_labels = assign_pseudo_labels(g.value(f))?;
        let slow_labels = assign_pseudo_labels(g.value(s))?;
        let groups = form_groups(&mut g, f, s, &fast_labels, &slow_labels)?;
        if group_contrastive_loss(&mut g, &groups, &sim)?.degenerate {
            continue;
        }
        let inst = GradInstance {
            params,
            labeled,
            labels,
            fast,
            slow,
            fast_labels,
            slow_labels,
        };
        return Ok((inst, attempt));
    }
    Err(Error::InvalidArgument(format!(
        "no usable gradient-check instance for B={b}, C={c}"
    )))
}

/// Checks every loss on `cfg.instances` random instances.
pub fn run_gradient_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.batch_sizes.is_empty() || cfg.class_counts.is_empty() {
        return Err(Error::config("gradcheck", "batch sizes and class counts must be non-empty"));
    }
    let sim = SimilarityConfig::default();
    let mut worst = [0.0f64; 4];
    let mut redraws = 0;
    let mut multi = 0;
    for i in 0..cfg.instances {
        let (inst, extra) = draw_instance(cfg, i)?;
        redraws += extra;
        let has_multi = |labels: &[usize]| {
            let mut sorted = labels.to_vec();
            sorted.sort_unstable();
            sorted.windows(2).any(|w| w[0] == w[1])
        };
        if has_multi(&inst.fast_labels) || has_multi(&inst.slow_labels) {
            multi += 1;
        }
        for (k, kind) in LossKind::ALL.into_iter().enumerate() {
            let r = inst.check(kind, &sim, cfg.step)?;
            worst[k] = worst[k].max(r.rel_error);
        }
    }
    let losses = LossKind::ALL
        .into_iter()
        .zip(worst)
        .map(|(loss, max_rel_error)| LossSummary {
            loss,
            name: loss.name(),
            max_rel_error,
            checks: cfg.instances,
        })
        .collect();
    Ok(SuiteReport {
        instances: cfg.instances,
        redraws,
        multi_member_groups: multi,
        losses,
        tolerance: TOLERANCE,
    })
}

/// One autodiff operation checked in isolation.
#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub rel_error: f64,
}

type OpFn = fn(&mut Graph, Var, Var) -> Result<Var>;

/// Every differentiable graph operation, each applied to a random `[3, 4]`
/// input (kept away from ReLU's kink, positive where the op needs it) and
/// contracted against fixed random weights to a scalar. The second argument
/// is a fixed constant operand of the same shape.
pub fn run_op_suite(seed: u64, step: f64) -> Result<Vec<OpCheck>> {
    let ops: [(&'static str, bool, OpFn); 22] = [
        ("add", false, |g, x, c| g.add(x, c)),
        ("sub", false, |g, x, c| g.sub(c, x)),
        ("mul", false, |g, x, c| g.mul(x, c)),
        ("scale", false, |g, x, _| g.scale(x, -1.7)),
        ("add_scalar", false, |g, x, _| g.add_scalar(x, 0.3)),
        ("neg", false, |g, x, _| g.neg(x)),
        ("relu", false, |g, x, _| g.relu(x)),
        ("exp", false, |g, x, _| g.exp(x)),
        ("log", true, |g, x, _| g.log(x)),
        ("reciprocal", true, |g, x, _| g.reciprocal(x)),
        ("matmul", false, |g, x, c| {
            let ct = g.transpose(c)?;
            g.matmul(x, ct)
        }),
        ("matmul_bt", false, |g, x, c| g.matmul_bt(c, x)),
        ("transpose", false, |g, x, _| g.transpose(x)),
        ("add_bias", false, |g, x, c| {
            let row = g.slice_rows(x, 0, 1)?;
            let bias = g.sum_axis(row, 0)?;
            g.add_bias(c, bias)
        }),
        ("row_scale", false, |g, x, c| {
            let s = g.sum_axis(x, 1)?;
            g.row_scale(c, s)
        }),
        ("sum", false, |g, x, _| g.sum(x)),
        ("mean_axis", false, |g, x, _| g.mean_axis(x, 0)),
        ("log_sum_exp", false, |g, x, _| g.log_sum_exp(x)),
        ("l2_norm", false, |g, x, _| g.l2_norm(x, 1e-8)),
        ("concat", false, |g, x, c| g.concat(&[c, x, x])),
        ("gather", false, |g, x, _| g.gather(x, vec![11, 0, 5, 5, 7, 2], vec![2, 3])),
        ("segment_mean", false, |g, x, _| g.segment_mean(x, vec![1, 2])),
    ];
    let mut rng = stream_raw(seed, 2000);
    let mut out = Vec::with_capacity(ops.len());
    for (name, positive, op) in ops {
        let x: Vec<f64> = (0..12)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if positive || rng.random::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = Tensor::matrix(3, 4, x)?;
        let c = Tensor::matrix(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let check = check_graph_fn(
            |g, xv| {
                let cv = g.constant(c.clone());
                let y = op(g, xv, cv)?;
                let shape = g.value(y).shape().to_vec();
                let n = g.value(y).len();
                let wv = g.constant(Tensor::new(shape, w[..n].to_vec())?);
                let prod = g.mul(y, wv)?;
                g.sum(prod)
            },
            &x,
            step,
        )?;
        out.push(OpCheck {
            op: name,
            rel_error: check.rel_error,
        });
    }
    Ok(out)
}
