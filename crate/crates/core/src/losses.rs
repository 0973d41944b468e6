//! Supervised, instance-contrastive and group-contrastive objectives.
//!
//! Both contrastive losses share one form. For an anchor row `a` of a
//! stacked representation matrix with positive row `p`, the term is
//!
//! ```text
//! −log( h(a, p) / Σ_{j ≠ a} h(a, j) ),   h(u, v) = exp(cos(u, v) / τ)
//! ```
//!
//! where the denominator runs over the positive and every negative. It is
//! evaluated as `LSE_{j≠a}(s_aj) − s_ap` on the cosine logits
//! `s = cos / τ`, never as a ratio of exponentials.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Temperature and zero-norm guard of the cosine kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub temperature: f64,
    pub epsilon: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            epsilon: 1e-12,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("tau", "temperature must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// `γ` and `β` of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma: 9.0, beta: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", "must be non-negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be non-negative"));
        }
        Ok(())
    }

    /// `sup + γ·ic + β·gc`.
    pub fn combine(&self, sup: f64, ic: f64, gc: f64) -> Result<f64> {
        if ![sup, ic, gc].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "total_loss" });
        }
        Ok(sup + self.gamma * ic + self.beta * gc)
    }
}

/// Individual loss values of one step, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup: f64,
    pub ic: f64,
    pub gc: f64,
    pub total: f64,
}

fn cosine(u: &[f64], v: &[f64], eps: f64) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(eps);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(eps);
    dot / (nu * nv)
}

/// `h(u, v) = exp(cos(u, v) / τ)`, with norms clamped below by `ε`.
pub fn similarity(u: &[f64], v: &[f64], cfg: &SimilarityConfig) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("similarity", format!("{} vs {}", u.len(), v.len())));
    }
    cfg.validate()?;
    Ok((cosine(u, v, cfg.epsilon) / cfg.temperature).exp())
}

/// Pairwise cosine logits `cos(z_i, z_j) / τ` of the rows of `z: [n, d]`.
pub fn cosine_logits(g: &mut Graph, z: Var, cfg: &SimilarityConfig) -> Result<Var> {
    let norms = g.l2_norm(z, cfg.epsilon)?;
    let inv = g.reciprocal(norms)?;
    let unit = g.row_scale(z, inv)?;
    let sims = g.matmul_bt(unit, unit)?;
    g.scale(sims, 1.0 / cfg.temperature)
}

/// Mean over `(anchor, positive)` pairs of `LSE_{j≠anchor}(s_aj) − s_ap`
/// for the square logit matrix `s: [n, n]`.
pub fn contrastive_terms_mean(g: &mut Graph, logits: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let (n, n2) = g.value(logits).dims2("contrastive")?;
    if n != n2 || n < 3 || pairs.is_empty() {
        return Err(Error::shape("contrastive", format!("{n}x{n2} logits with {} pairs", pairs.len())));
    }
    let mut candidates = Vec::with_capacity(pairs.len() * (n - 1));
    let mut positives = Vec::with_capacity(pairs.len());
    for &(a, p) in pairs {
        if a == p || a >= n || p >= n {
            return Err(Error::shape("contrastive", format!("pair ({a}, {p}) of {n} rows")));
        }
        candidates.extend((0..n).filter(|&j| j != a).map(|j| a * n + j));
        positives.push(a * n + p);
    }
    let k = pairs.len();
    let cand = g.gather(logits, candidates, vec![k, n - 1])?;
    let lse = g.log_sum_exp(cand)?;
    let pos = g.gather(logits, positives, vec![k])?;
    let terms = g.sub(lse, pos)?;
    g.mean(terms)
}

/// Mean cross-entropy of `logits: [B, C]` against `labels`.
pub fn supervised_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = g.value(logits).dims2("supervised_loss")?;
    if labels.len() != b {
        return Err(Error::shape("supervised_loss", format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{c}")));
    }
    let lse = g.log_sum_exp(logits)?;
    let picked = g.gather(logits, labels.iter().enumerate().map(|(i, &l)| i * c + l).collect(), vec![b])?;
    let nll = g.sub(lse, picked)?;
    g.mean(nll)
}

/// Instance-contrastive loss over `B` videos seen by both pathways.
///
/// Anchors are every fast and every slow representation; the positive of
/// fast `i` is slow `i` and vice versa, negatives are both pathways'
/// representations of the other `B − 1` videos. Returns the mean over
/// all `2B` terms.
pub fn instance_contrastive_loss(g: &mut Graph, fast: Var, slow: Var, cfg: &SimilarityConfig) -> Result<Var> {
    let (b, c) = g.value(fast).dims2("instance_contrastive")?;
    if g.value(slow).shape() != [b, c] {
        return Err(Error::shape(
            "instance_contrastive",
            format!("fast [{b}, {c}] vs slow {:?}", g.value(slow).shape()),
        ));
    }
    if b < 2 {
        return Err(Error::InvalidArgument("instance-contrastive loss needs B >= 2".into()));
    }
    cfg.validate()?;
    let z = g.concat(&[fast, slow])?;
    let s = cosine_logits(g, z, cfg)?;
    let pairs: Vec<(usize, usize)> = (0..b).map(|i| (i, b + i)).chain((0..b).map(|i| (b + i, i))).collect();
    contrastive_terms_mean(g, s, &pairs)
}

/// Argmax of every row, ties to the lowest index. Purely a value
/// computation: nothing here is differentiated.
pub fn assign_pseudo_labels(reps: &Tensor) -> Result<Vec<usize>> {
    let (b, _) = reps.dims2("assign_pseudo_labels")?;
    Ok((0..b).map(|i| crate::encoder::predict_logits(reps.row(i)).0).collect())
}

/// One pseudo-label group of a pathway.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: usize,
    pub members: Vec<usize>,
    /// Mean of the members' representations.
    pub mean: Vec<f64>,
}

/// Groups of both pathways and their mean representations stacked as a
/// graph node: rows `0..fast.len()` are fast groups, then slow groups,
/// each side in ascending label order.
#[derive(Debug, Clone)]
pub struct GroupSet {
    pub fast: Vec<Group>,
    pub slow: Vec<Group>,
    pub stacked: Var,
}

impl GroupSet {
    pub fn len(&self) -> usize {
        self.fast.len() + self.slow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(anchor, positive)` rows for every label present in both
    /// pathways, fast-anchored then slow-anchored.
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        let nf = self.fast.len();
        let mut fwd = Vec::new();
        let mut back = Vec::new();
        for (i, gf) in self.fast.iter().enumerate() {
            if let Some(j) = self.slow.iter().position(|gs| gs.label == gf.label) {
                fwd.push((i, nf + j));
                back.push((nf + j, i));
            }
        }
        fwd.extend(back);
        fwd
    }
}

fn group_indices(labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    by_label.into_iter().collect()
}

/// Averages each pathway's representations per pseudo-label. Gradients
/// flow through the means into every member.
pub fn form_groups(g: &mut Graph, fast: Var, slow: Var, fast_labels: &[usize], slow_labels: &[usize]) -> Result<GroupSet> {
    let mut parts = Vec::new();
    let mut sides = Vec::new();
    for (reps, labels) in [(fast, fast_labels), (slow, slow_labels)] {
        let (b, c) = g.value(reps).dims2("form_groups")?;
        if labels.len() != b {
            return Err(Error::shape("form_groups", format!("{} labels for {b} rows", labels.len())));
        }
        let groups = group_indices(labels);
        let order: Vec<usize> = groups
            .iter()
            .flat_map(|(_, m)| m.iter().flat_map(|&i| (0..c).map(move |k| i * c + k)))
            .collect();
        let sorted = g.gather(reps, order, vec![b, c])?;
        let means = g.segment_mean(sorted, groups.iter().map(|(_, m)| m.len()).collect())?;
        let values = g.value(means);
        let side: Vec<Group> = groups
            .into_iter()
            .enumerate()
            .map(|(r, (label, members))| Group {
                label,
                members,
                mean: values.row(r).to_vec(),
            })
            .collect();
        parts.push(means);
        sides.push(side);
    }
    let stacked = g.concat(&parts)?;
    let slow_groups = sides.pop().unwrap();
    let fast_groups = sides.pop().unwrap();
    Ok(GroupSet {
        fast: fast_groups,
        slow: slow_groups,
        stacked,
    })
}

/// Result of [`group_contrastive_loss`].
#[derive(Debug, Clone, Copy)]
pub struct GroupLoss {
    pub loss: Var,
    /// No label appears in both pathways, or no anchor has a negative; the
    /// loss is then exactly zero.
    pub degenerate: bool,
    pub terms: usize,
}

/// Group-contrastive loss: the instance form applied to group means.
/// Positives pair the fast and slow groups of a shared label; negatives
/// of an anchor are all other existing groups of both pathways.
pub fn group_contrastive_loss(g: &mut Graph, groups: &GroupSet, cfg: &SimilarityConfig) -> Result<GroupLoss> {
    cfg.validate()?;
    let pairs = groups.positive_pairs();
    // every anchor sees all groups except itself and its positive
    if pairs.is_empty() || groups.len() < 3 {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(GroupLoss {
            loss: zero,
            degenerate: true,
            terms: 0,
        });
    }
    let s = cosine_logits(g, groups.stacked, cfg)?;
    let loss = contrastive_terms_mean(g, s, &pairs)?;
    Ok(GroupLoss {
        loss,
        degenerate: false,
        terms: pairs.len(),
    })
}

/// `sup + γ·ic + β·gc` as a graph node.
pub fn total_loss(g: &mut Graph, sup: Var, ic: Var, gc: Var, w: &LossWeights) -> Result<Var> {
    for v in [sup, ic, gc] {
        if !g.value(v).item().is_finite() {
            return Err(Error::NonFinite { op: "total_loss" });
        }
    }
    let ic = g.scale(ic, w.gamma)?;
    let gc = g.scale(gc, w.beta)?;
    let t = g.add(sup, ic)?;
    g.add(t, gc)
}

/// Value-only instance loss for `[B, C]` tensors.
pub fn instance_contrastive_value(fast: &Tensor, slow: &Tensor, cfg: &SimilarityConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (f, s) = (g.constant(fast.clone()), g.constant(slow.clone()));
    let l = instance_contrastive_loss(&mut g, f, s, cfg)?;
    Ok(g.value(l).item())
}

/// Value-only group loss, with pseudo-labels taken from the
/// representations themselves.
pub fn group_contrastive_value(fast: &Tensor, slow: &Tensor, cfg: &SimilarityConfig) -> Result<f64> {
    let (fl, sl) = (assign_pseudo_labels(fast)?, assign_pseudo_labels(slow)?);
    group_contrastive_value_with(fast, slow, &fl, &sl, cfg)
}

pub fn group_contrastive_value_with(
    fast: &Tensor,
    slow: &Tensor,
    fast_labels: &[usize],
    slow_labels: &[usize],
    cfg: &SimilarityConfig,
) -> Result<f64> {
    let mut g = Graph::new();
    let (f, s) = (g.constant(fast.clone()), g.constant(slow.clone()));
    let groups = form_groups(&mut g, f, s, fast_labels, slow_labels)?;
    let l = group_contrastive_loss(&mut g, &groups, cfg)?;
    Ok(g.value(l.loss).item())
}
