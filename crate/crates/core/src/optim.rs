//! SGD with classic momentum and per-stage cosine learning-rate decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub finetune_lr: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.02,
            finetune_lr: 0.002,
            momentum: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("optimizer.base_lr", "must be positive"));
        }
        if !(self.finetune_lr > 0.0 && self.finetune_lr.is_finite()) {
            return Err(Error::config("optimizer.finetune_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// `base · ½(1 + cos(π · epoch / total))`.
pub fn cosine_lr(base_lr: f64, epoch: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidArgument("cosine schedule over zero epochs".into()));
    }
    if epoch >= total {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside schedule of {total}")));
    }
    let progress = epoch as f64 / total as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// One momentum step, in place:
/// `buf ← momentum·buf + grad; param ← param − lr·buf`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[Tensor], buffers: &mut [Tensor], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != buffers.len() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} params, {} grads, {} buffers", params.len(), grads.len(), buffers.len()),
        ));
    }
    for ((p, g), b) in params.iter().zip(grads).zip(buffers.iter()) {
        if p.shape() != g.shape() || p.shape() != b.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("param {:?}, grad {:?}, buffer {:?}", p.shape(), g.shape(), b.shape()),
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { op: "sgd_step" });
        }
    }
    for ((p, g), b) in params.iter_mut().zip(grads).zip(buffers.iter_mut()) {
        for ((pv, &gv), bv) in p.data_mut().iter_mut().zip(g.data()).zip(b.data_mut()) {
            *bv = momentum * *bv + gv;
            *pv -= lr * *bv;
        }
    }
    Ok(())
}
