//! Brute-force reference implementations, written as literal ratios of
//! exponentials over plain slices and sharing no code with the library.

#![allow(dead_code)]

use rand::Rng;
use tcl_core::rng::stream_raw;
use tcl_core::Tensor;

pub const TAU: f64 = 0.5;

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (n, c) = (t.shape()[0], t.shape()[1]);
    (0..n).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn h(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    (dot / (nu * nv) / TAU).exp()
}

/// Mean over anchors of `−log(h(a, p) / Σ_{j ≠ a} h(a, j))` where the
/// candidate set is `items` and `pairs` lists `(anchor, positive)`.
fn ratio_loss(items: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for &(a, p) in pairs {
        let num = h(&items[a], &items[p]);
        let den: f64 = (0..items.len()).filter(|&j| j != a).map(|j| h(&items[a], &items[j])).sum();
        total += -(num / den).ln();
    }
    total / pairs.len() as f64
}

pub fn instance_loss(fast: &[Vec<f64>], slow: &[Vec<f64>]) -> f64 {
    let b = fast.len();
    let items: Vec<Vec<f64>> = fast.iter().chain(slow).cloned().collect();
    let mut pairs = Vec::new();
    for i in 0..b {
        pairs.push((i, b + i));
    }
    for i in 0..b {
        pairs.push((b + i, i));
    }
    ratio_loss(&items, &pairs)
}

fn group_means(reps: &[Vec<f64>], labels: &[usize], classes: usize) -> Vec<(usize, Vec<f64>)> {
    let dim = reps[0].len();
    let mut out = Vec::new();
    for label in 0..classes {
        let members: Vec<&Vec<f64>> = reps.iter().zip(labels).filter(|(_, &l)| l == label).map(|(r, _)| r).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for m in &members {
            for k in 0..dim {
                mean[k] += m[k];
            }
        }
        for v in &mut mean {
            *v /= members.len() as f64;
        }
        out.push((label, mean));
    }
    out
}

/// Group loss with the given pseudo-labels; `None` when no label is shared
/// by both pathways or fewer than three groups exist.
pub fn group_loss(fast: &[Vec<f64>], slow: &[Vec<f64>], fl: &[usize], sl: &[usize], classes: usize) -> Option<f64> {
    let gf = group_means(fast, fl, classes);
    let gs = group_means(slow, sl, classes);
    let nf = gf.len();
    let items: Vec<Vec<f64>> = gf.iter().chain(&gs).map(|(_, m)| m.clone()).collect();
    let mut fwd = Vec::new();
    let mut back = Vec::new();
    for (i, (lf, _)) in gf.iter().enumerate() {
        for (j, (ls, _)) in gs.iter().enumerate() {
            if lf == ls {
                fwd.push((i, nf + j));
                back.push((nf + j, i));
            }
        }
    }
    fwd.extend(back);
    if fwd.is_empty() || items.len() < 3 {
        return None;
    }
    Some(ratio_loss(&items, &fwd))
}

pub fn argmax(r: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in r.iter().enumerate() {
        if v > r[best] {
            best = i;
        }
    }
    best
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> Tensor {
    let mut rng = stream_raw(seed, stream);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}
