use super::{Domain, VideoSample};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Appearance of the moving blob.
///
/// Each frame draws the blob at its current position plus `trail_len`
/// fading copies at earlier sub-frame positions, so a single frame shows
/// which way the blob is heading and how fast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub blob_sigma: f64,
    pub background: f64,
    pub amplitude: f64,
    pub noise_std: f64,
    pub trail_len: usize,
    /// Frames between consecutive trail copies.
    pub trail_step: f64,
    pub trail_decay: f64,
    /// Rotation of every class direction, as a fraction of the angle
    /// between neighbouring classes.
    pub direction_offset: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            blob_sigma: 1.0,
            background: 0.1,
            amplitude: 0.8,
            noise_std: 0.1,
            trail_len: 4,
            trail_step: 0.5,
            trail_decay: 0.6,
            direction_offset: 0.5,
        }
    }
}

/// Arguments of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_videos: usize,
    pub classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Pixels per frame.
    pub speeds: Vec<f64>,
    pub domain: Domain,
    pub seed: u64,
    pub first_id: u64,
    pub render: RenderParams,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_videos: 2000,
            classes: 8,
            frames: 32,
            height: 16,
            width: 16,
            speeds: vec![1.0, 2.0, 3.0],
            domain: Domain::Target,
            seed: 0,
            first_id: 0,
            render: RenderParams::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, r: &str| Err(Error::config(k, r));
        if self.classes < 2 {
            return bad("classes", "need at least 2 classes");
        }
        if self.frames < 8 {
            return bad("frames", "need at least 8 frames per video");
        }
        if self.num_videos == 0 {
            return bad("num_videos", "must be positive");
        }
        if self.speeds.is_empty() || self.speeds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("speeds", "speeds must be positive");
        }
        let r = &self.render;
        if !(r.blob_sigma > 0.0) {
            return bad("render.blob_sigma", "must be positive");
        }
        // ±3σ must fit inside the frame
        if 6.0 * r.blob_sigma > self.height.min(self.width) as f64 {
            return bad("render.blob_sigma", "blob larger than frame");
        }
        if !(r.noise_std >= 0.0) || !(r.trail_step >= 0.0) || !(0.0..=1.0).contains(&r.trail_decay) {
            return bad("render", "noise, trail step and decay must be non-negative (decay <= 1)");
        }
        if !(0.0..1.0).contains(&r.direction_offset) {
            return bad("render.direction_offset", "must lie in [0, 1)");
        }
        Ok(())
    }

    /// Unit step of class `c` in (column, row) coordinates.
    pub fn direction(&self, class: usize) -> (f64, f64) {
        let theta = 2.0 * PI * (class as f64 + self.render.direction_offset) / self.classes as f64;
        (theta.cos(), theta.sin())
    }
}

/// Offset from `to` to `from` on a ring of size `n`, in `[-n/2, n/2)`.
fn wrapped(from: f64, to: f64, n: f64) -> f64 {
    (from - to + n / 2.0).rem_euclid(n) - n / 2.0
}

/// Generates `spec.num_videos` videos of a blob drifting across a toroidal
/// canvas. Class `c` moves along angle `2π(c + offset)/C`; speed is drawn per video
/// from `spec.speeds`. Classes are balanced (`id % C`). The shifted domain
/// inverts contrast and doubles the noise amplitude.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<VideoSample>> {
    spec.validate()?;
    let mut rng = rng::stream_raw(spec.seed, 0);
    let (h, w, l) = (spec.height, spec.width, spec.frames);
    let r = &spec.render;
    let noise_std = match spec.domain {
        Domain::Target => r.noise_std,
        Domain::Shifted => 2.0 * r.noise_std,
    };
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let inv_two_var = 1.0 / (2.0 * r.blob_sigma * r.blob_sigma);

    let mut videos = Vec::with_capacity(spec.num_videos);
    let mut intensity = vec![0.0f64; h * w];
    for i in 0..spec.num_videos {
        let class = i % spec.classes;
        let speed = spec.speeds[rng.random_range(0..spec.speeds.len())];
        let x0 = rng.random::<f64>() * w as f64;
        let y0 = rng.random::<f64>() * h as f64;
        let (dx, dy) = spec.direction(class);

        let mut frames = Vec::with_capacity(l * h * w);
        for t in 0..l {
            intensity.iter_mut().for_each(|v| *v = 0.0);
            let mut weight = 1.0;
            for k in 0..=r.trail_len {
                let tt = t as f64 - k as f64 * r.trail_step;
                let cx = x0 + speed * tt * dx;
                let cy = y0 + speed * tt * dy;
                for row in 0..h {
                    let ry = wrapped(row as f64, cy, h as f64);
                    for col in 0..w {
                        let rx = wrapped(col as f64, cx, w as f64);
                        intensity[row * w + col] += weight * (-(rx * rx + ry * ry) * inv_two_var).exp();
                    }
                }
                weight *= r.trail_decay;
            }
            for &v in &intensity {
                let mut clean = r.background + r.amplitude * v.min(1.0);
                if spec.domain == Domain::Shifted {
                    clean = 1.0 - clean;
                }
                let p = (clean + noise.sample(&mut rng)).clamp(0.0, 1.0);
                frames.push(p as f32);
            }
        }
        videos.push(VideoSample::new(
            spec.first_id + i as u64,
            class,
            spec.domain,
            speed,
            (l, h, w),
            frames,
        ));
    }
    Ok(videos)
}
