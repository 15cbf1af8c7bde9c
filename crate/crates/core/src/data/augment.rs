use rand::Rng;
use serde::{Deserialize, Serialize};

/// Random flips and per-channel color jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Channel scale drawn from `[1 − s, 1 + s]`.
    pub scale_jitter: f64,
    /// Channel shift drawn from `[−t, t]`.
    pub shift_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            scale_jitter: 0.2,
            shift_jitter: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            scale_jitter: 0.0,
            shift_jitter: 0.0,
        }
    }
}

fn jitter(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Augments a planar `[3, size, size]` image; output is clamped to `[0, 1]`.
pub fn augment(image: &[f32], size: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let hflip = rng.gen_bool(cfg.hflip_prob.clamp(0.0, 1.0));
    let vflip = rng.gen_bool(cfg.vflip_prob.clamp(0.0, 1.0));
    let n = size * size;
    let mut out = vec![0.0f32; image.len()];
    for c in 0..image.len() / n {
        let scale = 1.0 + jitter(rng, cfg.scale_jitter);
        let shift = jitter(rng, cfg.shift_jitter);
        for r in 0..size {
            let sr = if vflip { size - 1 - r } else { r };
            for col in 0..size {
                let sc = if hflip { size - 1 - col } else { col };
                let v = image[c * n + sr * size + sc] as f64 * scale + shift;
                out[c * n + r * size + col] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}
