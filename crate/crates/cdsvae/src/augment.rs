//! Content and motion augmentations for blob sequences.
//!
//! The content augmentation permutes frame order and leaves pixels alone,
//! so the static factor (appearance) survives while dynamics are destroyed.
//! The motion augmentation applies one appearance transform per sequence
//! (intensity scale, additive pixel noise, optional polarity inversion),
//! so the trajectory survives while appearance changes. Crops and blurs
//! are deliberately avoided: at 16x16 they would smear the blob position
//! and break the trajectory-preservation contract.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::synthseq::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentMode {
    /// Reverse frame order.
    Reverse,
    /// Uniformly random non-identity permutation of frame order.
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub content_mode: ContentMode,
    pub scale_lo: f32,
    pub scale_hi: f32,
    pub noise_sigma: f32,
    pub invert_prob: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            content_mode: ContentMode::Shuffle,
            scale_lo: 0.8,
            scale_hi: 1.2,
            noise_sigma: 0.05,
            invert_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_lo > 0.0 && self.scale_lo.is_finite()) {
            return Err(Error::config("augment.scale_lo must be positive"));
        }
        if !(self.scale_hi >= self.scale_lo && self.scale_hi.is_finite()) {
            return Err(Error::config("augment.scale_hi must be at least scale_lo"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("augment.noise_sigma must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.invert_prob) {
            return Err(Error::config("augment.invert_prob must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Permutes frame order; pixel values pass through bitwise.
pub fn content_aug(
    frames: &[f32],
    t_steps: usize,
    frame_dim: usize,
    mode: ContentMode,
    rng: &mut impl Rng,
) -> Result<Vec<f32>> {
    if t_steps < 2 {
        return Err(Error::contract(
            "content augmentation needs at least 2 frames",
        ));
    }
    if frame_dim == 0 || frames.len() != t_steps * frame_dim {
        return Err(Error::contract(format!(
            "sequence holds {} values, expected {} frames of {}",
            frames.len(),
            t_steps,
            frame_dim
        )));
    }
    let mut order: Vec<usize> = (0..t_steps).collect();
    match mode {
        ContentMode::Reverse => order.reverse(),
        ContentMode::Shuffle => loop {
            order.shuffle(rng);
            if order.iter().enumerate().any(|(i, &p)| i != p) {
                break;
            }
        },
    }
    let mut out = Vec::with_capacity(frames.len());
    for &t in &order {
        out.extend_from_slice(&frames[t * frame_dim..(t + 1) * frame_dim]);
    }
    Ok(out)
}

/// Applies one appearance transform to every frame of the sequence: a
/// single intensity scale and polarity decision, plus fresh per-pixel
/// noise, clamped back to [0, 1]. Frame order is unchanged.
pub fn motion_aug(frames: &[f32], cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Vec<f32>> {
    cfg.validate()?;
    if frames.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::contract(
            "motion augmentation expects pixel values in [0, 1]",
        ));
    }
    let scale = if cfg.scale_hi > cfg.scale_lo {
        rng.gen_range(cfg.scale_lo..cfg.scale_hi)
    } else {
        cfg.scale_lo
    };
    let invert = rng.gen_bool(cfg.invert_prob as f64);
    Ok(frames
        .iter()
        .map(|&v| {
            let noise: f32 = rng.sample(StandardNormal);
            let mixed = scale * v + cfg.noise_sigma * noise;
            let flipped = if invert { 1.0 - mixed } else { mixed };
            flipped.clamp(0.0, 1.0)
        })
        .collect())
}

/// Content-augmented batch: T tensors of [M, frame_dim], sequence i of the
/// batch permuted independently.
pub fn content_view(
    data: &Dataset,
    idx: &[usize],
    mode: ContentMode,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>> {
    let (t_steps, d) = (data.cfg.t_steps, data.cfg.frame_dim());
    let augmented = collect_augmented(data, idx, |seq, rng| {
        content_aug(seq, t_steps, d, mode, rng)
    }, rng)?;
    stack_steps(&augmented, t_steps, d)
}

/// Motion-augmented batch: T tensors of [M, frame_dim], one appearance
/// transform drawn per sequence.
pub fn motion_view(
    data: &Dataset,
    idx: &[usize],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>> {
    let (t_steps, d) = (data.cfg.t_steps, data.cfg.frame_dim());
    let augmented = collect_augmented(data, idx, |seq, rng| motion_aug(seq, cfg, rng), rng)?;
    stack_steps(&augmented, t_steps, d)
}

fn collect_augmented<R: Rng>(
    data: &Dataset,
    idx: &[usize],
    mut f: impl FnMut(&[f32], &mut R) -> Result<Vec<f32>>,
    rng: &mut R,
) -> Result<Vec<Vec<f32>>> {
    if idx.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    idx.iter()
        .map(|&i| {
            if i >= data.len() {
                return Err(Error::contract(format!(
                    "sequence index {i} out of range for dataset of {}",
                    data.len()
                )));
            }
            f(&data.seqs[i].frames, rng)
        })
        .collect()
}

fn stack_steps(seqs: &[Vec<f32>], t_steps: usize, d: usize) -> Result<Vec<Tensor>> {
    (0..t_steps)
        .map(|t| {
            let mut rows = Vec::with_capacity(seqs.len() * d);
            for s in seqs {
                rows.extend_from_slice(&s[t * d..(t + 1) * d]);
            }
            Tensor::new(vec![seqs.len(), d], rows)
        })
        .collect()
}
