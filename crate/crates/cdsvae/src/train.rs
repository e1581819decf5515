//! Training driver: builds the objective per batch, steps Adam, logs one
//! CSV row per epoch, and writes best-validation and final checkpoints.
//!
//! Mutual-information columns are minibatch-weighted estimates over a
//! fixed subset of the training split, recomputed outside the tape at the
//! configured interval (rows between recomputes repeat the last
//! estimate). The validation loss used for checkpoint selection is the
//! non-contrastive part of the objective, since augmentations are a
//! training-time device.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{content_view, motion_view, AugmentConfig};
use crate::autodiff::{Adam, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{save_model, DiagGaussian, Feedback, ModelConfig, SeqVae};
use crate::objectives::mws::{mutual_info_input, mutual_info_latents};
use crate::objectives::{total_loss, LossBreakdown, LossWeights, StepNoise};
use crate::synthseq::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    /// Dataset file; commands may override it on their own command line.
    pub data: Option<String>,
    /// Recompute the mutual-information columns every this many epochs.
    pub mi_log_interval: usize,
    /// Keep the KL and latent-MI weights at exactly zero for this many
    /// initial epochs, giving the decoder a pure autoencoding phase in
    /// which the motion latents fill with information.
    pub kl_hold_epochs: usize,
    /// Epoch at which the linearly ramped KL and latent-MI weights reach
    /// full strength; the ramp starts after the hold phase. Without the
    /// schedule the KL term wins the early race against the reconstruction
    /// signal and both posteriors collapse onto the prior; the
    /// scale-invariant contrastive terms cannot pull them back out.
    pub kl_warmup_epochs: usize,
    pub content_aug: bool,
    pub motion_aug: bool,
    /// Fraction of the dataset held out for checkpoint selection.
    pub val_frac: f64,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 90,
            batch: 64,
            lr: 1e-3,
            data: None,
            mi_log_interval: 1,
            kl_hold_epochs: 0,
            kl_warmup_epochs: 15,
            content_aug: true,
            motion_aug: true,
            val_frac: 0.1,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch < 2 {
            return Err(Error::config("batch must be at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if self.mi_log_interval == 0 {
            return Err(Error::config("mi_log_interval must be at least 1"));
        }
        if !(0.0..=0.5).contains(&self.val_frac) {
            return Err(Error::config("val_frac must be in [0, 0.5]"));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.augment.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub recon: f32,
    pub kl_s: f32,
    pub kl_z: f32,
    pub c_motion: f32,
    pub c_content: f32,
    pub mi_sz_mws: f64,
    pub mi_sx_mws: f64,
    pub mi_zx_mws: f64,
    pub total: f32,
    pub wall_seconds: f64,
}

impl EpochRow {
    pub const CSV_HEADER: &'static str =
        "epoch,recon,kl_s,kl_z,c_motion,c_content,mi_sz_mws,mi_sx_mws,mi_zx_mws,total,wall_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.recon,
            self.kl_s,
            self.kl_z,
            self.c_motion,
            self.c_content,
            self.mi_sz_mws,
            self.mi_sx_mws,
            self.mi_zx_mws,
            self.total,
            self.wall_seconds
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_loss: f32,
    pub store: ParamStore,
    pub log_path: PathBuf,
    pub ckpt_best: PathBuf,
    pub ckpt_final: PathBuf,
}

/// Minibatch-weighted MI estimates over one encoded subset.
struct MiEstimates {
    sz: f64,
    sx: f64,
    zx: f64,
}

fn check_finite(b: &LossBreakdown, epoch: usize) -> Result<()> {
    let terms = [
        ("recon", b.recon),
        ("kl_s", b.kl_s),
        ("kl_z", b.kl_z),
        ("c_motion", b.c_motion),
        ("c_content", b.c_content),
        ("mi_sz", b.mi_sz),
        ("total", b.total),
    ];
    for (name, v) in terms {
        if !v.is_finite() {
            return Err(Error::Diverged {
                term: name.to_string(),
                epoch,
            });
        }
    }
    Ok(())
}

fn mi_estimates(
    model: &SeqVae,
    store: &ParamStore,
    data: &Dataset,
    subset: &[usize],
    n_data: usize,
    rng: &mut impl Rng,
) -> Result<MiEstimates> {
    let steps = data.batch_steps(subset)?;
    let eps_z: Vec<Tensor> = (0..data.cfg.t_steps)
        .map(|_| crate::model::draw_noise(&[subset.len(), model.cfg.d_motion], rng))
        .collect();
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
    let embeds = model.embed_frames(&bound, &frames)?;
    let content = model.encode_content(&tape, &bound, &embeds)?;
    let motion = model.encode_motion(&tape, &bound, &embeds, Feedback::Sample(&eps_z))?;

    let s_dists: Vec<DiagGaussian> = (0..subset.len()).map(|i| content.row(i)).collect();
    let s_samples: Vec<Vec<f32>> = s_dists.iter().map(|d| d.sample(rng)).collect();

    let d_m = model.cfg.d_motion;
    let mut z_mu = vec![Vec::new(); subset.len()];
    let mut z_lv = vec![Vec::new(); subset.len()];
    let mut z_samples = vec![Vec::new(); subset.len()];
    for step in &motion {
        let mu = step.dist.mu.value();
        let lv = step.dist.logvar.value();
        let z = step.z.value();
        for i in 0..subset.len() {
            z_mu[i].extend_from_slice(&mu.data()[i * d_m..(i + 1) * d_m]);
            z_lv[i].extend_from_slice(&lv.data()[i * d_m..(i + 1) * d_m]);
            z_samples[i].extend_from_slice(&z.data()[i * d_m..(i + 1) * d_m]);
        }
    }
    let z_dists: Vec<DiagGaussian> = z_mu
        .into_iter()
        .zip(z_lv)
        .map(|(mu, lv)| DiagGaussian::new(mu, lv))
        .collect::<Result<_>>()?;

    Ok(MiEstimates {
        sz: mutual_info_latents(&s_dists, &s_samples, &z_dists, &z_samples, n_data)?,
        sx: mutual_info_input(&s_dists, &s_samples, n_data)?,
        zx: mutual_info_input(&z_dists, &z_samples, n_data)?,
    })
}

/// Mean non-contrastive loss over an index set, used for model selection.
fn validation_loss(
    model: &SeqVae,
    store: &ParamStore,
    data: &Dataset,
    idx: &[usize],
    weights: &LossWeights,
    n_data: usize,
    rng: &mut impl Rng,
) -> Result<f32> {
    let mut total = 0.0f64;
    for chunk in idx.chunks(128) {
        let steps = data.batch_steps(chunk)?;
        let noise = StepNoise::draw(&model.cfg, chunk.len(), rng);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        let out = total_loss(
            &tape, &bound, model, &frames, None, None, &noise, weights, n_data,
        )?;
        total += out.breakdown.total as f64 * chunk.len() as f64;
    }
    Ok((total / idx.len() as f64) as f32)
}

/// Schedule factor for the KL and latent-MI weights at a 1-based epoch:
/// zero through the hold phase, then a linear ramp that reaches one at
/// `warmup`. A warmup at or before the hold end turns the ramp into a step.
fn kl_ramp(epoch: usize, hold: usize, warmup: usize) -> f32 {
    if epoch <= hold {
        0.0
    } else if warmup <= hold {
        1.0
    } else {
        ((epoch - hold) as f32 / (warmup - hold) as f32).min(1.0)
    }
}

pub fn run_train(cfg: &TrainConfig, data: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.cfg.t_steps != cfg.model.t_steps || data.cfg.frame_dim() != cfg.model.frame_dim() {
        return Err(Error::contract(format!(
            "dataset geometry {}x{} steps {} does not match model config",
            data.cfg.height, data.cfg.width, data.cfg.t_steps
        )));
    }
    if data.len() < 4 {
        return Err(Error::contract("training needs at least 4 sequences"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("log.csv");
    let log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    writeln!(log, "{}", EpochRow::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * cfg.val_frac).floor() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();
    let n_data = train_idx.len();
    let mi_subset: Vec<usize> = train_idx.iter().copied().take(128).collect();

    let mut store = ParamStore::new();
    let model = SeqVae::new(cfg.model.clone(), &mut store, &mut rng)?;
    let mut adam = Adam::new(cfg.lr);

    let start = Instant::now();
    let mut rows: Vec<EpochRow> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f32, ParamStore)> = None;
    let mut last_mi = MiEstimates {
        sz: 0.0,
        sx: 0.0,
        zx: 0.0,
    };
    let mut shuffled = train_idx.clone();

    for epoch in 1..=cfg.epochs {
        shuffled.shuffle(&mut rng);
        let ramp = kl_ramp(epoch, cfg.kl_hold_epochs, cfg.kl_warmup_epochs);
        let weights = LossWeights {
            alpha: cfg.loss.alpha * ramp,
            gamma: cfg.loss.gamma * ramp,
            ..cfg.loss.clone()
        };
        let mut sums = [0.0f64; 6];
        let mut seen = 0usize;
        for chunk in shuffled.chunks(cfg.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let steps = data.batch_steps(chunk)?;
            let content_steps = if cfg.content_aug {
                Some(content_view(
                    data,
                    chunk,
                    cfg.augment.content_mode,
                    &mut rng,
                )?)
            } else {
                None
            };
            let motion_steps = if cfg.motion_aug {
                Some(motion_view(data, chunk, &cfg.augment, &mut rng)?)
            } else {
                None
            };
            let noise = StepNoise::draw(&cfg.model, chunk.len(), &mut rng);

            let tape = Tape::new();
            let bound = store.bind(&tape);
            let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
            let content_vars: Option<Vec<Var>> = content_steps
                .as_ref()
                .map(|v| v.iter().map(|t| tape.leaf(t)).collect());
            let motion_vars: Option<Vec<Var>> = motion_steps
                .as_ref()
                .map(|v| v.iter().map(|t| tape.leaf(t)).collect());
            let out = total_loss(
                &tape,
                &bound,
                &model,
                &frames,
                content_vars.as_deref(),
                motion_vars.as_deref(),
                &noise,
                &weights,
                n_data,
            )?;
            check_finite(&out.breakdown, epoch)?;
            out.total.backward()?;
            let grads = bound.grads()?;
            adam.step(&mut store, &grads)?;

            let b = &out.breakdown;
            let w = chunk.len() as f64;
            for (slot, v) in sums.iter_mut().zip([
                b.recon, b.kl_s, b.kl_z, b.c_motion, b.c_content, b.total,
            ]) {
                *slot += v as f64 * w;
            }
            seen += chunk.len();
        }
        let mean = |i: usize| (sums[i] / seen.max(1) as f64) as f32;

        if (epoch - 1) % cfg.mi_log_interval == 0 || epoch == cfg.epochs {
            last_mi = mi_estimates(&model, &store, data, &mi_subset, n_data, &mut rng)?;
        }
        let val_loss = if val_idx.is_empty() {
            mean(5)
        } else {
            validation_loss(&model, &store, data, &val_idx, &cfg.loss, n_data, &mut rng)?
        };
        if best.as_ref().map_or(true, |(_, v, _)| val_loss < *v) {
            best = Some((epoch, val_loss, store.clone()));
        }

        let row = EpochRow {
            epoch,
            recon: mean(0),
            kl_s: mean(1),
            kl_z: mean(2),
            c_motion: mean(3),
            c_content: mean(4),
            mi_sz_mws: last_mi.sz,
            mi_sx_mws: last_mi.sx,
            mi_zx_mws: last_mi.zx,
            total: mean(5),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", row.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        rows.push(row);
    }

    let (best_epoch, best_val_loss, best_store) =
        best.expect("at least one epoch ran");
    let ckpt_best = out_dir.join("ckpt_best.cdsv");
    let ckpt_final = out_dir.join("ckpt_final.cdsv");
    save_model(&ckpt_best, &cfg.model, &best_store)?;
    save_model(&ckpt_final, &cfg.model, &store)?;
    Ok(TrainOutcome {
        rows,
        best_epoch,
        best_val_loss,
        store,
        log_path,
        ckpt_best,
        ckpt_final,
    })
}
