//! Sequential VAE with a static content code and a dynamic motion trajectory.
//!
//! The posterior factorizes as q(s | x_{1:T}) * prod_t q(z_t | z_{<t}, x_{<=t}):
//! content comes from a bidirectional recurrent pass over the whole sequence,
//! motion from a unidirectional pass where each step sees the current frame
//! embedding and the previously sampled z. The prior keeps p(s) = N(0, I) and
//! rolls p(z_t | z_{<t}) out of its own recurrent cell. The decoder maps
//! (s, z_t) to a frame independently per step.

mod checkpoint;
mod layers;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use layers::{Linear, LstmCell};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Log-variances are clamped to this symmetric range after every head.
pub const LOGVAR_LIMIT: f32 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Sequence length T.
    pub t_steps: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Content code width d_s.
    pub d_content: usize,
    /// Per-step motion code width d_m.
    pub d_motion: usize,
    pub h_enc: usize,
    pub h_prior: usize,
    pub h_dec: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_steps: 8,
            height: 16,
            width: 16,
            channels: 1,
            d_content: 16,
            d_motion: 4,
            h_enc: 64,
            h_prior: 64,
            h_dec: 64,
        }
    }
}

impl ModelConfig {
    pub fn frame_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_steps", self.t_steps),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("d_content", self.d_content),
            ("d_motion", self.d_motion),
            ("h_enc", self.h_enc),
            ("h_prior", self.h_prior),
            ("h_dec", self.h_dec),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        if self.t_steps < 2 {
            return Err(Error::config("model.t_steps must be at least 2"));
        }
        Ok(())
    }

    /// Rebuilds the config from checkpoint weight shapes plus the frame
    /// geometry, which weights alone cannot determine.
    pub fn from_store(
        store: &ParamStore,
        t_steps: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        let dims = |name: &str| -> Result<Vec<usize>> {
            store
                .by_name(name)
                .map(|id| store.get(id).dims().to_vec())
                .ok_or_else(|| Error::contract(format!("checkpoint missing param {name}")))
        };
        let embed1 = dims("embed1.w")?;
        let content_head = dims("content_head.w")?;
        let motion_head = dims("motion_head.w")?;
        let prior = dims("prior.w_hh")?;
        let dec1 = dims("dec1.w")?;
        let cfg = ModelConfig {
            t_steps,
            height,
            width,
            channels,
            d_content: content_head[1] / 2,
            d_motion: motion_head[1] / 2,
            h_enc: embed1[1],
            h_prior: prior[0],
            h_dec: dec1[1],
        };
        cfg.validate()?;
        if embed1[0] != cfg.frame_dim() {
            return Err(Error::contract(format!(
                "checkpoint expects frames of {} values, data has {}x{}x{} = {}",
                embed1[0],
                height,
                width,
                channels,
                cfg.frame_dim()
            )));
        }
        Ok(cfg)
    }
}

/// Diagonal Gaussian over detached vectors. Used wherever distributions are
/// evaluated outside a tape: metrics, density oracles, rollout summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f32>, logvar: Vec<f32>) -> Result<Self> {
        if mu.len() != logvar.len() {
            return Err(Error::contract(format!(
                "gaussian mu has {} dims, logvar {}",
                mu.len(),
                logvar.len()
            )));
        }
        Ok(DiagGaussian { mu, logvar })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mu: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Reparameterized draw mu + exp(logvar / 2) * eps.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f32> {
        self.mu
            .iter()
            .zip(self.logvar.iter())
            .map(|(&m, &lv)| {
                let eps: f32 = rng.sample(StandardNormal);
                m + (0.5 * lv).exp() * eps
            })
            .collect()
    }

    /// Log density at x, accumulated in f64.
    pub fn log_density(&self, x: &[f32]) -> f64 {
        const LN_2PI: f64 = 1.8378770664093453;
        let mut acc = 0.0f64;
        for ((&m, &lv), &v) in self.mu.iter().zip(self.logvar.iter()).zip(x.iter()) {
            let d = (v - m) as f64;
            let lv = lv as f64;
            acc += -0.5 * (LN_2PI + lv + d * d * (-lv).exp());
        }
        acc
    }

    /// Analytic KL(self || other) between diagonal Gaussians.
    pub fn kl_to(&self, other: &DiagGaussian) -> f64 {
        let mut acc = 0.0f64;
        for i in 0..self.dim() {
            let lq = self.logvar[i] as f64;
            let lp = other.logvar[i] as f64;
            let dm = (self.mu[i] - other.mu[i]) as f64;
            acc += 0.5 * ((lq - lp).exp() + dm * dm * (-lp).exp() - 1.0 + lp - lq);
        }
        acc
    }
}

/// Batched diagonal Gaussian on the tape: mu and logvar are [M, d].
#[derive(Clone, Copy)]
pub struct GaussianVars<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

impl<'t> GaussianVars<'t> {
    /// mu + exp(logvar / 2) * eps with eps entering as a constant leaf.
    pub fn sample(&self, eps: Var<'t>) -> Result<Var<'t>> {
        let sigma = self.logvar.mul_scalar(0.5)?.exp()?;
        self.mu.add(sigma.mul(eps)?)
    }

    /// Row-wise detached copy.
    pub fn row(&self, i: usize) -> DiagGaussian {
        let mu = self.mu.value();
        let lv = self.logvar.value();
        let d = mu.cols();
        DiagGaussian {
            mu: mu.data()[i * d..(i + 1) * d].to_vec(),
            logvar: lv.data()[i * d..(i + 1) * d].to_vec(),
        }
    }
}

/// One motion step: the posterior (or prior) distribution and the value fed
/// forward, which is a sample or the mean depending on the mode.
pub struct MotionStep<'t> {
    pub dist: GaussianVars<'t>,
    pub z: Var<'t>,
}

/// How the autoregressive motion pass feeds z back into itself.
pub enum Feedback<'a> {
    /// Reparameterized sampling with pre-drawn standard normal noise, one
    /// [M, d_m] tensor per step.
    Sample(&'a [Tensor]),
    /// Deterministic mean trajectory.
    Mean,
}

pub struct Autoencoded<'t> {
    pub content: GaussianVars<'t>,
    pub s: Var<'t>,
    pub motion: Vec<MotionStep<'t>>,
    /// Decoded frames, one [M, frame_dim] per step.
    pub recon: Vec<Var<'t>>,
}

#[derive(Debug, Clone)]
pub struct SeqVae {
    pub cfg: ModelConfig,
    embed1: Linear,
    embed2: Linear,
    content_fwd: LstmCell,
    content_bwd: LstmCell,
    content_head: Linear,
    motion_cell: LstmCell,
    motion_head: Linear,
    prior_cell: LstmCell,
    prior_head: Linear,
    dec1: Linear,
    dec2: Linear,
}

impl SeqVae {
    pub fn new(cfg: ModelConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let fd = cfg.frame_dim();
        Ok(SeqVae {
            embed1: Linear::new(store, "embed1", fd, cfg.h_enc, rng)?,
            embed2: Linear::new(store, "embed2", cfg.h_enc, cfg.h_enc, rng)?,
            content_fwd: LstmCell::new(store, "content_fwd", cfg.h_enc, cfg.h_enc, rng)?,
            content_bwd: LstmCell::new(store, "content_bwd", cfg.h_enc, cfg.h_enc, rng)?,
            content_head: Linear::new(store, "content_head", 2 * cfg.h_enc, 2 * cfg.d_content, rng)?,
            motion_cell: LstmCell::new(store, "motion", cfg.h_enc + cfg.d_motion, cfg.h_enc, rng)?,
            motion_head: Linear::new(store, "motion_head", cfg.h_enc, 2 * cfg.d_motion, rng)?,
            prior_cell: LstmCell::new(store, "prior", cfg.d_motion, cfg.h_prior, rng)?,
            prior_head: Linear::new(store, "prior_head", cfg.h_prior, 2 * cfg.d_motion, rng)?,
            dec1: Linear::new(store, "dec1", cfg.d_content + cfg.d_motion, cfg.h_dec, rng)?,
            dec2: Linear::new(store, "dec2", cfg.h_dec, fd, rng)?,
            cfg,
        })
    }

    /// Rebinds layer handles against a store loaded from a checkpoint.
    pub fn from_store(cfg: ModelConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let model = SeqVae {
            embed1: Linear::from_store(store, "embed1")?,
            embed2: Linear::from_store(store, "embed2")?,
            content_fwd: LstmCell::from_store(store, "content_fwd")?,
            content_bwd: LstmCell::from_store(store, "content_bwd")?,
            content_head: Linear::from_store(store, "content_head")?,
            motion_cell: LstmCell::from_store(store, "motion")?,
            motion_head: Linear::from_store(store, "motion_head")?,
            prior_cell: LstmCell::from_store(store, "prior")?,
            prior_head: Linear::from_store(store, "prior_head")?,
            dec1: Linear::from_store(store, "dec1")?,
            dec2: Linear::from_store(store, "dec2")?,
            cfg: cfg.clone(),
        };
        if model.embed1.in_dim != cfg.frame_dim()
            || model.content_head.out_dim != 2 * cfg.d_content
            || model.motion_head.out_dim != 2 * cfg.d_motion
        {
            return Err(Error::contract(
                "checkpoint weight shapes disagree with model config".to_string(),
            ));
        }
        Ok(model)
    }

    fn gaussian_head<'t>(
        &self,
        head: &Linear,
        bound: &BoundParams<'t>,
        x: Var<'t>,
        d: usize,
    ) -> Result<GaussianVars<'t>> {
        let y = head.apply(bound, x)?;
        let mu = y.slice_axis(1, 0, d)?;
        let logvar = y.slice_axis(1, d, d)?.clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT)?;
        Ok(GaussianVars { mu, logvar })
    }

    /// Two tanh layers on flattened frames, one output per step.
    pub fn embed_frames<'t>(
        &self,
        bound: &BoundParams<'t>,
        frames: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        frames
            .iter()
            .map(|&f| {
                self.embed2
                    .apply(bound, self.embed1.apply(bound, f)?.tanh()?)?
                    .tanh()
            })
            .collect()
    }

    /// q(s | x_{1:T}) from the last states of a forward and a backward pass.
    pub fn encode_content<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        embeds: &[Var<'t>],
    ) -> Result<GaussianVars<'t>> {
        if embeds.is_empty() {
            return Err(Error::contract("encode_content on empty sequence"));
        }
        let batch = embeds[0].dims()[0];
        let (mut hf, mut cf) = self.content_fwd.zero_state(tape, batch);
        for &e in embeds {
            let (h, c) = self.content_fwd.step(bound, e, hf, cf)?;
            hf = h;
            cf = c;
        }
        let (mut hb, mut cb) = self.content_bwd.zero_state(tape, batch);
        for &e in embeds.iter().rev() {
            let (h, c) = self.content_bwd.step(bound, e, hb, cb)?;
            hb = h;
            cb = c;
        }
        let joint = tape.concat(&[hf, hb], 1)?;
        self.gaussian_head(&self.content_head, bound, joint, self.cfg.d_content)
    }

    /// q(z_t | z_{<t}, x_{<=t}) step by step. The value fed back into the
    /// cell is the reparameterized sample or the mean, per `feedback`; the
    /// distribution at step t therefore conditions on frames up to t only.
    pub fn encode_motion<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        embeds: &[Var<'t>],
        feedback: Feedback<'_>,
    ) -> Result<Vec<MotionStep<'t>>> {
        if embeds.is_empty() {
            return Err(Error::contract("encode_motion on empty sequence"));
        }
        if let Feedback::Sample(eps) = &feedback {
            if eps.len() != embeds.len() {
                return Err(Error::contract(format!(
                    "encode_motion got {} noise tensors for {} steps",
                    eps.len(),
                    embeds.len()
                )));
            }
        }
        let batch = embeds[0].dims()[0];
        let (mut h, mut c) = self.motion_cell.zero_state(tape, batch);
        let mut z_prev = tape.leaf(&Tensor::zeros(&[batch, self.cfg.d_motion]));
        let mut steps = Vec::with_capacity(embeds.len());
        for (t, &e) in embeds.iter().enumerate() {
            let input = tape.concat(&[e, z_prev], 1)?;
            let (h2, c2) = self.motion_cell.step(bound, input, h, c)?;
            h = h2;
            c = c2;
            let dist = self.gaussian_head(&self.motion_head, bound, h, self.cfg.d_motion)?;
            let z = match &feedback {
                Feedback::Sample(eps) => dist.sample(tape.leaf(&eps[t]))?,
                Feedback::Mean => dist.mu,
            };
            z_prev = z;
            steps.push(MotionStep { dist, z });
        }
        Ok(steps)
    }

    /// p(z_t | z_{<t}) evaluated along a given trajectory: the cell consumes
    /// z_{t-1} (zeros at t = 1) and emits the distribution for step t.
    pub fn prior_steps<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        trajectory: &[Var<'t>],
    ) -> Result<Vec<GaussianVars<'t>>> {
        if trajectory.is_empty() {
            return Err(Error::contract("prior_steps on empty trajectory"));
        }
        let batch = trajectory[0].dims()[0];
        let (mut h, mut c) = self.prior_cell.zero_state(tape, batch);
        let zeros = tape.leaf(&Tensor::zeros(&[batch, self.cfg.d_motion]));
        let mut dists = Vec::with_capacity(trajectory.len());
        for t in 0..trajectory.len() {
            let input = if t == 0 { zeros } else { trajectory[t - 1] };
            let (h2, c2) = self.prior_cell.step(bound, input, h, c)?;
            h = h2;
            c = c2;
            dists.push(self.gaussian_head(&self.prior_head, bound, h, self.cfg.d_motion)?);
        }
        Ok(dists)
    }

    /// Samples z_{1:T} from the dynamic prior with pre-drawn noise.
    pub fn prior_rollout<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        batch: usize,
        eps: &[Tensor],
    ) -> Result<Vec<MotionStep<'t>>> {
        if eps.is_empty() {
            return Err(Error::contract("prior_rollout needs at least one step"));
        }
        let (mut h, mut c) = self.prior_cell.zero_state(tape, batch);
        let mut z_prev = tape.leaf(&Tensor::zeros(&[batch, self.cfg.d_motion]));
        let mut steps = Vec::with_capacity(eps.len());
        for e in eps {
            let (h2, c2) = self.prior_cell.step(bound, z_prev, h, c)?;
            h = h2;
            c = c2;
            let dist = self.gaussian_head(&self.prior_head, bound, h, self.cfg.d_motion)?;
            let z = dist.sample(tape.leaf(e))?;
            z_prev = z;
            steps.push(MotionStep { dist, z });
        }
        Ok(steps)
    }

    /// Decodes one step from (s, z_t).
    pub fn decode_step<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        s: Var<'t>,
        z: Var<'t>,
    ) -> Result<Var<'t>> {
        let joint = tape.concat(&[s, z], 1)?;
        self.dec2.apply(bound, self.dec1.apply(bound, joint)?.tanh()?)
    }

    /// Full posterior pass plus reconstruction.
    pub fn autoencode<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        frames: &[Var<'t>],
        eps_s: &Tensor,
        eps_z: &[Tensor],
    ) -> Result<Autoencoded<'t>> {
        let embeds = self.embed_frames(bound, frames)?;
        let content = self.encode_content(tape, bound, &embeds)?;
        let s = content.sample(tape.leaf(eps_s))?;
        let motion = self.encode_motion(tape, bound, &embeds, Feedback::Sample(eps_z))?;
        let recon = motion
            .iter()
            .map(|step| self.decode_step(tape, bound, s, step.z))
            .collect::<Result<Vec<_>>>()?;
        Ok(Autoencoded {
            content,
            s,
            motion,
            recon,
        })
    }
}

/// Draws standard normal noise tensors for a batch.
pub fn draw_noise(dims: &[usize], rng: &mut impl Rng) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(dims.to_vec(), data).expect("dims match data")
}

const MODEL_META: &str = "model_config";

/// Writes weights plus a small config record so the model can be rebuilt
/// from the file alone.
pub fn save_model(
    path: &std::path::Path,
    cfg: &ModelConfig,
    store: &ParamStore,
) -> Result<()> {
    let mut full = store.clone();
    let meta = [
        cfg.t_steps,
        cfg.height,
        cfg.width,
        cfg.channels,
        cfg.d_content,
        cfg.d_motion,
        cfg.h_enc,
        cfg.h_prior,
        cfg.h_dec,
    ];
    full.add(
        MODEL_META,
        Tensor::new(vec![meta.len()], meta.iter().map(|&v| v as f32).collect())?,
    )?;
    write_checkpoint(path, &full)
}

/// Rebuilds a model saved by [`save_model`].
pub fn load_model(path: &std::path::Path) -> Result<(SeqVae, ParamStore)> {
    let full = read_checkpoint(path)?;
    let meta_id = full
        .by_name(MODEL_META)
        .ok_or_else(|| Error::format(path, "checkpoint lacks a model_config record"))?;
    let meta = full.get(meta_id).data().to_vec();
    if meta.len() != 9 || meta.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(Error::format(path, "malformed model_config record"));
    }
    let d = |i: usize| meta[i] as usize;
    let cfg = ModelConfig {
        t_steps: d(0),
        height: d(1),
        width: d(2),
        channels: d(3),
        d_content: d(4),
        d_motion: d(5),
        h_enc: d(6),
        h_prior: d(7),
        h_dec: d(8),
    };
    cfg.validate()?;
    let mut store = ParamStore::new();
    for (name, tensor) in full.iter() {
        if name != MODEL_META {
            store.add(name, tensor.clone())?;
        }
    }
    let model = SeqVae::from_store(cfg, &store)?;
    Ok((model, store))
}
