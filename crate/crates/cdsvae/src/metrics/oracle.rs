//! Supervised judge network for the swap evaluations.
//!
//! A shared per-frame trunk feeds two heads: the content head pools
//! features over time, the motion head sees the full feature sequence.
//! The motion head trains on intensity-jittered copies so it keeps
//! working when a swap changes the appearance; the content head trains on
//! clean frames. The judge qualifies only if both held-out accuracies
//! reach the gate, and the evaluations refuse unqualified judges.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, BoundParams, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, Linear};
use crate::synthseq::Dataset;

pub const ORACLE_GATE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub hidden: usize,
    pub head_width: usize,
    pub batch: usize,
    pub max_epochs: usize,
    pub lr: f32,
    /// Qualification threshold on both held-out accuracies.
    pub gate: f64,
    /// Early-stop once both held-out accuracies reach this level.
    pub stop_acc: f64,
    pub jitter_lo: f32,
    pub jitter_hi: f32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            hidden: 64,
            head_width: 64,
            batch: 128,
            max_epochs: 60,
            lr: 2e-3,
            gate: ORACLE_GATE,
            stop_acc: 0.995,
            jitter_lo: 0.6,
            jitter_hi: 1.3,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.head_width == 0 || self.batch == 0 {
            return Err(Error::config("oracle sizes must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("oracle.lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gate) || !(0.0..=1.0).contains(&self.stop_acc) {
            return Err(Error::config("oracle gate and stop_acc must be in [0, 1]"));
        }
        if !(self.jitter_lo > 0.0 && self.jitter_hi >= self.jitter_lo) {
            return Err(Error::config("oracle jitter range must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct OracleNet {
    trunk: Linear,
    motion1: Linear,
    motion2: Linear,
    content1: Linear,
    content2: Linear,
}

impl OracleNet {
    fn new(
        store: &mut ParamStore,
        frame_dim: usize,
        t_steps: usize,
        hidden: usize,
        head_width: usize,
        k_content: usize,
        k_motion: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(OracleNet {
            trunk: Linear::new(store, "trunk", frame_dim, hidden, rng)?,
            motion1: Linear::new(store, "motion1", t_steps * hidden, head_width, rng)?,
            motion2: Linear::new(store, "motion2", head_width, k_motion, rng)?,
            content1: Linear::new(store, "content1", hidden, head_width, rng)?,
            content2: Linear::new(store, "content2", head_width, k_content, rng)?,
        })
    }

    fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(OracleNet {
            trunk: Linear::from_store(store, "trunk")?,
            motion1: Linear::from_store(store, "motion1")?,
            motion2: Linear::from_store(store, "motion2")?,
            content1: Linear::from_store(store, "content1")?,
            content2: Linear::from_store(store, "content2")?,
        })
    }

    /// Both heads' logits for a sequence of frame batches.
    fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        frames: &[Var<'t>],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let feats = frames
            .iter()
            .map(|&f| self.trunk.apply(bound, f)?.tanh())
            .collect::<Result<Vec<_>>>()?;
        let stacked = tape.concat(&feats, 1)?;
        let motion = self
            .motion2
            .apply(bound, self.motion1.apply(bound, stacked)?.tanh()?)?;
        let mut pooled = feats[0];
        for &f in &feats[1..] {
            pooled = pooled.add(f)?;
        }
        let pooled = pooled.mul_scalar(1.0 / feats.len() as f32)?;
        let content = self
            .content2
            .apply(bound, self.content1.apply(bound, pooled)?.tanh()?)?;
        Ok((content, motion))
    }
}

#[derive(Debug, Clone)]
pub struct OracleClassifier {
    store: ParamStore,
    net: OracleNet,
    pub frame_dim: usize,
    pub t_steps: usize,
    pub k_content: usize,
    pub k_motion: usize,
    pub val_acc_content: f64,
    pub val_acc_motion: f64,
}

impl OracleClassifier {
    pub fn qualified(&self, gate: f64) -> bool {
        self.val_acc_content >= gate && self.val_acc_motion >= gate
    }

    /// Softmax outputs of both heads for a batch of sequences given as
    /// per-step [M, frame_dim] tensors. Returns (content, motion) rows.
    pub fn predict(&self, steps: &[Tensor]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if steps.len() != self.t_steps {
            return Err(Error::contract(format!(
                "judge expects {} steps, got {}",
                self.t_steps,
                steps.len()
            )));
        }
        let tape = Tape::new();
        let bound = self.store.bind(&tape);
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        for f in &frames {
            if f.dims() != [frames[0].dims()[0], self.frame_dim] {
                return Err(Error::contract("judge input shape mismatch"));
            }
        }
        let (content, motion) = self.net.forward(&tape, &bound, &frames)?;
        Ok((softmax_rows(&content.value()), softmax_rows(&motion.value())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut store = self.store.clone();
        store.add(
            "val_acc",
            Tensor::new(
                vec![2],
                vec![self.val_acc_content as f32, self.val_acc_motion as f32],
            )?,
        )?;
        write_checkpoint(path, &store)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let full = read_checkpoint(path)?;
        let acc_id = full
            .by_name("val_acc")
            .ok_or_else(|| Error::format(path, "judge checkpoint lacks val_acc"))?;
        let acc = full.get(acc_id).data().to_vec();
        if acc.len() != 2 {
            return Err(Error::format(path, "val_acc must hold two values"));
        }
        let mut store = ParamStore::new();
        for (name, tensor) in full.iter() {
            if name != "val_acc" {
                store.add(name, tensor.clone())?;
            }
        }
        let net = OracleNet::from_store(&store)?;
        let frame_dim = net.trunk.in_dim;
        let hidden = net.trunk.out_dim;
        if net.motion1.in_dim % hidden != 0 {
            return Err(Error::format(path, "judge layer shapes are inconsistent"));
        }
        Ok(OracleClassifier {
            frame_dim,
            t_steps: net.motion1.in_dim / hidden,
            k_content: net.content2.out_dim,
            k_motion: net.motion2.out_dim,
            val_acc_content: acc[0] as f64,
            val_acc_motion: acc[1] as f64,
            store,
            net,
        })
    }
}

fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let (rows, cols) = (logits.dims()[0], logits.dims()[1]);
    (0..rows)
        .map(|r| {
            let row = &logits.data()[r * cols..(r + 1) * cols];
            let peak = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - peak).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|v| v / total).collect()
        })
        .collect()
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Mean of [logsumexp(logits) - logit at label] over rows.
fn cross_entropy<'t>(tape: &'t Tape, logits: Var<'t>, labels: &[u8], k: usize) -> Result<Var<'t>> {
    let rows = logits.dims()[0];
    if labels.len() != rows {
        return Err(Error::contract("label count does not match batch"));
    }
    let mut onehot = Tensor::zeros(&[rows, k]);
    for (r, &y) in labels.iter().enumerate() {
        if y as usize >= k {
            return Err(Error::contract(format!("label {y} outside {k} classes")));
        }
        onehot.data_mut()[r * k + y as usize] = 1.0;
    }
    let picked = logits.mul(tape.leaf(&onehot))?.sum_axis(1)?;
    logits.logsumexp_rows()?.sub(picked)?.mean_all()
}

/// Per-sequence intensity-scaled batches for motion-head training.
fn jittered_steps(
    data: &Dataset,
    idx: &[usize],
    lo: f32,
    hi: f32,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>> {
    let scales: Vec<f32> = idx.iter().map(|_| rng.gen_range(lo..hi)).collect();
    let d = data.cfg.frame_dim();
    (0..data.cfg.t_steps)
        .map(|t| {
            let mut rows = Vec::with_capacity(idx.len() * d);
            for (&i, &s) in idx.iter().zip(&scales) {
                rows.extend(data.frame(i, t).iter().map(|&v| (v * s).clamp(0.0, 1.0)));
            }
            Tensor::new(vec![idx.len(), d], rows)
        })
        .collect()
}

fn check_geometry(train: &Dataset, val: &Dataset) -> Result<()> {
    let a = &train.cfg;
    let b = &val.cfg;
    if a.t_steps != b.t_steps
        || a.frame_dim() != b.frame_dim()
        || a.k_content != b.k_content
        || a.k_motion != b.k_motion
    {
        return Err(Error::contract(
            "judge train and validation sets disagree on geometry",
        ));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("judge needs non-empty train and val sets"));
    }
    Ok(())
}

fn held_out_accuracy(
    net: &OracleNet,
    store: &ParamStore,
    data: &Dataset,
    batch: usize,
) -> Result<(f64, f64)> {
    let mut content_hits = 0usize;
    let mut motion_hits = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch) {
        let steps = data.batch_steps(chunk)?;
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        let (content, motion) = net.forward(&tape, &bound, &frames)?;
        let cp = softmax_rows(&content.value());
        let mp = softmax_rows(&motion.value());
        for (row, &i) in chunk.iter().enumerate() {
            if argmax(&cp[row]) == data.seqs[i].y_s as usize {
                content_hits += 1;
            }
            if argmax(&mp[row]) == data.seqs[i].y_m as usize {
                motion_hits += 1;
            }
        }
    }
    let n = data.len() as f64;
    Ok((content_hits as f64 / n, motion_hits as f64 / n))
}

/// Trains the judge until both held-out accuracies clear the early-stop
/// level or epochs run out; fails if the qualification gate is missed.
pub fn train_oracle(
    train: &Dataset,
    val: &Dataset,
    cfg: &OracleConfig,
    seed: u64,
) -> Result<OracleClassifier> {
    cfg.validate()?;
    check_geometry(train, val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = OracleNet::new(
        &mut store,
        train.cfg.frame_dim(),
        train.cfg.t_steps,
        cfg.hidden,
        cfg.head_width,
        train.cfg.k_content,
        train.cfg.k_motion,
        &mut rng,
    )?;
    let mut adam = Adam::new(cfg.lr);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut val_acc = held_out_accuracy(&net, &store, val, cfg.batch)?;

    for _epoch in 0..cfg.max_epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(cfg.batch) {
            let clean = train.batch_steps(chunk)?;
            let jittered =
                jittered_steps(train, chunk, cfg.jitter_lo, cfg.jitter_hi, &mut rng)?;
            let y_s: Vec<u8> = chunk.iter().map(|&i| train.seqs[i].y_s).collect();
            let y_m: Vec<u8> = chunk.iter().map(|&i| train.seqs[i].y_m).collect();

            let tape = Tape::new();
            let bound = store.bind(&tape);
            let clean_vars: Vec<Var> = clean.iter().map(|t| tape.leaf(t)).collect();
            let jit_vars: Vec<Var> = jittered.iter().map(|t| tape.leaf(t)).collect();
            let (content_logits, _) = net.forward(&tape, &bound, &clean_vars)?;
            let (_, motion_logits) = net.forward(&tape, &bound, &jit_vars)?;
            let loss = cross_entropy(&tape, content_logits, &y_s, train.cfg.k_content)?
                .add(cross_entropy(&tape, motion_logits, &y_m, train.cfg.k_motion)?)?;
            loss.backward()?;
            let grads = bound.grads()?;
            adam.step(&mut store, &grads)?;
        }
        val_acc = held_out_accuracy(&net, &store, val, cfg.batch)?;
        if val_acc.0 >= cfg.stop_acc && val_acc.1 >= cfg.stop_acc {
            break;
        }
    }

    if val_acc.0 < cfg.gate || val_acc.1 < cfg.gate {
        return Err(Error::contract(format!(
            "judge failed qualification: content {:.3}, motion {:.3} after {} epochs (gate {})",
            val_acc.0, val_acc.1, cfg.max_epochs, cfg.gate
        )));
    }
    Ok(OracleClassifier {
        frame_dim: train.cfg.frame_dim(),
        t_steps: train.cfg.t_steps,
        k_content: train.cfg.k_content,
        k_motion: train.cfg.k_motion,
        val_acc_content: val_acc.0,
        val_acc_motion: val_acc.1,
        store,
        net,
    })
}
