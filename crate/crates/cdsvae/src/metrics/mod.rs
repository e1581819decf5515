//! Disentanglement evaluation: swap-based generation judged by a
//! supervised classifier, label-preservation accuracy, inception-style
//! prediction statistics, and equal error rates over factor
//! representations.
//!
//! The motion protocol keeps each sequence's inferred motion trajectory,
//! redraws the content code from its prior, decodes, and asks the judge
//! for the motion label; the content protocol mirrors it. Factor EERs
//! come from cosine similarities of posterior means over all sequence
//! pairs, with pairs sharing a content label as positives.

mod eer;
mod oracle;

pub use eer::eer;
pub use oracle::{argmax, train_oracle, OracleClassifier, OracleConfig, ORACLE_GATE};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{draw_noise, Feedback, Linear, SeqVae};
use crate::objectives::cosine_sim;
use crate::synthseq::{classify_content, classify_motion, extract_trajectory, Dataset, SyntheticConfig};

/// One evaluation row: swap accuracy, prediction statistics, factor EERs,
/// and the judge's qualification scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub run_id: String,
    pub acc: f64,
    pub is_score: f64,
    pub inter_entropy: f64,
    pub intra_entropy: f64,
    pub content_eer: f64,
    pub motion_eer: f64,
    pub n_eval: usize,
    pub oracle_val_acc_content: f64,
    pub oracle_val_acc_motion: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "run_id,acc,is,h_y,h_y_given_x,content_eer,motion_eer,n_eval,oracle_val_acc_content,oracle_val_acc_motion";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.acc,
            self.is_score,
            self.inter_entropy,
            self.intra_entropy,
            self.content_eer,
            self.motion_eer,
            self.n_eval,
            self.oracle_val_acc_content,
            self.oracle_val_acc_motion
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.acc)
            && self.is_score >= 1.0 - 1e-6
            && self.inter_entropy >= -1e-9
            && self.intra_entropy >= -1e-9
            && (0.0..=0.5).contains(&self.content_eer)
            && (0.0..=0.5).contains(&self.motion_eer)
            && self.n_eval > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("metric report out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionStats {
    pub is_score: f64,
    pub inter_entropy: f64,
    pub intra_entropy: f64,
}

const PROB_FLOOR: f64 = 1e-12;

/// Inception-style statistics over per-item class distributions:
/// IS = exp(mean KL(p(y|x) || p(y))), marginal entropy H(y), and mean
/// conditional entropy H(y|x).
pub fn prediction_stats(probs: &[Vec<f64>]) -> Result<PredictionStats> {
    if probs.is_empty() {
        return Err(Error::contract("prediction_stats on no predictions"));
    }
    let k = probs[0].len();
    if k < 2 {
        return Err(Error::contract("predictions need at least 2 classes"));
    }
    for row in probs {
        if row.len() != k {
            return Err(Error::contract("prediction rows disagree on class count"));
        }
        let total: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= -1e-9) || !p.is_finite()) || (total - 1.0).abs() > 1e-3 {
            return Err(Error::contract("prediction row is not a distribution"));
        }
    }
    let n = probs.len() as f64;
    let mut marginal = vec![0.0f64; k];
    for row in probs {
        for (m, &p) in marginal.iter_mut().zip(row) {
            *m += p / n;
        }
    }
    let entropy = |dist: &[f64]| -> f64 {
        -dist
            .iter()
            .filter(|&&p| p > PROB_FLOOR)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    };
    let inter_entropy = entropy(&marginal);
    let intra_entropy = probs.iter().map(|row| entropy(row)).sum::<f64>() / n;
    let mean_kl = probs
        .iter()
        .map(|row| {
            row.iter()
                .zip(&marginal)
                .filter(|(&p, _)| p > PROB_FLOOR)
                .map(|(&p, &m)| p * (p.ln() - m.max(PROB_FLOOR).ln()))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(PredictionStats {
        is_score: mean_kl.exp(),
        inter_entropy,
        intra_entropy,
    })
}

/// A qualified sequence classifier the swap protocols can consult.
pub trait Judge {
    fn content_probs(&self, steps: &[Tensor]) -> Result<Vec<Vec<f64>>>;
    fn motion_probs(&self, steps: &[Tensor]) -> Result<Vec<Vec<f64>>>;
    /// Held-out (content, motion) accuracies backing the qualification gate.
    fn qualification(&self) -> (f64, f64);
}

impl Judge for OracleClassifier {
    fn content_probs(&self, steps: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict(steps)?.0)
    }

    fn motion_probs(&self, steps: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict(steps)?.1)
    }

    fn qualification(&self) -> (f64, f64) {
        (self.val_acc_content, self.val_acc_motion)
    }
}

/// Closed-form judge backed by the synthetic generator's label recovery;
/// exact on clean frames, used as a harness reference.
#[derive(Debug, Clone)]
pub struct GroundTruthJudge {
    pub cfg: SyntheticConfig,
}

impl GroundTruthJudge {
    fn rows_to_seqs(&self, steps: &[Tensor]) -> Result<Vec<Vec<f32>>> {
        if steps.len() != self.cfg.t_steps {
            return Err(Error::contract("step count mismatch"));
        }
        let d = self.cfg.frame_dim();
        let rows = steps[0].dims()[0];
        (0..rows)
            .map(|r| {
                let mut seq = Vec::with_capacity(steps.len() * d);
                for step in steps {
                    if step.dims() != [rows, d] {
                        return Err(Error::contract("judge input shape mismatch"));
                    }
                    seq.extend_from_slice(&step.data()[r * d..(r + 1) * d]);
                }
                Ok(seq)
            })
            .collect()
    }

    fn one_hot(&self, class: usize, k: usize) -> Vec<f64> {
        let mut row = vec![0.0; k];
        row[class] = 1.0;
        row
    }
}

impl Judge for GroundTruthJudge {
    fn content_probs(&self, steps: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        self.rows_to_seqs(steps)?
            .iter()
            .map(|seq| {
                let y = classify_content(&self.cfg, seq)?;
                Ok(self.one_hot(y as usize, self.cfg.k_content))
            })
            .collect()
    }

    fn motion_probs(&self, steps: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        self.rows_to_seqs(steps)?
            .iter()
            .map(|seq| {
                let track = extract_trajectory(&self.cfg, seq)?;
                let y = classify_motion(&self.cfg, &track)?;
                Ok(self.one_hot(y as usize, self.cfg.k_motion))
            })
            .collect()
    }

    fn qualification(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

fn require_qualified(judge: &impl Judge) -> Result<()> {
    let (c, m) = judge.qualification();
    if c < ORACLE_GATE || m < ORACLE_GATE {
        return Err(Error::contract(format!(
            "judge is unqualified (content {c:.3}, motion {m:.3}, gate {ORACLE_GATE})"
        )));
    }
    Ok(())
}

pub(crate) fn hit_rate(probs: &[Vec<f64>], labels: &[u8]) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y as usize)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapReport {
    pub acc: f64,
    pub stats: PredictionStats,
    pub n_eval: usize,
}

const EVAL_BATCH: usize = 64;

fn clamped_steps(decoded: &[Var<'_>]) -> Vec<Tensor> {
    decoded
        .iter()
        .map(|v| {
            let mut t = v.value();
            for p in t.data_mut() {
                *p = p.clamp(0.0, 1.0);
            }
            t
        })
        .collect()
}

/// Keeps each sequence's motion trajectory (posterior means), redraws
/// content from p(s), decodes, and scores the judge's motion predictions
/// against the true motion labels.
pub fn swap_eval_motion(
    model: &SeqVae,
    store: &ParamStore,
    judge: &impl Judge,
    data: &Dataset,
    idx: &[usize],
    rng: &mut impl Rng,
) -> Result<SwapReport> {
    require_qualified(judge)?;
    if idx.is_empty() {
        return Err(Error::contract("swap evaluation over an empty index set"));
    }
    let mut all_probs = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let steps = data.batch_steps(chunk)?;
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        let embeds = model.embed_frames(&bound, &frames)?;
        let motion = model.encode_motion(&tape, &bound, &embeds, Feedback::Mean)?;
        let s_new = tape.leaf(&draw_noise(&[chunk.len(), model.cfg.d_content], rng));
        let decoded = motion
            .iter()
            .map(|step| model.decode_step(&tape, &bound, s_new, step.z))
            .collect::<Result<Vec<_>>>()?;
        all_probs.extend(judge.motion_probs(&clamped_steps(&decoded))?);
        labels.extend(chunk.iter().map(|&i| data.seqs[i].y_m));
    }
    Ok(SwapReport {
        acc: hit_rate(&all_probs, &labels),
        stats: prediction_stats(&all_probs)?,
        n_eval: idx.len(),
    })
}

/// Keeps each sequence's content code (posterior mean), rolls a fresh
/// motion trajectory from the dynamic prior, decodes, and scores the
/// judge's content predictions against the true content labels.
pub fn swap_eval_content(
    model: &SeqVae,
    store: &ParamStore,
    judge: &impl Judge,
    data: &Dataset,
    idx: &[usize],
    rng: &mut impl Rng,
) -> Result<SwapReport> {
    require_qualified(judge)?;
    if idx.is_empty() {
        return Err(Error::contract("swap evaluation over an empty index set"));
    }
    let mut all_probs = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let steps = data.batch_steps(chunk)?;
        let eps: Vec<Tensor> = (0..data.cfg.t_steps)
            .map(|_| draw_noise(&[chunk.len(), model.cfg.d_motion], rng))
            .collect();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        let embeds = model.embed_frames(&bound, &frames)?;
        let content = model.encode_content(&tape, &bound, &embeds)?;
        let rollout = model.prior_rollout(&tape, &bound, chunk.len(), &eps)?;
        let decoded = rollout
            .iter()
            .map(|step| model.decode_step(&tape, &bound, content.mu, step.z))
            .collect::<Result<Vec<_>>>()?;
        all_probs.extend(judge.content_probs(&clamped_steps(&decoded))?);
        labels.extend(chunk.iter().map(|&i| data.seqs[i].y_s));
    }
    Ok(SwapReport {
        acc: hit_rate(&all_probs, &labels),
        stats: prediction_stats(&all_probs)?,
        n_eval: idx.len(),
    })
}

/// Deterministic factor representations of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFeatures {
    /// Posterior mean of q(s | x).
    pub s_mean: Vec<f32>,
    /// Posterior motion means over time, flattened to [T * d_motion].
    pub z_flat: Vec<f32>,
}

/// Encodes posterior-mean features for the selected sequences.
pub fn encode_features(
    model: &SeqVae,
    store: &ParamStore,
    data: &Dataset,
    idx: &[usize],
) -> Result<Vec<SequenceFeatures>> {
    if idx.is_empty() {
        return Err(Error::contract("encode_features over an empty index set"));
    }
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let steps = data.batch_steps(chunk)?;
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        let embeds = model.embed_frames(&bound, &frames)?;
        let content = model.encode_content(&tape, &bound, &embeds)?;
        let motion = model.encode_motion(&tape, &bound, &embeds, Feedback::Mean)?;
        let s = content.mu.value();
        let zs: Vec<Tensor> = motion.iter().map(|st| st.dist.mu.value()).collect();
        let d_s = model.cfg.d_content;
        let d_m = model.cfg.d_motion;
        for (row, _) in chunk.iter().enumerate() {
            let mut z_flat = Vec::with_capacity(zs.len() * d_m);
            for z in &zs {
                z_flat.extend_from_slice(&z.data()[row * d_m..(row + 1) * d_m]);
            }
            out.push(SequenceFeatures {
                s_mean: s.data()[row * d_s..(row + 1) * d_s].to_vec(),
                z_flat,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorEer {
    /// EER of cosine similarities between s means, same-content pairs positive.
    pub content_eer: f64,
    /// EER of the same pair labels scored on flattened z means.
    pub motion_eer: f64,
    /// Content classes that could not form a positive pair.
    pub skipped_classes: usize,
    pub n_pairs: usize,
}

/// EERs over every sequence pair, given both factor representations and
/// the content labels.
pub fn paired_eer(
    s_feats: &[Vec<f32>],
    z_feats: &[Vec<f32>],
    labels: &[u8],
    k_content: usize,
) -> Result<FactorEer> {
    let n = labels.len();
    if s_feats.len() != n || z_feats.len() != n {
        return Err(Error::contract("feature and label counts differ"));
    }
    if n < 2 {
        return Err(Error::contract("pairwise EER needs at least 2 sequences"));
    }
    let mut counts = vec![0usize; k_content];
    for &y in labels {
        if y as usize >= k_content {
            return Err(Error::contract(format!(
                "content label {y} outside {k_content} classes"
            )));
        }
        counts[y as usize] += 1;
    }
    let skipped_classes = counts.iter().filter(|&&c| c < 2).count();
    let (mut pos_s, mut neg_s) = (Vec::new(), Vec::new());
    let (mut pos_z, mut neg_z) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            let sim_s = cosine_sim(&s_feats[i], &s_feats[j])?;
            let sim_z = cosine_sim(&z_feats[i], &z_feats[j])?;
            if labels[i] == labels[j] {
                pos_s.push(sim_s);
                pos_z.push(sim_z);
            } else {
                neg_s.push(sim_s);
                neg_z.push(sim_z);
            }
        }
    }
    if pos_s.is_empty() || neg_s.is_empty() {
        return Err(Error::contract(
            "pairwise EER needs both same-label and cross-label pairs",
        ));
    }
    Ok(FactorEer {
        content_eer: eer(&pos_s, &neg_s)?,
        motion_eer: eer(&pos_z, &neg_z)?,
        skipped_classes,
        n_pairs: pos_s.len() + neg_s.len(),
    })
}

/// Factor EERs from the model's posterior-mean representations.
pub fn factor_eer(
    model: &SeqVae,
    store: &ParamStore,
    data: &Dataset,
    idx: &[usize],
) -> Result<FactorEer> {
    let feats = encode_features(model, store, data, idx)?;
    let s: Vec<Vec<f32>> = feats.iter().map(|f| f.s_mean.clone()).collect();
    let z: Vec<Vec<f32>> = feats.iter().map(|f| f.z_flat.clone()).collect();
    let labels: Vec<u8> = idx.iter().map(|&i| data.seqs[i].y_s).collect();
    paired_eer(&s, &z, &labels, data.cfg.k_content)
}

/// Held-out accuracy of a multinomial logistic probe trained on 80% of
/// the rows. Measures how linearly decodable the labels are from the
/// features.
pub fn linear_probe_acc(features: &[Vec<f32>], labels: &[u8], k: usize, seed: u64) -> Result<f64> {
    let n = features.len();
    if n != labels.len() || n < 10 {
        return Err(Error::contract("probe needs at least 10 labeled rows"));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::contract("probe features disagree on dimension"));
    }
    if k < 2 || labels.iter().any(|&y| y as usize >= k) {
        return Err(Error::contract("probe labels outside class range"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = (n / 5).max(1);
    let (test_idx, train_idx) = order.split_at(n_test);

    let gather = |rows: &[usize]| -> Result<(Tensor, Vec<u8>)> {
        let mut flat = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            flat.extend_from_slice(&features[r]);
        }
        let ys = rows.iter().map(|&r| labels[r]).collect();
        Ok((Tensor::new(vec![rows.len(), d], flat)?, ys))
    };
    let (x_train, y_train) = gather(train_idx)?;
    let (x_test, y_test) = gather(test_idx)?;

    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "probe", d, k, &mut rng)?;
    let mut adam = Adam::new(1e-2);
    let mut onehot = Tensor::zeros(&[train_idx.len(), k]);
    for (r, &y) in y_train.iter().enumerate() {
        onehot.data_mut()[r * k + y as usize] = 1.0;
    }
    for _ in 0..300 {
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let logits = layer.apply(&bound, tape.leaf(&x_train))?;
        let picked = logits.mul(tape.leaf(&onehot))?.sum_axis(1)?;
        let loss = logits.logsumexp_rows()?.sub(picked)?.mean_all()?;
        loss.backward()?;
        let grads = bound.grads()?;
        adam.step(&mut store, &grads)?;
    }
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let logits = layer.apply(&bound, tape.leaf(&x_test))?.value();
    let hits = (0..test_idx.len())
        .filter(|&r| {
            let row = &logits.data()[r * k..(r + 1) * k];
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            best == y_test[r] as usize
        })
        .count();
    Ok(hits as f64 / test_idx.len() as f64)
}

/// Mean-code swap: decodes the content representation of one sequence
/// against the motion trajectory of another. With both indices equal this
/// is the deterministic reconstruction.
pub fn swap_decode(
    model: &SeqVae,
    store: &ParamStore,
    data: &Dataset,
    content_idx: usize,
    motion_idx: usize,
) -> Result<Vec<Vec<f32>>> {
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let encode = |i: usize| -> Result<(Var<'_>, Vec<Var<'_>>)> {
        let steps = data.batch_steps(&[i])?;
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        let embeds = model.embed_frames(&bound, &frames)?;
        let content = model.encode_content(&tape, &bound, &embeds)?;
        let motion = model.encode_motion(&tape, &bound, &embeds, Feedback::Mean)?;
        Ok((content.mu, motion.iter().map(|s| s.z).collect()))
    };
    let (s, _) = encode(content_idx)?;
    let (_, z) = encode(motion_idx)?;
    z.iter()
        .map(|&zt| Ok(model.decode_step(&tape, &bound, s, zt)?.value().data().to_vec()))
        .collect()
}

/// Decodes (1-lambda) s_a + lambda s_b against the motion trajectory of
/// sequence `a` for lambda on the uniform grid {0, 1/(k+1), ..., 1}.
/// Returns k+2 sequences of frames. The endpoints reuse the encoded
/// content vectors directly, so they reproduce the pure-factor decodes
/// bitwise.
pub fn interpolate_decode(
    model: &SeqVae,
    store: &ParamStore,
    data: &Dataset,
    a: usize,
    b: usize,
    k: usize,
) -> Result<Vec<Vec<Vec<f32>>>> {
    if k < 1 {
        return Err(Error::contract("interpolation needs at least one midpoint"));
    }
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let encode = |i: usize| -> Result<(Var<'_>, Vec<Var<'_>>)> {
        let steps = data.batch_steps(&[i])?;
        let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
        let embeds = model.embed_frames(&bound, &frames)?;
        let content = model.encode_content(&tape, &bound, &embeds)?;
        let motion = model.encode_motion(&tape, &bound, &embeds, Feedback::Mean)?;
        Ok((content.mu, motion.iter().map(|s| s.z).collect()))
    };
    let (s_a, z_a) = encode(a)?;
    let (s_b, _) = encode(b)?;
    let (sa, sb) = (s_a.value(), s_b.value());
    let d = sa.cols();

    let mut out = Vec::with_capacity(k + 2);
    for i in 0..=(k + 1) {
        let lam = i as f32 / (k + 1) as f32;
        let blend = if i == 0 {
            sa.clone()
        } else if i == k + 1 {
            sb.clone()
        } else {
            Tensor::new(
                vec![1, d],
                sa.data()
                    .iter()
                    .zip(sb.data())
                    .map(|(x, y)| (1.0 - lam) * x + lam * y)
                    .collect(),
            )?
        };
        let s = tape.leaf(&blend);
        let frames = z_a
            .iter()
            .map(|&zt| Ok(model.decode_step(&tape, &bound, s, zt)?.value().data().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        out.push(frames);
    }
    Ok(out)
}
