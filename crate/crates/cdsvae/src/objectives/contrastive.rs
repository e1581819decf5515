//! InfoNCE-style contrastive bounds on mutual information.
//!
//! Two forms live here. The plain-value functions evaluate the bound on
//! detached features and double as independent cross-checks of the traced
//! form. `symmetric_info_nce` builds the two-view estimate on the tape:
//! both views of a batch are stacked, every row's positive is its other-view
//! partner, the remaining 2M - 2 rows act as negatives, and gradients flow
//! back into the features.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Vector norms are floored at this value before dividing.
pub const NORM_FLOOR: f32 = 1e-8;

/// Cosine similarity with floored norms; a pair of zero vectors yields 0.
pub fn cosine_sim(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "cosine_sim on lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        dot += a as f64 * b as f64;
        nu += a as f64 * a as f64;
        nv += b as f64 * b as f64;
    }
    let denom = nu.sqrt().max(NORM_FLOOR as f64) * nv.sqrt().max(NORM_FLOOR as f64);
    Ok((dot / denom) as f32)
}

/// Bound from precomputed log-score values: mean over anchors of
/// log phi_pos - log(phi_pos + sum_j phi_neg_j), plus log(n + 1).
///
/// Callers choose the score function; training uses exp(cos/tau), oracle
/// tests substitute true density ratios.
pub fn info_nce_log_phi(log_phi_pos: &[f64], log_phi_neg: &[Vec<f64>]) -> Result<f64> {
    if log_phi_pos.is_empty() {
        return Err(Error::contract("info_nce needs at least one anchor"));
    }
    if log_phi_pos.len() != log_phi_neg.len() {
        return Err(Error::contract(format!(
            "info_nce got {} positives for {} negative sets",
            log_phi_pos.len(),
            log_phi_neg.len()
        )));
    }
    let n = log_phi_neg[0].len();
    if n == 0 || log_phi_neg.iter().any(|negs| negs.len() != n) {
        return Err(Error::contract(
            "info_nce needs the same nonzero negative count per anchor",
        ));
    }
    let mut acc = 0.0f64;
    for (&pos, negs) in log_phi_pos.iter().zip(log_phi_neg) {
        let mut m = pos;
        for &v in negs {
            m = m.max(v);
        }
        let mut denom = (pos - m).exp();
        for &v in negs {
            denom += (v - m).exp();
        }
        acc += pos - (m + denom.ln());
    }
    Ok(acc / log_phi_pos.len() as f64 + ((n + 1) as f64).ln())
}

/// The bound on raw feature vectors with phi = exp(cosine / tau).
pub fn info_nce(
    anchors: &[Vec<f32>],
    positives: &[Vec<f32>],
    negatives: &[Vec<Vec<f32>>],
    tau: f32,
) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::contract("temperature must be positive"));
    }
    if anchors.len() != positives.len() || anchors.len() != negatives.len() {
        return Err(Error::contract(format!(
            "info_nce batch mismatch: {} anchors, {} positives, {} negative sets",
            anchors.len(),
            positives.len(),
            negatives.len()
        )));
    }
    let mut log_pos = Vec::with_capacity(anchors.len());
    let mut log_neg = Vec::with_capacity(anchors.len());
    for ((a, p), negs) in anchors.iter().zip(positives).zip(negatives) {
        log_pos.push(cosine_sim(a, p)? as f64 / tau as f64);
        let mut row = Vec::with_capacity(negs.len());
        for nvec in negs {
            row.push(cosine_sim(a, nvec)? as f64 / tau as f64);
        }
        log_neg.push(row);
    }
    info_nce_log_phi(&log_pos, &log_neg)
}

/// Traced symmetric two-view estimate over feature matrices [M, d].
///
/// Stacks [orig; aug], cosine-normalizes rows, scores every ordered pair at
/// temperature tau, and averages the per-anchor bound over all 2M anchors.
/// Self-similarities are excluded from the denominator; each anchor keeps
/// its other-view partner as positive and 2M - 2 negatives, so the result
/// is capped at log(2M - 1).
pub fn symmetric_info_nce<'t>(
    tape: &'t Tape,
    orig: Var<'t>,
    aug: Var<'t>,
    tau: f32,
) -> Result<Var<'t>> {
    if tau <= 0.0 {
        return Err(Error::contract("temperature must be positive"));
    }
    let dims = orig.dims();
    if dims.len() != 2 || aug.dims() != dims {
        return Err(Error::Shape {
            op: "symmetric_info_nce",
            lhs: dims,
            rhs: aug.dims(),
        });
    }
    let (m, d) = (dims[0], dims[1]);
    if m < 2 {
        return Err(Error::contract(
            "contrastive batch needs at least 2 sequences for negatives",
        ));
    }
    let k = 2 * m;

    let stacked = tape.concat(&[orig, aug], 0)?;
    let inv_norm = stacked
        .square()?
        .sum_axis(1)?
        .clamp(NORM_FLOOR * NORM_FLOOR, f32::MAX)?
        .sqrt()?
        .recip()?;
    let unit = stacked.mul(inv_norm.broadcast_cols(d)?)?;
    let sims = unit.matmul(unit.transpose()?)?.mul_scalar(1.0 / tau)?;

    // i's partner sits M rows away in the stacked layout
    let mut pos_mask = Tensor::zeros(&[k, k]);
    let mut self_mask = Tensor::zeros(&[k, k]);
    for i in 0..k {
        let partner = (i + m) % k;
        pos_mask.data_mut()[i * k + partner] = 1.0;
        // large negative shift removes the diagonal from the denominator
        self_mask.data_mut()[i * k + i] = -1.0e9;
    }
    let denom = sims.add(tape.leaf(&self_mask))?.logsumexp_rows()?;
    let pos = sims.mul(tape.leaf(&pos_mask))?.sum_axis(1)?;
    pos.sub(denom)?
        .mean_all()?
        .add_scalar(((k - 1) as f32).ln())
}
