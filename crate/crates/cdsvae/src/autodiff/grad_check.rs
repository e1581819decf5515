//! Gradient verification against central finite differences.
//!
//! The check records one forward pass at f32, runs backward for the analytic
//! gradients, then replays the recorded graph at f64 with each parameter
//! coordinate nudged by +/- step. Replaying at f64 matters: an f32 forward
//! pass carries rounding noise of order 1e-7 * |loss|, which divided by the
//! finite-difference step would swamp a 1e-3 tolerance.
//!
//! Per-coordinate error is |ad - fd| / max(|ad|, |fd|, 1), i.e. relative for
//! large gradients and absolute near zero.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f32,
    pub max_rel_err: f32,
    /// Parameter name and coordinate of the worst error, with (ad, fd).
    pub worst: Option<(String, usize, f32, f32)>,
    /// Max error per parameter, in store order.
    pub per_param: Vec<(String, f32)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn rel_err(ad: f32, fd: f32) -> f32 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0)
}

/// Checks the tape gradient of the scalar loss produced by `build` over every
/// coordinate of every parameter in `store`.
pub fn grad_check<F>(store: &ParamStore, tol: f32, step: f64, build: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let loss = build(&tape, &bound)?;
    loss.backward()?;
    let grads = bound.grads()?;

    let mut report = GradCheckReport {
        tol,
        max_rel_err: 0.0,
        worst: None,
        per_param: Vec::new(),
    };
    for (i, id) in store.ids().enumerate() {
        let name = store.name(id).to_string();
        let leaf = bound.get(id).id();
        let mut data: Vec<f64> = store.get(id).data().iter().map(|&v| v as f64).collect();
        let ad = grads[i].data();
        let mut param_max = 0.0f32;
        for c in 0..data.len() {
            let orig = data[c];
            data[c] = orig + step;
            let f_plus = tape.replay_f64(leaf, &data, loss.id());
            data[c] = orig - step;
            let f_minus = tape.replay_f64(leaf, &data, loss.id());
            data[c] = orig;
            let fd = ((f_plus - f_minus) / (2.0 * step)) as f32;
            let err = rel_err(ad[c], fd);
            if err > param_max {
                param_max = err;
            }
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), c, ad[c], fd));
            }
        }
        report.per_param.push((name, param_max));
    }
    Ok(report)
}

/// One named gradient check over a small random graph exercising a single op.
pub struct OpCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

/// Pins a closure to the higher-ranked signature `grad_check` expects.
pub fn as_build<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    f
}

/// Runs a gradient check for every op kind the tape supports, each on a small
/// random input with a random linear readout so gradients are non-uniform.
pub fn op_kind_checks(tol: f32, step: f64, seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Draws positives in [0.4, 1.6], keeping log/sqrt/recip far from 0.
    fn positive(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = dims.iter().product();
        Tensor::new(
            dims.to_vec(),
            (0..n).map(|_| rng.gen_range(0.4f32..1.6)).collect(),
        )
        .unwrap()
    }
    // Draws in [-1.5, 1.5], rejecting values within 0.05 of the clamp bounds
    // used below so central differences never straddle the kink.
    fn away_from(dims: &[usize], bounds: &[f32], rng: &mut ChaCha8Rng) -> Tensor {
        let n = dims.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let v = rng.gen_range(-1.5f32..1.5);
                if bounds.iter().all(|b| (v - b).abs() > 0.05) {
                    break v;
                }
            })
            .collect();
        Tensor::new(dims.to_vec(), data).unwrap()
    }

    let mut run = |name: &'static str,
                   tensors: Vec<Tensor>,
                   rng: &mut ChaCha8Rng,
                   build: Box<dyn for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>>|
     -> Result<()> {
        let mut store = ParamStore::new();
        for (i, t) in tensors.into_iter().enumerate() {
            store.add(&format!("x{i}"), t)?;
        }
        let readout = Tensor::new(
            vec![64],
            (0..64).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let wrapped = as_build(move |tape, bound| {
            // Scalar readout sum(y * r) so every output coordinate feeds the
            // loss with a distinct weight.
            let y = build(tape, bound)?;
            let dims = y.dims();
            let n: usize = dims.iter().product();
            let r = tape.leaf_from_vec(dims, readout.data()[..n].to_vec())?;
            y.mul(r)?.sum_all()
        });
        let report = grad_check(&store, tol, step, wrapped)?;
        out.push(OpCheck { name, report });
        Ok(())
    };

    let d = vec![3usize, 4];
    run(
        "add",
        vec![away_from(&d, &[], &mut rng), away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].add(b.vars()[1])),
    )?;
    run(
        "sub",
        vec![away_from(&d, &[], &mut rng), away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].sub(b.vars()[1])),
    )?;
    run(
        "mul",
        vec![away_from(&d, &[], &mut rng), away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].mul(b.vars()[1])),
    )?;
    run(
        "add_scalar",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].add_scalar(0.7)),
    )?;
    run(
        "mul_scalar",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].mul_scalar(-1.3)),
    )?;
    run(
        "exp",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].exp()),
    )?;
    run(
        "log",
        vec![positive(&d, &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].log()),
    )?;
    run(
        "tanh",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].tanh()),
    )?;
    run(
        "sigmoid",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].sigmoid()),
    )?;
    run(
        "square",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].square()),
    )?;
    run(
        "sqrt",
        vec![positive(&d, &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].sqrt()),
    )?;
    run(
        "recip",
        vec![positive(&d, &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].recip()),
    )?;
    run(
        "clamp",
        vec![away_from(&d, &[-0.5, 0.5], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].clamp(-0.5, 0.5)),
    )?;
    run(
        "matmul",
        vec![
            away_from(&[3, 5], &[], &mut rng),
            away_from(&[5, 4], &[], &mut rng),
        ],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].matmul(b.vars()[1])),
    )?;
    run(
        "transpose",
        vec![away_from(&[3, 5], &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].transpose()),
    )?;
    run(
        "sum_all",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].sum_all()),
    )?;
    run(
        "mean_all",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].mean_all()),
    )?;
    run(
        "sum_axis0",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].sum_axis(0)),
    )?;
    run(
        "sum_axis1",
        vec![away_from(&d, &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].sum_axis(1)),
    )?;
    run(
        "concat_axis0",
        vec![
            away_from(&[2, 4], &[], &mut rng),
            away_from(&[3, 4], &[], &mut rng),
        ],
        &mut rng,
        Box::new(|t, b| t.concat(&[b.vars()[0], b.vars()[1]], 0)),
    )?;
    run(
        "concat_axis1",
        vec![
            away_from(&[3, 2], &[], &mut rng),
            away_from(&[3, 3], &[], &mut rng),
        ],
        &mut rng,
        Box::new(|t, b| t.concat(&[b.vars()[0], b.vars()[1]], 1)),
    )?;
    run(
        "slice",
        vec![away_from(&[4, 6], &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].slice_axis(1, 2, 3)),
    )?;
    run(
        "broadcast_rows",
        vec![away_from(&[5], &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].broadcast_rows(4)),
    )?;
    run(
        "broadcast_cols",
        vec![away_from(&[4], &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].broadcast_cols(5)),
    )?;
    run(
        "logsumexp_rows",
        vec![away_from(&[3, 6], &[], &mut rng)],
        &mut rng,
        Box::new(|_t, b| b.vars()[0].logsumexp_rows()),
    )?;

    Ok(out)
}
