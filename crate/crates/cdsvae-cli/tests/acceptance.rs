//! End-to-end acceptance gate: one pass/fail line per claim the project
//! makes about itself, from gradient integrity through full-scale
//! disentanglement to bitwise determinism. Tolerances are pinned here.

use std::io::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cdsvae::autodiff::{op_kind_checks, ParamStore, Tape, Tensor, Var};
use cdsvae::metrics::{
    encode_features, factor_eer, interpolate_decode, linear_probe_acc, swap_decode,
    swap_eval_content, swap_eval_motion, train_oracle, GroundTruthJudge, OracleClassifier,
    OracleConfig,
};
use cdsvae::model::{
    load_model, save_model, DiagGaussian, Feedback, ModelConfig, SeqVae,
};
use cdsvae::objectives::mws::{mixture_log_density, mixture_mutual_info_input};
use cdsvae::objectives::{info_nce, info_nce_log_phi, total_loss_grad_check, LossWeights};
use cdsvae::synthseq::{generate, read_dataset, write_dataset, Dataset, SyntheticConfig};
use cdsvae::train::{run_train, EpochRow, TrainConfig};
use cdsvae_cli::pgm::{read_pgm, write_pgm};

const GRAD_TOL: f32 = 1e-3;
const GRAD_STEP: f64 = 1e-3;
const KL_PAIRS: usize = 100;
const KL_MC_SAMPLES: usize = 100_000;
const IDENTITY_TOL_FRAC: f64 = 0.05;
const BOUND_BATCHES: usize = 10_000;
const SWAP_ACC_MIN: f64 = 0.85;
const CONTENT_EER_MAX: f64 = 0.10;
const MOTION_EER_MIN: f64 = 0.35;
const LEAK_MAX: f64 = 0.40;
const TRAIN_BUDGET_SECS: f64 = 1800.0;
const ABLATION_GAP: f64 = 0.02;

/// Writes directly to the process stdout so the line survives test capture.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Result<String, String>)> = Vec::new();

    results.push(("gradient integrity", gradient_integrity()));
    results.push(("analytic kl vs monte carlo", analytic_kl_vs_monte_carlo()));
    results.push(("kl decomposition identity", kl_decomposition_identity()));
    results.push(("contrastive bound contract", contrastive_bound_contract()));

    let full = full_scale_run();
    let (disent, rows, judge) = match full {
        Ok((detail, rows, judge)) => (Ok(detail), Some(rows), Some(judge)),
        Err(e) => (Err(e), None, None),
    };
    results.push(("end-to-end disentanglement", disent));
    results.push(("augmentation ablation ordering", ablation_ordering()));
    results.push((
        "mutual information trends",
        match &rows {
            Some(rows) => mi_trends(rows),
            None => Err("no training log; the full-scale run failed".into()),
        },
    ));
    results.push(("determinism and persistence", determinism_and_persistence(judge)));

    let mut failed = 0;
    for (i, (name, res)) in results.iter().enumerate() {
        match res {
            Ok(detail) => emit(&format!("criterion {} ({name}): pass - {detail}", i + 1)),
            Err(detail) => {
                failed += 1;
                emit(&format!("criterion {} ({name}): FAIL - {detail}", i + 1));
            }
        }
    }
    assert_eq!(failed, 0, "{failed} acceptance criterion(s) failed");
}

/// Every differentiable op kind, then the full objective on a small model,
/// against central finite differences.
fn gradient_integrity() -> Result<String, String> {
    let t = Instant::now();
    let checks = op_kind_checks(GRAD_TOL, GRAD_STEP, 11).map_err(|e| e.to_string())?;
    let mut worst = ("none".to_string(), 0.0f32);
    for c in &checks {
        if c.report.max_rel_err > worst.1 {
            worst = (c.name.to_string(), c.report.max_rel_err);
        }
        if !c.report.passed() {
            return Err(format!(
                "op {} rel err {:.3e} over {GRAD_TOL:.0e}",
                c.name, c.report.max_rel_err
            ));
        }
    }
    let full = total_loss_grad_check(GRAD_TOL, GRAD_STEP, 5).map_err(|e| e.to_string())?;
    if !full.passed() {
        return Err(format!(
            "full objective rel err {:.3e} over {GRAD_TOL:.0e}",
            full.max_rel_err
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    if secs > 120.0 {
        return Err(format!("took {secs:.0}s, budget 120s"));
    }
    Ok(format!(
        "{} op kinds worst {:.1e} ({}), objective {:.1e}, {secs:.0}s",
        checks.len(),
        worst.1,
        worst.0,
        full.max_rel_err
    ))
}

/// Closed-form diagonal-Gaussian KL against sampling, plus two exact scalars.
fn analytic_kl_vs_monte_carlo() -> Result<String, String> {
    let t = Instant::now();
    let std1 = DiagGaussian::standard(1);
    let zero = std1.kl_to(&std1);
    if zero.abs() > 1e-6 {
        return Err(format!("kl(std, std) = {zero:.2e}, expected 0"));
    }
    let shifted = DiagGaussian::new(vec![1.0], vec![0.0]).unwrap();
    let half = shifted.kl_to(&std1);
    if (half - 0.5).abs() > 1e-6 {
        return Err(format!("unit mean shift kl = {half}, expected 0.5"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut max_sigmas = 0.0f64;
    for pair in 0..KL_PAIRS {
        let dim = 4;
        let draw = |rng: &mut ChaCha8Rng, lo: f32, hi: f32| -> Vec<f32> {
            (0..dim).map(|_| rng.gen_range(lo..hi)).collect()
        };
        let q = DiagGaussian::new(draw(&mut rng, -2.0, 2.0), draw(&mut rng, -1.5, 1.0)).unwrap();
        let p = DiagGaussian::new(draw(&mut rng, -2.0, 2.0), draw(&mut rng, -1.5, 1.0)).unwrap();
        let analytic = q.kl_to(&p);
        let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
        for _ in 0..KL_MC_SAMPLES {
            let x = q.sample(&mut rng);
            let term = q.log_density(&x) - p.log_density(&x);
            sum += term;
            sumsq += term * term;
        }
        let n = KL_MC_SAMPLES as f64;
        let mean = sum / n;
        let se = ((sumsq / n - mean * mean).max(0.0) / n).sqrt();
        let sigmas = (analytic - mean).abs() / se.max(1e-12);
        max_sigmas = max_sigmas.max(sigmas);
        if sigmas > 3.0 {
            return Err(format!(
                "pair {pair}: analytic {analytic:.4} vs mc {mean:.4} is {sigmas:.1} se"
            ));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    if secs > 60.0 {
        return Err(format!("took {secs:.0}s, budget 60s"));
    }
    Ok(format!(
        "{KL_PAIRS} pairs at {KL_MC_SAMPLES} samples, worst {max_sigmas:.2} se, {secs:.0}s"
    ))
}

/// Per-sequence KL to the prior must equal the latent-input mutual
/// information plus the aggregated-posterior KL, for the content latent and
/// the motion trajectory alike, on a frozen random model.
fn kl_decomposition_identity() -> Result<String, String> {
    let t = Instant::now();
    let scfg = SyntheticConfig {
        height: 12,
        width: 12,
        t_steps: 4,
        ..SyntheticConfig::default()
    };
    let data = generate(&scfg, 64, 3).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        t_steps: 4,
        height: 12,
        width: 12,
        channels: 1,
        d_content: 4,
        d_motion: 2,
        h_enc: 8,
        h_prior: 6,
        h_dec: 8,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = SeqVae::new(cfg, &mut store, &mut rng).map_err(|e| e.to_string())?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let steps = data.batch_steps(&idx).map_err(|e| e.to_string())?;

    let tape = Tape::new();
    let bound = store.bind(&tape);
    let frames: Vec<Var> = steps.iter().map(|t| tape.leaf(t)).collect();
    let embeds = model.embed_frames(&bound, &frames).map_err(|e| e.to_string())?;
    let content = model
        .encode_content(&tape, &bound, &embeds)
        .map_err(|e| e.to_string())?;
    let motion = model
        .encode_motion(&tape, &bound, &embeds, Feedback::Mean)
        .map_err(|e| e.to_string())?;

    let n = data.len();
    let d_m = model.cfg.d_motion;
    let s_dists: Vec<DiagGaussian> = (0..n).map(|i| content.row(i)).collect();
    // Independent per-step posteriors concatenate into one trajectory
    // Gaussian per sequence.
    let mut z_mu = vec![Vec::new(); n];
    let mut z_lv = vec![Vec::new(); n];
    for step in &motion {
        let mu = step.dist.mu.value();
        let lv = step.dist.logvar.value();
        for i in 0..n {
            z_mu[i].extend_from_slice(&mu.data()[i * d_m..(i + 1) * d_m]);
            z_lv[i].extend_from_slice(&lv.data()[i * d_m..(i + 1) * d_m]);
        }
    }
    let z_dists: Vec<DiagGaussian> = z_mu
        .into_iter()
        .zip(z_lv)
        .map(|(mu, lv)| DiagGaussian::new(mu, lv).unwrap())
        .collect();

    // Evaluates log p(z_1..z_T) along given trajectories by feeding them
    // through the learned dynamic prior.
    let prior_log_density = |flat: &[Vec<f32>]| -> Result<Vec<f64>, String> {
        let t_steps = model.cfg.t_steps;
        let ptape = Tape::new();
        let pbound = store.bind(&ptape);
        let mut traj = Vec::with_capacity(t_steps);
        for t in 0..t_steps {
            let mut data_t = Vec::with_capacity(n * d_m);
            for row in flat {
                data_t.extend_from_slice(&row[t * d_m..(t + 1) * d_m]);
            }
            traj.push(ptape.leaf(&Tensor::new(vec![n, d_m], data_t).map_err(|e| e.to_string())?));
        }
        let prior = model
            .prior_steps(&ptape, &pbound, &traj)
            .map_err(|e| e.to_string())?;
        let mut out = vec![0.0f64; n];
        for (t, dist) in prior.iter().enumerate() {
            for (i, acc) in out.iter_mut().enumerate() {
                *acc += dist.row(i).log_density(&flat[i][t * d_m..(t + 1) * d_m]);
            }
        }
        Ok(out)
    };

    let rounds = 40;
    let check = |name: &str,
                 dists: &[DiagGaussian],
                 e_kl: f64,
                 log_prior: &dyn Fn(&[Vec<f32>]) -> Result<Vec<f64>, String>,
                 rng: &mut ChaCha8Rng|
     -> Result<(f64, f64, f64), String> {
        let mut mi = 0.0;
        for _ in 0..rounds {
            let samples: Vec<Vec<f32>> = dists.iter().map(|d| d.sample(rng)).collect();
            mi += mixture_mutual_info_input(dists, &samples).map_err(|e| e.to_string())?;
        }
        let mi = mi / rounds as f64;
        let mut agg = 0.0;
        for _ in 0..rounds {
            let samples: Vec<Vec<f32>> = dists.iter().map(|d| d.sample(rng)).collect();
            let prior = log_prior(&samples)?;
            for (x, lp) in samples.iter().zip(prior) {
                agg += mixture_log_density(dists, x).map_err(|e| e.to_string())? - lp;
            }
        }
        let agg = agg / (rounds * dists.len()) as f64;
        if agg < -0.01 {
            return Err(format!("{name}: aggregated kl {agg:.4} below -0.01"));
        }
        let gap = (e_kl - mi - agg).abs();
        let tol = IDENTITY_TOL_FRAC * agg.abs().max(1.0);
        if gap > tol {
            return Err(format!(
                "{name}: |{e_kl:.4} - {mi:.4} - {agg:.4}| = {gap:.4} over {tol:.4}"
            ));
        }
        Ok((e_kl, mi, agg))
    };

    let std_s = DiagGaussian::standard(model.cfg.d_content);
    let e_kl_s = s_dists.iter().map(|d| d.kl_to(&std_s)).sum::<f64>() / n as f64;
    let s_prior = |samples: &[Vec<f32>]| -> Result<Vec<f64>, String> {
        Ok(samples.iter().map(|x| std_s.log_density(x)).collect())
    };
    let (ekl_s, mi_s, agg_s) = check("content", &s_dists, e_kl_s, &s_prior, &mut rng)?;

    // E KL for the trajectory needs sampling since the prior is
    // autoregressive; fresh draws keep it independent of the other terms.
    let mut e_kl_z = 0.0;
    for _ in 0..rounds {
        let samples: Vec<Vec<f32>> = z_dists.iter().map(|d| d.sample(&mut rng)).collect();
        let prior = prior_log_density(&samples)?;
        for (i, (x, lp)) in samples.iter().zip(prior).enumerate() {
            e_kl_z += z_dists[i].log_density(x) - lp;
        }
    }
    let e_kl_z = e_kl_z / (rounds * n) as f64;
    let (ekl_z, mi_z, agg_z) = check("motion", &z_dists, e_kl_z, &prior_log_density, &mut rng)?;

    let secs = t.elapsed().as_secs_f64();
    if secs > 300.0 {
        return Err(format!("took {secs:.0}s, budget 300s"));
    }
    Ok(format!(
        "content {ekl_s:.3}={mi_s:.3}+{agg_s:.3}, motion {ekl_z:.3}={mi_z:.3}+{agg_z:.3}, {secs:.0}s"
    ))
}

/// The contrastive estimate is bounded by log(n+1), vanishes for equal
/// similarities, reproduces a hand value, and with the oracle density ratio
/// recovers a known mutual information.
fn contrastive_bound_contract() -> Result<String, String> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for batch in 0..BOUND_BATCHES {
        let n = 1 + (batch % 16);
        let dim = 2 + (batch % 5);
        let gauss = DiagGaussian::standard(dim);
        let draw = |rng: &mut ChaCha8Rng| gauss.sample(rng);
        let anchors = vec![draw(&mut rng), draw(&mut rng)];
        let positives = vec![draw(&mut rng), draw(&mut rng)];
        let negatives: Vec<Vec<Vec<f32>>> = (0..2)
            .map(|_| (0..n).map(|_| draw(&mut rng)).collect())
            .collect();
        let v = info_nce(&anchors, &positives, &negatives, 0.5).map_err(|e| e.to_string())?;
        let cap = ((n + 1) as f64).ln() + 1e-6;
        if v > cap {
            return Err(format!("batch {batch}: value {v:.6} over cap {cap:.6}"));
        }
    }

    let same = vec![vec![0.6f32, -0.2, 0.1]];
    let v_equal = info_nce(&same, &same, &[vec![same[0].clone(); 5]], 0.5)
        .map_err(|e| e.to_string())?;
    if v_equal.abs() > 1e-6 {
        return Err(format!("all-equal similarities gave {v_equal:.2e}, want 0"));
    }

    let hand = info_nce(
        &[vec![1.0, 0.0]],
        &[vec![1.0, 0.0]],
        &[vec![vec![0.0, 1.0]]],
        0.5,
    )
    .map_err(|e| e.to_string())?;
    if (hand - 0.566219).abs() > 1e-5 {
        return Err(format!("single-negative hand case {hand:.6}, want 0.566219"));
    }

    // Correlated scalar Gaussians with the true density ratio as the score:
    // rho 0.9 has mutual information 0.830366 and the estimate must land
    // between 0.58 and the log(n+1) ceiling at n = 127.
    let rho = 0.9f64;
    let var = 1.0 - rho * rho;
    let log_ratio = |u: f64, v: f64| -> f64 {
        let d = v - rho * u;
        -0.5 * (var.ln() + d * d / var) + 0.5 * v * v
    };
    let anchors = 2000;
    let negs = 127;
    let mut pos = Vec::with_capacity(anchors);
    let mut neg = Vec::with_capacity(anchors);
    let scalar = DiagGaussian::standard(1);
    for _ in 0..anchors {
        let u = scalar.sample(&mut rng)[0] as f64;
        let e = scalar.sample(&mut rng)[0] as f64;
        let v = rho * u + var.sqrt() * e;
        pos.push(log_ratio(u, v));
        neg.push(
            (0..negs)
                .map(|_| log_ratio(u, scalar.sample(&mut rng)[0] as f64))
                .collect::<Vec<f64>>(),
        );
    }
    let est = info_nce_log_phi(&pos, &neg).map_err(|e| e.to_string())?;
    let ceiling = 128f64.ln();
    if !(0.58..=ceiling).contains(&est) {
        return Err(format!(
            "oracle-ratio estimate {est:.4} outside [0.58, {ceiling:.4}]"
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    if secs > 120.0 {
        return Err(format!("took {secs:.0}s, budget 120s"));
    }
    Ok(format!(
        "{BOUND_BATCHES} batches under cap, oracle-ratio estimate {est:.3} (true 0.830), {secs:.0}s"
    ))
}

/// Full default-config training run, then swap accuracies, verification
/// errors, and a leakage probe on a held-out set, under a wall-clock budget.
#[allow(clippy::type_complexity)]
fn full_scale_run() -> Result<(String, Vec<EpochRow>, OracleClassifier), String> {
    let scfg = SyntheticConfig::default();
    let train = generate(&scfg, 2000, 0).map_err(|e| e.to_string())?;
    let test = generate(&scfg, 512, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let out = run_train(&cfg, &train, &dir.path().join("run")).map_err(|e| e.to_string())?;
    let train_secs = t.elapsed().as_secs_f64();

    let split = train.len() * 4 / 5;
    let judge_train = Dataset {
        cfg: scfg.clone(),
        seqs: train.seqs[..split].to_vec(),
    };
    let judge_val = Dataset {
        cfg: scfg.clone(),
        seqs: train.seqs[split..].to_vec(),
    };
    let judge = train_oracle(&judge_train, &judge_val, &OracleConfig::default(), 0)
        .map_err(|e| e.to_string())?;

    let model = SeqVae::from_store(cfg.model.clone(), &out.store).map_err(|e| e.to_string())?;
    let idx: Vec<usize> = (0..test.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let m = swap_eval_motion(&model, &out.store, &judge, &test, &idx, &mut rng)
        .map_err(|e| e.to_string())?;
    let c = swap_eval_content(&model, &out.store, &judge, &test, &idx, &mut rng)
        .map_err(|e| e.to_string())?;
    let eer = factor_eer(&model, &out.store, &test, &idx).map_err(|e| e.to_string())?;
    let feats = encode_features(&model, &out.store, &test, &idx).map_err(|e| e.to_string())?;
    let z: Vec<Vec<f32>> = feats.iter().map(|f| f.z_flat.clone()).collect();
    let ys: Vec<u8> = test.seqs.iter().map(|s| s.y_s).collect();
    let leak = linear_probe_acc(&z, &ys, scfg.k_content, 0).map_err(|e| e.to_string())?;

    let first = out.rows.first().ok_or("empty training log")?;
    let last = out.rows.last().ok_or("empty training log")?;
    let recon_ratio = first.recon as f64 / last.recon.max(1e-9) as f64;

    let detail = format!(
        "swapM {:.3} swapC {:.3} eerC {:.3} eerM {:.3} leak {:.3} recon x{:.0} in {:.0}s",
        m.acc, c.acc, eer.content_eer, eer.motion_eer, leak, recon_ratio, train_secs
    );
    let mut problems = Vec::new();
    if train_secs > TRAIN_BUDGET_SECS {
        problems.push(format!("training took {train_secs:.0}s over {TRAIN_BUDGET_SECS:.0}s"));
    }
    if m.acc < SWAP_ACC_MIN {
        problems.push(format!("swap-motion acc {:.3} under {SWAP_ACC_MIN}", m.acc));
    }
    if c.acc < SWAP_ACC_MIN {
        problems.push(format!("swap-content acc {:.3} under {SWAP_ACC_MIN}", c.acc));
    }
    if eer.content_eer > CONTENT_EER_MAX {
        problems.push(format!("content eer {:.3} over {CONTENT_EER_MAX}", eer.content_eer));
    }
    if eer.motion_eer < MOTION_EER_MIN {
        problems.push(format!("motion eer {:.3} under {MOTION_EER_MIN}", eer.motion_eer));
    }
    if leak > LEAK_MAX {
        problems.push(format!("content leakage probe {leak:.3} over {LEAK_MAX}"));
    }
    if recon_ratio < 10.0 {
        problems.push(format!("reconstruction shrank only {recon_ratio:.1}x from epoch 1"));
    }
    if problems.is_empty() {
        Ok((detail, out.rows, judge))
    } else {
        Err(format!("{} [{detail}]", problems.join("; ")))
    }
}

/// Both augmentations must do at least as well as either alone, which must
/// do at least as well as no contrastive terms at all, averaged over three
/// seeds with a small noise allowance.
fn ablation_ordering() -> Result<String, String> {
    let t = Instant::now();
    let scfg = SyntheticConfig::default();
    let train = generate(&scfg, 400, 10).map_err(|e| e.to_string())?;
    let test = generate(&scfg, 256, 11).map_err(|e| e.to_string())?;
    let judge = GroundTruthJudge { cfg: scfg.clone() };
    let idx: Vec<usize> = (0..test.len()).collect();

    let base = TrainConfig {
        epochs: 30,
        batch: 32,
        mi_log_interval: 30,
        ..TrainConfig::default()
    };
    let variants: [(&str, bool, bool, f32); 4] = [
        ("full", true, true, base.loss.beta),
        ("content-only", true, false, base.loss.beta),
        ("motion-only", false, true, base.loss.beta),
        ("plain", false, false, 0.0),
    ];
    let mut means = [0.0f64; 4];
    for seed in 0..3u64 {
        for (v, (_, content_aug, motion_aug, beta)) in variants.iter().enumerate() {
            let cfg = TrainConfig {
                seed,
                content_aug: *content_aug,
                motion_aug: *motion_aug,
                loss: LossWeights {
                    beta: *beta,
                    gamma: if *beta == 0.0 { 0.0 } else { base.loss.gamma },
                    ..base.loss.clone()
                },
                ..base.clone()
            };
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let out = run_train(&cfg, &train, dir.path()).map_err(|e| e.to_string())?;
            let model =
                SeqVae::from_store(cfg.model.clone(), &out.store).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let rep = swap_eval_motion(&model, &out.store, &judge, &test, &idx, &mut rng)
                .map_err(|e| e.to_string())?;
            means[v] += rep.acc / 3.0;
        }
    }
    let [full, content_only, motion_only, plain] = means;
    let mut problems = Vec::new();
    for (name, single) in [("content-only", content_only), ("motion-only", motion_only)] {
        if full < single - ABLATION_GAP {
            problems.push(format!("full {full:.3} under {name} {single:.3}"));
        }
        if single < plain - ABLATION_GAP {
            problems.push(format!("{name} {single:.3} under plain {plain:.3}"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "swap-motion acc full {full:.3} / content-only {content_only:.3} / motion-only {motion_only:.3} / plain {plain:.3}, {secs:.0}s"
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} [{detail}]", problems.join("; ")))
    }
}

/// The content-input information must grow over training and the
/// content-motion information must end below its peak.
fn mi_trends(rows: &[EpochRow]) -> Result<String, String> {
    let first = rows.first().ok_or("empty log")?;
    let last = rows.last().ok_or("empty log")?;
    let peak_sz = rows
        .iter()
        .map(|r| r.mi_sz_mws)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut problems = Vec::new();
    if last.mi_sx_mws <= first.mi_sx_mws {
        problems.push(format!(
            "content-input mi fell: {:.3} at epoch 1 to {:.3} at the end",
            first.mi_sx_mws, last.mi_sx_mws
        ));
    }
    if last.mi_sz_mws >= peak_sz {
        problems.push(format!(
            "content-motion mi never receded: final {:.3} is the peak",
            last.mi_sz_mws
        ));
    }
    let detail = format!(
        "I(s;x) {:.3}->{:.3}, I(s;z) peak {peak_sz:.3} final {:.3}",
        first.mi_sx_mws, last.mi_sx_mws, last.mi_sz_mws
    );
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} [{detail}]", problems.join("; ")))
    }
}

/// Same seed gives a bitwise-identical log, every format with a reader
/// round-trips bitwise, and a self-swap is exactly the reconstruction.
fn determinism_and_persistence(judge: Option<OracleClassifier>) -> Result<String, String> {
    let t = Instant::now();
    let scfg = SyntheticConfig::default();
    let data = generate(&scfg, 64, 5).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        seed: 9,
        epochs: 3,
        batch: 16,
        kl_warmup_epochs: 1,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_a = run_train(&cfg, &data, &dir.path().join("a")).map_err(|e| e.to_string())?;
    let out_b = run_train(&cfg, &data, &dir.path().join("b")).map_err(|e| e.to_string())?;
    let strip_wall = |path: &std::path::Path| -> Result<String, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        Ok(text
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n"))
    };
    if strip_wall(&out_a.log_path)? != strip_wall(&out_b.log_path)? {
        return Err("same seed produced different training logs".into());
    }

    let p1 = dir.path().join("d1.bin");
    let p2 = dir.path().join("d2.bin");
    write_dataset(&p1, &data).map_err(|e| e.to_string())?;
    let back = read_dataset(&p1).map_err(|e| e.to_string())?;
    write_dataset(&p2, &back).map_err(|e| e.to_string())?;
    if std::fs::read(&p1).unwrap() != std::fs::read(&p2).unwrap() {
        return Err("dataset file changed across a read-write cycle".into());
    }

    let c1 = dir.path().join("m1.cdsv");
    let c2 = dir.path().join("m2.cdsv");
    save_model(&c1, &cfg.model, &out_a.store).map_err(|e| e.to_string())?;
    let (model, store) = load_model(&c1).map_err(|e| e.to_string())?;
    save_model(&c2, &model.cfg, &store).map_err(|e| e.to_string())?;
    if std::fs::read(&c1).unwrap() != std::fs::read(&c2).unwrap() {
        return Err("model checkpoint changed across a read-write cycle".into());
    }

    if let Some(judge) = judge {
        let o1 = dir.path().join("o1.cdsv");
        let o2 = dir.path().join("o2.cdsv");
        judge.save(&o1).map_err(|e| e.to_string())?;
        let back = OracleClassifier::load(&o1).map_err(|e| e.to_string())?;
        back.save(&o2).map_err(|e| e.to_string())?;
        if std::fs::read(&o1).unwrap() != std::fs::read(&o2).unwrap() {
            return Err("judge checkpoint changed across a read-write cycle".into());
        }
    }

    let g1 = dir.path().join("f1.pgm");
    let g2 = dir.path().join("f2.pgm");
    let frame: Vec<f32> = (0..scfg.frame_dim())
        .map(|i| (i % 7) as f32 / 6.0)
        .collect();
    write_pgm(&g1, scfg.width, scfg.height, &frame).map_err(|e| e.to_string())?;
    let (w, h, raster) = read_pgm(&g1).map_err(|e| e.to_string())?;
    let decoded: Vec<f32> = raster.iter().map(|&b| b as f32 / 255.0).collect();
    write_pgm(&g2, w, h, &decoded).map_err(|e| e.to_string())?;
    if std::fs::read(&g1).unwrap() != std::fs::read(&g2).unwrap() {
        return Err("image file changed across a read-write cycle".into());
    }

    let recon = swap_decode(&model, &store, &data, 3, 3).map_err(|e| e.to_string())?;
    let path = interpolate_decode(&model, &store, &data, 3, 7, 1).map_err(|e| e.to_string())?;
    let same = recon
        .iter()
        .zip(path[0].iter())
        .all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    if !same {
        return Err("self-swap is not bitwise the reconstruction".into());
    }

    let secs = t.elapsed().as_secs_f64();
    Ok(format!(
        "log bitwise stable, 4 formats round-trip, self-swap exact, {secs:.0}s"
    ))
}
