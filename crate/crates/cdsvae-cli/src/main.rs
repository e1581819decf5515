//! Command-line front end: dataset generation, model and judge training,
//! evaluation, latent swaps and interpolation, and gradient verification.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or format error,
//! 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cdsvae::error::{Error, Result};
use cdsvae::metrics::{
    factor_eer, interpolate_decode, swap_decode, swap_eval_content, swap_eval_motion,
    train_oracle, MetricReport, OracleClassifier, OracleConfig,
};
use cdsvae::model::{load_model, SeqVae};
use cdsvae::objectives::total_loss_grad_check;
use cdsvae::synthseq::{generate, read_dataset, write_dataset, Dataset, SyntheticConfig};
use cdsvae::train::{run_train, TrainConfig};

use cdsvae_cli::pgm::write_pgm;

#[derive(Parser)]
#[command(
    name = "cdsvae",
    version,
    about = "Contrastively disentangled sequential VAE: data, training, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic moving-blob dataset
    GenData {
        /// TOML file with keys n, seed, and a [sequence] table
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, writing log.csv and checkpoints into --out
    Train {
        /// TOML training configuration; unknown keys are rejected
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; falls back to the config's `data` entry
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the supervised judge network used by eval
    TrainOracle {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint: swap accuracies, verification EERs, report CSV
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Judge checkpoint from train-oracle
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Decode two sequences with exchanged content and motion factors
    Swap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Two dataset indices as "i,j"
        #[arg(long)]
        indices: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a linear path between two content codes
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Two dataset indices as "i,j"
        #[arg(long)]
        pair: String,
        /// Number of intermediate points
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against central finite differences
    GradCheck {
        /// Validated for well-formedness; the check runs on a fixed small model
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f32,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Format { .. } | Error::Io { .. } | Error::Contract(_) => 3,
        Error::Shape { .. } | Error::NonFinite { .. } | Error::Diverged { .. } => 4,
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData { config, out } => cmd_gen_data(&config, &out),
        Cmd::Train {
            config,
            data,
            out,
            seed,
        } => cmd_train(&config, data.as_deref(), &out, seed),
        Cmd::TrainOracle { data, out } => cmd_train_oracle(&data, &out),
        Cmd::Eval {
            ckpt,
            data,
            oracle,
            report,
        } => cmd_eval(&ckpt, &data, &oracle, &report),
        Cmd::Swap {
            ckpt,
            data,
            indices,
            out,
        } => cmd_swap(&ckpt, &data, &indices, &out),
        Cmd::Interpolate {
            ckpt,
            data,
            pair,
            steps,
            out,
        } => cmd_interpolate(&ckpt, &data, &pair, steps, &out),
        Cmd::GradCheck { config, tol } => cmd_grad_check(&config, tol),
    }
}

/// Config files are part of the configuration surface, so unreadable ones
/// map to the config exit code rather than the I/O one.
fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

fn parse_pair(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| Error::config(format!("expected two indices as i,j, got {text:?}")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::config(format!("bad index {s:?}")))
    };
    Ok((parse(a)?, parse(b)?))
}

fn check_index(data: &Dataset, i: usize) -> Result<()> {
    if i >= data.len() {
        return Err(Error::contract(format!(
            "sequence index {i} out of range for dataset of {}",
            data.len()
        )));
    }
    Ok(())
}

fn check_geometry(model: &SeqVae, data: &Dataset) -> Result<()> {
    let m = &model.cfg;
    let d = &data.cfg;
    if m.t_steps != d.t_steps
        || m.height != d.height
        || m.width != d.width
        || m.channels != d.channels
    {
        return Err(Error::contract(format!(
            "checkpoint expects {}x{}x{} over {} steps, dataset is {}x{}x{} over {}",
            m.height, m.width, m.channels, m.t_steps, d.height, d.width, d.channels, d.t_steps
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenConfig {
    n: usize,
    seed: u64,
    sequence: SyntheticConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 2000,
            seed: 0,
            sequence: SyntheticConfig::default(),
        }
    }
}

fn cmd_gen_data(config: &Path, out: &Path) -> Result<ExitCode> {
    let cfg: GenConfig = toml::from_str(&read_config(config)?)
        .map_err(|e| Error::config(format!("config parse: {e}")))?;
    if cfg.n == 0 {
        return Err(Error::config("n must be at least 1"));
    }
    let data = generate(&cfg.sequence, cfg.n, cfg.seed)?;
    write_dataset(out, &data)?;
    println!(
        "wrote {} sequences of {} {}x{} frames to {}",
        data.len(),
        data.cfg.t_steps,
        data.cfg.height,
        data.cfg.width,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(
    config: &Path,
    data: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<ExitCode> {
    let mut cfg = TrainConfig::from_toml(&read_config(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data_path: PathBuf = match (data, &cfg.data) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(Error::config(
                "no dataset: pass --data or set `data` in the config",
            ))
        }
    };
    let dataset = read_dataset(&data_path)?;
    let outcome = run_train(&cfg, &dataset, out)?;
    let last = outcome.rows.last().expect("at least one epoch");
    println!(
        "trained {} epochs in {:.1}s: recon {:.4}, total {:.4}; best epoch {} (val {:.4})",
        last.epoch, last.wall_seconds, last.recon, last.total, outcome.best_epoch,
        outcome.best_val_loss
    );
    println!(
        "log {} / checkpoints {} {}",
        outcome.log_path.display(),
        outcome.ckpt_best.display(),
        outcome.ckpt_final.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_oracle(data: &Path, out: &Path) -> Result<ExitCode> {
    let dataset = read_dataset(data)?;
    if dataset.len() < 10 {
        return Err(Error::contract(
            "judge training needs at least 10 sequences",
        ));
    }
    let split = dataset.len() * 4 / 5;
    let train = Dataset {
        cfg: dataset.cfg.clone(),
        seqs: dataset.seqs[..split].to_vec(),
    };
    let val = Dataset {
        cfg: dataset.cfg.clone(),
        seqs: dataset.seqs[split..].to_vec(),
    };
    let judge = train_oracle(&train, &val, &OracleConfig::default(), 0)?;
    judge.save(out)?;
    println!(
        "judge qualified: content {:.4}, motion {:.4} -> {}",
        judge.val_acc_content,
        judge.val_acc_motion,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(ckpt: &Path, data: &Path, oracle: &Path, report: &Path) -> Result<ExitCode> {
    let (model, store) = load_model(ckpt)?;
    let dataset = read_dataset(data)?;
    check_geometry(&model, &dataset)?;
    let judge = OracleClassifier::load(oracle)?;
    let idx: Vec<usize> = (0..dataset.len()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let motion = swap_eval_motion(&model, &store, &judge, &dataset, &idx, &mut rng)?;
    let content = swap_eval_content(&model, &store, &judge, &dataset, &idx, &mut rng)?;
    let eer = factor_eer(&model, &store, &dataset, &idx)?;
    let (qc, qm) = (judge.val_acc_content, judge.val_acc_motion);

    let stem = ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let row = |protocol: &str, acc: f64, stats: &cdsvae::metrics::PredictionStats, n: usize| {
        MetricReport {
            run_id: format!("{stem}-{protocol}"),
            acc,
            is_score: stats.is_score,
            inter_entropy: stats.inter_entropy,
            intra_entropy: stats.intra_entropy,
            content_eer: eer.content_eer,
            motion_eer: eer.motion_eer,
            n_eval: n,
            oracle_val_acc_content: qc,
            oracle_val_acc_motion: qm,
        }
    };
    let rows = [
        row("swap-motion", motion.acc, &motion.stats, motion.n_eval),
        row("swap-content", content.acc, &content.stats, content.n_eval),
    ];
    let mut text = String::from(MetricReport::CSV_HEADER);
    text.push('\n');
    for r in &rows {
        r.validate()?;
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    std::fs::write(report, text).map_err(|e| Error::io(report, e))?;
    println!(
        "swap motion acc {:.4} / content acc {:.4}; content EER {:.4}, motion EER {:.4} -> {}",
        motion.acc,
        content.acc,
        eer.content_eer,
        eer.motion_eer,
        report.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Writes one decoded sequence as seq{idx}_t{step}.pgm files.
fn dump_sequence(
    dir: &Path,
    idx: usize,
    frames: &[Vec<f32>],
    width: usize,
    height: usize,
) -> Result<()> {
    for (t, frame) in frames.iter().enumerate() {
        write_pgm(&dir.join(format!("seq{idx}_t{t}.pgm")), width, height, frame)?;
    }
    Ok(())
}

fn cmd_swap(ckpt: &Path, data: &Path, indices: &str, out: &Path) -> Result<ExitCode> {
    let (i, j) = parse_pair(indices)?;
    let (model, store) = load_model(ckpt)?;
    let dataset = read_dataset(data)?;
    check_geometry(&model, &dataset)?;
    check_index(&dataset, i)?;
    check_index(&dataset, j)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let original = |seq: usize| -> Vec<Vec<f32>> {
        (0..dataset.cfg.t_steps)
            .map(|t| dataset.frame(seq, t).to_vec())
            .collect()
    };
    let (w, h) = (dataset.cfg.width, dataset.cfg.height);
    dump_sequence(out, 0, &original(i), w, h)?;
    dump_sequence(out, 1, &original(j), w, h)?;
    dump_sequence(out, 2, &swap_decode(&model, &store, &dataset, i, j)?, w, h)?;
    dump_sequence(out, 3, &swap_decode(&model, &store, &dataset, j, i)?, w, h)?;
    println!(
        "wrote originals ({i}, {j}) and both cross-decodes to {}",
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_interpolate(
    ckpt: &Path,
    data: &Path,
    pair: &str,
    steps: usize,
    out: &Path,
) -> Result<ExitCode> {
    if steps < 1 {
        return Err(Error::config("steps must be at least 1"));
    }
    let (a, b) = parse_pair(pair)?;
    let (model, store) = load_model(ckpt)?;
    let dataset = read_dataset(data)?;
    check_geometry(&model, &dataset)?;
    check_index(&dataset, a)?;
    check_index(&dataset, b)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let path = interpolate_decode(&model, &store, &dataset, a, b, steps)?;
    let (w, h) = (dataset.cfg.width, dataset.cfg.height);
    for (idx, frames) in path.iter().enumerate() {
        dump_sequence(out, idx, frames, w, h)?;
    }
    println!(
        "wrote {} interpolated sequences between {a} and {b} to {}",
        path.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_grad_check(config: &Path, tol: f32) -> Result<ExitCode> {
    let _ = TrainConfig::from_toml(&read_config(config)?)?;

    let step = 1e-3;
    let mut failed = 0usize;
    for check in cdsvae::autodiff::op_kind_checks(tol, step, 11)? {
        let ok = check.report.passed();
        println!(
            "{} {:20} max rel err {:.3e}",
            if ok { "pass" } else { "FAIL" },
            check.name,
            check.report.max_rel_err
        );
        failed += usize::from(!ok);
    }
    let report = total_loss_grad_check(tol, step, 5)?;
    println!(
        "{} {:20} max rel err {:.3e}",
        if report.passed() { "pass" } else { "FAIL" },
        "total_loss",
        report.max_rel_err
    );
    failed += usize::from(!report.passed());

    if failed > 0 {
        eprintln!("{failed} gradient check(s) exceeded tolerance {tol}");
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}
