use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use celp::commands::{self, Study};
use celp::config::RunConfig;
use celp::{CelpError, Result};

/// Contrastive enhancement with latent prototypes: episodic training,
/// evaluation, standalone mining and ablation sweeps on a synthetic
/// few-shot segmentation benchmark.
///
/// Settings are layered: built-in defaults, then `--config FILE`
/// (key=value lines, `#` comments), then flags. Every command writes the
/// effective configuration to `<out>/config.txt`.
///
/// Exit codes: 0 success, 1 other error, 2 configuration error, 3 file
/// format error, 4 no latent region found by `mine`.
#[derive(Parser, Debug)]
#[command(name = "celp", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for data, LPS, init and evaluation streams [default: 0]
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Fold 0..=3; its three test classes are held out [default: 0]
    #[arg(long, global = true)]
    fold: Option<String>,
    /// Supports per evaluation episode [default: 1]
    #[arg(long, global = true)]
    k: Option<String>,
    /// Latent similarity threshold δ in (0, 1] [default: 0.65]
    #[arg(long, global = true)]
    delta: Option<String>,
    /// Candidate count threshold, or `auto` for max(2, ceil(0.01·h·w)) [default: auto]
    #[arg(long, global = true)]
    sigma: Option<String>,
    /// Weight of the contrastive-enhancement loss [default: 0.1]
    #[arg(long = "w-ce", global = true)]
    w_ce: Option<String>,
    /// Weight of the multi-scale auxiliary loss [default: 1.0]
    #[arg(long = "w-aux", global = true)]
    w_aux: Option<String>,
    /// Training steps [default: 2000]
    #[arg(long, global = true)]
    steps: Option<String>,
    /// Base learning rate of the poly schedule [default: 0.1]
    #[arg(long, global = true)]
    lr: Option<String>,
    /// Evaluation episodes per test class [default: 200]
    #[arg(long, global = true)]
    episodes: Option<String>,
    /// K-shot fusion: avg or v1..v5 [default: avg]
    #[arg(long, global = true)]
    fusion: Option<String>,
    /// Floating-point precision: f32 or f64 [default: f32]
    #[arg(long, global = true)]
    precision: Option<String>,
    /// Output directory [default: run]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra key=value overrides (repeatable), e.g. --set ce=off
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the fold's training classes; writes checkpoint.bin, loss.csv, config.txt
    Train,
    /// Evaluate a checkpoint on the fold's test classes; writes metrics.csv
    Eval {
        /// Checkpoint to evaluate [default: <out>/checkpoint.bin]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Mine a latent region from tensor files of F^m, F^h and the ground-truth mask
    Mine {
        feature_m: PathBuf,
        feature_h: PathBuf,
        mask: PathBuf,
    },
    /// Sweep one hyperparameter study: delta, weight or kshot
    Ablate {
        #[arg(long)]
        study: String,
    },
    /// Merge metrics.csv of several run directories into report.csv and summary.txt
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    let flags = [
        ("seed", &c.seed),
        ("fold", &c.fold),
        ("k", &c.k),
        ("delta", &c.delta),
        ("sigma", &c.sigma),
        ("w_ce", &c.w_ce),
        ("w_aux", &c.w_aux),
        ("steps", &c.steps),
        ("lr", &c.lr),
        ("episodes", &c.episodes),
        ("fusion", &c.fusion),
        ("precision", &c.precision),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CelpError::config("set", format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, common: &Common) -> Result<()> {
    match cli.command {
        Command::Report { runs } => {
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            let s = commands::cmd_report(&runs, &out)?;
            println!(
                "merged {} run(s) into {} ({} cells, {} missing, {} malformed)",
                s.runs.len(),
                out.join("report.csv").display(),
                s.rows,
                s.missing_cells,
                s.malformed.len()
            );
        }
        command => {
            let cfg = build_config(common)?;
            match command {
                Command::Train => {
                    let t = commands::cmd_train(&cfg)?;
                    let last = t.losses.last().map_or(f64::NAN, |r| r.total);
                    println!("trained {} steps, final loss {last:.4}; wrote {}", t.losses.len(), t.checkpoint.display());
                }
                Command::Eval { checkpoint } => {
                    let ck = checkpoint.unwrap_or_else(|| cfg.out.join(commands::CHECKPOINT_FILE));
                    let r = commands::cmd_eval(&cfg, &ck)?;
                    println!("mIoU {:.4}  FB-IoU {:.4}  over {} episodes", r.miou, r.fb_iou, r.episodes);
                }
                Command::Mine { feature_m, feature_h, mask } => {
                    let m = commands::cmd_mine(&cfg, &feature_m, &feature_h, &mask)?;
                    println!(
                        "centre {} of {} candidates; {} positions mined",
                        m.center_index,
                        m.candidate_count,
                        m.pseudo_mask.count(celp::mask::FOREGROUND)
                    );
                }
                Command::Ablate { study } => {
                    let study: Study = study.parse()?;
                    let path = commands::cmd_ablate(&cfg, study)?;
                    println!("wrote {}", path.display());
                }
                Command::Report { .. } => unreachable!(),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = cli.common.clone();
    match run(cli, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CelpError::EmptyCandidates => eprintln!("no latent region: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
