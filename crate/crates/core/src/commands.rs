//! The command implementations behind the `celp` binary. Each one writes its
//! effective configuration into the output directory before anything else.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::{Precision, RunConfig};
use crate::episodes::{read_tensor_file, write_tensor_file, FoldSplit, Fusion, TensorFile};
use crate::error::{CelpError, Result};
use crate::eval::{evaluate, write_metrics_csv, EvalReport};
use crate::lps::sample_latent_prototype;
use crate::mask::{LabelMask, FOREGROUND, IGNORE};
use crate::model::{train, Backbone, Checkpoint, DecoderShape, LossReport, Model};
use crate::numeric::{FeatureMap, Real};
use crate::rng::{SplitMix64, Stream};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";

/// Process exit status for an error.
pub fn exit_code(err: &CelpError) -> i32 {
    match err {
        CelpError::Config { .. } => 2,
        CelpError::Format { .. } | CelpError::UnsupportedDtype(_) => 3,
        CelpError::EmptyCandidates => 4,
        _ => 1,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CelpError::io(path, e))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CelpError::io(&cfg.out, e))?;
    write_file(&cfg.out.join(CONFIG_FILE), cfg.echo().as_bytes())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CelpError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush<W: Write>(w: &mut csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CelpError::io(path, e))
}

pub fn decoder_shape(cfg: &RunConfig) -> DecoderShape {
    DecoderShape {
        hidden: cfg.hidden,
        ..DecoderShape::for_features(crate::model::MID_CHANNELS)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub losses: Vec<LossReport>,
    pub skipped: usize,
    pub checkpoint: PathBuf,
}

fn train_as<T: Real>(cfg: &RunConfig) -> Result<TrainOutcome> {
    let backbone = Backbone::<T>::standard();
    let split = FoldSplit::new(cfg.fold)?;
    let loss_path = cfg.out.join(LOSS_FILE);
    let mut w = csv_writer(&loss_path)?;
    w.write_record(["step", "lr", "L_main", "L_ce", "L_aux", "total"])?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut write_err = None;
    let state = train(cfg.train_settings(), &backbone, &split, |r| {
        let row = [
            r.step.to_string(),
            r.lr.to_string(),
            r.l_main.to_string(),
            r.l_ce.to_string(),
            r.l_aux.to_string(),
            r.total.to_string(),
        ];
        if let Err(e) = w.write_record(&row) {
            write_err.get_or_insert(e);
        }
        if (r.step + 1) % 100 == 0 {
            info!("step {} lr {:.5} total {:.4}", r.step + 1, r.lr, r.total);
        }
        losses.push(r.clone());
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    flush(&mut w, &loss_path)?;
    if state.skipped > 0 {
        warn!("{} training episodes skipped for empty support foreground", state.skipped);
    }
    let checkpoint = cfg.out.join(CHECKPOINT_FILE);
    Checkpoint::from_decoder(&state.decoder, state.step()).save(&checkpoint)?;
    Ok(TrainOutcome {
        losses,
        skipped: state.skipped,
        checkpoint,
    })
}

/// Trains on the fold's training classes; writes the echoed config, the
/// per-step loss CSV and the checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    prepare_out(cfg)?;
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg),
        Precision::F64 => train_as::<f64>(cfg),
    }
}

fn eval_as<T: Real>(cfg: &RunConfig, checkpoint: &Checkpoint) -> Result<EvalReport> {
    let decoder = checkpoint.to_decoder::<T>(decoder_shape(cfg))?;
    let model = Model::new(Backbone::standard(), decoder)?;
    evaluate(&model, &cfg.eval_options())
}

/// Evaluates a checkpoint and writes `metrics_file` inside the output
/// directory.
pub fn cmd_eval_to(cfg: &RunConfig, checkpoint: &Path, metrics_file: &str) -> Result<EvalReport> {
    cfg.validate()?;
    prepare_out(cfg)?;
    let ck = Checkpoint::load(checkpoint)?;
    let report = match cfg.precision {
        Precision::F32 => eval_as::<f32>(cfg, &ck)?,
        Precision::F64 => eval_as::<f64>(cfg, &ck)?,
    };
    let path = cfg.out.join(metrics_file);
    let file = fs::File::create(&path).map_err(|e| CelpError::io(&path, e))?;
    write_metrics_csv(&report, file)?;
    Ok(report)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    cmd_eval_to(cfg, checkpoint, METRICS_FILE)
}

pub const MINED_MASK_FILE: &str = "pseudo_mask.celp";
pub const MINED_PROTOTYPE_FILE: &str = "prototype.celp";
pub const MINED_PREVIEW_FILE: &str = "pseudo_mask.pgm";

/// Binary PGM (P5, maxval 255): background black, mined region white,
/// ignored positions grey.
pub fn mask_to_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.labels().iter().map(|&v| match v {
        FOREGROUND => 255,
        IGNORE => 128,
        _ => 0,
    }));
    out
}

#[derive(Debug, Clone)]
pub struct MineOutcome {
    pub pseudo_mask: LabelMask,
    pub prototype: Vec<f64>,
    pub center_index: usize,
    pub candidate_count: usize,
}

fn read_features(path: &Path) -> Result<FeatureMap<f64>> {
    FeatureMap::new(read_tensor_file(path)?.to_tensor::<f64>()?)
}

fn read_mask(path: &Path) -> Result<LabelMask> {
    let file = read_tensor_file(path)?;
    let mask = file.to_mask()?;
    Ok(mask)
}

/// Standalone latent mining on externally supplied features. An empty
/// candidate set is reported as [`CelpError::EmptyCandidates`].
pub fn cmd_mine(cfg: &RunConfig, mid: &Path, high: &Path, mask: &Path) -> Result<MineOutcome> {
    cfg.validate()?;
    let mid = read_features(mid)?;
    let high = read_features(high)?;
    let mask = read_mask(mask)?;
    prepare_out(cfg)?;
    let mut rng = SplitMix64::derive(cfg.seed, Stream::Lps);
    let sample = sample_latent_prototype(&mid, &high, &mask, &cfg.lps_config(), &mut rng)?
        .ok_or(CelpError::EmptyCandidates)?;
    write_tensor_file(cfg.out.join(MINED_MASK_FILE), &TensorFile::from_mask(&sample.pseudo_mask))?;
    write_tensor_file(
        cfg.out.join(MINED_PROTOTYPE_FILE),
        &TensorFile::from_tensor(&sample.prototype.to_tensor()),
    )?;
    write_file(&cfg.out.join(MINED_PREVIEW_FILE), &mask_to_pgm(&sample.pseudo_mask))?;
    Ok(MineOutcome {
        prototype: sample.prototype.0.clone(),
        pseudo_mask: sample.pseudo_mask,
        center_index: sample.center_index,
        candidate_count: sample.candidate_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Delta,
    Weight,
    Kshot,
}

impl std::str::FromStr for Study {
    type Err = CelpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(Study::Delta),
            "weight" => Ok(Study::Weight),
            "kshot" => Ok(Study::Kshot),
            _ => Err(CelpError::config(
                "study",
                format!("unknown study `{s}`; expected delta, weight or kshot"),
            )),
        }
    }
}

impl Study {
    pub fn name(&self) -> &'static str {
        match self {
            Study::Delta => "delta",
            Study::Weight => "weight",
            Study::Kshot => "kshot",
        }
    }
}

pub const DELTA_GRID: [f64; 4] = [0.40, 0.50, 0.65, 0.80];
pub const WEIGHT_GRID: [f64; 4] = [0.00, 0.10, 0.25, 1.00];
pub const KSHOT_SHOTS: usize = 5;

pub fn kshot_columns() -> Vec<Fusion> {
    std::iter::once(Fusion::Average)
        .chain((1..=KSHOT_SHOTS).map(Fusion::Vote))
        .collect()
}

fn cell_config(base: &RunConfig, name: &str) -> RunConfig {
    RunConfig {
        out: base.out.join(name),
        ..base.clone()
    }
}

/// One training run then evaluations at each `(k, fusion)`.
fn train_and_eval(cfg: &RunConfig, evals: &[(usize, Fusion)]) -> Result<Vec<EvalReport>> {
    let trained = cmd_train(cfg)?;
    evals
        .iter()
        .map(|&(k, fusion)| {
            let ecfg = RunConfig { k, fusion, ..cfg.clone() };
            let file = format!("metrics_k{}_{}.csv", k, fusion);
            cmd_eval_to(&ecfg, &trained.checkpoint, &file)
        })
        .collect()
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

/// Runs one ablation sweep and writes `ablation_<study>.csv` laid out like
/// the corresponding table: rows are settings, columns are 1-shot and
/// 5-shot mIoU/FB-IoU (or fusion modes for the K-shot study).
pub fn cmd_ablate(base: &RunConfig, study: Study) -> Result<PathBuf> {
    base.validate()?;
    prepare_out(base)?;
    let path = base.out.join(format!("ablation_{}.csv", study.name()));
    let mut w = csv_writer(&path)?;
    let shot_evals = [(1, Fusion::Average), (KSHOT_SHOTS, Fusion::Average)];
    let shot_header = ["1shot_miou", "1shot_fb_iou", "5shot_miou", "5shot_fb_iou"];
    match study {
        Study::Delta | Study::Weight => {
            let (key, grid) = match study {
                Study::Delta => ("delta", DELTA_GRID),
                _ => ("w_ce", WEIGHT_GRID),
            };
            let mut header = vec![key];
            header.extend(shot_header);
            w.write_record(&header)?;
            for value in grid {
                let label = format!("{value:.2}");
                let mut cfg = cell_config(base, &format!("{key}_{label}"));
                cfg.set(key, &value.to_string())?;
                cfg.validate()?;
                let reports = train_and_eval(&cfg, &shot_evals)?;
                let mut row = vec![label];
                for r in &reports {
                    row.push(fmt_metric(r.miou));
                    row.push(fmt_metric(r.fb_iou));
                }
                w.write_record(&row)?;
            }
        }
        Study::Kshot => {
            let columns = kshot_columns();
            let mut header = vec!["metric".to_string()];
            header.extend(columns.iter().map(Fusion::table_label));
            w.write_record(&header)?;
            let cfg = cell_config(base, "kshot");
            let evals: Vec<_> = columns.iter().map(|&f| (KSHOT_SHOTS, f)).collect();
            let reports = train_and_eval(&cfg, &evals)?;
            for (name, get) in [("mIoU", (|r: &EvalReport| r.miou) as fn(&EvalReport) -> f64), ("FB-IoU", |r| r.fb_iou)] {
                let mut row = vec![name.to_string()];
                row.extend(reports.iter().map(|r| fmt_metric(get(r))));
                w.write_record(&row)?;
            }
        }
    }
    flush(&mut w, &path)?;
    Ok(path)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub runs: Vec<PathBuf>,
    pub malformed: Vec<(PathBuf, String)>,
    pub rows: usize,
    pub missing_cells: usize,
}

type CellKey = (String, String, String, String, String);

#[derive(Debug, Default)]
struct Cell {
    iou: Vec<f64>,
    miou: Vec<f64>,
    fb_iou: Vec<f64>,
}

fn read_metrics(dir: &Path) -> std::result::Result<Vec<(CellKey, [f64; 3])>, String> {
    let path = dir.join(METRICS_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    let want = crate::eval::METRICS_HEADER;
    if headers.iter().ne(want.iter().copied()) {
        return Err(format!("{}: unexpected header", path.display()));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| -> std::result::Result<f64, String> {
            rec[i].parse().map_err(|_| format!("{}: bad number `{}`", path.display(), &rec[i]))
        };
        let key = (
            rec[0].to_string(),
            rec[1].to_string(),
            rec[2].to_string(),
            rec[3].to_string(),
            rec[4].to_string(),
        );
        rows.push((key, [num(5)?, num(6)?, num(7)?]));
    }
    if rows.is_empty() {
        return Err(format!("{}: no rows", path.display()));
    }
    Ok(rows)
}

/// Mean and sample standard deviation; the deviation is `None` for fewer
/// than two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Merges `metrics.csv` of every run directory into `report.csv` (mean and
/// sample standard deviation per cell) and `summary.txt`. Unreadable run
/// directories are listed, not fatal.
pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    fs::create_dir_all(out).map_err(|e| CelpError::io(out, e))?;
    let mut summary = ReportSummary::default();
    let mut cells: BTreeMap<CellKey, Cell> = BTreeMap::new();
    for dir in runs {
        match read_metrics(dir) {
            Ok(rows) => {
                summary.runs.push(dir.clone());
                for (key, [iou, miou, fb]) in rows {
                    let c = cells.entry(key).or_default();
                    c.iou.push(iou);
                    c.miou.push(miou);
                    c.fb_iou.push(fb);
                }
            }
            Err(msg) => {
                warn!("skipping run {}: {msg}", dir.display());
                summary.malformed.push((dir.clone(), msg));
            }
        }
    }
    if summary.runs.is_empty() {
        return Err(CelpError::config("runs", "no readable run directory"));
    }
    let path = out.join("report.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "fold", "phase", "K", "fusion", "class_id", "runs", "iou_mean", "iou_std", "miou_mean",
        "miou_std", "fb_iou_mean", "fb_iou_std", "missing",
    ])?;
    let n_runs = summary.runs.len();
    let std_text = |s: Option<f64>| s.map_or(String::new(), fmt_metric);
    for (key, c) in &cells {
        let missing = n_runs - c.iou.len();
        summary.missing_cells += missing;
        let (im, is) = mean_std(&c.iou);
        let (mm, ms) = mean_std(&c.miou);
        let (fm, fs_) = mean_std(&c.fb_iou);
        w.write_record([
            key.0.clone(),
            key.1.clone(),
            key.2.clone(),
            key.3.clone(),
            key.4.clone(),
            c.iou.len().to_string(),
            fmt_metric(im),
            std_text(is),
            fmt_metric(mm),
            std_text(ms),
            fmt_metric(fm),
            std_text(fs_),
            missing.to_string(),
        ])?;
    }
    flush(&mut w, &path)?;
    summary.rows = cells.len();

    let mut text = format!("runs merged: {}\n", n_runs);
    for r in &summary.runs {
        text.push_str(&format!("  {}\n", r.display()));
    }
    text.push_str(&format!("cells: {}\nmissing cells: {}\n", summary.rows, summary.missing_cells));
    for (key, c) in &cells {
        if c.iou.len() < n_runs {
            text.push_str(&format!(
                "  missing: fold={} phase={} K={} fusion={} class={} in {} run(s)\n",
                key.0,
                key.1,
                key.2,
                key.3,
                key.4,
                n_runs - c.iou.len()
            ));
        }
    }
    if !summary.malformed.is_empty() {
        text.push_str("malformed run directories:\n");
        for (d, msg) in &summary.malformed {
            text.push_str(&format!("  {}: {msg}\n", d.display()));
        }
    }
    write_file(&out.join("summary.txt"), text.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_mapping() {
        let mask = LabelMask::new(1, 3, vec![0, 1, 255]).unwrap();
        let pgm = mask_to_pgm(&mask);
        assert_eq!(&pgm[..pgm.len() - 3], b"P5\n3 1\n255\n");
        assert_eq!(&pgm[pgm.len() - 3..], &[0, 255, 128]);
    }

    #[test]
    fn two_point_std() {
        let (m, s) = mean_std(&[0.5, 0.7]);
        assert!((m - 0.6).abs() < 1e-15);
        // sqrt(((0.1)^2 + (0.1)^2) / 1)
        assert!((s.unwrap() - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.3]), (0.3, None));
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            exit_code(&CelpError::config("x", "y")),
            exit_code(&CelpError::Format { offset: 0, message: String::new() }),
            exit_code(&CelpError::EmptyCandidates),
            exit_code(&CelpError::dim("z")),
        ];
        assert_eq!(codes, [2, 3, 4, 1]);
    }

    #[test]
    fn unknown_study_is_a_config_error() {
        assert!(matches!("gamma".parse::<Study>(), Err(CelpError::Config { .. })));
        assert_eq!("kshot".parse::<Study>().unwrap(), Study::Kshot);
    }
}
