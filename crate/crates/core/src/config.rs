//! Run configuration: `key=value` files with `#` comments, command-line
//! overrides, validation and a verbatim echo for every output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ce::LossWeights;
use crate::episodes::{Fusion, NUM_FOLDS};
use crate::error::{CelpError, Result};
use crate::eval::EvalOptions;
use crate::lps::LpsConfig;
use crate::model::{TrainSettings, DEFAULT_HIDDEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("expected f32 or f64, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub fold: usize,
    pub k: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub delta: f64,
    /// `None` selects `max(2, ceil(0.01·h·w))`.
    pub sigma: Option<usize>,
    pub eps: f64,
    pub w_ce: f64,
    pub w_aux: f64,
    /// Master switch for the auxiliary path.
    pub ce: bool,
    pub episodes: usize,
    pub fusion: Fusion,
    pub precision: Precision,
    pub hidden: usize,
    pub per_episode_miou: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            fold: 0,
            k: 1,
            steps: 2000,
            lr: 0.1,
            batch: 1,
            delta: 0.65,
            sigma: None,
            eps: 1e-7,
            w_ce: 0.1,
            w_aux: 1.0,
            ce: true,
            episodes: 200,
            fusion: Fusion::Average,
            precision: Precision::F32,
            hidden: DEFAULT_HIDDEN,
            per_episode_miou: false,
            out: PathBuf::from("run"),
        }
    }
}

/// Every key accepted by [`RunConfig::set`], in echo order.
pub const KEYS: [&str; 18] = [
    "seed",
    "fold",
    "k",
    "steps",
    "lr",
    "batch",
    "delta",
    "sigma",
    "eps",
    "w_ce",
    "w_aux",
    "ce",
    "episodes",
    "fusion",
    "precision",
    "hidden",
    "per_episode_miou",
    "out",
];

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| CelpError::config(field, format!("cannot parse `{value}`: {e}")))
}

fn parse_switch(field: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(CelpError::config(field, format!("expected on or off, got `{value}`"))),
    }
}

fn switch(v: bool) -> &'static str {
    if v {
        "on"
    } else {
        "off"
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "fold" => self.fold = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "sigma" => {
                self.sigma = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eps" => self.eps = parse(key, value)?,
            "w_ce" => self.w_ce = parse(key, value)?,
            "w_aux" => self.w_aux = parse(key, value)?,
            "ce" => self.ce = parse_switch(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "fusion" => self.fusion = parse(key, value)?,
            "precision" => self.precision = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "per_episode_miou" => self.per_episode_miou = parse_switch(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(CelpError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CelpError::config(format!("line {}", n + 1), format!("expected key=value, got `{line}`"))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CelpError::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(CelpError::config(field, msg));
        if self.fold >= NUM_FOLDS {
            return bad("fold", "must be in 0..=3");
        }
        if self.k == 0 {
            return bad("k", "must be at least 1");
        }
        if self.steps == 0 {
            return bad("steps", "must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", "must be finite and positive");
        }
        if self.batch == 0 {
            return bad("batch", "must be at least 1");
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps", "must be finite and positive");
        }
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1");
        }
        self.lps_config().validate()?;
        self.loss_weights().validate()?;
        self.fusion
            .check(self.k)
            .map_err(|e| CelpError::config("fusion", e.to_string()))
    }

    pub fn lps_config(&self) -> LpsConfig {
        LpsConfig {
            delta: self.delta,
            sigma: self.sigma,
            seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            w_ce: self.w_ce,
            w_aux: self.w_aux,
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            seed: self.seed,
            base_lr: self.lr,
            total_steps: self.steps,
            batch: self.batch,
            weights: self.loss_weights(),
            lps: self.lps_config(),
            eps: self.eps,
            ce_enabled: self.ce,
            hidden: self.hidden,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            fold: self.fold,
            k: self.k,
            fusion: self.fusion,
            episodes_per_class: self.episodes,
            seed: self.seed,
            duplicate_supports: false,
            per_episode_miou: self.per_episode_miou,
            lps: self.lps_config(),
            eps: self.eps,
        }
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "fold" => self.fold.to_string(),
            "k" => self.k.to_string(),
            "steps" => self.steps.to_string(),
            "lr" => self.lr.to_string(),
            "batch" => self.batch.to_string(),
            "delta" => self.delta.to_string(),
            "sigma" => self.sigma.map_or("auto".into(), |s| s.to_string()),
            "eps" => self.eps.to_string(),
            "w_ce" => self.w_ce.to_string(),
            "w_aux" => self.w_aux.to_string(),
            "ce" => switch(self.ce).into(),
            "episodes" => self.episodes.to_string(),
            "fusion" => self.fusion.to_string(),
            "precision" => self.precision.to_string(),
            "hidden" => self.hidden.to_string(),
            "per_episode_miou" => switch(self.per_episode_miou).into(),
            "out" => self.out.display().to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Full effective configuration; parses back to an equal value.
    pub fn echo(&self) -> String {
        let mut s = String::from("# effective configuration\n");
        for key in KEYS {
            s.push_str(&format!("{key}={}\n", self.value_of(key)));
        }
        s
    }
}
