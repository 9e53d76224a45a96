//! Segmentation metrics and the episodic evaluator.

use std::collections::BTreeMap;

use log::warn;

use crate::episodes::{sample_episode_for_class, FoldSplit, Fusion, Phase};
use crate::error::{CelpError, Result};
use crate::lps::LpsConfig;
use crate::mask::{LabelMask, BACKGROUND, FOREGROUND, IGNORE};
use crate::model::{Model, PreparedEpisode};
use crate::numeric::Real;
use crate::rng::{SplitMix64, Stream};

/// Intersection and union counts for one binary region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub intersection: u64,
    pub union: u64,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.intersection += other.intersection;
        self.union += other.union;
    }

    pub fn iou(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassTally {
    /// Foreground tallies pooled over every episode of the class.
    pub pooled: Tally,
    pub episodes: u64,
    /// Sum and count of per-episode foreground IoUs (episodes with an empty
    /// union contribute nothing).
    pub episode_iou_sum: f64,
    pub episode_iou_count: u64,
}

/// Mergeable metric state. All pooled tallies are integers, so the result
/// does not depend on accumulation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionAccumulator {
    classes: BTreeMap<usize, ClassTally>,
    foreground: Tally,
    background: Tally,
}

fn region_tally(pred: &LabelMask, gt: &LabelMask, label: u8) -> Tally {
    let mut t = Tally::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == IGNORE {
            continue;
        }
        let (a, b) = (p == label, g == label);
        t.intersection += (a && b) as u64;
        t.union += (a || b) as u64;
    }
    t
}

impl ConfusionAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one episode. Returns its foreground IoU, or `None` when both
    /// prediction and ground truth are empty outside ignored positions.
    pub fn accumulate(&mut self, pred: &LabelMask, gt: &LabelMask, class_id: usize) -> Result<Option<f64>> {
        gt.check_grid(pred.height(), pred.width(), "accumulate")?;
        if let Some(i) = pred.labels().iter().position(|&v| v != BACKGROUND && v != FOREGROUND) {
            return Err(CelpError::InvalidLabel {
                index: i,
                value: pred.labels()[i],
            });
        }
        let fg = region_tally(pred, gt, FOREGROUND);
        let bg = region_tally(pred, gt, BACKGROUND);
        self.foreground.add(fg);
        self.background.add(bg);
        let entry = self.classes.entry(class_id).or_default();
        entry.pooled.add(fg);
        entry.episodes += 1;
        let iou = fg.iou();
        if let Some(v) = iou {
            entry.episode_iou_sum += v;
            entry.episode_iou_count += 1;
        }
        Ok(iou)
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        for (&c, t) in &other.classes {
            let e = self.classes.entry(c).or_default();
            e.pooled.add(t.pooled);
            e.episodes += t.episodes;
            e.episode_iou_sum += t.episode_iou_sum;
            e.episode_iou_count += t.episode_iou_count;
        }
        self.foreground.add(other.foreground);
        self.background.add(other.background);
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &BTreeMap<usize, ClassTally> {
        &self.classes
    }

    pub fn class_iou(&self, class_id: usize) -> Option<f64> {
        self.classes.get(&class_id).and_then(|t| t.pooled.iou())
    }

    /// Mean over classes of pooled IoU, or of the per-episode mean IoU when
    /// `per_episode` is set. Classes with no defined IoU are left out.
    pub fn miou_with(&self, per_episode: bool) -> Result<f64> {
        if self.is_empty() {
            return Err(CelpError::EmptyAccumulator);
        }
        let mut values = Vec::new();
        for (&c, t) in &self.classes {
            let v = if per_episode {
                (t.episode_iou_count > 0).then(|| t.episode_iou_sum / t.episode_iou_count as f64)
            } else {
                t.pooled.iou()
            };
            match v {
                Some(v) => values.push(v),
                None => warn!("class {c} has an empty union and is left out of mIoU"),
            }
        }
        if values.is_empty() {
            return Err(CelpError::EmptyAccumulator);
        }
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn miou(&self) -> Result<f64> {
        self.miou_with(false)
    }

    /// Mean of pooled foreground and background IoU.
    pub fn fb_iou(&self) -> Result<f64> {
        match (self.foreground.iou(), self.background.iou()) {
            (Some(f), Some(b)) => Ok((f + b) / 2.0),
            (Some(v), None) | (None, Some(v)) => Ok(v),
            (None, None) => Err(CelpError::EmptyAccumulator),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub fold: usize,
    pub k: usize,
    pub fusion: Fusion,
    pub episodes_per_class: usize,
    pub seed: u64,
    /// Sample one support and repeat it `k` times.
    pub duplicate_supports: bool,
    pub per_episode_miou: bool,
    pub lps: LpsConfig,
    pub eps: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            fold: 0,
            k: 1,
            fusion: Fusion::Average,
            episodes_per_class: 200,
            seed: 0,
            duplicate_supports: false,
            per_episode_miou: false,
            lps: LpsConfig::default(),
            eps: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: usize,
    pub iou: f64,
    pub episodes: u64,
    /// Episodes whose query yielded no latent region.
    pub ce_skipped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fold: usize,
    pub k: usize,
    pub fusion: Fusion,
    pub classes: Vec<ClassReport>,
    pub miou: f64,
    pub fb_iou: f64,
    pub episodes: u64,
    pub ce_skipped: u64,
    /// Draws replaced because a support lost its foreground at feature scale.
    pub resampled: u64,
    pub accumulator: ConfusionAccumulator,
}

/// Calls `visit` with the prepared episode and prediction of every
/// evaluation episode, in stream order.
pub fn for_each_episode<T: Real>(
    model: &Model<T>,
    options: &EvalOptions,
    mut visit: impl FnMut(&PreparedEpisode<T>, &LabelMask) -> Result<()>,
) -> Result<u64> {
    let split = FoldSplit::new(options.fold)?;
    options.fusion.check(options.k)?;
    let mut rng = SplitMix64::derive(options.seed, Stream::Eval);
    let eps = T::of(options.eps);
    let mut resampled = 0;
    for &class in split.classes(Phase::Test) {
        let mut done = 0;
        while done < options.episodes_per_class {
            let episode = if options.duplicate_supports {
                sample_episode_for_class(class, 1, &mut rng)?.with_duplicated_support(options.k)
            } else {
                sample_episode_for_class(class, options.k, &mut rng)?
            };
            let prepared = PreparedEpisode::new(&model.backbone, &episode)?;
            match model.predict(&prepared, options.fusion, eps)? {
                Some(pred) => {
                    visit(&prepared, &pred)?;
                    done += 1;
                }
                None => resampled += 1,
            }
        }
    }
    Ok(resampled)
}

/// Deterministic episodic evaluation on the fold's test classes.
pub fn evaluate<T: Real>(model: &Model<T>, options: &EvalOptions) -> Result<EvalReport> {
    let mut acc = ConfusionAccumulator::new();
    let mut skipped: BTreeMap<usize, u64> = BTreeMap::new();
    let mut lps_rng = SplitMix64::derive(options.seed, Stream::Lps);
    let resampled = for_each_episode(model, options, |prepared, pred| {
        acc.accumulate(pred, &prepared.query.mask, prepared.class_id)?;
        let fired = prepared.sample_latent(&options.lps, &mut lps_rng)?.is_some();
        *skipped.entry(prepared.class_id).or_default() += (!fired) as u64;
        Ok(())
    })?;
    let classes: Vec<ClassReport> = acc
        .classes()
        .iter()
        .map(|(&c, t)| ClassReport {
            class_id: c,
            iou: if options.per_episode_miou {
                t.episode_iou_sum / t.episode_iou_count.max(1) as f64
            } else {
                t.pooled.iou().unwrap_or(0.0)
            },
            episodes: t.episodes,
            ce_skipped: skipped.get(&c).copied().unwrap_or(0),
        })
        .collect();
    Ok(EvalReport {
        fold: options.fold,
        k: options.k,
        fusion: options.fusion,
        miou: acc.miou_with(options.per_episode_miou)?,
        fb_iou: acc.fb_iou()?,
        episodes: classes.iter().map(|c| c.episodes).sum(),
        ce_skipped: classes.iter().map(|c| c.ce_skipped).sum(),
        classes,
        resampled,
        accumulator: acc,
    })
}

pub const METRICS_HEADER: [&str; 10] = [
    "fold", "phase", "K", "fusion", "class_id", "iou", "miou", "fb_iou", "episodes", "ce_skipped",
];

/// Metrics CSV: one row per test class, then an `all` summary row.
pub fn write_metrics_csv<W: std::io::Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    let fmt = |v: f64| format!("{v:.6}");
    let common = |class: String, iou: String, episodes: u64, skipped: u64| {
        vec![
            report.fold.to_string(),
            Phase::Test.to_string(),
            report.k.to_string(),
            report.fusion.to_string(),
            class,
            iou,
            fmt(report.miou),
            fmt(report.fb_iou),
            episodes.to_string(),
            skipped.to_string(),
        ]
    };
    for c in &report.classes {
        w.write_record(common(c.class_id.to_string(), fmt(c.iou), c.episodes, c.ce_skipped))?;
    }
    w.write_record(common("all".into(), fmt(report.miou), report.episodes, report.ce_skipped))?;
    w.flush().map_err(|e| CelpError::io("metrics csv", e))?;
    Ok(())
}
