//! Latent prototype sampling.
//!
//! Mines a pseudo-labelled region from the background of a query image:
//! positions whose high-level features are similar to many other background
//! positions become sampling centres; one centre is drawn at random and every
//! background position similar to it becomes pseudo-foreground. The rest of
//! the background is ignored, and annotated foreground is relabelled as
//! background, since it belongs to a different class than the mined region.

use crate::error::{CelpError, Result};
use crate::mask::{LabelMask, BACKGROUND, FOREGROUND, IGNORE};
use crate::numeric::{masked_gap, pairwise_cosine, FeatureMap, Prototype, Real, SimilarityMatrix};
use crate::rng::SplitMix64;

pub const DEFAULT_DELTA: f64 = 0.65;

#[derive(Debug, Clone, PartialEq)]
pub struct LpsConfig {
    /// Similarity threshold in `(0, 1]`.
    pub delta: f64,
    /// Minimum number of similar background positions for a centre.
    /// `None` selects `max(2, ceil(0.01·hw))`.
    pub sigma: Option<usize>,
    pub seed: u64,
}

impl Default for LpsConfig {
    fn default() -> Self {
        LpsConfig {
            delta: DEFAULT_DELTA,
            sigma: None,
            seed: 0,
        }
    }
}

impl LpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(CelpError::config("delta", format!("{} is outside (0, 1]", self.delta)));
        }
        if self.sigma == Some(0) {
            return Err(CelpError::config("sigma", "must be at least 1"));
        }
        Ok(())
    }

    pub fn sigma_for(&self, positions: usize) -> usize {
        self.sigma.unwrap_or_else(|| default_sigma(positions))
    }
}

pub fn default_sigma(positions: usize) -> usize {
    let one_percent = (positions as f64 * 0.01).ceil() as usize;
    one_percent.max(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T> {
    pub pseudo_mask: LabelMask,
    pub prototype: Prototype<T>,
    pub center_index: usize,
    pub candidate_count: usize,
}

fn check_table<T: Real>(sim: &SimilarityMatrix<T>, mask: &LabelMask) -> Result<()> {
    if sim.size() != mask.len() {
        return Err(CelpError::dim(format!(
            "similarity table covers {} positions, mask has {}",
            sim.size(),
            mask.len()
        )));
    }
    Ok(())
}

/// `N(i)`: number of background positions `j` (including `i` itself) with
/// `D(i, j) >= delta`.
pub fn count_similar<T: Real>(
    sim: &SimilarityMatrix<T>,
    mask: &LabelMask,
    delta: f64,
) -> Result<Vec<usize>> {
    check_table(sim, mask)?;
    let delta = T::of(delta);
    let labels = mask.labels();
    Ok((0..sim.size())
        .map(|i| {
            sim.row(i)
                .iter()
                .zip(labels)
                .filter(|(&d, &m)| d >= delta && m == BACKGROUND)
                .count()
        })
        .collect())
}

/// Background positions with at least `sigma` similar background positions.
pub fn candidate_set(counts: &[usize], mask: &LabelMask, sigma: usize) -> Result<Vec<usize>> {
    if counts.len() != mask.len() {
        return Err(CelpError::dim(format!(
            "{} counts for a mask of {} positions",
            counts.len(),
            mask.len()
        )));
    }
    Ok(counts
        .iter()
        .zip(mask.labels())
        .enumerate()
        .filter(|(_, (&n, &m))| n >= sigma && m == BACKGROUND)
        .map(|(i, _)| i)
        .collect())
}

pub fn sample_center(candidates: &[usize], rng: &mut SplitMix64) -> Result<usize> {
    rng.choose(candidates).copied().ok_or(CelpError::EmptyCandidates)
}

/// Pseudo-mask around `center`: similar background → 1, other background →
/// 255, annotated foreground → 0. Ignore labels in the input are kept.
pub fn build_pseudo_mask<T: Real>(
    sim: &SimilarityMatrix<T>,
    center: usize,
    mask: &LabelMask,
    delta: f64,
) -> Result<LabelMask> {
    check_table(sim, mask)?;
    if center >= mask.len() {
        return Err(CelpError::OutOfRange(format!(
            "center {center} outside {} positions",
            mask.len()
        )));
    }
    let value = mask.get(center);
    if value != BACKGROUND {
        return Err(CelpError::InvalidCenter { index: center, value });
    }
    let delta = T::of(delta);
    let labels = sim
        .row(center)
        .iter()
        .zip(mask.labels())
        .map(|(&d, &m)| match m {
            BACKGROUND if d >= delta => FOREGROUND,
            BACKGROUND => IGNORE,
            FOREGROUND => BACKGROUND,
            _ => IGNORE,
        })
        .collect();
    LabelMask::new(mask.height(), mask.width(), labels)
}

/// Full sampling pipeline on one query. Returns `None` when no centre
/// qualifies, in which case the caller skips the contrastive term.
pub fn sample_latent_prototype<T: Real>(
    mid: &FeatureMap<T>,
    high: &FeatureMap<T>,
    mask: &LabelMask,
    cfg: &LpsConfig,
    rng: &mut SplitMix64,
) -> Result<Option<LatentSample<T>>> {
    if !mid.same_grid(high.height(), high.width()) {
        return Err(CelpError::dim(format!(
            "mid-level grid {}×{} differs from high-level grid {}×{}",
            mid.height(),
            mid.width(),
            high.height(),
            high.width()
        )));
    }
    mask.check_grid(high.height(), high.width(), "latent sampling")?;
    let sim = pairwise_cosine(high);
    let counts = count_similar(&sim, mask, cfg.delta)?;
    let candidates = candidate_set(&counts, mask, cfg.sigma_for(mask.len()))?;
    if candidates.is_empty() {
        return Ok(None);
    }
    let center = sample_center(&candidates, rng)?;
    let pseudo_mask = build_pseudo_mask(&sim, center, mask, cfg.delta)?;
    let prototype = match masked_gap(mid, &pseudo_mask, FOREGROUND) {
        Ok(p) => p,
        Err(CelpError::EmptyRegion { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(LatentSample {
        pseudo_mask,
        prototype,
        center_index: center,
        candidate_count: candidates.len(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, h: usize, w: usize, data: Vec<f64>) -> FeatureMap<f64> {
        FeatureMap::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn count_similar_trivial_cases() {
        let same = map(2, 2, 2, vec![1.0; 8]);
        let sim = pairwise_cosine(&same);
        let bg = LabelMask::filled(2, 2, 0);
        assert_eq!(count_similar(&sim, &bg, 1.0).unwrap(), vec![4; 4]);
        let fg = LabelMask::filled(2, 2, 1);
        assert_eq!(count_similar(&sim, &fg, 0.65).unwrap(), vec![0; 4]);
        let wrong = LabelMask::filled(1, 2, 0);
        assert!(count_similar(&sim, &wrong, 0.5).is_err());
    }

    #[test]
    fn count_similar_crafted_2x2() {
        // vectors: p0=(1,0) p1=(1,1) p2=(0,1) p3=(-1,0)
        let fm = map(2, 2, 2, vec![1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 1.0, 0.0]);
        let sim = pairwise_cosine(&fm);
        let mask = LabelMask::new(2, 2, vec![0, 0, 0, 1]).unwrap();
        // double loop
        let mut want = vec![0usize; 4];
        for (i, slot) in want.iter_mut().enumerate() {
            for j in 0..4 {
                let (a, b) = (fm.vector(i), fm.vector(j));
                let dot = a[0] * b[0] + a[1] * b[1];
                let c = dot / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt());
                if c >= 0.65 && mask.get(j) == 0 {
                    *slot += 1;
                }
            }
        }
        assert_eq!(want, vec![2, 3, 2, 0]);
        assert_eq!(count_similar(&sim, &mask, 0.65).unwrap(), want);
    }

    #[test]
    fn candidate_set_examples() {
        let mask = LabelMask::new(1, 3, vec![0, 0, 1]).unwrap();
        assert_eq!(candidate_set(&[3, 1, 5], &mask, 2).unwrap(), vec![0]);
        let bg = LabelMask::filled(1, 3, 0);
        assert_eq!(candidate_set(&[3, 3, 3], &bg, 1).unwrap(), vec![0, 1, 2]);
        let fg = LabelMask::filled(1, 3, 1);
        assert!(candidate_set(&[3, 3, 3], &fg, 1).unwrap().is_empty());
    }

    #[test]
    fn sample_center_contract() {
        let mut rng = SplitMix64::new(1);
        assert_eq!(sample_center(&[7], &mut rng).unwrap(), 7);
        assert!(matches!(
            sample_center(&[], &mut rng),
            Err(CelpError::EmptyCandidates)
        ));
        let a = sample_center(&[2, 5, 9], &mut SplitMix64::new(42)).unwrap();
        for _ in 0..10 {
            assert_eq!(sample_center(&[2, 5, 9], &mut SplitMix64::new(42)).unwrap(), a);
        }
    }

    #[test]
    fn sample_center_is_uniform() {
        let pool = [3, 8, 13, 21];
        let draws = 10_000;
        let mut rng = SplitMix64::new(2024);
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let c = sample_center(&pool, &mut rng).unwrap();
            counts[pool.iter().position(|&p| p == c).unwrap()] += 1;
        }
        let p = 0.25;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn pseudo_mask_examples() {
        let same = map(2, 2, 2, vec![1.0; 8]);
        let sim = pairwise_cosine(&same);
        let bg = LabelMask::filled(2, 2, 0);
        let out = build_pseudo_mask(&sim, 0, &bg, 0.65).unwrap();
        assert_eq!(out.labels(), &[1, 1, 1, 1]);

        let forced = LabelMask::new(2, 2, vec![1, 1, 0, 1]).unwrap();
        let out = build_pseudo_mask(&sim, 2, &forced, 0.65).unwrap();
        assert_eq!(out.labels(), &[0, 0, 1, 0]);

        assert!(matches!(
            build_pseudo_mask(&sim, 0, &forced, 0.65),
            Err(CelpError::InvalidCenter { index: 0, value: 1 })
        ));
    }

    #[test]
    fn pseudo_mask_rules_on_random_instance() {
        let mut rng = SplitMix64::new(77);
        let fm = map(4, 3, 3, (0..36).map(|_| rng.normal()).collect());
        let sim = pairwise_cosine(&fm);
        let mask = LabelMask::new(3, 3, vec![0, 1, 0, 0, 0, 1, 0, 0, 0]).unwrap();
        let center = 4;
        let out = build_pseudo_mask(&sim, center, &mask, 0.3).unwrap();
        for j in 0..9 {
            let similar = sim.get(center, j) >= 0.3;
            let background = mask.get(j) == 0;
            let one = similar && background;
            let ignore = !one && background;
            let zero = mask.get(j) == 1;
            let want = if one {
                1
            } else if ignore {
                255
            } else {
                assert!(zero);
                0
            };
            assert_eq!(out.get(j), want, "position {j}");
        }
        assert_eq!(out.get(center), 1);
    }

    #[test]
    fn sample_latent_prototype_edge_cases() {
        let mut rng = SplitMix64::new(3);
        let fm = map(3, 2, 2, (0..12).map(|_| rng.normal()).collect());
        let fh = map(2, 2, 2, (0..8).map(|_| rng.normal()).collect());
        let fg = LabelMask::filled(2, 2, 1);
        let cfg = LpsConfig::default();
        assert!(sample_latent_prototype(&fm, &fh, &fg, &cfg, &mut rng)
            .unwrap()
            .is_none());

        let single = LabelMask::new(2, 2, vec![1, 1, 0, 1]).unwrap();
        let cfg = LpsConfig {
            sigma: Some(1),
            ..LpsConfig::default()
        };
        let sample = sample_latent_prototype(&fm, &fh, &single, &cfg, &mut rng)
            .unwrap()
            .unwrap();
        assert_eq!(sample.center_index, 2);
        assert_eq!(sample.prototype.values(), &fm.vector(2)[..]);
        assert_eq!(sample.candidate_count, 1);
    }

    #[test]
    fn default_sigma_values() {
        assert_eq!(default_sigma(16), 2);
        assert_eq!(default_sigma(256), 3);
        assert_eq!(default_sigma(1024), 11);
        assert!(LpsConfig { delta: 0.0, ..LpsConfig::default() }.validate().is_err());
        assert!(LpsConfig { sigma: Some(0), ..LpsConfig::default() }.validate().is_err());
    }
}
