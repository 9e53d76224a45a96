use std::fmt;
use std::str::FromStr;

use crate::error::{CelpError, Result};
use crate::mask::LabelMask;
use crate::numeric::Tensor;
use crate::rng::SplitMix64;

use super::synth::{generate_scene, NUM_CLASSES};

pub const NUM_FOLDS: usize = 4;
const CLASSES_PER_FOLD: usize = NUM_CLASSES / NUM_FOLDS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Train,
    Test,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Test => "test",
        })
    }
}

impl FromStr for Phase {
    type Err = CelpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "test" => Ok(Phase::Test),
            other => Err(CelpError::config("phase", format!("unknown phase `{other}`"))),
        }
    }
}

/// Fold `f` tests on classes `{3f, 3f+1, 3f+2}` and trains on the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    pub fn new(fold: usize) -> Result<Self> {
        if fold >= NUM_FOLDS {
            return Err(CelpError::config("fold", format!("{fold} is outside 0..=3")));
        }
        let test: Vec<usize> = (fold * CLASSES_PER_FOLD..(fold + 1) * CLASSES_PER_FOLD).collect();
        let train = (0..NUM_CLASSES).filter(|c| !test.contains(c)).collect();
        Ok(FoldSplit { fold, train, test })
    }

    pub fn classes(&self, phase: Phase) -> &[usize] {
        match phase {
            Phase::Train => &self.train,
            Phase::Test => &self.test,
        }
    }
}

/// Image (`3×H×W`) with a binary mask of the episode class.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub image: Tensor<f64>,
    pub mask: LabelMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub class_id: usize,
    pub supports: Vec<Shot>,
    pub query: Shot,
}

impl Episode {
    pub fn shots(&self) -> usize {
        self.supports.len()
    }

    /// Same episode with every support replaced by copies of support 0.
    pub fn with_duplicated_support(&self, k: usize) -> Episode {
        Episode {
            class_id: self.class_id,
            supports: vec![self.supports[0].clone(); k],
            query: self.query.clone(),
        }
    }

    pub fn with_first_supports(&self, k: usize) -> Episode {
        Episode {
            class_id: self.class_id,
            supports: self.supports[..k.min(self.supports.len())].to_vec(),
            query: self.query.clone(),
        }
    }
}

fn sample_shot(class_id: usize, rng: &mut SplitMix64) -> Result<Shot> {
    let distractors = rng.below(3) as usize;
    let mut ids = Vec::with_capacity(distractors + 1);
    while ids.len() < distractors {
        let c = rng.below(NUM_CLASSES as u64) as usize;
        if c != class_id && !ids.contains(&c) {
            ids.push(c);
        }
    }
    ids.push(class_id);
    let mut scene = generate_scene(&ids, rng)?;
    let mask = scene.masks.pop().expect("target mask");
    Ok(Shot {
        image: scene.image,
        mask,
    })
}

/// `K` supports and one query, all containing `class_id` (drawn on top) plus
/// up to two distractors of other classes labelled background.
pub fn sample_episode_for_class(class_id: usize, k: usize, rng: &mut SplitMix64) -> Result<Episode> {
    if k == 0 {
        return Err(CelpError::config("k", "need at least one support"));
    }
    let supports = (0..k)
        .map(|_| sample_shot(class_id, rng))
        .collect::<Result<Vec<_>>>()?;
    let query = sample_shot(class_id, rng)?;
    Ok(Episode {
        class_id,
        supports,
        query,
    })
}

pub fn sample_episode(split: &FoldSplit, phase: Phase, k: usize, rng: &mut SplitMix64) -> Result<Episode> {
    let classes = split.classes(phase);
    let &class_id = rng
        .choose(classes)
        .ok_or_else(|| CelpError::config("fold", format!("{phase} class set is empty")))?;
    sample_episode_for_class(class_id, k, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_classes() {
        for fold in 0..NUM_FOLDS {
            let split = FoldSplit::new(fold).unwrap();
            assert!(split.train.iter().all(|c| !split.test.contains(c)));
            let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
            all.sort();
            assert_eq!(all, (0..NUM_CLASSES).collect::<Vec<_>>());
        }
        assert!(FoldSplit::new(4).is_err());
    }

    #[test]
    fn episode_shape_and_labels() {
        let split = FoldSplit::new(1).unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..10 {
            let ep = sample_episode(&split, Phase::Test, 5, &mut rng).unwrap();
            assert_eq!(ep.shots(), 5);
            assert!(split.test.contains(&ep.class_id));
            for shot in ep.supports.iter().chain(std::iter::once(&ep.query)) {
                assert!(shot.mask.count(1) > 0);
                assert!(shot.mask.labels().iter().all(|&v| v <= 1));
                assert_eq!(shot.image.shape(), &[3, 64, 64]);
            }
        }
    }

    #[test]
    fn class_choice_is_uniform() {
        let split = FoldSplit::new(0).unwrap();
        let mut rng = SplitMix64::new(77);
        let draws = 10_000;
        let mut counts = vec![0usize; NUM_CLASSES];
        for _ in 0..draws {
            let ep = sample_episode(&split, Phase::Train, 1, &mut rng).unwrap();
            counts[ep.class_id] += 1;
        }
        let p = 1.0 / split.train.len() as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for &c in &split.train {
            assert!((counts[c] as f64 - mean).abs() < 5.0 * sd, "{counts:?}");
        }
        for &c in &split.test {
            assert_eq!(counts[c], 0);
        }
    }
}
