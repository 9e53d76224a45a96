//! K-shot fusion: averaging prototypes/priors, or pixel-wise voting over K
//! single-support predictions.

use std::fmt;
use std::str::FromStr;

use crate::ce::PriorMask;
use crate::error::{CelpError, Result};
use crate::mask::{LabelMask, FOREGROUND};
use crate::numeric::{Prototype, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fusion {
    Average,
    /// Foreground where at least `k` of the K predictions agree.
    Vote(usize),
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fusion::Average => f.write_str("avg"),
            Fusion::Vote(k) => write!(f, "v{k}"),
        }
    }
}

impl FromStr for Fusion {
    type Err = CelpError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "avg" {
            return Ok(Fusion::Average);
        }
        let k = s
            .strip_prefix("v-")
            .or_else(|| s.strip_prefix('v'))
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1);
        k.map(Fusion::Vote)
            .ok_or_else(|| CelpError::config("fusion", format!("`{s}` is not avg or v1..vK")))
    }
}

impl Fusion {
    /// Column label used in ablation tables (`avg`, `v-1`, ...).
    pub fn table_label(&self) -> String {
        match self {
            Fusion::Average => "avg".into(),
            Fusion::Vote(k) => format!("v-{k}"),
        }
    }

    pub fn check(&self, shots: usize) -> Result<()> {
        match *self {
            Fusion::Vote(k) if k == 0 || k > shots => Err(CelpError::OutOfRange(format!(
                "vote threshold {k} with {shots} supports"
            ))),
            _ => Ok(()),
        }
    }
}

/// Running mean `m ← m + (x − m)/i`; K identical inputs return that input
/// exactly.
fn running_mean<T: Real>(rows: &[&[T]]) -> Vec<T> {
    let mut mean = rows[0].to_vec();
    for (i, row) in rows.iter().enumerate().skip(1) {
        let n = T::of((i + 1) as f64);
        for (m, &x) in mean.iter_mut().zip(row.iter()) {
            *m += (x - *m) / n;
        }
    }
    mean
}

pub fn kshot_average<T: Real>(
    protos: &[Prototype<T>],
    priors: &[PriorMask<T>],
) -> Result<(Prototype<T>, PriorMask<T>)> {
    if protos.is_empty() || protos.len() != priors.len() {
        return Err(CelpError::dim(format!(
            "{} prototypes and {} priors",
            protos.len(),
            priors.len()
        )));
    }
    if protos.iter().any(|p| p.len() != protos[0].len()) {
        return Err(CelpError::dim("prototypes differ in length"));
    }
    let (h, w) = (priors[0].height(), priors[0].width());
    if priors.iter().any(|p| p.height() != h || p.width() != w) {
        return Err(CelpError::dim("priors differ in grid size"));
    }
    let proto_rows: Vec<&[T]> = protos.iter().map(|p| p.values()).collect();
    let prior_rows: Vec<&[T]> = priors.iter().map(|p| p.values()).collect();
    Ok((
        Prototype(running_mean(&proto_rows)),
        PriorMask::from_tensor(Tensor::new(vec![h, w], running_mean(&prior_rows))?)?,
    ))
}

pub fn kshot_vote(preds: &[LabelMask], k: usize) -> Result<LabelMask> {
    if k == 0 || k > preds.len() {
        return Err(CelpError::OutOfRange(format!(
            "vote threshold {k} with {} predictions",
            preds.len()
        )));
    }
    let first = &preds[0];
    if preds.iter().any(|p| !p.same_grid(first)) {
        return Err(CelpError::dim("vote over masks of different grids"));
    }
    Ok(LabelMask::from_fn(first.height(), first.width(), |i| {
        preds.iter().filter(|p| p.get(i) == FOREGROUND).count() >= k
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn prior(values: Vec<f64>, h: usize, w: usize) -> PriorMask<f64> {
        PriorMask::from_tensor(Tensor::new(vec![h, w], values).unwrap()).unwrap()
    }

    #[test]
    fn average_of_duplicates_is_exact() {
        let mut rng = SplitMix64::new(12);
        let p = Prototype((0..7).map(|_| rng.normal()).collect::<Vec<f64>>());
        let m = prior((0..6).map(|_| rng.next_f64()).collect(), 2, 3);
        for k in 1..=6 {
            let (ap, am) = kshot_average(&vec![p.clone(); k], &vec![m.clone(); k]).unwrap();
            assert_eq!(ap, p);
            assert_eq!(am, m);
        }
    }

    #[test]
    fn average_matches_accumulation() {
        let mut rng = SplitMix64::new(13);
        let protos: Vec<Prototype<f64>> = (0..3)
            .map(|_| Prototype((0..5).map(|_| rng.normal()).collect()))
            .collect();
        let priors: Vec<PriorMask<f64>> = (0..3)
            .map(|_| prior((0..4).map(|_| rng.next_f64()).collect(), 2, 2))
            .collect();
        let (ap, am) = kshot_average(&protos, &priors).unwrap();
        for c in 0..5 {
            let sum: f64 = protos.iter().map(|p| p.0[c]).sum();
            assert!((ap.0[c] - sum / 3.0).abs() < 1e-12);
        }
        for i in 0..4 {
            let sum: f64 = priors.iter().map(|p| p.values()[i]).sum();
            assert!((am.values()[i] - sum / 3.0).abs() < 1e-12);
        }
        assert!(kshot_average(&protos[..2], &priors).is_err());
    }

    #[test]
    fn vote_examples() {
        let a = LabelMask::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let b = LabelMask::new(1, 4, vec![1, 0, 1, 0]).unwrap();
        assert_eq!(kshot_vote(&[a.clone(), b.clone()], 1).unwrap().labels(), &[1, 1, 1, 0]);
        assert_eq!(kshot_vote(&[a.clone(), b.clone()], 2).unwrap().labels(), &[1, 0, 0, 0]);
        assert!(kshot_vote(&[a.clone(), b.clone()], 3).is_err());
        assert!(kshot_vote(&[a], 0).is_err());
    }

    #[test]
    fn vote_five_three_crafted() {
        let rows = [
            [1, 1, 1, 0, 0, 1],
            [1, 1, 0, 0, 0, 0],
            [1, 0, 1, 0, 1, 0],
            [1, 1, 0, 0, 0, 1],
            [0, 0, 1, 0, 1, 1],
        ];
        let masks: Vec<LabelMask> = rows
            .iter()
            .map(|r| LabelMask::new(2, 3, r.to_vec()).unwrap())
            .collect();
        let mut want = vec![0u8; 6];
        for (i, w) in want.iter_mut().enumerate() {
            let votes: u8 = rows.iter().map(|r| r[i]).sum();
            *w = u8::from(votes >= 3);
        }
        assert_eq!(want, vec![1, 1, 1, 0, 0, 1]);
        assert_eq!(kshot_vote(&masks, 3).unwrap().labels(), &want[..]);
    }

    #[test]
    fn fusion_parsing() {
        assert_eq!("avg".parse::<Fusion>().unwrap(), Fusion::Average);
        assert_eq!("v3".parse::<Fusion>().unwrap(), Fusion::Vote(3));
        assert_eq!("v-2".parse::<Fusion>().unwrap(), Fusion::Vote(2));
        assert!("v0".parse::<Fusion>().is_err());
        assert!("median".parse::<Fusion>().is_err());
        assert_eq!(Fusion::Vote(4).to_string(), "v4");
        assert_eq!(Fusion::Vote(4).table_label(), "v-4");
    }
}
