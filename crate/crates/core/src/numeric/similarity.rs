use crate::error::{CelpError, Result};
use crate::mask::LabelMask;

use super::tensor::{FeatureMap, Prototype, Real, Tensor};

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

/// Default stabiliser for [`minmax_normalize`].
pub const DEFAULT_EPS: f64 = 1e-7;

/// Cosine similarity; 0 when either vector has (near) zero norm.
pub fn cosine<T: Real>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(CelpError::dim(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(CelpError::dim("cosine of empty vectors"));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked<T: Real>(u: &[T], v: &[T]) -> T {
    let mut dot = T::zero();
    let mut uu = T::zero();
    let mut vv = T::zero();
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    cosine_from_parts(dot, uu, vv)
}

/// Takes squared norms so that identical vectors give exactly 1. Rounding
/// can still push parallel vectors one ulp past ±1, hence the clamp.
fn cosine_from_parts<T: Real>(dot: T, sq_u: T, sq_v: T) -> T {
    let tiny = T::of(ZERO_NORM);
    if sq_u.sqrt() < tiny || sq_v.sqrt() < tiny {
        T::zero()
    } else {
        let one = T::one();
        (dot / (sq_u * sq_v).sqrt()).max(-one).min(one)
    }
}

/// Symmetric `n×n` table of cosine similarities between the `n = h·w`
/// feature vectors of one map.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Real> SimilarityMatrix<T> {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.n, self.n], self.values.clone()).expect("square table")
    }

    /// Wrap an explicit table. The upper triangle is authoritative; the
    /// lower one is overwritten by mirroring.
    pub fn from_upper(n: usize, mut values: Vec<T>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(CelpError::dim(format!(
                "similarity table of size {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
        Ok(SimilarityMatrix { n, values })
    }
}

/// All-pairs cosine similarity over positions of `features`. Only the upper
/// triangle is computed; the lower triangle is its mirror.
pub fn pairwise_cosine<T: Real>(features: &FeatureMap<T>) -> SimilarityMatrix<T> {
    let n = features.positions();
    let rows = features.to_rows();
    let sq_norms: Vec<T> = rows
        .iter()
        .map(|r| r.iter().map(|&x| x * x).sum::<T>())
        .collect();
    let mut values = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let dot: T = rows[i].iter().zip(&rows[j]).map(|(&a, &b)| a * b).sum();
            let c = cosine_from_parts(dot, sq_norms[i], sq_norms[j]);
            values[i * n + j] = c;
            values[j * n + i] = c;
        }
    }
    SimilarityMatrix { n, values }
}

/// Channel-wise mean of `features` over the positions where `mask == label`.
pub fn masked_gap<T: Real>(
    features: &FeatureMap<T>,
    mask: &LabelMask,
    label: u8,
) -> Result<Prototype<T>> {
    mask.check_grid(features.height(), features.width(), "masked_gap")?;
    let selected: Vec<usize> = mask.positions_of(label).collect();
    if selected.is_empty() {
        return Err(CelpError::EmptyRegion { label });
    }
    let hw = features.positions();
    let count = T::of(selected.len() as f64);
    let data = features.data();
    let proto = (0..features.channels())
        .map(|c| {
            let plane = &data[c * hw..(c + 1) * hw];
            let mut sum = T::zero();
            for &i in &selected {
                sum += plane[i];
            }
            sum / count
        })
        .collect();
    Ok(Prototype(proto))
}

/// `(H - min H) / (max H - min H + eps)`, mapping values into `[0, 1)`.
pub fn minmax_normalize<T: Real>(values: &Tensor<T>, eps: T) -> Tensor<T> {
    let (lo, hi) = values
        .data()
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let denom = hi - lo + eps;
    values.map(|x| (x - lo) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::FOREGROUND;
    use crate::rng::SplitMix64;

    fn random_map(rng: &mut SplitMix64, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
        FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.normal()).collect()).unwrap()
    }

    // Independent evaluation: explicit sums, no shared helpers.
    fn cosine_oracle(u: &[f64], v: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut nu = 0.0;
        let mut nv = 0.0;
        for k in 0..u.len() {
            dot += u[k] * v[k];
            nu += u[k] * u[k];
            nv += v[k] * v[k];
        }
        if nu.sqrt() < 1e-12 || nv.sqrt() < 1e-12 {
            0.0
        } else {
            dot / (nu.sqrt() * nv.sqrt())
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0f64).abs() < 1e-15);
        assert!((cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8f64).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0f64], &[1.0, 2.0]),
            Err(CelpError::Dimension(_))
        ));
    }

    #[test]
    fn pairwise_cosine_small_cases() {
        let fm = FeatureMap::from_vec(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let d = pairwise_cosine(&fm);
        assert_eq!(d.to_tensor().data(), &[1.0, 0.0, 0.0, 1.0]);

        let shared = FeatureMap::from_vec(3, 2, 2, vec![0.5; 12]).unwrap();
        let d = pairwise_cosine(&shared);
        assert!(d.to_tensor().data().iter().all(|&x| (x - 1.0f64).abs() < 1e-15));
    }

    #[test]
    fn pairwise_cosine_matches_brute_force() {
        let mut rng = SplitMix64::new(11);
        let fm = random_map(&mut rng, 3, 1, 3);
        let d = pairwise_cosine(&fm);
        for i in 0..3 {
            for j in 0..3 {
                let want = cosine_oracle(&fm.vector(i), &fm.vector(j));
                assert!((d.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_gap_examples() {
        let mut rng = SplitMix64::new(5);
        let fm = random_map(&mut rng, 4, 3, 3);
        let all = LabelMask::filled(3, 3, FOREGROUND);
        let proto = masked_gap(&fm, &all, 1).unwrap();
        for c in 0..4 {
            let mean = (0..9).map(|i| fm.at(c, i)).sum::<f64>() / 9.0;
            assert!((proto.values()[c] - mean).abs() < 1e-15);
        }

        let one = LabelMask::from_fn(3, 3, |i| i == 7);
        assert_eq!(masked_gap(&fm, &one, 1).unwrap().values(), &fm.vector(7)[..]);

        let none = LabelMask::filled(3, 3, 0);
        assert!(matches!(
            masked_gap(&fm, &none, 1),
            Err(CelpError::EmptyRegion { label: 1 })
        ));
        let wrong = LabelMask::filled(2, 3, 1);
        assert!(masked_gap(&fm, &wrong, 1).is_err());
    }

    #[test]
    fn masked_gap_matches_accumulation_loop() {
        let mut rng = SplitMix64::new(99);
        let fm = random_map(&mut rng, 5, 4, 4);
        let mask = LabelMask::from_fn(4, 4, |_| rng.next_f64() < 0.5);
        let proto = masked_gap(&fm, &mask, 1).unwrap();
        let mut sum = vec![0.0; 5];
        let mut count = 0.0;
        for i in 0..16 {
            if mask.get(i) == 1 {
                count += 1.0;
                for (c, s) in sum.iter_mut().enumerate() {
                    *s += fm.data()[c * 16 + i];
                }
            }
        }
        for c in 0..5 {
            assert!((proto.values()[c] - sum[c] / count).abs() < 1e-12);
        }
    }

    #[test]
    fn minmax_examples() {
        let constant = Tensor::<f64>::new(vec![3], vec![2.5; 3]).unwrap();
        assert_eq!(minmax_normalize(&constant, 1e-7).data(), &[0.0; 3]);

        let ramp = Tensor::<f64>::new(vec![3], vec![0.0, 1.0, 2.0]).unwrap();
        let out = minmax_normalize(&ramp, 1e-7);
        let want = [0.0, 1.0 / (2.0 + 1e-7), 2.0 / (2.0 + 1e-7)];
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((out.data()[1] - 0.49999997).abs() < 1e-8);
        assert!((out.data()[2] - 0.99999995).abs() < 1e-8);

        let single = Tensor::<f64>::new(vec![1], vec![-3.0]).unwrap();
        assert_eq!(minmax_normalize(&single, 1e-7).data(), &[0.0]);
    }
}
