use crate::error::{CelpError, Result};

pub const BACKGROUND: u8 = 0;
pub const FOREGROUND: u8 = 1;
pub const IGNORE: u8 = 255;

/// An `h×w` label grid over {0 background, 1 foreground, 255 ignore}, stored
/// row-major with the same position indexing as [`crate::FeatureMap`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CelpError::dim(format!("empty mask grid {height}×{width}")));
        }
        if labels.len() != height * width {
            return Err(CelpError::dim(format!(
                "mask grid {height}×{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some((index, &value)) = labels
            .iter()
            .enumerate()
            .find(|(_, &v)| !matches!(v, BACKGROUND | FOREGROUND | IGNORE))
        {
            return Err(CelpError::InvalidLabel { index, value });
        }
        Ok(LabelMask {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        assert!(matches!(label, BACKGROUND | FOREGROUND | IGNORE));
        LabelMask {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    /// Binary mask from a predicate over positions.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        LabelMask {
            height,
            width,
            labels: (0..height * width)
                .map(|i| if f(i) { FOREGROUND } else { BACKGROUND })
                .collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, position: usize) -> u8 {
        self.labels[position]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&v| v == label).count()
    }

    pub fn positions_of(&self, label: u8) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &v)| v == label)
            .map(|(i, _)| i)
    }

    pub fn same_grid(&self, other: &LabelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_grid(&self, height: usize, width: usize, what: &str) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(CelpError::dim(format!(
                "{what}: mask grid {}×{} does not match {height}×{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Nearest-neighbour resampling: output cell `(y, x)` copies source cell
    /// `(floor((y + 0.5)·H/h), floor((x + 0.5)·W/w))`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> LabelMask {
        let src_index = |dst: usize, dst_len: usize, src_len: usize| -> usize {
            (((2 * dst + 1) * src_len) / (2 * dst_len)).min(src_len - 1)
        };
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = src_index(y, height, self.height);
            for x in 0..width {
                let sx = src_index(x, width, self.width);
                labels.push(self.labels[sy * self.width + sx]);
            }
        }
        LabelMask {
            height,
            width,
            labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_labels() {
        let err = LabelMask::new(1, 3, vec![0, 2, 1]).unwrap_err();
        assert!(matches!(err, CelpError::InvalidLabel { index: 1, value: 2 }));
        assert!(LabelMask::new(1, 3, vec![0, 255, 1]).is_ok());
    }

    #[test]
    fn resize_by_four_samples_cell_centres() {
        let mask = LabelMask::from_fn(8, 8, |i| i == 2 * 8 + 2 || i == 6 * 8 + 2);
        let small = mask.resize_nearest(2, 2);
        assert_eq!(small.labels(), &[1, 0, 1, 0]);
    }

    #[test]
    fn resize_to_odd_grid_stays_in_bounds() {
        let mask = LabelMask::filled(5, 5, FOREGROUND);
        let small = mask.resize_nearest(3, 3);
        assert_eq!(small.count(FOREGROUND), 9);
        let big = mask.resize_nearest(7, 7);
        assert_eq!(big.count(FOREGROUND), 49);
    }
}
