//! Synthetic scene renderer.
//!
//! Twelve classes, one per (shape, texture) pair. Objects are rendered with
//! hard edges by testing each pixel centre against the shape's inequality,
//! so the returned masks are exact. Later objects occlude earlier ones.

use crate::error::{CelpError, Result};
use crate::mask::LabelMask;
use crate::numeric::Tensor;
use crate::rng::SplitMix64;

pub const IMAGE_SIZE: usize = 64;
pub const NUM_CLASSES: usize = 12;

const MIN_RADIUS: f64 = 8.0;
const MAX_RADIUS: f64 = 14.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Rectangle,
    Triangle,
    Ring,
    Cross,
    Bar,
}

const SHAPES: [Shape; 6] = [
    Shape::Disk,
    Shape::Rectangle,
    Shape::Triangle,
    Shape::Ring,
    Shape::Cross,
    Shape::Bar,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Stripes,
    Checker,
}

/// Two-tone fill: `color_a` where the pattern cell is even, `color_b` where
/// odd. Cells are `period` pixels wide in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub pattern: Pattern,
    pub period: usize,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticClass {
    pub id: usize,
    pub shape: Shape,
    pub texture: Texture,
}

const PALETTE: [([f64; 3], [f64; 3]); NUM_CLASSES] = [
    ([0.95, 0.10, 0.10], [0.55, 0.05, 0.05]),
    ([0.10, 0.85, 0.15], [0.05, 0.45, 0.10]),
    ([0.15, 0.20, 0.95], [0.05, 0.10, 0.50]),
    ([0.95, 0.90, 0.10], [0.60, 0.55, 0.05]),
    ([0.90, 0.15, 0.90], [0.50, 0.05, 0.50]),
    ([0.10, 0.90, 0.90], [0.05, 0.50, 0.50]),
    ([0.95, 0.55, 0.05], [0.10, 0.10, 0.10]),
    ([0.55, 0.95, 0.40], [0.95, 0.95, 0.95]),
    ([0.40, 0.25, 0.85], [0.95, 0.80, 0.30]),
    ([0.05, 0.05, 0.05], [0.95, 0.95, 0.95]),
    ([0.85, 0.35, 0.55], [0.20, 0.60, 0.30]),
    ([0.30, 0.55, 0.95], [0.95, 0.40, 0.20]),
];

impl SyntheticClass {
    pub fn new(id: usize) -> Result<Self> {
        if id >= NUM_CLASSES {
            return Err(CelpError::OutOfRange(format!(
                "class id {id} (valid: 0..{NUM_CLASSES})"
            )));
        }
        let (color_a, color_b) = PALETTE[id];
        let pattern = if id < 6 { Pattern::Stripes } else { Pattern::Checker };
        Ok(SyntheticClass {
            id,
            shape: SHAPES[id % 6],
            texture: Texture {
                pattern,
                period: 3 + id % 3,
                color_a,
                color_b,
            },
        })
    }

    pub fn all() -> Vec<SyntheticClass> {
        (0..NUM_CLASSES).map(|id| Self::new(id).expect("valid id")).collect()
    }
}

/// One rendered object. `radius` is the half-extent; `vertical` flips bars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub class_id: usize,
    pub shape: Shape,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub aspect: f64,
    pub vertical: bool,
}

impl Placement {
    /// Whether the point `(x, y)` (pixel centres are at `+0.5`) lies inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (mut dx, mut dy) = (x - self.cx, y - self.cy);
        let r = self.radius;
        match self.shape {
            Shape::Disk => dx * dx + dy * dy <= r * r,
            Shape::Rectangle => dx.abs() <= r && dy.abs() <= r * self.aspect,
            Shape::Triangle => {
                // apex at the top, base at cy + r
                dy >= -r && dy <= r && dx.abs() <= (dy + r) * 0.5
            }
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 > (0.55 * r) * (0.55 * r)
            }
            Shape::Cross => {
                let t = 0.3 * r;
                (dx.abs() <= t && dy.abs() <= r) || (dy.abs() <= t && dx.abs() <= r)
            }
            Shape::Bar => {
                if self.vertical {
                    std::mem::swap(&mut dx, &mut dy);
                }
                dx.abs() <= r && dy.abs() <= 0.3 * r
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `3×64×64`, values in `[0, 1]`.
    pub image: Tensor<f64>,
    /// One binary mask per requested class, in request order.
    pub masks: Vec<LabelMask>,
    pub placements: Vec<Placement>,
}

fn texture_color(texture: &Texture, x: usize, y: usize) -> [f64; 3] {
    let p = texture.period;
    let odd = match texture.pattern {
        Pattern::Stripes => (x / p) % 2 == 1,
        Pattern::Checker => (x / p + y / p) % 2 == 1,
    };
    if odd {
        texture.color_b
    } else {
        texture.color_a
    }
}

fn random_placement(class: &SyntheticClass, rng: &mut SplitMix64) -> Placement {
    let radius = rng.uniform(MIN_RADIUS, MAX_RADIUS);
    let margin = radius + 1.0;
    let span = IMAGE_SIZE as f64 - 2.0 * margin;
    Placement {
        class_id: class.id,
        shape: class.shape,
        cx: margin + span * rng.next_f64(),
        cy: margin + span * rng.next_f64(),
        radius,
        aspect: rng.uniform(0.6, 1.0),
        vertical: rng.next_u64() & 1 == 1,
    }
}

/// Renders `class_ids` (1 to 3 of them) over a noisy background. The last
/// class is drawn on top and is therefore fully visible.
pub fn generate_scene(class_ids: &[usize], rng: &mut SplitMix64) -> Result<Scene> {
    if class_ids.is_empty() || class_ids.len() > 3 {
        return Err(CelpError::OutOfRange(format!(
            "scenes hold 1 to 3 objects, got {}",
            class_ids.len()
        )));
    }
    let classes = class_ids
        .iter()
        .map(|&id| SyntheticClass::new(id))
        .collect::<Result<Vec<_>>>()?;

    let n = IMAGE_SIZE;
    let plane = n * n;
    let base: Vec<f64> = (0..3).map(|_| rng.uniform(0.3, 0.7)).collect();
    let mut image = vec![0.0; 3 * plane];
    for (c, b) in base.iter().enumerate() {
        for v in &mut image[c * plane..(c + 1) * plane] {
            *v = (b + rng.uniform(-0.15, 0.15)).clamp(0.0, 1.0);
        }
    }

    // owner[i] = index into class_ids of the topmost object at pixel i
    let mut owner: Vec<Option<usize>> = vec![None; plane];
    let placements: Vec<Placement> = classes.iter().map(|c| random_placement(c, rng)).collect();
    for (k, (class, place)) in classes.iter().zip(&placements).enumerate() {
        for y in 0..n {
            for x in 0..n {
                if place.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let color = texture_color(&class.texture, x, y);
                    for (c, v) in color.iter().enumerate() {
                        image[c * plane + y * n + x] = *v;
                    }
                    owner[y * n + x] = Some(k);
                }
            }
        }
    }
    let masks = (0..classes.len())
        .map(|k| LabelMask::from_fn(n, n, |i| owner[i] == Some(k)))
        .collect();
    Ok(Scene {
        image: Tensor::new(vec![3, n, n], image)?,
        masks,
        placements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_are_unique_pairs() {
        let all = SyntheticClass::all();
        for a in &all {
            for b in &all {
                if a.id != b.id {
                    assert!(a.shape != b.shape || a.texture != b.texture);
                }
            }
        }
        assert!(SyntheticClass::new(12).is_err());
    }

    #[test]
    fn disk_mask_matches_area() {
        let mut rng = SplitMix64::new(10);
        let scene = generate_scene(&[0], &mut rng).unwrap();
        let p = scene.placements[0];
        assert_eq!(p.shape, Shape::Disk);
        let mut area = 0;
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let (dx, dy) = (x as f64 + 0.5 - p.cx, y as f64 + 0.5 - p.cy);
                if dx * dx + dy * dy <= p.radius * p.radius {
                    area += 1;
                }
            }
        }
        assert!(area > 0);
        assert_eq!(scene.masks[0].count(1), area);
    }

    #[test]
    fn masks_are_disjoint_and_top_is_visible() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..20 {
            let scene = generate_scene(&[4, 9, 1], &mut rng).unwrap();
            for i in 0..IMAGE_SIZE * IMAGE_SIZE {
                let owners = scene.masks.iter().filter(|m| m.get(i) == 1).count();
                assert!(owners <= 1);
            }
            assert!(scene.masks[2].count(1) > 0);
        }
    }

    #[test]
    fn seeded_scene_is_reproducible() {
        let a = generate_scene(&[2, 7], &mut SplitMix64::new(99)).unwrap();
        let b = generate_scene(&[2, 7], &mut SplitMix64::new(99)).unwrap();
        assert_eq!(a, b);
        assert!(generate_scene(&[], &mut SplitMix64::new(1)).is_err());
        assert!(generate_scene(&[0, 1, 2, 3], &mut SplitMix64::new(1)).is_err());
    }
}
