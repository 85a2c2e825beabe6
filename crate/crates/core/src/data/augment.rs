//! Object pasting for training frames that contain no foreground.
//!
//! Sprites are procedural shapes with a colour, composited with an alpha mask.
//! Pasted pixels become foreground in the labels; `gt_background` is left alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sample::FrameSample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub height: usize,
    pub width: usize,
    /// `[3,h,w]` channel-major colours in `[0,1]`.
    pub rgb: Vec<f64>,
    /// Footprint: `true` where the sprite is opaque.
    pub mask: Vec<bool>,
}

impl Sprite {
    pub fn new(height: usize, width: usize, rgb: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("sprite must be non-empty"));
        }
        if rgb.len() != 3 * height * width || mask.len() != height * width {
            return Err(Error::shape("sprite colour or mask length does not match its size"));
        }
        Ok(Sprite {
            height,
            width,
            rgb,
            mask,
        })
    }

    fn from_fn(size: usize, color: [f64; 3], inside: impl Fn(f64, f64) -> bool) -> Sprite {
        let mut rgb = vec![0.0; 3 * size * size];
        let mut mask = vec![false; size * size];
        let r = size as f64 / 2.0;
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5 - r) / r;
                let v = (y as f64 + 0.5 - r) / r;
                let i = y * size + x;
                mask[i] = inside(u, v);
                // Mild vertical shading so sprites are not perfectly flat.
                let shade = 1.0 - 0.15 * (y as f64 / size as f64);
                for c in 0..3 {
                    rgb[c * size * size + i] = (color[c] * shade).clamp(0.0, 1.0);
                }
            }
        }
        Sprite {
            height: size,
            width: size,
            rgb,
            mask,
        }
    }

    pub fn square(size: usize, color: [f64; 3]) -> Sprite {
        Sprite::from_fn(size, color, |_, _| true)
    }

    pub fn disc(size: usize, color: [f64; 3]) -> Sprite {
        Sprite::from_fn(size, color, |u, v| u * u + v * v <= 1.0)
    }

    /// A rough pedestrian silhouette: head disc over a torso rectangle.
    pub fn figure(size: usize, color: [f64; 3]) -> Sprite {
        Sprite::from_fn(size, color, |u, v| {
            let head = u * u + (v + 0.6) * (v + 0.6) <= 0.16;
            let body = u.abs() <= 0.35 && v >= -0.2;
            head || body
        })
    }

    /// The default library: a few shapes in saturated colours.
    pub fn library(size: usize) -> Vec<Sprite> {
        vec![
            Sprite::square(size, [0.9, 0.2, 0.1]),
            Sprite::disc(size, [0.1, 0.8, 0.2]),
            Sprite::figure(size, [0.15, 0.2, 0.9]),
            Sprite::disc(size, [0.95, 0.9, 0.1]),
        ]
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Where a sprite was pasted (top-left corner).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub sprite: usize,
    pub x: usize,
    pub y: usize,
}

/// Pastes one or two sprites (count drawn from `{1, 2}` unless given) at seeded
/// positions. Returns the augmented sample and the placements used.
pub fn paste_objects(
    sample: &FrameSample,
    sprites: &[Sprite],
    count: Option<usize>,
    seed: u64,
) -> Result<(FrameSample, Vec<Placement>)> {
    if sprites.is_empty() {
        return Err(Error::invalid("sprite library is empty"));
    }
    let (h, w) = (sample.height(), sample.width());
    for s in sprites {
        if s.height > h || s.width > w {
            return Err(Error::invalid(format!(
                "sprite {}x{} is larger than the {h}x{w} frame",
                s.height, s.width
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = match count {
        Some(c @ 1..=2) => c,
        Some(c) => return Err(Error::invalid(format!("paste count must be 1 or 2, got {c}"))),
        None => rng.random_range(1..=2),
    };
    let mut out = sample.clone();
    let plane = h * w;
    let mut placements = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = rng.random_range(0..sprites.len());
        let s = &sprites[idx];
        let x = rng.random_range(0..=w - s.width);
        let y = rng.random_range(0..=h - s.height);
        let sp = s.height * s.width;
        for sy in 0..s.height {
            for sx in 0..s.width {
                let si = sy * s.width + sx;
                if !s.mask[si] {
                    continue;
                }
                let (py, px) = (y + sy, x + sx);
                for c in 0..3 {
                    out.image.data_mut()[c * plane + py * w + px] = s.rgb[c * sp + si];
                }
                out.labels.set(py, px, 1);
            }
        }
        placements.push(Placement { sprite: idx, x, y });
    }
    Ok((out, placements))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::LabelMap;
    use crate::tensor::Tensor;

    fn blank() -> FrameSample {
        FrameSample::new(Tensor::full(vec![3, 20, 24], 0.4), LabelMap::filled(20, 24, 0), "s", 1)
            .unwrap()
            .with_background(Tensor::full(vec![3, 20, 24], 0.4))
            .unwrap()
    }

    #[test]
    fn labels_follow_footprint() {
        let lib = vec![Sprite::disc(6, [1.0, 0.0, 0.0])];
        let (out, placements) = paste_objects(&blank(), &lib, Some(1), 7).unwrap();
        let p = placements[0];
        let mut expected = 0;
        for y in 0..20 {
            for x in 0..24 {
                let inside = y >= p.y
                    && y < p.y + 6
                    && x >= p.x
                    && x < p.x + 6
                    && lib[0].mask[(y - p.y) * 6 + (x - p.x)];
                assert_eq!(out.labels.get(y, x) == 1, inside);
                if !inside {
                    for c in 0..3 {
                        assert_eq!(out.image.data()[c * 480 + y * 24 + x], 0.4);
                    }
                }
                expected += inside as usize;
            }
        }
        assert_eq!(expected, lib[0].area());
        assert_eq!(out.gt_background, blank().gt_background);
    }

    #[test]
    fn count_is_one_or_two_and_seeded() {
        let lib = Sprite::library(5);
        let mut seen = [false; 3];
        for seed in 0..40 {
            let (a, pa) = paste_objects(&blank(), &lib, None, seed).unwrap();
            let (b, pb) = paste_objects(&blank(), &lib, None, seed).unwrap();
            assert_eq!(a, b);
            assert_eq!(pa, pb);
            seen[pa.len()] = true;
        }
        assert!(!seen[0] && seen[1] && seen[2]);
    }

    #[test]
    fn oversize_sprite_rejected() {
        let lib = vec![Sprite::square(21, [0.0; 3])];
        assert!(paste_objects(&blank(), &lib, Some(1), 0).is_err());
        assert!(paste_objects(&blank(), &Sprite::library(4), Some(3), 0).is_err());
    }
}
