//! Seeded synthetic scenes: a background (static or periodically varying) with moving
//! sprites, Gaussian sensor noise, exact label maps and the clean background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sample::FrameSample;
use crate::error::{Error, Result};
use crate::segmentation::LabelMap;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundPattern {
    Flat { color: [f64; 3] },
    /// Diagonal blend between two colours with a faint sinusoidal ripple.
    Gradient { from: [f64; 3], to: [f64; 3] },
    /// Smooth random texture: a sum of seeded sinusoids per channel, mapped to
    /// `[low, high]`. Spatial frequencies are drawn up to `max_frequency` rad/pixel.
    Texture {
        low: f64,
        high: f64,
        waves: usize,
        #[serde(default = "default_max_frequency")]
        max_frequency: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub pattern: BackgroundPattern,
    /// Periodic brightness modulation `amplitude · sin(2π t / period + phase(x, y))`.
    #[serde(default)]
    pub periodic: Option<Periodic>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Periodic {
    pub period: f64,
    pub amplitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Square,
    Disc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpriteColor {
    Solid { rgb: [f64; 3] },
    /// The background under the sprite shifted by `offset` on every channel.
    Camouflage { offset: f64 },
    /// The background texture copied from `shift` pixels away (wrapping at the
    /// canvas edge), so the sprite carries background-like appearance.
    Mimic { shift: [usize; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpriteSpec {
    pub shape: SpriteShape,
    pub size: usize,
    /// Top-left corner at frame 0, in pixels.
    pub start: [f64; 2],
    /// Pixels per frame along (x, y); sprites bounce off the canvas edges.
    pub velocity: [f64; 2],
    pub color: SpriteColor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: BackgroundSpec,
    #[serde(default)]
    pub sprites: Vec<SpriteSpec>,
    #[serde(default)]
    pub noise_sigma: f64,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sequence_id")]
    pub sequence_id: String,
}

fn default_max_frequency() -> f64 {
    0.9
}

fn default_sequence_id() -> String {
    "synthetic".into()
}

impl SyntheticSceneSpec {
    /// 64×64 gradient background with one red 12-pixel square bouncing around.
    pub fn moving_square(seed: u64) -> Self {
        SyntheticSceneSpec {
            width: 64,
            height: 64,
            background: BackgroundSpec {
                pattern: BackgroundPattern::Gradient {
                    from: [0.15, 0.35, 0.55],
                    to: [0.55, 0.6, 0.3],
                },
                periodic: None,
            },
            sprites: vec![SpriteSpec {
                shape: SpriteShape::Square,
                size: 12,
                start: [5.0, 9.0],
                velocity: [2.3, 1.7],
                color: SpriteColor::Solid {
                    rgb: [0.9, 0.15, 0.1],
                },
            }],
            noise_sigma: 0.01,
            frames: 60,
            seed,
            sequence_id: "moving_square".into(),
        }
    }

    /// Textured background with a square that mimics the texture: its pixels are the
    /// background copied from elsewhere in the frame, so it is only visible by
    /// comparison with the background.
    pub fn camouflage(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        SyntheticSceneSpec {
            width: 64,
            height: 64,
            background: BackgroundSpec {
                pattern: BackgroundPattern::Texture {
                    low: 0.15,
                    high: 0.85,
                    waves: 4,
                    max_frequency: 0.35,
                },
                periodic: None,
            },
            sprites: (0..2)
                .map(|i| SpriteSpec {
                    shape: SpriteShape::Square,
                    size: 10,
                    start: [rng.random_range(0.0..54.0), rng.random_range(0.0..54.0)],
                    velocity: [rng.random_range(4.0..6.5), rng.random_range(3.0..5.5)],
                    color: SpriteColor::Mimic {
                        shift: [23 + 7 * i, 37 - 11 * i],
                    },
                })
                .collect(),
            noise_sigma: 0.01,
            frames: 60,
            seed,
            sequence_id: "camouflage".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("synthetic scene needs at least one frame"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synthetic canvas must be non-empty"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be finite and non-negative"));
        }
        for s in &self.sprites {
            if s.size == 0 || s.size > self.width || s.size > self.height {
                return Err(Error::invalid(format!(
                    "sprite size {} does not fit a {}x{} canvas",
                    s.size, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Reflects `x` into `[0, span]` (triangle wave).
fn bounce(x: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let m = x.rem_euclid(period);
    if m > span {
        period - m
    } else {
        m
    }
}

/// Integer top-left corner of `sprite` in frame `t`.
pub fn sprite_position(sprite: &SpriteSpec, width: usize, height: usize, t: usize) -> (usize, usize) {
    let sx = (width - sprite.size) as f64;
    let sy = (height - sprite.size) as f64;
    let x = bounce(sprite.start[0] + sprite.velocity[0] * t as f64, sx);
    let y = bounce(sprite.start[1] + sprite.velocity[1] * t as f64, sy);
    (x.round() as usize, y.round() as usize)
}

/// Whether pixel `(px, py)` lies inside a sprite whose top-left corner is `(x0, y0)`.
pub fn sprite_covers(shape: SpriteShape, size: usize, x0: usize, y0: usize, px: usize, py: usize) -> bool {
    if px < x0 || py < y0 || px >= x0 + size || py >= y0 + size {
        return false;
    }
    match shape {
        SpriteShape::Square => true,
        SpriteShape::Disc => {
            let r = size as f64 / 2.0;
            let dx = (px - x0) as f64 + 0.5 - r;
            let dy = (py - y0) as f64 + 0.5 - r;
            dx * dx + dy * dy <= r * r
        }
    }
}

fn base_background(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (w, h) = (spec.width, spec.height);
    let plane = w * h;
    let mut out = vec![0.0; 3 * plane];
    match &spec.background.pattern {
        BackgroundPattern::Flat { color } => {
            for c in 0..3 {
                out[c * plane..(c + 1) * plane].fill(color[c]);
            }
        }
        BackgroundPattern::Gradient { from, to } => {
            for y in 0..h {
                for x in 0..w {
                    let t = (x + y) as f64 / (w + h - 2).max(1) as f64;
                    let ripple = 0.03 * ((x as f64) * 0.35).sin() * ((y as f64) * 0.25).cos();
                    for c in 0..3 {
                        out[c * plane + y * w + x] = from[c] + (to[c] - from[c]) * t + ripple;
                    }
                }
            }
        }
        BackgroundPattern::Texture {
            low,
            high,
            waves,
            max_frequency,
        } => {
            let top = max_frequency.max(0.2);
            for c in 0..3 {
                let params: Vec<[f64; 4]> = (0..*waves)
                    .map(|_| {
                        [
                            rng.random_range(0.1..top),
                            rng.random_range(0.1..top),
                            rng.random_range(0.0..std::f64::consts::TAU),
                            rng.random_range(0.5..1.0),
                        ]
                    })
                    .collect();
                let norm: f64 = params.iter().map(|p| p[3]).sum();
                for y in 0..h {
                    for x in 0..w {
                        let v: f64 = params
                            .iter()
                            .map(|[fx, fy, ph, a]| a * (fx * x as f64 + fy * y as f64 + ph).sin())
                            .sum::<f64>()
                            / norm;
                        out[c * plane + y * w + x] = low + (high - low) * 0.5 * (v + 1.0);
                    }
                }
            }
        }
    }
    out
}

/// Renders the scene. Frame indices start at 1; every sample carries its clean background.
pub fn synth_sequence(spec: &SyntheticSceneSpec) -> Result<Vec<FrameSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let plane = w * h;
    let base = base_background(spec, &mut rng);
    let phases: Vec<f64> = (0..plane)
        .map(|i| ((i % w) as f64 * 0.2 + (i / w) as f64 * 0.13).sin() * std::f64::consts::PI)
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let mut out = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut bg = base.clone();
        if let Some(p) = spec.background.periodic {
            for (i, v) in bg.iter_mut().enumerate() {
                let phase = phases[i % plane];
                *v += p.amplitude * (std::f64::consts::TAU * t as f64 / p.period + phase).sin();
            }
        }
        for v in &mut bg {
            *v = v.clamp(0.0, 1.0);
        }
        let mut img = bg.clone();
        let mut labels = LabelMap::filled(h, w, 0);
        for sprite in &spec.sprites {
            let (x0, y0) = sprite_position(sprite, w, h, t);
            for py in y0..(y0 + sprite.size).min(h) {
                for px in x0..(x0 + sprite.size).min(w) {
                    if !sprite_covers(sprite.shape, sprite.size, x0, y0, px, py) {
                        continue;
                    }
                    labels.set(py, px, 1);
                    for c in 0..3 {
                        let idx = c * plane + py * w + px;
                        img[idx] = match sprite.color {
                            SpriteColor::Solid { rgb } => rgb[c],
                            SpriteColor::Camouflage { offset } => (bg[idx] + offset).clamp(0.0, 1.0),
                            SpriteColor::Mimic { shift } => {
                                let (sx, sy) = ((px + shift[0]) % w, (py + shift[1]) % h);
                                bg[c * plane + sy * w + sx]
                            }
                        };
                    }
                }
            }
        }
        if spec.noise_sigma > 0.0 {
            for v in &mut img {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        let sample = FrameSample::new(
            Tensor::new(vec![3, h, w], img)?,
            labels,
            spec.sequence_id.clone(),
            t + 1,
        )?
        .with_background(Tensor::new(vec![3, h, w], bg)?)?;
        out.push(sample);
    }
    Ok(out)
}
