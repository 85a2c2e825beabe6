//! Browser demo. A synthetic scene is rendered in Rust, three background
//! estimates are computed for it, and the page thresholds the difference image
//! live and draws the F-measure sweep.
//!
//! [`DemoScene`] holds all the logic and runs natively; [`Demo`] is the thin
//! wasm-bindgen wrapper the page talks to.

use bgseg::baselines::sweep::SweepItem;
use bgseg::baselines::{default_grid, pca_background, pca_fit, rpca_update, threshold_classify, threshold_sweep, RpcaState};
use bgseg::data::cdnet::split_samples;
use bgseg::data::eval::Counts;
use bgseg::data::{synth_sequence, FrameSample, SyntheticSceneSpec};
use bgseg::{Error, Result, Tensor};
use wasm_bindgen::prelude::*;

const PCA_RANK: usize = 3;
const RPCA_RANK: usize = 2;
const RPCA_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// The clean background the generator rendered.
    Truth,
    /// PCA fitted on the first half of the sequence.
    Pca,
    /// Streaming robust PCA, one frame at a time.
    Rpca,
}

impl Source {
    pub fn parse(name: &str) -> Result<Source> {
        match name {
            "truth" => Ok(Source::Truth),
            "pca" => Ok(Source::Pca),
            "rpca" => Ok(Source::Rpca),
            other => Err(Error::InvalidArgument(format!("unknown background source `{other}`"))),
        }
    }
}

pub struct DemoScene {
    frames: Vec<FrameSample>,
    truth: Vec<Tensor>,
    pca: Vec<Tensor>,
    rpca: Vec<Tensor>,
}

impl DemoScene {
    pub fn new(scene: &str, seed: u64) -> Result<DemoScene> {
        let mut spec = match scene {
            "moving_square" => SyntheticSceneSpec::moving_square(seed),
            "camouflage" => SyntheticSceneSpec::camouflage(seed),
            other => return Err(Error::InvalidArgument(format!("unknown scene `{other}`"))),
        };
        spec.frames = 40;
        let frames = synth_sequence(&spec)?;
        let truth = frames
            .iter()
            .map(|f| f.gt_background.clone().ok_or_else(|| Error::Data("frame without background".into())))
            .collect::<Result<Vec<_>>>()?;

        let (train, _) = split_samples(&frames)?;
        let images: Vec<Tensor> = train.iter().map(|f| f.image.clone()).collect();
        let model = pca_fit(&images, PCA_RANK)?;
        let pca = frames.iter().map(|f| pca_background(&model, &f.image)).collect::<Result<Vec<_>>>()?;

        let mut state = RpcaState::new(RPCA_RANK, RPCA_THRESHOLD)?;
        let rpca = frames
            .iter()
            .map(|f| rpca_update(&mut state, &f.image).map(|(low, _)| low))
            .collect::<Result<Vec<_>>>()?;
        Ok(DemoScene { frames, truth, pca, rpca })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    fn frame(&self, t: usize) -> Result<&FrameSample> {
        self.frames
            .get(t)
            .ok_or_else(|| Error::InvalidArgument(format!("frame {t} out of range 0..{}", self.len())))
    }

    pub fn background(&self, t: usize, source: Source) -> Result<&Tensor> {
        self.frame(t)?;
        Ok(match source {
            Source::Truth => &self.truth[t],
            Source::Pca => &self.pca[t],
            Source::Rpca => &self.rpca[t],
        })
    }

    pub fn frame_rgba(&self, t: usize) -> Result<Vec<u8>> {
        Ok(to_rgba(&self.frame(t)?.image))
    }

    pub fn background_rgba(&self, t: usize, source: Source) -> Result<Vec<u8>> {
        Ok(to_rgba(self.background(t, source)?))
    }

    /// The frame dimmed, with true positives green, false positives red and
    /// missed foreground blue.
    pub fn overlay_rgba(&self, t: usize, source: Source, theta: f64) -> Result<Vec<u8>> {
        let f = self.frame(t)?;
        let mask = threshold_classify(&f.image, self.background(t, source)?, theta)?;
        let mut rgba = to_rgba(&f.image);
        for (i, (&m, &l)) in mask.values().iter().zip(f.labels.values()).enumerate() {
            let px = &mut rgba[4 * i..4 * i + 3];
            let tint = match (m != 0, l) {
                (true, 1) => Some([40, 220, 60]),
                (true, 0) => Some([230, 40, 40]),
                (false, 1) => Some([40, 90, 240]),
                _ => None,
            };
            match tint {
                Some(c) => px.copy_from_slice(&c),
                None => px.iter_mut().for_each(|v| *v /= 2),
            }
        }
        Ok(rgba)
    }

    pub fn frame_f_measure(&self, t: usize, source: Source, theta: f64) -> Result<f64> {
        let f = self.frame(t)?;
        let mask = threshold_classify(&f.image, self.background(t, source)?, theta)?;
        Ok(Counts::from_frame(&mask, &f.labels)?.f_measure())
    }

    /// F-measure over the held-out half at every point of the default grid.
    pub fn sweep(&self, source: Source) -> Result<Vec<f64>> {
        let start = self.len() / 2;
        let items: Vec<SweepItem<'_>> = (start..self.len())
            .map(|t| {
                Ok(SweepItem {
                    frame: &self.frames[t].image,
                    background: self.background(t, source)?,
                    labels: &self.frames[t].labels,
                })
            })
            .collect::<Result<_>>()?;
        let result = threshold_sweep("demo", &items, &default_grid())?;
        Ok(result.points.iter().map(|p| p.f_measure).collect())
    }
}

/// `[3,H,W]` in `[0,1]` to interleaved RGBA bytes.
pub fn to_rgba(image: &Tensor) -> Vec<u8> {
    let plane = image.len() / 3;
    let d = image.data();
    let mut out = Vec::with_capacity(4 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    scene: DemoScene,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(scene: &str, seed: u32) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            scene: DemoScene::new(scene, seed as u64).map_err(js)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.scene.len()
    }

    pub fn width(&self) -> usize {
        self.scene.width()
    }

    pub fn height(&self) -> usize {
        self.scene.height()
    }

    pub fn frame_rgba(&self, t: usize) -> std::result::Result<Vec<u8>, JsError> {
        self.scene.frame_rgba(t).map_err(js)
    }

    pub fn background_rgba(&self, t: usize, source: &str) -> std::result::Result<Vec<u8>, JsError> {
        let s = Source::parse(source).map_err(js)?;
        self.scene.background_rgba(t, s).map_err(js)
    }

    pub fn overlay_rgba(&self, t: usize, source: &str, theta: f64) -> std::result::Result<Vec<u8>, JsError> {
        let s = Source::parse(source).map_err(js)?;
        self.scene.overlay_rgba(t, s, theta).map_err(js)
    }

    pub fn frame_f_measure(&self, t: usize, source: &str, theta: f64) -> std::result::Result<f64, JsError> {
        let s = Source::parse(source).map_err(js)?;
        self.scene.frame_f_measure(t, s, theta).map_err(js)
    }

    /// 51 F values for θ = 0, 0.01, …, 0.5.
    pub fn sweep(&self, source: &str) -> std::result::Result<Vec<f64>, JsError> {
        let s = Source::parse(source).map_err(js)?;
        self.scene.sweep(s).map_err(js)
    }
}
