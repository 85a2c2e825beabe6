use serde::{Deserialize, Serialize};

use crate::conv::resize_bilinear;
use crate::error::{Error, Result};
use crate::segmentation::LabelMap;
use crate::tensor::Tensor;

/// One frame with its labels. `image` and `gt_background` are `[3,H,W]` in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    pub image: Tensor,
    pub labels: LabelMap,
    pub gt_background: Option<Tensor>,
    pub sequence_id: String,
    pub frame_index: usize,
}

impl FrameSample {
    pub fn new(image: Tensor, labels: LabelMap, sequence_id: impl Into<String>, frame_index: usize) -> Result<Self> {
        let (c, h, w) = image.dims3()?;
        if c != 3 {
            return Err(Error::shape(format!("frames must have 3 channels, got {c}")));
        }
        if (labels.height(), labels.width()) != (h, w) {
            return Err(Error::shape(format!(
                "labels are {}x{}, image is {h}x{w}",
                labels.height(),
                labels.width()
            )));
        }
        Ok(FrameSample {
            image,
            labels,
            gt_background: None,
            sequence_id: sequence_id.into(),
            frame_index,
        })
    }

    pub fn with_background(mut self, background: Tensor) -> Result<Self> {
        self.image.expect_same_shape(&background)?;
        self.gt_background = Some(background);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// `true` when the frame carries at least one non-ignored label.
    pub fn is_labeled(&self) -> bool {
        self.labels.scorable() > 0
    }
}

/// Bilinear resize of a `[3,H,W]` image to `size × size`.
pub fn resize_image(image: &Tensor, size: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    let x = image.clone().reshape(vec![1, c, h, w])?;
    resize_bilinear(&x, size, size)?.reshape(vec![c, size, size])
}

/// Per-sequence channel-mean shift applied to `[0,1]` images before they enter a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub channel_mean: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            channel_mean: [0.5; 3],
        }
    }
}

impl Normalization {
    pub fn from_samples(samples: &[FrameSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot compute channel means of zero frames".into()));
        }
        let mut sums = [0.0; 3];
        let mut count = 0usize;
        for s in samples {
            let (_, h, w) = s.image.dims3()?;
            for (c, sum) in sums.iter_mut().enumerate() {
                *sum += s.image.data()[c * h * w..(c + 1) * h * w].iter().sum::<f64>();
            }
            count += h * w;
        }
        Ok(Normalization {
            channel_mean: sums.map(|s| s / count as f64),
        })
    }

    fn shift(&self, image: &Tensor, sign: f64) -> Result<Tensor> {
        let shape = image.shape();
        let (c, plane) = match shape {
            [c, h, w] => (*c, h * w),
            [_, c, h, w] => (*c, h * w),
            _ => return Err(Error::shape(format!("cannot normalise shape {shape:?}"))),
        };
        if c != 3 {
            return Err(Error::shape("normalisation expects 3 channels"));
        }
        let mut out = image.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += sign * self.channel_mean[(i / plane) % 3];
        }
        Ok(out)
    }

    /// `[0,1]` image to network range.
    pub fn normalize(&self, image: &Tensor) -> Result<Tensor> {
        self.shift(image, -1.0)
    }

    /// Network range back to (unclamped) `[0,1]` image values.
    pub fn denormalize(&self, image: &Tensor) -> Result<Tensor> {
        self.shift(image, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_round_trip() {
        let img = Tensor::new(vec![3, 1, 2], vec![0.1, 0.3, 0.5, 0.7, 0.0, 1.0]).unwrap();
        let s = FrameSample::new(img.clone(), LabelMap::filled(1, 2, 0), "s", 1).unwrap();
        let n = Normalization::from_samples(&[s]).unwrap();
        assert!((n.channel_mean[0] - 0.2).abs() < 1e-15);
        let back = n.denormalize(&n.normalize(&img).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() < 1e-15);
    }

    #[test]
    fn label_size_must_match() {
        let img = Tensor::zeros(vec![3, 4, 4]);
        assert!(FrameSample::new(img, LabelMap::filled(4, 5, 0), "s", 1).is_err());
    }
}
