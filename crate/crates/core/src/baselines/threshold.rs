//! Pixel-difference foreground classifier.

use crate::error::{Error, Result};
use crate::segmentation::Mask;
use crate::tensor::Tensor;

/// Per-pixel maximum over channels of `|frame − background|` for `[C,H,W]` inputs.
pub fn difference_map(frame: &Tensor, background: &Tensor) -> Result<Vec<f64>> {
    frame.expect_same_shape(background)?;
    let (c, h, w) = frame.dims3()?;
    let plane = h * w;
    let mut out = vec![0.0f64; plane];
    for ch in 0..c {
        let f = &frame.data()[ch * plane..(ch + 1) * plane];
        let b = &background.data()[ch * plane..(ch + 1) * plane];
        for ((o, x), y) in out.iter_mut().zip(f).zip(b) {
            *o = o.max((x - y).abs());
        }
    }
    Ok(out)
}

/// Foreground where the largest per-channel absolute difference exceeds `theta`.
pub fn threshold_classify(frame: &Tensor, background: &Tensor, theta: f64) -> Result<Mask> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::invalid(format!("threshold must be non-negative, got {theta}")));
    }
    let (_, h, w) = frame.dims3()?;
    let diff = difference_map(frame, background)?;
    Mask::new(h, w, diff.iter().map(|&d| (d > theta) as u8).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let bg = Tensor::full(vec![3, 2, 2], 0.5);
        assert_eq!(threshold_classify(&bg, &bg, 0.1).unwrap().count(), 0);
        let mut f = bg.clone();
        f.data_mut()[4 + 3] = 0.8;
        let m = threshold_classify(&f, &bg, 0.2).unwrap();
        assert_eq!(m.values(), &[0, 0, 0, 1]);
        f.data_mut()[0] = 0.5 + 1e-9;
        assert_eq!(threshold_classify(&f, &bg, 0.0).unwrap().values(), &[1, 0, 0, 1]);
        assert!(threshold_classify(&f, &bg, -0.1).is_err());
        assert!(threshold_classify(&f, &Tensor::zeros(vec![3, 2, 3]), 0.1).is_err());
    }

    #[test]
    fn higher_threshold_gives_subset() {
        let f = Tensor::new(vec![1, 1, 4], vec![0.0, 0.1, 0.3, 0.6]).unwrap();
        let b = Tensor::zeros(vec![1, 1, 4]);
        let lo = threshold_classify(&f, &b, 0.05).unwrap();
        let hi = threshold_classify(&f, &b, 0.25).unwrap();
        assert!(hi.is_subset_of(&lo));
        assert_eq!(hi.count(), 2);
    }
}
