//! PCA background model: mean frame plus the top-k principal directions of the
//! vectorised training frames.

use nalgebra::{DMatrix, DVector};

use super::svd::thin_svd;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaBackgroundModel {
    pub shape: Vec<usize>,
    pub mean: DVector<f64>,
    /// `d × k`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// All singular values of the centred data matrix, in decreasing order.
    pub singular_values: Vec<f64>,
}

impl PcaBackgroundModel {
    pub fn rank(&self) -> usize {
        self.components.ncols()
    }

    /// Fraction of total variance captured by each kept component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        self.singular_values
            .iter()
            .take(self.rank())
            .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
            .collect()
    }
}

/// Stacks equally-shaped tensors as the columns of a `d × n` matrix.
pub(crate) fn data_matrix(frames: &[Tensor]) -> Result<DMatrix<f64>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Data("no frames to model".into()))?;
    let d = first.len();
    for f in frames {
        if f.shape() != first.shape() {
            return Err(Error::shape(format!(
                "frame shape {:?} differs from {:?}",
                f.shape(),
                first.shape()
            )));
        }
    }
    Ok(DMatrix::from_fn(d, frames.len(), |i, j| frames[j].data()[i]))
}

pub fn pca_fit(frames: &[Tensor], k: usize) -> Result<PcaBackgroundModel> {
    let x = data_matrix(frames)?;
    let n = frames.len();
    if k > n {
        return Err(Error::invalid(format!("rank {k} exceeds the {n} training frames")));
    }
    let mean = x.column_mean();
    let mut centred = x;
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let svd = thin_svd(&centred);
    let u = svd.u;
    let components = u.columns(0, k.min(u.ncols())).into_owned();
    Ok(PcaBackgroundModel {
        shape: frames[0].shape().to_vec(),
        mean,
        components,
        singular_values: svd.singular_values.iter().copied().collect(),
    })
}

/// Mean plus the projection of `frame − mean` onto the kept components.
pub fn pca_background(model: &PcaBackgroundModel, frame: &Tensor) -> Result<Tensor> {
    if frame.shape() != model.shape.as_slice() {
        return Err(Error::shape(format!(
            "frame shape {:?} does not match model shape {:?}",
            frame.shape(),
            model.shape
        )));
    }
    let x = DVector::from_column_slice(frame.data());
    let centred = x - &model.mean;
    let coeffs = model.components.tr_mul(&centred);
    let bg = &model.mean + &model.components * coeffs;
    Tensor::new(model.shape.clone(), bg.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_frames(n: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Tensor::uniform(vec![3, 4, 5], 0.0, 1.0, &mut rng)).collect()
    }

    #[test]
    fn identical_frames_have_no_variance() {
        let f = random_frames(1, 0).remove(0);
        let frames = vec![f.clone(); 4];
        let m = pca_fit(&frames, 2).unwrap();
        assert!(m.mean.iter().zip(f.data()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(m.singular_values.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn rank_zero_returns_mean() {
        let frames = random_frames(5, 1);
        let m = pca_fit(&frames, 0).unwrap();
        let bg = pca_background(&m, &frames[2]).unwrap();
        assert!(bg.data().iter().zip(m.mean.iter()).all(|(a, b)| a == b));
        assert!(pca_fit(&frames, 6).is_err());
        assert!(pca_fit(&[], 0).is_err());
    }

    #[test]
    fn full_span_reconstructs_training_frames() {
        let frames = random_frames(6, 2);
        let m = pca_fit(&frames, 5).unwrap();
        for f in &frames {
            let bg = pca_background(&m, f).unwrap();
            assert!(bg.max_abs_diff(f).unwrap() < 1e-8);
        }
        let gram = m.components.tr_mul(&m.components);
        assert!((gram - DMatrix::identity(5, 5)).abs().max() < 1e-8);
    }

    #[test]
    fn error_is_non_increasing_in_rank() {
        let frames = random_frames(8, 3);
        let mut last = f64::INFINITY;
        for k in 0..=7 {
            let m = pca_fit(&frames, k).unwrap();
            let err: f64 = frames
                .iter()
                .map(|f| pca_background(&m, f).unwrap().mean_squared_error(f).unwrap())
                .sum();
            assert!(err <= last + 1e-12);
            last = err;
        }
    }

    #[test]
    fn mean_frame_maps_to_itself() {
        let frames = random_frames(4, 4);
        let m = pca_fit(&frames, 2).unwrap();
        let mean = Tensor::new(vec![3, 4, 5], m.mean.as_slice().to_vec()).unwrap();
        assert!(pca_background(&m, &mean).unwrap().max_abs_diff(&mean).unwrap() < 1e-12);
        assert!(pca_background(&m, &Tensor::zeros(vec![3, 5, 4])).is_err());
    }
}
