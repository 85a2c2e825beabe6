//! Robust PCA: a streaming low-rank + sparse decomposition and a batch principal
//! component pursuit solver used as its reference.
//!
//! The streaming variant keeps only a rank-`r` basis and its singular values. Each
//! frame alternates between projecting onto the basis and soft-thresholding the
//! residual, then the low-rank part is folded into the basis with an incremental
//! SVD update. The basis is seeded by running batch PCP on the first few frames.

use nalgebra::{DMatrix, DVector};

use super::pca::data_matrix;
use super::svd::thin_svd;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

#[derive(Clone, Debug)]
pub struct RpcaState {
    pub rank: usize,
    pub sparse_threshold: f64,
    /// Projection / threshold alternations per frame.
    pub inner_iterations: usize,
    pub frames_seen: usize,
    warmup_frames: usize,
    warmup: Vec<DVector<f64>>,
    shape: Option<Vec<usize>>,
    /// `d × r'` with `r' ≤ rank`, orthonormal columns.
    basis: DMatrix<f64>,
    singular: DVector<f64>,
}

impl RpcaState {
    pub fn new(rank: usize, sparse_threshold: f64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::invalid("RPCA rank must be at least 1"));
        }
        if !(sparse_threshold > 0.0 && sparse_threshold.is_finite()) {
            return Err(Error::invalid(format!(
                "sparse threshold must be positive, got {sparse_threshold}"
            )));
        }
        Ok(RpcaState {
            rank,
            sparse_threshold,
            inner_iterations: 20,
            frames_seen: 0,
            warmup_frames: (2 * rank).max(5),
            warmup: Vec::new(),
            shape: None,
            basis: DMatrix::zeros(0, 0),
            singular: DVector::zeros(0),
        })
    }

    /// Number of initial frames decomposed with batch PCP to seed the basis.
    pub fn with_warmup(mut self, frames: usize) -> Self {
        self.warmup_frames = frames.max(1);
        self
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn is_warm(&self) -> bool {
        self.basis.ncols() > 0
    }

    fn check_shape(&mut self, frame: &Tensor) -> Result<()> {
        match &self.shape {
            Some(s) if s.as_slice() != frame.shape() => Err(Error::shape(format!(
                "frame shape {:?} differs from stream shape {s:?}",
                frame.shape()
            ))),
            Some(_) => Ok(()),
            None => {
                self.shape = Some(frame.shape().to_vec());
                Ok(())
            }
        }
    }

    /// Decomposes `x` against the current basis without updating it. Returns the
    /// sparse part; the low-rank part is `x − sparse`.
    fn sparse_part(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(x.len());
        for _ in 0..self.inner_iterations {
            let l = &self.basis * self.basis.tr_mul(&(x - &s));
            let next = (x - l).map(|v| soft(v, self.sparse_threshold));
            let done = (&next - &s).amax() < 1e-12;
            s = next;
            if done {
                break;
            }
        }
        s
    }

    /// Brand's rank-one SVD update with the new column `c`, truncated to `rank`.
    fn absorb(&mut self, c: &DVector<f64>) {
        let r0 = self.basis.ncols();
        let p = self.basis.tr_mul(c);
        let resid = c - &self.basis * &p;
        let rho = resid.norm();
        let grow = rho > 1e-10 * c.norm().max(1e-300);
        let m = if grow { r0 + 1 } else { r0 };
        let mut k = DMatrix::zeros(m, r0 + 1);
        for i in 0..r0 {
            k[(i, i)] = self.singular[i];
            k[(i, r0)] = p[i];
        }
        if grow {
            k[(r0, r0)] = rho;
        }
        let svd = thin_svd(&k);
        let uk = svd.u;
        let keep = self.rank.min(svd.singular_values.len());
        let mut extended = DMatrix::zeros(c.len(), m);
        extended.columns_mut(0, r0).copy_from(&self.basis);
        if grow {
            extended.set_column(r0, &(resid / rho));
        }
        let rotated = extended * uk.columns(0, keep);
        self.basis = reorthonormalize(rotated);
        self.singular = svd.singular_values.rows(0, keep).into_owned();
    }

    fn finish_warmup(&mut self) -> Result<()> {
        let d = self.warmup[0].len();
        let m = DMatrix::from_fn(d, self.warmup.len(), |i, j| self.warmup[j][i]);
        let pcp = batch_pcp(&m, None)?;
        let svd = thin_svd(&pcp.low_rank);
        let u = svd.u;
        let keep = svd
            .singular_values
            .iter()
            .take(self.rank)
            .filter(|&&s| s > 1e-10 * svd.singular_values[0].max(1e-300))
            .count()
            .max(1);
        self.basis = u.columns(0, keep).into_owned();
        self.singular = svd.singular_values.rows(0, keep).into_owned();
        self.warmup.clear();
        Ok(())
    }

    /// Decomposes a frame with the current basis without changing the state.
    pub fn decompose(&self, frame: &Tensor) -> Result<(Tensor, Tensor)> {
        if let Some(s) = &self.shape {
            if s.as_slice() != frame.shape() {
                return Err(Error::shape("frame shape differs from stream shape"));
            }
        }
        if !self.is_warm() {
            return Err(Error::Data("RPCA basis is not initialised yet".into()));
        }
        let x = DVector::from_column_slice(frame.data());
        let s = self.sparse_part(&x);
        split(frame, &x, &s)
    }
}

fn split(frame: &Tensor, x: &DVector<f64>, s: &DVector<f64>) -> Result<(Tensor, Tensor)> {
    let low = x - s;
    Ok((
        Tensor::new(frame.shape().to_vec(), low.as_slice().to_vec())?,
        Tensor::new(frame.shape().to_vec(), s.as_slice().to_vec())?,
    ))
}

/// Modified Gram-Schmidt twice, keeping columns orthonormal to machine precision.
fn reorthonormalize(mut q: DMatrix<f64>) -> DMatrix<f64> {
    for _ in 0..2 {
        for j in 0..q.ncols() {
            for i in 0..j {
                let dot = q.column(i).dot(&q.column(j));
                let ci = q.column(i).into_owned();
                q.column_mut(j).axpy(-dot, &ci, 1.0);
            }
            let n = q.column(j).norm();
            if n > 0.0 {
                q.column_mut(j).scale_mut(1.0 / n);
            }
        }
    }
    q
}

/// Feeds one frame to the stream. Returns `(low_rank, sparse)` with
/// `low_rank + sparse == frame`. During warm-up the frames seen so far are
/// decomposed with batch PCP.
pub fn rpca_update(state: &mut RpcaState, frame: &Tensor) -> Result<(Tensor, Tensor)> {
    state.check_shape(frame)?;
    let x = DVector::from_column_slice(frame.data());
    state.frames_seen += 1;
    if !state.is_warm() {
        state.warmup.push(x.clone());
        let d = x.len();
        let m = DMatrix::from_fn(d, state.warmup.len(), |i, j| state.warmup[j][i]);
        let pcp = batch_pcp(&m, None)?;
        let s = pcp.sparse.column(pcp.sparse.ncols() - 1).into_owned();
        if state.warmup.len() >= state.warmup_frames {
            state.finish_warmup()?;
        }
        return split(frame, &x, &s);
    }
    let s = state.sparse_part(&x);
    let low = &x - &s;
    state.absorb(&low);
    split(frame, &x, &s)
}

#[derive(Clone, Debug)]
pub struct PcpResult {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    pub iterations: usize,
}

/// Principal component pursuit by the inexact augmented Lagrangian method:
/// `min ‖L‖_* + λ‖S‖_1` subject to `L + S = M`. `lambda` defaults to
/// `1/sqrt(max(m, n))`.
pub fn batch_pcp(m: &DMatrix<f64>, lambda: Option<f64>) -> Result<PcpResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Data("empty matrix".into()));
    }
    let lambda = lambda.unwrap_or(1.0 / (rows.max(cols) as f64).sqrt());
    let norm_m = m.norm();
    if norm_m == 0.0 {
        return Ok(PcpResult {
            low_rank: m.clone(),
            sparse: DMatrix::zeros(rows, cols),
            iterations: 0,
        });
    }
    let spectral = thin_svd(m).singular_values[0];
    let inf = m.amax();
    let mut y = m / spectral.max(inf / lambda);
    let mut mu = 1.25 / spectral;
    let mu_max = mu * 1e7;
    let rho = 1.5;
    let mut l = DMatrix::zeros(rows, cols);
    let mut s = DMatrix::zeros(rows, cols);
    for it in 1..=500 {
        let svd = thin_svd(&(m - &s + &y / mu));
        let (u, vt) = (svd.u, svd.v_t);
        let shrunk = svd.singular_values.map(|v| (v - 1.0 / mu).max(0.0));
        l = &u * DMatrix::from_diagonal(&shrunk) * &vt;
        s = (m - &l + &y / mu).map(|v| soft(v, lambda / mu));
        let z = m - &l - &s;
        y += &z * mu;
        mu = (mu * rho).min(mu_max);
        if z.norm() / norm_m < 1e-9 {
            return Ok(PcpResult {
                low_rank: l,
                sparse: s,
                iterations: it,
            });
        }
    }
    Ok(PcpResult {
        low_rank: l,
        sparse: s,
        iterations: 500,
    })
}

/// Batch PCP on a stack of equally shaped frames.
pub fn batch_pcp_frames(frames: &[Tensor], lambda: Option<f64>) -> Result<PcpResult> {
    batch_pcp(&data_matrix(frames)?, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn low_rank_stream(n: usize, r: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis: Vec<Tensor> = (0..r).map(|_| Tensor::uniform(vec![3, 6, 6], 0.0, 1.0, &mut rng)).collect();
        (0..n)
            .map(|_| {
                let mut f = Tensor::zeros(vec![3, 6, 6]);
                for b in &basis {
                    let w: f64 = rng.random_range(0.2..1.0);
                    for (v, bv) in f.data_mut().iter_mut().zip(b.data()) {
                        *v += w * bv;
                    }
                }
                f
            })
            .collect()
    }

    #[test]
    fn exact_subspace_gives_zero_sparse_after_warmup() {
        let frames = low_rank_stream(30, 2, 0);
        let mut st = RpcaState::new(2, 0.05).unwrap();
        for (t, f) in frames.iter().enumerate() {
            let (l, s) = rpca_update(&mut st, f).unwrap();
            let sum = l.zip_map(&s, |a, b| a + b).unwrap();
            assert!(sum.max_abs_diff(f).unwrap() < 1e-14);
            // The warm-up basis is only approximately right; updates settle it.
            if t >= 20 {
                assert!(s.data().iter().all(|&v| v == 0.0), "frame {t}");
            }
            let q = st.basis();
            if q.ncols() > 0 {
                let gram = q.tr_mul(q);
                assert!((gram - DMatrix::identity(q.ncols(), q.ncols())).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn outlier_lands_in_sparse_part() {
        let mut frames = low_rank_stream(20, 1, 1);
        let mut st = RpcaState::new(1, 0.05).unwrap();
        for f in &frames[..15] {
            rpca_update(&mut st, f).unwrap();
        }
        frames[15].data_mut()[17] += 5.0;
        let (_, s) = rpca_update(&mut st, &frames[15]).unwrap();
        assert!(s.data()[17] > 4.0);
        let others = s.data().iter().enumerate().filter(|(i, _)| *i != 17).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        assert!(others < 0.5);
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut st = RpcaState::new(1, 0.1).unwrap();
        rpca_update(&mut st, &Tensor::zeros(vec![3, 2, 2])).unwrap();
        assert!(rpca_update(&mut st, &Tensor::zeros(vec![3, 2, 3])).is_err());
        assert!(RpcaState::new(0, 0.1).is_err());
        assert!(RpcaState::new(1, 0.0).is_err());
    }

    #[test]
    fn pcp_separates_low_rank_and_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = DMatrix::from_fn(40, 2, |_, _| rng.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(2, 30, |_, _| rng.random_range(-1.0..1.0));
        let l0 = &u * &v;
        let mut s0 = DMatrix::zeros(40, 30);
        for _ in 0..40 {
            let (i, j) = (rng.random_range(0..40), rng.random_range(0..30));
            s0[(i, j)] = if rng.random_bool(0.5) { 4.0 } else { -4.0 };
        }
        let r = batch_pcp(&(&l0 + &s0), None).unwrap();
        assert!((&r.low_rank - &l0).norm() / l0.norm() < 1e-3);
        assert!((&r.low_rank + &r.sparse - (&l0 + &s0)).norm() < 1e-6);
    }
}
