//! Convolution geometry and the raw kernels behind the differentiable graph ops.
//!
//! Convolution and transposed convolution share one weight layout,
//! `[feature_channels, image_channels, kh, kw]`: for a forward convolution the image
//! side is the input, for a transposed convolution it is the output. With that layout
//! the transposed convolution is exactly the input-gradient of the convolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            dilation: 1,
            padding: 0,
            has_bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    /// The spec of the transposed convolution that is the adjoint of `self`.
    pub fn transposed(self) -> Self {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(format!(
                "stride and dilation must be >= 1 (stride {}, dilation {})",
                self.stride, self.dilation
            )));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(Error::invalid(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// Weight shape for a forward convolution: `[out, in, kh, kw]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    /// Weight shape for a transposed convolution: `[in, out, kh, kw]`.
    pub fn transposed_weight_shape(&self) -> [usize; 4] {
        [self.in_channels, self.out_channels, self.kernel_h, self.kernel_w]
    }

    pub fn output_extent(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let one = |inp: usize, k: usize| -> Result<usize> {
            let span = self.dilation * (k - 1) + 1;
            let padded = inp + 2 * self.padding;
            if padded < span {
                return Err(Error::shape(format!(
                    "non-positive output extent: input {inp}, padding {}, dilated kernel {span}",
                    self.padding
                )));
            }
            Ok((padded - span) / self.stride + 1)
        };
        Ok((one(in_h, self.kernel_h)?, one(in_w, self.kernel_w)?))
    }

    /// Default output extent of the transposed convolution with this spec.
    pub fn transposed_output_extent(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let one = |inp: usize, k: usize| -> Result<usize> {
            let full = (inp - 1) * self.stride + self.dilation * (k - 1) + 1;
            if full <= 2 * self.padding {
                return Err(Error::shape(format!(
                    "non-positive transposed output extent for input {inp}"
                )));
            }
            Ok(full - 2 * self.padding)
        };
        Ok((one(in_h, self.kernel_h)?, one(in_w, self.kernel_w)?))
    }
}

/// Image-side / feature-side extents of one convolution.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    img_c: usize,
    h: usize,
    w: usize,
    feat_c: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.img_c * self.kh * self.kw
    }

    fn col_len(&self) -> usize {
        self.col_rows() * self.oh * self.ow
    }
}

fn im2col(g: &Geometry, x: &[f64], cols: &mut [f64]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.img_c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geometry, cols: &[f64], dx: &mut [f64]) {
    let ohw = g.oh * g.ow;
    for c in 0..g.img_c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = a · b + beta · c` with optional transposes, `a: m×k`, `b: k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths match the declared extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn geometry(spec: &ConvSpec, img_c: usize, h: usize, w: usize, feat_c: usize, oh: usize, ow: usize) -> Geometry {
    Geometry {
        img_c,
        h,
        w,
        feat_c,
        oh,
        ow,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        dilation: spec.dilation,
        pad: spec.padding,
    }
}

/// `feat[n] = W · im2col(img[n])`.
fn correlate(g: &Geometry, batch: usize, img: &[f64], weight: &[f64]) -> Vec<f64> {
    let ohw = g.oh * g.ow;
    let mut out = vec![0.0; batch * g.feat_c * ohw];
    let mut cols = vec![0.0; g.col_len()];
    let img_len = g.img_c * g.h * g.w;
    for n in 0..batch {
        im2col(g, &img[n * img_len..(n + 1) * img_len], &mut cols);
        gemm(
            g.feat_c,
            g.col_rows(),
            ohw,
            weight,
            false,
            &cols,
            false,
            0.0,
            &mut out[n * g.feat_c * ohw..(n + 1) * g.feat_c * ohw],
        );
    }
    out
}

/// `img[n] = col2im(Wᵀ · feat[n])`.
fn scatter(g: &Geometry, batch: usize, feat: &[f64], weight: &[f64]) -> Vec<f64> {
    let ohw = g.oh * g.ow;
    let img_len = g.img_c * g.h * g.w;
    let mut out = vec![0.0; batch * img_len];
    let mut cols = vec![0.0; g.col_len()];
    for n in 0..batch {
        gemm(
            g.col_rows(),
            g.feat_c,
            ohw,
            weight,
            true,
            &feat[n * g.feat_c * ohw..(n + 1) * g.feat_c * ohw],
            false,
            0.0,
            &mut cols,
        );
        col2im(g, &cols, &mut out[n * img_len..(n + 1) * img_len]);
    }
    out
}

/// `dW = Σ_n dfeat[n] · im2col(img[n])ᵀ`.
fn weight_grad(g: &Geometry, batch: usize, img: &[f64], dfeat: &[f64]) -> Vec<f64> {
    let ohw = g.oh * g.ow;
    let img_len = g.img_c * g.h * g.w;
    let mut dw = vec![0.0; g.feat_c * g.col_rows()];
    let mut cols = vec![0.0; g.col_len()];
    for n in 0..batch {
        im2col(g, &img[n * img_len..(n + 1) * img_len], &mut cols);
        gemm(
            g.feat_c,
            ohw,
            g.col_rows(),
            &dfeat[n * g.feat_c * ohw..(n + 1) * g.feat_c * ohw],
            false,
            &cols,
            true,
            1.0,
            &mut dw,
        );
    }
    dw
}

fn add_channel_bias(out: &mut [f64], batch: usize, channels: usize, plane: usize, bias: &[f64]) {
    for n in 0..batch {
        for c in 0..channels {
            let b = bias[c];
            let start = (n * channels + c) * plane;
            for v in &mut out[start..start + plane] {
                *v += b;
            }
        }
    }
}

fn channel_sums(grad: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut sums = vec![0.0; channels];
    for n in 0..batch {
        for (c, s) in sums.iter_mut().enumerate() {
            let start = (n * channels + c) * plane;
            *s += grad[start..start + plane].iter().sum::<f64>();
        }
    }
    sums
}

fn check_weight(weight: &Tensor, expected: [usize; 4]) -> Result<()> {
    if weight.shape() != expected {
        return Err(Error::shape(format!(
            "weight shape {:?}, expected {expected:?}",
            weight.shape()
        )));
    }
    Ok(())
}

fn check_bias(spec: &ConvSpec, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.shape() == [channels] => Ok(()),
        (true, Some(b)) => Err(Error::shape(format!(
            "bias shape {:?}, expected [{channels}]",
            b.shape()
        ))),
        (true, None) => Err(Error::shape("spec declares a bias but none was given")),
        (false, Some(_)) => Err(Error::shape("bias given for a bias-free spec")),
        (false, None) => Ok(()),
    }
}

fn conv_geometry(input: &Tensor, spec: &ConvSpec) -> Result<(usize, Geometry)> {
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    let (oh, ow) = spec.output_extent(h, w)?;
    Ok((n, geometry(spec, c, h, w, spec.out_channels, oh, ow)))
}

/// Direct zero-padded cross-correlation, `[N,Cin,H,W] -> [N,Cout,H',W']`.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    let (n, g) = conv_geometry(input, spec)?;
    check_weight(weight, spec.weight_shape())?;
    check_bias(spec, bias, spec.out_channels)?;
    let mut out = correlate(&g, n, input.data(), weight.data());
    if let Some(b) = bias {
        add_channel_bias(&mut out, n, g.feat_c, g.oh * g.ow, b.data());
    }
    Tensor::new(vec![n, g.feat_c, g.oh, g.ow], out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> Result<ConvGrads> {
    let (n, g) = conv_geometry(input, spec)?;
    if grad_out.shape() != [n, g.feat_c, g.oh, g.ow] {
        return Err(Error::shape("conv2d upstream gradient shape"));
    }
    let dx = need_input
        .then(|| Tensor::new(input.shape().to_vec(), scatter(&g, n, grad_out.data(), weight.data())))
        .transpose()?;
    let dw = need_weight
        .then(|| Tensor::new(weight.shape().to_vec(), weight_grad(&g, n, input.data(), grad_out.data())))
        .transpose()?;
    let db = spec
        .has_bias
        .then(|| Tensor::new(vec![g.feat_c], channel_sums(grad_out.data(), n, g.feat_c, g.oh * g.ow)))
        .transpose()?;
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

fn transposed_geometry(input: &Tensor, spec: &ConvSpec, out_hw: Option<(usize, usize)>) -> Result<(usize, Geometry)> {
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    let (oh, ow) = match out_hw {
        Some(hw) => hw,
        None => spec.transposed_output_extent(h, w)?,
    };
    // The forward convolution of the output must land back on the input extent.
    let fwd = spec.transposed();
    if fwd.output_extent(oh, ow)? != (h, w) {
        return Err(Error::shape(format!(
            "output extent {oh}x{ow} is not consistent with input {h}x{w} for {spec:?}"
        )));
    }
    Ok((n, geometry(spec, spec.out_channels, oh, ow, c, h, w)))
}

/// Transposed convolution (adjoint of [`conv2d_forward`]), `[N,Cin,h,w] -> [N,Cout,H,W]`.
/// `out_hw` selects among the output extents consistent with the input when the
/// stride does not divide evenly; `None` takes the smallest.
pub fn conv_transpose2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
    out_hw: Option<(usize, usize)>,
) -> Result<Tensor> {
    let (n, g) = transposed_geometry(input, spec, out_hw)?;
    check_weight(weight, spec.transposed_weight_shape())?;
    check_bias(spec, bias, spec.out_channels)?;
    let mut out = scatter(&g, n, input.data(), weight.data());
    if let Some(b) = bias {
        add_channel_bias(&mut out, n, g.img_c, g.h * g.w, b.data());
    }
    Tensor::new(vec![n, g.img_c, g.h, g.w], out)
}

pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    out_hw: Option<(usize, usize)>,
    grad_out: &Tensor,
    need_input: bool,
    need_weight: bool,
) -> Result<ConvGrads> {
    let (n, g) = transposed_geometry(input, spec, out_hw)?;
    if grad_out.shape() != [n, g.img_c, g.h, g.w] {
        return Err(Error::shape("transposed conv upstream gradient shape"));
    }
    let dx = need_input
        .then(|| Tensor::new(input.shape().to_vec(), correlate(&g, n, grad_out.data(), weight.data())))
        .transpose()?;
    let dw = need_weight
        .then(|| Tensor::new(weight.shape().to_vec(), weight_grad(&g, n, grad_out.data(), input.data())))
        .transpose()?;
    let db = spec
        .has_bias
        .then(|| Tensor::new(vec![g.img_c], channel_sums(grad_out.data(), n, g.img_c, g.h * g.w)))
        .transpose()?;
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Bilinear upsampling kernel for an integer `factor`, laid out for a transposed
/// convolution with `channels` independent channels (diagonal in channel).
/// Pair it with stride `factor` and padding `factor / 2` (kernel `2·factor − factor % 2`).
pub fn bilinear_upsample_kernel(channels: usize, factor: usize) -> Tensor {
    let k = 2 * factor - factor % 2;
    let center = if k % 2 == 1 {
        (factor - 1) as f64
    } else {
        factor as f64 - 0.5
    };
    let f = factor as f64;
    let tap = |i: usize| 1.0 - (i as f64 - center).abs() / f;
    let mut w = Tensor::zeros(vec![channels, channels, k, k]);
    let data = w.data_mut();
    for c in 0..channels {
        for i in 0..k {
            for j in 0..k {
                data[((c * channels + c) * k + i) * k + j] = tap(i) * tap(j);
            }
        }
    }
    w
}

/// Interpolation matrix `[out, in]` for half-pixel (align-corners = false) bilinear
/// resampling along one axis.
pub fn bilinear_matrix(in_len: usize, out_len: usize) -> Tensor {
    let mut m = Tensor::zeros(vec![out_len, in_len]);
    let data = m.data_mut();
    if in_len == out_len {
        for i in 0..out_len {
            data[i * in_len + i] = 1.0;
        }
        return m;
    }
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        let frac = src - i0 as f64;
        data[o * in_len + i0] += 1.0 - frac;
        data[o * in_len + i1] += frac;
    }
    m
}

fn resize_dims(input: &Tensor, rows: &Tensor, cols: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, rh) = match rows.shape() {
        [a, b] => (*a, *b),
        _ => return Err(Error::shape("row interpolation matrix must be rank 2")),
    };
    let (ow, rw) = match cols.shape() {
        [a, b] => (*a, *b),
        _ => return Err(Error::shape("column interpolation matrix must be rank 2")),
    };
    if rh != h || rw != w {
        return Err(Error::shape(format!(
            "resize matrices expect {rh}x{rw} input, got {h}x{w}"
        )));
    }
    Ok((n * c, h, w, oh, ow, n))
}

/// Separable resize `out = R · X · Cᵀ` on every `[H,W]` plane.
pub fn resize_forward(input: &Tensor, rows: &Tensor, cols: &Tensor) -> Result<Tensor> {
    let (planes, h, w, oh, ow, n) = resize_dims(input, rows, cols)?;
    let c = planes / n;
    let mut out = vec![0.0; planes * oh * ow];
    let mut tmp = vec![0.0; oh * w];
    for p in 0..planes {
        let x = &input.data()[p * h * w..(p + 1) * h * w];
        gemm(oh, h, w, rows.data(), false, x, false, 0.0, &mut tmp);
        gemm(oh, w, ow, &tmp, false, cols.data(), true, 0.0, &mut out[p * oh * ow..(p + 1) * oh * ow]);
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Input gradient of [`resize_forward`]: `dX = Rᵀ · dOut · C`.
pub fn resize_backward(input_shape: &[usize], rows: &Tensor, cols: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (oh, h) = (rows.shape()[0], rows.shape()[1]);
    let (ow, w) = (cols.shape()[0], cols.shape()[1]);
    let planes = grad_out.len() / (oh * ow);
    let mut dx = vec![0.0; planes * h * w];
    let mut tmp = vec![0.0; h * ow];
    for p in 0..planes {
        let g = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        gemm(h, oh, ow, rows.data(), true, g, false, 0.0, &mut tmp);
        gemm(h, ow, w, &tmp, false, cols.data(), false, 0.0, &mut dx[p * h * w..(p + 1) * h * w]);
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Bilinear resize of a `[N,C,H,W]` tensor to `out_h × out_w` (align-corners = false).
/// Same-size resizes return the input unchanged.
pub fn resize_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = input.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    resize_forward(input, &bilinear_matrix(h, out_h), &bilinear_matrix(w, out_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_extent_formula() {
        let s = ConvSpec::new(3, 8, 4).stride(2).padding(1);
        assert_eq!(s.output_extent(128, 128).unwrap(), (64, 64));
        let s = ConvSpec::new(1, 1, 3).dilation(6).padding(6);
        assert_eq!(s.output_extent(16, 16).unwrap(), (16, 16));
        assert!(ConvSpec::new(1, 1, 5).output_extent(3, 3).is_err());
        assert!(ConvSpec::new(1, 1, 3).stride(0).output_extent(3, 3).is_err());
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(vec![1, 1, 5, 6], 0.0, 1.0, &mut rng);
        let w = Tensor::ones(vec![1, 1, 1, 1]);
        let y = conv2d_forward(&x, &w, None, &ConvSpec::new(1, 1, 1).bias(false)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::ones(vec![1, 1, 3, 3]);
        let w = Tensor::ones(vec![1, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, None, &ConvSpec::new(1, 1, 3).bias(false)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn strided_paper_extent() {
        let x = Tensor::zeros(vec![1, 3, 128, 128]);
        let spec = ConvSpec::new(3, 4, 4).stride(2).padding(1);
        let w = Tensor::zeros(spec.weight_shape().to_vec());
        let b = Tensor::zeros(vec![4]);
        let y = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
        assert_eq!(y.shape(), &[1, 4, 64, 64]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(vec![1, 2, 4, 4]);
        let spec = ConvSpec::new(3, 1, 3).bias(false);
        let w = Tensor::zeros(spec.weight_shape().to_vec());
        assert!(matches!(conv2d_forward(&x, &w, None, &spec), Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_kernel_preserves_constants_inside() {
        let spec = ConvSpec::new(2, 2, 4).stride(2).padding(1).bias(false);
        let w = bilinear_upsample_kernel(2, 2);
        let x = Tensor::full(vec![1, 2, 5, 5], 0.7);
        let y = conv_transpose2d_forward(&x, &w, None, &spec, None).unwrap();
        assert_eq!(y.shape(), &[1, 2, 10, 10]);
        // Interior taps sum to one; the outermost ring sees only part of the kernel.
        for c in 0..2 {
            for i in 1..9 {
                for j in 1..9 {
                    let v = y.data()[(c * 10 + i) * 10 + j];
                    assert!((v - 0.7).abs() < 1e-12, "{v}");
                }
            }
        }
    }

    #[test]
    fn bilinear_matrix_rows_sum_to_one() {
        for (a, b) in [(32, 64), (64, 32), (7, 13), (128, 961), (5, 5)] {
            let m = bilinear_matrix(a, b);
            for r in 0..b {
                let s: f64 = m.data()[r * a..(r + 1) * a].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let m = bilinear_matrix(4, 2);
        assert_eq!(m.data(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
    }
}
