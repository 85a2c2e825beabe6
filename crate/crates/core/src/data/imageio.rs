//! PNG/JPEG reading and PNG writing for frames, backgrounds and masks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::segmentation::Mask;
use crate::tensor::Tensor;

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an image as `[3,H,W]` with values in `[0,1]`.
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Reads an 8-bit grayscale image. Returns `(width, height, values)`.
pub fn load_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[3,H,W]` image in `[0,1]` as 8-bit RGB, clamping out-of-range values.
pub fn save_rgb(path: &Path, image: &Tensor) -> Result<()> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut buf = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            buf.push(to_byte(image.data()[ch * plane + i]));
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| image_error(path, e))
}

/// Writes raw 8-bit grayscale values.
pub fn save_gray(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::shape("grayscale buffer length does not match its size"));
    }
    image::save_buffer(path, values, width as u32, height as u32, image::ExtendedColorType::L8)
        .map_err(|e| image_error(path, e))
}

/// Writes a mask as 0 (background) / 255 (foreground).
pub fn save_mask(path: &Path, mask: &Mask) -> Result<()> {
    let values: Vec<u8> = mask.values().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    save_gray(path, mask.width(), mask.height(), &values)
}

/// Reads a mask PNG; any non-zero value counts as foreground.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let (w, h, values) = load_gray(path)?;
    Mask::new(h, w, values.into_iter().map(|v| (v != 0) as u8).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_round_trip_is_exact_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| ((i * 17) % 256) as f64 / 255.0).collect();
        let t = Tensor::new(vec![3, 4, 5], data).unwrap();
        save_rgb(&p, &t).unwrap();
        let back = load_rgb(&p).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() < 1e-12);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::new(2, 3, vec![0, 1, 1, 0, 0, 1]).unwrap();
        save_mask(&p, &m).unwrap();
        assert_eq!(load_gray(&p).unwrap().2, vec![0, 255, 255, 0, 0, 255]);
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn missing_file_is_image_error() {
        assert!(matches!(load_rgb(Path::new("/nonexistent/x.png")), Err(Error::Image { .. })));
    }
}
