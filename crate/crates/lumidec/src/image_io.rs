//! 8-bit RGB PNG reading and writing.

use std::path::Path;

use image::{ColorType, ImageFormat, RgbImage};
use lumidec_core::Tensor;

use crate::error::{Error, Result};

/// Byte to unit-range value.
pub fn from_byte(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Unit-range value to byte, clamping and rounding to nearest.
pub fn to_byte(x: f32) -> u8 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    (x * 255.0).round() as u8
}

/// `(1,3,H,W)` tensor from an RGB image.
pub fn tensor_from_rgb(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, 3, h as usize, w as usize], |_, c, y, x| from_byte(img.get_pixel(x as u32, y as u32)[c]))
}

/// RGB image from the first item of a 3-channel tensor.
pub fn rgb_from_tensor(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    if s.c != 3 {
        return Err(lumidec_core::Error::Dimension(format!("expected an RGB tensor, got {s}")).into());
    }
    Ok(RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| to_byte(t.at(0, c, y as usize, x as usize))))
    }))
}

/// Decodes an 8-bit RGB PNG held in memory; `path` only labels errors.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Decode { path: path.to_path_buf(), msg: e.to_string() })?;
    if img.color() != ColorType::Rgb8 {
        return Err(Error::Unsupported { path: path.to_path_buf(), msg: format!("{:?}, expected 8-bit RGB", img.color()) });
    }
    Ok(tensor_from_rgb(&img.into_rgb8()))
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

pub fn encode_png(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let img = rgb_from_tensor(t)?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Decode { path: "<memory>".into(), msg: e.to_string() })?;
    Ok(out.into_inner())
}

pub fn save_png(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = encode_png(t)?;
    crate::files::write_atomic(path, &bytes)
}

/// Grayscale rendering of a curve map: the per-pixel channel mean, so darker
/// pixels mark stronger brightening.
pub fn curve_map_image(g: &Tensor<f32>) -> Tensor<f32> {
    let mean = g.channel_mean();
    Tensor::from_fn([1, 3, mean.shape().h, mean.shape().w], |_, _, y, x| mean.at(0, 0, y, x))
}

/// Bilinear resize of an RGB tensor to `w` x `h`.
pub fn resize(t: &Tensor<f32>, w: usize, h: usize) -> Result<Tensor<f32>> {
    let s = t.shape();
    let src = image::Rgb32FImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| t.at(0, c, y as usize, x as usize)))
    });
    let out = image::imageops::resize(&src, w as u32, h as u32, image::imageops::FilterType::Triangle);
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| out.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)))
}
