//! Reading and writing rasters in common image formats.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{imageops, GrayImage, ImageBuffer, Luma};
use segdec_core::{Image, Mask};

/// Extensions recognized as images when scanning directories.
pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "bmp", "jpg", "jpeg", "tif", "tiff"];

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Decodes an image to `channels` (1 or 3) planes of values in `[0, 1]`.
pub fn read_image(path: &Path, channels: usize) -> Result<Image> {
    let img = image::open(path).with_context(|| format!("cannot read image {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match channels {
        1 => img.to_luma32f().into_raw(),
        3 => {
            let rgb = img.to_rgb32f().into_raw();
            let mut planes = vec![0.0f32; 3 * h * w];
            for (i, px) in rgb.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    planes[c * h * w + i] = px[c];
                }
            }
            planes
        }
        n => bail!("unsupported channel count {n}"),
    };
    Ok(Image::new(channels, h, w, data)?)
}

/// Reads a mask bitmap; pixels brighter than mid-gray are defective.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).with_context(|| format!("cannot read mask {}", path.display()))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask { height: h, width: w, data: img.into_raw().into_iter().map(|v| v > 127).collect() })
}

/// Writes the first channel as an 8-bit grayscale image.
pub fn write_gray(path: &Path, image: &Image) -> Result<()> {
    let plane = &image.data[..image.height * image.width];
    let bytes = plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = GrayImage::from_raw(image.width as u32, image.height as u32, bytes).expect("buffer size");
    buf.save(path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = mask.data.iter().map(|&v| if v { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width as u32, mask.height as u32, bytes).expect("buffer size");
    buf.save(path).with_context(|| format!("cannot write {}", path.display()))
}

/// Antialiased resize of every channel.
pub fn resize_image(image: &Image, height: usize, width: usize) -> Image {
    let plane = image.height * image.width;
    let mut data = Vec::with_capacity(image.channels * height * width);
    for c in 0..image.channels {
        let src: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
            image.width as u32,
            image.height as u32,
            image.data[c * plane..(c + 1) * plane].to_vec(),
        )
        .expect("buffer size");
        let out = imageops::resize(&src, width as u32, height as u32, imageops::FilterType::Triangle);
        data.extend(out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Image { channels: image.channels, height, width, data }
}

/// Resize that keeps every defect: a target pixel is set when any source
/// pixel it covers is.
pub fn resize_mask(mask: &Mask, height: usize, width: usize) -> Mask {
    let span = |i: usize, src: usize, dst: usize| {
        let lo = i * src / dst;
        let hi = ((i + 1) * src).div_ceil(dst).max(lo + 1).min(src);
        lo..hi
    };
    Mask::from_fn(height, width, |r, c| {
        span(r, mask.height, height).any(|sr| span(c, mask.width, width).any(|sc| mask.get(sr, sc)))
    })
}
