//! Plain image and binary-mask containers.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar (CHW) image with intensities normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Input(alloc::format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f32 {
        self.data[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: f32) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    /// Zero-pads on the bottom and right to `height x width`.
    pub fn pad_to(&self, height: usize, width: usize) -> Result<Image> {
        if height < self.height || width < self.width {
            return Err(Error::Argument("padding target smaller than image".into()));
        }
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for r in 0..self.height {
                let src = (c * self.height + r) * self.width;
                let dst = (c * height + r) * width;
                out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
            }
        }
        Ok(out)
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Mask { height, width, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }

    pub fn pad_to(&self, height: usize, width: usize) -> Result<Mask> {
        if height < self.height || width < self.width {
            return Err(Error::Argument("padding target smaller than mask".into()));
        }
        let mut out = Mask::zeros(height, width);
        for r in 0..self.height {
            out.data[r * width..r * width + self.width]
                .copy_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        Ok(out)
    }

    /// Block max-pooling: an output cell is set when any covered pixel is set.
    pub fn max_pool(&self, factor: usize) -> Result<Mask> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Argument(alloc::format!(
                "mask {}x{} not divisible by {factor}",
                self.height,
                self.width
            )));
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let mut out = Mask::zeros(h, w);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    out.set(r / factor, c / factor, true);
                }
            }
        }
        Ok(out)
    }
}

/// Smallest multiple of `multiple` that is `>= n`.
pub fn round_up(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}
