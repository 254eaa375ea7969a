use alloc::vec;
use alloc::vec::Vec;

use crate::raster::Image;
use crate::real::Real;

/// Single-sample feature volume in CHW order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn from_image(image: &Image) -> Self {
        Tensor {
            channels: image.channels,
            height: image.height,
            width: image.width,
            data: image.data.iter().map(|&v| T::of(v as f64)).collect(),
        }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    /// Stacks `self` and `other` along the channel axis.
    pub fn concat(&self, other: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}
