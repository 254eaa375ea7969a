//! Forward and backward kernels for the layers the network is built from.
//! All kernels operate on a single sample; parameters live in one flat
//! buffer and layers only hold offsets into it.

use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::real::{Layout, Real};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Square convolution, stride 1, "same" size with edge-replicating padding.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.channels, self.cin);
        let hw = x.plane();
        let mut out = Tensor::zeros(self.cout, x.height, x.width);
        let w = &params[self.weight..self.weight + self.weight_len()];
        let k = self.patch_len();
        if self.kernel == 1 {
            T::gemm(self.cout, k, hw, T::one(), w, Layout::Normal, &x.data, Layout::Normal, T::zero(), &mut out.data);
        } else {
            let cols = im2col(x, self.kernel);
            T::gemm(self.cout, k, hw, T::one(), w, Layout::Normal, &cols, Layout::Normal, T::zero(), &mut out.data);
        }
        let b = &params[self.bias..self.bias + self.cout];
        for (o, &bias) in out.data.chunks_exact_mut(hw).zip(b) {
            for v in o {
                *v = *v + bias;
            }
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// only when `need_input_grad` is set.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        grads: &mut [T],
        x: &Tensor<T>,
        dout: &[T],
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let hw = x.plane();
        let k = self.patch_len();
        let owned;
        let cols: &[T] = if self.kernel == 1 {
            &x.data
        } else {
            owned = im2col(x, self.kernel);
            &owned
        };
        let wl = self.weight_len();
        T::gemm(
            self.cout,
            hw,
            k,
            T::one(),
            dout,
            Layout::Normal,
            cols,
            Layout::Transposed,
            T::one(),
            &mut grads[self.weight..self.weight + wl],
        );
        for (o, g) in dout.chunks_exact(hw).zip(&mut grads[self.bias..self.bias + self.cout]) {
            *g = *g + o.iter().copied().sum::<T>();
        }
        if !need_input_grad {
            return None;
        }
        let w = &params[self.weight..self.weight + wl];
        let mut dcols = vec![T::zero(); k * hw];
        T::gemm(k, self.cout, hw, T::one(), w, Layout::Transposed, dout, Layout::Normal, T::zero(), &mut dcols);
        if self.kernel == 1 {
            return Some(Tensor { channels: self.cin, height: x.height, width: x.width, data: dcols });
        }
        Some(col2im(&dcols, self.cin, x.height, x.width, self.kernel))
    }
}

/// Source index of output position `i` shifted by `d`, clamped to the edge.
#[inline]
fn clamp(i: isize, d: isize, n: isize) -> usize {
    (i + d).clamp(0, n - 1) as usize
}

/// Unfolds `kernel x kernel` neighbourhoods into a `(C*k*k) x (H*W)` matrix.
/// Out-of-range taps read the nearest edge pixel.
fn im2col<T: Real>(x: &Tensor<T>, kernel: usize) -> Vec<T> {
    let (h, w) = (x.height as isize, x.width as isize);
    let pad = (kernel / 2) as isize;
    let hw = x.plane();
    let mut cols = vec![T::zero(); x.channels * kernel * kernel * hw];
    let mut row = 0;
    for c in 0..x.channels {
        let src = x.channel(c);
        for ki in 0..kernel as isize {
            for kj in 0..kernel as isize {
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let (dy, dx) = (ki - pad, kj - pad);
                // columns [c0, c1) need no clamping
                let c0 = (-dx).clamp(0, w);
                let c1 = (w - dx).clamp(c0, w);
                for r in 0..h {
                    let s = clamp(r, dy, h) * w as usize;
                    let d = (r * w) as usize;
                    let line = &src[s..s + w as usize];
                    let out = &mut dst[d..d + w as usize];
                    for col in 0..c0 {
                        out[col as usize] = line[clamp(col, dx, w)];
                    }
                    if c0 < c1 {
                        out[c0 as usize..c1 as usize]
                            .copy_from_slice(&line[(c0 + dx) as usize..(c1 + dx) as usize]);
                    }
                    for col in c1..w {
                        out[col as usize] = line[clamp(col, dx, w)];
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], channels: usize, height: usize, width: usize, kernel: usize) -> Tensor<T> {
    let (h, w) = (height as isize, width as isize);
    let pad = (kernel / 2) as isize;
    let hw = height * width;
    let mut out = Tensor::zeros(channels, height, width);
    let mut row = 0;
    for c in 0..channels {
        let dst = &mut out.data[c * hw..(c + 1) * hw];
        for ki in 0..kernel as isize {
            for kj in 0..kernel as isize {
                let src = &cols[row * hw..(row + 1) * hw];
                let (dy, dx) = (ki - pad, kj - pad);
                let c0 = (-dx).clamp(0, w);
                let c1 = (w - dx).clamp(c0, w);
                for r in 0..h {
                    let d = clamp(r, dy, h) * width;
                    let s = (r * w) as usize;
                    let line = &mut dst[d..d + width];
                    let g = &src[s..s + width];
                    for col in 0..c0 {
                        let t = clamp(col, dx, w);
                        line[t] = line[t] + g[col as usize];
                    }
                    if c0 < c1 {
                        let span = &mut line[(c0 + dx) as usize..(c1 + dx) as usize];
                        for (o, &v) in span.iter_mut().zip(&g[c0 as usize..c1 as usize]) {
                            *o = *o + v;
                        }
                    }
                    for col in c1..w {
                        let t = clamp(col, dx, w);
                        line[t] = line[t] + g[col as usize];
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Per-sample normalization with a per-channel affine transform. Statistics
/// are taken either per channel over the spatial plane or over the whole
/// feature volume. Independent of batch composition, so training with one
/// image per step and inference behave identically.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub channels: usize,
    pub per_channel: bool,
    pub scale: usize,
    pub shift: usize,
}

pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    /// One entry per statistics group.
    pub inv_std: Vec<T>,
}

impl Norm {
    fn group_len(&self, total: usize) -> usize {
        if self.per_channel {
            total / self.channels
        } else {
            total
        }
    }

    pub fn forward<T: Real>(&self, params: &[T], x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
        let len = self.group_len(x.data.len());
        let n = T::of(len as f64);
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_stds = Vec::new();
        for (src, dst) in x.data.chunks(len).zip(xhat.chunks_mut(len)) {
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv_std = T::one() / (var + T::of(NORM_EPS)).sqrt();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * inv_std;
            }
            inv_stds.push(inv_std);
        }
        let hw = x.plane();
        let mut out = Tensor::zeros(x.channels, x.height, x.width);
        for c in 0..self.channels {
            let g = params[self.scale + c];
            let b = params[self.shift + c];
            for (o, &xh) in out.data[c * hw..(c + 1) * hw].iter_mut().zip(&xhat[c * hw..(c + 1) * hw]) {
                *o = g * xh + b;
            }
        }
        (out, NormCache { xhat, inv_std: inv_stds })
    }

    pub fn backward<T: Real>(&self, params: &[T], grads: &mut [T], cache: &NormCache<T>, dout: &[T], hw: usize) -> Vec<T> {
        let mut dxhat = vec![T::zero(); dout.len()];
        for c in 0..self.channels {
            let g = params[self.scale + c];
            let range = c * hw..(c + 1) * hw;
            let mut dg = T::zero();
            let mut db = T::zero();
            for ((d, &xh), dx) in dout[range.clone()].iter().zip(&cache.xhat[range.clone()]).zip(&mut dxhat[range]) {
                dg = dg + *d * xh;
                db = db + *d;
                *dx = *d * g;
            }
            grads[self.scale + c] = grads[self.scale + c] + dg;
            grads[self.shift + c] = grads[self.shift + c] + db;
        }
        let len = self.group_len(dout.len());
        let n = T::of(len as f64);
        let mut dx = vec![T::zero(); dout.len()];
        for (((d, x), out), &inv_std) in
            dxhat.chunks(len).zip(cache.xhat.chunks(len)).zip(dx.chunks_mut(len)).zip(&cache.inv_std)
        {
            let mean_d = d.iter().copied().sum::<T>() / n;
            let mean_dx = d.iter().zip(x).map(|(&d, &x)| d * x).sum::<T>() / n;
            for ((o, &d), &x) in out.iter_mut().zip(d).zip(x) {
                *o = inv_std * (d - mean_d - x * mean_dx);
            }
        }
        dx
    }
}

pub(crate) fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the activation output was clipped.
pub(crate) fn relu_backward_inplace<T: Real>(grad: &mut [T], out: &[T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling with stride 2; returns the argmax of every window.
pub(crate) fn max_pool2<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut out = Tensor::zeros(x.channels, oh, ow);
    let mut arg = vec![0u32; x.channels * oh * ow];
    let w = x.width;
    for c in 0..x.channels {
        let src = x.channel(c);
        let base = c * x.plane();
        for r in 0..oh {
            for col in 0..ow {
                let i0 = 2 * r * w + 2 * col;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = (c * oh + r) * ow + col;
                out.data[o] = src[best];
                arg[o] = (base + best) as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool2_backward<T: Real>(dout: &[T], arg: &[u32], channels: usize, height: usize, width: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(channels, height, width);
    for (&g, &i) in dout.iter().zip(arg) {
        let i = i as usize;
        dx.data[i] = dx.data[i] + g;
    }
    dx
}
