//! Supervision-gated training loss.
//!
//! `L_total = λ·γ·L_seg + (1−λ)·δ·L_cls`, with λ following a linear schedule
//! over epochs, γ disabling the segmentation term for positives that lack a
//! pixel mask, and the segmentation term weighted per pixel by a power of the
//! normalized distance to the nearest negative pixel.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Tensor;
use crate::raster::Mask;
use crate::real::{sigmoid, Real};

/// λ used for every epoch when dynamic balancing is disabled.
pub const LAMBDA_FALLBACK: f64 = 0.5;

/// How distances are normalized before the power function is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceNormalization {
    /// By the maximum distance inside the pixel's 8-connected region.
    #[default]
    PerRegion,
    /// By the maximum distance over the whole mask.
    PerImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub delta: f64,
    pub w_pos: f64,
    pub p: f64,
    pub dilation_kernel: usize,
    pub dynamic_balancing: bool,
    pub distance_transform: bool,
    #[serde(default)]
    pub normalization: DistanceNormalization,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("w_pos", self.w_pos), ("p", self.p)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dilation_kernel == 0 || self.dilation_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "dilation kernel must be odd and >= 1, got {}",
                self.dilation_kernel
            )));
        }
        Ok(())
    }
}

/// Annotation status of a training image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SupervisionTier {
    Negative,
    PositivePixelLabeled,
    PositiveWeak,
}

impl SupervisionTier {
    pub fn is_positive(self) -> bool {
        !matches!(self, SupervisionTier::Negative)
    }
}

/// λ for epoch `n` of `n_ep`: `1 − n/n_ep` with dynamic balancing, otherwise
/// [`LAMBDA_FALLBACK`].
pub fn lambda_schedule(n: usize, n_ep: usize, dynamic_balancing: bool) -> Result<f64> {
    if n_ep == 0 {
        return Err(Error::Argument("n_ep must be positive".into()));
    }
    if n > n_ep {
        return Err(Error::Argument(format!("epoch {n} exceeds n_ep {n_ep}")));
    }
    Ok(if dynamic_balancing { 1.0 - n as f64 / n_ep as f64 } else { LAMBDA_FALLBACK })
}

/// γ: 1 when the segmentation target is known (negatives and pixel-labeled
/// positives), 0 otherwise.
pub fn gamma_indicator(tier: SupervisionTier) -> u8 {
    match tier {
        SupervisionTier::Negative | SupervisionTier::PositivePixelLabeled => 1,
        SupervisionTier::PositiveWeak => 0,
    }
}

pub fn total_loss(l_seg: f64, l_cls: f64, lambda: f64, gamma: u8, delta: f64) -> f64 {
    lambda * f64::from(gamma) * l_seg + (1.0 - lambda) * delta * l_cls
}

/// Morphological dilation with a `kernel x kernel` square.
pub fn dilate_mask(mask: &Mask, kernel: usize) -> Result<Mask> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Argument(format!("dilation kernel must be odd, got {kernel}")));
    }
    if kernel == 1 {
        return Ok(mask.clone());
    }
    let r = kernel / 2;
    let (h, w) = (mask.height, mask.width);
    // square structuring element is separable: rows then columns
    let mut rows = Mask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    rows.set(y, xx, true);
                }
            }
        }
    }
    let mut out = Mask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            if rows.get(y, x) {
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    out.set(yy, x, true);
                }
            }
        }
    }
    Ok(out)
}

/// Per-pixel segmentation loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl WeightMask {
    pub fn ones(height: usize, width: usize) -> Self {
        WeightMask { height, width, data: vec![1.0; height * width] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// where `mask` is false. `None` when the mask has no such pixel.
pub fn squared_distance_to_negative(mask: &Mask) -> Option<Vec<f64>> {
    if mask.data.iter().all(|&v| v) {
        return None;
    }
    let (h, w) = (mask.height, mask.width);
    let inf = ((h * h + w * w) as f64) * 4.0 + 1.0;
    let mut grid: Vec<f64> = mask.data.iter().map(|&v| if v { inf } else { 0.0 }).collect();
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        lower_envelope(&f[..h], &mut d[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = d[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        lower_envelope(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&d[..w]);
    }
    Some(grid)
}

/// One-dimensional squared distance transform of a sampled function
/// (lower envelope of parabolas).
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            // z[0] is -inf and f is finite, so this stops at k == 0
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let diff = q as f64 - v[k] as f64;
        *out = diff * diff + f[v[k]];
    }
}

/// Labels 8-connected components of set pixels; unset pixels get `0`,
/// components are numbered from `1`. Returns the labels and component count.
pub fn connected_components(mask: &Mask) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    if mask.data[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Weights `w_pos·(D/D_max)^p` on positive pixels, 1 on negative pixels,
/// with `D_max` taken per 8-connected region.
pub fn distance_weight_mask(mask: &Mask, w_pos: f64, p: f64) -> WeightMask {
    distance_weight_mask_with(mask, w_pos, p, DistanceNormalization::PerRegion)
}

pub fn distance_weight_mask_with(mask: &Mask, w_pos: f64, p: f64, normalization: DistanceNormalization) -> WeightMask {
    let (h, w) = (mask.height, mask.width);
    let mut out = WeightMask::ones(h, w);
    let Some(sq) = squared_distance_to_negative(mask) else {
        out.data.iter_mut().for_each(|v| *v = w_pos);
        return out;
    };
    let dist: Vec<f64> = sq.iter().map(|&s| libm::sqrt(s)).collect();
    let (labels, n) = match normalization {
        DistanceNormalization::PerRegion => connected_components(mask),
        DistanceNormalization::PerImage => (mask.data.iter().map(|&v| u32::from(v)).collect(), 1),
    };
    let mut dmax = vec![0.0f64; n + 1];
    for (&l, &d) in labels.iter().zip(&dist) {
        if l != 0 && d > dmax[l as usize] {
            dmax[l as usize] = d;
        }
    }
    for ((o, &l), &d) in out.data.iter_mut().zip(&labels).zip(&dist) {
        if l != 0 {
            *o = w_pos * libm::pow(d / dmax[l as usize], p);
        }
    }
    out
}

/// Reduces a full-resolution target and its weights to the `S_h` grid.
/// A cell is positive if any covered pixel is; a positive cell takes the
/// largest weight among its positive pixels, a negative cell keeps weight 1.
pub fn downsample_target(mask: &Mask, weights: &WeightMask, factor: usize) -> Result<(Mask, WeightMask)> {
    if (mask.height, mask.width) != (weights.height, weights.width) {
        return Err(Error::Argument("mask and weights differ in size".into()));
    }
    let target = mask.max_pool(factor)?;
    let mut out = WeightMask { height: target.height, width: target.width, data: vec![f64::NEG_INFINITY; target.data.len()] };
    for r in 0..mask.height {
        for c in 0..mask.width {
            if mask.get(r, c) {
                let i = (r / factor) * target.width + c / factor;
                out.data[i] = out.data[i].max(weights.get(r, c));
            }
        }
    }
    for v in &mut out.data {
        if *v == f64::NEG_INFINITY {
            *v = 1.0;
        }
    }
    Ok((target, out))
}

/// Segmentation target and weights at `S_h` resolution for one sample.
/// `mask` is `None` for negatives (all-zero target, unit weights).
pub fn prepare_segmentation_target(
    mask: Option<&Mask>,
    height: usize,
    width: usize,
    factor: usize,
    config: &LossConfig,
) -> Result<(Mask, WeightMask)> {
    let full = match mask {
        Some(m) => {
            if (m.height, m.width) != (height, width) {
                return Err(Error::Argument(format!(
                    "mask is {}x{}, image is {height}x{width}",
                    m.height, m.width
                )));
            }
            dilate_mask(m, config.dilation_kernel)?
        }
        None => Mask::zeros(height, width),
    };
    let weights = if config.distance_transform && full.any() {
        distance_weight_mask_with(&full, config.w_pos, config.p, config.normalization)
    } else {
        WeightMask::ones(height, width)
    };
    downsample_target(&full, &weights, factor)
}

#[inline]
fn bce_with_logit<T: Real>(x: T, y: bool) -> T {
    // softplus(x) - x*y, written to stay finite for large |x|
    let sp = x.max(T::zero()) + (-x.abs()).exp().ln_1p();
    if y {
        sp - x
    } else {
        sp
    }
}

fn check_seg_shapes<T>(logits: &Tensor<T>, target: &Mask, weights: &WeightMask) -> Result<()> {
    let shape = (logits.height, logits.width);
    if logits.channels != 1 || shape != (target.height, target.width) || shape != (weights.height, weights.width) {
        return Err(Error::Argument(format!(
            "segmentation shapes disagree: logits {}x{}x{}, target {}x{}, weights {}x{}",
            logits.channels, logits.height, logits.width, target.height, target.width, weights.height, weights.width
        )));
    }
    Ok(())
}

/// Pixel-weighted binary cross-entropy, averaged over the pixel count.
pub fn segmentation_loss<T: Real>(logits: &Tensor<T>, target: &Mask, weights: &WeightMask) -> Result<T> {
    check_seg_shapes(logits, target, weights)?;
    let n = T::of(logits.data.len() as f64);
    let sum = logits
        .data
        .iter()
        .zip(&target.data)
        .zip(&weights.data)
        .map(|((&x, &y), &w)| T::of(w) * bce_with_logit(x, y))
        .sum::<T>();
    Ok(sum / n)
}

/// [`segmentation_loss`] together with its gradient with respect to the logits.
pub fn segmentation_loss_grad<T: Real>(logits: &Tensor<T>, target: &Mask, weights: &WeightMask) -> Result<(T, Vec<T>)> {
    let loss = segmentation_loss(logits, target, weights)?;
    let n = T::of(logits.data.len() as f64);
    let grad = logits
        .data
        .iter()
        .zip(&target.data)
        .zip(&weights.data)
        .map(|((&x, &y), &w)| {
            let t = if y { T::one() } else { T::zero() };
            T::of(w) * (sigmoid(x) - t) / n
        })
        .collect();
    Ok((loss, grad))
}

pub fn classification_loss<T: Real>(logit: T, label: bool) -> T {
    bce_with_logit(logit, label)
}

/// `dL_cls/dC_p`.
pub fn classification_loss_grad<T: Real>(logit: T, label: bool) -> T {
    sigmoid(logit) - if label { T::one() } else { T::zero() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lambda_endpoints_and_midpoint() {
        assert_eq!(lambda_schedule(0, 70, true).unwrap(), 1.0);
        assert_eq!(lambda_schedule(70, 70, true).unwrap(), 0.0);
        assert_eq!(lambda_schedule(35, 70, true).unwrap(), 0.5);
        assert_eq!(lambda_schedule(3, 70, false).unwrap(), LAMBDA_FALLBACK);
        assert!(matches!(lambda_schedule(71, 70, true), Err(Error::Argument(_))));
    }

    #[test]
    fn gamma_table() {
        assert_eq!(gamma_indicator(SupervisionTier::Negative), 1);
        assert_eq!(gamma_indicator(SupervisionTier::PositivePixelLabeled), 1);
        assert_eq!(gamma_indicator(SupervisionTier::PositiveWeak), 0);
    }

    #[test]
    fn total_loss_examples() {
        assert!(close(total_loss(0.2, 0.4, 0.5, 1, 1.0), 0.3, 1e-15));
        assert_eq!(total_loss(0.2, 0.4, 1.0, 0, 1.0), 0.0);
        assert!(close(total_loss(0.3, 0.5, 0.25, 1, 0.01), 0.07875, 1e-15));
    }

    #[test]
    fn dilation_examples() {
        let mut m = Mask::zeros(9, 9);
        m.set(4, 4, true);
        assert_eq!(dilate_mask(&m, 1).unwrap(), m);
        let d = dilate_mask(&m, 3).unwrap();
        assert_eq!(d.count(), 9);
        for r in 3..=5 {
            for c in 3..=5 {
                assert!(d.get(r, c));
            }
        }
        assert!(dilate_mask(&m, 4).is_err());
    }

    #[test]
    fn strip_weights() {
        let m = Mask::from_fn(1, 7, |_, c| (2..=4).contains(&c));
        let w = distance_weight_mask(&m, 1.0, 1.0);
        assert_eq!(w.data, vec![1.0, 1.0, 0.5, 1.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn trivial_weight_cases() {
        let zero = Mask::zeros(5, 6);
        assert!(distance_weight_mask(&zero, 3.0, 2.0).data.iter().all(|&v| v == 1.0));
        let mut single = Mask::zeros(5, 5);
        single.set(2, 3, true);
        assert_eq!(distance_weight_mask(&single, 7.5, 2.0).get(2, 3), 7.5);
        let full = Mask::from_fn(3, 3, |_, _| true);
        assert!(distance_weight_mask(&full, 4.0, 1.0).data.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn regions_are_normalized_separately() {
        // a 1x1 and a 3x3 region: both reach w_pos at their own maximum
        let m = Mask::from_fn(7, 9, |r, c| (r == 1 && c == 1) || ((2..=4).contains(&r) && (5..=7).contains(&c)));
        let w = distance_weight_mask(&m, 2.0, 1.0);
        assert_eq!(w.get(1, 1), 2.0);
        assert_eq!(w.get(3, 6), 2.0);
        assert_eq!(w.get(2, 5), 1.0);
        let wi = distance_weight_mask_with(&m, 2.0, 1.0, DistanceNormalization::PerImage);
        assert_eq!(wi.get(1, 1), 1.0);
    }

    #[test]
    fn segmentation_loss_examples() {
        let t = Tensor { channels: 1, height: 2, width: 2, data: vec![-1e6f64; 4] };
        let target = Mask::zeros(2, 2);
        let ones = WeightMask::ones(2, 2);
        assert!(segmentation_loss(&t, &target, &ones).unwrap() < 1e-300);
        let z = Tensor { channels: 1, height: 2, width: 2, data: vec![0.0f64; 4] };
        assert!(close(segmentation_loss(&z, &target, &ones).unwrap(), core::f64::consts::LN_2, 1e-15));
        assert!(segmentation_loss(&z, &Mask::zeros(2, 3), &ones).is_err());
    }

    #[test]
    fn classification_loss_examples() {
        assert_eq!(classification_loss(1e6f64, true), 0.0);
        assert!(close(classification_loss(0.0f64, false), core::f64::consts::LN_2, 1e-15));
        let want = -libm::log(1.0 / (1.0 + libm::exp(-1.5)));
        assert!(close(classification_loss(1.5f64, true), want, 1e-15));
    }

    #[test]
    fn downsampled_weights_keep_positive_maximum() {
        let m = Mask::from_fn(8, 8, |r, c| r < 3 && c < 3);
        let w = distance_weight_mask(&m, 1.0, 2.0);
        let (t, wd) = downsample_target(&m, &w, 4).unwrap();
        assert!(t.get(0, 0) && !t.get(1, 1));
        assert_eq!(wd.get(0, 0), 1.0);
        assert_eq!(wd.get(1, 1), 1.0);
        let w10 = distance_weight_mask(&m, 0.5, 2.0);
        let (_, wd) = downsample_target(&m, &w10, 4).unwrap();
        assert_eq!(wd.get(0, 0), 0.5);
    }
}
