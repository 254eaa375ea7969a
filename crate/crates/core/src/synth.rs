//! Procedural surface-defect benchmark: band-limited noise textures with
//! injected scratches and blobs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, DatasetSplit, Sample};
use crate::ellipse::ellipse_to_mask;
use crate::error::{Error, Result};
use crate::raster::{Image, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    Scratch,
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    /// Intensity change, in `(0, 1]`.
    pub contrast: f64,
    /// Line thickness for scratches, radius for blobs (pixels).
    pub size: f64,
    /// Scratch length in pixels (ignored for blobs).
    pub length: f64,
    pub orientation: f64,
    pub center_x: f64,
    pub center_y: f64,
    /// Darken instead of brighten.
    pub dark: bool,
}

/// Texture octaves: (cell size in pixels, relative amplitude).
const OCTAVES: [(usize, f64); 4] = [(32, 1.0), (16, 0.6), (8, 0.35), (4, 0.2)];

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Deterministic grayscale texture in `[0, 1]`: a sum of value-noise octaves
/// around mid-gray with the given peak amplitude.
pub fn generate_background_with(seed: u64, height: usize, width: usize, amplitude: f64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xB6));
    let mut acc = vec![0.0f64; height * width];
    let mut total = 0.0;
    for &(cell, amp) in &OCTAVES {
        let gh = height / cell + 2;
        let gw = width / cell + 2;
        let grid: Vec<f64> = (0..gh * gw).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for r in 0..height {
            let fy = r as f64 / cell as f64;
            let (y0, ty) = (fy as usize, smooth(fy - libm::floor(fy)));
            for c in 0..width {
                let fx = c as f64 / cell as f64;
                let (x0, tx) = (fx as usize, smooth(fx - libm::floor(fx)));
                let g = |y: usize, x: usize| grid[y * gw + x];
                let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
                let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
                acc[r * width + c] += amp * (top * (1.0 - ty) + bot * ty);
            }
        }
        total += amp;
    }
    let data = acc.iter().map(|&v| (0.5 + amplitude * v / total).clamp(0.0, 1.0) as f32).collect();
    Image { channels: 1, height, width, data }
}

pub const DEFAULT_TEXTURE_AMPLITUDE: f64 = 0.4;

pub fn generate_background(seed: u64, height: usize, width: usize) -> Image {
    generate_background_with(seed, height, width, DEFAULT_TEXTURE_AMPLITUDE)
}

/// 4-connected digital segment between two integer points.
fn digital_line(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let (dx, dy) = ((x1 - x0).abs(), (y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y) = (x0, y0);
    let mut pts = vec![(x, y)];
    let (mut ix, mut iy) = (0, 0);
    while ix < dx || iy < dy {
        // step along whichever axis keeps the path closest to the ideal line
        if (1 + 2 * ix) * dy < (1 + 2 * iy) * dx {
            x += sx;
            ix += 1;
        } else {
            y += sy;
            iy += 1;
        }
        pts.push((x, y));
    }
    pts
}

fn scratch_endpoints(spec: &DefectSpec) -> ((i64, i64), (i64, i64)) {
    let (s, c) = libm::sincos(spec.orientation);
    let half = spec.length / 2.0;
    let p0 = (libm::round(spec.center_x - half * c) as i64, libm::round(spec.center_y - half * s) as i64);
    let p1 = (libm::round(spec.center_x + half * c) as i64, libm::round(spec.center_y + half * s) as i64);
    (p0, p1)
}

/// Geometry of a defect as a mask, or an error if it leaves the image.
pub fn defect_mask(spec: &DefectSpec, height: usize, width: usize) -> Result<Mask> {
    if !(spec.contrast > 0.0 && spec.contrast <= 1.0) {
        return Err(Error::Argument(format!("contrast {} outside (0, 1]", spec.contrast)));
    }
    if !(spec.size > 0.0) {
        return Err(Error::Argument("defect size must be positive".into()));
    }
    let inside = |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64;
    match spec.kind {
        DefectKind::Scratch => {
            if !(spec.length >= 1.0) {
                return Err(Error::Argument("scratch length must be at least 1".into()));
            }
            let ((x0, y0), (x1, y1)) = scratch_endpoints(spec);
            let margin = if spec.size > 1.0 { spec.size / 2.0 } else { 0.0 };
            for (x, y) in [(x0, y0), (x1, y1)] {
                let (x, y) = (x as f64, y as f64);
                if !inside(x - margin, y - margin) || !inside(x + margin, y + margin) {
                    return Err(Error::Argument("scratch leaves the image".into()));
                }
            }
            let mut mask = Mask::zeros(height, width);
            for (x, y) in digital_line(x0, y0, x1, y1) {
                mask.set(y as usize, x as usize, true);
            }
            if margin > 0.0 {
                // thicken with a disk
                let r = margin;
                let ri = libm::ceil(r) as i64;
                let base = mask.clone();
                for y in 0..height as i64 {
                    for x in 0..width as i64 {
                        if !base.get(y as usize, x as usize) {
                            continue;
                        }
                        for dy in -ri..=ri {
                            for dx in -ri..=ri {
                                let (yy, xx) = (y + dy, x + dx);
                                if ((dx * dx + dy * dy) as f64) <= r * r
                                    && yy >= 0
                                    && xx >= 0
                                    && yy < height as i64
                                    && xx < width as i64
                                {
                                    mask.set(yy as usize, xx as usize, true);
                                }
                            }
                        }
                    }
                }
            }
            Ok(mask)
        }
        DefectKind::Blob => {
            let minor = spec.length.clamp(0.0, spec.size);
            let minor = if minor > 0.0 { minor } else { spec.size };
            let (cx, cy, r) = (spec.center_x, spec.center_y, spec.size);
            if !inside(cx - r, cy - r) || !inside(cx + r, cy + r) {
                return Err(Error::Argument("blob leaves the image".into()));
            }
            Ok(ellipse_to_mask(cx, cy, spec.size, minor, spec.orientation, height, width))
        }
    }
}

/// Applies `spec` to a single-channel image. Returns the modified image and
/// the mask of the defect geometry.
pub fn inject_defect(image: &Image, spec: &DefectSpec, seed: u64) -> Result<(Image, Mask)> {
    if image.channels != 1 {
        return Err(Error::Argument("defects are injected into grayscale images".into()));
    }
    let mask = defect_mask(spec, image.height, image.width)?;
    if !mask.any() {
        return Err(Error::Argument("defect covers no pixel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xDE));
    let sign = if spec.dark { -1.0 } else { 1.0 };
    let mut out = image.clone();
    for (i, &m) in mask.data.iter().enumerate() {
        if m {
            // slight per-pixel variation, always at least 80% of the contrast
            let jitter = rng.gen_range(0.8..1.0);
            let v = out.data[i] as f64 + sign * spec.contrast * jitter;
            out.data[i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok((out, mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    /// Contrast range `[lo, hi)`.
    pub fn contrast_range(self) -> (f64, f64) {
        match self {
            Difficulty::Easy => (0.5, 1.0),
            Difficulty::Hard => (0.1, 0.3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub train_pos: usize,
    pub train_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
    pub contrast: (f64, f64),
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(difficulty: Difficulty, seed: u64) -> Self {
        SynthConfig {
            height: 128,
            width: 128,
            train_pos: 40,
            train_neg: 200,
            test_pos: 20,
            test_neg: 100,
            contrast: difficulty.contrast_range(),
            texture_amplitude: DEFAULT_TEXTURE_AMPLITUDE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 64 != 0 || self.width % 64 != 0 {
            return Err(Error::Config(format!("image size {}x{} must be a multiple of 64", self.height, self.width)));
        }
        if self.train_pos == 0 || self.train_neg == 0 || self.test_pos == 0 || self.test_neg == 0 {
            return Err(Error::Config("every subset needs at least one image".into()));
        }
        let (lo, hi) = self.contrast;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("contrast range ({lo}, {hi}) must lie in (0, 1]")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub subset: Subset,
    pub image: Image,
    pub mask: Option<Mask>,
    pub defect: Option<DefectSpec>,
}

fn random_defect(rng: &mut ChaCha8Rng, config: &SynthConfig) -> DefectSpec {
    let (h, w) = (config.height as f64, config.width as f64);
    let (lo, hi) = config.contrast;
    let contrast = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let orientation = rng.gen_range(0.0..core::f64::consts::PI);
    let dark = rng.gen_bool(0.5);
    if rng.gen_bool(0.5) {
        let size = libm::floor(rng.gen_range(1.0..3.5f64));
        let length = rng.gen_range(0.15..0.4) * w.min(h);
        let reach = length / 2.0 + size + 2.0;
        DefectSpec {
            kind: DefectKind::Scratch,
            contrast,
            size,
            length,
            orientation,
            center_x: rng.gen_range(reach..w - reach),
            center_y: rng.gen_range(reach..h - reach),
            dark,
        }
    } else {
        let size = rng.gen_range(0.03..0.08) * w.min(h);
        let minor = size * rng.gen_range(0.4..1.0);
        let reach = size + 2.0;
        DefectSpec {
            kind: DefectKind::Blob,
            contrast,
            size,
            length: minor,
            orientation,
            center_x: rng.gen_range(reach..w - reach),
            center_y: rng.gen_range(reach..h - reach),
            dark,
        }
    }
}

/// Generates every image of the benchmark in a fixed order: train
/// positives, train negatives, test positives, test negatives.
pub fn generate_items(config: &SynthConfig) -> Result<Vec<SynthItem>> {
    config.validate()?;
    let groups = [
        (Subset::Train, true, config.train_pos),
        (Subset::Train, false, config.train_neg),
        (Subset::Test, true, config.test_pos),
        (Subset::Test, false, config.test_neg),
    ];
    let mut items = Vec::new();
    let mut index = 0u64;
    for (subset, positive, count) in groups {
        for k in 0..count {
            let item_seed = mix_seed(config.seed, index);
            index += 1;
            let background = generate_background_with(item_seed, config.height, config.width, config.texture_amplitude);
            let name = match subset {
                Subset::Train => "train",
                Subset::Test => "test",
            };
            let id = format!("{name}_{}_{k:05}", if positive { "pos" } else { "neg" });
            if !positive {
                items.push(SynthItem { id, subset, image: background, mask: None, defect: None });
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(item_seed, 0x5EC));
            let spec = random_defect(&mut rng, config);
            let (image, mask) = inject_defect(&background, &spec, item_seed)?;
            items.push(SynthItem { id, subset, image, mask: Some(mask), defect: Some(spec) });
        }
    }
    Ok(items)
}

/// In-memory train and test splits with every positive pixel-labeled.
pub fn generate_splits(config: &SynthConfig) -> Result<(DatasetSplit, DatasetSplit)> {
    let items = generate_items(config)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for item in items {
        let sample = match item.mask {
            Some(mask) => Sample::positive(item.id, item.image, Some(mask)),
            None => Sample::negative(item.id, item.image),
        };
        match item.subset {
            Subset::Train => train.push(sample),
            Subset::Test => test.push(sample),
        }
    }
    Ok((DatasetSplit::new(train)?, DatasetSplit::new(test)?))
}
