//! Adapters for the supported dataset layouts.
//!
//! | format    | layout                                                            |
//! |-----------|-------------------------------------------------------------------|
//! | dagm      | images plus `labels.txt` (`file a b rotation cx cy`, one ellipse per line) |
//! | ksdd      | one directory per item, `PartN.<ext>` with `PartN_label.<ext>`    |
//! | ksdd2     | flat directory, `<id>.png` with `<id>_GT.png`                     |
//! | severstal | `train.csv` (`ImageId,ClassId,EncodedPixels`) and `train_images/` |
//! | synth     | `manifest.json`, `images/`, `masks/`                              |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use segdec_core::data::{DatasetSplit, Sample};
use segdec_core::ellipse::ellipse_to_mask;
use segdec_core::model::INPUT_MULTIPLE;
use segdec_core::raster::round_up;
use segdec_core::rle::{decode_rle, parse_rle};
use segdec_core::synth::Subset;
use segdec_core::{Image, Mask};
use serde::{Deserialize, Serialize};

use crate::imageio::{is_image_file, read_image, read_mask, resize_image, resize_mask};
use crate::synth_io::read_manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Dagm,
    Ksdd,
    Ksdd2,
    Severstal,
    Synth,
}

impl DatasetFormat {
    pub fn key(self) -> &'static str {
        match self {
            DatasetFormat::Dagm => "dagm",
            DatasetFormat::Ksdd => "ksdd",
            DatasetFormat::Ksdd2 => "ksdd2",
            DatasetFormat::Severstal => "severstal",
            DatasetFormat::Synth => "synth",
        }
    }

    /// Subdirectory (or manifest subset) holding the training and test
    /// images, for formats that ship a fixed split.
    pub fn default_subsets(self) -> Option<(&'static str, &'static str)> {
        match self {
            DatasetFormat::Dagm => Some(("Train", "Test")),
            DatasetFormat::Ksdd2 => Some(("train", "test")),
            DatasetFormat::Synth => Some(("train", "test")),
            DatasetFormat::Ksdd | DatasetFormat::Severstal => None,
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DatasetFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        <Self as clap::ValueEnum>::from_str(s, true).map_err(|_| anyhow!("unknown dataset format '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Subdirectory (or synthetic subset) to read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
    /// 1 for grayscale, 3 for RGB.
    pub channels: usize,
    /// Resize every image (and mask) to `[height, width]` before padding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<[usize; 2]>,
    /// Keep at most this many positives (lowest ids first).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_positives: Option<usize>,
    /// Severstal defect class treated as positive.
    pub severstal_class: u32,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { subset: None, channels: 1, resize: None, max_positives: None, severstal_class: 3 }
    }
}

struct Raw {
    id: String,
    image: Image,
    mask: Option<Mask>,
}

/// Loads a dataset and zero-pads every image to a common size that is a
/// multiple of the network's input granularity.
pub fn load_dataset(format: DatasetFormat, root: &Path, options: &LoadOptions) -> Result<DatasetSplit> {
    if !root.is_dir() {
        bail!("dataset root {} is not a directory", root.display());
    }
    let mut raw = match format {
        DatasetFormat::Dagm => load_dagm(&subset_dir(root, options)?, options)?,
        DatasetFormat::Ksdd => load_ksdd(&subset_dir(root, options)?, options)?,
        DatasetFormat::Ksdd2 => load_ksdd2(&subset_dir(root, options)?, options)?,
        DatasetFormat::Severstal => load_severstal(&subset_dir(root, options)?, options)?,
        DatasetFormat::Synth => load_synth(root, options)?,
    };
    if raw.is_empty() {
        bail!("no images found under {}", root.display());
    }
    raw.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(limit) = options.max_positives {
        let mut kept = 0;
        raw.retain(|s| {
            if s.mask.as_ref().is_some_and(Mask::any) {
                kept += 1;
                kept <= limit
            } else {
                true
            }
        });
    }
    if let Some([h, w]) = options.resize {
        for s in &mut raw {
            s.image = resize_image(&s.image, h, w);
            s.mask = s.mask.as_ref().map(|m| resize_mask(m, h, w));
        }
    }
    let height = round_up(raw.iter().map(|s| s.image.height).max().unwrap_or(0), INPUT_MULTIPLE);
    let width = round_up(raw.iter().map(|s| s.image.width).max().unwrap_or(0), INPUT_MULTIPLE);
    let samples = raw
        .into_iter()
        .map(|s| {
            let image = s.image.pad_to(height, width)?;
            Ok(match s.mask.filter(Mask::any) {
                Some(m) => Sample::positive(s.id, image, Some(m.pad_to(height, width)?)),
                None => Sample::negative(s.id, image),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetSplit::new(samples)?)
}

fn subset_dir(root: &Path, options: &LoadOptions) -> Result<PathBuf> {
    let Some(name) = &options.subset else {
        return Ok(root.to_path_buf());
    };
    let exact = root.join(name);
    if exact.is_dir() {
        return Ok(exact);
    }
    // distributions disagree on capitalization (Train vs train)
    for entry in read_dir_sorted(root)? {
        if entry.is_dir() && entry.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.eq_ignore_ascii_case(name)) {
            return Ok(entry);
        }
    }
    bail!("subset '{name}' not found under {}", root.display())
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("cannot list {}", dir.display()))?;
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn file_name(path: &Path) -> String {
    path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Files in `dir` that are images (masks are recognized by `is_mask`).
fn image_files(dir: &Path, is_mask: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>> {
    Ok(read_dir_sorted(dir)?.into_iter().filter(|p| p.is_file() && is_image_file(p) && !is_mask(&stem(p))).collect())
}

fn find_with_stem(dir: &Path, wanted: &str) -> Result<Option<PathBuf>> {
    Ok(read_dir_sorted(dir)?.into_iter().find(|p| p.is_file() && is_image_file(p) && stem(p) == wanted))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipseLabel {
    pub file: String,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rotation: f64,
    pub center_x: f64,
    pub center_y: f64,
}

/// Parses a DAGM label file. Fields are separated by whitespace or commas;
/// blank lines and `#` comments are skipped, as is a non-numeric header on
/// the first line.
pub fn parse_ellipse_labels(text: &str, source: &Path) -> Result<Vec<EllipseLabel>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        let numbers: Option<Vec<f64>> = fields.get(1..).map(|f| f.iter().map(|v| v.parse().ok()).collect()).flatten();
        match numbers {
            Some(v) if v.len() == 5 => out.push(EllipseLabel {
                file: fields[0].to_string(),
                semi_major: v[0],
                semi_minor: v[1],
                rotation: v[2],
                center_x: v[3],
                center_y: v[4],
            }),
            None if k == 0 => continue,
            _ => bail!("{}:{}: expected 'file semi_major semi_minor rotation cx cy'", source.display(), k + 1),
        }
        let l = out.last().expect("just pushed");
        if !(l.semi_major > 0.0 && l.semi_minor > 0.0) {
            bail!("{}:{}: semi-axes must be positive", source.display(), k + 1);
        }
    }
    Ok(out)
}

fn load_dagm(dir: &Path, options: &LoadOptions) -> Result<Vec<Raw>> {
    let label_path = ["labels.txt", "Labels.txt", "Label/Labels.txt", "Label/labels.txt"]
        .iter()
        .map(|p| dir.join(p))
        .find(|p| p.is_file())
        .ok_or_else(|| anyhow!("no labels.txt in {}", dir.display()))?;
    let text = fs::read_to_string(&label_path).with_context(|| format!("cannot read {}", label_path.display()))?;
    let labels = parse_ellipse_labels(&text, &label_path)?;
    let mut by_file: BTreeMap<String, Vec<&EllipseLabel>> = BTreeMap::new();
    for l in &labels {
        by_file.entry(l.file.clone()).or_default().push(l);
    }
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for path in image_files(dir, |s| s.ends_with("_label"))? {
        let image = read_image(&path, options.channels)?;
        let name = file_name(&path);
        let key = [name.clone(), stem(&path)].into_iter().find(|k| by_file.contains_key(k));
        let mask = key.map(|k| {
            let mask = by_file[&k].iter().fold(Mask::zeros(image.height, image.width), |mut acc, l| {
                let e = ellipse_to_mask(l.center_x, l.center_y, l.semi_major, l.semi_minor, l.rotation, image.height, image.width);
                acc.data.iter_mut().zip(e.data).for_each(|(a, b)| *a |= b);
                acc
            });
            used.insert(k);
            mask
        });
        out.push(Raw { id: stem(&path), image, mask });
    }
    if let Some(missing) = by_file.keys().find(|k| !used.contains(*k)) {
        bail!("{} labels '{missing}', which is not an image in {}", label_path.display(), dir.display());
    }
    Ok(out)
}

fn load_ksdd(dir: &Path, options: &LoadOptions) -> Result<Vec<Raw>> {
    let mut out = Vec::new();
    for item in read_dir_sorted(dir)?.into_iter().filter(|p| p.is_dir()) {
        let item_name = file_name(&item);
        for path in image_files(&item, |s| s.ends_with("_label"))? {
            let s = stem(&path);
            let mask_path = find_with_stem(&item, &format!("{s}_label"))?
                .ok_or_else(|| anyhow!("{} has no {s}_label mask", path.display()))?;
            let image = read_image(&path, options.channels)?;
            let mask = read_mask(&mask_path)?;
            check_mask_size(&image, &mask, &mask_path)?;
            out.push(Raw { id: format!("{item_name}/{s}"), image, mask: Some(mask) });
        }
    }
    Ok(out)
}

fn load_ksdd2(dir: &Path, options: &LoadOptions) -> Result<Vec<Raw>> {
    let mut out = Vec::new();
    for path in image_files(dir, |s| s.ends_with("_GT"))? {
        let s = stem(&path);
        let mask_path =
            find_with_stem(dir, &format!("{s}_GT"))?.ok_or_else(|| anyhow!("{} has no {s}_GT mask", path.display()))?;
        let image = read_image(&path, options.channels)?;
        let mask = read_mask(&mask_path)?;
        check_mask_size(&image, &mask, &mask_path)?;
        out.push(Raw { id: s, image, mask: Some(mask) });
    }
    Ok(out)
}

fn check_mask_size(image: &Image, mask: &Mask, path: &Path) -> Result<()> {
    if (image.height, image.width) != (mask.height, mask.width) {
        bail!(
            "mask {} is {}x{} but its image is {}x{}",
            path.display(),
            mask.height,
            mask.width,
            image.height,
            image.width
        );
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SeverstalRow {
    #[serde(rename = "ImageId")]
    image_id: String,
    #[serde(rename = "ClassId")]
    class_id: u32,
    #[serde(rename = "EncodedPixels")]
    encoded: String,
}

/// Severstal: positives are images annotated with the selected class, and
/// negatives are images with no annotation at all. Images that only carry
/// other classes are skipped.
fn load_severstal(dir: &Path, options: &LoadOptions) -> Result<Vec<Raw>> {
    let csv_path = dir.join("train.csv");
    let images_dir = ["train_images", "images"]
        .iter()
        .map(|d| dir.join(d))
        .find(|d| d.is_dir())
        .ok_or_else(|| anyhow!("no train_images directory in {}", dir.display()))?;
    let mut reader =
        csv::Reader::from_path(&csv_path).with_context(|| format!("cannot read {}", csv_path.display()))?;
    let mut runs: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    let mut annotated = BTreeSet::new();
    for (k, row) in reader.deserialize::<SeverstalRow>().enumerate() {
        let row = row.with_context(|| format!("{}: malformed row {}", csv_path.display(), k + 2))?;
        annotated.insert(row.image_id.clone());
        if row.class_id == options.severstal_class {
            let parsed = parse_rle(&row.encoded).with_context(|| format!("{}: row {}", csv_path.display(), k + 2))?;
            runs.entry(row.image_id).or_default().extend(parsed);
        }
    }
    let mut out = Vec::new();
    for path in image_files(&images_dir, |_| false)? {
        let name = file_name(&path);
        let mask_runs = runs.get(&name);
        if mask_runs.is_none() && annotated.contains(&name) {
            continue;
        }
        let image = read_image(&path, options.channels)?;
        let mask = match mask_runs {
            Some(r) => Some(
                decode_rle(r, image.height, image.width).with_context(|| format!("runs for {name} in {}", csv_path.display()))?,
            ),
            None => None,
        };
        out.push(Raw { id: stem(&path), image, mask });
    }
    if let Some(missing) = runs.keys().find(|k| !images_dir.join(k).is_file()) {
        bail!("{} annotates {missing}, which is missing from {}", csv_path.display(), images_dir.display());
    }
    Ok(out)
}

fn load_synth(root: &Path, options: &LoadOptions) -> Result<Vec<Raw>> {
    let manifest = read_manifest(root)?;
    let subset = match options.subset.as_deref().map(str::to_ascii_lowercase).as_deref() {
        None => None,
        Some("train") => Some(Subset::Train),
        Some("test") => Some(Subset::Test),
        Some(other) => bail!("synthetic subsets are 'train' and 'test', got '{other}'"),
    };
    let mut out = Vec::new();
    for item in manifest.items.iter().filter(|i| subset.is_none_or(|s| s == i.subset)) {
        let image = read_image(&root.join("images").join(format!("{}.png", item.id)), options.channels)?;
        let mask = if item.positive {
            let path = root.join("masks").join(format!("{}.png", item.id));
            let mask = read_mask(&path)?;
            if !mask.any() {
                bail!("mask {} is empty but the manifest marks {} as defective", path.display(), item.id);
            }
            check_mask_size(&image, &mask, &path)?;
            Some(mask)
        } else {
            None
        };
        out.push(Raw { id: item.id.clone(), image, mask });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_parser_accepts_header_and_commas() {
        let text = "file a b rot cx cy\n0001.png 10 5 0.5 100 120\n\n# note\n0002.png,3,2,0,10,11\n";
        let l = parse_ellipse_labels(text, Path::new("labels.txt")).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l[1].file, "0002.png");
        assert_eq!(l[1].center_y, 11.0);
    }

    #[test]
    fn label_parser_names_the_bad_line() {
        let err = parse_ellipse_labels("0001.png 1 2 3 4 5\n0002.png 1 2\n", Path::new("x/labels.txt")).unwrap_err();
        assert!(err.to_string().contains("x/labels.txt:2"), "{err}");
    }

    #[test]
    fn format_keys_round_trip() {
        for f in [DatasetFormat::Dagm, DatasetFormat::Ksdd, DatasetFormat::Ksdd2, DatasetFormat::Severstal, DatasetFormat::Synth] {
            assert_eq!(f.key().parse::<DatasetFormat>().unwrap(), f);
        }
        assert!("mvtec".parse::<DatasetFormat>().is_err());
    }
}
