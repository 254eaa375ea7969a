//! On-disk layout of the synthetic benchmark:
//!
//! ```text
//! root/manifest.json
//! root/images/<id>.png
//! root/masks/<id>.png      (positives only)
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use segdec_core::synth::{generate_items, DefectSpec, Subset, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::imageio::{write_gray, write_mask};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub items: Vec<ManifestItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub subset: Subset,
    pub positive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<DefectSpec>,
    /// Number of defective pixels in the mask.
    #[serde(default)]
    pub mask_pixels: usize,
}

impl SynthManifest {
    pub fn count(&self, subset: Subset, positive: bool) -> usize {
        self.items.iter().filter(|i| i.subset == subset && i.positive == positive).count()
    }
}

/// Generates the benchmark described by `config` into `out`.
pub fn generate_benchmark(config: &SynthConfig, out: &Path) -> Result<SynthManifest> {
    let items = generate_items(config)?;
    let images = out.join("images");
    let masks = out.join("masks");
    for dir in [&images, &masks] {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut entries = Vec::with_capacity(items.len());
    for item in &items {
        write_gray(&images.join(format!("{}.png", item.id)), &item.image)?;
        let mut mask_pixels = 0;
        if let Some(mask) = &item.mask {
            if !mask.any() {
                bail!("generator produced an empty mask for {}", item.id);
            }
            mask_pixels = mask.count();
            write_mask(&masks.join(format!("{}.png", item.id)), mask)?;
        }
        entries.push(ManifestItem {
            id: item.id.clone(),
            subset: item.subset,
            positive: item.mask.is_some(),
            defect: item.defect.clone(),
            mask_pixels,
        });
    }
    let manifest = SynthManifest { config: config.clone(), items: entries };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<SynthManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))
}
