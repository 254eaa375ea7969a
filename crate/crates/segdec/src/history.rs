//! Training history as CSV: `epoch,lambda,seg_loss,cls_loss,total_loss,val_ap`.

use std::path::Path;

use anyhow::{Context, Result};
use segdec_core::train::{EpochRecord, TrainHistory};

pub fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for record in &history.epochs {
        w.serialize(record)?;
    }
    // header even when there are no records
    if history.epochs.is_empty() {
        w.write_record(["epoch", "lambda", "seg_loss", "cls_loss", "total_loss", "val_ap"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<TrainHistory> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let epochs = r
        .deserialize::<EpochRecord>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("malformed history {}", path.display()))?;
    Ok(TrainHistory { epochs })
}
