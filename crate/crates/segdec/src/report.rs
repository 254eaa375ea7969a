//! Evaluation reports on disk.
//!
//! A report directory holds `scores.csv` (one row per image), `summary.json`,
//! the raw curve points in `pr_curve.csv` and `roc_curve.csv`, and plots of
//! both curves as PNG.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use segdec_core::metrics::{pr_curve, roc_curve, EvalReport, ScoredImage, ThresholdMetrics};
use serde::{Deserialize, Serialize};

use crate::plot::save_curve;

pub const SCORES_FILE: &str = "scores.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    score: f64,
    label: u8,
    predicted: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub images: usize,
    pub positives: usize,
    pub ap: f64,
    pub auc: f64,
    pub at_threshold: ThresholdMetrics,
    pub best_f1: ThresholdMetrics,
}

impl Summary {
    pub fn of(report: &EvalReport) -> Self {
        Summary {
            images: report.images.len(),
            positives: report.images.iter().filter(|i| i.positive).count(),
            ap: report.ap,
            auc: report.auc,
            at_threshold: report.at_threshold,
            best_f1: report.best_f1,
        }
    }
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let threshold = report.at_threshold.threshold;
    let path = dir.join(SCORES_FILE);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    for img in &report.images {
        w.serialize(ScoreRow {
            id: img.id.clone(),
            score: img.score,
            label: u8::from(img.positive),
            predicted: u8::from(img.score >= threshold),
        })?;
    }
    w.flush()?;

    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, serde_json::to_string_pretty(&Summary::of(report))? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;

    let (scores, labels) = (report.scores(), report.labels());
    let pr = pr_curve(&scores, &labels)?;
    write_points(&dir.join("pr_curve.csv"), ["recall", "precision", "threshold"], &pr)?;
    // start the plotted PR curve at recall 0 with the first precision
    let mut pr_xy: Vec<(f64, f64)> = pr.iter().map(|&(r, p, _)| (r, p)).collect();
    if let Some(&(_, p)) = pr_xy.first() {
        pr_xy.insert(0, (0.0, p));
    }
    save_curve(&dir.join("pr_curve.png"), &pr_xy, false)?;

    let roc = roc_curve(&scores, &labels)?;
    write_points(&dir.join("roc_curve.csv"), ["fpr", "tpr", "threshold"], &roc)?;
    let roc_xy: Vec<(f64, f64)> = roc.iter().map(|&(f, t, _)| (f, t)).collect();
    save_curve(&dir.join("roc_curve.png"), &roc_xy, true)?;
    Ok(())
}

fn write_points(path: &Path, header: [&str; 3], points: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for &(a, b, t) in points {
        w.write_record([a.to_string(), b.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the per-image scores of a report.
pub fn read_scores(path: &Path) -> Result<Vec<ScoredImage>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize::<ScoreRow>()
        .map(|row| {
            let row = row.with_context(|| format!("malformed scores file {}", path.display()))?;
            Ok(ScoredImage { id: row.id, score: row.score, positive: row.label != 0 })
        })
        .collect()
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
