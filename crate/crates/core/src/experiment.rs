//! Cross-validation and component ablation drivers.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{assign_supervision, DatasetSplit};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_split, EvalReport, ThresholdPolicy};
use crate::model::{ModelConfig, SegDecNet};
use crate::real::Real;
use crate::train::{train, Hyperparams, Toggles};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<EvalReport>,
    pub mean_ap: f64,
}

/// Trains a fresh model per fold and evaluates it on that fold's test part.
pub fn crossval<T: Real>(
    build_model: impl Fn(usize) -> Result<SegDecNet<T>>,
    folds: &[(DatasetSplit, DatasetSplit)],
    hp: &Hyperparams,
    policy: ThresholdPolicy,
) -> Result<CrossValReport> {
    if folds.len() < 2 {
        return Err(Error::Argument("cross-validation needs at least 2 folds".into()));
    }
    let mut reports = Vec::with_capacity(folds.len());
    for (k, (train_split, test_split)) in folds.iter().enumerate() {
        let mut model = build_model(k)?;
        train(&mut model, train_split, hp)?;
        reports.push(evaluate_split(&model, test_split, policy)?);
    }
    let mean_ap = reports.iter().map(|r| r.ap).sum::<f64>() / reports.len() as f64;
    Ok(CrossValReport { folds: reports, mean_ap })
}

/// Amount of pixel-level supervision for an ablation row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SupervisionMode {
    /// All positives pixel-labeled.
    Full,
    /// About a quarter of the positives pixel-labeled.
    Mixed,
    /// Image-level labels only.
    Weak,
}

impl SupervisionMode {
    pub const ALL: [SupervisionMode; 3] = [SupervisionMode::Full, SupervisionMode::Mixed, SupervisionMode::Weak];

    pub fn label(self) -> &'static str {
        match self {
            SupervisionMode::Full => "FS",
            SupervisionMode::Mixed => "MS",
            SupervisionMode::Weak => "WS",
        }
    }

    /// Number of pixel-labeled positives out of `n_all`.
    pub fn labeled_count(self, n_all: usize) -> usize {
        match self {
            SupervisionMode::Full => n_all,
            SupervisionMode::Mixed => (libm::round(n_all as f64 * 0.25) as usize).clamp(usize::from(n_all > 0), n_all),
            SupervisionMode::Weak => 0,
        }
    }
}

/// The six component combinations evaluated for full and mixed supervision.
pub const DEFAULT_GRID: [Toggles; 6] = [
    Toggles { dynamic_balancing: false, stop_gradient_flow: false, distance_transform: false },
    Toggles { dynamic_balancing: true, stop_gradient_flow: false, distance_transform: false },
    Toggles { dynamic_balancing: true, stop_gradient_flow: true, distance_transform: false },
    Toggles { dynamic_balancing: true, stop_gradient_flow: false, distance_transform: true },
    Toggles { dynamic_balancing: false, stop_gradient_flow: true, distance_transform: true },
    Toggles { dynamic_balancing: true, stop_gradient_flow: true, distance_transform: true },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: SupervisionMode,
    pub n_labeled: usize,
    pub dynamic_balancing: bool,
    pub stop_gradient_flow: bool,
    /// `None` for weak supervision, where there are no positive masks to weight.
    pub distance_transform: Option<bool>,
    pub ap: f64,
    pub fp: usize,
    pub fn_: usize,
}

/// The grid rows actually run for `mode`: weak supervision drops the
/// distance-transform toggle and deduplicates.
pub fn grid_for_mode(mode: SupervisionMode, grid: &[Toggles]) -> Vec<Toggles> {
    let mut out: Vec<Toggles> = Vec::new();
    for &t in grid {
        let t = if mode == SupervisionMode::Weak { Toggles { distance_transform: false, ..t } } else { t };
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// One train + evaluate run per (mode, toggle triple).
#[allow(clippy::too_many_arguments)]
pub fn run_ablation<T: Real>(
    model_config: &ModelConfig,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    base_hp: &Hyperparams,
    grid: &[Toggles],
    modes: &[SupervisionMode],
    policy: ThresholdPolicy,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &mode in modes {
        let n = mode.labeled_count(train_split.n_all);
        let split = assign_supervision(train_split, n, base_hp.seed)?;
        for toggles in grid_for_mode(mode, grid) {
            let hp = base_hp.clone().with_toggles(toggles);
            let config = ModelConfig { stop_gradient_flow: toggles.stop_gradient_flow, ..model_config.clone() };
            let mut model = SegDecNet::<T>::new(config)?;
            train(&mut model, &split, &hp)?;
            let report = evaluate_split(&model, test_split, policy)?;
            let row = AblationRow {
                mode,
                n_labeled: n,
                dynamic_balancing: toggles.dynamic_balancing,
                stop_gradient_flow: toggles.stop_gradient_flow,
                distance_transform: (mode != SupervisionMode::Weak).then_some(toggles.distance_transform),
                ap: report.ap,
                fp: report.at_threshold.fp,
                fn_: report.at_threshold.fn_,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_grid_drops_distance_transform() {
        let ws = grid_for_mode(SupervisionMode::Weak, &DEFAULT_GRID);
        assert!(ws.iter().all(|t| !t.distance_transform));
        assert_eq!(ws.len(), 4);
        assert_eq!(grid_for_mode(SupervisionMode::Full, &DEFAULT_GRID).len(), 6);
    }

    #[test]
    fn mixed_is_about_a_quarter() {
        assert_eq!(SupervisionMode::Mixed.labeled_count(40), 10);
        assert_eq!(SupervisionMode::Mixed.labeled_count(33), 8);
        assert_eq!(SupervisionMode::Mixed.labeled_count(1), 1);
        assert_eq!(SupervisionMode::Weak.labeled_count(40), 0);
    }
}
