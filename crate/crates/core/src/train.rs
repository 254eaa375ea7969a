//! SGD training with the dynamically balanced, supervision-gated loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{balanced_epoch_indices, DatasetSplit};
use crate::error::{Error, Result};
use crate::loss::{
    classification_loss, classification_loss_grad, gamma_indicator, lambda_schedule, prepare_segmentation_target,
    segmentation_loss_grad, DistanceNormalization, LossConfig, WeightMask,
};
use crate::model::{SegDecNet, Tensor, SEG_STRIDE};
use crate::raster::Mask;
use crate::real::Real;

/// The three components that can be switched off independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub dynamic_balancing: bool,
    pub stop_gradient_flow: bool,
    pub distance_transform: bool,
}

impl Toggles {
    pub const ALL: Toggles = Toggles { dynamic_balancing: true, stop_gradient_flow: true, distance_transform: true };
    pub const NONE: Toggles = Toggles { dynamic_balancing: false, stop_gradient_flow: false, distance_transform: false };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub delta: f64,
    pub w_pos: f64,
    pub p: f64,
    pub dilation_kernel: usize,
    pub dynamic_balancing: bool,
    pub stop_gradient_flow: bool,
    pub distance_transform: bool,
    pub seed: u64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            delta: self.delta,
            w_pos: self.w_pos,
            p: self.p,
            dilation_kernel: self.dilation_kernel,
            dynamic_balancing: self.dynamic_balancing,
            distance_transform: self.distance_transform,
            normalization: DistanceNormalization::PerRegion,
        }
    }

    pub fn toggles(&self) -> Toggles {
        Toggles {
            dynamic_balancing: self.dynamic_balancing,
            stop_gradient_flow: self.stop_gradient_flow,
            distance_transform: self.distance_transform,
        }
    }

    pub fn with_toggles(mut self, t: Toggles) -> Self {
        self.dynamic_balancing = t.dynamic_balancing;
        self.stop_gradient_flow = t.stop_gradient_flow;
        self.distance_transform = t.distance_transform;
        self
    }
}

/// Per-dataset settings, plus one for the synthetic benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Dagm,
    /// KolektorSDD, mixed and full supervision.
    Ksdd,
    /// KolektorSDD without pixel labels.
    KsddWeak,
    Ksdd2,
    /// Severstal Steel with the given number of positives.
    Severstal { n_all: usize },
    Synth,
}

impl Preset {
    /// Parses `dagm`, `ksdd`, `ksdd_weak`, `ksdd2`, `severstal` (defaults to
    /// `N_all = 3000`), `severstal:<n_all>` or `synth`.
    pub fn from_key(key: &str) -> Result<Preset> {
        let lower = key.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "dagm" => Preset::Dagm,
            "ksdd" => Preset::Ksdd,
            "ksdd_weak" | "ksdd-weak" => Preset::KsddWeak,
            "ksdd2" => Preset::Ksdd2,
            "severstal" => Preset::Severstal { n_all: 3000 },
            "synth" => Preset::Synth,
            other => match other.strip_prefix("severstal:") {
                Some(n) => Preset::Severstal {
                    n_all: n.parse().map_err(|_| Error::Argument(format!("bad N_all in preset {key:?}")))?,
                },
                None => return Err(Error::Argument(format!("unknown preset {key:?}"))),
            },
        })
    }
}

pub fn preset_hyperparams(preset: Preset) -> Result<Hyperparams> {
    let base = |epochs, learning_rate, batch_size, delta, w_pos, p, dilation_kernel| Hyperparams {
        epochs,
        learning_rate,
        batch_size,
        delta,
        w_pos,
        p,
        dilation_kernel,
        dynamic_balancing: true,
        stop_gradient_flow: true,
        distance_transform: true,
        seed: 0,
    };
    Ok(match preset {
        Preset::Dagm => base(70, 0.05, 1, 1.0, 10.0, 1.0, 7),
        Preset::Ksdd => base(50, 1.0, 1, 0.01, 1.0, 2.0, 7),
        Preset::KsddWeak => {
            let mut hp = base(50, 0.01, 1, 1.0, 1.0, 2.0, 7);
            hp.dynamic_balancing = false;
            hp
        }
        Preset::Ksdd2 => base(50, 0.01, 1, 1.0, 3.0, 2.0, 15),
        Preset::Severstal { n_all } => {
            let epochs = match n_all {
                300 => 90,
                750 => 80,
                1500 => 60,
                3000 => 40,
                other => {
                    return Err(Error::Argument(format!(
                        "Severstal preset defined for N_all in {{300, 750, 1500, 3000}}, got {other}"
                    )))
                }
            };
            base(epochs, 0.1, 10, 0.1, 1.0, 2.0, 1)
        }
        Preset::Synth => base(20, 0.05, 1, 1.0, 10.0, 1.0, 7),
    })
}

/// One training image converted for the network, with its segmentation
/// target at `S_h` resolution when γ = 1.
pub struct PreparedSample<T> {
    pub input: Tensor<T>,
    pub positive: bool,
    pub gamma: u8,
    pub target: Option<(Mask, WeightMask)>,
}

pub fn prepare_samples<T: Real>(split: &DatasetSplit, hp: &Hyperparams) -> Result<Vec<PreparedSample<T>>> {
    let loss = hp.loss_config();
    split
        .samples
        .iter()
        .map(|s| {
            let gamma = gamma_indicator(s.tier);
            let target = if gamma == 1 {
                Some(prepare_segmentation_target(
                    s.training_mask(),
                    s.image.height,
                    s.image.width,
                    SEG_STRIDE,
                    &loss,
                )?)
            } else {
                None
            };
            Ok(PreparedSample { input: Tensor::from_image(&s.image), positive: s.positive, gamma, target })
        })
        .collect()
}

/// Batch means returned by [`Trainer::step`]. `seg` is the mean of
/// `γ_i·L_seg,i`, so `total = λ·seg + (1−λ)·δ·cls`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub seg: f64,
    pub cls: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub seg_loss: f64,
    pub cls_loss: f64,
    pub total_loss: f64,
    pub val_ap: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Plain SGD: no momentum, no weight decay.
pub struct Trainer<T> {
    pub hp: Hyperparams,
    grads: Vec<T>,
    epoch: usize,
    step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: &mut SegDecNet<T>, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        model.set_stop_gradient_flow(hp.stop_gradient_flow);
        Ok(Trainer { grads: vec![T::zero(); model.num_params()], hp, epoch: 0, step: 0 })
    }

    /// Gradient of the last step (before the update was applied).
    pub fn last_gradient(&self) -> &[T] {
        &self.grads
    }

    /// Accumulates the batch-mean gradient of the combined loss into the
    /// gradient buffer without touching the parameters.
    pub fn compute_gradient(&mut self, model: &SegDecNet<T>, batch: &[&PreparedSample<T>], lambda: f64) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Argument(format!("lambda {lambda} outside [0, 1]")));
        }
        self.grads.iter_mut().for_each(|g| *g = T::zero());
        let b = batch.len() as f64;
        let delta = self.hp.delta;
        let (mut seg_sum, mut cls_sum) = (0.0, 0.0);
        for sample in batch {
            let (out, trace) = model.forward_traced(&sample.input)?;
            let l_cls = classification_loss(out.cls_logit, sample.positive).as_f64();
            let d_cls = classification_loss_grad(out.cls_logit, sample.positive);
            let d_cp = T::of((1.0 - lambda) * delta / b) * d_cls;
            let mut d_sh = vec![T::zero(); out.seg_logits.data.len()];
            if let (1, Some((target, weights))) = (sample.gamma, &sample.target) {
                let (l_seg, g) = segmentation_loss_grad(&out.seg_logits, target, weights)?;
                seg_sum += l_seg.as_f64();
                let scale = T::of(lambda / b);
                for (d, g) in d_sh.iter_mut().zip(g) {
                    *d = scale * g;
                }
            }
            cls_sum += l_cls;
            model.backward(&trace, &d_sh, d_cp, &mut self.grads);
        }
        let seg = seg_sum / b;
        let cls = cls_sum / b;
        let total = lambda * seg + (1.0 - lambda) * delta * cls;
        if !total.is_finite() {
            return Err(Error::Divergence { epoch: self.epoch, step: self.step, what: "loss" });
        }
        if self.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch: self.epoch, step: self.step, what: "gradient" });
        }
        Ok(StepLosses { seg, cls, total })
    }

    /// One SGD update on `batch` at balancing factor `lambda`.
    pub fn step(&mut self, model: &mut SegDecNet<T>, batch: &[&PreparedSample<T>], lambda: f64) -> Result<StepLosses> {
        let losses = self.compute_gradient(model, batch, lambda)?;
        let lr = T::of(self.hp.learning_rate);
        for (p, &g) in model.params_mut().iter_mut().zip(&self.grads) {
            *p = *p - lr * g;
        }
        self.step += 1;
        Ok(losses)
    }

    /// Runs one epoch over the balanced index list.
    pub fn run_epoch(&mut self, model: &mut SegDecNet<T>, split: &DatasetSplit, samples: &[PreparedSample<T>], epoch: usize) -> Result<EpochRecord> {
        self.epoch = epoch;
        self.step = 0;
        let lambda = lambda_schedule(epoch, self.hp.epochs, self.hp.dynamic_balancing)?;
        let order = balanced_epoch_indices(split, epoch, self.hp.seed)?;
        let (mut seg, mut cls, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.hp.batch_size) {
            let batch: Vec<&PreparedSample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let l = self.step(model, &batch, lambda)?;
            let n = chunk.len() as f64;
            seg += l.seg * n;
            cls += l.cls * n;
            total += l.total * n;
        }
        let n = order.len() as f64;
        Ok(EpochRecord { epoch, lambda, seg_loss: seg / n, cls_loss: cls / n, total_loss: total / n, val_ap: None })
    }
}

/// Trains for `hp.epochs` epochs. `on_epoch` runs after every epoch and may
/// return a validation AP to store in the record.
pub fn train_with<T: Real>(
    model: &mut SegDecNet<T>,
    split: &DatasetSplit,
    hp: &Hyperparams,
    mut on_epoch: impl FnMut(&EpochRecord, &SegDecNet<T>) -> Result<Option<f64>>,
) -> Result<TrainHistory> {
    if split.is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let c = model.config();
    if let Some(s) = split
        .samples
        .iter()
        .find(|s| (s.image.channels, s.image.height, s.image.width) != (c.input_channels, c.input_height, c.input_width))
    {
        return Err(Error::Input(format!(
            "sample {} is {}x{}x{}, model expects {}x{}x{}",
            s.id, s.image.channels, s.image.height, s.image.width, c.input_channels, c.input_height, c.input_width
        )));
    }
    let mut trainer = Trainer::new(model, hp.clone())?;
    let samples = prepare_samples::<T>(split, hp)?;
    let mut history = TrainHistory::default();
    for epoch in 0..hp.epochs {
        let mut record = trainer.run_epoch(model, split, &samples, epoch)?;
        record.val_ap = on_epoch(&record, model)?;
        history.epochs.push(record);
    }
    Ok(history)
}

pub fn train<T: Real>(model: &mut SegDecNet<T>, split: &DatasetSplit, hp: &Hyperparams) -> Result<TrainHistory> {
    train_with(model, split, hp, |_, _| Ok(None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let d = preset_hyperparams(Preset::Dagm).unwrap();
        assert_eq!((d.epochs, d.learning_rate, d.batch_size, d.delta, d.w_pos, d.p, d.dilation_kernel), (70, 0.05, 1, 1.0, 10.0, 1.0, 7));
        let k = preset_hyperparams(Preset::Ksdd).unwrap();
        assert_eq!((k.epochs, k.learning_rate, k.batch_size, k.delta, k.w_pos, k.p, k.dilation_kernel), (50, 1.0, 1, 0.01, 1.0, 2.0, 7));
        let kw = preset_hyperparams(Preset::KsddWeak).unwrap();
        assert_eq!((kw.learning_rate, kw.delta, kw.dynamic_balancing), (0.01, 1.0, false));
        let k2 = preset_hyperparams(Preset::Ksdd2).unwrap();
        assert_eq!((k2.epochs, k2.learning_rate, k2.batch_size, k2.delta, k2.w_pos, k2.p, k2.dilation_kernel), (50, 0.01, 1, 1.0, 3.0, 2.0, 15));
        for (n_all, ep) in [(300, 90), (750, 80), (1500, 60), (3000, 40)] {
            let s = preset_hyperparams(Preset::Severstal { n_all }).unwrap();
            assert_eq!((s.epochs, s.learning_rate, s.batch_size, s.delta, s.w_pos, s.p), (ep, 0.1, 10, 0.1, 1.0, 2.0));
        }
        assert!(preset_hyperparams(Preset::Severstal { n_all: 10 }).is_err());
        let sy = preset_hyperparams(Preset::Synth).unwrap();
        assert_eq!((sy.epochs, sy.delta, sy.w_pos, sy.dilation_kernel), (20, 1.0, 10.0, 7));
    }

    #[test]
    fn preset_keys() {
        assert_eq!(Preset::from_key("DAGM").unwrap(), Preset::Dagm);
        assert_eq!(Preset::from_key("severstal:750").unwrap(), Preset::Severstal { n_all: 750 });
        assert!(Preset::from_key("mvtec").is_err());
    }
}
