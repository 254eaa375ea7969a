//! Segmentation and classification sub-networks.
//!
//! The segmentation sub-network maps an image to a 1024-channel feature
//! volume `S_f` and a one-channel logit map `S_h` at 1/8 resolution. The
//! classification sub-network consumes `[S_f, S_h]`, reduces it with three
//! pool/conv stages to `C_f`, and feeds the global average and max of `C_f`
//! and `S_h` into a single fully connected unit producing the logit `C_p`.
//!
//! With `stop_gradient_flow` set, nothing computed from the classification
//! loss is propagated into the segmentation sub-network: both the `[S_f, S_h]`
//! input and the `S_h` pooling shortcut are treated as constants.

mod layers;
mod tensor;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::real::{sigmoid, Real};
use layers::{max_pool2, max_pool2_backward, relu_backward_inplace, relu_inplace, Conv, Norm, NormCache};
pub use tensor::Tensor;

/// Total downsampling of the segmentation sub-network.
pub const SEG_STRIDE: usize = 8;
/// Input sides must be multiples of this so every pooling stage divides evenly.
pub const INPUT_MULTIPLE: usize = 64;

/// Channel widths of every convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    /// Output channels of the 2x, 3x and 4x conv blocks.
    pub seg_blocks: [usize; 3],
    /// Channels of `S_f`.
    pub seg_features: usize,
    /// Output channels of the three classification convolutions (last is `C_f`).
    pub cls: [usize; 3],
}

impl Widths {
    /// Full-size architecture.
    pub const FULL: Widths = Widths { seg_blocks: [32, 64, 64], seg_features: 1024, cls: [8, 16, 32] };
    /// Narrow segmentation trunk for CPU-scale experiments; the classification
    /// head keeps its full size.
    pub const COMPACT: Widths = Widths { seg_blocks: [8, 16, 16], seg_features: 64, cls: [8, 16, 32] };

    /// Length of `[G_a(C_f), G_m(C_f), G_a(S_h), G_m(S_h)]`.
    pub fn descriptor_len(&self) -> usize {
        2 * self.cls[2] + 2
    }

    /// Channels entering the classification sub-network.
    pub fn cls_input_channels(&self) -> usize {
        self.seg_features + 1
    }
}

impl Default for Widths {
    fn default() -> Self {
        Widths::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stop_gradient_flow: bool,
    #[serde(default)]
    pub widths: Widths,
    /// Normalize every hidden convolution output.
    #[serde(default = "default_true")]
    pub feature_norm: bool,
    /// Seed for weight initialization.
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(input_channels: usize, input_height: usize, input_width: usize) -> Self {
        ModelConfig {
            input_channels,
            input_height,
            input_width,
            stop_gradient_flow: true,
            widths: Widths::FULL,
            feature_norm: true,
            seed: 0,
        }
    }

    pub fn with_widths(mut self, widths: Widths) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_stop_gradient(mut self, stop: bool) -> Self {
        self.stop_gradient_flow = stop;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::Config(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height % INPUT_MULTIPLE != 0
            || self.input_width % INPUT_MULTIPLE != 0
        {
            return Err(Error::Config(format!(
                "input size {}x{} must be a nonzero multiple of {INPUT_MULTIPLE} (pad at load time)",
                self.input_height, self.input_width
            )));
        }
        let w = &self.widths;
        if w.seg_blocks.iter().chain(&w.cls).any(|&c| c == 0) || w.seg_features == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size of `S_h`.
    pub fn seg_output_size(&self) -> (usize, usize) {
        (self.input_height / SEG_STRIDE, self.input_width / SEG_STRIDE)
    }
}

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Segmentation,
    Classification,
}

/// A named, contiguous slice of the flat parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub group: ParamGroup,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug)]
pub struct ModelOutput<T> {
    /// `S_f`.
    pub seg_features: Tensor<T>,
    /// `S_h`, pre-activation.
    pub seg_logits: Tensor<T>,
    /// `C_p`, pre-activation.
    pub cls_logit: T,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    conv: Conv,
    norm: Option<Norm>,
}

#[derive(Clone, Copy, Debug)]
enum Stage {
    Block(Block),
    Pool,
}

struct BlockTrace<T> {
    input: Tensor<T>,
    norm: Option<NormCache<T>>,
    output: Vec<T>,
}

enum StageTrace<T> {
    Block(BlockTrace<T>),
    Pool { argmax: Vec<u32>, channels: usize, height: usize, width: usize },
}

/// Intermediate values kept by [`SegDecNet::forward_traced`] for the backward pass.
pub struct Trace<T> {
    seg: Vec<StageTrace<T>>,
    seg_features: Tensor<T>,
    cls: Vec<StageTrace<T>>,
    cls_features: Tensor<T>,
    descriptor: Vec<T>,
    cf_argmax: Vec<usize>,
    sh_argmax: usize,
    seg_logits: Tensor<T>,
}

/// The two-sub-network defect detector.
#[derive(Clone, Debug)]
pub struct SegDecNet<T> {
    config: ModelConfig,
    params: Vec<T>,
    blocks: Vec<ParamBlock>,
    seg: Vec<Stage>,
    seg_head: Conv,
    cls: Vec<Stage>,
    fc_weight: usize,
    fc_bias: usize,
    split: usize,
}

struct Builder {
    offset: usize,
    blocks: Vec<ParamBlock>,
}

impl Builder {
    fn take(&mut self, name: String, group: ParamGroup, len: usize) -> usize {
        let offset = self.offset;
        self.blocks.push(ParamBlock { name, group, offset, len });
        self.offset += len;
        offset
    }

    fn conv(&mut self, name: &str, group: ParamGroup, cin: usize, cout: usize, kernel: usize) -> Conv {
        let weight = self.take(format!("{name}.weight"), group, cout * cin * kernel * kernel);
        let bias = self.take(format!("{name}.bias"), group, cout);
        Conv { cin, cout, kernel, weight, bias }
    }

    fn block(&mut self, name: &str, group: ParamGroup, cin: usize, cout: usize, norm: bool) -> Block {
        let conv = self.conv(name, group, cin, cout, 5);
        let norm = norm.then(|| Norm {
            channels: cout,
            // the classification maps get too small for per-channel statistics
            per_channel: group == ParamGroup::Segmentation,
            scale: self.take(format!("{name}.norm.scale"), group, cout),
            shift: self.take(format!("{name}.norm.shift"), group, cout),
        });
        Block { conv, norm }
    }
}

impl<T: Real> SegDecNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let w = config.widths;
        let norm = config.feature_norm;
        let mut b = Builder { offset: 0, blocks: Vec::new() };
        let seg_group = ParamGroup::Segmentation;
        let mut seg = Vec::new();
        let mut cin = config.input_channels;
        for (stage, (&reps, &cout)) in [2usize, 3, 4].iter().zip(&w.seg_blocks).enumerate() {
            for rep in 0..reps {
                seg.push(Stage::Block(b.block(&format!("seg.{stage}.{rep}"), seg_group, cin, cout, norm)));
                cin = cout;
            }
            seg.push(Stage::Pool);
        }
        seg.push(Stage::Block(b.block("seg.features", seg_group, cin, w.seg_features, norm)));
        let seg_head = b.conv("seg.head", seg_group, w.seg_features, 1, 1);
        let split = b.offset;

        let cls_group = ParamGroup::Classification;
        let mut cls = Vec::new();
        let mut cin = w.cls_input_channels();
        for (i, &cout) in w.cls.iter().enumerate() {
            cls.push(Stage::Pool);
            cls.push(Stage::Block(b.block(&format!("cls.{i}"), cls_group, cin, cout, norm)));
            cin = cout;
        }
        let fc_weight = b.take("cls.fc.weight".into(), cls_group, w.descriptor_len());
        let fc_bias = b.take("cls.fc.bias".into(), cls_group, 1);

        let mut net = SegDecNet {
            config,
            params: vec![T::zero(); b.offset],
            blocks: b.blocks,
            seg,
            seg_head,
            cls,
            fc_weight,
            fc_bias,
            split,
        };
        net.initialize();
        Ok(net)
    }

    /// Variance-scaling initialization: He-normal for hidden convolutions,
    /// LeCun-normal for the two logit layers, unit scale and zero shift for
    /// normalization, zero biases.
    fn initialize(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut fill = |params: &mut [T], std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in params {
                *p = T::of(normal.sample(&mut rng));
            }
        };
        let convs: Vec<(Conv, bool)> = self
            .seg
            .iter()
            .chain(&self.cls)
            .filter_map(|s| match s {
                Stage::Block(b) => Some((b.conv, true)),
                Stage::Pool => None,
            })
            .chain(core::iter::once((self.seg_head, false)))
            .collect();
        for (conv, hidden) in convs {
            let fan_in = (conv.cin * conv.kernel * conv.kernel) as f64;
            let gain = if hidden { 2.0 } else { 1.0 };
            let range = conv.weight..conv.weight + conv.weight_len();
            fill(&mut self.params[range], libm::sqrt(gain / fan_in));
        }
        let n = self.config.widths.descriptor_len();
        fill(&mut self.params[self.fc_weight..self.fc_weight + n], libm::sqrt(1.0 / n as f64));
        for stage in self.seg.iter().chain(&self.cls) {
            if let Stage::Block(Block { norm: Some(norm), .. }) = stage {
                for c in 0..norm.channels {
                    self.params[norm.scale + c] = T::one();
                }
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    /// Index range of one sub-network's parameters in the flat buffer.
    pub fn group_range(&self, group: ParamGroup) -> core::ops::Range<usize> {
        match group {
            ParamGroup::Segmentation => 0..self.split,
            ParamGroup::Classification => self.split..self.params.len(),
        }
    }

    /// Replaces the parameter buffer, e.g. from a checkpoint.
    pub fn load_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "parameter count {} does not match model ({})",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Toggles the gradient stop between the sub-networks.
    pub fn set_stop_gradient_flow(&mut self, stop: bool) {
        self.config.stop_gradient_flow = stop;
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        if (x.channels, x.height, x.width) != (c.input_channels, c.input_height, c.input_width) {
            return Err(Error::Input(format!(
                "input is {}x{}x{}, model expects {}x{}x{}",
                x.channels, x.height, x.width, c.input_channels, c.input_height, c.input_width
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<ModelOutput<T>> {
        self.forward_traced(x).map(|(out, _)| out)
    }

    pub fn forward_image(&self, image: &Image) -> Result<ModelOutput<T>> {
        self.forward(&Tensor::from_image(image))
    }

    /// Probability of a defect, `sigmoid(C_p)`.
    pub fn score(&self, image: &Image) -> Result<f64> {
        Ok(sigmoid(self.forward_image(image)?.cls_logit).as_f64())
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(ModelOutput<T>, Trace<T>)> {
        self.check_input(x)?;
        let (seg_features, seg_trace) = self.run_stages(&self.seg, x.clone());
        let seg_logits = self.seg_head.forward(&self.params, &seg_features);

        let cls_input = seg_features.concat(&seg_logits);
        let (cls_features, cls_trace) = self.run_stages(&self.cls, cls_input);

        let c = cls_features.channels;
        let plane = cls_features.plane();
        let mut descriptor = vec![T::zero(); 2 * c + 2];
        let mut cf_argmax = vec![0usize; c];
        for ch in 0..c {
            let v = cls_features.channel(ch);
            let (arg, max) = argmax(v);
            descriptor[ch] = v.iter().copied().sum::<T>() / T::of(plane as f64);
            descriptor[c + ch] = max;
            cf_argmax[ch] = arg;
        }
        let sh = &seg_logits.data;
        let (sh_argmax, sh_max) = argmax(sh);
        descriptor[2 * c] = sh.iter().copied().sum::<T>() / T::of(sh.len() as f64);
        descriptor[2 * c + 1] = sh_max;

        let fc = &self.params[self.fc_weight..self.fc_weight + descriptor.len()];
        let cls_logit = fc.iter().zip(&descriptor).map(|(&w, &d)| w * d).sum::<T>() + self.params[self.fc_bias];

        let trace = Trace {
            seg: seg_trace,
            seg_features: seg_features.clone(),
            cls: cls_trace,
            cls_features,
            descriptor,
            cf_argmax,
            sh_argmax,
            seg_logits: seg_logits.clone(),
        };
        Ok((ModelOutput { seg_features, seg_logits, cls_logit }, trace))
    }

    fn run_stages(&self, stages: &[Stage], mut x: Tensor<T>) -> (Tensor<T>, Vec<StageTrace<T>>) {
        let mut trace = Vec::with_capacity(stages.len());
        for stage in stages {
            match stage {
                Stage::Pool => {
                    let (y, argmax) = max_pool2(&x);
                    trace.push(StageTrace::Pool { argmax, channels: x.channels, height: x.height, width: x.width });
                    x = y;
                }
                Stage::Block(block) => {
                    let pre = block.conv.forward(&self.params, &x);
                    let (mut y, cache) = match &block.norm {
                        Some(norm) => {
                            let (y, cache) = norm.forward(&self.params, &pre);
                            (y, Some(cache))
                        }
                        None => (pre, None),
                    };
                    relu_inplace(&mut y.data);
                    trace.push(StageTrace::Block(BlockTrace { input: x, norm: cache, output: y.data.clone() }));
                    x = y;
                }
            }
        }
        (x, trace)
    }

    /// Backpropagates `d_seg_logits = dL/dS_h` and `d_cls_logit = dL/dC_p`
    /// through the trace, accumulating into `grads` (same layout as
    /// [`SegDecNet::params`]).
    pub fn backward(&self, trace: &Trace<T>, d_seg_logits: &[T], d_cls_logit: T, grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        assert_eq!(d_seg_logits.len(), trace.seg_logits.data.len(), "seg gradient size");
        let mut d_sh = d_seg_logits.to_vec();
        let mut d_sf: Option<Vec<T>> = None;
        let propagate = !self.config.stop_gradient_flow;

        if d_cls_logit != T::zero() {
            let n = trace.descriptor.len();
            for (g, &d) in grads[self.fc_weight..self.fc_weight + n].iter_mut().zip(&trace.descriptor) {
                *g = *g + d_cls_logit * d;
            }
            grads[self.fc_bias] = grads[self.fc_bias] + d_cls_logit;
            let fc = &self.params[self.fc_weight..self.fc_weight + n];
            let d_desc: Vec<T> = fc.iter().map(|&w| w * d_cls_logit).collect();

            let cf = &trace.cls_features;
            let c = cf.channels;
            let plane = cf.plane();
            let mut d_cf = vec![T::zero(); cf.data.len()];
            for ch in 0..c {
                let avg = d_desc[ch] / T::of(plane as f64);
                for g in &mut d_cf[ch * plane..(ch + 1) * plane] {
                    *g = avg;
                }
                let i = ch * plane + trace.cf_argmax[ch];
                d_cf[i] = d_cf[i] + d_desc[c + ch];
            }
            let d_in = self.backward_stages(&self.cls, &trace.cls, d_cf, grads, propagate);
            if propagate {
                let d_in = d_in.expect("input gradient requested");
                let sf_len = trace.seg_features.data.len();
                let n_sh = d_sh.len();
                for (g, &d) in d_sh.iter_mut().zip(&d_in[sf_len..]) {
                    *g = *g + d;
                }
                let avg = d_desc[2 * c] / T::of(n_sh as f64);
                for g in d_sh.iter_mut() {
                    *g = *g + avg;
                }
                d_sh[trace.sh_argmax] = d_sh[trace.sh_argmax] + d_desc[2 * c + 1];
                d_sf = Some(d_in[..sf_len].to_vec());
            }
        }

        if d_sh.iter().all(|&g| g == T::zero()) && d_sf.is_none() {
            return;
        }
        let mut d_features = self
            .seg_head
            .backward(&self.params, grads, &trace.seg_features, &d_sh, true)
            .expect("input gradient requested")
            .data;
        if let Some(extra) = d_sf {
            for (g, e) in d_features.iter_mut().zip(extra) {
                *g = *g + e;
            }
        }
        self.backward_stages(&self.seg, &trace.seg, d_features, grads, false);
    }

    fn backward_stages(
        &self,
        stages: &[Stage],
        traces: &[StageTrace<T>],
        mut grad: Vec<T>,
        grads: &mut [T],
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        for (i, (stage, trace)) in stages.iter().zip(traces).enumerate().rev() {
            // Input gradient of stage i is only needed if something below it
            // has parameters or the caller wants it.
            let below = need_input_grad || stages[..i].iter().any(|s| matches!(s, Stage::Block(_)));
            match (stage, trace) {
                (Stage::Pool, StageTrace::Pool { argmax, channels, height, width }) => {
                    if !below {
                        return None;
                    }
                    grad = max_pool2_backward(&grad, argmax, *channels, *height, *width).data;
                }
                (Stage::Block(block), StageTrace::Block(t)) => {
                    relu_backward_inplace(&mut grad, &t.output);
                    if let (Some(norm), Some(cache)) = (&block.norm, &t.norm) {
                        grad = norm.backward(&self.params, grads, cache, &grad, t.input.plane());
                    }
                    match block.conv.backward(&self.params, grads, &t.input, &grad, below) {
                        Some(dx) => grad = dx.data,
                        None => return None,
                    }
                }
                _ => unreachable!("trace does not match stage layout"),
            }
        }
        Some(grad)
    }
}

fn argmax<T: Real>(v: &[T]) -> (usize, T) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    (best, v[best])
}
