//! Composite building blocks: uneven grouped pointwise convolutions with
//! channel shuffle or channel share, squeeze-and-excitation gating, the
//! Seesaw bottleneck block, the plain inverted-residual baseline block, and
//! the pooled 1x1 skip branch used by the V2 depth/width variant.

use crate::error::{Error, Result};
use crate::layer::{
    visit_child, visit_child_mut, visit_child_trainable, Activation, BatchNorm, Conv2d,
    DepthwiseConv, Layer, Linear, MaxPool2, ParamKind,
};
use crate::ops::{ActivationKind, ConvParams, Mode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Which bottleneck family a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVariant {
    /// Uneven grouped pointwise convs; one channel shuffle after expansion.
    SeesawShuffle,
    /// Uneven grouped pointwise convs with overlapping input ranges; no data
    /// movement anywhere.
    SeesawShare,
    /// Full (ungrouped) pointwise convs; the MobileFaceNet baseline block.
    InvertedResidual,
}

impl BlockVariant {
    pub fn name(self) -> &'static str {
        match self {
            BlockVariant::SeesawShuffle => "seesaw_shuffle",
            BlockVariant::SeesawShare => "seesaw_share",
            BlockVariant::InvertedResidual => "inverted_residual",
        }
    }

    pub fn parse(s: &str) -> Option<BlockVariant> {
        match s {
            "seesaw_shuffle" | "shuffle" => Some(BlockVariant::SeesawShuffle),
            "seesaw_share" | "share" => Some(BlockVariant::SeesawShare),
            "inverted_residual" => Some(BlockVariant::InvertedResidual),
            _ => None,
        }
    }
}

/// Parameters of one bottleneck block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Middle width of the bottleneck (the expansion pointwise output).
    pub expansion_channels: usize,
    pub stride: usize,
    pub variant: BlockVariant,
    /// Fraction of channels in the first (smaller) uneven group.
    pub split_ratio: f64,
    pub use_se: bool,
    pub se_reduction: usize,
    pub activation: ActivationKind,
    pub residual: bool,
    /// Pooled 1x1-conv skip branch on stride-2 blocks (DW V2 only).
    pub downsample_skip: bool,
}

pub const DEFAULT_SPLIT_RATIO: f64 = 0.25;
pub const DEFAULT_SE_REDUCTION: usize = 4;

impl BlockConfig {
    pub fn seesaw(
        variant: BlockVariant,
        in_channels: usize,
        expansion_channels: usize,
        out_channels: usize,
        stride: usize,
        residual: bool,
    ) -> BlockConfig {
        BlockConfig {
            in_channels,
            out_channels,
            expansion_channels,
            stride,
            variant,
            split_ratio: DEFAULT_SPLIT_RATIO,
            use_se: true,
            se_reduction: DEFAULT_SE_REDUCTION,
            activation: ActivationKind::Swish,
            residual,
            downsample_skip: false,
        }
    }

    pub fn inverted_residual(
        in_channels: usize,
        expansion_channels: usize,
        out_channels: usize,
        stride: usize,
        residual: bool,
    ) -> BlockConfig {
        BlockConfig {
            in_channels,
            out_channels,
            expansion_channels,
            stride,
            variant: BlockVariant::InvertedResidual,
            split_ratio: DEFAULT_SPLIT_RATIO,
            use_se: false,
            se_reduction: DEFAULT_SE_REDUCTION,
            activation: ActivationKind::PRelu,
            residual,
            downsample_skip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.expansion_channels == 0 {
            return Err(Error::Config("block channel counts must be positive".into()));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!("block stride must be 1 or 2, got {}", self.stride)));
        }
        if self.residual && (self.stride != 1 || self.in_channels != self.out_channels) {
            return Err(Error::Config(format!(
                "residual block requires stride 1 and in == out, got stride {} and {} -> {}",
                self.stride, self.in_channels, self.out_channels
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config(format!(
                "split_ratio must lie in (0, 1), got {}",
                self.split_ratio
            )));
        }
        if self.se_reduction == 0 {
            return Err(Error::Config("se_reduction must be positive".into()));
        }
        if self.downsample_skip && (self.stride != 2 || self.residual) {
            return Err(Error::Config(
                "downsample skip branch applies only to non-residual stride-2 blocks".into(),
            ));
        }
        Ok(())
    }
}

/// Channel ranges of one group of an uneven pointwise convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupRanges {
    /// Input channels `[start, end)` read by this group.
    pub input: (usize, usize),
    /// Output channels `[start, end)` written by this group.
    pub output: (usize, usize),
}

impl GroupRanges {
    pub fn in_width(&self) -> usize {
        self.input.1 - self.input.0
    }

    pub fn out_width(&self) -> usize {
        self.output.1 - self.output.0
    }
}

/// Ceiling of `ratio * channels` with float fuzz removed.
fn ceil_ratio(channels: usize, ratio: f64) -> usize {
    (ratio * channels as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Uneven two-way split: `(ceil(ratio * c), rest)`, both parts >= 1.
pub fn uneven_split(channels: usize, ratio: f64) -> (usize, usize) {
    debug_assert!(channels >= 2, "a two-way split needs at least 2 channels");
    let first = ceil_ratio(channels, ratio).clamp(1, channels.saturating_sub(1).max(1));
    (first, channels - first)
}

/// Two disjoint uneven groups covering input and output exactly
/// (the shuffle-variant grouping). Degenerates to one full group when a
/// side is too narrow to split.
pub fn partition_groups(c_in: usize, c_out: usize, ratio: f64) -> Vec<GroupRanges> {
    if c_in < 2 || c_out < 2 {
        return vec![GroupRanges {
            input: (0, c_in),
            output: (0, c_out),
        }];
    }
    let (a1, _) = uneven_split(c_in, ratio);
    let (b1, _) = uneven_split(c_out, ratio);
    vec![
        GroupRanges {
            input: (0, a1),
            output: (0, b1),
        },
        GroupRanges {
            input: (a1, c_in),
            output: (b1, c_out),
        },
    ]
}

/// Overlapping cover: group A reads `[0, sA)`, group B reads
/// `[sA - ovl, c_in)` where `ovl = ceil(ratio * sA)`. The shared channels
/// carry information across groups with zero data movement. Output ranges
/// still partition `[0, c_out)`.
pub fn channel_share_cover(c_in: usize, c_out: usize, ratio: f64) -> Vec<GroupRanges> {
    let s_a = ceil_ratio(c_in, ratio);
    if c_in < 2 || c_out < 2 || s_a == 0 || s_a >= c_in {
        return vec![GroupRanges {
            input: (0, c_in),
            output: (0, c_out),
        }];
    }
    let ovl = ceil_ratio(s_a, ratio).min(s_a);
    let (b1, _) = uneven_split(c_out, ratio);
    vec![
        GroupRanges {
            input: (0, s_a),
            output: (0, b1),
        },
        GroupRanges {
            input: (s_a - ovl, c_in),
            output: (b1, c_out),
        },
    ]
}

/// Interleaving channel permutation: index `k*(c/g) + j` moves to `j*g + k`.
/// Pure data movement; values are untouched.
pub fn channel_shuffle<T: Scalar>(input: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if groups == 0 || s.c % groups != 0 {
        return Err(Error::Config(format!(
            "channel_shuffle: groups {} must divide channels {}",
            groups, s.c
        )));
    }
    let per = s.c / groups;
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        let src = input.batch_item(n);
        let dst = out.batch_item_mut(n);
        for k in 0..groups {
            for j in 0..per {
                let from = k * per + j;
                let to = j * groups + k;
                dst[to * s.spatial()..(to + 1) * s.spatial()]
                    .copy_from_slice(&src[from * s.spatial()..(from + 1) * s.spatial()]);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// ChannelShuffle layer

pub struct ChannelShuffle<T> {
    pub groups: usize,
    cached_shape: Option<Shape>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> ChannelShuffle<T> {
    pub fn new(groups: usize) -> ChannelShuffle<T> {
        ChannelShuffle {
            groups,
            cached_shape: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Layer<T> for ChannelShuffle<T> {
    fn kind(&self) -> &'static str {
        "channel_shuffle"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = channel_shuffle(input, self.groups)?;
        self.cached_shape = (mode == Mode::Train).then(|| input.shape());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let s = self
            .cached_shape
            .take()
            .ok_or_else(|| Error::Training("channel_shuffle: backward without forward".into()))?;
        if grad_out.shape() != s {
            return Err(Error::shape(
                "channel_shuffle_backward",
                format!("grad shape {} != input {}", grad_out.shape(), s),
            ));
        }
        // The inverse of shuffle(g) is shuffle(c/g).
        channel_shuffle(grad_out, s.c / self.groups)
    }

    fn visit(&self, _f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {}
    fn visit_mut(&mut self, _f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {}
    fn visit_trainable(&mut self, _f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {}
}

// ---------------------------------------------------------------------------
// UnevenPointwise: grouped 1x1 convolution over explicit channel ranges

pub struct ChannelRangeGroup<T> {
    pub ranges: GroupRanges,
    /// 1x1 weights for this group, `(out_width, in_width, 1, 1)`.
    pub weight: Tensor<T>,
    grad_weight: Tensor<T>,
}

pub struct UnevenPointwise<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: Vec<ChannelRangeGroup<T>>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> UnevenPointwise<T> {
    pub fn new(in_channels: usize, out_channels: usize, ranges: Vec<GroupRanges>, rng: &mut Rng) -> Result<UnevenPointwise<T>> {
        // Output ranges must partition [0, out_channels); input ranges must
        // cover [0, in_channels) (overlap allowed for the share variant).
        let mut covered_out = 0usize;
        let mut covered_in = vec![false; in_channels];
        for r in &ranges {
            if r.input.0 >= r.input.1 || r.input.1 > in_channels {
                return Err(Error::Config(format!("group input range {:?} out of bounds", r.input)));
            }
            if r.output.0 != covered_out || r.output.1 > out_channels {
                return Err(Error::Config(format!(
                    "group output ranges must partition the outputs in order; got {:?} at offset {}",
                    r.output, covered_out
                )));
            }
            covered_out = r.output.1;
            covered_in[r.input.0..r.input.1].iter_mut().for_each(|v| *v = true);
        }
        if covered_out != out_channels {
            return Err(Error::Config(format!(
                "group output ranges cover {covered_out} of {out_channels} channels"
            )));
        }
        if !covered_in.iter().all(|v| *v) {
            return Err(Error::Config("group input ranges leave input channels unread".into()));
        }
        let groups = ranges
            .into_iter()
            .map(|ranges| {
                let ws = Shape {
                    n: ranges.out_width(),
                    c: ranges.in_width(),
                    h: 1,
                    w: 1,
                };
                ChannelRangeGroup {
                    ranges,
                    weight: Tensor::randn(ws, (2.0 / ranges.in_width() as f64).sqrt(), rng),
                    grad_weight: Tensor::zeros(ws),
                }
            })
            .collect();
        Ok(UnevenPointwise {
            in_channels,
            out_channels,
            groups,
            cache: None,
        })
    }
}

impl<T: Scalar> Layer<T> for UnevenPointwise<T> {
    fn kind(&self) -> &'static str {
        "uneven_pointwise"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = input.shape();
        if s.c != self.in_channels {
            return Err(Error::shape(
                "uneven_pointwise",
                format!("input channels {} != configured {}", s.c, self.in_channels),
            ));
        }
        let hw = s.spatial();
        let out_shape = Shape::new(s.n, self.out_channels, s.h, s.w)?;
        let mut out = Tensor::zeros(out_shape);
        for n in 0..s.n {
            let src = input.batch_item(n);
            let dst = out.batch_item_mut(n);
            for g in &self.groups {
                let (i0, i1) = g.ranges.input;
                let (o0, o1) = g.ranges.output;
                crate::ops::matmul_acc(
                    g.weight.data(),
                    &src[i0 * hw..i1 * hw],
                    &mut dst[o0 * hw..o1 * hw],
                    o1 - o0,
                    i1 - i0,
                    hw,
                );
            }
        }
        self.cache = match mode {
            Mode::Train => Some(input.clone()),
            Mode::Infer => None,
        };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::Training("uneven_pointwise: backward without forward".into()))?;
        let s = input.shape();
        let hw = s.spatial();
        if grad_out.shape().c != self.out_channels || grad_out.shape().n != s.n {
            return Err(Error::shape(
                "uneven_pointwise_backward",
                format!("grad shape {} inconsistent with input {}", grad_out.shape(), s),
            ));
        }
        let mut d_input = Tensor::zeros(s);
        for n in 0..s.n {
            let src = input.batch_item(n);
            let dy = grad_out.batch_item(n);
            let dx = d_input.batch_item_mut(n);
            for g in &mut self.groups {
                let (i0, i1) = g.ranges.input;
                let (o0, o1) = g.ranges.output;
                // dW += dY * X^T
                crate::ops::matmul_acc_bt(
                    &dy[o0 * hw..o1 * hw],
                    &src[i0 * hw..i1 * hw],
                    g.grad_weight.data_mut(),
                    o1 - o0,
                    hw,
                    i1 - i0,
                );
                // dX += W^T * dY (accumulates across overlapping groups)
                crate::ops::matmul_acc_at(
                    g.weight.data(),
                    &dy[o0 * hw..o1 * hw],
                    &mut dx[i0 * hw..i1 * hw],
                    o1 - o0,
                    i1 - i0,
                    hw,
                );
            }
        }
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        for (i, g) in self.groups.iter().enumerate() {
            f(ParamKind::Trainable, &format!("g{i}.weight"), g.weight.shape(), g.weight.data());
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        for (i, g) in self.groups.iter_mut().enumerate() {
            f(ParamKind::Trainable, &format!("g{i}.weight"), g.weight.shape(), g.weight.data_mut());
        }
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        for (i, g) in self.groups.iter_mut().enumerate() {
            f(&format!("g{i}.weight"), g.weight.data_mut(), g.grad_weight.data_mut());
        }
    }
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation

struct SeCache<T> {
    input: Tensor<T>,
    pre_act: Tensor<T>,
    gate: Tensor<T>,
}

pub struct SeModule<T> {
    pub channels: usize,
    pub reduced: usize,
    fc1: Linear<T>,
    fc2: Linear<T>,
    cache: Option<SeCache<T>>,
}

impl<T: Scalar> SeModule<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut Rng) -> SeModule<T> {
        let reduced = (channels / reduction).max(1);
        SeModule {
            channels,
            reduced,
            fc1: Linear::new(channels, reduced, true, rng),
            fc2: Linear::new(reduced, channels, true, rng),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for SeModule<T> {
    fn kind(&self) -> &'static str {
        "se"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = input.shape();
        if s.c != self.channels {
            return Err(Error::shape(
                "se",
                format!("input channels {} != configured {}", s.c, self.channels),
            ));
        }
        let hw = s.spatial();
        let inv_hw = T::from_f64(1.0 / hw as f64);
        let mut pooled = Tensor::zeros(Shape::new(s.n, s.c, 1, 1)?);
        for n in 0..s.n {
            let src = input.batch_item(n);
            let dst = pooled.batch_item_mut(n);
            for c in 0..s.c {
                let mut acc = T::ZERO;
                for v in &src[c * hw..(c + 1) * hw] {
                    acc += *v;
                }
                dst[c] = acc * inv_hw;
            }
        }
        let pre_act = self.fc1.forward(&pooled, mode)?;
        let hidden = pre_act.map(crate::ops::swish);
        let logits = self.fc2.forward(&hidden, mode)?;
        let gate = logits.map(crate::ops::sigmoid);

        let mut out = Tensor::zeros(s);
        for n in 0..s.n {
            let src = input.batch_item(n);
            let gates = gate.batch_item(n);
            let dst = out.batch_item_mut(n);
            for c in 0..s.c {
                let g = gates[c];
                for (d, x) in dst[c * hw..(c + 1) * hw].iter_mut().zip(&src[c * hw..(c + 1) * hw]) {
                    *d = *x * g;
                }
            }
        }
        self.cache = match mode {
            Mode::Train => Some(SeCache {
                input: input.clone(),
                pre_act,
                gate,
            }),
            Mode::Infer => None,
        };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let SeCache { input, pre_act, gate } =
            self.cache.take().ok_or_else(|| Error::Training("se: backward without forward".into()))?;
        let s = input.shape();
        if grad_out.shape() != s {
            return Err(Error::shape(
                "se_backward",
                format!("grad shape {} != input {}", grad_out.shape(), s),
            ));
        }
        let hw = s.spatial();
        let inv_hw = T::from_f64(1.0 / hw as f64);

        // dy splits into the direct scale path and the gate path.
        let mut d_input = Tensor::zeros(s);
        let mut d_logits = Tensor::zeros(gate.shape());
        for n in 0..s.n {
            let src = input.batch_item(n);
            let dy = grad_out.batch_item(n);
            let gates = gate.batch_item(n);
            let dx = d_input.batch_item_mut(n);
            let dz = d_logits.batch_item_mut(n);
            for c in 0..s.c {
                let g = gates[c];
                let mut d_gate = T::ZERO;
                for ((dxv, xv), dyv) in dx[c * hw..(c + 1) * hw]
                    .iter_mut()
                    .zip(&src[c * hw..(c + 1) * hw])
                    .zip(&dy[c * hw..(c + 1) * hw])
                {
                    *dxv = *dyv * g;
                    d_gate += *dyv * *xv;
                }
                dz[c] = d_gate * g * (T::ONE - g);
            }
        }
        let d_hidden = self.fc2.backward(&d_logits)?;
        let mut d_pre = Tensor::zeros(pre_act.shape());
        for (dp, (dh, a)) in d_pre
            .data_mut()
            .iter_mut()
            .zip(d_hidden.data().iter().zip(pre_act.data().iter()))
        {
            *dp = *dh * crate::ops::activation_grad(*a, ActivationKind::Swish, T::ZERO);
        }
        let d_pooled = self.fc1.backward(&d_pre)?;
        for n in 0..s.n {
            let dp = d_pooled.batch_item(n);
            let dx = d_input.batch_item_mut(n);
            for c in 0..s.c {
                let v = dp[c] * inv_hw;
                for d in dx[c * hw..(c + 1) * hw].iter_mut() {
                    *d += v;
                }
            }
        }
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        visit_child(&self.fc1, "fc1", f);
        visit_child(&self.fc2, "fc2", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        visit_child_mut(&mut self.fc1, "fc1", f);
        visit_child_mut(&mut self.fc2, "fc2", f);
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        visit_child_trainable(&mut self.fc1, "fc1", f);
        visit_child_trainable(&mut self.fc2, "fc2", f);
    }
}

// ---------------------------------------------------------------------------
// Downsample skip branch: 2x2 max pool then 1x1 conv (+ BN)

pub struct SkipBranch<T> {
    pool: MaxPool2<T>,
    conv: Conv2d<T>,
    bn: BatchNorm<T>,
}

impl<T: Scalar> SkipBranch<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut Rng) -> Result<SkipBranch<T>> {
        Ok(SkipBranch {
            pool: MaxPool2::new(),
            conv: Conv2d::new(ConvParams::new(in_channels, out_channels, 1, 1, 0), rng)?,
            bn: BatchNorm::new(out_channels),
        })
    }
}

impl<T: Scalar> Layer<T> for SkipBranch<T> {
    fn kind(&self) -> &'static str {
        "skip_branch"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let pooled = self.pool.forward(input, mode)?;
        let conv = self.conv.forward(&pooled, mode)?;
        self.bn.forward(&conv, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.bn.backward(grad_out)?;
        let d = self.conv.backward(&d)?;
        self.pool.backward(&d)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        visit_child(&self.conv, "conv", f);
        visit_child(&self.bn, "bn", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        visit_child_mut(&mut self.conv, "conv", f);
        visit_child_mut(&mut self.bn, "bn", f);
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        visit_child_trainable(&mut self.conv, "conv", f);
        visit_child_trainable(&mut self.bn, "bn", f);
    }
}

// ---------------------------------------------------------------------------
// SeesawBlock: expand -> (shuffle) -> depthwise -> (SE) -> project (+skip/residual)

pub struct SeesawBlock<T> {
    pub cfg: BlockConfig,
    expand: UnevenPointwise<T>,
    bn1: BatchNorm<T>,
    act1: Activation<T>,
    shuffle: Option<ChannelShuffle<T>>,
    dw: DepthwiseConv<T>,
    bn2: BatchNorm<T>,
    act2: Activation<T>,
    se: Option<SeModule<T>>,
    project: UnevenPointwise<T>,
    bn3: BatchNorm<T>,
    skip: Option<SkipBranch<T>>,
    cached_input: Option<Tensor<T>>,
}

/// Channel groupings used by a block's two pointwise convolutions.
pub fn pointwise_ranges(variant: BlockVariant, c_in: usize, c_out: usize, ratio: f64) -> Vec<GroupRanges> {
    match variant {
        BlockVariant::SeesawShuffle => partition_groups(c_in, c_out, ratio),
        BlockVariant::SeesawShare => channel_share_cover(c_in, c_out, ratio),
        BlockVariant::InvertedResidual => vec![GroupRanges {
            input: (0, c_in),
            output: (0, c_out),
        }],
    }
}

impl<T: Scalar> SeesawBlock<T> {
    pub fn new(cfg: BlockConfig, rng: &mut Rng) -> Result<SeesawBlock<T>> {
        cfg.validate()?;
        let e = cfg.expansion_channels;
        let expand = UnevenPointwise::new(
            cfg.in_channels,
            e,
            pointwise_ranges(cfg.variant, cfg.in_channels, e, cfg.split_ratio),
            rng,
        )?;
        let shuffle = match cfg.variant {
            BlockVariant::SeesawShuffle => Some(ChannelShuffle::new(2)),
            _ => None,
        };
        let project = UnevenPointwise::new(
            e,
            cfg.out_channels,
            pointwise_ranges(cfg.variant, e, cfg.out_channels, cfg.split_ratio),
            rng,
        )?;
        Ok(SeesawBlock {
            expand,
            bn1: BatchNorm::new(e),
            act1: Activation::new(cfg.activation, e),
            shuffle,
            dw: DepthwiseConv::new(e, 3, cfg.stride, 1, rng),
            bn2: BatchNorm::new(e),
            act2: Activation::new(cfg.activation, e),
            se: cfg.use_se.then(|| SeModule::new(e, cfg.se_reduction, rng)),
            project,
            bn3: BatchNorm::new(cfg.out_channels),
            skip: if cfg.downsample_skip {
                Some(SkipBranch::new(cfg.in_channels, cfg.out_channels, rng)?)
            } else {
                None
            },
            cached_input: None,
            cfg,
        })
    }
}

impl<T: Scalar> Layer<T> for SeesawBlock<T> {
    fn kind(&self) -> &'static str {
        match self.cfg.variant {
            BlockVariant::InvertedResidual => "inverted_residual_block",
            _ => "seesaw_block",
        }
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = self.expand.forward(input, mode)?;
        x = self.bn1.forward(&x, mode)?;
        x = self.act1.forward(&x, mode)?;
        if let Some(shuffle) = &mut self.shuffle {
            x = shuffle.forward(&x, mode)?;
        }
        x = self.dw.forward(&x, mode)?;
        x = self.bn2.forward(&x, mode)?;
        x = self.act2.forward(&x, mode)?;
        if let Some(se) = &mut self.se {
            x = se.forward(&x, mode)?;
        }
        x = self.project.forward(&x, mode)?;
        // The projection stays linear: batch norm, no activation.
        x = self.bn3.forward(&x, mode)?;
        if self.cfg.residual {
            if x.shape() != input.shape() {
                return Err(Error::shape(
                    "seesaw_block",
                    format!("residual needs matching shapes, got {} vs {}", x.shape(), input.shape()),
                ));
            }
            x.add_assign(input)?;
        }
        if let Some(skip) = &mut self.skip {
            let branch = skip.forward(input, mode)?;
            if branch.shape() != x.shape() {
                return Err(Error::shape(
                    "seesaw_block",
                    format!("skip branch produced {}, main path {}", branch.shape(), x.shape()),
                ));
            }
            x.add_assign(&branch)?;
        }
        self.cached_input = (mode == Mode::Train).then(|| input.clone());
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let _input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::Training("seesaw_block: backward without forward".into()))?;
        let mut d = self.bn3.backward(grad_out)?;
        d = self.project.backward(&d)?;
        if let Some(se) = &mut self.se {
            d = se.backward(&d)?;
        }
        d = self.act2.backward(&d)?;
        d = self.bn2.backward(&d)?;
        d = self.dw.backward(&d)?;
        if let Some(shuffle) = &mut self.shuffle {
            d = shuffle.backward(&d)?;
        }
        d = self.act1.backward(&d)?;
        d = self.bn1.backward(&d)?;
        let mut d_input = self.expand.backward(&d)?;
        if self.cfg.residual {
            d_input.add_assign(grad_out)?;
        }
        if let Some(skip) = &mut self.skip {
            let d_skip = skip.backward(grad_out)?;
            d_input.add_assign(&d_skip)?;
        }
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        visit_child(&self.expand, "expand", f);
        visit_child(&self.bn1, "bn1", f);
        visit_child(&self.act1, "act1", f);
        visit_child(&self.dw, "dw", f);
        visit_child(&self.bn2, "bn2", f);
        visit_child(&self.act2, "act2", f);
        if let Some(se) = &self.se {
            visit_child(se, "se", f);
        }
        visit_child(&self.project, "project", f);
        visit_child(&self.bn3, "bn3", f);
        if let Some(skip) = &self.skip {
            visit_child(skip, "skip", f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        visit_child_mut(&mut self.expand, "expand", f);
        visit_child_mut(&mut self.bn1, "bn1", f);
        visit_child_mut(&mut self.act1, "act1", f);
        visit_child_mut(&mut self.dw, "dw", f);
        visit_child_mut(&mut self.bn2, "bn2", f);
        visit_child_mut(&mut self.act2, "act2", f);
        if let Some(se) = &mut self.se {
            visit_child_mut(se, "se", f);
        }
        visit_child_mut(&mut self.project, "project", f);
        visit_child_mut(&mut self.bn3, "bn3", f);
        if let Some(skip) = &mut self.skip {
            visit_child_mut(skip, "skip", f);
        }
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        visit_child_trainable(&mut self.expand, "expand", f);
        visit_child_trainable(&mut self.bn1, "bn1", f);
        visit_child_trainable(&mut self.act1, "act1", f);
        visit_child_trainable(&mut self.dw, "dw", f);
        visit_child_trainable(&mut self.bn2, "bn2", f);
        visit_child_trainable(&mut self.act2, "act2", f);
        if let Some(se) = &mut self.se {
            visit_child_trainable(se, "se", f);
        }
        visit_child_trainable(&mut self.project, "project", f);
        visit_child_trainable(&mut self.bn3, "bn3", f);
        if let Some(skip) = &mut self.skip {
            visit_child_trainable(skip, "skip", f);
        }
    }
}
