//! Layer-local forward/backward machinery.
//!
//! There is no general autograd graph: every layer caches what its own
//! backward pass needs during a training-mode forward, and graphs are
//! evaluated as straight-line sequences. Inference-mode forwards cache
//! nothing and a backward without a cached context is an error.

use crate::error::{Error, Result};
use crate::ops::{
    self, activation_grad, ActivationKind, BatchStats, ConvParams, Mode,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Role of a tensor exposed by [`Layer::visit`]: trainable parameters are
/// optimized and counted, state tensors (batch-norm running statistics) are
/// serialized but never optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    State,
}

pub trait Layer<T: Scalar>: Send {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Propagate `grad_out` through the cached forward context, accumulating
    /// parameter gradients and returning the input gradient.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Read-only walk over parameters and state, in a stable order.
    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T]));

    /// Mutable walk over parameters and state (checkpoint loading).
    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T]));

    /// Mutable walk over `(name, value, gradient)` of trainable parameters.
    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T]));

    fn zero_grads(&mut self) {
        self.visit_trainable(&mut |_, _, grad| grad.iter_mut().for_each(|g| *g = T::ZERO));
    }

    /// Number of trainable scalar parameters.
    fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |kind, _, _, data| {
            if kind == ParamKind::Trainable {
                count += data.len();
            }
        });
        count
    }
}

/// Delegate a visit to a child layer under `prefix.`.
pub(crate) fn visit_child<T: Scalar>(
    child: &dyn Layer<T>,
    prefix: &str,
    f: &mut dyn FnMut(ParamKind, &str, Shape, &[T]),
) {
    child.visit(&mut |kind, name, shape, data| f(kind, &format!("{prefix}.{name}"), shape, data));
}

pub(crate) fn visit_child_mut<T: Scalar>(
    child: &mut dyn Layer<T>,
    prefix: &str,
    f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T]),
) {
    child.visit_mut(&mut |kind, name, shape, data| f(kind, &format!("{prefix}.{name}"), shape, data));
}

pub(crate) fn visit_child_trainable<T: Scalar>(
    child: &mut dyn Layer<T>,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut [T], &mut [T]),
) {
    child.visit_trainable(&mut |name, value, grad| f(&format!("{prefix}.{name}"), value, grad));
}

fn no_ctx(kind: &'static str) -> Error {
    Error::Training(format!("{kind}: backward without a cached forward context"))
}

fn vec_shape(len: usize) -> Shape {
    Shape {
        n: 1,
        c: len,
        h: 1,
        w: 1,
    }
}

/// He-normal fan-in initialization.
fn he_normal<T: Scalar>(shape: Shape, fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

// ---------------------------------------------------------------------------
// Conv2d

pub struct Conv2d<T> {
    pub params: ConvParams,
    pub weight: Tensor<T>,
    /// Per-output-channel bias, present when `params.has_bias`. The standard
    /// blocks never use it (batch norm follows every conv).
    pub bias: Option<Vec<T>>,
    grad_weight: Tensor<T>,
    grad_bias: Vec<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(params: ConvParams, rng: &mut Rng) -> Result<Conv2d<T>> {
        params.validate()?;
        let ws = params.weight_shape();
        let fan_in = ws.c * ws.h * ws.w;
        Ok(Conv2d {
            weight: he_normal(ws, fan_in, rng),
            bias: params.has_bias.then(|| vec![T::ZERO; params.out_channels]),
            grad_weight: Tensor::zeros(ws),
            grad_bias: vec![T::ZERO; params.out_channels],
            cache: None,
            params,
        })
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut out = ops::conv2d_forward(input, &self.weight, &self.params)?;
        if let Some(bias) = &self.bias {
            let s = out.shape();
            for n in 0..s.n {
                let img = out.batch_item_mut(n);
                for (c, b) in bias.iter().enumerate() {
                    for v in img[c * s.h * s.w..(c + 1) * s.h * s.w].iter_mut() {
                        *v += *b;
                    }
                }
            }
        }
        self.cache = match mode {
            Mode::Train => Some(input.clone()),
            Mode::Infer => None,
        };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or_else(|| no_ctx("conv2d"))?;
        let (d_input, d_weight) = ops::conv2d_backward(&input, &self.weight, &self.params, grad_out)?;
        self.grad_weight.add_assign(&d_weight)?;
        if self.bias.is_some() {
            let s = grad_out.shape();
            for n in 0..s.n {
                let img = grad_out.batch_item(n);
                for (c, g) in self.grad_bias.iter_mut().enumerate() {
                    for v in &img[c * s.h * s.w..(c + 1) * s.h * s.w] {
                        *g += *v;
                    }
                }
            }
        }
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        f(ParamKind::Trainable, "weight", self.weight.shape(), self.weight.data());
        if let Some(b) = &self.bias {
            f(ParamKind::Trainable, "bias", vec_shape(b.len()), b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        f(ParamKind::Trainable, "weight", self.weight.shape(), self.weight.data_mut());
        if let Some(b) = &mut self.bias {
            let len = b.len();
            f(ParamKind::Trainable, "bias", vec_shape(len), b);
        }
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f("weight", self.weight.data_mut(), self.grad_weight.data_mut());
        if let Some(b) = &mut self.bias {
            f("bias", b, &mut self.grad_bias);
        }
    }
}

// ---------------------------------------------------------------------------
// DepthwiseConv

pub struct DepthwiseConv<T> {
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor<T>,
    grad_weight: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> DepthwiseConv<T> {
    pub fn new(channels: usize, kernel: usize, stride: usize, padding: usize, rng: &mut Rng) -> DepthwiseConv<T> {
        let ws = Shape {
            n: channels,
            c: 1,
            h: kernel,
            w: kernel,
        };
        DepthwiseConv {
            stride,
            padding,
            weight: he_normal(ws, kernel * kernel, rng),
            grad_weight: Tensor::zeros(ws),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for DepthwiseConv<T> {
    fn kind(&self) -> &'static str {
        "dwconv"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = ops::depthwise_conv2d_forward(input, &self.weight, self.stride, self.padding)?;
        self.cache = match mode {
            Mode::Train => Some(input.clone()),
            Mode::Infer => None,
        };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or_else(|| no_ctx("dwconv"))?;
        let (d_input, d_weight) =
            ops::depthwise_conv2d_backward(&input, &self.weight, self.stride, self.padding, grad_out)?;
        self.grad_weight.add_assign(&d_weight)?;
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        f(ParamKind::Trainable, "weight", self.weight.shape(), self.weight.data());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        f(ParamKind::Trainable, "weight", self.weight.shape(), self.weight.data_mut());
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f("weight", self.weight.data_mut(), self.grad_weight.data_mut());
    }
}

// ---------------------------------------------------------------------------
// GdConv: global depthwise convolution, kernel == spatial extent

pub struct GdConv<T> {
    inner: DepthwiseConv<T>,
    kernel: usize,
}

impl<T: Scalar> GdConv<T> {
    pub fn new(channels: usize, kernel: usize, rng: &mut Rng) -> GdConv<T> {
        GdConv {
            inner: DepthwiseConv::new(channels, kernel, 1, 0, rng),
            kernel,
        }
    }
}

impl<T: Scalar> Layer<T> for GdConv<T> {
    fn kind(&self) -> &'static str {
        "gdconv"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = input.shape();
        if s.h != self.kernel || s.w != self.kernel {
            return Err(Error::shape(
                "gdconv",
                format!("input spatial {}x{} must equal kernel {}", s.h, s.w, self.kernel),
            ));
        }
        self.inner.forward(input, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        self.inner.backward(grad_out)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        self.inner.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        self.inner.visit_mut(f);
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.inner.visit_trainable(f);
    }
}

// ---------------------------------------------------------------------------
// BatchNorm

struct BnCache<T> {
    input: Tensor<T>,
    stats: Option<BatchStats<T>>,
}

pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
    grad_gamma: Vec<T>,
    grad_beta: Vec<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> BatchNorm<T> {
        BatchNorm {
            gamma: vec![T::ONE; channels],
            beta: vec![T::ZERO; channels],
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            epsilon: 1e-5,
            momentum: 0.1,
            grad_gamma: vec![T::ZERO; channels],
            grad_beta: vec![T::ZERO; channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn as_params(&self) -> ops::BatchNormParams<T> {
        ops::BatchNormParams {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running_mean: self.running_mean.clone(),
            running_var: self.running_var.clone(),
            epsilon: self.epsilon,
            momentum: self.momentum,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut params = self.as_params();
        let (out, stats) = ops::batchnorm_forward(input, &mut params, mode)?;
        if mode == Mode::Train {
            self.running_mean = params.running_mean;
            self.running_var = params.running_var;
            self.cache = Some(BnCache {
                input: input.clone(),
                stats,
            });
        } else {
            self.cache = None;
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let BnCache { input, stats } = self.cache.take().ok_or_else(|| no_ctx("batchnorm"))?;
        let s = input.shape();
        if grad_out.shape() != s {
            return Err(Error::shape(
                "batchnorm_backward",
                format!("grad shape {} != input {}", grad_out.shape(), s),
            ));
        }
        let m = (s.n * s.h * s.w) as f64;
        let mut d_input = Tensor::zeros(s);
        match stats {
            Some(stats) => {
                // Batch statistics participated in the forward pass, so the
                // gradient flows through mean and variance as well.
                for c in 0..s.c {
                    let mu = stats.mean[c];
                    let inv_std = T::from_f64(1.0 / (stats.var[c].to_f64() + self.epsilon).sqrt());
                    let g = self.gamma[c];
                    let mut sum_dy = T::ZERO;
                    let mut sum_dy_xhat = T::ZERO;
                    for n in 0..s.n {
                        let x = &input.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                        let dy = &grad_out.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                        for (xv, dv) in x.iter().zip(dy.iter()) {
                            let xhat = (*xv - mu) * inv_std;
                            sum_dy += *dv;
                            sum_dy_xhat += *dv * xhat;
                        }
                    }
                    self.grad_gamma[c] += sum_dy_xhat;
                    self.grad_beta[c] += sum_dy;
                    let inv_m = T::from_f64(1.0 / m);
                    for n in 0..s.n {
                        let x = &input.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                        let dst = &mut d_input.batch_item_mut(n)[c * s.spatial()..(c + 1) * s.spatial()];
                        let dy = &grad_out.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                        for ((dv, xv), dyv) in dst.iter_mut().zip(x.iter()).zip(dy.iter()) {
                            let xhat = (*xv - mu) * inv_std;
                            *dv = g * inv_std * (*dyv - inv_m * (sum_dy + xhat * sum_dy_xhat));
                        }
                    }
                }
            }
            None => unreachable!("train-mode cache always stores stats"),
        }
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        let c = self.channels();
        f(ParamKind::Trainable, "gamma", vec_shape(c), &self.gamma);
        f(ParamKind::Trainable, "beta", vec_shape(c), &self.beta);
        f(ParamKind::State, "running_mean", vec_shape(c), &self.running_mean);
        f(ParamKind::State, "running_var", vec_shape(c), &self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        let c = self.gamma.len();
        f(ParamKind::Trainable, "gamma", vec_shape(c), &mut self.gamma);
        f(ParamKind::Trainable, "beta", vec_shape(c), &mut self.beta);
        f(ParamKind::State, "running_mean", vec_shape(c), &mut self.running_mean);
        f(ParamKind::State, "running_var", vec_shape(c), &mut self.running_var);
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f("gamma", &mut self.gamma, &mut self.grad_gamma);
        f("beta", &mut self.beta, &mut self.grad_beta);
    }
}

// ---------------------------------------------------------------------------
// Activation

pub struct Activation<T> {
    pub kind: ActivationKind,
    /// Per-channel PReLU slopes; empty for the parameter-free kinds.
    pub slope: Vec<T>,
    grad_slope: Vec<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind, channels: usize) -> Activation<T> {
        let slope = match kind {
            ActivationKind::PRelu => vec![T::from_f64(0.25); channels],
            _ => Vec::new(),
        };
        let grad_slope = vec![T::ZERO; slope.len()];
        Activation {
            kind,
            slope,
            grad_slope,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Activation<T> {
    fn kind(&self) -> &'static str {
        self.kind.name()
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let slope = if self.slope.is_empty() {
            None
        } else {
            Some(self.slope.as_slice())
        };
        let out = ops::activation(input, self.kind, slope)?;
        self.cache = match mode {
            Mode::Train => Some(input.clone()),
            Mode::Infer => None,
        };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or_else(|| no_ctx("activation"))?;
        let s = input.shape();
        if grad_out.shape() != s {
            return Err(Error::shape(
                "activation_backward",
                format!("grad shape {} != input {}", grad_out.shape(), s),
            ));
        }
        let mut d_input = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let a = if self.slope.is_empty() { T::ZERO } else { self.slope[c] };
                let x = &input.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                let dy = &grad_out.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                let dst = &mut d_input.batch_item_mut(n)[c * s.spatial()..(c + 1) * s.spatial()];
                let mut dslope = T::ZERO;
                for ((dv, xv), dyv) in dst.iter_mut().zip(x.iter()).zip(dy.iter()) {
                    *dv = *dyv * activation_grad(*xv, self.kind, a);
                    if self.kind == ActivationKind::PRelu && *xv < T::ZERO {
                        dslope += *dyv * *xv;
                    }
                }
                if !self.grad_slope.is_empty() {
                    self.grad_slope[c] += dslope;
                }
            }
        }
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        if !self.slope.is_empty() {
            f(ParamKind::Trainable, "slope", vec_shape(self.slope.len()), &self.slope);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        if !self.slope.is_empty() {
            f(ParamKind::Trainable, "slope", vec_shape(self.slope.len()), &mut self.slope);
        }
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        if !self.slope.is_empty() {
            f("slope", &mut self.slope, &mut self.grad_slope);
        }
    }
}

// ---------------------------------------------------------------------------
// MaxPool2 (2x2, stride 2)

pub struct MaxPool2<T> {
    cache: Option<(Shape, Vec<usize>)>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool2<T> {
    pub fn new() -> MaxPool2<T> {
        MaxPool2 {
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Default for MaxPool2<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2<T> {
    fn kind(&self) -> &'static str {
        "maxpool2"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, argmax) = ops::max_pool2d_with_idx(input)?;
        self.cache = match mode {
            Mode::Train => Some((input.shape(), argmax)),
            Mode::Infer => None,
        };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (in_shape, argmax) = self.cache.take().ok_or_else(|| no_ctx("maxpool2"))?;
        if grad_out.numel() != argmax.len() {
            return Err(Error::shape(
                "maxpool2_backward",
                format!("grad has {} elements, cache has {}", grad_out.numel(), argmax.len()),
            ));
        }
        let mut d_input = Tensor::zeros(in_shape);
        let per_img = grad_out.numel() / in_shape.n;
        for n in 0..in_shape.n {
            let dst = d_input.batch_item_mut(n);
            for i in 0..per_img {
                let flat = n * per_img + i;
                dst[argmax[flat]] += grad_out.data()[flat];
            }
        }
        Ok(d_input)
    }

    fn visit(&self, _f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {}
    fn visit_mut(&mut self, _f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {}
    fn visit_trainable(&mut self, _f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {}
}

// ---------------------------------------------------------------------------
// Linear

pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    grad_weight: Tensor<T>,
    grad_bias: Vec<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, with_bias: bool, rng: &mut Rng) -> Linear<T> {
        let ws = Shape {
            n: out_features,
            c: in_features,
            h: 1,
            w: 1,
        };
        Linear {
            weight: he_normal(ws, in_features, rng),
            bias: with_bias.then(|| vec![T::ZERO; out_features]),
            grad_weight: Tensor::zeros(ws),
            grad_bias: vec![T::ZERO; out_features],
            cache: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape().c
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = ops::linear_forward(input, &self.weight, self.bias.as_deref())?;
        self.cache = match mode {
            Mode::Train => Some(input.clone()),
            Mode::Infer => None,
        };
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cache.take().ok_or_else(|| no_ctx("linear"))?;
        let (d_input, d_weight, d_bias) = ops::linear_backward(&input, &self.weight, grad_out)?;
        self.grad_weight.add_assign(&d_weight)?;
        if self.bias.is_some() {
            for (g, d) in self.grad_bias.iter_mut().zip(d_bias.iter()) {
                *g += *d;
            }
        }
        Ok(d_input)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        f(ParamKind::Trainable, "weight", self.weight.shape(), self.weight.data());
        if let Some(b) = &self.bias {
            f(ParamKind::Trainable, "bias", vec_shape(b.len()), b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        f(ParamKind::Trainable, "weight", self.weight.shape(), self.weight.data_mut());
        if let Some(b) = &mut self.bias {
            let len = b.len();
            f(ParamKind::Trainable, "bias", vec_shape(len), b);
        }
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f("weight", self.weight.data_mut(), self.grad_weight.data_mut());
        if let Some(b) = &mut self.bias {
            f("bias", b, &mut self.grad_bias);
        }
    }
}
