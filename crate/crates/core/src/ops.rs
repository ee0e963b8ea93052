//! Forward and backward kernels for the operators every architecture here
//! is assembled from.
//!
//! Convolutions use im2col plus a grouped matmul; both sides of every
//! backward pass are written against the same column layout. Convolution is
//! cross-correlation (no kernel flip), matching the frameworks the reference
//! architectures were defined in.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Hyper-parameters of a plain (possibly evenly grouped) convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    /// Convolutions here are followed by batch norm, so biases default off.
    pub has_bias: bool,
}

impl ConvParams {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> ConvParams {
        ConvParams {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
            groups: 1,
            has_bias: false,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> ConvParams {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("conv channels must be positive".into()));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride == 0 {
            return Err(Error::Config("conv kernel and stride must be positive".into()));
        }
        if self.groups == 0 {
            return Err(Error::Config("conv groups must be positive".into()));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::Config(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    /// Expected weight shape `(out, in/groups, kh, kw)`.
    pub fn weight_shape(&self) -> Shape {
        Shape {
            n: self.out_channels,
            c: self.in_channels / self.groups,
            h: self.kernel.0,
            w: self.kernel.1,
        }
    }

    /// Output shape for a given input: `floor((d + 2p - k) / stride) + 1`.
    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {} != in_channels {}", input.c, self.in_channels),
            ));
        }
        let (kh, kw) = self.kernel;
        if input.h + 2 * self.padding < kh || input.w + 2 * self.padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {}x{} exceeds padded input {}x{}",
                    kh,
                    kw,
                    input.h + 2 * self.padding,
                    input.w + 2 * self.padding
                ),
            ));
        }
        Shape::new(
            input.n,
            self.out_channels,
            (input.h + 2 * self.padding - kh) / self.stride + 1,
            (input.w + 2 * self.padding - kw) / self.stride + 1,
        )
    }
}

/// `c[m x n] += a[m x k] * b[k x n]`, all row-major.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::ZERO {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * *bv;
            }
        }
    }
}

/// `c[m x n] += a[m x k] * b^T` where `b` is `[n x k]` row-major.
pub(crate) fn matmul_acc_bt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (av, bv) in a_row.iter().zip(b_row.iter()) {
                acc += *av * *bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[n x k] += a^T * b` where `a` is `[m x n]` and `b` is `[m x k]`, row-major.
pub(crate) fn matmul_acc_at<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(c.len(), n * k);
    for i in 0..m {
        let b_row = &b[i * k..(i + 1) * k];
        for j in 0..n {
            let av = a[i * n + j];
            if av == T::ZERO {
                continue;
            }
            let c_row = &mut c[j * k..(j + 1) * k];
            for (cv, bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * *bv;
            }
        }
    }
}

/// Unfold one image (`c x h x w` slice) into columns.
/// Row order is `(channel, kh, kw)`, column order is `(oh, ow)`.
pub(crate) fn im2col<T: Scalar>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    col: &mut [T],
) {
    let (kh, kw) = kernel;
    let cols = out_h * out_w;
    debug_assert_eq!(col.len(), c * kh * kw * cols);
    for ch in 0..c {
        let img_ch = &img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if iy < 0 || iy >= h as isize {
                        dst_row.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src_row = &img_ch[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, dv) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *dv = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns back into an image; adjoint of [`im2col`].
pub(crate) fn col2im_acc<T: Scalar>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    img: &mut [T],
) {
    let (kh, kw) = kernel;
    let cols = out_h * out_w;
    debug_assert_eq!(col.len(), c * kh * kw * cols);
    for ch in 0..c {
        let img_ch = &mut img[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let img_row = &mut img_ch[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            img_row[ix as usize] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_conv_weights<T: Scalar>(weights: &Tensor<T>, params: &ConvParams) -> Result<()> {
    let expect = params.weight_shape();
    if weights.shape() != expect {
        return Err(Error::shape(
            "conv2d",
            format!("weight shape {} != expected {}", weights.shape(), expect),
        ));
    }
    Ok(())
}

/// Grouped 2-D cross-correlation.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, params: &ConvParams) -> Result<Tensor<T>> {
    let out_shape = params.out_shape(input.shape())?;
    check_conv_weights(weights, params)?;
    let in_shape = input.shape();
    let (kh, kw) = params.kernel;
    let ipg = params.in_channels / params.groups;
    let opg = params.out_channels / params.groups;
    let cols = out_shape.spatial();
    let k_per_group = ipg * kh * kw;

    let mut output = Tensor::zeros(out_shape);
    let mut col = vec![T::ZERO; params.in_channels * kh * kw * cols];
    for n in 0..in_shape.n {
        im2col(
            input.batch_item(n),
            in_shape.c,
            in_shape.h,
            in_shape.w,
            params.kernel,
            params.stride,
            params.padding,
            out_shape.h,
            out_shape.w,
            &mut col,
        );
        let out_img = output.batch_item_mut(n);
        for g in 0..params.groups {
            let w_g = &weights.data()[g * opg * k_per_group..(g + 1) * opg * k_per_group];
            let col_g = &col[g * k_per_group * cols..(g + 1) * k_per_group * cols];
            let out_g = &mut out_img[g * opg * cols..(g + 1) * opg * cols];
            matmul_acc(w_g, col_g, out_g, opg, k_per_group, cols);
        }
    }
    Ok(output)
}

/// Gradients of a grouped convolution: `(d_input, d_weights)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    params: &ConvParams,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let out_shape = params.out_shape(input.shape())?;
    check_conv_weights(weights, params)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad shape {} != forward output {}", grad_out.shape(), out_shape),
        ));
    }
    let in_shape = input.shape();
    let (kh, kw) = params.kernel;
    let ipg = params.in_channels / params.groups;
    let opg = params.out_channels / params.groups;
    let cols = out_shape.spatial();
    let k_per_group = ipg * kh * kw;

    let mut d_input = Tensor::zeros(in_shape);
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut col = vec![T::ZERO; params.in_channels * kh * kw * cols];
    let mut d_col = vec![T::ZERO; params.in_channels * kh * kw * cols];
    for n in 0..in_shape.n {
        im2col(
            input.batch_item(n),
            in_shape.c,
            in_shape.h,
            in_shape.w,
            params.kernel,
            params.stride,
            params.padding,
            out_shape.h,
            out_shape.w,
            &mut col,
        );
        d_col.iter_mut().for_each(|v| *v = T::ZERO);
        let g_img = grad_out.batch_item(n);
        for g in 0..params.groups {
            let w_g = &weights.data()[g * opg * k_per_group..(g + 1) * opg * k_per_group];
            let col_g = &col[g * k_per_group * cols..(g + 1) * k_per_group * cols];
            let dy_g = &g_img[g * opg * cols..(g + 1) * opg * cols];
            let dw_g = &mut d_weights.data_mut()[g * opg * k_per_group..(g + 1) * opg * k_per_group];
            // dW = dY * col^T
            matmul_acc_bt(dy_g, col_g, dw_g, opg, cols, k_per_group);
            // dcol = W^T * dY
            let dcol_g = &mut d_col[g * k_per_group * cols..(g + 1) * k_per_group * cols];
            matmul_acc_at(w_g, dy_g, dcol_g, opg, k_per_group, cols);
        }
        col2im_acc(
            &d_col,
            in_shape.c,
            in_shape.h,
            in_shape.w,
            params.kernel,
            params.stride,
            params.padding,
            out_shape.h,
            out_shape.w,
            d_input.batch_item_mut(n),
        );
    }
    Ok((d_input, d_weights))
}

fn check_depthwise_weights<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<()> {
    let ws = weights.shape();
    if ws.n != input.shape().c || ws.c != 1 {
        return Err(Error::shape(
            "depthwise_conv2d",
            format!(
                "weights {} must be (C,1,kh,kw) with C = input channels {}",
                ws,
                input.shape().c
            ),
        ));
    }
    Ok(())
}

/// Depthwise 3x3-style convolution: one filter per channel, no cross-channel mixing.
pub fn depthwise_conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_depthwise_weights(input, weights)?;
    let s = input.shape();
    let ws = weights.shape();
    let params = ConvParams {
        in_channels: s.c,
        out_channels: s.c,
        kernel: (ws.h, ws.w),
        stride,
        padding,
        groups: s.c,
        has_bias: false,
    };
    let out_shape = params.out_shape(s)?;
    let (kh, kw) = (ws.h, ws.w);
    let mut output = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..s.c {
            let img = &input.batch_item(n)[c * s.h * s.w..(c + 1) * s.h * s.w];
            let ker = &weights.data()[c * kh * kw..(c + 1) * kh * kw];
            let out = &mut output.batch_item_mut(n)[c * out_shape.spatial()..(c + 1) * out_shape.spatial()];
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut acc = T::ZERO;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            acc += ker[ky * kw + kx] * img[iy as usize * s.w + ix as usize];
                        }
                    }
                    out[oy * out_shape.w + ox] = acc;
                }
            }
        }
    }
    Ok(output)
}

/// Gradients of a depthwise convolution: `(d_input, d_weights)`.
pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_depthwise_weights(input, weights)?;
    let s = input.shape();
    let ws = weights.shape();
    let (kh, kw) = (ws.h, ws.w);
    let os = grad_out.shape();
    let mut d_input = Tensor::zeros(s);
    let mut d_weights = Tensor::zeros(ws);
    for n in 0..s.n {
        for c in 0..s.c {
            let img = &input.batch_item(n)[c * s.h * s.w..(c + 1) * s.h * s.w];
            let ker = &weights.data()[c * kh * kw..(c + 1) * kh * kw];
            let dy = &grad_out.batch_item(n)[c * os.spatial()..(c + 1) * os.spatial()];
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = dy[oy * os.w + ox];
                    if g == T::ZERO {
                        continue;
                    }
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let ii = iy as usize * s.w + ix as usize;
                            d_weights.data_mut()[c * kh * kw + ky * kw + kx] += g * img[ii];
                            d_input.batch_item_mut(n)[c * s.h * s.w + ii] += g * ker[ky * kw + kx];
                        }
                    }
                }
            }
        }
    }
    Ok((d_input, d_weights))
}

/// Global depthwise convolution: kernel covers the entire spatial extent,
/// output is `(n, c, 1, 1)`. Linear (no activation follows).
pub fn global_depthwise_conv<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let ws = weights.shape();
    if ws.h != s.h || ws.w != s.w {
        return Err(Error::shape(
            "global_depthwise_conv",
            format!("kernel {}x{} must equal input spatial {}x{}", ws.h, ws.w, s.h, s.w),
        ));
    }
    depthwise_conv2d_forward(input, weights, 1, 0)
}

/// Batch-norm statistics and affine parameters for one channel axis.
#[derive(Debug, Clone)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn new(channels: usize) -> BatchNormParams<T> {
        BatchNormParams {
            gamma: vec![T::ONE; channels],
            beta: vec![T::ZERO; channels],
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Execution mode: training uses batch statistics and updates running ones,
/// inference normalizes with the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel batch statistics captured by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Batch normalization. In train mode returns the batch statistics used, so
/// the caller can run the matching backward pass.
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchStats<T>>)> {
    let s = input.shape();
    if s.c != params.channels() {
        return Err(Error::shape(
            "batchnorm",
            format!("input channels {} != parameter channels {}", s.c, params.channels()),
        ));
    }
    let m = s.n * s.h * s.w;
    let mut output = Tensor::zeros(s);
    match mode {
        Mode::Infer => {
            for c in 0..s.c {
                let inv_std = T::from_f64(1.0 / (params.running_var[c].to_f64() + params.epsilon).sqrt());
                let g = params.gamma[c];
                let b = params.beta[c];
                let mu = params.running_mean[c];
                for n in 0..s.n {
                    let src = &input.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                    let dst = &mut output.batch_item_mut(n)[c * s.spatial()..(c + 1) * s.spatial()];
                    for (d, x) in dst.iter_mut().zip(src.iter()) {
                        *d = (*x - mu) * inv_std * g + b;
                    }
                }
            }
            Ok((output, None))
        }
        Mode::Train => {
            if m == 0 {
                return Err(Error::Config("batchnorm train mode needs a non-empty batch".into()));
            }
            let inv_m = 1.0 / m as f64;
            let mut mean = vec![T::ZERO; s.c];
            let mut var = vec![T::ZERO; s.c];
            for c in 0..s.c {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for n in 0..s.n {
                    let src = &input.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                    for x in src {
                        let v = x.to_f64();
                        sum += v;
                        sq += v * v;
                    }
                }
                let mu = sum * inv_m;
                let v = (sq * inv_m - mu * mu).max(0.0);
                mean[c] = T::from_f64(mu);
                var[c] = T::from_f64(v);
                let inv_std = T::from_f64(1.0 / (v + params.epsilon).sqrt());
                let g = params.gamma[c];
                let b = params.beta[c];
                for n in 0..s.n {
                    let src = &input.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                    let dst = &mut output.batch_item_mut(n)[c * s.spatial()..(c + 1) * s.spatial()];
                    for (d, x) in dst.iter_mut().zip(src.iter()) {
                        *d = (*x - mean[c]) * inv_std * g + b;
                    }
                }
                let mom = params.momentum;
                params.running_mean[c] =
                    T::from_f64(params.running_mean[c].to_f64() * (1.0 - mom) + mu * mom);
                params.running_var[c] =
                    T::from_f64(params.running_var[c].to_f64() * (1.0 - mom) + v * mom);
            }
            Ok((output, Some(BatchStats { mean, var })))
        }
    }
}

/// Non-linearity selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Swish,
    PRelu,
    Relu,
    Sigmoid,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Swish => "swish",
            ActivationKind::PRelu => "prelu",
            ActivationKind::Relu => "relu",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

pub fn swish<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// Elementwise activation. `slope` supplies the per-channel PReLU slopes and
/// is ignored by the other kinds.
pub fn activation<T: Scalar>(input: &Tensor<T>, kind: ActivationKind, slope: Option<&[T]>) -> Result<Tensor<T>> {
    let s = input.shape();
    match kind {
        ActivationKind::Swish => Ok(input.map(swish)),
        ActivationKind::Relu => Ok(input.map(|x| x.maximum(T::ZERO))),
        ActivationKind::Sigmoid => Ok(input.map(sigmoid)),
        ActivationKind::PRelu => {
            let slope = slope.ok_or_else(|| Error::Config("prelu needs per-channel slopes".into()))?;
            if slope.len() != s.c {
                return Err(Error::shape(
                    "prelu",
                    format!("{} slopes for {} channels", slope.len(), s.c),
                ));
            }
            let mut out = Tensor::zeros(s);
            for n in 0..s.n {
                for c in 0..s.c {
                    let a = slope[c];
                    let src = &input.batch_item(n)[c * s.spatial()..(c + 1) * s.spatial()];
                    let dst = &mut out.batch_item_mut(n)[c * s.spatial()..(c + 1) * s.spatial()];
                    for (d, x) in dst.iter_mut().zip(src.iter()) {
                        *d = if *x >= T::ZERO { *x } else { a * *x };
                    }
                }
            }
            Ok(out)
        }
    }
}

/// d activation / d x at `x` (PReLU uses the channel's slope for x < 0).
pub fn activation_grad<T: Scalar>(x: T, kind: ActivationKind, slope: T) -> T {
    match kind {
        ActivationKind::Swish => {
            let s = sigmoid(x);
            s + x * s * (T::ONE - s)
        }
        ActivationKind::Relu => {
            if x > T::ZERO {
                T::ONE
            } else {
                T::ZERO
            }
        }
        ActivationKind::Sigmoid => {
            let s = sigmoid(x);
            s * (T::ONE - s)
        }
        ActivationKind::PRelu => {
            if x >= T::ZERO {
                T::ONE
            } else {
                slope
            }
        }
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Also returns the flat per-image argmax indices for the backward pass.
pub fn max_pool2d_with_idx<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    let oh = s.h / 2;
    let ow = s.w / 2;
    if oh == 0 || ow == 0 {
        return Err(Error::shape(
            "max_pool2d",
            format!("input spatial {}x{} too small for 2x2 pooling", s.h, s.w),
        ));
    }
    let out_shape = Shape::new(s.n, s.c, oh, ow)?;
    let mut output = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; out_shape.numel()];
    for n in 0..s.n {
        let img = input.batch_item(n);
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::from_f64(f64::NEG_INFINITY);
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let iy = oy * 2 + dy;
                            let ix = ox * 2 + dx;
                            let idx = c * s.h * s.w + iy * s.w + ix;
                            if img[idx] > best {
                                best = img[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oi = output.index(n, c, oy, ox);
                    output.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
    }
    Ok((output, argmax))
}

pub fn max_pool2d<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    max_pool2d_with_idx(input).map(|(t, _)| t)
}

/// Affine map on `(n, in, 1, 1)` tensors: `y = W x (+ b)`.
/// Weights are `(out, in, 1, 1)` row-major.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let ws = weights.shape();
    if s.h != 1 || s.w != 1 || ws.h != 1 || ws.w != 1 {
        return Err(Error::shape(
            "linear",
            format!("expects (n,c,1,1) input and (out,in,1,1) weights, got {} and {}", s, ws),
        ));
    }
    if ws.c != s.c {
        return Err(Error::shape(
            "linear",
            format!("input features {} != weight columns {}", s.c, ws.c),
        ));
    }
    if let Some(b) = bias {
        if b.len() != ws.n {
            return Err(Error::shape(
                "linear",
                format!("bias length {} != output features {}", b.len(), ws.n),
            ));
        }
    }
    let out_shape = Shape::new(s.n, ws.n, 1, 1)?;
    let mut output = Tensor::zeros(out_shape);
    for n in 0..s.n {
        let x = input.batch_item(n);
        let y = output.batch_item_mut(n);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &weights.data()[o * ws.c..(o + 1) * ws.c];
            let mut acc = T::ZERO;
            for (wv, xv) in row.iter().zip(x.iter()) {
                acc += *wv * *xv;
            }
            *yo = acc;
        }
        if let Some(b) = bias {
            for (yo, bv) in y.iter_mut().zip(b.iter()) {
                *yo += *bv;
            }
        }
    }
    Ok(output)
}

/// Gradients of [`linear_forward`]: `(d_input, d_weights, d_bias)`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let s = input.shape();
    let ws = weights.shape();
    if grad_out.shape().n != s.n || grad_out.shape().c != ws.n {
        return Err(Error::shape(
            "linear_backward",
            format!("grad shape {} inconsistent with ({}, {})", grad_out.shape(), s.n, ws.n),
        ));
    }
    let mut d_input = Tensor::zeros(s);
    let mut d_weights = Tensor::zeros(ws);
    let mut d_bias = vec![T::ZERO; ws.n];
    for n in 0..s.n {
        let x = input.batch_item(n);
        let dy = grad_out.batch_item(n);
        let dx = d_input.batch_item_mut(n);
        for (o, &g) in dy.iter().enumerate() {
            d_bias[o] += g;
            if g == T::ZERO {
                continue;
            }
            let row = &weights.data()[o * ws.c..(o + 1) * ws.c];
            let drow = &mut d_weights.data_mut()[o * ws.c..(o + 1) * ws.c];
            for i in 0..ws.c {
                dx[i] += g * row[i];
                drow[i] += g * x[i];
            }
        }
    }
    Ok((d_input, d_weights, d_bias))
}
