//! Shared test oracles: a naive nested-loop convolution reference and a
//! central finite-difference gradient checker. Both stay independent of the
//! implementation paths they check (no im2col, no analytic backward).

#![allow(dead_code)]

use seesaw_core::layer::Layer;
use seesaw_core::ops::{ConvParams, Mode};
use seesaw_core::rng::Rng;
use seesaw_core::tensor::{Shape, Tensor};

/// Seven nested loops, straight from the definition of grouped
/// cross-correlation with zero padding.
pub fn naive_conv2d(input: &Tensor<f64>, weights: &Tensor<f64>, params: &ConvParams) -> Tensor<f64> {
    let s = input.shape();
    let (kh, kw) = params.kernel;
    let out_h = (s.h + 2 * params.padding - kh) / params.stride + 1;
    let out_w = (s.w + 2 * params.padding - kw) / params.stride + 1;
    let ipg = params.in_channels / params.groups;
    let opg = params.out_channels / params.groups;
    let mut out = Tensor::zeros(Shape::new(s.n, params.out_channels, out_h, out_w).unwrap());
    for n in 0..s.n {
        for oc in 0..params.out_channels {
            let g = oc / opg;
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = 0.0;
                    for ic_local in 0..ipg {
                        let ic = g * ipg + ic_local;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * params.stride + ky) as isize - params.padding as isize;
                                let ix = (ox * params.stride + kx) as isize - params.padding as isize;
                                if iy < 0 || iy >= s.h as isize || ix < 0 || ix >= s.w as isize {
                                    continue;
                                }
                                acc += input.at(n, ic, iy as usize, ix as usize)
                                    * weights.at(oc, ic_local, ky, kx);
                            }
                        }
                    }
                    *out.at_mut(n, oc, oy, ox) = acc;
                }
            }
        }
    }
    out
}

/// Brute-force 2x2/2 max pooling.
pub fn naive_max_pool2d(input: &Tensor<f64>) -> Tensor<f64> {
    let s = input.shape();
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, s.h / 2, s.w / 2).unwrap());
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..s.h / 2 {
                for ox in 0..s.w / 2 {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            best = best.max(input.at(n, c, oy * 2 + dy, ox * 2 + dx));
                        }
                    }
                    *out.at_mut(n, c, oy, ox) = best;
                }
            }
        }
    }
    out
}

/// Triple-loop matrix multiply oracle for the linear layer:
/// `y[n][o] = sum_i x[n][i] * w[o][i]`.
pub fn naive_linear(input: &Tensor<f64>, weights: &Tensor<f64>, bias: Option<&[f64]>) -> Tensor<f64> {
    let (n_rows, in_dim) = (input.shape().n, input.shape().c);
    let out_dim = weights.shape().n;
    let mut out = Tensor::zeros(Shape::new(n_rows, out_dim, 1, 1).unwrap());
    for n in 0..n_rows {
        for o in 0..out_dim {
            let mut acc = 0.0;
            for i in 0..in_dim {
                acc += input.at(n, i, 0, 0) * weights.at(o, i, 0, 0);
            }
            *out.at_mut(n, o, 0, 0) = acc + bias.map_or(0.0, |b| b[o]);
        }
    }
    out
}

pub fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| {
            let denom = x.abs().max(y.abs()).max(1e-9);
            (x - y).abs() / denom
        })
        .fold(0.0, f64::max)
}

pub fn rand_tensor(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Random values pushed away from zero, for kinked activations.
pub fn rand_tensor_off_zero(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    let mut t: Tensor<f64> = Tensor::randn(shape, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1 * if *v >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    t
}

/// Pairwise well-separated values (gaps >> the finite-difference step), for
/// max pooling where ties would flip the argmax.
pub fn rand_tensor_distinct(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.numel();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut t = Tensor::zeros(shape);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = order[i] as f64 * 0.01 - (n as f64 * 0.005) + rng.next_normal() * 1e-4;
    }
    t
}

/// Scalar loss used by all gradient checks: a fixed random projection of the
/// layer output, so every output element influences the loss.
fn projected_loss(output: &Tensor<f64>, projection: &Tensor<f64>) -> f64 {
    output
        .data()
        .iter()
        .zip(projection.data().iter())
        .map(|(o, p)| o * p)
        .sum()
}

pub struct GradReport {
    pub checked: usize,
    pub max_rel: f64,
}

const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor of 1e-5 on the denominator: central
/// differences with h = 1e-5 carry roundoff noise around eps * |loss| / h
/// (~1e-10), so gradients below the floor are compared absolutely against it.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-5);
    (analytic - numeric).abs() / denom
}

/// Central finite-difference check of a layer's input and parameter
/// gradients against its backward pass, at `tol` relative error.
pub fn check_layer_gradients(
    layer: &mut dyn Layer<f64>,
    input: &Tensor<f64>,
    seed: u64,
    tol: f64,
) -> GradReport {
    let mut rng = Rng::new(seed);

    // Analytic pass. The projection is scaled to keep the loss O(1), which
    // keeps finite-difference roundoff well under the comparison floor.
    let out = layer.forward(input, Mode::Train).expect("forward");
    let mut projection = rand_tensor(out.shape(), &mut rng);
    let scale = 1.0 / (out.numel() as f64).sqrt();
    for v in projection.data_mut() {
        *v *= scale;
    }
    layer.zero_grads();
    let d_input = layer.backward(&projection).expect("backward");
    let mut analytic_params: Vec<(String, Vec<f64>)> = Vec::new();
    layer.visit_trainable(&mut |name, _, grad| {
        analytic_params.push((name.to_string(), grad.to_vec()));
    });

    let mut checked = 0usize;
    let mut max_rel: f64 = 0.0;

    // Input gradient.
    let mut x = input.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let up = projected_loss(&layer.forward(&x, Mode::Train).expect("fd forward"), &projection);
        x.data_mut()[i] = orig - FD_STEP;
        let down = projected_loss(&layer.forward(&x, Mode::Train).expect("fd forward"), &projection);
        x.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = rel_err(d_input.data()[i], numeric);
        assert!(
            rel <= tol,
            "input grad [{i}]: analytic {} vs numeric {numeric} (rel {rel:.3e})",
            d_input.data()[i]
        );
        max_rel = max_rel.max(rel);
        checked += 1;
    }

    // Parameter gradients, in visit order.
    fn nudge(layer: &mut dyn Layer<f64>, param_idx: usize, i: usize, delta: f64) {
        let mut idx = 0;
        layer.visit_trainable(&mut |_, value, _| {
            if idx == param_idx {
                value[i] += delta;
            }
            idx += 1;
        });
    }
    for (param_idx, (name, analytic)) in analytic_params.iter().enumerate() {
        for i in 0..analytic.len() {
            nudge(layer, param_idx, i, FD_STEP);
            let up = projected_loss(&layer.forward(input, Mode::Train).expect("fd forward"), &projection);
            nudge(layer, param_idx, i, -2.0 * FD_STEP);
            let down = projected_loss(&layer.forward(input, Mode::Train).expect("fd forward"), &projection);
            nudge(layer, param_idx, i, FD_STEP);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = rel_err(analytic[i], numeric);
            assert!(
                rel <= tol,
                "param grad {name}[{i}]: analytic {} vs numeric {numeric} (rel {rel:.3e})",
                analytic[i]
            );
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }

    GradReport { checked, max_rel }
}

/// Randomized finite-difference instances for every layer type; shared by
/// the dedicated gradient tests and the acceptance suite.
pub mod gradsuite {
    use super::*;
    use seesaw_core::blocks::{
        channel_share_cover, partition_groups, BlockConfig, BlockVariant, ChannelShuffle,
        SeModule, SeesawBlock, SkipBranch, UnevenPointwise,
    };
    use seesaw_core::layer::{Activation, BatchNorm, Conv2d, DepthwiseConv, GdConv, Linear, MaxPool2};
    use seesaw_core::ops::ActivationKind;
    use seesaw_core::tensor::shape;

    pub const TOL: f64 = 1e-4;

    pub fn conv2d_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6001);
        let mut checked = 0;
        for case in 0..instances {
            let cin = 1 + rng.next_below(6);
            let divs: Vec<usize> = (1..=cin).filter(|g| cin % g == 0).collect();
            let groups = divs[rng.next_below(divs.len())];
            let cout = groups * (1 + rng.next_below(3));
            let stride = 1 + rng.next_below(2);
            let params = ConvParams {
                in_channels: cin,
                out_channels: cout,
                kernel: (3, 3),
                stride,
                padding: 1,
                groups,
                has_bias: case % 3 == 0,
            };
            let mut layer = Conv2d::<f64>::new(params, &mut rng).unwrap();
            let input = rand_tensor(shape(1 + rng.next_below(2), cin, 5, 5), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9000 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn depthwise_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6002);
        let mut checked = 0;
        for case in 0..instances {
            let c = 1 + rng.next_below(6);
            let stride = 1 + rng.next_below(2);
            let mut layer = DepthwiseConv::<f64>::new(c, 3, stride, 1, &mut rng);
            let input = rand_tensor(shape(2, c, 6, 6), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9100 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn gdconv_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6003);
        let mut checked = 0;
        for case in 0..instances {
            let c = 1 + rng.next_below(8);
            let k = 3 + rng.next_below(3);
            let mut layer = GdConv::<f64>::new(c, k, &mut rng);
            let input = rand_tensor(shape(2, c, k, k), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9200 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn batchnorm_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6004);
        let mut checked = 0;
        for case in 0..instances {
            let c = 1 + rng.next_below(5);
            let mut layer = BatchNorm::<f64>::new(c);
            for v in &mut layer.gamma {
                *v = 0.5 + rng.next_f64();
            }
            for v in &mut layer.beta {
                *v = rng.next_normal() * 0.2;
            }
            let input = rand_tensor(shape(3, c, 4, 4), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9300 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn activation_cases(kind: ActivationKind, instances: usize) -> usize {
        let mut rng = Rng::new(0x6005);
        let mut checked = 0;
        for case in 0..instances {
            let c = 1 + rng.next_below(6);
            let mut layer = Activation::<f64>::new(kind, c);
            let input = match kind {
                ActivationKind::Relu | ActivationKind::PRelu => {
                    rand_tensor_off_zero(shape(2, c, 4, 4), &mut rng)
                }
                _ => rand_tensor(shape(2, c, 4, 4), &mut rng),
            };
            checked += check_layer_gradients(&mut layer, &input, 0x9400 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn maxpool_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6006);
        let mut checked = 0;
        for case in 0..instances {
            let mut layer = MaxPool2::<f64>::new();
            let input = rand_tensor_distinct(shape(2, 2, 6, 6), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9500 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn linear_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6007);
        let mut checked = 0;
        for case in 0..instances {
            let i = 1 + rng.next_below(8);
            let o = 1 + rng.next_below(8);
            let mut layer = Linear::<f64>::new(i, o, case % 2 == 0, &mut rng);
            let input = rand_tensor(shape(3, i, 1, 1), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9600 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn shuffle_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6008);
        let mut checked = 0;
        for case in 0..instances {
            let g = [2usize, 3, 4][rng.next_below(3)];
            let c = g * (1 + rng.next_below(4));
            let mut layer = ChannelShuffle::<f64>::new(g);
            let input = rand_tensor(shape(2, c, 3, 3), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9700 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn uneven_pointwise_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x6009);
        let mut checked = 0;
        for case in 0..instances {
            let cin = 2 + rng.next_below(10);
            let cout = 2 + rng.next_below(10);
            let ratio = 0.2 + rng.next_f64() * 0.4;
            let ranges = if case % 2 == 0 {
                partition_groups(cin, cout, ratio)
            } else {
                channel_share_cover(cin, cout, ratio)
            };
            let mut layer = UnevenPointwise::<f64>::new(cin, cout, ranges, &mut rng).unwrap();
            let input = rand_tensor(shape(2, cin, 4, 4), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9800 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn se_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x600A);
        let mut checked = 0;
        for case in 0..instances {
            let c = 2 + rng.next_below(8);
            let mut layer = SeModule::<f64>::new(c, 4, &mut rng);
            let input = rand_tensor(shape(2, c, 4, 4), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9900 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn skip_branch_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x600B);
        let mut checked = 0;
        for case in 0..instances {
            let cin = 1 + rng.next_below(6);
            let cout = 1 + rng.next_below(6);
            let mut layer = SkipBranch::<f64>::new(cin, cout, &mut rng).unwrap();
            let input = rand_tensor_distinct(shape(2, cin, 6, 6), &mut rng);
            checked += check_layer_gradients(&mut layer, &input, 0x9A00 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn block_cases(variant: BlockVariant, instances: usize) -> usize {
        let mut rng = Rng::new(match variant {
            BlockVariant::SeesawShuffle => 0x600C,
            BlockVariant::SeesawShare => 0x600D,
            BlockVariant::InvertedResidual => 0x600E,
        });
        let mut checked = 0;
        for case in 0..instances {
            let cin = 4 + 2 * rng.next_below(3);
            let stride = 1 + (case % 2);
            let residual = stride == 1 && case % 4 < 2;
            let cout = if residual { cin } else { 4 + 2 * rng.next_below(3) };
            let exp = 8 + 4 * rng.next_below(2);
            let mut cfg = BlockConfig::seesaw(variant, cin, exp, cout, stride, residual);
            cfg.use_se = true;
            if variant == BlockVariant::InvertedResidual {
                cfg.activation = ActivationKind::PRelu;
            }
            let mut block = SeesawBlock::<f64>::new(cfg, &mut rng).unwrap();
            let input = rand_tensor_off_zero(shape(2, cin, 6, 6), &mut rng);
            checked += check_layer_gradients(&mut block, &input, 0xB000 + case as u64, TOL).checked;
        }
        checked
    }

    pub fn skip_block_cases(instances: usize) -> usize {
        let mut rng = Rng::new(0x600F);
        let mut checked = 0;
        for case in 0..instances {
            let cin = 4 + 2 * rng.next_below(3);
            let cout = 4 + 2 * rng.next_below(3);
            let mut cfg = BlockConfig::seesaw(BlockVariant::SeesawShuffle, cin, 12, cout, 2, false);
            cfg.downsample_skip = true;
            let mut block = SeesawBlock::<f64>::new(cfg, &mut rng).unwrap();
            let input = rand_tensor_distinct(shape(2, cin, 6, 6), &mut rng);
            checked += check_layer_gradients(&mut block, &input, 0x9E00 + case as u64, TOL).checked;
        }
        checked
    }

    /// The whole sweep; returns total gradient components compared.
    pub fn run_all(instances: usize) -> usize {
        let mut checked = 0;
        checked += conv2d_cases(instances);
        checked += depthwise_cases(instances);
        checked += gdconv_cases(instances);
        checked += batchnorm_cases(instances);
        for kind in [
            ActivationKind::Swish,
            ActivationKind::Sigmoid,
            ActivationKind::Relu,
            ActivationKind::PRelu,
        ] {
            checked += activation_cases(kind, instances);
        }
        checked += maxpool_cases(instances);
        checked += linear_cases(instances);
        checked += shuffle_cases(instances);
        checked += uneven_pointwise_cases(instances);
        checked += se_cases(instances);
        checked += skip_branch_cases(instances);
        checked += block_cases(BlockVariant::SeesawShuffle, instances);
        checked += block_cases(BlockVariant::SeesawShare, instances);
        checked += block_cases(BlockVariant::InvertedResidual, instances);
        checked += skip_block_cases(instances);
        checked
    }
}
