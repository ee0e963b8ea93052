//! Analytic parameter and multiply-accumulate cost model.
//!
//! Counting rule: one MAdd is one multiply-accumulate, and only convolutional
//! and fully connected layers are counted. Batch norm, activations (sigmoid
//! and swish included), channel shuffles, pooling and residual adds cost zero
//! MAdds. Parameter counts include batch-norm gamma/beta and PReLU slopes but
//! not running statistics, matching exactly what a built model serializes as
//! trainable tensors.

use crate::arch::{instantiate, layer_out_shape, LayerKind, ModelSpec};
use crate::blocks::{pointwise_ranges, BlockConfig};
use crate::error::Result;
use crate::ops::ActivationKind;
use crate::tensor::Shape;

pub const COUNTING_RULE: &str =
    "MAdds count convolutional and fully connected layers only; one MAdd per multiply-accumulate; \
     batch norm, activations, shuffle, pooling and residual adds cost 0; params include BN gamma/beta \
     and PReLU slopes, exclude running statistics";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub madds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub model: String,
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_madds: u64,
    pub counting_rule: &'static str,
}

fn act_params(kind: ActivationKind, channels: usize) -> u64 {
    match kind {
        ActivationKind::PRelu => channels as u64,
        _ => 0,
    }
}

fn bn_params(channels: usize) -> u64 {
    2 * channels as u64
}

fn block_cost(cfg: &BlockConfig, input: Shape, output: Shape) -> (u64, u64) {
    let e = cfg.expansion_channels as u64;
    let hw_in = (input.h * input.w) as u64;
    let hw_mid = (output.h * output.w) as u64;
    let mut params = 0u64;
    let mut madds = 0u64;

    // Expansion pointwise over its channel groups, at the input resolution.
    for g in pointwise_ranges(cfg.variant, cfg.in_channels, cfg.expansion_channels, cfg.split_ratio) {
        let w = (g.in_width() * g.out_width()) as u64;
        params += w;
        madds += hw_in * w;
    }
    params += bn_params(cfg.expansion_channels) + act_params(cfg.activation, cfg.expansion_channels);

    // Depthwise 3x3 at the post-stride resolution.
    params += 9 * e + bn_params(cfg.expansion_channels) + act_params(cfg.activation, cfg.expansion_channels);
    madds += hw_mid * 9 * e;

    // Squeeze-and-excitation: two biased FC layers; the gate itself is free.
    if cfg.use_se {
        let red = (cfg.expansion_channels / cfg.se_reduction).max(1) as u64;
        params += e * red + red + red * e + e;
        madds += 2 * e * red;
    }

    // Linear projection pointwise at the post-stride resolution.
    for g in pointwise_ranges(cfg.variant, cfg.expansion_channels, cfg.out_channels, cfg.split_ratio) {
        let w = (g.in_width() * g.out_width()) as u64;
        params += w;
        madds += hw_mid * w;
    }
    params += bn_params(cfg.out_channels);

    // Pooled 1x1 skip branch (max pool is free, the conv is not).
    if cfg.downsample_skip {
        let w = (cfg.in_channels * cfg.out_channels) as u64;
        params += w + bn_params(cfg.out_channels);
        madds += hw_mid * w;
    }

    (params, madds)
}

/// Parameters and MAdds of one instantiated layer at `input` resolution.
pub fn count_layer(kind: &LayerKind, input: Shape) -> Result<(u64, u64)> {
    let output = layer_out_shape(kind, input)?;
    let hw_out = (output.h * output.w) as u64;
    Ok(match *kind {
        LayerKind::StemConv { out_channels, activation, .. } => {
            let w = (input.c * 9 * out_channels) as u64;
            (
                w + bn_params(out_channels) + act_params(activation, out_channels),
                hw_out * w,
            )
        }
        LayerKind::DwConv { kernel, activation } => {
            let w = (input.c * kernel * kernel) as u64;
            (
                w + bn_params(input.c) + act_params(activation, input.c),
                hw_out * w,
            )
        }
        LayerKind::Block(cfg) => block_cost(&cfg, input, output),
        LayerKind::HeadConv { out_channels, activation } => {
            let w = (input.c * out_channels) as u64;
            (
                w + bn_params(out_channels) + act_params(activation, out_channels),
                hw_out * w,
            )
        }
        LayerKind::GdConv { kernel } => {
            let w = (input.c * kernel * kernel) as u64;
            (w + bn_params(input.c), w)
        }
        LayerKind::EmbeddingLinear { out_features } => {
            let w = (input.c * out_features) as u64;
            (w, w)
        }
    })
}

/// Full per-layer cost report for a spec at its declared input size.
pub fn count_model(spec: &ModelSpec) -> Result<CostReport> {
    spec.validate()?;
    let mut layers = Vec::new();
    let mut cur = spec.input_shape(1);
    let mut total_params = 0u64;
    let mut total_madds = 0u64;
    for (name, kind) in instantiate(spec) {
        let (params, madds) = count_layer(&kind, cur)?;
        cur = layer_out_shape(&kind, cur)?;
        total_params += params;
        total_madds += madds;
        layers.push(LayerCost { name, params, madds });
    }
    Ok(CostReport {
        model: spec.name.clone(),
        layers,
        total_params,
        total_madds,
        counting_rule: COUNTING_RULE,
    })
}

/// Render a raw count the way the published tables do: one decimal, M = 1e6.
pub fn format_count(n: u64) -> String {
    if n >= 1_000_000_000 {
        format!("{:.1}G", n as f64 / 1e9)
    } else if n >= 1_000_000 {
        format!("{:.1}M", n as f64 / 1e6)
    } else if n >= 1_000 {
        format!("{:.1}K", n as f64 / 1e3)
    } else {
        n.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub name: String,
    pub params_a: u64,
    pub params_b: u64,
    pub madds_a: u64,
    pub madds_b: u64,
}

/// Side-by-side totals and ratios of two reports (`a` relative to `b`).
#[derive(Debug, Clone)]
pub struct CostComparison {
    pub model_a: String,
    pub model_b: String,
    pub rows: Vec<ComparisonRow>,
    pub params_delta: i64,
    pub madds_delta: i64,
    pub params_ratio: f64,
    pub madds_ratio: f64,
}

pub fn compare_reports(a: &CostReport, b: &CostReport) -> CostComparison {
    let rows = a
        .layers
        .iter()
        .map(Some)
        .chain(std::iter::repeat(None))
        .zip(b.layers.iter().map(Some).chain(std::iter::repeat(None)))
        .take(a.layers.len().max(b.layers.len()))
        .map(|(la, lb)| ComparisonRow {
            name: la
                .or(lb)
                .map(|l| l.name.clone())
                .unwrap_or_default(),
            params_a: la.map_or(0, |l| l.params),
            params_b: lb.map_or(0, |l| l.params),
            madds_a: la.map_or(0, |l| l.madds),
            madds_b: lb.map_or(0, |l| l.madds),
        })
        .collect();
    CostComparison {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        rows,
        params_delta: a.total_params as i64 - b.total_params as i64,
        madds_delta: a.total_madds as i64 - b.total_madds as i64,
        params_ratio: a.total_params as f64 / b.total_params as f64,
        madds_ratio: a.total_madds as f64 / b.total_madds as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{self, model_by_name};
    use crate::tensor::shape;

    #[test]
    fn stem_conv_formula() {
        // 56*56*64*(3*3*3) MAdds, 3*3*3*64 weights (+BN)
        let kind = LayerKind::StemConv {
            out_channels: 64,
            stride: 2,
            activation: ActivationKind::Swish,
        };
        let (params, madds) = count_layer(&kind, shape(1, 3, 112, 112)).unwrap();
        assert_eq!(madds, 5_419_008);
        assert_eq!(params, 1728 + 128);
    }

    #[test]
    fn embedding_linear_is_in_times_out() {
        let kind = LayerKind::EmbeddingLinear { out_features: 512 };
        let (params, madds) = count_layer(&kind, shape(1, 512, 1, 1)).unwrap();
        assert_eq!(params, 262_144);
        assert_eq!(madds, 262_144);
    }

    #[test]
    fn activation_toggle_changes_no_madds() {
        let mut spec = arch::spec_seesawfacenet(crate::blocks::BlockVariant::SeesawShuffle);
        let swish = count_model(&spec).unwrap();
        for layer in &mut spec.layers {
            match &mut layer.kind {
                LayerKind::StemConv { activation, .. }
                | LayerKind::DwConv { activation, .. }
                | LayerKind::HeadConv { activation, .. } => *activation = ActivationKind::PRelu,
                LayerKind::Block(cfg) => cfg.activation = ActivationKind::PRelu,
                _ => {}
            }
        }
        let prelu = count_model(&spec).unwrap();
        assert_eq!(swish.total_madds, prelu.total_madds);
        assert!(prelu.total_params > swish.total_params);
    }

    #[test]
    fn totals_equal_layer_sums() {
        let report = count_model(&model_by_name("mobilefacenet").unwrap()).unwrap();
        assert_eq!(report.total_params, report.layers.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(report.total_madds, report.layers.iter().map(|l| l.madds).sum::<u64>());
    }

    #[test]
    fn inverted_residual_block_closed_form() {
        // Conv weights of a 64 -> 128 -> 64 block: 64*128 + 128*9 + 128*64,
        // plus gamma/beta for the three BNs and two PReLU slope sets.
        let cfg = BlockConfig::inverted_residual(64, 128, 64, 1, true);
        let (params, _) = count_layer(&LayerKind::Block(cfg), shape(1, 64, 28, 28)).unwrap();
        let conv = 64 * 128 + 128 * 9 + 128 * 64;
        let bn = 2 * (128 + 128 + 64);
        let prelu = 2 * 128;
        assert_eq!(params, (conv + bn + prelu) as u64);
    }

    #[test]
    fn grouped_pointwise_saves_madds() {
        // Widths (a, c-a) x (b, c_out-b): a*b + (c-a)(c_out-b) < c*c_out.
        for (c, c_out) in [(64usize, 128usize), (128, 256), (512, 128)] {
            let groups = pointwise_ranges(crate::blocks::BlockVariant::SeesawShuffle, c, c_out, 0.25);
            let grouped: usize = groups.iter().map(|g| g.in_width() * g.out_width()).sum();
            assert!(grouped < c * c_out, "{c}->{c_out}: {grouped}");
        }
    }

    #[test]
    fn seesaw_block_is_cheaper_than_inverted_residual() {
        let input = shape(1, 64, 28, 28);
        let seesaw = LayerKind::Block(BlockConfig::seesaw(
            crate::blocks::BlockVariant::SeesawShuffle,
            64,
            128,
            64,
            1,
            true,
        ));
        let mut ir_cfg = BlockConfig::inverted_residual(64, 128, 64, 1, true);
        // Same activation and SE setting so only the grouping differs.
        ir_cfg.activation = ActivationKind::Swish;
        ir_cfg.use_se = true;
        let ir = LayerKind::Block(ir_cfg);
        let (_, madds_seesaw) = count_layer(&seesaw, input).unwrap();
        let (_, madds_ir) = count_layer(&ir, input).unwrap();
        assert!(madds_seesaw < madds_ir, "{madds_seesaw} vs {madds_ir}");
    }

    #[test]
    fn madds_grow_with_width_and_depth() {
        let base = count_model(&arch::spec_seesaw_toy()).unwrap().total_madds;

        let mut wider = arch::spec_seesaw_toy();
        for layer in &mut wider.layers {
            if let LayerKind::Block(cfg) = &mut layer.kind {
                cfg.expansion_channels *= 2;
            }
        }
        assert!(count_model(&wider).unwrap().total_madds > base);

        let mut deeper = arch::spec_seesaw_toy();
        for layer in &mut deeper.layers {
            if let LayerKind::Block(cfg) = layer.kind {
                if cfg.residual {
                    layer.repeat += 1;
                }
            }
        }
        assert!(count_model(&deeper).unwrap().total_madds > base);
    }

    #[test]
    fn comparison_with_self_is_unity() {
        let report = count_model(&model_by_name("seesawfacenet-shuffle").unwrap()).unwrap();
        let cmp = compare_reports(&report, &report);
        assert_eq!(cmp.params_delta, 0);
        assert_eq!(cmp.madds_delta, 0);
        assert!((cmp.madds_ratio - 1.0).abs() < 1e-12);
        assert!(cmp.rows.iter().all(|r| r.params_a == r.params_b && r.madds_a == r.madds_b));
    }

    #[test]
    fn abstract_ratios() {
        // 146M vs 221M ~ 0.66; 526M vs 12.1G ~ 0.0435.
        let mk = |madds: u64| CostReport {
            model: String::new(),
            layers: Vec::new(),
            total_params: 1,
            total_madds: madds,
            counting_rule: COUNTING_RULE,
        };
        let r = compare_reports(&mk(146_000_000), &mk(221_000_000));
        assert!((r.madds_ratio - 0.661).abs() < 5e-3);
        let r = compare_reports(&mk(526_000_000), &mk(12_100_000_000));
        assert!((r.madds_ratio - 0.0435).abs() < 5e-4);
    }

    #[test]
    fn count_formatting_matches_table_convention() {
        assert_eq!(format_count(221_161_984), "221.2M");
        assert_eq!(format_count(1_199_488), "1.2M");
        assert_eq!(format_count(12_100_000_000), "12.1G");
        assert_eq!(format_count(532), "532");
        assert_eq!(format_count(25_088), "25.1K");
    }
}
