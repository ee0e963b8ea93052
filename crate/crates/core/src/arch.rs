//! Declarative architecture specs and the builder that turns them into
//! executable graphs.
//!
//! Each predefined spec reproduces one published layer table row for row;
//! shapes are propagated and validated before any weight is allocated.

use crate::blocks::{BlockConfig, BlockVariant, SeesawBlock};
use crate::error::{Error, Result};
use crate::layer::{
    visit_child, visit_child_mut, visit_child_trainable, Activation, BatchNorm, Conv2d,
    DepthwiseConv, GdConv, Layer, Linear, ParamKind,
};
use crate::ops::{ActivationKind, ConvParams, Mode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// One row of an architecture table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    StemConv {
        out_channels: usize,
        stride: usize,
        activation: ActivationKind,
    },
    DwConv {
        kernel: usize,
        activation: ActivationKind,
    },
    Block(BlockConfig),
    HeadConv {
        out_channels: usize,
        activation: ActivationKind,
    },
    GdConv {
        kernel: usize,
    },
    EmbeddingLinear {
        out_features: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub repeat: usize,
}

impl LayerSpec {
    pub fn once(kind: LayerKind) -> LayerSpec {
        LayerSpec { kind, repeat: 1 }
    }

    pub fn repeated(kind: LayerKind, repeat: usize) -> LayerSpec {
        LayerSpec { kind, repeat }
    }
}

/// A named architecture: input geometry plus ordered layer rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    /// `(channels, height, width)` of one input image.
    pub input: (usize, usize, usize),
    pub embedding_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape {
            n: batch,
            c: self.input.0,
            h: self.input.1,
            w: self.input.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        for (i, spec) in self.layers.iter().enumerate() {
            if spec.repeat == 0 {
                return Err(Error::Config(format!("layer {i}: repeat must be >= 1")));
            }
            if let LayerKind::Block(cfg) = spec.kind {
                cfg.validate()?;
                if spec.repeat > 1 && !cfg.residual {
                    return Err(Error::Config(format!(
                        "layer {i}: repeated blocks must be residual (stride 1, in == out)"
                    )));
                }
            }
        }
        // Shape chaining is the real gate.
        propagate_shapes(self)?;
        Ok(())
    }
}

/// Expand repeats: `(name, kind)` per instantiated layer. Names are stable
/// and become weight-record prefixes.
pub fn instantiate(spec: &ModelSpec) -> Vec<(String, LayerKind)> {
    let mut out = Vec::new();
    for layer in &spec.layers {
        for _ in 0..layer.repeat {
            let base = match layer.kind {
                LayerKind::StemConv { .. } => "stem",
                LayerKind::DwConv { .. } => "dwconv",
                LayerKind::Block(_) => "block",
                LayerKind::HeadConv { .. } => "head",
                LayerKind::GdConv { .. } => "gdconv",
                LayerKind::EmbeddingLinear { .. } => "embedding",
            };
            out.push((format!("l{:02}_{base}", out.len()), layer.kind));
        }
    }
    out
}

/// Activation shape after each instantiated layer, starting with the input.
/// The first inconsistent transition is reported by layer name.
pub fn propagate_shapes(spec: &ModelSpec) -> Result<Vec<Shape>> {
    let mut shapes = vec![spec.input_shape(1)];
    for (name, kind) in instantiate(spec) {
        let cur = *shapes.last().expect("non-empty");
        let next = layer_out_shape(&kind, cur).map_err(|e| {
            Error::Config(format!("{name}: broken layer transition from {cur}: {e}"))
        })?;
        shapes.push(next);
    }
    let last = *shapes.last().expect("non-empty");
    if last.c != spec.embedding_dim || last.h != 1 || last.w != 1 {
        return Err(Error::Config(format!(
            "final activation {last} is not a {}-dimensional embedding",
            spec.embedding_dim
        )));
    }
    Ok(shapes)
}

/// Output shape of a single layer row given its input shape.
pub fn layer_out_shape(kind: &LayerKind, input: Shape) -> Result<Shape> {
    match *kind {
        LayerKind::StemConv { out_channels, stride, .. } => {
            ConvParams::new(input.c, out_channels, 3, stride, 1).out_shape(input)
        }
        LayerKind::DwConv { kernel, .. } => {
            ConvParams::new(input.c, input.c, kernel, 1, (kernel - 1) / 2)
                .with_groups(input.c)
                .out_shape(input)
        }
        LayerKind::Block(cfg) => {
            if input.c != cfg.in_channels {
                return Err(Error::shape(
                    "block",
                    format!("input channels {} != block in_channels {}", input.c, cfg.in_channels),
                ));
            }
            ConvParams::new(cfg.expansion_channels, cfg.expansion_channels, 3, cfg.stride, 1)
                .with_groups(cfg.expansion_channels)
                .out_shape(Shape::new(input.n, cfg.expansion_channels, input.h, input.w)?)
                .and_then(|mid| Shape::new(mid.n, cfg.out_channels, mid.h, mid.w))
        }
        LayerKind::HeadConv { out_channels, .. } => {
            ConvParams::new(input.c, out_channels, 1, 1, 0).out_shape(input)
        }
        LayerKind::GdConv { kernel } => {
            if input.h != kernel || input.w != kernel {
                return Err(Error::shape(
                    "gdconv",
                    format!("spatial {}x{} must equal kernel {kernel}", input.h, input.w),
                ));
            }
            Shape::new(input.n, input.c, 1, 1)
        }
        LayerKind::EmbeddingLinear { out_features } => {
            if input.h != 1 || input.w != 1 {
                return Err(Error::shape(
                    "embedding_linear",
                    format!("expects pooled (c,1,1) input, got {input}"),
                ));
            }
            Shape::new(input.n, out_features, 1, 1)
        }
    }
}

// ---------------------------------------------------------------------------
// Predefined specs

fn seesaw(variant: BlockVariant, c_in: usize, exp: usize, c_out: usize, stride: usize, residual: bool) -> BlockConfig {
    BlockConfig::seesaw(variant, c_in, exp, c_out, stride, residual)
}

/// SeesawFaceNet: stem 64, stages 64/128/128 with repeats 1,4,1,6,1,2,
/// 512-wide head, global depthwise 7x7, 512-d embedding.
pub fn spec_seesawfacenet(variant: BlockVariant) -> ModelSpec {
    let act = ActivationKind::Swish;
    let name = match variant {
        BlockVariant::SeesawShare => "seesawfacenet-share",
        _ => "seesawfacenet-shuffle",
    };
    ModelSpec {
        name: name.into(),
        input: (3, 112, 112),
        embedding_dim: 512,
        layers: vec![
            LayerSpec::once(LayerKind::StemConv { out_channels: 64, stride: 2, activation: act }),
            LayerSpec::once(LayerKind::DwConv { kernel: 3, activation: act }),
            LayerSpec::once(LayerKind::Block(seesaw(variant, 64, 128, 64, 2, false))),
            LayerSpec::repeated(LayerKind::Block(seesaw(variant, 64, 128, 64, 1, true)), 4),
            LayerSpec::once(LayerKind::Block(seesaw(variant, 64, 256, 128, 2, false))),
            LayerSpec::repeated(LayerKind::Block(seesaw(variant, 128, 256, 128, 1, true)), 6),
            LayerSpec::once(LayerKind::Block(seesaw(variant, 128, 512, 128, 2, false))),
            LayerSpec::repeated(LayerKind::Block(seesaw(variant, 128, 256, 128, 1, true)), 2),
            LayerSpec::once(LayerKind::HeadConv { out_channels: 512, activation: act }),
            LayerSpec::once(LayerKind::GdConv { kernel: 7 }),
            LayerSpec::once(LayerKind::EmbeddingLinear { out_features: 512 }),
        ],
    }
}

/// The MobiFace-parameterized variant: repeats 1,2,1,3,1,6 with a fast
/// downsampling last stage that widens to 256 channels (expansion 512).
pub fn spec_seesawfacenet_mobi() -> ModelSpec {
    let v = BlockVariant::SeesawShuffle;
    let act = ActivationKind::Swish;
    ModelSpec {
        name: "seesawfacenet-mobi".into(),
        input: (3, 112, 112),
        embedding_dim: 512,
        layers: vec![
            LayerSpec::once(LayerKind::StemConv { out_channels: 64, stride: 2, activation: act }),
            LayerSpec::once(LayerKind::DwConv { kernel: 3, activation: act }),
            LayerSpec::once(LayerKind::Block(seesaw(v, 64, 128, 64, 2, false))),
            LayerSpec::repeated(LayerKind::Block(seesaw(v, 64, 128, 64, 1, true)), 2),
            LayerSpec::once(LayerKind::Block(seesaw(v, 64, 256, 128, 2, false))),
            LayerSpec::repeated(LayerKind::Block(seesaw(v, 128, 256, 128, 1, true)), 3),
            LayerSpec::once(LayerKind::Block(seesaw(v, 128, 512, 256, 2, false))),
            LayerSpec::repeated(LayerKind::Block(seesaw(v, 256, 512, 256, 1, true)), 6),
            LayerSpec::once(LayerKind::HeadConv { out_channels: 512, activation: act }),
            LayerSpec::once(LayerKind::GdConv { kernel: 7 }),
            LayerSpec::once(LayerKind::EmbeddingLinear { out_features: 512 }),
        ],
    }
}

/// Deeper/wider variant: stem 96, stages 96/192/192 with repeats 1,8,1,12,1,4.
/// `v2` attaches the pooled 1x1 skip branch to every stride-2 block.
pub fn spec_dw_seesawfacenet(v2: bool) -> ModelSpec {
    let v = BlockVariant::SeesawShuffle;
    let act = ActivationKind::Swish;
    let down = |c_in: usize, exp: usize, c_out: usize| {
        let mut cfg = seesaw(v, c_in, exp, c_out, 2, false);
        cfg.downsample_skip = v2;
        cfg
    };
    ModelSpec {
        name: if v2 { "dw-seesawfacenet-v2".into() } else { "dw-seesawfacenet-v1".into() },
        input: (3, 112, 112),
        embedding_dim: 512,
        layers: vec![
            LayerSpec::once(LayerKind::StemConv { out_channels: 96, stride: 2, activation: act }),
            LayerSpec::once(LayerKind::DwConv { kernel: 3, activation: act }),
            LayerSpec::once(LayerKind::Block(down(96, 128, 96))),
            LayerSpec::repeated(LayerKind::Block(seesaw(v, 96, 192, 96, 1, true)), 8),
            LayerSpec::once(LayerKind::Block(down(96, 384, 192))),
            LayerSpec::repeated(LayerKind::Block(seesaw(v, 192, 384, 192, 1, true)), 12),
            LayerSpec::once(LayerKind::Block(down(192, 768, 192))),
            LayerSpec::repeated(LayerKind::Block(seesaw(v, 192, 384, 192, 1, true)), 4),
            LayerSpec::once(LayerKind::HeadConv { out_channels: 512, activation: act }),
            LayerSpec::once(LayerKind::GdConv { kernel: 7 }),
            LayerSpec::once(LayerKind::EmbeddingLinear { out_features: 512 }),
        ],
    }
}

/// MobileFaceNet with a 512-d embedding: plain inverted-residual bottlenecks,
/// PReLU, no squeeze-and-excitation. The cost/ablation baseline.
pub fn spec_mobilefacenet_baseline() -> ModelSpec {
    let act = ActivationKind::PRelu;
    let ir = BlockConfig::inverted_residual;
    ModelSpec {
        name: "mobilefacenet".into(),
        input: (3, 112, 112),
        embedding_dim: 512,
        layers: vec![
            LayerSpec::once(LayerKind::StemConv { out_channels: 64, stride: 2, activation: act }),
            LayerSpec::once(LayerKind::DwConv { kernel: 3, activation: act }),
            LayerSpec::once(LayerKind::Block(ir(64, 128, 64, 2, false))),
            LayerSpec::repeated(LayerKind::Block(ir(64, 128, 64, 1, true)), 4),
            LayerSpec::once(LayerKind::Block(ir(64, 256, 128, 2, false))),
            LayerSpec::repeated(LayerKind::Block(ir(128, 256, 128, 1, true)), 6),
            LayerSpec::once(LayerKind::Block(ir(128, 512, 128, 2, false))),
            LayerSpec::repeated(LayerKind::Block(ir(128, 256, 128, 1, true)), 2),
            LayerSpec::once(LayerKind::HeadConv { out_channels: 512, activation: act }),
            LayerSpec::once(LayerKind::GdConv { kernel: 7 }),
            LayerSpec::once(LayerKind::EmbeddingLinear { out_features: 512 }),
        ],
    }
}

/// Width-reduced SeesawFaceNet for desk-scale training runs: 28x28 inputs,
/// 16-wide stem, one downsampling stage, 128-d embedding.
pub fn spec_seesaw_toy() -> ModelSpec {
    let v = BlockVariant::SeesawShuffle;
    let act = ActivationKind::Swish;
    ModelSpec {
        name: "seesaw-toy".into(),
        input: (3, 28, 28),
        embedding_dim: 128,
        layers: vec![
            LayerSpec::once(LayerKind::StemConv { out_channels: 16, stride: 2, activation: act }),
            LayerSpec::once(LayerKind::DwConv { kernel: 3, activation: act }),
            LayerSpec::once(LayerKind::Block(seesaw(v, 16, 32, 16, 2, false))),
            LayerSpec::repeated(LayerKind::Block(seesaw(v, 16, 32, 16, 1, true)), 2),
            LayerSpec::once(LayerKind::HeadConv { out_channels: 128, activation: act }),
            LayerSpec::once(LayerKind::GdConv { kernel: 7 }),
            LayerSpec::once(LayerKind::EmbeddingLinear { out_features: 128 }),
        ],
    }
}

pub const KNOWN_MODELS: &[&str] = &[
    "seesawfacenet-shuffle",
    "seesawfacenet-share",
    "seesawfacenet-mobi",
    "dw-seesawfacenet-v1",
    "dw-seesawfacenet-v2",
    "mobilefacenet",
    "seesaw-toy",
];

pub fn model_by_name(name: &str) -> Result<ModelSpec> {
    match name {
        "seesawfacenet-shuffle" => Ok(spec_seesawfacenet(BlockVariant::SeesawShuffle)),
        "seesawfacenet-share" => Ok(spec_seesawfacenet(BlockVariant::SeesawShare)),
        "seesawfacenet-mobi" => Ok(spec_seesawfacenet_mobi()),
        "dw-seesawfacenet-v1" => Ok(spec_dw_seesawfacenet(false)),
        "dw-seesawfacenet-v2" => Ok(spec_dw_seesawfacenet(true)),
        "mobilefacenet" => Ok(spec_mobilefacenet_baseline()),
        "seesaw-toy" => Ok(spec_seesaw_toy()),
        _ => Err(Error::UnknownModel {
            name: name.into(),
            known: KNOWN_MODELS.join(", "),
        }),
    }
}

// ---------------------------------------------------------------------------
// Conv + BN (+ activation) rows

struct ConvBnAct<T> {
    name: &'static str,
    main: Box<dyn Layer<T>>,
    bn: BatchNorm<T>,
    act: Option<Activation<T>>,
}

impl<T: Scalar> Layer<T> for ConvBnAct<T> {
    fn kind(&self) -> &'static str {
        self.name
    }

    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = self.main.forward(input, mode)?;
        x = self.bn.forward(&x, mode)?;
        if let Some(act) = &mut self.act {
            x = act.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = grad_out.clone();
        if let Some(act) = &mut self.act {
            d = act.backward(&d)?;
        }
        d = self.bn.backward(&d)?;
        self.main.backward(&d)
    }

    fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        visit_child(self.main.as_ref(), "conv", f);
        visit_child(&self.bn, "bn", f);
        if let Some(act) = &self.act {
            visit_child(act, "act", f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        visit_child_mut(self.main.as_mut(), "conv", f);
        visit_child_mut(&mut self.bn, "bn", f);
        if let Some(act) = &mut self.act {
            visit_child_mut(act, "act", f);
        }
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        visit_child_trainable(self.main.as_mut(), "conv", f);
        visit_child_trainable(&mut self.bn, "bn", f);
        if let Some(act) = &mut self.act {
            visit_child_trainable(act, "act", f);
        }
    }
}

// ---------------------------------------------------------------------------
// ModelGraph

struct NamedLayer<T> {
    name: String,
    layer: Box<dyn Layer<T>>,
}

/// A built, executable model: ordered layers with instantiated weights.
///
/// Forward passes take `&mut self` because training-mode layers cache their
/// backward context (and batch norm updates running statistics). For
/// concurrent inference over disjoint batches, build one instance per thread
/// from the same spec/seed or load them from the same weight container.
pub struct ModelGraph<T> {
    pub name: String,
    pub input: (usize, usize, usize),
    pub embedding_dim: usize,
    pub seed: u64,
    layers: Vec<NamedLayer<T>>,
}

/// Instantiate a spec with deterministic He-normal weights. The same seed
/// yields bit-identical weights.
pub fn build_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ModelGraph<T>> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut layers: Vec<NamedLayer<T>> = Vec::new();
    let mut cur = spec.input_shape(1);
    for (name, kind) in instantiate(spec) {
        let layer: Box<dyn Layer<T>> = match kind {
            LayerKind::StemConv { out_channels, stride, activation } => Box::new(ConvBnAct {
                name: "stem_conv",
                main: Box::new(Conv2d::new(ConvParams::new(cur.c, out_channels, 3, stride, 1), &mut rng)?),
                bn: BatchNorm::new(out_channels),
                act: Some(Activation::new(activation, out_channels)),
            }),
            LayerKind::DwConv { kernel, activation } => Box::new(ConvBnAct {
                name: "dw_conv",
                main: Box::new(DepthwiseConv::new(cur.c, kernel, 1, (kernel - 1) / 2, &mut rng)),
                bn: BatchNorm::new(cur.c),
                act: Some(Activation::new(activation, cur.c)),
            }),
            LayerKind::Block(cfg) => Box::new(SeesawBlock::new(cfg, &mut rng)?),
            LayerKind::HeadConv { out_channels, activation } => Box::new(ConvBnAct {
                name: "head_conv",
                main: Box::new(Conv2d::new(ConvParams::new(cur.c, out_channels, 1, 1, 0), &mut rng)?),
                bn: BatchNorm::new(out_channels),
                act: Some(Activation::new(activation, out_channels)),
            }),
            LayerKind::GdConv { kernel } => Box::new(ConvBnAct {
                name: "gdconv",
                main: Box::new(GdConv::new(cur.c, kernel, &mut rng)),
                bn: BatchNorm::new(cur.c),
                act: None,
            }),
            LayerKind::EmbeddingLinear { out_features } => {
                Box::new(Linear::new(cur.c, out_features, false, &mut rng))
            }
        };
        cur = layer_out_shape(&kind, cur)?;
        layers.push(NamedLayer { name, layer });
    }
    Ok(ModelGraph {
        name: spec.name.clone(),
        input: spec.input,
        embedding_dim: spec.embedding_dim,
        seed,
        layers,
    })
}

impl<T: Scalar> ModelGraph<T> {
    /// Embed a batch of preprocessed images: `(n, 3, h, w)` to `(n, d, 1, 1)`.
    /// Embeddings are raw; callers L2-normalize where the protocol needs it.
    pub fn forward_embed(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = batch.shape();
        if (s.c, s.h, s.w) != self.input {
            return Err(Error::shape(
                "forward_embed",
                format!(
                    "batch {} does not match model input {}x{}x{}",
                    s, self.input.0, self.input.1, self.input.2
                ),
            ));
        }
        let mut x = batch.clone();
        for nl in &mut self.layers {
            x = nl.layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    /// Backpropagate an embedding gradient through the whole graph.
    pub fn backward(&mut self, grad_embeddings: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = grad_embeddings.clone();
        for nl in self.layers.iter_mut().rev() {
            d = nl.layer.backward(&d)?;
        }
        Ok(d)
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|nl| nl.name.as_str()).collect()
    }

    pub fn visit(&self, f: &mut dyn FnMut(ParamKind, &str, Shape, &[T])) {
        for nl in &self.layers {
            visit_child(nl.layer.as_ref(), &nl.name, f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(ParamKind, &str, Shape, &mut [T])) {
        for nl in &mut self.layers {
            visit_child_mut(nl.layer.as_mut(), &nl.name, f);
        }
    }

    pub fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        for nl in &mut self.layers {
            visit_child_trainable(nl.layer.as_mut(), &nl.name, f);
        }
    }

    pub fn zero_grads(&mut self) {
        for nl in &mut self.layers {
            nl.layer.zero_grads();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|nl| nl.layer.param_count()).sum()
    }
}
