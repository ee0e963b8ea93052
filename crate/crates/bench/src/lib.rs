//! Shared fixtures for the criterion benchmarks.

use seesaw_core::blocks::{BlockConfig, BlockVariant, SeesawBlock};
use seesaw_core::ops::ConvParams;
use seesaw_core::rng::Rng;
use seesaw_core::tensor::{Shape, Tensor};

pub fn rng() -> Rng {
    Rng::new(0xBE7C)
}

/// Stem-sized convolution: 3x3 stride 2 on a 112x112 RGB image.
pub fn stem_fixture() -> (Tensor<f32>, Tensor<f32>, ConvParams) {
    let mut rng = rng();
    let params = ConvParams::new(3, 64, 3, 2, 1);
    let input = Tensor::randn(Shape::new(1, 3, 112, 112).unwrap(), 1.0, &mut rng);
    let weights = Tensor::randn(params.weight_shape(), 0.1, &mut rng);
    (input, weights, params)
}

/// Mid-network depthwise convolution: 3x3 over 128 channels at 28x28.
pub fn depthwise_fixture() -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = rng();
    let input = Tensor::randn(Shape::new(1, 128, 28, 28).unwrap(), 1.0, &mut rng);
    let weights = Tensor::randn(Shape::new(128, 1, 3, 3).unwrap(), 0.1, &mut rng);
    (input, weights)
}

/// A residual Seesaw block at the 28x28x64 stage.
pub fn block_fixture(variant: BlockVariant) -> (SeesawBlock<f32>, Tensor<f32>) {
    let mut rng = rng();
    let cfg = BlockConfig::seesaw(variant, 64, 128, 64, 1, true);
    let block = SeesawBlock::new(cfg, &mut rng).unwrap();
    let input = Tensor::randn(Shape::new(1, 64, 28, 28).unwrap(), 1.0, &mut rng);
    (block, input)
}

pub fn face_batch(n: usize) -> Tensor<f32> {
    let mut rng = rng();
    Tensor::randn(Shape::new(n, 3, 112, 112).unwrap(), 0.5, &mut rng)
}
