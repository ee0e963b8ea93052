use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use seesaw_bench::{block_fixture, depthwise_fixture, stem_fixture};
use seesaw_core::blocks::BlockVariant;
use seesaw_core::layer::Layer;
use seesaw_core::ops::{conv2d_forward, depthwise_conv2d_forward, Mode};

fn bench_conv(c: &mut Criterion) {
    let (input, weights, params) = stem_fixture();
    c.bench_function("conv2d_stem_112", |b| {
        b.iter(|| conv2d_forward(black_box(&input), black_box(&weights), &params).unwrap())
    });

    let (input, weights) = depthwise_fixture();
    c.bench_function("depthwise_128x28", |b| {
        b.iter(|| depthwise_conv2d_forward(black_box(&input), black_box(&weights), 1, 1).unwrap())
    });
}

fn bench_blocks(c: &mut Criterion) {
    for variant in [
        BlockVariant::SeesawShuffle,
        BlockVariant::SeesawShare,
        BlockVariant::InvertedResidual,
    ] {
        let (mut block, input) = block_fixture(variant);
        c.bench_function(&format!("block_{}_64x28", variant.name()), |b| {
            b.iter(|| block.forward(black_box(&input), Mode::Infer).unwrap())
        });
    }
}

criterion_group!(kernels, bench_conv, bench_blocks);
criterion_main!(kernels);
