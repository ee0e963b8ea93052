//! Property tests for the shape algebra and the structural invariants of the
//! building blocks.

mod common;

use proptest::prelude::*;
use seesaw_core::blocks::{channel_share_cover, channel_shuffle, partition_groups, uneven_split};
use seesaw_core::layer::Layer;
use seesaw_core::ops::{conv2d_forward, max_pool2d, ConvParams, Mode};
use seesaw_core::rng::Rng;
use seesaw_core::tensor::{shape, Tensor};
use seesaw_core::verify::normalize_pixel;

proptest! {
    // Output shape is the closed-form function of input shape and params.
    #[test]
    fn conv_shape_formula(
        n in 1usize..3,
        cin in 1usize..9,
        h in 1usize..17,
        w in 1usize..17,
        k in prop::sample::select(vec![1usize, 3, 5]),
        stride in 1usize..3,
        padding in 0usize..2,
        opg in 1usize..4,
    ) {
        prop_assume!(h + 2 * padding >= k && w + 2 * padding >= k);
        let params = ConvParams::new(cin, cin * opg, k, stride, padding).with_groups(cin);
        let input = Tensor::<f64>::zeros(shape(n, cin, h, w));
        let weights = Tensor::<f64>::zeros(params.weight_shape());
        let out = conv2d_forward(&input, &weights, &params).unwrap();
        prop_assert_eq!(out.shape().h, (h + 2 * padding - k) / stride + 1);
        prop_assert_eq!(out.shape().w, (w + 2 * padding - k) / stride + 1);
        prop_assert_eq!(out.shape().c, cin * opg);
        prop_assert_eq!(out.shape().n, n);
    }

    #[test]
    fn maxpool_shape_is_floor_halved(n in 1usize..3, c in 1usize..5, h in 2usize..17, w in 2usize..17) {
        let input = Tensor::<f32>::zeros(shape(n, c, h, w));
        let out = max_pool2d(&input).unwrap();
        prop_assert_eq!((out.shape().h, out.shape().w), (h / 2, w / 2));
    }

    // Shuffle is a value-preserving bijection; shuffle(g) then shuffle(c/g)
    // is the identity.
    #[test]
    fn shuffle_is_a_bijection(seed in 0u64..1000, g in 1usize..9, per in 1usize..9) {
        let c = g * per;
        let mut rng = Rng::new(seed);
        let t = Tensor::<f64>::randn(shape(1, c, 2, 3), 1.0, &mut rng);
        let once = channel_shuffle(&t, g).unwrap();

        let mut sorted_in: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        let mut sorted_out: Vec<u64> = once.data().iter().map(|v| v.to_bits()).collect();
        sorted_in.sort_unstable();
        sorted_out.sort_unstable();
        prop_assert_eq!(sorted_in, sorted_out);

        let back = channel_shuffle(&once, c / g).unwrap();
        prop_assert_eq!(back.data(), t.data());
    }

    // Both grouping schemes cover the input exactly and partition the output.
    #[test]
    fn groupings_cover_and_partition(cin in 1usize..129, cout in 1usize..129, ratio in 0.01f64..0.99) {
        for groups in [partition_groups(cin, cout, ratio), channel_share_cover(cin, cout, ratio)] {
            let mut in_cover = vec![false; cin];
            let mut out_cover = vec![0u8; cout];
            for g in &groups {
                prop_assert!(g.input.0 < g.input.1 && g.input.1 <= cin);
                prop_assert!(g.output.0 < g.output.1 && g.output.1 <= cout);
                in_cover[g.input.0..g.input.1].iter_mut().for_each(|v| *v = true);
                out_cover[g.output.0..g.output.1].iter_mut().for_each(|v| *v += 1);
            }
            prop_assert!(in_cover.iter().all(|v| *v), "input gap: {cin}->{cout} r={ratio}");
            prop_assert!(out_cover.iter().all(|v| *v == 1), "output not partitioned");
        }
    }

    // Share cover: whenever two groups exist, at least one channel is read
    // by both.
    #[test]
    fn share_cover_connects_groups(cin in 2usize..257, cout in 2usize..257, ratio in 0.01f64..0.99) {
        let groups = channel_share_cover(cin, cout, ratio);
        if groups.len() == 2 {
            prop_assert!(groups[1].input.0 < groups[0].input.1);
        }
    }

    #[test]
    fn uneven_split_parts_are_positive(c in 2usize..513, ratio in 0.01f64..0.99) {
        let (a, b) = uneven_split(c, ratio);
        prop_assert!(a >= 1 && b >= 1);
        prop_assert_eq!(a + b, c);
    }

    // Preprocessing is affine and invertible over the 8-bit range.
    #[test]
    fn preprocess_affine_invertible(p in 0u8..=255) {
        let v = normalize_pixel(p);
        prop_assert!((-1.0..=1.0).contains(&v));
        let back = (v * 128.0 + 127.5).round() as i64;
        prop_assert_eq!(back, p as i64);
    }
}

// SE gating keeps every scale strictly inside (0,1), so output magnitude
// never exceeds input magnitude elementwise.
#[test]
fn se_gating_is_contractive() {
    use seesaw_core::blocks::SeModule;
    let mut rng = Rng::new(0x5E);
    for case in 0..25 {
        let c = 1 + (case % 12);
        let mut se = SeModule::<f64>::new(c, 4, &mut rng);
        let x = Tensor::randn(shape(2, c, 5, 5), 1.5, &mut rng);
        let y = se.forward(&x, Mode::Infer).unwrap();
        for (yo, xo) in y.data().iter().zip(x.data().iter()) {
            assert!(yo.abs() <= xo.abs() + 1e-15, "|{yo}| > |{xo}|");
            if *xo != 0.0 {
                let gate = yo / xo;
                assert!(gate > 0.0 && gate < 1.0, "gate {gate} outside (0,1)");
            }
        }
    }
}

// Residual adds happen only when shapes match; the builder rejects the rest.
#[test]
fn residual_blocks_reject_shape_changes() {
    use seesaw_core::blocks::{BlockConfig, BlockVariant, SeesawBlock};
    let mut rng = Rng::new(1);
    let bad = BlockConfig {
        residual: true,
        ..BlockConfig::seesaw(BlockVariant::SeesawShuffle, 8, 16, 12, 1, false)
    };
    assert!(SeesawBlock::<f32>::new(bad, &mut rng).is_err());
}
