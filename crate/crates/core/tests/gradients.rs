//! Central finite-difference checks (double precision, 1e-4 relative) for
//! every layer type and both Seesaw variants, on randomized instances.

mod common;

use common::{gradsuite, rand_tensor};
use seesaw_core::blocks::BlockVariant;
use seesaw_core::ops::ActivationKind;
use seesaw_core::rng::Rng;
use seesaw_core::tensor::{shape, Tensor};
use seesaw_core::training::{arcface_loss, ArcFaceHead};

const INSTANCES: usize = 20;

#[test]
fn conv2d_gradients() {
    assert!(gradsuite::conv2d_cases(INSTANCES) > 0);
}

#[test]
fn depthwise_gradients() {
    assert!(gradsuite::depthwise_cases(INSTANCES) > 0);
}

#[test]
fn gdconv_gradients() {
    assert!(gradsuite::gdconv_cases(INSTANCES) > 0);
}

#[test]
fn batchnorm_gradients() {
    assert!(gradsuite::batchnorm_cases(INSTANCES) > 0);
}

#[test]
fn activation_gradients() {
    for kind in [
        ActivationKind::Swish,
        ActivationKind::Sigmoid,
        ActivationKind::Relu,
        ActivationKind::PRelu,
    ] {
        assert!(gradsuite::activation_cases(kind, INSTANCES) > 0);
    }
}

#[test]
fn swish_derivative_at_zero() {
    // d/dx x*sigma(x) = sigma(0) = 0.5 at x = 0.
    let g = seesaw_core::ops::activation_grad(0.0f64, ActivationKind::Swish, 0.0);
    assert!((g - 0.5).abs() < 1e-12);
}

#[test]
fn maxpool_gradients() {
    assert!(gradsuite::maxpool_cases(INSTANCES) > 0);
}

#[test]
fn linear_gradients() {
    assert!(gradsuite::linear_cases(INSTANCES) > 0);
}

#[test]
fn channel_shuffle_gradients() {
    assert!(gradsuite::shuffle_cases(INSTANCES) > 0);
}

#[test]
fn uneven_pointwise_gradients_partition_and_share() {
    assert!(gradsuite::uneven_pointwise_cases(INSTANCES) > 0);
}

#[test]
fn se_gradients() {
    assert!(gradsuite::se_cases(INSTANCES) > 0);
}

#[test]
fn skip_branch_gradients() {
    assert!(gradsuite::skip_branch_cases(INSTANCES) > 0);
}

#[test]
fn seesaw_shuffle_block_gradients() {
    assert!(gradsuite::block_cases(BlockVariant::SeesawShuffle, INSTANCES) > 0);
}

#[test]
fn seesaw_share_block_gradients() {
    assert!(gradsuite::block_cases(BlockVariant::SeesawShare, INSTANCES) > 0);
}

#[test]
fn inverted_residual_block_gradients() {
    assert!(gradsuite::block_cases(BlockVariant::InvertedResidual, INSTANCES) > 0);
}

#[test]
fn dw_v2_block_with_skip_gradients() {
    assert!(gradsuite::skip_block_cases(INSTANCES) > 0);
}

#[test]
fn arcface_loss_gradients() {
    let h = 1e-6;
    let tol = 1e-4;
    let mut rng = Rng::new(0x6010);
    for case in 0..INSTANCES {
        let k = 3 + rng.next_below(4);
        let dim = 4 + rng.next_below(6);
        let n = 2 + rng.next_below(3);
        let mut head = ArcFaceHead::<f64>::new(k, dim, &mut rng);
        head.scale = 8.0;
        head.margin = 0.5;
        let emb = rand_tensor(shape(n, dim, 1, 1), &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.next_below(k)).collect();

        head.zero_grads();
        let (_, d_emb) = arcface_loss(&mut head, &emb, &labels).unwrap();
        let mut d_weights = Vec::new();
        head.visit_trainable(&mut |_, _, g| d_weights = g.to_vec());

        // Embedding gradients.
        let mut probe = emb.clone();
        for i in 0..probe.numel() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let (up, _) = arcface_loss(&mut head, &probe, &labels).unwrap();
            probe.data_mut()[i] = orig - h;
            let (down, _) = arcface_loss(&mut head, &probe, &labels).unwrap();
            probe.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = d_emb.data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom <= tol,
                "case {case} emb[{i}]: {analytic} vs {numeric}"
            );
        }

        // Class-weight gradients.
        for i in 0..head.weights.numel() {
            let orig = head.weights.data()[i];
            head.weights.data_mut()[i] = orig + h;
            let (up, _) = arcface_loss(&mut head, &emb, &labels).unwrap();
            head.weights.data_mut()[i] = orig - h;
            let (down, _) = arcface_loss(&mut head, &emb, &labels).unwrap();
            head.weights.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = d_weights[i];
            let denom: f64 = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / denom <= 2e-4,
                "case {case} w[{i}]: {analytic} vs {numeric}"
            );
        }
    }
}

#[test]
fn single_sgd_step_descends_on_fixed_batch() {
    // With a small rate and zero momentum, one step must not increase the
    // batch loss.
    use seesaw_core::arch::{build_model, spec_seesaw_toy};
    use seesaw_core::ops::Mode;
    use seesaw_core::training::SgdMomentum;

    let spec = spec_seesaw_toy();
    for seed in 0..5 {
        let mut model = build_model::<f64>(&spec, seed).unwrap();
        let mut rng = Rng::new(0x600F + seed);
        let mut head = ArcFaceHead::<f64>::new(6, 128, &mut rng);
        let batch = Tensor::randn(shape(4, 3, 28, 28), 0.5, &mut rng);
        let labels = vec![0, 1, 2, 3];

        model.zero_grads();
        head.zero_grads();
        let emb = model.forward_embed(&batch, Mode::Train).unwrap();
        let (before, d_emb) = arcface_loss(&mut head, &emb, &labels).unwrap();
        model.backward(&d_emb).unwrap();
        let mut opt = SgdMomentum::<f64>::new(0.0, 0.0);
        opt.step(1e-4, |f| {
            model.visit_trainable(f);
            head.visit_trainable(f);
        })
        .unwrap();

        let emb = model.forward_embed(&batch, Mode::Train).unwrap();
        let (after, _) = arcface_loss(&mut head, &emb, &labels).unwrap();
        assert!(
            after <= before + 1e-9,
            "seed {seed}: loss rose from {before} to {after}"
        );
    }
}
