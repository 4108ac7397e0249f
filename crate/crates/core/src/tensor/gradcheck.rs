//! Finite-difference validation of every backward rule.
//!
//! Each `check_*` function builds a small graph from a seed, computes
//! analytic gradients with one backward sweep, re-derives them with central
//! differences, and returns the worst relative error across all inputs.
//! Callers assert a tolerance appropriate to the op's conditioning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Activation, Graph, Mode, Padding, Tensor, TensorId};
use super::ops::BatchNormStats;

/// Step for central differences. Small enough for O(ε²) truncation error,
/// large enough that f64 cancellation stays below the tolerances used here.
pub const FD_EPS: f64 = 1e-5;

/// |a−b| scaled by max(|a|, |b|, 1e-3). The floor keeps near-zero gradient
/// pairs from blowing up the ratio on cancellation noise.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central-difference gradients of `eval` with respect to every element of
/// every group, compared against the analytic gradients. Returns the worst
/// relative error seen.
pub fn compare_groups(
    eval: impl Fn(&[Vec<f64>]) -> f64,
    groups: &[Vec<f64>],
    analytic: &[Vec<f64>],
) -> f64 {
    assert_eq!(groups.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut work: Vec<Vec<f64>> = groups.to_vec();
    for gi in 0..groups.len() {
        assert_eq!(groups[gi].len(), analytic[gi].len(), "group {gi} length");
        for i in 0..groups[gi].len() {
            let orig = work[gi][i];
            work[gi][i] = orig + FD_EPS;
            let hi = eval(&work);
            work[gi][i] = orig - FD_EPS;
            let lo = eval(&work);
            work[gi][i] = orig;
            let fd = (hi - lo) / (2.0 * FD_EPS);
            worst = worst.max(rel_error(analytic[gi][i], fd));
        }
    }
    worst
}

fn grad_of(g: &Graph, id: TensorId) -> Vec<f64> {
    g.grad(id).expect("gradient requested for checked leaf").to_vec()
}

/// Convolution: input, weights, and bias gradients for the given padding.
pub fn check_conv(seed: u64, padding: Padding) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
    let weights = Tensor::randn(&[4, 3, 3, 3], 0.5, &mut rng);
    let bias = Tensor::randn(&[4], 0.5, &mut rng);
    let out_len = match padding {
        Padding::Same => 2 * 4 * 8 * 8,
        Padding::None => 2 * 4 * 6 * 6,
    };
    let probe = Tensor::randn(&[out_len], 1.0, &mut rng).data().to_vec();

    let groups = vec![
        input.data().to_vec(),
        weights.data().to_vec(),
        bias.data().to_vec(),
    ];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 3, 8, 8], vals[0].clone()));
        let w = g.leaf(Tensor::from_vec(&[4, 3, 3, 3], vals[1].clone()));
        let b = g.leaf(Tensor::from_vec(&[4], vals[2].clone()));
        let y = g.conv2d(x, w, b, padding).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };

    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let w = g.leaf(weights.requires_grad(true));
    let b = g.leaf(bias.requires_grad(true));
    let y = g.conv2d(x, w, b, padding).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    let analytic = vec![grad_of(&g, x), grad_of(&g, w), grad_of(&g, b)];
    compare_groups(eval, &groups, &analytic)
}

/// 1×1 convolution path (the output head uses it).
pub fn check_conv1x1(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[2, 4, 5, 5], 1.0, &mut rng);
    let weights = Tensor::randn(&[2, 4, 1, 1], 0.7, &mut rng);
    let bias = Tensor::randn(&[2], 0.5, &mut rng);
    let probe = Tensor::randn(&[2 * 2 * 5 * 5], 1.0, &mut rng).data().to_vec();

    let groups = vec![
        input.data().to_vec(),
        weights.data().to_vec(),
        bias.data().to_vec(),
    ];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 4, 5, 5], vals[0].clone()));
        let w = g.leaf(Tensor::from_vec(&[2, 4, 1, 1], vals[1].clone()));
        let b = g.leaf(Tensor::from_vec(&[2], vals[2].clone()));
        let y = g.conv2d(x, w, b, Padding::Same).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };

    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let w = g.leaf(weights.requires_grad(true));
    let b = g.leaf(bias.requires_grad(true));
    let y = g.conv2d(x, w, b, Padding::Same).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    let analytic = vec![grad_of(&g, x), grad_of(&g, w), grad_of(&g, b)];
    compare_groups(eval, &groups, &analytic)
}

/// Max pooling. Random continuous inputs keep window maxima unique, so the
/// piecewise-linear kinks sit far from the FD probes.
pub fn check_maxpool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[2, 3, 8, 8], 1.0, &mut rng);
    let probe = Tensor::randn(&[2 * 3 * 4 * 4], 1.0, &mut rng).data().to_vec();
    let groups = vec![input.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 3, 8, 8], vals[0].clone()));
        let y = g.maxpool2x2(x).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };
    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let y = g.maxpool2x2(x).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, x)])
}

/// Nearest-neighbor upsampling.
pub fn check_upsample(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[2, 3, 5, 7], 1.0, &mut rng);
    let probe = Tensor::randn(&[2 * 3 * 10 * 14], 1.0, &mut rng).data().to_vec();
    let groups = vec![input.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 3, 5, 7], vals[0].clone()));
        let y = g.upsample_nearest2x(x).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };
    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let y = g.upsample_nearest2x(x).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, x)])
}

/// Batch normalization in train mode: input, gamma, and beta gradients.
/// The batch statistics depend on the input, which is exactly what the
/// mean/variance terms of the backward formula account for.
pub fn check_batchnorm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng);
    let gamma = Tensor::randn(&[3], 0.5, &mut rng);
    let beta = Tensor::randn(&[3], 0.5, &mut rng);
    let probe = Tensor::randn(&[2 * 3 * 4 * 4], 1.0, &mut rng).data().to_vec();

    let groups = vec![
        input.data().to_vec(),
        gamma.data().to_vec(),
        beta.data().to_vec(),
    ];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 3, 4, 4], vals[0].clone()));
        let ga = g.leaf(Tensor::from_vec(&[3], vals[1].clone()));
        let be = g.leaf(Tensor::from_vec(&[3], vals[2].clone()));
        let mut stats = BatchNormStats::new(3);
        let y = g.batchnorm(x, ga, be, Mode::Train, &mut stats).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };

    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let ga = g.leaf(gamma.requires_grad(true));
    let be = g.leaf(beta.requires_grad(true));
    let mut stats = BatchNormStats::new(3);
    let y = g.batchnorm(x, ga, be, Mode::Train, &mut stats).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    let analytic = vec![grad_of(&g, x), grad_of(&g, ga), grad_of(&g, be)];
    compare_groups(eval, &groups, &analytic)
}

/// ELU or sigmoid.
pub fn check_activation(seed: u64, activation: Activation) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[40], 1.5, &mut rng);
    let probe = Tensor::randn(&[40], 1.0, &mut rng).data().to_vec();
    let groups = vec![input.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[40], vals[0].clone()));
        let y = g.pointwise(x, activation);
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };
    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let y = g.pointwise(x, activation);
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, x)])
}

/// Dropout. Every evaluation reseeds the same RNG so the kept mask is a
/// fixed function of `seed`, making the op deterministic under FD probing.
pub fn check_dropout(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng);
    let probe = Tensor::randn(&[2 * 3 * 6 * 6], 1.0, &mut rng).data().to_vec();
    let mask_seed = seed.wrapping_mul(0x9e37_79b9).wrapping_add(1);
    let groups = vec![input.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 3, 6, 6], vals[0].clone()));
        let y = g.dropout(x, 0.4, Mode::Train, &mut mask_rng).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let y = g.dropout(x, 0.4, Mode::Train, &mut mask_rng).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, x)])
}

/// Channel-wise dropout, same reseeding scheme as [`check_dropout`].
pub fn check_dropout_channels(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[2, 4, 5, 5], 1.0, &mut rng);
    let probe = Tensor::randn(&[2 * 4 * 5 * 5], 1.0, &mut rng).data().to_vec();
    let mask_seed = seed.wrapping_mul(0x9e37_79b9).wrapping_add(7);
    let groups = vec![input.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[2, 4, 5, 5], vals[0].clone()));
        let y = g.dropout_channels(x, 0.4, Mode::Train, &mut mask_rng).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let y = g.dropout_channels(x, 0.4, Mode::Train, &mut mask_rng).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, x)])
}

/// Channel concatenation: both inputs.
pub fn check_concat(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng);
    let b = Tensor::randn(&[2, 5, 4, 4], 1.0, &mut rng);
    let probe = Tensor::randn(&[2 * 8 * 4 * 4], 1.0, &mut rng).data().to_vec();
    let groups = vec![a.data().to_vec(), b.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let ai = g.leaf(Tensor::from_vec(&[2, 3, 4, 4], vals[0].clone()));
        let bi = g.leaf(Tensor::from_vec(&[2, 5, 4, 4], vals[1].clone()));
        let y = g.concat_channels(ai, bi).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };
    let mut g = Graph::new();
    let ai = g.leaf(a.requires_grad(true));
    let bi = g.leaf(b.requires_grad(true));
    let y = g.concat_channels(ai, bi).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, ai), grad_of(&g, bi)])
}

/// Elementwise subtraction: both operands.
pub fn check_sub(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::randn(&[30], 1.0, &mut rng);
    let b = Tensor::randn(&[30], 1.0, &mut rng);
    let probe = Tensor::randn(&[30], 1.0, &mut rng).data().to_vec();
    let groups = vec![a.data().to_vec(), b.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let ai = g.leaf(Tensor::from_vec(&[30], vals[0].clone()));
        let bi = g.leaf(Tensor::from_vec(&[30], vals[1].clone()));
        let y = g.sub(ai, bi).unwrap();
        let s = g.weighted_sum(y, &probe).unwrap();
        g.value(s).item()
    };
    let mut g = Graph::new();
    let ai = g.leaf(a.requires_grad(true));
    let bi = g.leaf(b.requires_grad(true));
    let y = g.sub(ai, bi).unwrap();
    let s = g.weighted_sum(y, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, ai), grad_of(&g, bi)])
}

/// Mean squared error: prediction and target sides.
pub fn check_mse(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Tensor::randn(&[2, 2, 4, 4], 1.0, &mut rng);
    let t = Tensor::randn(&[2, 2, 4, 4], 1.0, &mut rng);
    let groups = vec![p.data().to_vec(), t.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let pi = g.leaf(Tensor::from_vec(&[2, 2, 4, 4], vals[0].clone()));
        let ti = g.leaf(Tensor::from_vec(&[2, 2, 4, 4], vals[1].clone()));
        let y = g.mse(pi, ti).unwrap();
        g.value(y).item()
    };
    let mut g = Graph::new();
    let pi = g.leaf(p.requires_grad(true));
    let ti = g.leaf(t.requires_grad(true));
    let y = g.mse(pi, ti).unwrap();
    g.backward(y).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, pi), grad_of(&g, ti)])
}

/// Soft Dice: prediction and target sides, probed near the unit interval
/// where the loss operates in practice.
pub fn check_soft_dice(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let squash = |t: Tensor| -> Vec<f64> {
        t.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
    };
    let p = squash(Tensor::randn(&[2, 2, 4, 4], 1.5, &mut rng));
    let t = squash(Tensor::randn(&[2, 2, 4, 4], 1.5, &mut rng));
    let groups = vec![p, t];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let pi = g.leaf(Tensor::from_vec(&[2, 2, 4, 4], vals[0].clone()));
        let ti = g.leaf(Tensor::from_vec(&[2, 2, 4, 4], vals[1].clone()));
        let y = g.soft_dice(pi, ti).unwrap();
        g.value(y).item()
    };
    let mut g = Graph::new();
    let pi = g.leaf(Tensor::from_vec(&[2, 2, 4, 4], groups[0].clone()).requires_grad(true));
    let ti = g.leaf(Tensor::from_vec(&[2, 2, 4, 4], groups[1].clone()).requires_grad(true));
    let y = g.soft_dice(pi, ti).unwrap();
    g.backward(y).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, pi), grad_of(&g, ti)])
}

/// Weighted sum (the scalarizer itself).
pub fn check_weighted_sum(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[25], 1.0, &mut rng);
    let probe = Tensor::randn(&[25], 1.0, &mut rng).data().to_vec();
    let groups = vec![input.data().to_vec()];
    let eval = |vals: &[Vec<f64>]| {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[25], vals[0].clone()));
        let s = g.weighted_sum(x, &probe).unwrap();
        g.value(s).item()
    };
    let mut g = Graph::new();
    let x = g.leaf(input.requires_grad(true));
    let s = g.weighted_sum(x, &probe).unwrap();
    g.backward(s).unwrap();
    compare_groups(eval, &groups, &[grad_of(&g, x)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_finite_differences() {
        assert!(check_conv(1, Padding::Same) < 1e-4);
        assert!(check_conv(2, Padding::None) < 1e-4);
        assert!(check_conv1x1(3) < 1e-4);
    }

    #[test]
    fn maxpool_matches_finite_differences() {
        assert!(check_maxpool(1) < 1e-4);
    }

    #[test]
    fn upsample_matches_finite_differences() {
        assert!(check_upsample(1) < 1e-6);
    }

    #[test]
    fn batchnorm_matches_finite_differences() {
        assert!(check_batchnorm(1) < 1e-3);
        assert!(check_batchnorm(2) < 1e-3);
    }

    #[test]
    fn activations_match_finite_differences() {
        assert!(check_activation(1, Activation::Elu) < 1e-6);
        assert!(check_activation(1, Activation::Sigmoid) < 1e-6);
    }

    #[test]
    fn dropout_matches_finite_differences() {
        assert!(check_dropout(1) < 1e-6);
        assert!(check_dropout_channels(1) < 1e-6);
    }

    #[test]
    fn concat_matches_finite_differences() {
        assert!(check_concat(1) < 1e-6);
    }

    #[test]
    fn sub_matches_finite_differences() {
        assert!(check_sub(1) < 1e-6);
    }

    #[test]
    fn losses_match_finite_differences() {
        assert!(check_mse(1) < 1e-6);
        assert!(check_soft_dice(1) < 1e-4);
    }

    #[test]
    fn weighted_sum_matches_finite_differences() {
        assert!(check_weighted_sum(1) < 1e-6);
    }

    #[test]
    fn rel_error_floors_near_zero() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!(rel_error(1e-9, -1e-9) < 1e-5);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
