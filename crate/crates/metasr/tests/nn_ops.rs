//! Forward-path oracles for the nn substrate: every structured op is checked
//! against an independently written brute-force implementation.

use metasr::nn::{
    Adam, AdamConfig, CheckpointError, Graph, NnError, ParameterStore, Tensor,
};
use metasr_testutil::rand_tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct six-loop convolution, the reference conv2d is compared against.
#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    input: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    o: usize,
    k: usize,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
) -> (Vec<f32>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; n * o * oh * ow];
    for s in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map(|b| b[oc]).unwrap_or(0.0);
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((s * c + ic) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((oc * c + ic) * k + ky) * k + kx];
                                acc += iv * wv;
                            }
                        }
                    }
                    out[((s * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv2d_ones_kernel_center_is_nine() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
    let w = g.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 3, 3]);
    assert_eq!(g.value(y)[4], 9.0);
}

#[test]
fn conv2d_identity_kernel_preserves_input() {
    let mut g = Graph::<f32>::new();
    let input = rand_tensor::<f32>(11, &[2, 3, 5, 4], -1.0, 1.0);
    let x = g.constant(input.clone());
    let mut kernel = Tensor::zeros(&[3, 3, 3, 3]);
    for oc in 0..3 {
        // 1 at the center of the matching input channel.
        kernel.data_mut()[((oc * 3 + oc) * 3 + 1) * 3 + 1] = 1.0;
    }
    let w = g.constant(kernel);
    let y = g.conv2d(x, w, None, 1, 1).unwrap();
    assert_eq!(g.value(y), input.data());
}

#[test]
fn conv2d_matches_loop_oracle_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f32;
    for case in 0..120 {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(1..4);
        let o = rng.gen_range(1..5);
        let k = *[1usize, 3].get(rng.gen_range(0..2)).unwrap();
        let h = rng.gen_range(k..9);
        let w = rng.gen_range(k..9);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..2);
        let input = rand_tensor::<f32>(1000 + case, &[n, c, h, w], -1.0, 1.0);
        let weight = rand_tensor::<f32>(2000 + case, &[o, c, k, k], -1.0, 1.0);
        let bias = rand_tensor::<f32>(3000 + case, &[o], -1.0, 1.0);

        let (expect, oh, ow) = conv_oracle(
            input.data(),
            n,
            c,
            h,
            w,
            weight.data(),
            o,
            k,
            Some(bias.data()),
            stride,
            pad,
        );
        let mut g = Graph::<f32>::new();
        let x = g.constant(input);
        let wt = g.constant(weight);
        let b = g.constant(bias);
        let y = g.conv2d(x, wt, Some(b), stride, pad).unwrap();
        assert_eq!(g.shape(y), &[n, o, oh, ow]);
        for (got, want) in g.value(y).iter().zip(&expect) {
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst < 1e-6, "worst abs diff {worst}");
}

/// Wider sweep (larger kernels and channel counts) in 64-bit verification
/// mode, where accumulation-order noise is negligible.
#[test]
fn conv2d_matches_loop_oracle_f64_wide() {
    let mut rng = ChaCha8Rng::seed_from_u64(4048);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(1..6);
        let o = rng.gen_range(1..5);
        let k = *[1usize, 3, 5].get(rng.gen_range(0..3)).unwrap();
        let h = rng.gen_range(k..9);
        let w = rng.gen_range(k..9);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..3);
        let input = rand_tensor::<f64>(5000 + case, &[n, c, h, w], -1.0, 1.0);
        let weight = rand_tensor::<f64>(6000 + case, &[o, c, k, k], -1.0, 1.0);

        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut expect = vec![0.0f64; n * o * oh * ow];
        for s in 0..n {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize
                                    {
                                        continue;
                                    }
                                    acc += input.data()
                                        [((s * c + ic) * h + iy as usize) * w + ix as usize]
                                        * weight.data()[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        expect[((s * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let mut g = Graph::<f64>::new();
        let x = g.constant(input);
        let wt = g.constant(weight);
        let y = g.conv2d(x, wt, None, stride, pad).unwrap();
        for (got, want) in g.value(y).iter().zip(&expect) {
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst < 1e-9, "worst abs diff {worst}");
}

#[test]
fn conv2d_channel_mismatch_names_both_shapes() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
    let w = g.constant(Tensor::zeros(&[4, 3, 3, 3]));
    match g.conv2d(x, w, None, 1, 1) {
        Err(NnError::ChannelMismatch {
            input_channels: 2,
            weight_channels: 3,
            ..
        }) => {}
        other => panic!("expected ChannelMismatch, got {other:?}"),
    }
}

#[test]
fn dense_identity_and_bias_rows() {
    let mut g = Graph::<f32>::new();
    let input = rand_tensor::<f32>(5, &[3, 4], -1.0, 1.0);
    let x = g.constant(input.clone());
    let mut eye = Tensor::zeros(&[4, 4]);
    for i in 0..4 {
        eye.data_mut()[i * 4 + i] = 1.0;
    }
    let w = g.constant(eye);
    let zero_b = g.constant(Tensor::zeros(&[4]));
    let y = g.dense(x, w, Some(zero_b)).unwrap();
    assert_eq!(g.value(y), input.data());

    // Zero weight: every row equals the bias.
    let wz = g.constant(Tensor::zeros(&[4, 4]));
    let b = g.constant(Tensor::new(&[4], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
    let y2 = g.dense(x, wz, Some(b)).unwrap();
    for row in g.value(y2).chunks_exact(4) {
        assert_eq!(row, &[1.0, -2.0, 3.5, 0.25]);
    }
}

#[test]
fn dense_matches_triple_loop_oracle() {
    let mut worst = 0.0f32;
    for case in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + case);
        let n = rng.gen_range(1..5);
        let f = rng.gen_range(1..7);
        let gdim = rng.gen_range(1..6);
        let input = rand_tensor::<f32>(10_000 + case, &[n, f], -1.0, 1.0);
        let weight = rand_tensor::<f32>(20_000 + case, &[gdim, f], -1.0, 1.0);
        let bias = rand_tensor::<f32>(30_000 + case, &[gdim], -1.0, 1.0);

        let mut expect = vec![0.0f32; n * gdim];
        for i in 0..n {
            for j in 0..gdim {
                let mut acc = bias.data()[j];
                for kk in 0..f {
                    acc += input.data()[i * f + kk] * weight.data()[j * f + kk];
                }
                expect[i * gdim + j] = acc;
            }
        }
        let mut g = Graph::<f32>::new();
        let x = g.constant(input);
        let w = g.constant(weight);
        let b = g.constant(bias);
        let y = g.dense(x, w, Some(b)).unwrap();
        for (got, want) in g.value(y).iter().zip(&expect) {
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst < 1e-6, "worst abs diff {worst}");
}

#[test]
fn dense_dimension_mismatch_errors() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[2, 3]));
    let w = g.constant(Tensor::zeros(&[4, 5]));
    assert!(matches!(
        g.dense(x, w, None),
        Err(NnError::ShapeMismatch { op: "dense", .. })
    ));
}

#[test]
fn batch_norm_training_standardizes_channels() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(rand_tensor::<f32>(77, &[4, 3, 5, 5], -2.0, 5.0));
    let gamma = g.constant(Tensor::filled(&[3], 1.0));
    let beta = g.constant(Tensor::zeros(&[3]));
    let (y, updated) = g
        .batch_norm2d(x, gamma, beta, &[0.0; 3], &[1.0; 3], true)
        .unwrap();
    assert!(updated.is_some());
    let data = g.value(y);
    for ch in 0..3 {
        let mut vals = Vec::new();
        for s in 0..4 {
            let base = (s * 3 + ch) * 25;
            vals.extend_from_slice(&data[base..base + 25]);
        }
        let n = vals.len() as f64;
        let mean: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
    }
}

#[test]
fn batch_norm_affine_law() {
    // Standardized input, gamma=2, beta=3 -> mean 3, std 2.
    let mut g = Graph::<f32>::new();
    let x = g.constant(rand_tensor::<f32>(78, &[2, 1, 8, 8], -1.0, 1.0));
    let gamma = g.constant(Tensor::filled(&[1], 2.0));
    let beta = g.constant(Tensor::filled(&[1], 3.0));
    let (y, _) = g
        .batch_norm2d(x, gamma, beta, &[0.0], &[1.0], true)
        .unwrap();
    let vals: Vec<f64> = g.value(y).iter().map(|&v| v as f64).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((mean - 3.0).abs() < 1e-4);
    assert!((std - 2.0).abs() < 1e-4);
}

#[test]
fn batch_norm_rejects_single_element_batches() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
    let gamma = g.constant(Tensor::filled(&[2], 1.0));
    let beta = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(
        g.batch_norm2d(x, gamma, beta, &[0.0; 2], &[1.0; 2], true),
        Err(NnError::DegenerateBatch(1))
    ));
}

#[test]
fn batch_norm_eval_uses_running_stats_and_keeps_them() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::filled(&[1, 1, 2, 2], 10.0));
    let gamma = g.constant(Tensor::filled(&[1], 1.0));
    let beta = g.constant(Tensor::zeros(&[1]));
    let (y, updated) = g
        .batch_norm2d(x, gamma, beta, &[4.0], &[9.0], false)
        .unwrap();
    assert!(updated.is_none(), "eval mode must not update running stats");
    // (10 - 4) / sqrt(9 + eps) ~ 2.0
    for &v in g.value(y) {
        assert!((v - 2.0).abs() < 1e-4);
    }
}

#[test]
fn activation_values() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::new(&[4], vec![-1.0, 2.0, 0.0, -3.0]).unwrap());
    let r = g.relu(x);
    assert_eq!(g.value(r), &[0.0, 2.0, 0.0, 0.0]);
    let l = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(l), &[-0.2, 2.0, 0.0, -0.6]);
    let zero = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(zero);
    assert_eq!(g.value(s), &[0.5]);
    let alpha = g.constant(Tensor::new(&[1], vec![0.25]).unwrap());
    let p = g.prelu(x, alpha).unwrap();
    assert_eq!(g.value(p), &[-0.25, 2.0, 0.0, -0.75]);
}

#[test]
fn backward_of_sum_is_ones_and_square_rule() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap(), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);

    let mut g2 = Graph::<f64>::new();
    let x2 = g2.leaf(rand_tensor::<f64>(3, &[7], -2.0, 2.0), true);
    let loss2 = g2.sum_all(x2);
    g2.backward(loss2).unwrap();
    assert!(g2.grad(x2).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_rejects_non_scalar_and_double_call() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros(&[3]), true);
    let y = g.relu(x);
    assert!(matches!(g.backward(y), Err(NnError::NonScalarLoss(_))));
    let loss = g.sum_all(y);
    g.backward(loss).unwrap();
    assert!(matches!(g.backward(loss), Err(NnError::BackwardConsumed)));
}

#[test]
fn gradient_shapes_match_parameters() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(rand_tensor::<f64>(4, &[2, 3, 4, 4], -1.0, 1.0), true);
    let w = g.leaf(rand_tensor::<f64>(5, &[2, 3, 3, 3], -1.0, 1.0), true);
    let b = g.leaf(rand_tensor::<f64>(6, &[2], -1.0, 1.0), true);
    let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
    let loss = g.mean_all(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().len(), 2 * 3 * 4 * 4);
    assert_eq!(g.grad(w).unwrap().len(), 2 * 3 * 3 * 3);
    assert_eq!(g.grad(b).unwrap().len(), 2);
}

#[test]
fn adam_zero_gradient_keeps_parameter() {
    let mut store = ParameterStore::<f32>::new();
    store.insert("p", Tensor::new(&[2], vec![1.5, -0.5]).unwrap());
    let mut adam = Adam::new(vec!["p".into()], AdamConfig::default());
    adam.step(&mut store, &[("p".into(), vec![0.0, 0.0])]).unwrap();
    assert_eq!(store.get("p").unwrap().data(), &[1.5, -0.5]);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_first_step_is_learning_rate_sized() {
    let mut store = ParameterStore::<f32>::new();
    store.insert("p", Tensor::new(&[1], vec![1.0]).unwrap());
    let mut adam = Adam::new(
        vec!["p".into()],
        AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
    );
    adam.step(&mut store, &[("p".into(), vec![1.0])]).unwrap();
    let got = store.get("p").unwrap().data()[0];
    assert!((got - 0.9).abs() < 1e-6, "first update should be ~lr, got {got}");
}

#[test]
fn adam_descends_quadratic_monotonically() {
    let mut store = ParameterStore::<f64>::new();
    store.insert("x", Tensor::new(&[1], vec![1.0]).unwrap());
    let mut adam = Adam::new(
        vec!["x".into()],
        AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
    );
    let mut prev = 1.0f64;
    for _ in 0..5 {
        let x = store.get("x").unwrap().data()[0];
        adam.step(&mut store, &[("x".into(), vec![2.0 * x])]).unwrap();
        let now = store.get("x").unwrap().data()[0].abs();
        assert!(now < prev, "|x| must decrease monotonically");
        prev = now;
    }
}

#[test]
fn adam_missing_gradient_names_parameter() {
    let mut store = ParameterStore::<f32>::new();
    store.insert("a", Tensor::zeros(&[1]));
    store.insert("b", Tensor::zeros(&[1]));
    let mut adam = Adam::new(vec!["a".into(), "b".into()], AdamConfig::default());
    let err = adam
        .step(&mut store, &[("a".into(), vec![1.0])])
        .unwrap_err();
    match err {
        NnError::MissingGradient(name) => assert_eq!(name, "b"),
        other => panic!("expected MissingGradient, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();

    let empty = ParameterStore::<f32>::new();
    let p0 = dir.path().join("empty.msrg");
    empty.save(&p0).unwrap();
    let loaded = ParameterStore::<f32>::load(&p0).unwrap();
    assert!(loaded.is_empty());

    let mut store = ParameterStore::<f32>::new();
    store.insert(
        "w",
        Tensor::new(&[2, 2], vec![1.25, -3.5e-8, f32::MIN_POSITIVE, 255.0]).unwrap(),
    );
    store.insert("scalar", Tensor::scalar(0.1));
    let p1 = dir.path().join("store.msrg");
    store.save(&p1).unwrap();
    let loaded = ParameterStore::<f32>::load(&p1).unwrap();
    assert_eq!(loaded, store);
}

#[test]
fn checkpoint_corruption_yields_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = ParameterStore::<f32>::new();
    store.insert("w", Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let path = dir.path().join("ok.msrg");
    store.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    // Corrupt byte 0 -> bad magic.
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    let p = dir.path().join("bad_magic.msrg");
    std::fs::write(&p, &bad_magic).unwrap();
    assert!(matches!(
        ParameterStore::<f32>::load(&p),
        Err(CheckpointError::BadMagic(_))
    ));

    // Bump the version byte.
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    let p = dir.path().join("bad_version.msrg");
    std::fs::write(&p, &bad_version).unwrap();
    assert!(matches!(
        ParameterStore::<f32>::load(&p),
        Err(CheckpointError::VersionMismatch { got: 99, .. })
    ));

    // Drop the trailing bytes -> truncated record.
    let p = dir.path().join("truncated.msrg");
    std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(
        ParameterStore::<f32>::load(&p),
        Err(CheckpointError::Truncated(_))
    ));
}

#[test]
fn forward_backward_is_bitwise_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(rand_tensor::<f32>(42, &[2, 3, 6, 6], -1.0, 1.0), true);
        let w = g.leaf(rand_tensor::<f32>(43, &[4, 3, 3, 3], -1.0, 1.0), true);
        let b = g.leaf(rand_tensor::<f32>(44, &[4], -0.5, 0.5), true);
        let y = g.conv2d(x, w, Some(b), 1, 1).unwrap();
        let a = g.relu(y);
        let loss = g.mean_all(a);
        g.backward(loss).unwrap();
        (
            g.scalar_value(loss).to_bits(),
            g.grad(w).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
