//! Finite-difference verification of every differentiable op's backward
//! rule, in double precision.

use pwfn_core::gradcheck::{check_grads, test_tensor, FD_STEP};
use pwfn_core::noise;
use pwfn_core::tensor::{Tape, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn assert_grads(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
) {
    if let Err(failures) = check_grads(inputs, build, FD_STEP, TOL) {
        panic!(
            "{} gradient mismatches, worst: {:?}",
            failures.len(),
            failures
                .iter()
                .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        );
    }
}

#[test]
fn elementwise_binary_ops() {
    let a = test_tensor(vec![2, 3, 4, 4], 1);
    let b = test_tensor(vec![2, 3, 4, 4], 2);
    assert_grads(&[a.clone(), b.clone()], |t, v| {
        let s = t.add(v[0], v[1])?;
        t.sum(s)
    });
    assert_grads(&[a.clone(), b.clone()], |t, v| {
        let s = t.sub(v[0], v[1])?;
        let sq = t.mul(s, s)?;
        t.sum(sq)
    });
    assert_grads(&[a, b], |t, v| {
        let s = t.mul(v[0], v[1])?;
        t.sum(s)
    });
}

#[test]
fn broadcast_over_leading_batch() {
    let a = test_tensor(vec![3, 2, 2, 2], 3);
    let b = test_tensor(vec![1, 2, 2, 2], 4);
    assert_grads(&[a.clone(), b.clone()], |t, v| {
        let s = t.add(v[0], v[1])?;
        let sq = t.mul(s, s)?;
        t.sum(sq)
    });
    assert_grads(&[a, b], |t, v| {
        let s = t.mul(v[0], v[1])?;
        t.sum(s)
    });
}

#[test]
fn activations() {
    // Offset inputs away from the relu kink so finite differences are clean.
    let x = test_tensor(vec![2, 7], 5).map(|v| v + if v >= 0.0 { 0.05 } else { -0.05 });
    assert_grads(&[x.clone()], |t, v| {
        let y = t.relu(v[0])?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x.clone()], |t, v| {
        let y = t.leaky_relu(v[0], 0.2)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x.clone()], |t, v| {
        let y = t.sigmoid(v[0])?;
        t.sum(y)
    });
    assert_grads(&[x], |t, v| {
        let y = t.tanh(v[0])?;
        t.sum(y)
    });
}

#[test]
fn linear_layer() {
    let x = test_tensor(vec![3, 5], 6);
    let w = test_tensor(vec![4, 5], 7);
    let b = test_tensor(vec![4], 8);
    assert_grads(&[x, w, b], |t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
}

#[test]
fn conv2d_all_arguments() {
    let x = test_tensor(vec![2, 3, 8, 8], 9);
    let w = test_tensor(vec![4, 3, 3, 3], 10);
    let b = test_tensor(vec![4], 11);
    assert_grads(&[x.clone(), w.clone(), b.clone()], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
        t.sum(y)
    });
    // Quadratic head so input gradients are exercised too.
    assert_grads(&[x, w, b], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 1, 0)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
}

#[test]
fn conv2d_strided() {
    let x = test_tensor(vec![1, 2, 8, 8], 12);
    let w = test_tensor(vec![3, 2, 4, 4], 13);
    let b = test_tensor(vec![3], 14);
    assert_grads(&[x, w, b], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
}

#[test]
fn depthwise_and_reflect_pad() {
    let x = test_tensor(vec![1, 2, 6, 6], 15);
    let k = test_tensor(vec![3, 3], 16);
    assert_grads(&[x.clone(), k.clone()], |t, v| {
        let y = t.depthwise_conv2d(v[0], v[1])?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x, k], |t, v| {
        let p = t.reflect_pad(v[0], 2, 1)?;
        let y = t.depthwise_conv2d(p, v[1])?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
}

#[test]
fn pooling_and_resampling() {
    let x = test_tensor(vec![2, 2, 4, 4], 17);
    assert_grads(&[x.clone()], |t, v| {
        let y = t.global_avg_pool(v[0])?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x.clone()], |t, v| {
        let y = t.avg_pool2d(v[0], 2, 2)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x.clone()], |t, v| {
        let y = t.nearest_upsample(v[0], 2, 3)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x.clone()], |t, v| {
        let y = t.bilinear_resize(v[0], 7, 3)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x], |t, v| {
        let y = t.bilinear_resize(v[0], 9, 9)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
}

#[test]
fn shape_ops() {
    let a = test_tensor(vec![2, 2, 3, 3], 18);
    let b = test_tensor(vec![2, 1, 3, 3], 19);
    assert_grads(&[a.clone(), b.clone()], |t, v| {
        let c = t.concat(&[v[0], v[1]], 1)?;
        let sq = t.mul(c, c)?;
        t.sum(sq)
    });
    assert_grads(&[a.clone()], |t, v| {
        let n = t.narrow(v[0], 2, 1, 2)?;
        let sq = t.mul(n, n)?;
        t.sum(sq)
    });
    assert_grads(&[a], |t, v| {
        let r = t.reshape(v[0], vec![4, 9])?;
        let sq = t.mul(r, r)?;
        t.sum(sq)
    });
}

#[test]
fn losses_and_reductions() {
    let a = test_tensor(vec![2, 6], 20);
    let b = test_tensor(vec![2, 6], 21);
    assert_grads(&[a.clone(), b.clone()], |t, v| t.mse(v[0], v[1]));
    assert_grads(&[a.clone()], |t, v| t.mean(v[0]));
    // Logits against fixed binary targets.
    assert_grads(&[a.clone()], |t, v| {
        let targets = Tensor::from_fn(vec![2, 6], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let tv = t.constant(&targets);
        t.bce_with_logits(v[0], tv)
    });
    assert_grads(&[a, b], |t, v| {
        let s1 = t.mul_scalar(v[0], 1.7)?;
        let s2 = t.add_scalar(v[1], -0.3)?;
        let s = t.add(s1, s2)?;
        let sq = t.mul(s, s)?;
        t.mean(sq)
    });
}

#[test]
fn channel_ops() {
    let x = test_tensor(vec![2, 3, 4, 4], 22);
    let g = test_tensor(vec![2, 3], 23).map(|v| v * 0.5 + 0.6);
    assert_grads(&[x.clone(), g], |t, v| {
        let y = t.scale_channels(v[0], v[1])?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x], |t, v| {
        let m = [[0.3, 0.6, 0.1], [-0.2, 0.5, 0.7], [0.9, -0.4, 0.5]];
        let y = t.channel_mix(v[0], m, [0.1, -0.2, 0.05])?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
}

#[test]
fn blockwise_dct() {
    let x = test_tensor(vec![1, 2, 8, 8], 24);
    assert_grads(&[x.clone()], |t, v| {
        let y = t.dct8x8(v[0], false)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
    assert_grads(&[x], |t, v| {
        let y = t.dct8x8(v[0], true)?;
        let sq = t.mul(y, y)?;
        t.sum(sq)
    });
}

#[test]
fn linearity_of_backward() {
    // grad(a*f + b*g) == a*grad(f) + b*grad(g), elementwise to 1e-10.
    let x = test_tensor(vec![3, 3], 25);
    let (a, b) = (1.7, -0.9);

    let grad_of = |combine: &dyn Fn(&mut Tape<f64>, Var) -> Var| -> Vec<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(&x, true);
        let loss = combine(&mut tape, v);
        tape.backward(loss).unwrap();
        tape.grad(v).unwrap().to_vec()
    };

    let f = |t: &mut Tape<f64>, v: Var| {
        let s = t.sigmoid(v).unwrap();
        t.sum(s).unwrap()
    };
    let g = |t: &mut Tape<f64>, v: Var| {
        let sq = t.mul(v, v).unwrap();
        t.mean(sq).unwrap()
    };

    let gf = grad_of(&f);
    let gg = grad_of(&g);
    let gmix = grad_of(&|t: &mut Tape<f64>, v: Var| {
        let lf = f(t, v);
        let lg = g(t, v);
        let sa = t.mul_scalar(lf, a).unwrap();
        let sb = t.mul_scalar(lg, b).unwrap();
        t.add(sa, sb).unwrap()
    });
    for ((m, f_), g_) in gmix.iter().zip(&gf).zip(&gg) {
        assert!((m - (a * f_ + b * g_)).abs() < 1e-10);
    }
}

#[test]
fn every_train_time_distortion_passes_fd() {
    // Per-distortion input gradients at tolerance 1e-3; the RNG is reseeded
    // identically for every forward evaluation, so masks and rectangles are
    // fixed functions during differencing.
    let enc = test_tensor(vec![1, 3, 16, 16], 30).map(|v| v * 0.4 + 0.5);
    let cover = test_tensor(vec![1, 3, 16, 16], 31).map(|v| v * 0.4 + 0.5);
    let specs = [
        "identity",
        "dropout:0.3",
        "cropout:0.5",
        "crop:0.25",
        "blur:1.2",
        "gnoise:0.05",
        "resize:0.8",
        "jpeg_sim:50",
    ];
    for spec_str in specs {
        let spec = noise::NoiseSpec::parse(spec_str).unwrap();
        let result = check_grads(
            &[enc.clone()],
            |t, v| {
                let c = t.constant(&cover);
                let mut rng = ChaCha8Rng::seed_from_u64(77);
                let out = noise::apply(t, spec, v[0], c, &mut rng).map_err(|_| {
                    TensorError::InvalidArg {
                        op: "noise",
                        msg: spec_str.into(),
                    }
                })?;
                let sq = t.mul(out, out)?;
                t.sum(sq)
            },
            FD_STEP,
            1e-3,
        );
        if let Err(failures) = result {
            panic!("{spec_str}: {} mismatches, first {:?}", failures.len(), failures[0]);
        }
    }
}
