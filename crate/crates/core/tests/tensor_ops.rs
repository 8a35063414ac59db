use protoshape_core::gradcheck;
use protoshape_core::tensor::{conv3d_forward, conv3d_transposed_forward, Graph, Tensor};
use protoshape_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn linear_zero_input_gives_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 4]));
    let w = g.param(random(&[4, 2], 1));
    let b = g.param(Tensor::zeros(&[2]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn linear_identity_weight_is_identity_map() {
    let xv = random(&[3, 4], 2);
    let mut g = Graph::new();
    let x = g.constant(xv.clone());
    let w = g.param(Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 }));
    let b = g.param(Tensor::zeros(&[4]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y), &xv);
}

#[test]
fn linear_rejects_mismatched_inner_dimension() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 4]));
    let w = g.param(Tensor::zeros(&[5, 2]));
    assert!(matches!(g.linear(x, w, None), Err(Error::Dimension { .. })));
}

#[test]
fn linear_gradients_match_finite_differences() {
    for seed in 0..3 {
        let inputs = vec![
            random(&[5, 4], seed),
            random(&[4, 3], seed + 10),
            random(&[3], seed + 20),
        ];
        let r = gradcheck::check(
            &inputs,
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                g.sum(y)
            },
            1e-5,
            64,
        )
        .unwrap();
        assert!(r.passes(1e-5), "seed {seed}: {r:?}");
    }
}

#[test]
fn conv3d_centered_delta_kernel_is_identity() {
    let x = random(&[1, 5, 5, 5], 3);
    let k = Tensor::from_fn(&[1, 1, 3, 3, 3], |i| if i == 13 { 1.0 } else { 0.0 });
    assert_eq!(conv3d_forward(&x, &k, 1).unwrap(), x);
}

#[test]
fn conv3d_zero_input_gives_zero() {
    let x = Tensor::zeros(&[2, 4, 4, 4]);
    let k = random(&[3, 2, 3, 3, 3], 4);
    for stride in [1, 2] {
        let y = conv3d_forward(&x, &k, stride).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn conv3d_rejects_non_cubic_input() {
    let x = Tensor::zeros(&[1, 4, 4, 5]);
    let k = Tensor::zeros(&[1, 1, 3, 3, 3]);
    assert!(matches!(conv3d_forward(&x, &k, 1), Err(Error::Dimension { .. })));
}

#[test]
fn conv3d_gradients_match_finite_differences() {
    for seed in 0..3 {
        for stride in [1, 2] {
            let inputs = vec![random(&[1, 4, 4, 4], seed), random(&[2, 1, 3, 3, 3], seed + 7)];
            let r = gradcheck::check(
                &inputs,
                |g, v| {
                    let y = g.conv3d(v[0], v[1], stride)?;
                    let y2 = g.mul(y, y)?;
                    g.sum(y2)
                },
                1e-5,
                64,
            )
            .unwrap();
            assert!(r.passes(1e-4), "seed {seed} stride {stride}: {r:?}");
        }
    }
}

#[test]
fn transposed_conv_of_zeros_is_zero() {
    let y = Tensor::zeros(&[2, 2, 2, 2]);
    let k = random(&[2, 3, 3, 3, 3], 5);
    let x = conv3d_transposed_forward(&y, &k, 2).unwrap();
    assert_eq!(x.shape(), &[3, 4, 4, 4]);
    assert!(x.data().iter().all(|v| *v == 0.0));
}

#[test]
fn transposed_conv_doubles_resolution() {
    let y = random(&[1, 2, 2, 2], 6);
    let k = random(&[1, 1, 3, 3, 3], 7);
    assert_eq!(conv3d_transposed_forward(&y, &k, 2).unwrap().shape(), &[1, 4, 4, 4]);
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    for seed in 0..3 {
        for (stride, r) in [(1, 4), (2, 4), (2, 8)] {
            let x = random(&[2, r, r, r], seed);
            let k = random(&[3, 2, 3, 3, 3], seed + 100);
            let ro = r / stride;
            let y = random(&[3, ro, ro, ro], seed + 200);
            let lhs = conv3d_forward(&x, &k, stride).unwrap().dot(&y);
            let rhs = x.dot(&conv3d_transposed_forward(&y, &k, stride).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn transposed_conv_gradients_match_finite_differences() {
    for seed in 0..3 {
        let inputs = vec![random(&[2, 2, 2, 2], seed), random(&[2, 1, 3, 3, 3], seed + 3)];
        let r = gradcheck::check(
            &inputs,
            |g, v| {
                let y = g.conv3d_transposed(v[0], v[1], 2)?;
                let y2 = g.mul(y, y)?;
                g.sum(y2)
            },
            1e-5,
            64,
        )
        .unwrap();
        assert!(r.passes(1e-4), "seed {seed}: {r:?}");
    }
}

#[test]
fn pointwise_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3], vec![-1.0, 2.0, 0.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 2.0, 0.0]);
    let t = g.tanh(x).unwrap();
    assert_eq!(g.value(t).data()[2], 0.0);
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s).data()[2], 0.5);
    let m = g.mul_scalar(x, 3.0).unwrap();
    assert_eq!(g.value(m).data(), &[-3.0, 6.0, 0.0]);
}

#[test]
fn tanh_slope_at_zero_is_one() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let t = g.tanh(x).unwrap();
    let loss = g.sum(t).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 1.0);

    let r = gradcheck::check(
        &[Tensor::scalar(0.0)],
        |g, v| {
            let t = g.tanh(v[0])?;
            g.sum(t)
        },
        1e-5,
        1,
    )
    .unwrap();
    assert!(r.passes(1e-4));
}

#[test]
fn pointwise_gradients_match_finite_differences() {
    for seed in 0..3 {
        let inputs = vec![random(&[4, 5], seed)];
        let r = gradcheck::check(
            &inputs,
            |g, v| {
                let a = g.tanh(v[0])?;
                let b = g.sigmoid(a)?;
                let c = g.mul_scalar(b, 1.7)?;
                let d = g.relu(v[0])?;
                let e = g.add(c, d)?;
                let e2 = g.mul(e, e)?;
                g.sum(e2)
            },
            1e-5,
            64,
        )
        .unwrap();
        assert!(r.passes(1e-4), "seed {seed}: {r:?}");
    }
}

#[test]
fn max_over_points_single_row_and_permutation() {
    let row = random(&[1, 6], 9);
    let mut g = Graph::new();
    let x = g.constant(row.clone());
    let m = g.max_over_points(x).unwrap();
    assert_eq!(g.value(m).data(), row.data());

    let pts = random(&[7, 4], 10);
    let mut perm = pts.data().chunks(4).map(|c| c.to_vec()).collect::<Vec<_>>();
    perm.reverse();
    perm.swap(1, 5);
    let permuted = Tensor::new(vec![7, 4], perm.concat()).unwrap();
    let mut g = Graph::new();
    let a = g.constant(pts);
    let b = g.constant(permuted);
    let ma = g.max_over_points(a).unwrap();
    let mb = g.max_over_points(b).unwrap();
    assert_eq!(g.value(ma), g.value(mb));
}

#[test]
fn max_over_points_rejects_empty() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[0, 3]));
    assert!(matches!(g.max_over_points(x), Err(Error::EmptyInput(_))));
}

#[test]
fn max_over_points_tie_routes_to_lowest_row() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3, 1], vec![2.0, 2.0, 1.0]).unwrap());
    let m = g.max_over_points(x).unwrap();
    let s = g.sum(m).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn max_over_points_gradients_match_finite_differences() {
    for seed in 0..3 {
        let inputs = vec![random(&[5, 3], seed)];
        let r = gradcheck::check(
            &inputs,
            |g, v| {
                let m = g.max_over_points(v[0])?;
                let m2 = g.mul(m, m)?;
                g.sum(m2)
            },
            1e-5,
            64,
        )
        .unwrap();
        assert!(r.passes(1e-6), "seed {seed}: {r:?}");
    }
}

#[test]
fn backward_of_sum_gives_ones() {
    let mut g = Graph::new();
    let w = g.param(random(&[3, 2], 11));
    let s = g.sum(w).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(w).unwrap().data().iter().all(|v| *v == 1.0));
}

#[test]
fn backward_of_zero_scaled_loss_gives_zero_grads() {
    let mut g = Graph::new();
    let w = g.param(random(&[3, 2], 12));
    let t = g.tanh(w).unwrap();
    let z = g.mul_scalar(t, 0.0).unwrap();
    let s = g.sum(z).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(w).unwrap().data().iter().all(|v| *v == 0.0));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let w = g.param(random(&[3], 13));
    assert!(matches!(g.backward(w), Err(Error::Contract(_))));
}

#[test]
fn composite_conv_relu_linear_matches_finite_differences() {
    for seed in 0..3 {
        let inputs = vec![
            random(&[1, 4, 4, 4], seed),
            random(&[2, 1, 3, 3, 3], seed + 1),
            random(&[2], seed + 2),
            random(&[16, 3], seed + 3),
            random(&[3], seed + 4),
        ];
        let r = gradcheck::check(
            &inputs,
            |g, v| {
                let c = g.conv3d(v[0], v[1], 2)?;
                let c = g.channel_bias(c, v[2])?;
                let c = g.relu(c)?;
                let flat = g.reshape(c, &[1, 16])?;
                let y = g.linear(flat, v[3], Some(v[4]))?;
                let y = g.tanh(y)?;
                g.sum(y)
            },
            1e-5,
            64,
        )
        .unwrap();
        assert!(r.passes(1e-3), "seed {seed}: {r:?}");
    }
}

#[test]
fn concat_and_scale_by_gradients_match_finite_differences() {
    for seed in 0..3 {
        let inputs = vec![random(&[2, 3], seed), random(&[1, 3], seed + 1), Tensor::scalar(0.7)];
        let r = gradcheck::check(
            &inputs,
            |g, v| {
                let a = g.scale_by(v[0], v[2])?;
                let c = g.concat(&[a, v[1]])?;
                let d = g.concat_cols(&[c, c])?;
                let d = g.tanh(d)?;
                g.mean(d)
            },
            1e-5,
            64,
        )
        .unwrap();
        assert!(r.passes(1e-4), "seed {seed}: {r:?}");
    }
}

#[test]
fn softmax_cross_entropy_gradients_match_finite_differences() {
    for seed in 0..3 {
        let inputs = vec![random(&[4, 3], seed)];
        let r = gradcheck::check(&inputs, |g, v| g.softmax_cross_entropy(v[0], &[0, 2, 1, 2]), 1e-5, 64).unwrap();
        assert!(r.passes(1e-5), "seed {seed}: {r:?}");
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.constant(random(&[1, 8, 8, 8], 21));
        let k = g.param(random(&[4, 1, 3, 3, 3], 22));
        let y = g.conv3d(x, k, 2).unwrap();
        let y = g.relu(y).unwrap();
        let s = g.sum(y).unwrap();
        let v = g.value(s).item();
        let grads = g.backward(s).unwrap();
        (v, grads.get(k).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(1e308));
    assert!(matches!(g.mul_scalar(x, 10.0), Err(Error::NonFinite(_))));
}
