use spectraforge_tensornet::*;

fn t4(shape: [usize; 4], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Direct nested-loop cross-correlation with zero padding.
fn conv_oracle(x: &Tensor, k: &Tensor, b: &[f32]) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let (f, _, ks, _) = k.dims4().unwrap();
    let pad = (ks / 2) as isize;
    let mut out = vec![0.0; n * f * h * w];
    for i in 0..n {
        for fo in 0..f {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = b[fo] as f64;
                    for ci in 0..c {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    let xv = x.data()[((i * c + ci) * h + sy as usize) * w + sx as usize];
                                    let kv = k.data()[((fo * c + ci) * ks + ky) * ks + kx];
                                    s += xv as f64 * kv as f64;
                                }
                            }
                        }
                    }
                    out[((i * f + fo) * h + y) * w + xx] = s;
                }
            }
        }
    }
    out
}

#[test]
fn identity_kernel_is_identity() {
    let x = t4([1, 1, 4, 5], (0..20).map(|v| v as f32 * 0.1).collect());
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let kv = g.input(t4([1, 1, 3, 3], k));
    let bv = g.input(Tensor::zeros(&[1]));
    let y = g.conv2d(xv, kv, bv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn ones_kernel_on_constant_gives_nine_c_inside() {
    let c = 0.25f32;
    let mut g = Graph::new();
    let xv = g.input(Tensor::filled(&[1, 1, 6, 6], c));
    let kv = g.input(Tensor::filled(&[1, 1, 3, 3], 1.0));
    let bv = g.input(Tensor::zeros(&[1]));
    let y = g.conv2d(xv, kv, bv).unwrap();
    let out = g.value(y).data();
    for yy in 1..5 {
        for xx in 1..5 {
            assert_eq!(out[yy * 6 + xx], 9.0 * c);
        }
    }
    assert_eq!(out[0], 4.0 * c);
}

#[test]
fn conv_matches_loop_oracle_on_random_multichannel_input() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x = t4([2, 3, 7, 9], (0..2 * 3 * 63).map(|_| rng.random_range(-1.0..1.0)).collect());
    let k = t4([4, 3, 3, 3], (0..108).map(|_| rng.random_range(-1.0..1.0)).collect());
    let b: Vec<f32> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.input(x.clone()), g.input(k.clone()), g.input(Tensor::new(vec![4], b.clone()).unwrap()));
    let y = g.conv2d(xv, kv, bv).unwrap();
    for (a, o) in g.value(y).data().iter().zip(conv_oracle(&x, &k, &b)) {
        assert!((*a as f64 - o).abs() < 1e-5);
    }
}

#[test]
fn conv_rejects_mismatched_kernel() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 2, 4, 4]));
    let k = g.input(Tensor::zeros(&[1, 3, 3, 3]));
    let b = g.input(Tensor::zeros(&[1]));
    assert!(matches!(g.conv2d(x, k, b), Err(TensorError::Shape(_))));
}

#[test]
fn resize_keeps_constants() {
    for (h, w) in [(1, 1), (3, 5), (8, 8), (17, 4)] {
        let mut g = Graph::new();
        let x = g.input(Tensor::filled(&[1, 2, 6, 6], 0.7));
        let y = g.resize(x, h, w).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, h, w]);
        assert!(g.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
    }
}

#[test]
fn maxpool_picks_maximum() {
    let mut g = Graph::new();
    let x = g.input(t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    let y = g.maxpool2(x).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_tie_routes_gradient_to_first_in_scan_order() {
    let mut g = Graph::new();
    let x = g.param(t4([1, 1, 2, 2], vec![0.5, 0.5, 0.5, 0.5]));
    let y = g.maxpool2(x).unwrap();
    let s = g.sum_weighted(y, &[1.0]).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn concat_stacks_channels() {
    let mut g = Graph::new();
    let a = g.input(t4([1, 1, 1, 2], vec![1.0, 2.0]));
    let b = g.input(t4([1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]));
    let y = g.concat(a, b).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 3, 1, 2]);
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let c = g.input(Tensor::zeros(&[1, 1, 2, 2]));
    assert!(g.concat(a, c).is_err());
}

#[test]
fn activations() {
    let mut g = Graph::new();
    let x = g.input(t4([1, 1, 1, 3], vec![-2.0, 0.0, 3.0]));
    let l = g.leaky_relu(x, 0.01).unwrap();
    assert_eq!(g.value(l).data(), &[-0.02, 0.0, 3.0]);
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s).data()[1], 0.5);
}

#[test]
fn non_finite_forward_is_reported() {
    let mut g = Graph::new();
    let x = g.input(t4([1, 1, 1, 2], vec![f32::NAN, 1.0]));
    assert!(matches!(g.leaky_relu(x, 0.01), Err(TensorError::NonFinite { op: "leaky_relu", .. })));
}

#[test]
fn square_has_gradient_two_w() {
    // Single-element MSE against zero is w².
    let mut g = Graph::new();
    let w = g.param(t4([1, 1, 1, 1], vec![1.5]));
    let l = loss_mse(&mut g, w, &Tensor::zeros(&[1, 1, 1, 1]), None).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.scalar(l).unwrap(), 2.25);
    assert_eq!(g.grad(w).unwrap().data(), &[3.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[1, 1, 2, 2]));
    let y = g.sigmoid(x).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::NotScalar(_))));
}

#[test]
fn adam_first_step_moves_about_lr_against_gradient() {
    let cfg = AdamConfig::with_lr(1e-3);
    let mut params = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
    let grads = vec![Tensor::new(vec![3], vec![0.3, -7.0, 1e-3]).unwrap()];
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
    // First bias-corrected step is lr·g/(|g| + eps).
    for ((p, p0), g) in params[0].data().iter().zip([1.0f64, -2.0, 0.5]).zip([0.3f64, -7.0, 1e-3]) {
        let expected = p0 - 1e-3 * g / (g.abs() + 1e-8);
        assert!((*p as f64 - expected).abs() < 1e-6, "{p} vs {expected}");
    }
    assert_eq!(state.step, 1);
}

#[test]
fn adam_with_zero_lr_keeps_parameters() {
    let cfg = AdamConfig::with_lr(0.0);
    let start = vec![Tensor::new(vec![2], vec![0.123, -4.5]).unwrap()];
    let mut params = start.clone();
    let grads = vec![Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()];
    let mut state = AdamState::new(&params);
    for _ in 0..5 {
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
    }
    assert_eq!(params, start);
}
