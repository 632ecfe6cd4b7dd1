use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
}

/// Quadruple-loop convolution, deliberately naive; the oracle for the
/// im2col-backed implementation.
fn naive_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Tensor {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k) = (kernel.shape()[0], kernel.shape()[2]);
    let oh = conv_out_len(h, k, stride, padding);
    let ow = conv_out_len(w, k, stride, padding);
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let iv = input.data()[(ci * h + iy as usize) * w + ix as usize];
                            let kv = kernel.data()[((co * c_in + ci) * k + ky) * k + kx];
                            acc += iv * kv;
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

#[test]
fn identity_kernel_conv() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(
        vec![1, 3, 3],
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
    ));
    let k = tape.constant(Tensor::new(vec![1, 1, 1, 1], vec![1.0]));
    let b = tape.constant(Tensor::new(vec![1], vec![0.0]));
    let y = tape.conv2d(x, k, b, 1, 0);
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn relu_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![2], vec![-2.0, 3.0]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 3.0]);
}

#[test]
fn all_ones_kernel_center_sums_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let input = rand_tensor(&[1, 3, 3], &mut rng);
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let k = tape.constant(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]));
    let b = tape.constant(Tensor::new(vec![1], vec![0.0]));
    let y = tape.conv2d(x, k, b, 1, 1);
    // Direct summation oracle for the center output.
    let total: f64 = input.data().iter().sum();
    let center = tape.value(y).data()[4];
    assert!((center - total).abs() < 1e-12);
}

#[test]
fn conv2d_matches_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let c_in = rng.gen_range(1..4);
        let c_out = rng.gen_range(1..4);
        let k = [1, 3][rng.gen_range(0..2)];
        let h = rng.gen_range(k..8);
        let w = rng.gen_range(k..8);
        let stride = rng.gen_range(1..3);
        let padding = rng.gen_range(0..2);
        let input = rand_tensor(&[c_in, h, w], &mut rng);
        let kernel = rand_tensor(&[c_out, c_in, k, k], &mut rng);
        let bias = rand_tensor(&[c_out], &mut rng);

        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let kv = tape.constant(kernel.clone());
        let bv = tape.constant(bias.clone());
        let y = tape.conv2d(x, kv, bv, stride, padding);
        let expected = naive_conv2d(&input, &kernel, bias.data(), stride, padding);
        assert_eq!(tape.value(y).shape(), expected.shape());
        for (a, b) in tape.value(y).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12, "conv mismatch: {a} vs {b}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let input = rand_tensor(&[2, 6, 6], &mut rng);
        let kernel = rand_tensor(&[3, 2, 3, 3], &mut rng);
        let bias = rand_tensor(&[3], &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let k = tape.constant(kernel);
        let b = tape.constant(bias);
        let y = tape.conv2d(x, k, b, 2, 1);
        let s = tape.sigmoid(y);
        let m = tape.mean(s);
        tape.value(m).item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn backward_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]));
    let loss = tape.sum(x);
    let grads = tape.backward(loss);
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_sum_of_squares_is_2x() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]));
    let sq = tape.mul(x, x);
    let loss = tape.sum(sq);
    let grads = tape.backward(loss);
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 10.0]);
}

#[test]
#[should_panic(expected = "shape mismatch in add")]
fn add_shape_mismatch_panics() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2]));
    let b = tape.constant(Tensor::zeros(vec![3]));
    tape.add(a, b);
}

#[test]
#[should_panic(expected = "scalar loss")]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![2]));
    tape.backward(x);
}

#[test]
fn grad_check_linear_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&[6], &mut rng);
    let err = grad_check(
        &|tape: &mut Tape, x: Var| {
            let y = tape.affine(x, 3.0, -1.0);
            tape.sum(y)
        },
        &x,
        1e-5,
        32,
        &mut rng,
    );
    assert!(err < 1e-10, "linear grad check error {err}");
}

#[test]
fn grad_check_sigmoid_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&[8], &mut rng);
    let err = grad_check(
        &|tape: &mut Tape, x: Var| {
            let s = tape.sigmoid(x);
            tape.sum(s)
        },
        &x,
        1e-5,
        32,
        &mut rng,
    );
    assert!(err < 1e-6, "sigmoid grad check error {err}");
}

#[test]
fn grad_check_every_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    type BuildFn = Box<dyn Fn(&mut Tape, Var) -> Var>;

    let other = Tensor::new(vec![6], vec![0.3, -0.8, 1.2, 0.5, -1.1, 2.0]);
    let cases: Vec<(&str, Vec<usize>, BuildFn)> = vec![
        ("add", vec![6], {
            let o = other.clone();
            Box::new(move |t, x| {
                let c = t.constant(o.clone());
                let y = t.add(x, c);
                t.sum(y)
            })
        }),
        ("sub", vec![6], {
            let o = other.clone();
            Box::new(move |t, x| {
                let c = t.constant(o.clone());
                let y = t.sub(c, x);
                t.sum(y)
            })
        }),
        ("mul_self", vec![6], Box::new(|t, x| {
            let y = t.mul(x, x);
            t.sum(y)
        })),
        ("div", vec![6], {
            let o = other.clone();
            Box::new(move |t, x| {
                let c = t.constant(o.clone());
                let y = t.div(x, c);
                t.sum(y)
            })
        }),
        ("minimum", vec![6], {
            let o = other.clone();
            Box::new(move |t, x| {
                let c = t.constant(o.clone());
                let y = t.minimum(x, c);
                t.sum(y)
            })
        }),
        ("maximum", vec![6], {
            let o = other.clone();
            Box::new(move |t, x| {
                let c = t.constant(o.clone());
                let y = t.maximum(x, c);
                t.sum(y)
            })
        }),
        ("exp_mean", vec![6], Box::new(|t, x| {
            let y = t.exp(x);
            t.mean(y)
        })),
        ("log_of_softplusish", vec![6], Box::new(|t, x| {
            // keep the log argument positive
            let e = t.exp(x);
            let y = t.affine(e, 1.0, 0.5);
            let l = t.log(y);
            t.sum(l)
        })),
        ("abs", vec![6], Box::new(|t, x| {
            let y = t.abs(x);
            t.sum(y)
        })),
        ("relu", vec![6], Box::new(|t, x| {
            let y = t.relu(x);
            t.sum(y)
        })),
        ("pow_scalar", vec![6], Box::new(|t, x| {
            // square keeps the base domain unrestricted
            let y = t.pow_scalar(x, 2.0);
            t.sum(y)
        })),
        ("clamp", vec![6], Box::new(|t, x| {
            let y = t.clamp(x, -0.9, 0.9);
            t.sum(y)
        })),
        ("matmul", vec![3, 4], Box::new(|t, x| {
            let w = t.constant(Tensor::new(
                vec![4, 2],
                vec![0.5, -1.0, 0.25, 2.0, -0.75, 0.3, 1.5, -0.2],
            ));
            let y = t.matmul(x, w);
            t.sum(y)
        })),
        ("transpose", vec![3, 4], Box::new(|t, x| {
            let y = t.transpose(x);
            let z = t.mul(y, y);
            t.sum(z)
        })),
        ("reshape", vec![3, 4], Box::new(|t, x| {
            let y = t.reshape(x, vec![2, 6]);
            let z = t.mul(y, y);
            t.sum(z)
        })),
        ("concat_select_column", vec![4, 3], Box::new(|t, x| {
            let c = t.constant(Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
            let y = t.concat_rows(&[x, c]);
            let sel = t.select_rows(y, &[0, 2, 2, 5]);
            let col = t.column(sel, 1);
            let sq = t.mul(col, col);
            t.sum(sq)
        })),
        ("conv2d_input", vec![2, 5, 5], Box::new(|t, x| {
            let mut krng = ChaCha8Rng::seed_from_u64(99);
            let k: Vec<f64> = (0..2 * 2 * 9).map(|_| krng.gen_range(-1.0..1.0)).collect();
            let kv = t.constant(Tensor::new(vec![2, 2, 3, 3], k));
            let bv = t.constant(Tensor::new(vec![2], vec![0.1, -0.2]));
            let y = t.conv2d(x, kv, bv, 2, 1);
            let s = t.sigmoid(y);
            t.sum(s)
        })),
        ("conv2d_kernel", vec![2, 2, 3, 3], Box::new(|t, x| {
            let mut irng = ChaCha8Rng::seed_from_u64(98);
            let iv: Vec<f64> = (0..2 * 25).map(|_| irng.gen_range(-1.0..1.0)).collect();
            let i = t.constant(Tensor::new(vec![2, 5, 5], iv));
            let bv = t.constant(Tensor::new(vec![2], vec![0.1, -0.2]));
            let y = t.conv2d(i, x, bv, 1, 1);
            let s = t.sigmoid(y);
            t.sum(s)
        })),
        ("conv2d_bias", vec![2], Box::new(|t, x| {
            let mut irng = ChaCha8Rng::seed_from_u64(97);
            let iv: Vec<f64> = (0..2 * 16).map(|_| irng.gen_range(-1.0..1.0)).collect();
            let i = t.constant(Tensor::new(vec![2, 4, 4], iv));
            let kv: Vec<f64> = (0..2 * 2 * 9).map(|_| irng.gen_range(-1.0..1.0)).collect();
            let k = t.constant(Tensor::new(vec![2, 2, 3, 3], kv));
            let y = t.conv2d(i, k, x, 1, 0);
            let s = t.sigmoid(y);
            t.sum(s)
        })),
    ];

    for (name, shape, f) in &cases {
        let x = rand_tensor(shape, &mut rng);
        let err = grad_check(f, &x, 1e-5, 64, &mut rng);
        assert!(err < 1e-4, "grad check failed for {name}: {err}");
    }
}

#[test]
fn gradients_accumulate_across_uses() {
    // y = x * x + 3x; dy/dx = 2x + 3.
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![2.0, -1.0]));
    let sq = tape.mul(x, x);
    let lin = tape.affine(x, 3.0, 0.0);
    let y = tape.add(sq, lin);
    let loss = tape.sum(y);
    let grads = tape.backward(loss);
    assert_eq!(grads.get(x).unwrap().data(), &[7.0, 1.0]);
}

#[test]
fn constants_get_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]));
    let c = tape.constant(Tensor::new(vec![2], vec![3.0, 4.0]));
    let y = tape.mul(x, c);
    let loss = tape.sum(y);
    let grads = tape.backward(loss);
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
}
