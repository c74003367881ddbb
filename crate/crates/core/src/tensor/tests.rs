use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f32]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0)).unwrap()
}

/// Direct quadruple loop, independent of the kernel code.
fn conv1d_oracle(x: &Tensor, w: &Tensor, b: &[f32], groups: usize) -> Vec<f32> {
    let (c_in, l) = (x.shape()[0], x.shape()[1]);
    let (c_out, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cout_g = c_out / groups;
    let pad = (k / 2) as isize;
    let mut out = vec![0.0f64; c_out * l];
    for co in 0..c_out {
        let g = co / cout_g;
        for pos in 0..l {
            let mut acc = b[co] as f64;
            for ci in 0..cin_g {
                for tap in 0..k {
                    let src = pos as isize + tap as isize - pad;
                    if src >= 0 && (src as usize) < l {
                        let xv = x.data()[(g * cin_g + ci) * l + src as usize] as f64;
                        acc += xv * w.data()[(co * cin_g + ci) * k + tap] as f64;
                    }
                }
            }
            out[co * l + pos] = acc;
        }
    }
    assert_eq!(c_in, groups * cin_g);
    out.into_iter().map(|v| v as f32).collect()
}

#[test]
fn construction_rejects_bad_tensors() {
    assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(&[0, 2], vec![]).is_err());
    assert!(matches!(
        Tensor::new(&[2], vec![1.0, f32::NAN]),
        Err(TensorError::NonFinite { .. })
    ));
    assert!(Tensor::new(&[1], vec![f32::INFINITY]).is_err());
}

#[test]
fn matmul_identity_and_basis() {
    let mut g = Graph::new();
    let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.data(p), &[1.0, 2.0, 3.0, 4.0]);

    let row = g.constant(t(&[1, 2], &[1.0, 0.0]));
    let col = g.constant(t(&[2, 1], &[5.0, 7.0]));
    let p = g.matmul(row, col).unwrap();
    assert_eq!(g.shape(p), &[1, 1]);
    assert_eq!(g.data(p), &[5.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let msg = alloc::format!("{}", err);
    assert!(msg.contains("[2, 3]"));
}

#[test]
fn matmul_gradient_is_b_transposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let mut g = Graph::new();
    let av = g.param(&a);
    let bv = g.constant(b.clone());
    let p = g.matmul(av, bv).unwrap();
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    // d sum(a·b) / d a[i][p] = sum_j b[p][j]
    let ga = g.grad(av).unwrap();
    for i in 0..3 {
        for p in 0..4 {
            let expect: f32 = b.data()[p * 2..p * 2 + 2].iter().sum();
            assert!((ga[i * 4 + p] - expect).abs() < 1e-6);
        }
    }
    let bb = b.clone();
    let report = gradcheck(
        move |g, x| {
            let bv = g.constant(bb.clone());
            let p = g.matmul(x, bv)?;
            g.sum(p)
        },
        &a,
        1e-3,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-3, "{:?}", report);
}

#[test]
fn conv1d_delta_kernel_mixes_channels() {
    // w[co][ci] is a centred delta scaled by (co + 1) * (ci + 1).
    let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0]);
    let mut wd = vec![0.0; 3 * 2 * 3];
    for co in 0..3 {
        for ci in 0..2 {
            wd[(co * 2 + ci) * 3 + 1] = ((co + 1) * (ci + 1)) as f32;
        }
    }
    let w = t(&[3, 2, 3], &wd);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w);
    let y = g.conv1d(xv, wv, None, 1).unwrap();
    assert_eq!(g.shape(y), &[3, 4]);
    for co in 0..3 {
        for l in 0..4 {
            let expect = (co + 1) as f32 * (x.data()[l] + 2.0 * x.data()[4 + l]);
            assert_eq!(g.data(y)[co * 4 + l], expect);
        }
    }
}

#[test]
fn conv1d_zero_input_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 9]));
    let w = g.constant(random(&[4, 2, 5], &mut rng));
    let b = g.constant(t(&[4], &[0.5, -1.0, 2.0, 0.0]));
    let y = g.conv1d(x, w, Some(b), 1).unwrap();
    for co in 0..4 {
        assert!(g.data(y)[co * 9..(co + 1) * 9].iter().all(|&v| v == g.data(b)[co]));
    }
}

#[test]
fn conv1d_rejects_even_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 8]));
    let w = g.constant(Tensor::zeros(&[1, 1, 4]));
    assert!(matches!(g.conv1d(x, w, None, 1), Err(TensorError::Invalid { .. })));
    let wd = g.constant(Tensor::zeros(&[1, 2]));
    assert!(g.conv1d_depthwise(x, wd, None).is_err());
}

#[test]
fn conv1d_matches_naive_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let groups = [1usize, 2, 3][rng.random_range(0..3)];
        let cin_g = rng.random_range(1..4);
        let cout_g = rng.random_range(1..4);
        let k = [1usize, 3, 5, 7][rng.random_range(0..4)];
        let l = rng.random_range(1..40);
        let x = random(&[groups * cin_g, l], &mut rng);
        let w = random(&[groups * cout_g, cin_g, k], &mut rng);
        let b = random(&[groups * cout_g], &mut rng);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv1d(xv, wv, Some(bv), groups).unwrap();
        let oracle = conv1d_oracle(&x, &w, b.data(), groups);
        assert_eq!(g.shape(y), &[groups * cout_g, l]);
        let diff = g.data(y).iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(diff < 1e-5, "diff {}", diff);
    }
}

#[test]
fn depthwise_shape_params_and_delta() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[3, 128], &mut rng);
    let mut w = vec![0.0; 15];
    for c in 0..3 {
        w[c * 5 + 2] = 1.0;
    }
    let w = t(&[3, 5], &w);
    let b = t(&[3], &[0.1, 0.2, 0.3]);
    assert_eq!(w.numel() + b.numel(), 15 + 3);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w), g.constant(b));
    let y = g.conv1d_depthwise(xv, wv, Some(bv)).unwrap();
    assert_eq!(g.shape(y), &[3, 128]);
    for c in 0..3 {
        for l in 0..128 {
            assert_eq!(g.data(y)[c * 128 + l], x.data()[c * 128 + l] + [0.1, 0.2, 0.3][c]);
        }
    }
}

#[test]
fn depthwise_equals_block_diagonal_dense_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, k, l) = (4, 7, 33);
    let x = random(&[c, l], &mut rng);
    let w = random(&[c, k], &mut rng);
    let b = random(&[c], &mut rng);
    // Dense weight with zero off-diagonal blocks.
    let mut dense = vec![0.0; c * c * k];
    for ch in 0..c {
        dense[(ch * c + ch) * k..(ch * c + ch + 1) * k].copy_from_slice(&w.data()[ch * k..(ch + 1) * k]);
    }
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x), g.constant(w), g.constant(b));
    let dv = g.constant(t(&[c, c, k], &dense));
    let y1 = g.conv1d_depthwise(xv, wv, Some(bv)).unwrap();
    let y2 = g.conv1d(xv, dv, Some(bv), 1).unwrap();
    assert!(g.value(y1).max_abs_diff(g.value(y2)) < 1e-6);
}

#[test]
fn depthwise_channel_mismatch_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 10]));
    let w = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.conv1d_depthwise(x, w, None), Err(TensorError::Shape { .. })));
}

#[test]
fn softmax_values() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2], &[0.0, 0.0]));
    let s = g.softmax(a).unwrap();
    assert_eq!(g.data(s), &[0.5, 0.5]);
    let one = g.constant(t(&[1], &[-37.0]));
    let s = g.softmax(one).unwrap();
    assert_eq!(g.data(s), &[1.0]);
    let a = g.constant(t(&[3], &[2.0, 0.0, 0.0]));
    let s = g.softmax(a).unwrap();
    // e^2 / (e^2 + 2) and 1 / (e^2 + 2), evaluated at 30 digits.
    let expect = [0.786_986_042_161_598_5, 0.106_506_978_919_200_75, 0.106_506_978_919_200_75];
    for (v, e) in g.data(s).iter().zip(expect) {
        assert!((*v as f64 - e).abs() < 1e-6);
    }
}

#[test]
fn softmax_rows_are_stochastic_for_extreme_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let n = rng.random_range(1..20);
        let rows = rng.random_range(1..5);
        let x = Tensor::from_fn(&[rows, n], |_| rng.random_range(-80.0f32..80.0)).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let s = g.softmax(xv).unwrap();
        for row in g.data(s).chunks(n) {
            assert!(row.iter().all(|&p| p >= 0.0));
            let total: f64 = row.iter().map(|&p| p as f64).sum();
            assert!((total - 1.0).abs() < 1e-6, "row sum {}", total);
        }
    }
}

#[test]
fn cross_entropy_values_and_errors() {
    let mut g = Graph::new();
    let u = g.constant(Tensor::zeros(&[1, 3]));
    let l = g.cross_entropy(u, &[2]).unwrap();
    assert!((g.data(l)[0] as f64 - 3f64.ln()).abs() < 1e-6);

    let z = g.constant(t(&[3], &[2.0, 0.0, 0.0]));
    let l = g.cross_entropy(z, &[0]).unwrap();
    // ln(1 + 2 e^-2)
    assert!((g.data(l)[0] as f64 - 0.239_544_766_221_884_5).abs() < 1e-6);

    assert!(matches!(g.cross_entropy(z, &[3]), Err(TensorError::Invalid { .. })));
    assert!(g.cross_entropy(u, &[0, 1]).is_err());
}

#[test]
fn cross_entropy_is_positive_unless_point_mass() {
    let mut g = Graph::new();
    let z = g.constant(t(&[2, 3], &[0.3, -0.2, 1.0, 5.0, 5.0, -1.0]));
    let l = g.cross_entropy(z, &[1, 0]).unwrap();
    assert!(g.data(l)[0] > 0.0);
    let peaked = g.constant(t(&[3], &[200.0, 0.0, 0.0]));
    let l = g.cross_entropy(peaked, &[0]).unwrap();
    assert_eq!(g.data(l)[0], 0.0);
}

#[test]
fn cross_entropy_of_linear_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[4, 5], &mut rng);
    let w = random(&[5, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let (w2, b2) = (w.clone(), b.clone());
    let report = gradcheck(
        move |g, x| {
            let wv = g.constant(w2.clone());
            let bv = g.constant(b2.clone());
            let z = g.linear(x, wv, Some(bv))?;
            g.cross_entropy(z, &[0, 2, 1, 1])
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-3, "{:?}", report);
    // and w.r.t. the weight
    let x2 = x.clone();
    let report = gradcheck(
        move |g, w| {
            let xv = g.constant(x2.clone());
            let bv = g.constant(b.clone());
            let z = g.linear(xv, w, Some(bv))?;
            g.cross_entropy(z, &[0, 2, 1, 1])
        },
        &w,
        1e-3,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-3, "{:?}", report);
}

#[test]
fn backward_basic_rules() {
    let w = t(&[4], &[1.0, -2.0, 0.5, 3.0]);
    let mut g = Graph::new();
    let wv = g.param(&w);
    let s = g.sum(wv).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(wv).unwrap(), &[1.0; 4]);

    let mut g = Graph::new();
    let wv = g.param(&w);
    let sq = g.mul(wv, wv).unwrap();
    let s = g.sum(sq).unwrap();
    let half = g.scale(s, 0.5).unwrap();
    g.backward(half).unwrap();
    assert_eq!(g.grad(wv).unwrap(), w.data());
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let w = g.param(&Tensor::full(&[3], 1.0));
    assert!(matches!(g.backward(w), Err(TensorError::NonScalarLoss(_))));
    let s = g.sum(w).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.backward(s), Err(TensorError::BackwardTwice));

    let mut g = Graph::new();
    let c = g.constant(Tensor::full(&[3], 1.0));
    let s = g.sum(c).unwrap();
    assert_eq!(g.backward(s), Err(TensorError::Detached));
}

#[test]
fn gradcheck_of_sum_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[3, 7], &mut rng);
    let r = gradcheck(|g, x| g.sum(x), &x, 1e-3).unwrap();
    assert!(r.max_rel_err < 1e-7, "{:?}", r);
    assert_eq!(r.checked, 21);
}

#[test]
fn gradcheck_detects_nondeterminism() {
    use core::sync::atomic::{AtomicU32, Ordering};
    let counter = AtomicU32::new(0);
    let x = Tensor::full(&[2], 1.0);
    let r = gradcheck(
        |g, x| {
            let k = counter.fetch_add(1, Ordering::Relaxed) as f32;
            let s = g.sum(x)?;
            g.scale(s, 1.0 + k)
        },
        &x,
        1e-3,
    );
    assert_eq!(r.unwrap_err(), TensorError::NonDeterministic);
}

/// Every elementary op passes the finite-difference check at 1e-3.
#[test]
fn every_op_passes_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-3;
    let tol = 1e-3;
    let x = random(&[3, 6], &mut rng);
    // Weighted sum keeps the output sensitive to every element.
    let probe = random(&[3, 6], &mut rng);

    let check = |name: &str, r: GradCheck| assert!(r.max_rel_err < tol, "{}: {:?}", name, r);

    let p = probe.clone();
    let weighted = move |g: &mut Graph, y: Var| -> Result<Var, TensorError> {
        let n = g.value(y).numel();
        let pv = g.constant(Tensor::new(g.shape(y), p.data()[..n].to_vec()).unwrap());
        let m = g.mul(y, pv)?;
        g.sum(m)
    };
    let wsum = |g: &mut Graph, y: Var| {
        let shape = g.shape(y).to_vec();
        let pv = g.constant(Tensor::from_fn(&shape, |i| ((i * 7 % 11) as f32 - 5.0) / 5.0).unwrap());
        let m = g.mul(y, pv)?;
        g.sum(m)
    };

    check("relu", gradcheck(|g, x| { let y = g.relu(x)?; weighted(g, y) }, &x, h).unwrap());
    check("softmax", gradcheck(|g, x| { let y = g.softmax(x)?; weighted(g, y) }, &x, h).unwrap());
    check("layer_norm", gradcheck(|g, x| { let y = g.layer_norm(x)?; weighted(g, y) }, &x, h).unwrap());
    check("transpose", gradcheck(|g, x| { let y = g.transpose(x)?; wsum(g, y) }, &x, h).unwrap());
    check("scale", gradcheck(|g, x| { let y = g.scale(x, -2.5)?; weighted(g, y) }, &x, h).unwrap());
    check("mean_last", gradcheck(|g, x| { let y = g.mean_last(x)?; wsum(g, y) }, &x, h).unwrap());
    check("reshape", gradcheck(|g, x| { let y = g.reshape(x, &[6, 3])?; wsum(g, y) }, &x, h).unwrap());
    check("gather_rows", gradcheck(|g, x| { let y = g.gather_rows(x, &[2, 0, 2, 1])?; wsum(g, y) }, &x, h).unwrap());
    let other = random(&[3, 6], &mut rng);
    let o2 = other.clone();
    check("add", gradcheck(move |g, x| { let o = g.constant(o2.clone()); let y = g.add(x, o)?; wsum(g, y) }, &x, h).unwrap());
    let o2 = other.clone();
    check("mul", gradcheck(move |g, x| { let o = g.constant(o2.clone()); let y = g.mul(x, o)?; wsum(g, y) }, &x, h).unwrap());
    let o2 = other.clone();
    check("concat0", gradcheck(move |g, x| { let o = g.constant(o2.clone()); let y = g.concat(&[o, x, x], 0)?; wsum(g, y) }, &x, h).unwrap());
    let o2 = other.clone();
    check("concat1", gradcheck(move |g, x| { let o = g.constant(o2.clone()); let y = g.concat(&[x, o], 1)?; wsum(g, y) }, &x, h).unwrap());
    let m = random(&[6, 4], &mut rng);
    check("matmul", gradcheck(move |g, x| { let mv = g.constant(m.clone()); let y = g.matmul(x, mv)?; wsum(g, y) }, &x, h).unwrap());
    let w = random(&[6, 2], &mut rng);
    let b = random(&[2], &mut rng);
    check("linear", gradcheck(move |g, x| {
        let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
        let y = g.linear(x, wv, Some(bv))?;
        wsum(g, y)
    }, &x, h).unwrap());

    // convolutions, w.r.t. input and weights
    let w1 = random(&[3, 1, 5], &mut rng);
    let w1c = w1.clone();
    check("conv1d_x", gradcheck(move |g, x| { let wv = g.constant(w1c.clone()); let y = g.conv1d(x, wv, None, 3)?; wsum(g, y) }, &x, h).unwrap());
    // grouped conv with 3 groups needs c_out divisible by 3
    let w1 = random(&[6, 1, 5], &mut rng);
    let xc = x.clone();
    check("conv1d_w", gradcheck(move |g, w| { let xv = g.constant(xc.clone()); let y = g.conv1d(xv, w, None, 3)?; wsum(g, y) }, &w1, h).unwrap());
    let wd = random(&[3, 3], &mut rng);
    let bd = random(&[3], &mut rng);
    let xc = x.clone();
    let bdc = bd.clone();
    check("depthwise_w", gradcheck(move |g, w| { let xv = g.constant(xc.clone()); let bv = g.constant(bdc.clone()); let y = g.conv1d_depthwise(xv, w, Some(bv))?; wsum(g, y) }, &wd, h).unwrap());
    let xc = x.clone();
    check("depthwise_b", gradcheck(move |g, b| { let xv = g.constant(xc.clone()); let wv = g.constant(wd.clone()); let y = g.conv1d_depthwise(xv, wv, Some(b))?; wsum(g, y) }, &bd, h).unwrap());

    let img = random(&[2, 6, 6], &mut rng);
    let k2 = random(&[3, 2, 3, 3], &mut rng);
    let b2 = random(&[3], &mut rng);
    let (k2c, b2c) = (k2.clone(), b2.clone());
    check("conv2d_x", gradcheck(move |g, x| { let (wv, bv) = (g.constant(k2c.clone()), g.constant(b2c.clone())); let y = g.conv2d(x, wv, Some(bv))?; wsum(g, y) }, &img, h).unwrap());
    let imgc = img.clone();
    check("conv2d_w", gradcheck(move |g, w| { let xv = g.constant(imgc.clone()); let y = g.conv2d(xv, w, None)?; wsum(g, y) }, &k2, h).unwrap());
    check("max_pool2d", gradcheck(|g, x| { let y = g.max_pool2d(x, 2)?; wsum(g, y) }, &img, h).unwrap());
    check("avg_pool2d", gradcheck(|g, x| { let y = g.avg_pool2d(x, 3)?; wsum(g, y) }, &img, h).unwrap());
    check("cross_entropy", gradcheck(|g, x| g.cross_entropy(x, &[5, 0, 3]), &x, h).unwrap());
}

#[test]
fn identical_inputs_give_bit_identical_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = random(&[3, 16, 16], &mut rng);
    let k = random(&[4, 3, 3, 3], &mut rng);
    let run = || {
        let mut g = Graph::new();
        let (x, w) = (g.constant(img.clone()), g.param(&k));
        let y = g.conv2d(x, w, None).unwrap();
        let y = g.relu(y).unwrap();
        let y = g.max_pool2d(y, 2).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        (g.data(y).to_vec(), g.grad(w).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(ga.iter().zip(&gb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn shape_errors_raise_before_compute() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 2]));
    let img = g.constant(Tensor::zeros(&[1, 5, 5]));
    let before = g.len();
    assert!(g.add(a, b).is_err());
    assert!(g.mul(a, b).is_err());
    assert!(g.concat(&[a, b], 0).is_err());
    assert!(g.reshape(a, &[5]).is_err());
    assert!(g.linear(a, a, None).is_err());
    assert!(g.max_pool2d(img, 2).is_err());
    assert_eq!(g.len(), before);
}

#[test]
fn probes_straddling_a_relu_kink_are_skipped() {
    let x = Tensor::new(&[3], vec![0.0002, -0.8, 0.5]).unwrap();
    let r = gradcheck(
        |g, x| {
            let y = g.relu(x)?;
            g.sum(y)
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert_eq!((r.checked, r.skipped), (2, 1));
    assert!(r.max_rel_err < 1e-6);
}
