use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{central_difference, max_relative_error};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

const TRIALS: u64 = 50;
const H: f64 = 1e-4;
const OP_TOL: f64 = 1e-5;

/// Compares backward against central differences of `sum(op(inputs) * w)` for a
/// random weighting `w`, over `TRIALS` random draws.
fn check_op<B>(name: &str, shapes: &[Vec<usize>], prep: fn(f64) -> f64, build: B)
where
    B: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|s| {
                let mut x = random(s, &mut rng);
                x.data_mut().iter_mut().for_each(|v| *v = prep(*v));
                x
            })
            .collect();
        let loss_of = |inputs: &[Tensor], weights: Option<&Tensor>| -> Result<(Graph, Vec<Var>, Var, Tensor)> {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
            let out = build(&mut g, &vars)?;
            let w = match weights {
                Some(w) => w.clone(),
                None => {
                    let mut wr = ChaCha8Rng::seed_from_u64(7 + trial);
                    random(g.shape(out), &mut wr)
                }
            };
            let wv = g.input(w.clone());
            let prod = g.mul(out, wv)?;
            let loss = g.sum(prod)?;
            Ok((g, vars, loss, w))
        };
        let (mut g, vars, loss, w) = loss_of(&inputs, None).unwrap();
        g.backward(loss).unwrap();
        for (idx, var) in vars.iter().enumerate() {
            let analytic = g.grad(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[idx].numel()]);
            let numeric = central_difference(inputs[idx].data(), H, |probe| {
                let mut perturbed = inputs.clone();
                perturbed[idx] = Tensor::new(inputs[idx].shape(), probe.to_vec())?;
                let (g, _, loss, _) = loss_of(&perturbed, Some(&w))?;
                Ok(g.value(loss).item())
            })
            .unwrap();
            worst = worst.max(max_relative_error(&analytic, &numeric).0);
        }
    }
    assert!(worst < OP_TOL, "{name}: max relative error {worst:e}");
}

fn id(x: f64) -> f64 {
    x
}

fn away_from_zero(x: f64) -> f64 {
    if x.abs() < 0.05 {
        x + 0.1
    } else {
        x
    }
}

#[test]
fn matmul_identity_and_annihilator() {
    let mut g = Graph::new();
    let eye = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let z = g.input(Tensor::zeros(&[2, 2]));
    let p = g.matmul(eye, m).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    let q = g.matmul(eye, z).unwrap();
    assert_eq!(g.value(q).data(), &[0.0; 4]);
}

#[test]
fn matmul_matches_triple_loop_on_3x4x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let mut g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    let want = naive_matmul(a.data(), b.data(), 3, 4, 2);
    for (x, y) in g.value(c).data().iter().zip(&want) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_matches_triple_loop_all_small_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in 1..=16 {
        for k in 1..=16 {
            for n in 1..=16 {
                let a = random(&[m, k], &mut rng);
                let b = random(&[k, n], &mut rng);
                let mut g = Graph::new();
                let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
                let c = g.matmul(va, vb).unwrap();
                let want = naive_matmul(a.data(), b.data(), m, k, n);
                let err = g
                    .value(c)
                    .data()
                    .iter()
                    .zip(&want)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-12, "{m}x{k}x{n}: {err}");
            }
        }
    }
}

#[test]
fn batched_matmul_matches_per_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 4, 5], &mut rng);
    let mut g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    assert_eq!(g.shape(c), &[2, 3, 5]);
    for s in 0..2 {
        let want = naive_matmul(&a.data()[s * 12..(s + 1) * 12], &b.data()[s * 20..(s + 1) * 20], 3, 4, 5);
        assert_eq!(&g.value(c).data()[s * 15..(s + 1) * 15], want.as_slice());
    }
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
    let c = g.input(Tensor::zeros(&[4, 3, 2]));
    let d = g.input(Tensor::zeros(&[5, 2, 2]));
    assert!(matches!(g.matmul(c, d), Err(Error::Dimension(_))));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[2], &[0.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.input(t(&[2], &[1000.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-12 && d[1] >= 0.0 && d[1] < 1e-300_f64.max(1e-12));
}

#[test]
fn softmax_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[8], &mut rng);
    let denom: f64 = x.data().iter().map(|v| v.exp()).sum();
    let mut g = Graph::new();
    let v = g.input(x.clone());
    let y = g.softmax(v, 0).unwrap();
    for (got, xi) in g.value(y).data().iter().zip(x.data()) {
        assert!((got - xi.exp() / denom).abs() < 1e-10);
    }
}

#[test]
fn softmax_rejects_nan() {
    let mut g = Graph::new();
    let x = g.input(t(&[2], &[f64::NAN, 0.0]));
    assert!(matches!(g.softmax(x, 0), Err(Error::Numeric(_))));
}

#[test]
fn softmax_along_inner_axis() {
    let mut g = Graph::new();
    let x = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let y = g.softmax(x, 0).unwrap();
    let d = g.value(y).data();
    for c in 0..3 {
        assert!((d[c] + d[3 + c] - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_is_permutation_equivariant(
        xs in prop::collection::vec(-50.0f64..50.0, 1..12),
        rot in 0usize..12,
    ) {
        let n = xs.len();
        let mut g = Graph::new();
        let v = g.input(Tensor::new(&[n], xs.clone()).unwrap());
        let y = g.softmax(v, 0).unwrap();
        let out = g.value(y).data().to_vec();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(out.iter().all(|&p| p >= 0.0));

        let r = rot % n;
        let mut permuted = xs.clone();
        permuted.rotate_left(r);
        let v2 = g.input(Tensor::new(&[n], permuted).unwrap());
        let y2 = g.softmax(v2, 0).unwrap();
        let mut expected = out.clone();
        expected.rotate_left(r);
        for (a, b) in g.value(y2).data().iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[2], &[-1.0, 2.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);

    let c = g.input(Tensor::full(&[1, 4], 3.0));
    let gamma = g.input(Tensor::full(&[4], 1.0));
    let beta = g.input(Tensor::zeros(&[4]));
    let n = g.layer_norm(c, gamma, beta, 1e-5).unwrap();
    assert_eq!(g.value(n).data(), &[0.0; 4]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = g.input(t(&[3], &[1.0, 2.0, 3.0]));
    assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
    assert!(matches!(g.dropout(x, 1.0, true, &mut rng), Err(Error::Config(_))));
}

#[test]
fn layer_norm_normalizes_last_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.input(random(&[3, 6], &mut rng));
    let gamma = g.input(Tensor::full(&[6], 1.0));
    let beta = g.input(Tensor::zeros(&[6]));
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    for row in g.value(y).data().chunks(6) {
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn dropout_scales_kept_units() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[10_000], 1.0));
    let y = g.dropout(x, 0.25, true, &mut rng).unwrap();
    let d = g.value(y).data();
    assert!(d.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    assert!((mean - 1.0).abs() < 0.05);
}

#[test]
fn broadcasting_add() {
    let mut g = Graph::new();
    let a = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = g.input(t(&[3], &[10.0, 20.0, 30.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let bad = g.input(t(&[2], &[1.0, 1.0]));
    assert!(matches!(g.add(a, bad), Err(Error::Dimension(_))));
}

#[test]
fn backward_trivial_cases() {
    let mut g = Graph::new();
    let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    let y = g.scale(x, 2.0).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn backward_reaches_every_trainable_leaf() {
    let mut g = Graph::new();
    let a = g.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = g.param(t(&[2], &[0.5, -0.5]));
    let c = g.input(t(&[2], &[1.0, 1.0]));
    let ab = g.add(a, b).unwrap();
    let abc = g.mul(ab, c).unwrap();
    let loss = g.mean(abc).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(a).is_some());
    assert!(g.grad(b).is_some());
    assert!(g.grad(c).is_none());
}

#[test]
fn forward_without_dropout_is_bitwise_pure() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = Graph::new();
        let x = g.input(random(&[4, 8], &mut rng));
        let w = g.input(random(&[8, 8], &mut rng));
        let h = g.matmul(x, w).unwrap();
        let s = g.softmax(h, 1).unwrap();
        let d = g.dropout(s, 0.3, false, &mut rng).unwrap();
        g.value(d).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn finite_difference_add_sub_mul_broadcast() {
    check_op("add", &[vec![2, 3], vec![3]], id, |g, v| g.add(v[0], v[1]));
    check_op("sub", &[vec![2, 1, 3], vec![4, 1]], id, |g, v| g.sub(v[0], v[1]));
    check_op("mul", &[vec![3, 4], vec![3, 1]], id, |g, v| g.mul(v[0], v[1]));
    check_op("mul-self", &[vec![5]], id, |g, v| g.mul(v[0], v[0]));
    check_op("scale", &[vec![2, 2]], id, |g, v| g.scale(v[0], -1.7));
}

#[test]
fn finite_difference_matmul() {
    check_op("matmul", &[vec![3, 4], vec![4, 2]], id, |g, v| g.matmul(v[0], v[1]));
    check_op("matmul-batched", &[vec![2, 3, 4], vec![2, 4, 5]], id, |g, v| g.matmul(v[0], v[1]));
    check_op("matmul-shared", &[vec![2, 3, 4], vec![4, 5]], id, |g, v| g.matmul(v[0], v[1]));
}

#[test]
fn finite_difference_shape_ops() {
    check_op("permute", &[vec![2, 3, 4]], id, |g, v| g.permute(v[0], &[2, 0, 1]));
    check_op("transpose", &[vec![3, 5]], id, |g, v| g.transpose(v[0]));
    check_op("reshape", &[vec![2, 6]], id, |g, v| g.reshape(v[0], &[3, 4]));
    check_op("broadcast_to", &[vec![2, 1, 3]], id, |g, v| g.broadcast_to(v[0], &[2, 4, 3]));
    check_op("narrow", &[vec![3, 6, 2]], id, |g, v| g.narrow(v[0], 1, 2, 3));
    check_op("concat", &[vec![2, 3], vec![2, 2]], id, |g, v| g.concat(&[v[0], v[1]], 1));
    check_op("gather_rows", &[vec![2, 5, 3]], id, |g, v| g.gather_rows(v[0], &[vec![4, 0], vec![1, 1]]));
    check_op("scatter_rows", &[vec![2, 5, 3], vec![2, 2, 3]], id, |g, v| {
        g.scatter_rows(v[0], v[1], &[vec![3, 1], vec![0, 4]])
    });
}

#[test]
fn finite_difference_activations() {
    check_op("relu", &[vec![4, 5]], away_from_zero, |g, v| g.relu(v[0]));
    check_op("gelu", &[vec![4, 5]], id, |g, v| g.gelu(v[0]));
    check_op("softmax-last", &[vec![3, 6]], id, |g, v| g.softmax(v[0], 1));
    check_op("softmax-first", &[vec![4, 3]], id, |g, v| g.softmax(v[0], 0));
    check_op("layer_norm", &[vec![3, 6], vec![6], vec![6]], id, |g, v| {
        g.layer_norm(v[0], v[1], v[2], 1e-5)
    });
}

#[test]
fn finite_difference_dropout_with_fixed_mask() {
    check_op("dropout", &[vec![4, 4]], id, |g, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        g.dropout(v[0], 0.3, true, &mut rng)
    });
}

#[test]
fn finite_difference_reductions() {
    check_op("sum", &[vec![3, 3]], id, |g, v| g.sum(v[0]));
    check_op("mean", &[vec![3, 3]], id, |g, v| g.mean(v[0]));
    check_op("mean_axis", &[vec![2, 4, 3]], id, |g, v| g.mean_axis(v[0], 1));
    check_op("mse_loss", &[vec![3, 2], vec![3, 2]], id, |g, v| g.mse_loss(v[0], v[1]));
}
