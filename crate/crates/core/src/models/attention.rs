//! Full and ProbSparse scaled dot-product attention over `[groups, len, dim]` tensors.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::tensor::{Graph, Tensor, Var};

fn check_qkv(g: &Graph, q: Var, k: Var, v: Var) -> Result<(usize, usize, usize, usize)> {
    let (sq, sk, sv) = (g.shape(q), g.shape(k), g.shape(v));
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
        return Err(dim_err!("attention expects rank-3 inputs, got {sq:?} {sk:?} {sv:?}"));
    }
    if sq[0] != sk[0] || sk[0] != sv[0] {
        return Err(dim_err!("attention group sizes differ: {sq:?} {sk:?} {sv:?}"));
    }
    if sq[2] != sk[2] {
        return Err(dim_err!("query and key dims differ: {sq:?} vs {sk:?}"));
    }
    if sk[1] != sv[1] {
        return Err(dim_err!("key and value lengths differ: {sk:?} vs {sv:?}"));
    }
    Ok((sq[0], sq[1], sk[1], sq[2]))
}

/// `softmax(Q K^T / sqrt(d_k)) V` recorded on `g`.
pub fn full_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let (_, _, _, dk) = check_qkv(g, q, k, v)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = g.softmax(scaled, 2)?;
    g.matmul(weights, v)
}

/// `max(1, min(len, ceil(c * ln len)))`.
pub fn sparse_count(c: f64, len: usize) -> usize {
    let raw = (c * (len as f64).ln()).ceil();
    if raw >= len as f64 {
        len
    } else {
        (raw as usize).max(1)
    }
}

/// Query rows chosen for full attention in each group, by max-minus-mean sparsity
/// score over per-query sampled keys. Ties keep the lower row index.
pub fn select_active_queries<R: Rng + ?Sized>(
    q: &Tensor,
    k: &Tensor,
    factor: f64,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let (groups, lq, dk) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let lk = k.shape()[1];
    let u = sparse_count(factor, lq);
    let n_sample = sparse_count(factor, lk);
    // One key subset per query row (without replacement), shared across groups.
    // A subset of size L_K is every key, which makes the score exact.
    let samples: Vec<Vec<usize>> = (0..lq)
        .map(|_| {
            if n_sample == lk {
                (0..lk).collect()
            } else {
                rand::seq::index::sample(rng, lk, n_sample).into_vec()
            }
        })
        .collect();
    let scale = 1.0 / (dk as f64).sqrt();
    let (qd, kd) = (q.data(), k.data());
    (0..groups)
        .map(|grp| {
            let mut scored: Vec<(usize, f64)> = (0..lq)
                .map(|i| {
                    let qi = &qd[(grp * lq + i) * dk..(grp * lq + i + 1) * dk];
                    let dots = samples[i].iter().map(|&j| {
                        let kj = &kd[(grp * lk + j) * dk..(grp * lk + j + 1) * dk];
                        qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                    });
                    let (max, sum) = dots.fold((f64::NEG_INFINITY, 0.0), |(m, s), d| (m.max(d), s + d));
                    (i, max - sum / n_sample as f64)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
            let mut rows: Vec<usize> = scored[..u].iter().map(|(i, _)| *i).collect();
            rows.sort_unstable();
            rows
        })
        .collect()
}

/// ProbSparse self-attention: the top-`u` queries attend over all keys, every
/// other query row outputs the mean of `V`. With `u == L_Q` this is exactly
/// [`full_attention`].
pub fn prob_sparse_attention<R: Rng + ?Sized>(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    factor: f64,
    rng: &mut R,
) -> Result<Var> {
    let (groups, lq, _, _) = check_qkv(g, q, k, v)?;
    if sparse_count(factor, lq) >= lq {
        return full_attention(g, q, k, v);
    }
    let rows = select_active_queries(g.value(q), g.value(k), factor, rng);
    let dv = g.shape(v)[2];
    let mean_v = g.mean_axis(v, 1)?;
    let lazy = g.broadcast_to(mean_v, &[groups, lq, dv])?;
    let q_active = g.gather_rows(q, &rows)?;
    let active = full_attention(g, q_active, k, v)?;
    g.scatter_rows(lazy, active, &rows)
}

/// Tensor-level convenience around [`full_attention`].
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = full_attention(&mut g, qv, kv, vv)?;
    Ok(g.value(out).clone())
}

/// Tensor-level convenience around [`prob_sparse_attention`].
pub fn prob_sparse(q: &Tensor, k: &Tensor, v: &Tensor, factor: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let out = prob_sparse_attention(&mut g, qv, kv, vv, factor, rng)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::Error;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct per-row formula, independent of the graph ops.
    fn attention_oracle(q: &Tensor, k: &Tensor, v: &Tensor) -> Vec<f64> {
        let (g, lq, dk) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let (lk, dv) = (k.shape()[1], v.shape()[2]);
        let mut out = vec![0.0; g * lq * dv];
        for grp in 0..g {
            for i in 0..lq {
                let scores: Vec<f64> = (0..lk)
                    .map(|j| {
                        (0..dk)
                            .map(|d| q.data()[(grp * lq + i) * dk + d] * k.data()[(grp * lk + j) * dk + d])
                            .sum::<f64>()
                            / (dk as f64).sqrt()
                    })
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for j in 0..lk {
                    let w = scores[j].exp() / z;
                    for d in 0..dv {
                        out[(grp * lq + i) * dv + d] += w * v.data()[(grp * lk + j) * dv + d];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_key_returns_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random(&[1, 3, 4], &mut rng);
        let k = random(&[1, 1, 4], &mut rng);
        let v = random(&[1, 1, 5], &mut rng);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for row in out.data().chunks(5) {
            for (a, b) in row.iter().zip(v.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saturated_match_selects_value_row() {
        let k = Tensor::new(&[1, 3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let q = Tensor::new(&[1, 1, 3], vec![0.0, 500.0, 0.0]).unwrap();
        let v = Tensor::new(&[1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        assert!((out.data()[0] - 3.0).abs() < 1e-9 && (out.data()[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random(&[1, 4, 8], &mut rng);
        let k = random(&[1, 4, 8], &mut rng);
        let v = random(&[1, 4, 8], &mut rng);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for (a, b) in out.data().iter().zip(attention_oracle(&q, &k, &v)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let q = Tensor::zeros(&[1, 2, 4]);
        let k = Tensor::zeros(&[1, 3, 5]);
        let v = Tensor::zeros(&[1, 3, 2]);
        assert!(matches!(scaled_dot_attention(&q, &k, &v), Err(Error::Dimension(_))));
        let k = Tensor::zeros(&[1, 3, 4]);
        let v = Tensor::zeros(&[1, 2, 2]);
        assert!(matches!(scaled_dot_attention(&q, &k, &v), Err(Error::Dimension(_))));
    }

    #[test]
    fn sparse_counts() {
        assert_eq!(sparse_count(5.0, 96), 23); // ceil(22.82)
        assert_eq!(sparse_count(50.0, 96), 96);
        assert_eq!(sparse_count(1.0, 96), 5); // ceil(4.56)
        assert_eq!(sparse_count(2.0, 16), 6); // ceil(5.55)
        assert_eq!(sparse_count(5.0, 1), 1);
        assert_eq!(sparse_count(1e-9, 10), 1);
    }

    #[test]
    fn large_factor_equals_full_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random(&[2, 16, 4], &mut rng);
        let k = random(&[2, 16, 4], &mut rng);
        let v = random(&[2, 16, 4], &mut rng);
        let full = scaled_dot_attention(&q, &k, &v).unwrap();
        let sparse = prob_sparse(&q, &k, &v, 100.0, &mut rng).unwrap();
        assert!(full.max_abs_diff(&sparse) < 1e-5);
    }

    #[test]
    fn single_query_equals_full_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random(&[3, 1, 4], &mut rng);
        let k = random(&[3, 7, 4], &mut rng);
        let v = random(&[3, 7, 2], &mut rng);
        let full = scaled_dot_attention(&q, &k, &v).unwrap();
        let sparse = prob_sparse(&q, &k, &v, 0.5, &mut rng).unwrap();
        assert_eq!(full.data(), sparse.data());
    }

    #[test]
    fn zero_queries_yield_mean_value_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Tensor::zeros(&[1, 20, 4]);
        let k = random(&[1, 20, 4], &mut rng);
        let v = random(&[1, 20, 3], &mut rng);
        let out = prob_sparse(&q, &k, &v, 1.0, &mut rng).unwrap();
        let mean: Vec<f64> = (0..3)
            .map(|d| (0..20).map(|j| v.data()[j * 3 + d]).sum::<f64>() / 20.0)
            .collect();
        for row in out.data().chunks(3) {
            for (a, b) in row.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_queries_give_identical_selected_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let row = random(&[1, 1, 4], &mut rng);
        let q = Tensor::new(&[1, 20, 4], row.data().repeat(20)).unwrap();
        let k = random(&[1, 20, 4], &mut rng);
        let v = random(&[1, 20, 3], &mut rng);
        let full = scaled_dot_attention(&q, &k, &v).unwrap();
        let mut sel_rng = ChaCha8Rng::seed_from_u64(7);
        let rows = select_active_queries(&q, &k, 1.0, &mut sel_rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let out = prob_sparse(&q, &k, &v, 1.0, &mut rng2).unwrap();
        for r in &rows[0] {
            for d in 0..3 {
                assert!((out.data()[r * 3 + d] - full.data()[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lazy_rows_are_value_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random(&[2, 30, 4], &mut rng);
        let k = random(&[2, 30, 4], &mut rng);
        let v = random(&[2, 30, 3], &mut rng);
        let rows = select_active_queries(&q, &k, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let out = prob_sparse(&q, &k, &v, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(rows[0].len(), sparse_count(1.0, 30));
        for grp in 0..2 {
            for i in (0..30).filter(|i| !rows[grp].contains(i)) {
                for d in 0..3 {
                    let mean = (0..30).map(|j| v.data()[(grp * 30 + j) * 3 + d]).sum::<f64>() / 30.0;
                    assert!((out.data()[(grp * 30 + i) * 3 + d] - mean).abs() < 1e-12);
                }
            }
        }
    }
}
