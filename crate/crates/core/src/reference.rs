//! Brute-force oracles. Both always run in `f64` and materialise every
//! intermediate: the full `N x N` score matrix for softmax attention and the
//! explicit `D x D` content matrix for the factorised linear attention.

use rayon::prelude::*;

use crate::error::Result;
use crate::tensor::{gemm, softmax_feat, softmax_seq, Matrix, Tensor3};

/// `softmax(Q Kᵀ / √D) V` per batch entry.
pub fn vanilla_attention(q: &Tensor3, k: &Tensor3, v: &Tensor3) -> Result<Tensor3> {
    q.ensure_same_dims(k, "vanilla_attention q/k")?;
    q.ensure_same_dims(v, "vanilla_attention q/v")?;
    let scale = (q.dim() as f64).sqrt();
    let outs = (0..q.batch())
        .into_par_iter()
        .map(|b| {
            let scores = gemm(&q.batch_matrix(b), &k.batch_matrix(b), true)?.map(|s| s / scale);
            let weights = softmax_feat(&scores)?;
            gemm(&weights, &v.batch_matrix(b), false)
        })
        .collect::<Result<Vec<Matrix>>>()?;
    Tensor3::from_matrices(&outs)
}

/// The content matrix `softmax_seq(K)ᵀ V` (`D x D`) for every batch entry.
pub fn content_matrix_direct(k: &Tensor3, v: &Tensor3) -> Result<Vec<Matrix>> {
    k.ensure_same_dims(v, "content_matrix k/v")?;
    (0..k.batch())
        .map(|b| {
            let weights = softmax_seq(&k.batch_matrix(b))?;
            gemm(&weights.transpose(), &v.batch_matrix(b), false)
        })
        .collect()
}

/// `softmax_feat(Q) (softmax_seq(K)ᵀ V)` with the content matrix formed
/// explicitly. No `1/√D` scaling is applied on this path.
pub fn linear_attention_direct(q: &Tensor3, k: &Tensor3, v: &Tensor3) -> Result<Tensor3> {
    q.ensure_same_dims(k, "linear_attention q/k")?;
    q.ensure_same_dims(v, "linear_attention q/v")?;
    let contents = content_matrix_direct(k, v)?;
    let outs = contents
        .iter()
        .enumerate()
        .map(|(b, c)| gemm(&softmax_feat(&q.batch_matrix(b))?, c, false))
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_matrices(&outs)
}

/// Left-grouped `(softmax_feat(Q) softmax_seq(K)ᵀ) V`, which forms the
/// `N x N` product first. Same value as [`linear_attention_direct`] in exact
/// arithmetic; kept as an associativity witness.
pub fn linear_attention_left_grouped(q: &Tensor3, k: &Tensor3, v: &Tensor3) -> Result<Tensor3> {
    q.ensure_same_dims(k, "linear_attention q/k")?;
    q.ensure_same_dims(v, "linear_attention q/v")?;
    let outs = (0..q.batch())
        .map(|b| {
            let qf = softmax_feat(&q.batch_matrix(b))?;
            let ks = softmax_seq(&k.batch_matrix(b))?;
            let mixing = gemm(&qf, &ks, true)?;
            gemm(&mixing, &v.batch_matrix(b), false)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_matrices(&outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_random_tensor;

    #[test]
    fn vanilla_singleton_sequence_returns_v() {
        let q = seeded_random_tensor([2, 1, 5], 1).unwrap();
        let k = seeded_random_tensor([2, 1, 5], 2).unwrap();
        let v = seeded_random_tensor([2, 1, 5], 3).unwrap();
        assert_eq!(vanilla_attention(&q, &k, &v).unwrap(), v);
    }

    #[test]
    fn vanilla_equal_keys_average_v() {
        let q = seeded_random_tensor([1, 4, 3], 4).unwrap();
        let k = Tensor3::from_fn([1, 4, 3], |_, _, d| 0.1 * d as f64);
        let v = seeded_random_tensor([1, 4, 3], 5).unwrap();
        let out = vanilla_attention(&q, &k, &v).unwrap();
        for d in 0..3 {
            let mean = (0..4).map(|n| v.get(0, n, d)).sum::<f64>() / 4.0;
            for n in 0..4 {
                assert!((out.get(0, n, d) - mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn linear_singleton_and_constant() {
        let q = seeded_random_tensor([1, 1, 3], 6).unwrap();
        let k = seeded_random_tensor([1, 1, 3], 7).unwrap();
        let v = seeded_random_tensor([1, 1, 3], 8).unwrap();
        let c = &content_matrix_direct(&k, &v).unwrap()[0];
        for f in 0..3 {
            assert_eq!(c.row(f), v.data());
        }
        let out = linear_attention_direct(&q, &k, &v).unwrap();
        for (o, w) in out.data().iter().zip(v.data()) {
            assert!((o - w).abs() < 1e-15);
        }

        let q = seeded_random_tensor([2, 6, 4], 9).unwrap();
        let k = seeded_random_tensor([2, 6, 4], 10).unwrap();
        let v = Tensor3::from_fn([2, 6, 4], |_, _, _| 0.625);
        let out = linear_attention_direct(&q, &k, &v).unwrap();
        assert!(out.data().iter().all(|x| (x - 0.625).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch() {
        let a = Tensor3::zeros([1, 2, 3]);
        let b = Tensor3::zeros([1, 3, 3]);
        assert!(vanilla_attention(&a, &b, &a).is_err());
        assert!(linear_attention_direct(&a, &a, &b).is_err());
    }
}
