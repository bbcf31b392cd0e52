//! Global linear branch.
//!
//! Output is `softmax_feat(Q) C` where `C = softmax_seq(K)ᵀ V` is a `D x D`
//! content matrix per batch entry. `C` is built without materialising
//! `softmax_seq(K)`: for every `(batch, feature f)` pair the sequence is
//! streamed in blocks of `seq_tile`, keeping a running max over column `f` of
//! `K`, a running normaliser and a `D`-wide accumulator of weighted `V` rows.
//! Memory is `O(D²)` per batch entry regardless of sequence length. Nothing on
//! this path is scaled by `1/√D`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::{rescale, Real};
use crate::tensor::{gemm, softmax_feat, Matrix, Tensor3};

/// Per-batch `D x D` content matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentMatrix {
    per_batch: Vec<Matrix>,
}

impl ContentMatrix {
    pub fn batches(&self) -> &[Matrix] {
        &self.per_batch
    }

    pub fn get(&self, b: usize) -> &Matrix {
        &self.per_batch[b]
    }

    pub fn into_batches(self) -> Vec<Matrix> {
        self.per_batch
    }
}

fn check_seq_tile(seq: usize, seq_tile: usize) -> Result<()> {
    if seq_tile == 0 || seq_tile > seq {
        return Err(Error::config(format!(
            "seq_tile {seq_tile} must be in 1..={seq}"
        )));
    }
    Ok(())
}

pub fn global_content_matrix_streaming(
    k: &Tensor3,
    v: &Tensor3,
    seq_tile: usize,
) -> Result<ContentMatrix> {
    global_content_matrix_streaming_in::<f64>(k, v, seq_tile)
}

/// Streaming content matrix with the running state carried in `T`. The
/// per-block `Pᵀ V_B` products accumulate in `f64` and are rounded to `T`.
pub fn global_content_matrix_streaming_in<T: Real>(
    k: &Tensor3,
    v: &Tensor3,
    seq_tile: usize,
) -> Result<ContentMatrix> {
    k.ensure_same_dims(v, "content matrix k/v")?;
    check_seq_tile(k.seq(), seq_tile)?;
    let [batch, n, d] = k.dims();
    let kd: Vec<T> = k.data().iter().map(|&x| T::of(x)).collect();
    let vd: Vec<f64> = v.data().iter().map(|&x| T::of(x).wide()).collect();

    let rows: Vec<Vec<f64>> = (0..batch * d)
        .into_par_iter()
        .map(|item| {
            let (b, f) = (item / d, item % d);
            let kb = &kd[b * n * d..(b + 1) * n * d];
            let vb = &vd[b * n * d..(b + 1) * n * d];
            feature_row_streaming::<T>(kb, vb, f, d, seq_tile)
        })
        .collect();

    let per_batch = rows
        .chunks_exact(d)
        .map(|feature_rows| Matrix::new(d, d, feature_rows.concat()))
        .collect::<Result<_>>()?;
    Ok(ContentMatrix { per_batch })
}

/// Row `f` of the content matrix for one batch entry.
fn feature_row_streaming<T: Real>(
    k: &[T],
    v: &[f64],
    f: usize,
    d: usize,
    seq_tile: usize,
) -> Vec<f64> {
    let n = k.len() / d;
    let mut m = T::NEG_SENTINEL;
    let mut norm = T::zero();
    let mut cv = vec![T::zero(); d];
    let mut pv = vec![0.0f64; d];
    let mut probs = vec![T::zero(); seq_tile];

    let mut start = 0;
    while start < n {
        let len = seq_tile.min(n - start);
        let column = (start..start + len).map(|row| k[row * d + f]);
        let block_max = column.clone().fold(T::NEG_SENTINEL, T::max);
        let m_old = m;
        m = m.max(block_max);
        let alpha = rescale(m_old, m);

        let mut p_sum = T::zero();
        for (p, key) in probs.iter_mut().zip(column) {
            *p = (key - m).exp();
            p_sum = p_sum + *p;
        }
        pv.iter_mut().for_each(|x| *x = 0.0);
        for (j, p) in probs[..len].iter().enumerate() {
            let p = p.wide();
            let row = &v[(start + j) * d..(start + j + 1) * d];
            for (x, &vv) in pv.iter_mut().zip(row) {
                *x += p * vv;
            }
        }
        for (c, &x) in cv.iter_mut().zip(&pv) {
            *c = *c * alpha + T::of(x);
        }
        norm = norm * alpha + p_sum;
        start += len;
    }
    cv.iter().map(|&c| (c / norm).wide()).collect()
}

pub fn global_linear_attention(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    seq_tile: usize,
) -> Result<Tensor3> {
    global_linear_attention_in::<f64>(q, k, v, seq_tile)
}

/// `softmax_feat(Q)` times the streamed content matrix. The feature softmax
/// is taken eagerly up front and the final projection is an explicit GEMM.
pub fn global_linear_attention_in<T: Real>(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    seq_tile: usize,
) -> Result<Tensor3> {
    q.ensure_same_dims(k, "global attention q/k")?;
    let content = global_content_matrix_streaming_in::<T>(k, v, seq_tile)?;
    let round = |x: f64| T::of(x).wide();
    let outs = content
        .batches()
        .iter()
        .enumerate()
        .map(|(b, c)| {
            let q_feat = softmax_feat(&q.batch_matrix(b).map(round))?.map(round);
            Ok(gemm(&q_feat, c, false)?.map(round))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_matrices(&outs)
}
