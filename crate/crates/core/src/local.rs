//! Block-local branch.
//!
//! The sequence is cut into `T = N / N_w` non-overlapping windows and softmax
//! attention runs inside each window only. The streaming kernel walks each
//! window's keys in tiles of `tile_len`, keeping a running max `m`, running
//! normaliser `l` and a `D`-wide accumulator per query row, and rescales both
//! by `exp(m_old - m)` whenever the max moves. Windows are independent and
//! are processed in parallel; tiles within a window are sequential.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::{rescale, Real};
use crate::reference::vanilla_attention;
use crate::tensor::Tensor3;

/// Q, K, V reshaped to `(B*T, N_w, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedTensors {
    pub q: Tensor3,
    pub k: Tensor3,
    pub v: Tensor3,
    pub window_count: usize,
    pub window_len: usize,
}

fn check_window(seq: usize, window_len: usize) -> Result<usize> {
    if window_len == 0 {
        return Err(Error::config("window_len must be at least 1"));
    }
    if !seq.is_multiple_of(window_len) {
        return Err(Error::Divisibility {
            len: seq,
            window: window_len,
        });
    }
    Ok(seq / window_len)
}

fn blockify_one(x: &Tensor3, window_len: usize) -> Result<Tensor3> {
    let t = check_window(x.seq(), window_len)?;
    // Window i of batch b is rows [i*N_w, (i+1)*N_w) of batch b, which in
    // row-major order is exactly blocked batch b*T + i.
    Tensor3::new([x.batch() * t, window_len, x.dim()], x.data().to_vec())
}

pub fn blockify(q: &Tensor3, k: &Tensor3, v: &Tensor3, window_len: usize) -> Result<BlockedTensors> {
    q.ensure_same_dims(k, "blockify q/k")?;
    q.ensure_same_dims(v, "blockify q/v")?;
    let window_count = check_window(q.seq(), window_len)?;
    Ok(BlockedTensors {
        q: blockify_one(q, window_len)?,
        k: blockify_one(k, window_len)?,
        v: blockify_one(v, window_len)?,
        window_count,
        window_len,
    })
}

/// Inverse of [`blockify`] for one tensor: `(B*T, N_w, D)` back to `(B, T*N_w, D)`.
pub fn deblockify(blocked: &Tensor3, original_batch: usize) -> Result<Tensor3> {
    if original_batch == 0 || !blocked.batch().is_multiple_of(original_batch) {
        return Err(Error::shape(format!(
            "blocked batch {} is not a multiple of original batch {original_batch}",
            blocked.batch()
        )));
    }
    let t = blocked.batch() / original_batch;
    Tensor3::new(
        [original_batch, t * blocked.seq(), blocked.dim()],
        blocked.data().to_vec(),
    )
}

/// Per-window vanilla attention: blockify, full softmax attention in every
/// window, deblockify. Oracle for [`local_block_attention`].
pub fn local_attention_reference(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    window_len: usize,
) -> Result<Tensor3> {
    let blocked = blockify(q, k, v, window_len)?;
    let out = vanilla_attention(&blocked.q, &blocked.k, &blocked.v)?;
    deblockify(&out, q.batch())
}

/// Streaming block-local attention in `f64`.
pub fn local_block_attention(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    window_len: usize,
    tile_len: usize,
) -> Result<Tensor3> {
    local_block_attention_in::<f64>(q, k, v, window_len, tile_len)
}

/// Streaming block-local attention with the online-softmax state carried in
/// `T`. Inputs are rounded to `T`; dot products and the per-tile `P V`
/// products accumulate in `f64` before being rounded back to `T`.
pub fn local_block_attention_in<T: Real>(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    window_len: usize,
    tile_len: usize,
) -> Result<Tensor3> {
    q.ensure_same_dims(k, "local attention q/k")?;
    q.ensure_same_dims(v, "local attention q/v")?;
    check_window(q.seq(), window_len)?;
    if tile_len == 0 || tile_len > window_len {
        return Err(Error::config(format!(
            "tile_len {tile_len} must be in 1..={window_len}"
        )));
    }

    let d = q.dim();
    let round = |t: &Tensor3| -> Vec<f64> { t.data().iter().map(|&x| T::of(x).wide()).collect() };
    let (qd, kd, vd) = (round(q), round(k), round(v));
    let scale = T::of((d as f64).sqrt());
    let window_stride = window_len * d;

    let mut out = vec![0.0; qd.len()];
    out.par_chunks_mut(window_stride)
        .enumerate()
        .for_each(|(w, out_w)| {
            let span = w * window_stride..(w + 1) * window_stride;
            window_streaming::<T>(
                &qd[span.clone()],
                &kd[span.clone()],
                &vd[span],
                out_w,
                d,
                tile_len,
                scale,
            );
        });
    Tensor3::new(q.dims(), out)
}

fn window_streaming<T: Real>(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    out: &mut [f64],
    d: usize,
    tile_len: usize,
    scale: T,
) {
    let rows = q.len() / d;
    let mut scores = vec![T::zero(); tile_len];
    let mut probs = vec![T::zero(); tile_len];
    let mut acc = vec![T::zero(); d];
    let mut pv = vec![0.0f64; d];

    for r in 0..rows {
        let q_r = &q[r * d..(r + 1) * d];
        let mut m = T::NEG_SENTINEL;
        let mut l = T::zero();
        acc.iter_mut().for_each(|a| *a = T::zero());

        let mut start = 0;
        while start < rows {
            let len = tile_len.min(rows - start);
            let mut tile_max = T::NEG_SENTINEL;
            for j in 0..len {
                let k_j = &k[(start + j) * d..(start + j + 1) * d];
                let dot: f64 = q_r.iter().zip(k_j).map(|(a, b)| a * b).sum();
                let s = T::of(dot) / scale;
                scores[j] = s;
                tile_max = tile_max.max(s);
            }
            let m_old = m;
            m = m.max(tile_max);
            let alpha = rescale(m_old, m);

            let mut p_sum = T::zero();
            for j in 0..len {
                probs[j] = (scores[j] - m).exp();
                p_sum = p_sum + probs[j];
            }
            pv.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..len {
                let p = probs[j].wide();
                let v_j = &v[(start + j) * d..(start + j + 1) * d];
                for (x, &vv) in pv.iter_mut().zip(v_j) {
                    *x += p * vv;
                }
            }
            for (a, &x) in acc.iter_mut().zip(&pv) {
                *a = *a * alpha + T::of(x);
            }
            l = l * alpha + p_sum;
            start += len;
        }

        for (o, &a) in out[r * d..(r + 1) * d].iter_mut().zip(&acc) {
            *o = (a / l).wide();
        }
    }
}
