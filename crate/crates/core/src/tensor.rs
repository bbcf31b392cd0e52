//! Dense row-major tensors and the primitives every attention path is built
//! from: a fixed-order GEMM and the two max-subtracted softmax
//! normalisations (along features and along the sequence).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

/// `a · b` (or `a · bᵀ` when `transpose_b`).
///
/// The loop nest is fixed at i-k-j, so every output element is accumulated
/// over `k` in increasing order starting from `0.0`. Results are therefore
/// bit-reproducible and match a naive triple loop exactly.
pub fn gemm(a: &Matrix, b: &Matrix, transpose_b: bool) -> Result<Matrix> {
    let (inner_b, n) = if transpose_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if a.cols != inner_b {
        return Err(Error::shape(format!(
            "gemm inner dimensions disagree: a is {}, b is {}{}",
            a.shape_str(),
            b.shape_str(),
            if transpose_b { " (transposed)" } else { "" }
        )));
    }
    let transposed;
    let b = if transpose_b {
        transposed = b.transpose();
        &transposed
    } else {
        b
    };
    let m = a.rows;
    let kk = a.cols;
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for k in 0..kk {
            let a_ik = a.data[i * kk + k];
            let b_row = &b.data[k * n..(k + 1) * n];
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij += a_ik * bkj;
            }
        }
    }
    Ok(Matrix {
        rows: m,
        cols: n,
        data: c,
    })
}

/// Max-subtracted softmax of a contiguous slice, written into `out`.
pub(crate) fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Softmax along the feature (column) axis: every row sums to one.
pub fn softmax_feat(x: &Matrix) -> Result<Matrix> {
    if x.rows == 0 || x.cols == 0 {
        return Err(Error::shape(format!(
            "softmax_feat of empty matrix {}",
            x.shape_str()
        )));
    }
    let mut out = Matrix::zeros(x.rows, x.cols);
    for (src, dst) in x
        .data
        .chunks_exact(x.cols)
        .zip(out.data.chunks_exact_mut(x.cols))
    {
        softmax_slice(src, dst);
    }
    Ok(out)
}

/// Softmax along the sequence (row) axis: every column sums to one.
pub fn softmax_seq(x: &Matrix) -> Result<Matrix> {
    if x.rows == 0 || x.cols == 0 {
        return Err(Error::shape(format!(
            "softmax_seq of empty matrix {}",
            x.shape_str()
        )));
    }
    let (rows, cols) = (x.rows, x.cols);
    let mut out = Matrix::zeros(rows, cols);
    let mut column = vec![0.0; rows];
    let mut normed = vec![0.0; rows];
    for c in 0..cols {
        for (r, slot) in column.iter_mut().enumerate() {
            *slot = x.data[r * cols + c];
        }
        softmax_slice(&column, &mut normed);
        for (r, value) in normed.iter().enumerate() {
            out.data[r * cols + c] = *value;
        }
    }
    Ok(out)
}

/// Dense `(batch, seq, dim)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::shape(format!(
                "tensor {dims:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let [b, n, d] = dims;
        let mut data = Vec::with_capacity(b * n * d);
        for bi in 0..b {
            for ni in 0..n {
                for di in 0..d {
                    data.push(f(bi, ni, di));
                }
            }
        }
        Self { dims, data }
    }

    /// Stacks equally shaped `seq x dim` matrices along the batch axis.
    pub fn from_matrices(mats: &[Matrix]) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::shape("no matrices to stack"))?;
        let (n, d) = (first.rows, first.cols);
        let mut data = Vec::with_capacity(mats.len() * n * d);
        for m in mats {
            if m.rows != n || m.cols != d {
                return Err(Error::shape(format!(
                    "cannot stack {} with {n}x{d}",
                    m.shape_str()
                )));
            }
            data.extend_from_slice(&m.data);
        }
        Ok(Self {
            dims: [mats.len(), n, d],
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn seq(&self) -> usize {
        self.dims[1]
    }

    pub fn dim(&self) -> usize {
        self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, b: usize, n: usize, d: usize) -> f64 {
        self.data[(b * self.dims[1] + n) * self.dims[2] + d]
    }

    pub fn set(&mut self, b: usize, n: usize, d: usize, value: f64) {
        self.data[(b * self.dims[1] + n) * self.dims[2] + d] = value;
    }

    pub fn batch_slice(&self, b: usize) -> &[f64] {
        let stride = self.dims[1] * self.dims[2];
        &self.data[b * stride..(b + 1) * stride]
    }

    pub fn batch_matrix(&self, b: usize) -> Matrix {
        Matrix {
            rows: self.dims[1],
            cols: self.dims[2],
            data: self.batch_slice(b).to_vec(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn ensure_same_dims(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{what}: dims {:?} and {:?} differ",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Deterministic tensor with entries in `[-1, 1]`.
///
/// Values come from ChaCha8 seeded through `SeedableRng::seed_from_u64`; each
/// 64-bit draw `x` maps to `(x >> 11) * 2^-53 * 2 - 1`. Both steps are fixed
/// by their definitions, so the same seed yields the same tensor everywhere.
pub fn seeded_random_tensor(dims: [usize; 3], seed: u64) -> Result<Tensor3> {
    if dims.contains(&0) {
        return Err(Error::shape(format!(
            "random tensor dims must be positive, got {dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = dims.iter().product();
    let data = (0..len)
        .map(|_| {
            let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            unit * 2.0 - 1.0
        })
        .collect();
    Ok(Tensor3 { dims, data })
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute norm when `b` is zero.
pub fn rel_frobenius_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch in error metric");
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        norm += y * y;
    }
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_gemm(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.data[i * b.cols() + j] = acc;
            }
        }
        out
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let t = seeded_random_tensor([1, rows, cols], seed).unwrap();
        t.batch_matrix(0)
    }

    #[test]
    fn gemm_identity() {
        let m = Matrix::from_rows(&[&[0.3, -1.5], &[2.0, 7.25]]).unwrap();
        assert_eq!(gemm(&Matrix::identity(2), &m, false).unwrap(), m);
    }

    #[test]
    fn gemm_hand_example() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
        let c = gemm(&a, &b, false).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_matches_triple_loop_bitwise() {
        let a = random_matrix(7, 5, 100);
        let b = random_matrix(5, 3, 101);
        let expected = naive_gemm(&a, &b);
        assert_eq!(gemm(&a, &b, false).unwrap().data(), expected.data());
        assert_eq!(gemm(&a, &b.transpose(), true).unwrap().data(), expected.data());
    }

    #[test]
    fn gemm_shape_error_names_both_operands() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let err = gemm(&a, &b, false).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
        assert!(gemm(&a, &b, true).is_ok());
    }

    #[test]
    fn softmax_uniform_and_shift() {
        let s = softmax_feat(&Matrix::from_rows(&[&[0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let base = softmax_feat(&Matrix::from_rows(&[&[0.0, 1.75]]).unwrap()).unwrap();
        let shifted = softmax_feat(&Matrix::from_rows(&[&[3.0, 4.75]]).unwrap()).unwrap();
        assert_eq!(base, shifted);
    }

    #[test]
    fn softmax_feat_against_extended_precision() {
        // exp(k) / (e + e^2 + e^3) for k = 1, 2, 3, evaluated with 50 digits.
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_64,
            0.665_240_955_774_821_9,
        ];
        let s = softmax_feat(&Matrix::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap()).unwrap();
        for (got, want) in s.data().iter().zip(expected) {
            assert!((got - want).abs() <= 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_seq_small_cases() {
        let s = softmax_seq(&Matrix::from_rows(&[&[0.0], &[0.0]]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let single = softmax_seq(&Matrix::from_rows(&[&[-3.0, 0.2, 9.0]]).unwrap()).unwrap();
        assert_eq!(single.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_seq_against_scalar_oracle() {
        let x = random_matrix(6, 3, 55);
        let s = softmax_seq(&x).unwrap();
        for c in 0..3 {
            let total: f64 = (0..6).map(|r| x.get(r, c).exp()).sum();
            for r in 0..6 {
                let want = x.get(r, c).exp() / total;
                assert!((s.get(r, c) - want).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax_feat(&Matrix::zeros(0, 3)), Err(Error::Shape(_))));
        assert!(matches!(softmax_seq(&Matrix::zeros(2, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn seeded_tensor_contract() {
        let a = seeded_random_tensor([2, 3, 4], 42).unwrap();
        let b = seeded_random_tensor([2, 3, 4], 42).unwrap();
        let c = seeded_random_tensor([2, 3, 4], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        assert!(seeded_random_tensor([2, 0, 4], 1).is_err());
    }

    #[test]
    fn tensor_length_checked() {
        assert!(Tensor3::new([2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }
}
