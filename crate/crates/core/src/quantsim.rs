//! Fixed-point simulation of the attention layer.
//!
//! Signed `Qm.n` values (`1 + m + n` bits, step `2^-n`) with
//! round-to-nearest-even and saturation at both ends of the range.
//!
//! Quantisation policy for the layer: every GEMM operand is on the grid, each
//! GEMM accumulates in `f64` (standing in for a double-width MAC accumulator)
//! and every output element is re-quantised once on exit. Softmax runs in
//! floating point; only its inputs and outputs are quantised. Concretely:
//!
//! * local, per window: `S = q(q(Q) q(K)ᵀ / √D)`, `P = q(softmax(S))`,
//!   `O = q(P q(V))`
//! * global: `Q' = q(softmax_feat(q(Q)))`, `K' = q(softmax_seq(q(K)))`,
//!   `C = q(K'ᵀ q(V))`, `O = q(Q' C)`
//!
//! Both branches use the materialised (non-streaming) form, so the layer
//! mode only decides how heads are split.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Branch, Error, Result};
use crate::layer::{split_streams, uniformer_attention, AttentionConfig, HeadTensor, Precision};
use crate::local::blockify;
use crate::tensor::{gemm, softmax_feat, softmax_seq, Matrix, Tensor3};

/// Widest format whose grid is exactly representable in `f64`.
pub const MAX_TOTAL_BITS: u32 = 48;

/// Signed fixed-point format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    total_bits: u32,
    frac_bits: u32,
}

impl FixedPointFormat {
    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self> {
        if !(2..=MAX_TOTAL_BITS).contains(&total_bits) {
            return Err(Error::config(format!(
                "total_bits {total_bits} must be in 2..={MAX_TOTAL_BITS}"
            )));
        }
        if frac_bits >= total_bits {
            return Err(Error::config(format!(
                "frac_bits {frac_bits} must be below total_bits {total_bits}"
            )));
        }
        Ok(Self {
            total_bits,
            frac_bits,
        })
    }

    /// `Qm.n`: `m` integer bits and `n` fractional bits plus a sign bit.
    pub fn q(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(1 + int_bits + frac_bits, frac_bits)
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn int_bits(&self) -> u32 {
        self.total_bits - 1 - self.frac_bits
    }

    pub fn step(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    fn max_code(&self) -> f64 {
        ((1u64 << (self.total_bits - 1)) - 1) as f64
    }

    fn min_code(&self) -> f64 {
        -((1u64 << (self.total_bits - 1)) as f64)
    }

    pub fn max_value(&self) -> f64 {
        self.max_code() * self.step()
    }

    pub fn min_value(&self) -> f64 {
        self.min_code() * self.step()
    }

    /// Nearest grid point, ties to even, and whether the value saturated.
    pub fn quantize_value(&self, x: f64) -> (f64, bool) {
        let scale = (self.frac_bits as f64).exp2();
        let code = (x * scale).round_ties_even();
        if code > self.max_code() {
            (self.max_value(), true)
        } else if code < self.min_code() {
            (self.min_value(), true)
        } else {
            (code / scale, false)
        }
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.int_bits(), self.frac_bits)
    }
}

impl FromStr for FixedPointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected a format like Q3.12, got {s:?}"));
        let body = s.strip_prefix(['Q', 'q']).ok_or_else(bad)?;
        let (m, n) = body.split_once('.').ok_or_else(bad)?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        let n: u32 = n.parse().map_err(|_| bad())?;
        Self::q(m, n)
    }
}

/// A quantised tensor and how many of its entries saturated.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub tensor: Tensor3,
    pub saturated: usize,
}

pub fn quantize(x: &Tensor3, fmt: FixedPointFormat) -> Quantized {
    let mut saturated = 0;
    let tensor = x.map(|v| {
        let (q, sat) = fmt.quantize_value(v);
        saturated += usize::from(sat);
        q
    });
    Quantized { tensor, saturated }
}

/// Counts saturations over every quantisation point of one evaluation.
struct Quantizer {
    fmt: FixedPointFormat,
    saturated: usize,
}

impl Quantizer {
    fn new(fmt: FixedPointFormat) -> Self {
        Self { fmt, saturated: 0 }
    }

    fn value(&mut self, x: f64) -> f64 {
        let (q, sat) = self.fmt.quantize_value(x);
        self.saturated += usize::from(sat);
        q
    }

    fn matrix(&mut self, m: &Matrix) -> Matrix {
        let data = m.data().iter().map(|&x| self.value(x)).collect();
        Matrix::new(m.rows(), m.cols(), data).expect("same shape")
    }

    fn tensor(&mut self, t: &Tensor3) -> Tensor3 {
        t.map(|x| {
            let (q, sat) = self.fmt.quantize_value(x);
            self.saturated += usize::from(sat);
            q
        })
    }
}

fn fixed_local(t: &[&Tensor3; 3], window_len: usize, qz: &mut Quantizer) -> Result<Tensor3> {
    let blocked = blockify(t[0], t[1], t[2], window_len)?;
    let (q, k, v) = (qz.tensor(&blocked.q), qz.tensor(&blocked.k), qz.tensor(&blocked.v));
    let scale = (q.dim() as f64).sqrt();
    let outs = (0..q.batch())
        .map(|w| {
            let scores = gemm(&q.batch_matrix(w), &k.batch_matrix(w), true)?.map(|s| s / scale);
            let scores = qz.matrix(&scores);
            let probs = qz.matrix(&softmax_feat(&scores)?);
            Ok(qz.matrix(&gemm(&probs, &v.batch_matrix(w), false)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = Tensor3::from_matrices(&outs)?;
    crate::local::deblockify(&out, t[0].batch())
}

fn fixed_global(t: &[&Tensor3; 3], qz: &mut Quantizer) -> Result<Tensor3> {
    let (q, k, v) = (qz.tensor(t[0]), qz.tensor(t[1]), qz.tensor(t[2]));
    let outs = (0..q.batch())
        .map(|b| {
            let q_feat = qz.matrix(&softmax_feat(&q.batch_matrix(b))?);
            let k_seq = qz.matrix(&softmax_seq(&k.batch_matrix(b))?);
            let content = qz.matrix(&gemm(&k_seq.transpose(), &v.batch_matrix(b), false)?);
            Ok(qz.matrix(&gemm(&q_feat, &content, false)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor3::from_matrices(&outs)
}

/// The layer evaluated under `fmt`. Returns the output and the total number
/// of saturation events.
pub fn fixed_uniformer_attention(
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    cfg: &AttentionConfig,
    fmt: FixedPointFormat,
) -> Result<(HeadTensor, usize)> {
    let split = split_streams(q, k, v, cfg)?;
    let mut qz = Quantizer::new(fmt);
    let mut out = HeadTensor::zeros(q.dims());
    if let Some(t) = &split.local {
        let local = fixed_local(&[&t.q, &t.k, &t.v], cfg.window_len, &mut qz)
            .map_err(|e| e.in_branch(Branch::Local))?;
        out.scatter_heads(split.local_heads.clone(), &local);
    }
    if let Some(t) = &split.global {
        let global =
            fixed_global(&[&t.q, &t.k, &t.v], &mut qz).map_err(|e| e.in_branch(Branch::Global))?;
        out.scatter_heads(split.global_heads.clone(), &global);
    }
    Ok((out, qz.saturated))
}

/// Error of the fixed-point layer against the `f64` reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub total_bits: u32,
    pub frac_bits: u32,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub sat_count: usize,
}

pub fn fixed_attention_error(
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    cfg: &AttentionConfig,
    fmt: FixedPointFormat,
) -> Result<ErrorReport> {
    let reference_cfg = AttentionConfig {
        mode: cfg.mode.reference_counterpart(),
        precision: Precision::Double,
        ..cfg.clone()
    };
    let reference = uniformer_attention(q, k, v, &reference_cfg)?;
    let (fixed, sat_count) = fixed_uniformer_attention(q, k, v, cfg, fmt)?;
    let diffs = fixed.data().iter().zip(reference.data()).map(|(a, b)| (a - b).abs());
    let (max_abs, sum) = diffs.fold((0.0f64, 0.0), |(m, s), d| (m.max(d), s + d));
    Ok(ErrorReport {
        total_bits: fmt.total_bits(),
        frac_bits: fmt.frac_bits(),
        max_abs,
        mean_abs: sum / reference.data().len() as f64,
        sat_count,
    })
}

/// The fixed shape used for quantisation comparisons: seed 23,
/// `(B, H, N, D) = (2, 4, 32, 16)`, window 8, mixed mode.
pub fn standard_fixture() -> Result<(HeadTensor, HeadTensor, HeadTensor, AttentionConfig)> {
    let (q, k, v) = crate::layer::seeded_qkv([2, 4, 32, 16], 23)?;
    let cfg = AttentionConfig::new(crate::layer::Mode::MixStreaming, 8, 8, 32);
    Ok((q, k, v, cfg))
}

/// Writes reports as CSV with header `total_bits,frac_bits,max_abs,mean_abs,sat_count`.
pub fn write_error_reports(reports: &[ErrorReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let to_err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(to_err)?;
    for r in reports {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
