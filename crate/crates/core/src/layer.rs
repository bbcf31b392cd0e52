//! The dual-branch attention layer.
//!
//! Heads `[0, H_local)` go through the block-local branch and the remaining
//! heads through the global linear branch; both branches see the full
//! sequence. Branch outputs are written back in the original head order.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Branch, Error, Result};
use crate::global::{global_linear_attention_in, global_linear_attention};
use crate::local::{local_attention_reference, local_block_attention_in};
use crate::quantsim::{self, FixedPointFormat};
use crate::reference::linear_attention_direct;
use crate::tensor::{seeded_random_tensor, Tensor3};

/// Dense `(batch, heads, seq, dim)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl HeadTensor {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len = dims.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::shape(format!(
                "head tensor {dims:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Seeded `[-1, 1]` values, same generator as [`seeded_random_tensor`].
    pub fn seeded(dims: [usize; 4], seed: u64) -> Result<Self> {
        let [b, h, n, d] = dims;
        let flat = seeded_random_tensor([b * h, n, d], seed)
            .map_err(|_| Error::shape(format!("head tensor dims must be positive, got {dims:?}")))?;
        Self::new(dims, flat.into_data())
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let [b, h, n, d] = dims;
        let mut data = Vec::with_capacity(b * h * n * d);
        for bi in 0..b {
            for hi in 0..h {
                for ni in 0..n {
                    for di in 0..d {
                        data.push(f(bi, hi, ni, di));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn heads(&self) -> usize {
        self.dims[1]
    }

    pub fn seq(&self) -> usize {
        self.dims[2]
    }

    pub fn dim(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, b: usize, h: usize, n: usize, d: usize) -> f64 {
        let [_, hh, nn, dd] = self.dims;
        self.data[((b * hh + h) * nn + n) * dd + d]
    }

    fn head_stride(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn head_slice(&self, b: usize, h: usize) -> &[f64] {
        let s = self.head_stride();
        let i = b * self.dims[1] + h;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn head_slice_mut(&mut self, b: usize, h: usize) -> &mut [f64] {
        let s = self.head_stride();
        let i = b * self.dims[1] + h;
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Heads in `range` folded into the batch axis: `(B * |range|, N, D)`.
    pub fn gather_heads(&self, range: Range<usize>) -> Tensor3 {
        let mut data = Vec::with_capacity(self.batch() * range.len() * self.head_stride());
        for b in 0..self.batch() {
            for h in range.clone() {
                data.extend_from_slice(self.head_slice(b, h));
            }
        }
        Tensor3::new([self.batch() * range.len(), self.seq(), self.dim()], data)
            .expect("gathered length is consistent")
    }

    /// Inverse of [`gather_heads`](Self::gather_heads).
    pub fn scatter_heads(&mut self, range: Range<usize>, folded: &Tensor3) {
        let stride = self.head_stride();
        let mut chunks = folded.data().chunks_exact(stride);
        for b in 0..self.batch() {
            for h in range.clone() {
                let src = chunks.next().expect("folded tensor matches head range");
                self.head_slice_mut(b, h).copy_from_slice(src);
            }
        }
    }

    /// All heads folded into batch, `(B*H, N, D)`.
    pub fn fold(&self) -> Tensor3 {
        Tensor3::new(
            [self.batch() * self.heads(), self.seq(), self.dim()],
            self.data.clone(),
        )
        .expect("fold keeps length")
    }

    pub fn unfold(t: &Tensor3, heads: usize) -> Result<Self> {
        if heads == 0 || !t.batch().is_multiple_of(heads) {
            return Err(Error::shape(format!(
                "batch {} is not a multiple of {heads} heads",
                t.batch()
            )));
        }
        Self::new(
            [t.batch() / heads, heads, t.seq(), t.dim()],
            t.data().to_vec(),
        )
    }
}

/// The five benchmarked configurations of the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Both branches on the streaming kernels.
    MixStreaming,
    /// Both branches on the brute-force oracles.
    MixReference,
    /// Local branch on the oracle, global branch streaming.
    LocalRefGlobalStreaming,
    /// All heads through the streaming global kernel.
    GlobalOnlyStreaming,
    /// All heads through the direct factorised oracle.
    GlobalOnlyReference,
}

/// Which implementation a branch runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Streaming,
    Reference,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::MixStreaming,
        Mode::MixReference,
        Mode::LocalRefGlobalStreaming,
        Mode::GlobalOnlyStreaming,
        Mode::GlobalOnlyReference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::MixStreaming => "mix_streaming",
            Mode::MixReference => "mix_reference",
            Mode::LocalRefGlobalStreaming => "local_ref_global_streaming",
            Mode::GlobalOnlyStreaming => "global_only_streaming",
            Mode::GlobalOnlyReference => "global_only_reference",
        }
    }

    pub fn is_mix(self) -> bool {
        !matches!(self, Mode::GlobalOnlyStreaming | Mode::GlobalOnlyReference)
    }

    /// Implementation used by the local branch, `None` in global-only modes.
    pub fn local_kernel(self) -> Option<Kernel> {
        match self {
            Mode::MixStreaming => Some(Kernel::Streaming),
            Mode::MixReference | Mode::LocalRefGlobalStreaming => Some(Kernel::Reference),
            Mode::GlobalOnlyStreaming | Mode::GlobalOnlyReference => None,
        }
    }

    pub fn global_kernel(self) -> Kernel {
        match self {
            Mode::MixReference | Mode::GlobalOnlyReference => Kernel::Reference,
            _ => Kernel::Streaming,
        }
    }

    /// The all-oracle mode computing the same function.
    pub fn reference_counterpart(self) -> Mode {
        if self.is_mix() {
            Mode::MixReference
        } else {
            Mode::GlobalOnlyReference
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn valid_mode_list() -> String {
    Mode::ALL.map(Mode::name).join(", ")
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown mode {s:?}; valid modes: {}", valid_mode_list())))
    }
}

/// Arithmetic used by the streaming kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Precision {
    Double,
    Single,
    Fixed(FixedPointFormat),
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Double => f.write_str("double"),
            Precision::Single => f.write_str("single"),
            Precision::Fixed(fmt) => write!(f, "{fmt}"),
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" | "f64" => Ok(Precision::Double),
            "single" | "f32" => Ok(Precision::Single),
            other => other
                .strip_prefix("fixed:")
                .unwrap_or(other)
                .parse()
                .map(Precision::Fixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub window_len: usize,
    pub tile_len: usize,
    /// Sequence block length for the global branch; clamped to `N` at run time.
    pub seq_tile: usize,
    pub mode: Mode,
    /// Fraction of heads routed to the local branch in mix modes.
    pub local_fraction: f64,
    pub precision: Precision,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            window_len: 64,
            tile_len: 16,
            seq_tile: 64,
            mode: Mode::MixStreaming,
            local_fraction: 0.5,
            precision: Precision::Double,
        }
    }
}

impl AttentionConfig {
    pub fn new(mode: Mode, window_len: usize, tile_len: usize, seq_tile: usize) -> Self {
        Self {
            window_len,
            tile_len,
            seq_tile,
            mode,
            ..Self::default()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::config("window_len must be at least 1"));
        }
        if self.tile_len == 0 || self.tile_len > self.window_len {
            return Err(Error::config(format!(
                "tile_len {} must be in 1..={}",
                self.tile_len, self.window_len
            )));
        }
        if self.seq_tile == 0 {
            return Err(Error::config("seq_tile must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.local_fraction) {
            return Err(Error::config(format!(
                "local_fraction {} outside [0, 1]",
                self.local_fraction
            )));
        }
        Ok(())
    }

    /// Number of heads routed to the local branch out of `heads`.
    /// Fractional counts round half up.
    pub fn local_heads(&self, heads: usize) -> usize {
        if self.mode.is_mix() {
            ((self.local_fraction * heads as f64) + 0.5).floor() as usize
        } else {
            0
        }
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// missing keys keep their defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn fmt::Display| Error::Parse(format!("line {}: {key}: {e}", lineno + 1));
            match key {
                "window_len" => cfg.window_len = value.parse().map_err(|e| bad(&e))?,
                "tile_len" => cfg.tile_len = value.parse().map_err(|e| bad(&e))?,
                "seq_tile" => cfg.seq_tile = value.parse().map_err(|e| bad(&e))?,
                "mode" => cfg.mode = value.parse().map_err(|e| bad(&e))?,
                "local_fraction" | "split_fraction" => {
                    cfg.local_fraction = value.parse().map_err(|e| bad(&e))?
                }
                "precision" => cfg.precision = value.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Parse(format!("line {}: unknown key {other:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "mode={}\nwindow_len={}\ntile_len={}\nseq_tile={}\nlocal_fraction={}\nprecision={}\n",
            self.mode, self.window_len, self.tile_len, self.seq_tile, self.local_fraction, self.precision
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }
}

/// One branch's inputs, heads folded into batch.
#[derive(Debug, Clone, PartialEq)]
pub struct QkvTriple {
    pub q: Tensor3,
    pub k: Tensor3,
    pub v: Tensor3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSplit {
    pub local_heads: Range<usize>,
    pub global_heads: Range<usize>,
    pub local: Option<QkvTriple>,
    pub global: Option<QkvTriple>,
}

fn check_qkv(q: &HeadTensor, k: &HeadTensor, v: &HeadTensor) -> Result<()> {
    if q.dims != k.dims || q.dims != v.dims {
        return Err(Error::shape(format!(
            "q/k/v dims differ: {:?}, {:?}, {:?}",
            q.dims, k.dims, v.dims
        )));
    }
    if q.dims.contains(&0) {
        return Err(Error::shape(format!("empty head tensor {:?}", q.dims)));
    }
    Ok(())
}

/// Seeded `(q, k, v)` triple; the three tensors use seeds `3s`, `3s+1`, `3s+2`.
pub fn seeded_qkv(dims: [usize; 4], seed: u64) -> Result<(HeadTensor, HeadTensor, HeadTensor)> {
    let base = seed.wrapping_mul(3);
    Ok((
        HeadTensor::seeded(dims, base)?,
        HeadTensor::seeded(dims, base.wrapping_add(1))?,
        HeadTensor::seeded(dims, base.wrapping_add(2))?,
    ))
}

/// Routes heads to the two branches according to `cfg`.
pub fn split_streams(
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    cfg: &AttentionConfig,
) -> Result<StreamSplit> {
    check_qkv(q, k, v)?;
    cfg.validate()?;
    let heads = q.heads();
    let n_local = cfg.local_heads(heads);
    if cfg.mode.is_mix() && (n_local == 0 || n_local >= heads) {
        return Err(Error::config(format!(
            "mode {} needs both branches non-empty, but {heads} heads at fraction {} gives {n_local} local",
            cfg.mode, cfg.local_fraction
        )));
    }
    let gather = |range: Range<usize>| {
        (!range.is_empty()).then(|| QkvTriple {
            q: q.gather_heads(range.clone()),
            k: k.gather_heads(range.clone()),
            v: v.gather_heads(range),
        })
    };
    Ok(StreamSplit {
        local: gather(0..n_local),
        global: gather(n_local..heads),
        local_heads: 0..n_local,
        global_heads: n_local..heads,
    })
}

fn run_local(t: &QkvTriple, cfg: &AttentionConfig, kernel: Kernel) -> Result<Tensor3> {
    match (kernel, cfg.precision) {
        (Kernel::Reference, _) => local_attention_reference(&t.q, &t.k, &t.v, cfg.window_len),
        (Kernel::Streaming, Precision::Single) => {
            local_block_attention_in::<f32>(&t.q, &t.k, &t.v, cfg.window_len, cfg.tile_len)
        }
        (Kernel::Streaming, _) => {
            local_block_attention_in::<f64>(&t.q, &t.k, &t.v, cfg.window_len, cfg.tile_len)
        }
    }
}

fn run_global(t: &QkvTriple, cfg: &AttentionConfig, kernel: Kernel) -> Result<Tensor3> {
    let seq_tile = cfg.seq_tile.min(t.q.seq());
    match (kernel, cfg.precision) {
        (Kernel::Reference, _) => linear_attention_direct(&t.q, &t.k, &t.v),
        (Kernel::Streaming, Precision::Single) => {
            global_linear_attention_in::<f32>(&t.q, &t.k, &t.v, seq_tile)
        }
        (Kernel::Streaming, _) => global_linear_attention(&t.q, &t.k, &t.v, seq_tile),
    }
}

/// Runs the dual-branch layer. In fixed-point precision the quantised
/// simulation from [`crate::quantsim`] is used instead.
pub fn uniformer_attention(
    q: &HeadTensor,
    k: &HeadTensor,
    v: &HeadTensor,
    cfg: &AttentionConfig,
) -> Result<HeadTensor> {
    if let Precision::Fixed(fmt) = cfg.precision {
        return quantsim::fixed_uniformer_attention(q, k, v, cfg, fmt).map(|(out, _)| out);
    }
    let split = split_streams(q, k, v, cfg)?;
    let (local_out, global_out) = rayon::join(
        || {
            split.local.as_ref().map(|t| {
                let kernel = cfg.mode.local_kernel().expect("local heads imply a local path");
                run_local(t, cfg, kernel).map_err(|e| e.in_branch(Branch::Local))
            })
        },
        || {
            split
                .global
                .as_ref()
                .map(|t| run_global(t, cfg, cfg.mode.global_kernel()).map_err(|e| e.in_branch(Branch::Global)))
        },
    );

    let mut out = HeadTensor::zeros(q.dims());
    if let Some(local) = local_out {
        out.scatter_heads(split.local_heads.clone(), &local?);
    }
    if let Some(global) = global_out {
        out.scatter_heads(split.global_heads.clone(), &global?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rel_frobenius_error;

    fn qkv(dims: [usize; 4], seed: u64) -> (HeadTensor, HeadTensor, HeadTensor) {
        seeded_qkv(dims, seed).unwrap()
    }

    #[test]
    fn head_split_counts() {
        let (q, k, v) = qkv([1, 16, 8, 4], 1);
        let cfg = AttentionConfig::new(Mode::MixStreaming, 4, 2, 8);
        let s = split_streams(&q, &k, &v, &cfg).unwrap();
        assert_eq!((s.local_heads.len(), s.global_heads.len()), (8, 8));

        let g = split_streams(&q, &k, &v, &cfg.with_mode(Mode::GlobalOnlyReference)).unwrap();
        assert!(g.local.is_none());
        assert_eq!(g.global_heads, 0..16);

        let (q, k, v) = qkv([1, 3, 8, 4], 1);
        let s = split_streams(&q, &k, &v, &cfg).unwrap();
        assert_eq!((s.local_heads.len(), s.global_heads.len()), (2, 1));
    }

    #[test]
    fn mix_with_one_head_rejected() {
        let (q, k, v) = qkv([2, 1, 8, 4], 1);
        let cfg = AttentionConfig::new(Mode::MixStreaming, 4, 2, 8);
        assert!(matches!(split_streams(&q, &k, &v, &cfg), Err(Error::Config(_))));
        assert!(uniformer_attention(&q, &k, &v, &cfg.with_mode(Mode::GlobalOnlyStreaming)).is_ok());
    }

    #[test]
    fn gather_scatter_inverse() {
        let (q, _, _) = qkv([2, 5, 3, 2], 4);
        let mut rebuilt = HeadTensor::zeros(q.dims());
        rebuilt.scatter_heads(0..2, &q.gather_heads(0..2));
        rebuilt.scatter_heads(2..5, &q.gather_heads(2..5));
        assert_eq!(rebuilt, q);
        assert_eq!(HeadTensor::unfold(&q.fold(), 5).unwrap(), q);
    }

    #[test]
    fn streaming_matches_reference() {
        let (q, k, v) = qkv([2, 4, 32, 16], 23);
        let cfg = AttentionConfig::new(Mode::MixStreaming, 8, 3, 5);
        for mode in Mode::ALL {
            let got = uniformer_attention(&q, &k, &v, &cfg.with_mode(mode)).unwrap();
            let want = uniformer_attention(&q, &k, &v, &cfg.with_mode(mode.reference_counterpart())).unwrap();
            assert!(rel_frobenius_error(got.data(), want.data()) <= 1e-10, "{mode}");
        }
    }

    #[test]
    fn global_only_single_head_is_global_branch() {
        let (q, k, v) = qkv([3, 1, 12, 4], 8);
        let cfg = AttentionConfig::new(Mode::GlobalOnlyStreaming, 4, 2, 5);
        let got = uniformer_attention(&q, &k, &v, &cfg).unwrap();
        let direct = global_linear_attention(&q.fold(), &k.fold(), &v.fold(), 5).unwrap();
        assert_eq!(got.data(), direct.data());
    }

    #[test]
    fn branch_errors_carry_identity() {
        let (q, k, v) = qkv([1, 2, 10, 4], 2);
        let cfg = AttentionConfig::new(Mode::MixStreaming, 4, 2, 8);
        let err = uniformer_attention(&q, &k, &v, &cfg).unwrap_err();
        assert!(matches!(err, Error::Branch { branch: Branch::Local, .. }), "{err}");
        assert!(err.to_string().starts_with("local branch"));
    }

    #[test]
    fn kv_config_round_trip() {
        let text = "# bench config\nmode=local_ref_global_streaming\nwindow_len=49\ntile_len=7\nseq_tile=32\nlocal_fraction=0.25\nprecision=Q3.12\n";
        let cfg = AttentionConfig::from_kv_str(text).unwrap();
        assert_eq!(cfg.mode, Mode::LocalRefGlobalStreaming);
        assert_eq!(cfg.window_len, 49);
        assert_eq!(cfg.precision, Precision::Fixed(FixedPointFormat::q(3, 12).unwrap()));
        assert_eq!(AttentionConfig::from_kv_str(&cfg.to_kv_string()).unwrap(), cfg);

        assert!(AttentionConfig::from_kv_str("mode=fast").is_err());
        assert!(AttentionConfig::from_kv_str("window").is_err());
        assert!(AttentionConfig::from_kv_str("colour=blue").is_err());
        assert!(AttentionConfig::from_kv_str("window_len=4\ntile_len=5").is_err());
    }

    #[test]
    fn unknown_mode_lists_valid_ones() {
        let err = "flash".parse::<Mode>().unwrap_err().to_string();
        assert!(err.contains("global_only_reference"));
    }

    #[test]
    fn single_precision_layer() {
        let (q, k, v) = qkv([1, 4, 16, 8], 3);
        let mut cfg = AttentionConfig::new(Mode::MixStreaming, 4, 3, 5);
        let want = uniformer_attention(&q, &k, &v, &cfg.with_mode(Mode::MixReference)).unwrap();
        cfg.precision = Precision::Single;
        let got = uniformer_attention(&q, &k, &v, &cfg).unwrap();
        assert!(rel_frobenius_error(got.data(), want.data()) <= 1e-4);
    }
}
