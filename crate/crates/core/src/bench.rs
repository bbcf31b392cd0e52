//! Latency sweeps and the analytical cost model.
//!
//! The cost model counts multiplies and exponentials only:
//!
//! | path      | multiplies                 | exponentials       |
//! |-----------|----------------------------|--------------------|
//! | vanilla   | `B·H·2·N²·D`               | `B·H·N²`           |
//! | local     | `B·H_l·T·2·N_w²·D`         | `B·H_l·T·N_w²`     |
//! | global    | `B·H_g·2·N·D²`             | `B·H_g·2·N·D`      |
//!
//! with `T = N / N_w`. Local counts cover `Q Kᵀ` and `P V` inside each window;
//! global counts cover building the content matrix and the final projection,
//! and its exponentials are the two softmaxes over `Q` and `K`. Online
//! rescale factors are not counted. Streaming and reference kernels of the
//! same branch share a count.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{seeded_qkv, uniformer_attention, valid_mode_list, AttentionConfig, HeadTensor, Mode};
use crate::reference::vanilla_attention;
use crate::tensor::rel_frobenius_error;

/// Tolerance for streaming-versus-reference agreement before timing.
pub const MODE_PAIR_TOLERANCE: f64 = 1e-10;

/// Anything the harness can time: the layer in one of its modes, or plain
/// quadratic attention over all heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchMode {
    Vanilla,
    Layer(Mode),
}

impl BenchMode {
    pub const ALL: [BenchMode; 6] = [
        BenchMode::Vanilla,
        BenchMode::Layer(Mode::MixStreaming),
        BenchMode::Layer(Mode::MixReference),
        BenchMode::Layer(Mode::LocalRefGlobalStreaming),
        BenchMode::Layer(Mode::GlobalOnlyStreaming),
        BenchMode::Layer(Mode::GlobalOnlyReference),
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Vanilla => "vanilla",
            BenchMode::Layer(m) => m.name(),
        }
    }

    pub fn parse_list(list: &str) -> Result<Vec<BenchMode>> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "vanilla" {
            return Ok(BenchMode::Vanilla);
        }
        s.parse::<Mode>().map(BenchMode::Layer).map_err(|_| {
            Error::Usage(format!(
                "unknown mode {s:?}; valid modes: vanilla, {}",
                valid_mode_list()
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchShape {
    pub batch: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub dim: usize,
    pub window_len: usize,
    pub local_fraction: f64,
}

impl BenchShape {
    pub fn new(batch: usize, heads: usize, seq_len: usize, dim: usize, window_len: usize) -> Self {
        Self {
            batch,
            heads,
            seq_len,
            dim,
            window_len,
            local_fraction: 0.5,
        }
    }

    fn with_seq(&self, seq_len: usize) -> Self {
        Self { seq_len, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cost {
    pub mults: u128,
    pub exps: u128,
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            mults: self.mults + o.mults,
            exps: self.exps + o.exps,
        }
    }
}

/// Closed-form multiply and exponential counts for one forward pass.
pub fn modeled_cost(mode: BenchMode, shape: &BenchShape) -> Result<Cost> {
    let BenchShape {
        batch,
        heads,
        seq_len,
        dim,
        window_len,
        ..
    } = *shape;
    if [batch, heads, seq_len, dim].contains(&0) {
        return Err(Error::shape(format!("bench shape must be positive: {shape:?}")));
    }
    let (b, n, d) = (batch as u128, seq_len as u128, dim as u128);
    let layer = match mode {
        BenchMode::Vanilla => {
            let h = heads as u128;
            return Ok(Cost {
                mults: b * h * 2 * n * n * d,
                exps: b * h * n * n,
            });
        }
        BenchMode::Layer(m) => m,
    };
    let cfg = AttentionConfig {
        mode: layer,
        local_fraction: shape.local_fraction,
        ..AttentionConfig::default()
    };
    let h_local = cfg.local_heads(heads);
    if layer.is_mix() && (h_local == 0 || h_local >= heads) {
        return Err(Error::config(format!(
            "mode {layer} needs both branches non-empty with {heads} heads"
        )));
    }
    let h_global = (heads - h_local) as u128;
    let h_local = h_local as u128;
    let mut cost = Cost {
        mults: b * h_global * 2 * n * d * d,
        exps: b * h_global * 2 * n * d,
    };
    if h_local > 0 {
        if window_len == 0 || seq_len % window_len != 0 {
            return Err(Error::Divisibility {
                len: seq_len,
                window: window_len,
            });
        }
        let w = window_len as u128;
        let t = n / w;
        cost = cost
            + Cost {
                mults: b * h_local * t * 2 * w * w * d,
                exps: b * h_local * t * w * w,
            };
    }
    Ok(cost)
}

/// One timed measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mode: String,
    #[serde(rename = "B")]
    pub batch: usize,
    #[serde(rename = "H")]
    pub heads: usize,
    #[serde(rename = "N")]
    pub seq_len: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    pub window_len: usize,
    pub wall_ns: u64,
    pub modeled_mults: u128,
    pub modeled_exps: u128,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub modes: Vec<BenchMode>,
    pub shape: BenchShape,
    pub seq_lens: Vec<usize>,
    pub tile_len: usize,
    pub seq_tile: usize,
    pub warmups: usize,
    pub repeats: usize,
    /// Worker threads for the kernels; `0` uses rayon's default.
    pub threads: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            modes: BenchMode::ALL.to_vec(),
            shape: BenchShape::new(1, 2, 0, 64, 64),
            seq_lens: vec![256, 512, 1024],
            tile_len: 16,
            seq_tile: 64,
            warmups: 3,
            repeats: 9,
            threads: 0,
            seed: 0,
        }
    }
}

impl SweepConfig {
    fn layer_config(&self, mode: Mode) -> AttentionConfig {
        AttentionConfig {
            window_len: self.shape.window_len,
            tile_len: self.tile_len.min(self.shape.window_len.max(1)),
            seq_tile: self.seq_tile,
            mode,
            local_fraction: self.shape.local_fraction,
            ..AttentionConfig::default()
        }
    }
}

fn run_mode(
    mode: BenchMode,
    qkv: &(HeadTensor, HeadTensor, HeadTensor),
    sweep: &SweepConfig,
) -> Result<HeadTensor> {
    let (q, k, v) = qkv;
    match mode {
        BenchMode::Vanilla => {
            let out = vanilla_attention(&q.fold(), &k.fold(), &v.fold())?;
            HeadTensor::unfold(&out, q.heads())
        }
        BenchMode::Layer(m) => uniformer_attention(q, k, v, &sweep.layer_config(m)),
    }
}

/// Every requested streaming mode must match its reference counterpart on
/// the sweep inputs before anything is timed.
fn precheck(
    qkv: &(HeadTensor, HeadTensor, HeadTensor),
    sweep: &SweepConfig,
) -> Result<()> {
    let (q, k, v) = qkv;
    for mode in &sweep.modes {
        let BenchMode::Layer(m) = *mode else { continue };
        let reference = m.reference_counterpart();
        if reference == m {
            continue;
        }
        let got = uniformer_attention(q, k, v, &sweep.layer_config(m))?;
        let want = uniformer_attention(q, k, v, &sweep.layer_config(reference))?;
        let err = rel_frobenius_error(got.data(), want.data());
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail
        if !(err <= MODE_PAIR_TOLERANCE) {
            return Err(Error::Check(format!(
                "{m} differs from {reference} by {err:e} (N={})",
                q.seq()
            )));
        }
    }
    Ok(())
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2
    }
}

/// Times every mode at every sequence length. Records come out ordered by
/// sequence length, then by the order of `sweep.modes`.
pub fn run_sweep(sweep: &SweepConfig) -> Result<Vec<BenchRecord>> {
    if sweep.modes.is_empty() || sweep.seq_lens.is_empty() {
        return Err(Error::Usage("sweep needs at least one mode and one sequence length".into()));
    }
    if sweep.repeats == 0 {
        return Err(Error::Usage("repeats must be at least 1".into()));
    }
    for &n in &sweep.seq_lens {
        for &mode in &sweep.modes {
            modeled_cost(mode, &sweep.shape.with_seq(n))?;
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep.threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut records = Vec::with_capacity(sweep.modes.len() * sweep.seq_lens.len());
        for &n in &sweep.seq_lens {
            let shape = sweep.shape.with_seq(n);
            let qkv = seeded_qkv([shape.batch, shape.heads, n, shape.dim], sweep.seed)?;
            precheck(&qkv, sweep)?;
            for &mode in &sweep.modes {
                let cost = modeled_cost(mode, &shape)?;
                for _ in 0..sweep.warmups {
                    std::hint::black_box(run_mode(mode, &qkv, sweep)?);
                }
                let mut times = Vec::with_capacity(sweep.repeats);
                for _ in 0..sweep.repeats {
                    let start = Instant::now();
                    std::hint::black_box(run_mode(mode, &qkv, sweep)?);
                    times.push(start.elapsed().as_nanos().max(1) as u64);
                }
                records.push(BenchRecord {
                    mode: mode.name().to_string(),
                    batch: shape.batch,
                    heads: shape.heads,
                    seq_len: n,
                    dim: shape.dim,
                    window_len: shape.window_len,
                    wall_ns: median(times),
                    modeled_mults: cost.mults,
                    modeled_exps: cost.exps,
                });
            }
        }
        Ok(records)
    })
}

/// Writes records as CSV (`mode,B,H,N,D,window_len,wall_ns,modeled_mults,modeled_exps`).
/// An empty record list is a usage error and leaves no file behind.
pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if records.is_empty() {
        return Err(Error::Usage("no records to write".into()));
    }
    let to_err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(to_err)?;
    for r in records {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

/// Least-squares slope of `ln(time)` against `ln(n)`.
pub fn growth_exponent(points: &[(usize, u64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| (t as f64).ln()).collect();
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Growth exponent of one mode's wall times across a sweep.
pub fn mode_exponent(records: &[BenchRecord], mode: BenchMode) -> Option<f64> {
    let points: Vec<_> = records
        .iter()
        .filter(|r| r.mode == mode.name())
        .map(|r| (r.seq_len, r.wall_ns))
        .collect();
    growth_exponent(&points)
}
