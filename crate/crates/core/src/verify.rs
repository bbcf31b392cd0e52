//! Randomised oracle-equivalence checks behind the `verify` subcommand.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::global::global_linear_attention;
use crate::layer::{seeded_qkv, uniformer_attention, AttentionConfig, Mode};
use crate::local::{blockify, deblockify, local_block_attention};
use crate::tensor::rel_frobenius_error;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    tolerance: f64,
}

impl Tracker {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            worst: 0.0,
            tolerance,
        }
    }

    fn observe(&mut self, err: f64) {
        // NaN must register as a failure.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(err <= self.worst) {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            worst: self.worst,
            tolerance: self.tolerance,
        }
    }
}

/// Shapes for trial `i`: sequence length a multiple of the window, at most
/// `max_n` (but at least one window).
fn trial_shape(rng: &mut ChaCha8Rng, max_n: usize) -> ([usize; 4], usize) {
    let mut pick = |lo: usize, hi: usize| lo + (rng.next_u64() as usize) % (hi - lo + 1);
    let window = [1, 2, 4, 8, 16][pick(0, 4)];
    let max_windows = (max_n / window).max(1);
    let n = window * pick(1, max_windows);
    let dims = [pick(1, 4), pick(2, 8), n, pick(1, 64)];
    (dims, window)
}

pub fn verify_suite(seed: u64, max_n: usize, trials: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Tracker::new("streaming modes match reference modes", 1e-10);
    let mut tiles = Tracker::new("local tile invariance", 1e-12);
    let mut seq_tiles = Tracker::new("global sequence-tile invariance", 1e-12);
    let mut round_trip = Tracker::new("blockify/deblockify round trip", 0.0);

    for trial in 0..trials {
        let (dims, window) = trial_shape(&mut rng, max_n.max(1));
        let (q, k, v) = seeded_qkv(dims, seed.wrapping_add(trial as u64))?;
        let tile = 1 + (rng.next_u64() as usize) % window;
        let cfg = AttentionConfig::new(Mode::MixStreaming, window, tile, 1 + dims[2] / 3);
        for mode in [Mode::MixStreaming, Mode::LocalRefGlobalStreaming, Mode::GlobalOnlyStreaming] {
            let got = uniformer_attention(&q, &k, &v, &cfg.with_mode(mode))?;
            let want = uniformer_attention(&q, &k, &v, &cfg.with_mode(mode.reference_counterpart()))?;
            modes.observe(rel_frobenius_error(got.data(), want.data()));
        }

        let (qf, kf, vf) = (q.fold(), k.fold(), v.fold());
        let single = local_block_attention(&qf, &kf, &vf, window, window)?;
        for t in [1, (window / 2).max(1), window.saturating_sub(1).max(1)] {
            let out = local_block_attention(&qf, &kf, &vf, window, t)?;
            tiles.observe(rel_frobenius_error(out.data(), single.data()));
        }
        let n = dims[2];
        let whole = global_linear_attention(&qf, &kf, &vf, n)?;
        for t in [1, 3.min(n)] {
            let out = global_linear_attention(&qf, &kf, &vf, t)?;
            seq_tiles.observe(rel_frobenius_error(out.data(), whole.data()));
        }

        let blocked = blockify(&qf, &kf, &vf, window)?;
        let back = deblockify(&blocked.v, qf.batch())?;
        round_trip.observe(if back == vf { 0.0 } else { 1.0 });
    }
    Ok(vec![modes.finish(), tiles.finish(), seq_tiles.finish(), round_trip.finish()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let results = verify_suite(5, 48, 4).unwrap();
        assert_eq!(results.len(), 4);
        for r in &results {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn nan_counts_as_failure() {
        let mut t = Tracker::new("x", 1.0);
        t.observe(f64::NAN);
        assert!(!t.finish().passed());
    }
}
