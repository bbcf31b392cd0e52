//! Time vanilla attention against the streaming layer and fit growth
//! exponents on a log-log scale.
//!
//! ```bash
//! cargo run --release --example latency_sweep -- /tmp/sweep.csv
//! ```

use uniformer::bench::{emit_csv, mode_exponent, run_sweep, BenchMode, BenchShape, SweepConfig};

fn main() -> uniformer::Result<()> {
    let sweep = SweepConfig {
        modes: BenchMode::parse_list("vanilla,mix_streaming,global_only_streaming")?,
        shape: BenchShape::new(1, 2, 0, 32, 64),
        seq_lens: vec![256, 512, 1024, 2048],
        tile_len: 16,
        seq_tile: 64,
        warmups: 1,
        repeats: 3,
        threads: 1,
        seed: 0,
    };
    let records = run_sweep(&sweep)?;
    for r in &records {
        println!(
            "{:<24} N={:<5} {:>12} ns  {:>12} mults",
            r.mode, r.seq_len, r.wall_ns, r.modeled_mults
        );
    }
    for mode in &sweep.modes {
        if let Some(e) = mode_exponent(&records, *mode) {
            println!("{:<24} time ~ N^{e:.2}", mode.name());
        }
    }
    if let Some(path) = std::env::args().nth(1) {
        emit_csv(&records, &path)?;
        println!("wrote {path}");
    }
    Ok(())
}
