//! Modeled multiply and exponential counts, vanilla versus the layer modes.
//!
//! ```bash
//! cargo run --example cost_model
//! ```

use uniformer::bench::{modeled_cost, BenchMode, BenchShape};

fn main() -> uniformer::Result<()> {
    let base = BenchShape::new(1, 16, 0, 64, 8);
    println!("{:>5} {:>16} {:>16} {:>16} {:>8}", "N", "vanilla mults", "mix mults", "global mults", "ratio");
    for n in [8, 16, 64, 128, 256, 512, 1024] {
        let s = BenchShape { seq_len: n, ..base };
        let vanilla = modeled_cost(BenchMode::Vanilla, &s)?;
        let mix = modeled_cost("mix_streaming".parse()?, &s)?;
        let global = modeled_cost("global_only_streaming".parse()?, &s)?;
        println!(
            "{n:>5} {:>16} {:>16} {:>16} {:>8.2}",
            vanilla.mults,
            mix.mults,
            global.mults,
            vanilla.mults as f64 / mix.mults as f64
        );
    }

    let s = BenchShape { seq_len: 1024, ..base };
    println!("\nexponentials at N=1024:");
    for mode in BenchMode::ALL {
        println!("  {:<28} {}", mode.name(), modeled_cost(mode, &s)?.exps);
    }
    Ok(())
}
