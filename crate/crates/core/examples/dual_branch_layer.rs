//! The full layer: heads split between a local and a global branch.
//!
//! ```bash
//! cargo run --release --example dual_branch_layer
//! ```

use uniformer::layer::{seeded_qkv, split_streams, uniformer_attention, AttentionConfig, Mode};
use uniformer::tensor::rel_frobenius_error;

fn main() -> uniformer::Result<()> {
    let dims = [2, 6, 128, 32];
    let (q, k, v) = seeded_qkv(dims, 5)?;
    let mut cfg = AttentionConfig::new(Mode::MixStreaming, 32, 8, 64);
    cfg.local_fraction = 0.34;

    let split = split_streams(&q, &k, &v, &cfg)?;
    println!(
        "{} heads: local {:?}, global {:?}",
        dims[1], split.local_heads, split.global_heads
    );

    for mode in Mode::ALL {
        let out = uniformer_attention(&q, &k, &v, &cfg.with_mode(mode))?;
        let reference = uniformer_attention(&q, &k, &v, &cfg.with_mode(mode.reference_counterpart()))?;
        println!(
            "{:<28} out {:?}  vs {:<22} {:.2e}",
            mode.name(),
            out.dims(),
            mode.reference_counterpart().name(),
            rel_frobenius_error(out.data(), reference.data())
        );
    }

    // Configs also round-trip through a key=value text form.
    let text = cfg.to_kv_string();
    println!("\n{text}");
    assert_eq!(AttentionConfig::from_kv_str(&text)?, cfg);
    Ok(())
}
