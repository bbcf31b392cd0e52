//! Windowed attention with an online softmax.
//!
//! Splits a sequence into non-overlapping windows, runs tiled streaming
//! attention inside each one and checks it against the materialised
//! per-window softmax.
//!
//! ```bash
//! cargo run --release --example local_streaming
//! ```

use uniformer::local::{blockify, local_attention_reference, local_block_attention};
use uniformer::tensor::{rel_frobenius_error, seeded_random_tensor};

fn main() -> uniformer::Result<()> {
    let dims = [2, 64, 16];
    let q = seeded_random_tensor(dims, 1)?;
    let k = seeded_random_tensor(dims, 2)?;
    let v = seeded_random_tensor(dims, 3)?;
    let window = 16;

    let blocked = blockify(&q, &k, &v, window)?;
    println!(
        "input {:?} -> {} windows of {} rows, blocked shape {:?}",
        dims,
        blocked.window_count,
        blocked.window_len,
        blocked.q.dims()
    );

    let oracle = local_attention_reference(&q, &k, &v, window)?;
    for tile in [1, 4, 7, 16] {
        let out = local_block_attention(&q, &k, &v, window, tile)?;
        println!(
            "tile {tile:>2}: rel err vs materialised {:.2e}",
            rel_frobenius_error(out.data(), oracle.data())
        );
    }

    // A sequence that the window does not divide is rejected up front.
    match local_block_attention(&q, &k, &v, 24, 8) {
        Err(e) => println!("window 24 on N=64: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
