//! Linear-cost global attention.
//!
//! The content matrix `softmax_seq(K)ᵀ V` is accumulated one sequence tile at
//! a time, so memory stays at `D x D` per batch no matter how long the
//! sequence is. The final step multiplies by `softmax_feat(Q)`.
//!
//! ```bash
//! cargo run --release --example global_streaming
//! ```

use uniformer::global::{global_content_matrix_streaming, global_linear_attention};
use uniformer::reference::{content_matrix_direct, linear_attention_direct, linear_attention_left_grouped};
use uniformer::tensor::{rel_frobenius_error, seeded_random_tensor};

fn main() -> uniformer::Result<()> {
    let dims = [1, 512, 32];
    let q = seeded_random_tensor(dims, 10)?;
    let k = seeded_random_tensor(dims, 11)?;
    let v = seeded_random_tensor(dims, 12)?;

    let direct = content_matrix_direct(&k, &v)?;
    for seq_tile in [1, 3, 64, 512] {
        let c = global_content_matrix_streaming(&k, &v, seq_tile)?;
        println!(
            "seq_tile {seq_tile:>3}: content matrix {}x{}, rel err {:.2e}",
            c.get(0).rows(),
            c.get(0).cols(),
            rel_frobenius_error(c.get(0).data(), direct[0].data())
        );
    }

    let streamed = global_linear_attention(&q, &k, &v, 64)?;
    let reference = linear_attention_direct(&q, &k, &v)?;
    println!(
        "output {:?}, rel err vs direct {:.2e}",
        streamed.dims(),
        rel_frobenius_error(streamed.data(), reference.data())
    );

    // Grouping the product the other way builds an N x N intermediate but
    // gives the same answer.
    let small = [1, 96, 8];
    let (q, k, v) = (
        seeded_random_tensor(small, 20)?,
        seeded_random_tensor(small, 21)?,
        seeded_random_tensor(small, 22)?,
    );
    let right = linear_attention_direct(&q, &k, &v)?;
    let left = linear_attention_left_grouped(&q, &k, &v)?;
    println!("(QC) vs ((QKᵀ)V) at N=96: {:.2e}", rel_frobenius_error(right.data(), left.data()));
    Ok(())
}
