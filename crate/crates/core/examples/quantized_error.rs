//! Fixed-point simulation of the layer across Qm.n formats.
//!
//! Each format is run on the same fixture and compared with the
//! double-precision result. Pass a path to also write the CSV report.
//!
//! ```bash
//! cargo run --release --example quantized_error -- /tmp/quant.csv
//! ```

use uniformer::quantsim::{fixed_attention_error, standard_fixture, write_error_reports};
use uniformer::FixedPointFormat;

fn main() -> uniformer::Result<()> {
    let (q, k, v, cfg) = standard_fixture()?;
    println!("fixture {:?}, window {}", q.dims(), cfg.window_len);

    let formats = ["Q1.6", "Q3.4", "Q3.8", "Q3.12", "Q3.16", "Q3.20"];
    let mut reports = Vec::new();
    for f in formats {
        let fmt: FixedPointFormat = f.parse()?;
        let r = fixed_attention_error(&q, &k, &v, &cfg, fmt)?;
        println!(
            "{f:<6} ({:>2} bits, step {:.1e})  max_abs {:.3e}  mean_abs {:.3e}  saturated {}",
            fmt.total_bits(),
            fmt.step(),
            r.max_abs,
            r.mean_abs,
            r.sat_count
        );
        reports.push(r);
    }

    let fmt = FixedPointFormat::q(3, 4)?;
    println!(
        "\nQ3.4 covers [{}, {}]; 9.0 -> {:?}, 0.03 -> {:?}",
        fmt.min_value(),
        fmt.max_value(),
        fmt.quantize_value(9.0),
        fmt.quantize_value(0.03)
    );

    if let Some(path) = std::env::args().nth(1) {
        write_error_reports(&reports, &path)?;
        println!("wrote {path}");
    }
    Ok(())
}
