use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uniformer::bench::{emit_csv, mode_exponent, run_sweep, BenchMode, BenchShape, SweepConfig};
use uniformer::fixture::{read_fixture, write_fixture};
use uniformer::quantsim::{fixed_attention_error, standard_fixture, write_error_reports};
use uniformer::tensor::seeded_random_tensor;
use uniformer::verify::verify_suite;
use uniformer::{AttentionConfig, Error, FixedPointFormat, Result};

#[derive(Parser)]
#[command(name = "uniformer-bench", about = "Dual-branch attention benchmarks and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time attention modes over a range of sequence lengths and write CSV.
    Bench {
        #[arg(long, default_value = "vanilla,mix_streaming,global_only_streaming")]
        modes: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        seq_tile: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024")]
        seq_lens: Vec<usize>,
        #[arg(long, default_value_t = 9)]
        repeats: usize,
        #[arg(long, default_value_t = 3)]
        warmups: usize,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// key=value layer config supplying window/tile/seq_tile/local_fraction.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the randomised oracle-equivalence suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        max_n: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Fixed-point error sweep on the standard fixture.
    Quant {
        /// One or more formats, e.g. Q3.12,Q1.6
        #[arg(long, value_delimiter = ',', default_value = "Q3.12")]
        format: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded random tensor as a text fixture.
    DumpFixture {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// B,N,D
        #[arg(long, value_delimiter = ',', default_value = "1,8,4")]
        dims: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a text fixture and print its shape and summary.
    LoadFixture {
        #[arg(long)]
        path: PathBuf,
    },
}

fn bench(cmd: Command) -> Result<()> {
    let Command::Bench {
        modes,
        batch,
        heads,
        dim,
        window,
        tile,
        seq_tile,
        seq_lens,
        repeats,
        warmups,
        threads,
        seed,
        config,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let base = match config {
        Some(path) => AttentionConfig::load(path)?,
        None => AttentionConfig::default(),
    };
    let window_len = window.unwrap_or(base.window_len);
    let mut shape = BenchShape::new(batch, heads, 0, dim, window_len);
    shape.local_fraction = base.local_fraction;
    let sweep = SweepConfig {
        modes: BenchMode::parse_list(&modes)?,
        shape,
        seq_lens,
        tile_len: tile.unwrap_or(base.tile_len),
        seq_tile: seq_tile.unwrap_or(base.seq_tile),
        warmups,
        repeats,
        threads,
        seed,
    };
    let records = run_sweep(&sweep)?;
    emit_csv(&records, &out)?;
    for mode in &sweep.modes {
        if let Some(e) = mode_exponent(&records, *mode) {
            println!("{mode:<28} growth exponent {e:.3}");
        }
    }
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn verify(seed: u64, max_n: usize, trials: usize) -> Result<()> {
    let results = verify_suite(seed, max_n, trials)?;
    let mut failed = 0;
    for r in &results {
        let tag = if r.passed() { "PASS" } else { "FAIL" };
        println!("{tag}  {:<42} worst {:.3e} (tol {:.0e})", r.name, r.worst, r.tolerance);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Error::Check(format!("{failed} check(s) failed")));
    }
    Ok(())
}

fn quant(formats: &[String], out: &PathBuf) -> Result<()> {
    let (q, k, v, cfg) = standard_fixture()?;
    let reports = formats
        .iter()
        .map(|f| {
            let fmt: FixedPointFormat = f.parse()?;
            fixed_attention_error(&q, &k, &v, &cfg, fmt)
        })
        .collect::<Result<Vec<_>>>()?;
    for (f, r) in formats.iter().zip(&reports) {
        println!(
            "{f:<8} max_abs {:.3e}  mean_abs {:.3e}  saturated {}",
            r.max_abs, r.mean_abs, r.sat_count
        );
    }
    write_error_reports(&reports, out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        cmd @ Command::Bench { .. } => bench(cmd),
        Command::Verify {
            seed,
            max_n,
            trials,
        } => verify(seed, max_n, trials),
        Command::Quant { format, out } => quant(&format, &out),
        Command::DumpFixture { seed, dims, out } => {
            let dims: [usize; 3] = dims
                .try_into()
                .map_err(|_| Error::Usage("--dims takes exactly three values B,N,D".into()))?;
            let t = seeded_random_tensor(dims, seed)?;
            write_fixture(&t, &out)?;
            println!("wrote {:?} tensor to {}", t.dims(), out.display());
            Ok(())
        }
        Command::LoadFixture { path } => {
            let t = read_fixture(&path)?;
            let sum: f64 = t.data().iter().sum();
            let max = t.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            println!("dims {:?} sum {sum:.17e} max_abs {max:.17e}", t.dims());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
