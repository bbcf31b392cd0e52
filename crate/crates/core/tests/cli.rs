//! The external surfaces: bench CSV, quant CSV, tensor fixtures, key=value
//! configs and the CLI exit codes.

use std::process::Command;

use uniformer::bench::{emit_csv, read_csv, run_sweep, BenchMode, BenchRecord, BenchShape, SweepConfig};
use uniformer::fixture::read_fixture;
use uniformer::tensor::seeded_random_tensor;
use uniformer::{Error, Mode};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uniformer-bench"))
}

fn record(mode: &str, n: usize) -> BenchRecord {
    BenchRecord {
        mode: mode.into(),
        batch: 1,
        heads: 2,
        seq_len: n,
        dim: 8,
        window_len: 4,
        wall_ns: 1234,
        modeled_mults: 99,
        modeled_exps: 7,
    }
}

#[test]
fn csv_single_record_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    emit_csv(&[record("vanilla", 16)], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        "mode,B,H,N,D,window_len,wall_ns,modeled_mults,modeled_exps\nvanilla,1,2,16,8,4,1234,99,7\n"
    );
}

#[test]
fn csv_round_trip_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("many.csv");
    let records = vec![record("vanilla", 16), record("mix_streaming", 32)];
    emit_csv(&records, &path).unwrap();
    assert_eq!(read_csv(&path).unwrap(), records);

    let empty = dir.path().join("empty.csv");
    assert!(matches!(emit_csv(&[], &empty), Err(Error::Usage(_))));
    assert!(!empty.exists());

    let err = emit_csv(&records, dir.path().join("no/such/dir.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("no/such/dir.csv"));
}

#[test]
fn sweep_contract() {
    let sweep = SweepConfig {
        modes: vec![BenchMode::Layer(Mode::GlobalOnlyStreaming)],
        shape: BenchShape::new(1, 2, 0, 8, 8),
        seq_lens: vec![64, 128, 256],
        tile_len: 4,
        seq_tile: 16,
        warmups: 1,
        repeats: 1,
        threads: 1,
        seed: 3,
    };
    let one = run_sweep(&sweep).unwrap();
    assert_eq!(one.len(), 3);
    assert_eq!(one.iter().map(|r| r.seq_len).collect::<Vec<_>>(), [64, 128, 256]);
    assert!(one.iter().all(|r| r.wall_ns > 0));

    let nine = run_sweep(&SweepConfig { repeats: 9, ..sweep.clone() }).unwrap();
    for (a, b) in one.iter().zip(&nine) {
        assert_eq!((a.modeled_mults, a.modeled_exps), (b.modeled_mults, b.modeled_exps));
    }

    let bad = SweepConfig {
        modes: vec![BenchMode::Layer(Mode::MixStreaming)],
        seq_lens: vec![60],
        ..sweep
    };
    assert!(matches!(run_sweep(&bad), Err(Error::Divisibility { .. })));
}

#[test]
fn bench_subcommand_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let cfg = dir.path().join("layer.cfg");
    std::fs::write(&cfg, "window_len=8\ntile_len=4\nseq_tile=16\n").unwrap();
    let status = bin()
        .args(["bench", "--modes", "vanilla,mix_streaming", "--dim", "8", "--seq-lens", "32,64"])
        .args(["--repeats", "1", "--warmups", "0", "--threads", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let records = read_csv(&out).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.window_len == 8));
}

#[test]
fn bad_mode_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let res = bin()
        .args(["bench", "--modes", "warp_speed", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("mix_streaming"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn verify_subcommand_passes() {
    let res = bin()
        .args(["verify", "--seed", "9", "--max-n", "64", "--trials", "5"])
        .output()
        .unwrap();
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{stdout}");
}

#[test]
fn quant_subcommand_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("q.csv");
    let res = bin()
        .args(["quant", "--format", "Q3.12,Q1.6", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "total_bits,frac_bits,max_abs,mean_abs,sat_count");
    assert!(lines[1].starts_with("16,12,"));
    assert!(lines[2].starts_with("8,6,"));

    let bad = bin().args(["quant", "--format", "Q9"]).arg("--out").arg(&out).output().unwrap();
    assert_eq!(bad.status.code(), Some(5));
}

#[test]
fn fixture_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.txt");
    let res = bin()
        .args(["dump-fixture", "--seed", "4", "--dims", "2,3,5", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(res.status.success());
    assert_eq!(read_fixture(&path).unwrap(), seeded_random_tensor([2, 3, 5], 4).unwrap());

    let res = bin().arg("load-fixture").arg("--path").arg(&path).output().unwrap();
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("dims [2, 3, 5]"));

    std::fs::write(&path, "1 2 2\n0 0\n").unwrap();
    let res = bin().arg("load-fixture").arg("--path").arg(&path).output().unwrap();
    assert_eq!(res.status.code(), Some(5));

    let res = bin().args(["load-fixture", "--path", "/does/not/exist"]).output().unwrap();
    assert_eq!(res.status.code(), Some(6));
}
