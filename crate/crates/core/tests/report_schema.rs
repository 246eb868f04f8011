use meanba::bench::{emit_report, run_scan_bench, BenchConfig, BenchMode, BenchRecord, ReportFormat};
use meanba::{DType, Error};
use serde_json::Value;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/bench_small.json");

const TIMING_KEYS: [&str; 8] = [
    "median_time_ns",
    "p10_time_ns",
    "p90_time_ns",
    "scan_median_time_ns",
    "scan_p10_time_ns",
    "scan_p90_time_ns",
    "speedup_vs_original",
    "scan_speedup_vs_original",
];

fn small_config() -> BenchConfig {
    BenchConfig {
        shapes: vec![(8, 16), (4, 32)],
        batch: 2,
        state: 4,
        warmup_iters: 1,
        measure_iters: 3,
        dtype: DType::F32,
        threads: 1,
        seed: 5,
    }
}

fn without_timing(records: &[BenchRecord]) -> Value {
    let mut v = serde_json::to_value(records).unwrap();
    for row in v.as_array_mut().unwrap() {
        let obj = row.as_object_mut().unwrap();
        for key in TIMING_KEYS {
            assert!(obj.remove(key).is_some(), "missing {key}");
        }
    }
    v
}

#[test]
fn non_timing_columns_match_golden() {
    let records = run_scan_bench(&small_config()).unwrap();
    let got = without_timing(&records);
    if std::env::var_os("MEANBA_UPDATE_GOLDEN").is_some() {
        std::fs::write(GOLDEN, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(GOLDEN).unwrap()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn rows_and_invariants() {
    let records = run_scan_bench(&small_config()).unwrap();
    assert_eq!(records.len(), 2 * BenchMode::ALL.len());
    for r in &records {
        assert!(r.median_time_ns > 0 && r.p10_time_ns > 0 && r.scan_median_time_ns > 0);
        assert!(r.p10_time_ns <= r.median_time_ns && r.median_time_ns <= r.p90_time_ns);
        if r.mode == BenchMode::Vmeanba {
            assert!(r.flops < r.flops_original);
        } else {
            assert_eq!(r.flops, r.flops_original);
        }
    }
    for shape in records.chunks(3) {
        let base = shape[0].median_time_ns as f64;
        for r in shape {
            assert!((r.speedup_vs_original - base / r.median_time_ns as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn same_seed_same_counters() {
    let a = without_timing(&run_scan_bench(&small_config()).unwrap());
    let b = without_timing(&run_scan_bench(&small_config()).unwrap());
    assert_eq!(a, b);
}

#[test]
fn flop_ratio_for_backbone_row() {
    let cfg = BenchConfig { shapes: vec![(512, 3136)], batch: 1, state: 1, warmup_iters: 1, measure_iters: 1, ..small_config() };
    let rows = run_scan_bench(&cfg).unwrap();
    let vm = rows.iter().find(|r| r.mode == BenchMode::Vmeanba).unwrap();
    assert!((vm.flop_ratio - 522.0 / 4608.0).abs() < 1e-15);
}

#[test]
fn csv_and_json_reports() {
    let records = run_scan_bench(&BenchConfig { shapes: vec![(3, 5)], ..small_config() }).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let csv_path = dir.path().join("r.csv");
    emit_report(&records[..1], ReportFormat::Csv, &csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "inner_dim,seq_len,batch,state,dtype,mode,median_time_ns,p10_time_ns,p90_time_ns,\
         scan_median_time_ns,scan_p10_time_ns,scan_p90_time_ns,flops,flops_original,flop_ratio,\
         bytes_read_est,bytes_written_est,speedup_vs_original,scan_speedup_vs_original"
    );
    assert!(lines[1].starts_with("3,5,2,4,f32,original-sequential,"));

    let json_path = dir.path().join("r.json");
    emit_report(&records, ReportFormat::Json, &json_path).unwrap();
    let back: Vec<BenchRecord> = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    for (a, b) in back.iter().zip(&records) {
        assert_eq!((a.inner_dim, a.seq_len, a.flops, a.median_time_ns), (b.inner_dim, b.seq_len, b.flops, b.median_time_ns));
        assert_eq!((a.bytes_read_est, a.bytes_written_est), (b.bytes_read_est, b.bytes_written_est));
    }

    let empty = dir.path().join("empty.json");
    assert!(matches!(emit_report::<BenchRecord>(&[], ReportFormat::Json, &empty), Err(Error::EmptyRecords)));
    assert!(!empty.exists());
    assert!(matches!(
        emit_report(&records, ReportFormat::Csv, dir.path().join("missing/dir/r.csv")),
        Err(Error::Io { .. })
    ));
}
