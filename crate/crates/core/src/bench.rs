//! Scan benchmark harness: shape sweeps, warmup + median timing, analytic
//! byte estimates and report emission.
//!
//! Two timed regions are reported per row:
//!
//! * `median_time_ns`: discretization + scan for the original modes,
//!   discretization + reduce + scan + broadcast for `vmeanba`.
//! * `scan_median_time_ns`: the same minus discretization (inputs are
//!   discretized once up front).

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ssm::{discretize_zoh, scan_parallel, scan_sequential, DiscreteInputs, ScanImpl, StateMatrix};
use crate::tensor::{DType, Real, Tensor3};
use crate::vmeanba::{flop_count, reduce_inputs, scan_vmeanba, CostMode};
use crate::{Error, Result};

/// `(inner dim D, sequence length L)` for the tiny/small and base backbones,
/// four stages each.
pub const BACKBONE_SHAPES: [(usize, usize); 8] = [
    (384, 3136),
    (768, 784),
    (1536, 196),
    (3072, 49),
    (512, 3136),
    (1024, 784),
    (2048, 196),
    (4096, 49),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    OriginalSequential,
    OriginalParallel,
    Vmeanba,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [
        BenchMode::OriginalSequential,
        BenchMode::OriginalParallel,
        BenchMode::Vmeanba,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::OriginalSequential => "original-sequential",
            BenchMode::OriginalParallel => "original-parallel",
            BenchMode::Vmeanba => "vmeanba",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub shapes: Vec<(usize, usize)>,
    pub batch: usize,
    pub state: usize,
    pub warmup_iters: usize,
    pub measure_iters: usize,
    pub dtype: DType,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            shapes: BACKBONE_SHAPES.to_vec(),
            batch: 1,
            state: 16,
            warmup_iters: 5,
            measure_iters: 30,
            dtype: DType::F32,
            threads: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::Config("no shapes to benchmark".into()));
        }
        if let Some(s) = self.shapes.iter().find(|(d, l)| *d == 0 || *l == 0) {
            return Err(Error::Config(format!("shape {s:?} has a zero dimension")));
        }
        if self.batch == 0 || self.state == 0 {
            return Err(Error::Config("batch and state must be >= 1".into()));
        }
        if self.warmup_iters == 0 || self.measure_iters == 0 {
            return Err(Error::Config("warmup and measure iterations must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the scan benchmark. Field order is the report column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub inner_dim: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub state: usize,
    pub dtype: DType,
    pub mode: BenchMode,
    pub median_time_ns: u64,
    pub p10_time_ns: u64,
    pub p90_time_ns: u64,
    pub scan_median_time_ns: u64,
    pub scan_p10_time_ns: u64,
    pub scan_p90_time_ns: u64,
    pub flops: u64,
    pub flops_original: u64,
    pub flop_ratio: f64,
    /// Estimated, not measured: elements read by the scan proper × dtype size.
    pub bytes_read_est: u64,
    /// Estimated, not measured: elements written by the scan proper × dtype size.
    pub bytes_written_est: u64,
    /// Original-sequential `median_time_ns` / this row's.
    pub speedup_vs_original: f64,
    /// The same ratio on `scan_median_time_ns`.
    pub scan_speedup_vs_original: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timing {
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[u64], p: f64) -> u64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs `f` `warmup` times untimed, then `iters` times against a monotonic
/// clock.
pub fn time_it<R>(warmup: usize, iters: usize, mut f: impl FnMut() -> R) -> Timing {
    for _ in 0..warmup {
        std::hint::black_box(f());
    }
    let mut samples: Vec<u64> = (0..iters)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed().as_nanos().max(1) as u64
        })
        .collect();
    samples.sort_unstable();
    let median = if samples.len() % 2 == 1 {
        samples[samples.len() / 2]
    } else {
        let hi = samples.len() / 2;
        (samples[hi - 1] + samples[hi]) / 2
    };
    Timing {
        median_ns: median.max(1),
        p10_ns: percentile(&samples, 10.0),
        p90_ns: percentile(&samples, 90.0),
    }
}

/// Continuous-time inputs for one benchmark shape.
pub struct ScanProblem<T> {
    pub delta: Tensor3<T>,
    pub a: StateMatrix<T>,
    pub b_t: Tensor3<T>,
    pub c: Tensor3<T>,
    pub u: Tensor3<T>,
    pub skip_gain: Vec<T>,
}

impl<T: Real> ScanProblem<T> {
    pub fn random(batch: usize, channels: usize, len: usize, state: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = |lo: f64, hi: f64| T::of(rng.gen_range(lo..hi));
        Ok(Self {
            delta: Tensor3::from_fn([batch, channels, len], |_, _, _| uni(1e-3, 1e-1))?,
            a: StateMatrix::s4d_real(channels, state)?,
            b_t: Tensor3::from_fn([batch, state, len], |_, _, _| uni(-1.0, 1.0))?,
            c: Tensor3::from_fn([batch, state, len], |_, _, _| uni(-1.0, 1.0))?,
            u: Tensor3::from_fn([batch, channels, len], |_, _, _| uni(-1.0, 1.0))?,
            skip_gain: (0..channels).map(|_| uni(0.5, 1.5)).collect(),
        })
    }

    pub fn discretize(&self) -> Result<DiscreteInputs<T>> {
        let (a_bar, b_bar_u) = discretize_zoh(&self.delta, &self.a, &self.b_t, &self.u)?;
        DiscreteInputs::new(a_bar, b_bar_u, self.c.clone(), self.skip_gain.clone(), self.u.clone())
    }
}

/// Runs the mode's scan on already discretized inputs.
pub fn run_mode<T: Real>(mode: BenchMode, inputs: &DiscreteInputs<T>) -> Result<Tensor3<T>> {
    match mode {
        BenchMode::OriginalSequential => scan_sequential(inputs),
        BenchMode::OriginalParallel => scan_parallel(inputs),
        BenchMode::Vmeanba => scan_vmeanba(&reduce_inputs(inputs)?, ScanImpl::Sequential),
    }
}

/// `(read, written)` bytes of the scan proper. The reduced scan reads the
/// single-channel inputs only.
pub fn bytes_estimate(mode: BenchMode, batch: usize, channels: usize, len: usize, state: usize, dtype: DType) -> (u64, u64) {
    let (b, d, l, n) = (batch as u64, channels as u64, len as u64, state as u64);
    let size = dtype.size_bytes() as u64;
    let (read, written) = match mode {
        // a_bar, b_bar_u, c, u, skip_gain -> y
        BenchMode::OriginalSequential | BenchMode::OriginalParallel => (2 * b * d * l * n + b * n * l + b * d * l + d, b * d * l),
        // reduced a_bar, b_bar_u, c -> y_reduced
        BenchMode::Vmeanba => (3 * b * l * n, b * l),
    };
    (read * size, written * size)
}

fn bench_shape<T: Real>(cfg: &BenchConfig, channels: usize, len: usize, shape_seed: u64) -> Result<Vec<BenchRecord>> {
    let problem = ScanProblem::<T>::random(cfg.batch, channels, len, cfg.state, shape_seed)?;
    let inputs = problem.discretize()?;
    let (b, d, l) = (cfg.batch as u64, channels as u64, len as u64);
    let mut rows = Vec::with_capacity(3);
    for mode in BenchMode::ALL {
        let full = time_it(cfg.warmup_iters, cfg.measure_iters, || {
            let x = problem.discretize().expect("valid problem");
            run_mode(mode, &x).expect("valid inputs")
        });
        let scan = time_it(cfg.warmup_iters, cfg.measure_iters, || {
            run_mode(mode, &inputs).expect("valid inputs")
        });
        let cost_mode = if mode == BenchMode::Vmeanba { CostMode::Vmeanba } else { CostMode::Original };
        let cost = flop_count(b, d, l, cost_mode)?;
        let (read, written) = bytes_estimate(mode, cfg.batch, channels, len, cfg.state, T::DTYPE);
        rows.push(BenchRecord {
            inner_dim: channels,
            seq_len: len,
            batch: cfg.batch,
            state: cfg.state,
            dtype: T::DTYPE,
            mode,
            median_time_ns: full.median_ns,
            p10_time_ns: full.p10_ns,
            p90_time_ns: full.p90_ns,
            scan_median_time_ns: scan.median_ns,
            scan_p10_time_ns: scan.p10_ns,
            scan_p90_time_ns: scan.p90_ns,
            flops: cost.flops_reduced,
            flops_original: cost.flops_original,
            flop_ratio: cost.flops_reduced as f64 / cost.flops_original as f64,
            bytes_read_est: read,
            bytes_written_est: written,
            speedup_vs_original: 0.0,
            scan_speedup_vs_original: 0.0,
        });
    }
    let base = rows[0].median_time_ns as f64;
    let scan_base = rows[0].scan_median_time_ns as f64;
    for r in &mut rows {
        r.speedup_vs_original = base / r.median_time_ns as f64;
        r.scan_speedup_vs_original = scan_base / r.scan_median_time_ns as f64;
    }
    Ok(rows)
}

/// Benchmarks every shape in every mode on seeded random inputs. Rows come
/// out shape by shape in [`BenchMode::ALL`] order.
pub fn run_scan_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut out = Vec::new();
        for (i, &(d, l)) in cfg.shapes.iter().enumerate() {
            let seed = cfg.seed.wrapping_add(i as u64);
            let rows = match cfg.dtype {
                DType::F32 => bench_shape::<f32>(cfg, d, l, seed)?,
                DType::F64 => bench_shape::<f64>(cfg, d, l, seed)?,
            };
            out.extend(rows);
        }
        Ok(out)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn render_report<R: Serialize>(records: &[R], format: ReportFormat) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(records)?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in records {
                w.serialize(r)?;
            }
            w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
        }
    }
}

/// Writes records as a JSON array of objects or as CSV with a fixed header.
/// An empty record list is an error and leaves no file behind.
pub fn emit_report<R: Serialize>(records: &[R], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_report(records, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
