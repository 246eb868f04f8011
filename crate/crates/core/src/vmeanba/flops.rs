//! Analytic FLOP model of the scan and an instrumented evaluator that checks
//! it step by step.
//!
//! Costs are counted per channel-step `(b, d, l)` with the state width
//! collapsed: an operation on the whole `N`-wide state counts once.
//!
//! * associative scan over the inputs: 2 compositions × 3 flops = 6
//! * system: `B̄u` and `C·h` products (2) plus the `C·h + D·u` sum (1) = 3
//! * channel mean: `D` accumulations and one division per `(b, l)`
//! * broadcast: memory only, 0
//!
//! giving `9·B·L·D` for the original scan and `9·B·L + (B·L·D + B·L)` when
//! the scan runs on one averaged channel.

use serde::{Deserialize, Serialize};

use crate::ssm::DiscreteInputs;
use crate::tensor::{Real, Tensor3};
use crate::{Error, Result};

const SCAN_STEP: u64 = 6;
const SYSTEM_STEP: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    Original,
    Vmeanba,
}

/// FLOP totals for one scan invocation.
///
/// `flops_reduced` is the whole cost of the reduced path (scan on one
/// channel + reduce op + broadcast); in `Original` mode it equals
/// `flops_original`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub flops_original: u64,
    pub flops_reduced: u64,
    pub flops_reduce_op: u64,
    pub flops_broadcast: u64,
    pub reduction_ratio: f64,
}

impl CostReport {
    /// The scan part of `flops_reduced`.
    pub fn reduced_scan_flops(&self) -> u64 {
        self.flops_reduced - self.flops_reduce_op - self.flops_broadcast
    }
}

fn checked_product(factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |a, &f| a.checked_mul(f))
        .ok_or_else(|| Error::InvalidValue(format!("FLOP count overflows u64 for {factors:?}")))
}

pub fn flop_count(batch: u64, channels: u64, len: u64, mode: CostMode) -> Result<CostReport> {
    if batch == 0 || channels == 0 || len == 0 {
        return Err(Error::InvalidValue(format!(
            "dimensions must be positive: B={batch} D={channels} L={len}"
        )));
    }
    let per_step = SCAN_STEP + SYSTEM_STEP;
    let original = checked_product(&[per_step, batch, len, channels])?;
    let report = match mode {
        CostMode::Original => CostReport {
            flops_original: original,
            flops_reduced: original,
            flops_reduce_op: 0,
            flops_broadcast: 0,
            reduction_ratio: 0.0,
        },
        CostMode::Vmeanba => {
            let scan = checked_product(&[per_step, batch, len])?;
            let reduce = checked_product(&[batch, len, channels + 1])?;
            let reduced = scan + reduce;
            CostReport {
                flops_original: original,
                flops_reduced: reduced,
                flops_reduce_op: reduce,
                flops_broadcast: 0,
                reduction_ratio: 1.0 - reduced as f64 / original as f64,
            }
        }
    };
    Ok(report)
}

/// Operation tallies from [`instrumented_scan`], in the units of the module
/// docs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub scan: u64,
    pub system: u64,
    pub reduce: u64,
    pub broadcast: u64,
    /// `skip·u` multiply-add applied per original channel after broadcast.
    /// Not part of the cost model.
    pub skip_after_broadcast: u64,
}

impl OpCounts {
    /// Everything the cost model accounts for.
    pub fn modeled_total(&self) -> u64 {
        self.scan + self.system + self.reduce + self.broadcast
    }
}

/// Channel-step cost accumulator private to one evaluation.
#[derive(Default)]
struct Counter(OpCounts);

impl Counter {
    fn scan_step(&mut self) {
        self.0.scan += SCAN_STEP;
    }
    fn system_step(&mut self) {
        self.0.system += SYSTEM_STEP;
    }
    fn accumulate(&mut self) {
        self.0.reduce += 1;
    }
    fn normalize(&mut self) {
        self.0.reduce += 1;
    }
    fn skip(&mut self) {
        self.0.skip_after_broadcast += 2;
    }
}

/// One recurrence lane: `h ← a·h + bu`, readout `Σ c·h`. Returns the readout
/// without the skip term.
fn step<T: Real>(h: &mut [T], a: &[T], bu: &[T], c: &[T], counter: &mut Counter) -> T {
    let mut acc = T::zero();
    for (((hs, &a), &bu), &c) in h.iter_mut().zip(a).zip(bu).zip(c) {
        *hs = a * *hs + bu;
        acc = acc + c * *hs;
    }
    counter.scan_step();
    counter.system_step();
    acc
}

/// Evaluates the scan (sequentially) while tallying every modeled
/// operation. In `Vmeanba` mode the inputs are averaged over channels first,
/// exactly as in [`reduce_inputs`](super::reduce_inputs).
pub fn instrumented_scan<T: Real>(
    inputs: &DiscreteInputs<T>,
    mode: CostMode,
) -> Result<(Tensor3<T>, OpCounts)> {
    inputs.validate()?;
    let [batch, channels, len, n] = inputs.dims();
    let c_rows = inputs.c_by_step();
    let mut counter = Counter::default();
    let mut y = Tensor3::zeros([batch, channels, len])?;
    let mut h = vec![T::zero(); n];

    match mode {
        CostMode::Original => {
            for b in 0..batch {
                for d in 0..channels {
                    h.fill(T::zero());
                    let (a_lane, bu_lane) = (inputs.a_bar.lane(b, d), inputs.b_bar_u.lane(b, d));
                    for l in 0..len {
                        let row = l * n..(l + 1) * n;
                        let c = &c_rows[(b * len + l) * n..(b * len + l + 1) * n];
                        let v = step(&mut h, &a_lane[row.clone()], &bu_lane[row], c, &mut counter);
                        // the system step already charged the C·h + D·u sum
                        y.set(b, d, l, v + inputs.skip_gain[d] * inputs.u.get(b, d, l));
                    }
                }
            }
        }
        CostMode::Vmeanba => {
            let mut a_mean = vec![T::zero(); n];
            let mut bu_mean = vec![T::zero(); n];
            let mut acc_a = vec![0.0f64; n];
            let mut acc_bu = vec![0.0f64; n];
            for b in 0..batch {
                h.fill(T::zero());
                for l in 0..len {
                    let row = l * n..(l + 1) * n;
                    acc_a.fill(0.0);
                    acc_bu.fill(0.0);
                    for d in 0..channels {
                        let (a_lane, bu_lane) =
                            (inputs.a_bar.lane(b, d), inputs.b_bar_u.lane(b, d));
                        for s in 0..n {
                            acc_a[s] += a_lane[row.start + s].as_f64();
                            acc_bu[s] += bu_lane[row.start + s].as_f64();
                        }
                        counter.accumulate();
                    }
                    for s in 0..n {
                        a_mean[s] = T::of(acc_a[s] / channels as f64);
                        bu_mean[s] = T::of(acc_bu[s] / channels as f64);
                    }
                    counter.normalize();
                    let c = &c_rows[(b * len + l) * n..(b * len + l + 1) * n];
                    let v = step(&mut h, &a_mean, &bu_mean, c, &mut counter);
                    for d in 0..channels {
                        y.set(b, d, l, v + inputs.skip_gain[d] * inputs.u.get(b, d, l));
                        counter.skip();
                    }
                }
            }
        }
    }
    Ok((y, counter.0))
}
