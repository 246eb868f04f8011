//! Channel-mean compression of the scan.
//!
//! The discretized scan inputs are averaged over the channel axis, the scan
//! runs once on the single resulting channel, and its output is broadcast
//! back to every channel before the per-channel skip term is added:
//!
//! ```text
//! y = broadcast_D(scan(mean_D(a_bar), mean_D(b_bar_u), c)) + skip_gain ⊙ u
//! ```
//!
//! `c` carries no channel axis here (`(B, N, L)`), so it passes through
//! unchanged.

mod flops;
mod stats;

pub use flops::{flop_count, instrumented_scan, CostMode, CostReport, OpCounts};
pub use stats::{channel_stats, ChannelStats, StepStats};

use serde::{Deserialize, Serialize};

use crate::ssm::{scan_sequential, DiscreteInputs, ScanImpl};
use crate::tensor::{broadcast_channels, mean_over_channels, Real, Tensor3, Tensor4};
use crate::{Error, Result};

/// Scan inputs reduced to one channel, plus what is needed to restore the
/// original channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedInputs<T> {
    /// `(B, 1, L, N)`.
    pub a_bar: Tensor4<T>,
    /// `(B, 1, L, N)`.
    pub b_bar_u: Tensor4<T>,
    /// `(B, N, L)`.
    pub c: Tensor3<T>,
    pub channels: usize,
    /// Length `channels`.
    pub skip_gain: Vec<T>,
    /// `(B, channels, L)`.
    pub u: Tensor3<T>,
}

impl<T: Real> ReducedInputs<T> {
    pub fn validate(&self) -> Result<()> {
        let [b, d, l, n] = self.a_bar.shape();
        if d != 1 || self.b_bar_u.shape() != [b, 1, l, n] {
            return Err(Error::shape(format!(
                "reduced tensors must have one channel: a_bar {:?}, b_bar_u {:?}",
                self.a_bar.shape(),
                self.b_bar_u.shape()
            )));
        }
        if self.c.shape() != [b, n, l] {
            return Err(Error::shape("reduced c shape"));
        }
        if self.u.shape() != [b, self.channels, l] || self.skip_gain.len() != self.channels {
            return Err(Error::shape("reduced skip path shape"));
        }
        Ok(())
    }
}

/// Averages `a_bar` and `b_bar_u` over channels.
pub fn reduce_inputs<T: Real>(inputs: &DiscreteInputs<T>) -> Result<ReducedInputs<T>> {
    inputs.validate()?;
    Ok(ReducedInputs {
        a_bar: mean_over_channels(&inputs.a_bar),
        b_bar_u: mean_over_channels(&inputs.b_bar_u),
        c: inputs.c.clone(),
        channels: inputs.u.channels(),
        skip_gain: inputs.skip_gain.clone(),
        u: inputs.u.clone(),
    })
}

/// Runs the scan on the single reduced channel (without skip term),
/// broadcasts to the original channel count and adds `skip_gain[d]·u[b,d,l]`
/// per channel.
pub fn scan_vmeanba<T: Real>(r: &ReducedInputs<T>, scan_impl: ScanImpl) -> Result<Tensor3<T>> {
    r.validate()?;
    let [batch, _, len, _] = r.a_bar.shape();
    let single = DiscreteInputs::new(
        r.a_bar.clone(),
        r.b_bar_u.clone(),
        r.c.clone(),
        vec![T::zero()],
        Tensor3::zeros([batch, 1, len])?,
    )?;
    let y_reduced = scan_impl.run(&single)?;
    let mut y = broadcast_channels(&y_reduced, r.channels)?;
    for b in 0..batch {
        for (d, &skip) in r.skip_gain.iter().enumerate() {
            for (o, &u) in y.lane_mut(b, d).iter_mut().zip(r.u.lane(b, d)) {
                *o = *o + skip * u;
            }
        }
    }
    Ok(y)
}

/// Error of the reduced scan against the exact sequential scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxError {
    pub max_abs: f64,
    pub mean_abs: f64,
    /// `‖approx − exact‖₂ / ‖exact‖₂`, or 0 when both are zero.
    pub rel_l2: f64,
}

pub fn approximation_error<T: Real>(inputs: &DiscreteInputs<T>) -> Result<ApproxError> {
    let exact = scan_sequential(inputs)?;
    let approx = scan_vmeanba(&reduce_inputs(inputs)?, ScanImpl::Sequential)?;
    Ok(compare(exact.data(), approx.data()))
}

pub(crate) fn compare<T: Real>(exact: &[T], approx: &[T]) -> ApproxError {
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0;
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    for (&e, &a) in exact.iter().zip(approx) {
        let (e, a) = (e.as_f64(), a.as_f64());
        let diff = (a - e).abs();
        max_abs = max_abs.max(diff);
        sum_abs += diff;
        diff_sq += diff * diff;
        ref_sq += e * e;
    }
    let rel_l2 = if diff_sq == 0.0 {
        0.0
    } else {
        (diff_sq / ref_sq).sqrt()
    };
    ApproxError {
        max_abs,
        mean_abs: sum_abs / exact.len().max(1) as f64,
        rel_l2,
    }
}
