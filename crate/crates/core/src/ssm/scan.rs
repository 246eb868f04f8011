use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ssm::{compose, DiscreteInputs, ScanElement};
use crate::tensor::{Real, Tensor3};
use crate::Result;

/// Which evaluator runs the recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanImpl {
    Sequential,
    Parallel,
}

impl ScanImpl {
    pub fn run<T: Real>(self, inputs: &DiscreteInputs<T>) -> Result<Tensor3<T>> {
        match self {
            ScanImpl::Sequential => scan_sequential(inputs),
            ScanImpl::Parallel => scan_parallel(inputs),
        }
    }
}

/// Reference evaluator: a single pass over `l` per `(b, d)` lane carrying the
/// `N`-wide state.
pub fn scan_sequential<T: Real>(inputs: &DiscreteInputs<T>) -> Result<Tensor3<T>> {
    inputs.validate()?;
    let [batch, channels, len, n] = inputs.dims();
    let c_rows = inputs.c_by_step();
    let mut y = Tensor3::zeros([batch, channels, len])?;
    let mut h = vec![T::zero(); n];
    for b in 0..batch {
        let c_b = &c_rows[b * len * n..(b + 1) * len * n];
        for d in 0..channels {
            h.iter_mut().for_each(|v| *v = T::zero());
            let a_lane = inputs.a_bar.lane(b, d);
            let bu_lane = inputs.b_bar_u.lane(b, d);
            let u_lane = inputs.u.lane(b, d);
            let skip = inputs.skip_gain[d];
            let out = y.lane_mut(b, d);
            for l in 0..len {
                let row = l * n..(l + 1) * n;
                let mut acc = T::zero();
                for (((hs, &a), &bu), &c) in h
                    .iter_mut()
                    .zip(&a_lane[row.clone()])
                    .zip(&bu_lane[row.clone()])
                    .zip(&c_b[row])
                {
                    *hs = a * *hs + bu;
                    acc = acc + c * *hs;
                }
                out[l] = acc + skip * u_lane[l];
            }
        }
    }
    Ok(y)
}

/// Work-efficient (Blelloch) exclusive scan in place over a power-of-two
/// buffer. The reduction tree depends only on `buf.len()`.
pub(crate) fn blelloch_exclusive<T: Real>(buf: &mut [ScanElement<T>]) {
    let size = buf.len();
    debug_assert!(size.is_power_of_two());
    let mut stride = 1;
    while stride < size {
        let mut i = 2 * stride - 1;
        while i < size {
            buf[i] = compose(buf[i - stride], buf[i]);
            i += 2 * stride;
        }
        stride *= 2;
    }
    buf[size - 1] = ScanElement::identity();
    stride = size / 2;
    while stride >= 1 {
        let mut i = 2 * stride - 1;
        while i < size {
            let left = buf[i - stride];
            buf[i - stride] = buf[i];
            buf[i] = compose(buf[i], left);
            i += 2 * stride;
        }
        stride /= 2;
    }
}

/// Associative-scan evaluator.
///
/// Each `(b, d, n)` lane is padded to the next power of two with identity
/// elements and scanned with [`blelloch_exclusive`]; the inclusive prefix at
/// `l` is the exclusive prefix composed with element `l`, and since
/// `h[-1] = 0` its additive part is the state. `(b, d)` lanes are
/// distributed over the rayon pool. Every lane is computed by a single task
/// with a tree fixed by `L`, so output does not depend on the worker count.
pub fn scan_parallel<T: Real>(inputs: &DiscreteInputs<T>) -> Result<Tensor3<T>> {
    inputs.validate()?;
    let [batch, channels, len, n] = inputs.dims();
    let c_rows = inputs.c_by_step();
    let padded = len.next_power_of_two();
    let mut y = Tensor3::zeros([batch, channels, len])?;

    y.data_mut()
        .par_chunks_mut(len)
        .enumerate()
        .for_each_init(
            || vec![ScanElement::<T>::identity(); padded],
            |buf, (lane, out)| {
                let (b, d) = (lane / channels, lane % channels);
                let a_lane = inputs.a_bar.lane(b, d);
                let bu_lane = inputs.b_bar_u.lane(b, d);
                let c_b = &c_rows[b * len * n..(b + 1) * len * n];
                for s in 0..n {
                    for l in 0..len {
                        buf[l] = ScanElement::new(a_lane[l * n + s], bu_lane[l * n + s]);
                    }
                    buf[len..].fill(ScanElement::identity());
                    blelloch_exclusive(buf);
                    for l in 0..len {
                        let elem = ScanElement::new(a_lane[l * n + s], bu_lane[l * n + s]);
                        let h = compose(buf[l], elem).add;
                        out[l] = out[l] + c_b[l * n + s] * h;
                    }
                }
                let skip = inputs.skip_gain[d];
                for (o, &u) in out.iter_mut().zip(inputs.u.lane(b, d)) {
                    *o = *o + skip * u;
                }
            },
        );
    Ok(y)
}
