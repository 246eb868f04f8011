use crate::ssm::DiscreteInputs;
use crate::tensor::{Real, Tensor3, Tensor4};
use crate::{Error, Result};

/// A discrete time-invariant diagonal system.
///
/// `a_bar` and `b_bar` are `D × N` row-major, `c` has length `N` and
/// `skip_gain` length `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem<T> {
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
    pub skip_gain: Vec<T>,
    channels: usize,
    state: usize,
}

impl<T: Real> LtiSystem<T> {
    pub fn new(
        a_bar: Vec<T>,
        b_bar: Vec<T>,
        c: Vec<T>,
        skip_gain: Vec<T>,
        channels: usize,
        state: usize,
    ) -> Result<Self> {
        if channels == 0
            || state == 0
            || a_bar.len() != channels * state
            || b_bar.len() != channels * state
            || c.len() != state
            || skip_gain.len() != channels
        {
            return Err(Error::shape(format!(
                "LTI system D={channels} N={state}: a_bar {}, b_bar {}, c {}, skip {}",
                a_bar.len(),
                b_bar.len(),
                c.len(),
                skip_gain.len()
            )));
        }
        Ok(Self {
            a_bar,
            b_bar,
            c,
            skip_gain,
            channels,
            state,
        })
    }

    /// Extracts the constant parameters from per-step tensors, rejecting any
    /// that vary over batch or time.
    ///
    /// `a_bar` and `b_bar` are `(B, D, L, N)` (note `b_bar`, not `b_bar·u`),
    /// `c` is `(B, N, L)`.
    pub fn from_time_series(
        a_bar: &Tensor4<T>,
        b_bar: &Tensor4<T>,
        c: &Tensor3<T>,
        skip_gain: Vec<T>,
    ) -> Result<Self> {
        let [batch, channels, len, state] = a_bar.shape();
        if b_bar.shape() != a_bar.shape() || c.shape() != [batch, state, len] {
            return Err(Error::shape("LTI time series shapes disagree"));
        }
        let mut a0 = Vec::with_capacity(channels * state);
        let mut b0 = Vec::with_capacity(channels * state);
        for d in 0..channels {
            a0.extend_from_slice(&a_bar.lane(0, d)[..state]);
            b0.extend_from_slice(&b_bar.lane(0, d)[..state]);
        }
        for b in 0..batch {
            for d in 0..channels {
                for l in 0..len {
                    for s in 0..state {
                        if a_bar.get(b, d, l, s) != a0[d * state + s] {
                            return Err(Error::TimeVarying(format!("a_bar at {:?}", (b, d, l, s))));
                        }
                        if b_bar.get(b, d, l, s) != b0[d * state + s] {
                            return Err(Error::TimeVarying(format!("b_bar at {:?}", (b, d, l, s))));
                        }
                    }
                }
            }
        }
        let c0: Vec<T> = (0..state).map(|s| c.get(0, s, 0)).collect();
        for b in 0..batch {
            for s in 0..state {
                if c.lane(b, s).iter().any(|&v| v != c0[s]) {
                    return Err(Error::TimeVarying(format!("c at batch {b}, state {s}")));
                }
            }
        }
        Self::new(a0, b0, c0, skip_gain, channels, state)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// The same system expressed as per-step scan inputs driven by `u`.
    pub fn discrete_inputs(&self, u: &Tensor3<T>) -> Result<DiscreteInputs<T>> {
        let [batch, channels, len] = u.shape();
        if channels != self.channels {
            return Err(Error::shape("u channel count"));
        }
        let n = self.state;
        let dims = [batch, channels, len, n];
        DiscreteInputs::new(
            Tensor4::from_fn(dims, |_, d, _, s| self.a_bar[d * n + s])?,
            Tensor4::from_fn(dims, |b, d, l, s| self.b_bar[d * n + s] * u.get(b, d, l))?,
            Tensor3::from_fn([batch, n, len], |_, s, _| self.c[s])?,
            self.skip_gain.clone(),
            u.clone(),
        )
    }

    /// Impulse response `K[d][k] = Σ_n c[n] · a_bar[d,n]^k · b_bar[d,n]`
    /// for `k < len`.
    pub fn kernel(&self, len: usize) -> Vec<Vec<T>> {
        let n = self.state;
        (0..self.channels)
            .map(|d| {
                let a = &self.a_bar[d * n..(d + 1) * n];
                let mut pow: Vec<T> = self.b_bar[d * n..(d + 1) * n].to_vec();
                (0..len)
                    .map(|_| {
                        let k = pow
                            .iter()
                            .zip(&self.c)
                            .fold(T::zero(), |acc, (&p, &c)| acc + c * p);
                        pow.iter_mut().zip(a).for_each(|(p, &a)| *p = *p * a);
                        k
                    })
                    .collect()
            })
            .collect()
    }
}

/// Evaluates a time-invariant system as a causal convolution of `u` with the
/// truncated kernel `(C·B̄, C·Ā·B̄, C·Ā²·B̄, ...)`, plus the skip term.
pub fn conv_form_lti<T: Real>(sys: &LtiSystem<T>, u: &Tensor3<T>) -> Result<Tensor3<T>> {
    let [batch, channels, len] = u.shape();
    if channels != sys.channels() {
        return Err(Error::shape(format!(
            "u has {channels} channels, system {}",
            sys.channels()
        )));
    }
    let kernel = sys.kernel(len);
    let mut y = Tensor3::zeros([batch, channels, len])?;
    for b in 0..batch {
        for d in 0..channels {
            let k = &kernel[d];
            let x = u.lane(b, d);
            let skip = sys.skip_gain[d];
            let out = y.lane_mut(b, d);
            for l in 0..len {
                let mut acc = T::zero();
                for j in 0..=l {
                    acc = acc + k[j] * x[l - j];
                }
                out[l] = acc + skip * x[l];
            }
        }
    }
    Ok(y)
}
