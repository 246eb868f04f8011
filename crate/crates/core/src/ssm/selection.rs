use crate::ssm::SsmParams;
use crate::tensor::{Real, Tensor3};
use crate::{Error, Result};

/// Input-dependent scan parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<T> {
    /// Step sizes `(B, D, L)`, strictly positive.
    pub delta: Tensor3<T>,
    /// `(B, N, L)`.
    pub b: Tensor3<T>,
    /// `(B, N, L)`.
    pub c: Tensor3<T>,
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `out[b, o, :] = Σ_k w[o, k] · u[b, k, :]` for an `outputs × D` matrix `w`.
fn project<T: Real>(u: &Tensor3<T>, w: &[T], outputs: usize) -> Tensor3<T> {
    let [batch, channels, len] = u.shape();
    let mut out = Tensor3::zeros([batch, outputs, len]).expect("nonzero dims");
    for b in 0..batch {
        for o in 0..outputs {
            let row = &w[o * channels..(o + 1) * channels];
            let mut acc = vec![T::zero(); len];
            for (k, &wk) in row.iter().enumerate() {
                if wk == T::zero() {
                    continue;
                }
                for (a, &x) in acc.iter_mut().zip(u.lane(b, k)) {
                    *a = *a + wk * x;
                }
            }
            out.lane_mut(b, o).copy_from_slice(&acc);
        }
    }
    out
}

/// Computes `delta`, `B_t` and `C_t` from the input.
///
/// `B_t = b_proj · u` and `C_t = c_proj · u` per position; `delta` is
/// `softplus(delta_bias[d] + delta_proj · u)`, the scalar projection being
/// shared by every channel.
pub fn selection<T: Real>(u: &Tensor3<T>, params: &SsmParams<T>) -> Result<Selection<T>> {
    let [batch, channels, len] = u.shape();
    if channels != params.channels() {
        return Err(Error::shape(format!(
            "input has {channels} channels, params expect {}",
            params.channels()
        )));
    }
    let n = params.state();
    let b = project(u, params.b_proj(), n);
    let c = project(u, params.c_proj(), n);
    let shared = project(u, params.delta_proj(), 1);

    let mut delta = Tensor3::zeros([batch, channels, len])?;
    for bi in 0..batch {
        let s = shared.lane(bi, 0);
        for (d, &bias) in params.delta_bias().iter().enumerate() {
            for (out, &x) in delta.lane_mut(bi, d).iter_mut().zip(s) {
                *out = softplus(bias + x);
            }
        }
    }
    Ok(Selection { delta, b, c })
}
