use crate::ssm::StateMatrix;
use crate::tensor::{Real, Tensor3, Tensor4};
use crate::{Error, Result};

/// Below this magnitude `(e^x - 1) / x` is replaced by its limit 1.
const SERIES_CUTOFF: f64 = 1e-8;

/// From this magnitude on, `e^x - 1` no longer cancels and `expm1` is not needed.
const EXPM1_CUTOFF: f64 = 0.5;

#[cfg(test)]
fn phi1<T: Real>(x: T) -> T {
    phi1_with_exp(x, x.exp())
}

/// `(e^x - 1) / x` given `e^x`.
#[inline]
fn phi1_with_exp<T: Real>(x: T, exp_x: T) -> T {
    let ax = x.abs();
    if ax < T::of(SERIES_CUTOFF) {
        T::one()
    } else if ax < T::of(EXPM1_CUTOFF) {
        x.exp_m1() / x
    } else {
        (exp_x - T::one()) / x
    }
}

/// Zero-order-hold discretization of a diagonal system.
///
/// ```text
/// a_bar[b,d,l,n]   = exp(delta[b,d,l] · A[d,n])
/// b_bar_u[b,d,l,n] = (exp(x) - 1)/x · delta[b,d,l] · B_t[b,n,l] · u[b,d,l],  x = delta·A[d,n]
/// ```
///
/// `delta` and `u` are `(B, D, L)`, `b_t` is `(B, N, L)`.
pub fn discretize_zoh<T: Real>(
    delta: &Tensor3<T>,
    a: &StateMatrix<T>,
    b_t: &Tensor3<T>,
    u: &Tensor3<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let [batch, channels, len] = delta.shape();
    let n = a.state();
    if a.channels() != channels {
        return Err(Error::shape(format!(
            "delta has {channels} channels, state matrix {}",
            a.channels()
        )));
    }
    if u.shape() != delta.shape() {
        return Err(Error::shape(format!("u {:?} vs delta {:?}", u.shape(), delta.shape())));
    }
    if b_t.shape() != [batch, n, len] {
        return Err(Error::shape(format!(
            "B_t {:?}, expected {:?}",
            b_t.shape(),
            [batch, n, len]
        )));
    }
    if let Some(bad) = delta.data().iter().find(|&&v| v.is_nan() || v <= T::zero()) {
        return Err(Error::InvalidValue(format!("delta must be positive, found {bad:?}")));
    }

    let shape = [batch, channels, len, n];
    let total = batch * channels * len * n;
    let mut a_bar = Vec::with_capacity(total);
    let mut b_bar_u = Vec::with_capacity(total);
    // B_t as (l, n) rows for the current batch entry.
    let mut b_rows = vec![T::zero(); len * n];
    for b in 0..batch {
        for s in 0..n {
            for (l, &v) in b_t.lane(b, s).iter().enumerate() {
                b_rows[l * n + s] = v;
            }
        }
        for d in 0..channels {
            let a_row = a.row(d);
            let dt_lane = delta.lane(b, d);
            let u_lane = u.lane(b, d);
            for l in 0..len {
                let dt = dt_lane[l];
                let du = dt * u_lane[l];
                let b_row = &b_rows[l * n..(l + 1) * n];
                for (&a_dn, &b_n) in a_row.iter().zip(b_row) {
                    let x = dt * a_dn;
                    let e = x.exp();
                    a_bar.push(e);
                    b_bar_u.push(phi1_with_exp(x, e) * du * b_n);
                }
            }
        }
    }
    Ok((Tensor4::new(a_bar, shape)?, Tensor4::new(b_bar_u, shape)?))
}
