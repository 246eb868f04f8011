//! Diagonal selective state-space kernels.
//!
//! The recurrence evaluated everywhere in this module is, per batch `b`,
//! channel `d` and state index `n`,
//!
//! ```text
//! h[l][n] = a_bar[b,d,l,n] * h[l-1][n] + b_bar_u[b,d,l,n],   h[-1] = 0
//! y[b,d,l] = sum_n c[b,n,l] * h[l][n] + skip_gain[d] * u[b,d,l]
//! ```

mod conv;
mod scan;
mod selection;
mod zoh;

use rand::Rng;

pub use conv::{conv_form_lti, LtiSystem};
pub use scan::{scan_parallel, scan_sequential, ScanImpl};
pub use selection::{selection, softplus, Selection};
pub use zoh::discretize_zoh;

use crate::tensor::{Real, Tensor3, Tensor4};
use crate::{Error, Result};

/// Continuous diagonal state matrix, one coefficient per `(channel, state)`.
///
/// Every entry is finite and strictly negative, so the continuous system is
/// stable and ZOH discretization yields multipliers in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMatrix<T> {
    data: Vec<T>,
    channels: usize,
    state: usize,
}

impl<T: Real> StateMatrix<T> {
    pub fn new(data: Vec<T>, channels: usize, state: usize) -> Result<Self> {
        if channels == 0 || state == 0 || data.len() != channels * state {
            return Err(Error::shape(format!(
                "state matrix {channels}x{state} with {} entries",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v < T::zero())) {
            return Err(Error::InvalidValue(format!(
                "state matrix entries must be finite and negative, found {bad:?}"
            )));
        }
        Ok(Self {
            data,
            channels,
            state,
        })
    }

    /// Mamba's S4D-real initialisation: `a[d, n] = -(n + 1)`.
    pub fn s4d_real(channels: usize, state: usize) -> Result<Self> {
        let data = (0..channels * state)
            .map(|i| -T::of((i % state + 1) as f64))
            .collect();
        Self::new(data, channels, state)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn state(&self) -> usize {
        self.state
    }

    #[inline]
    pub fn row(&self, d: usize) -> &[T] {
        &self.data[d * self.state..(d + 1) * self.state]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Parameters of one selective SSM: the state matrix plus the projections
/// that make `delta`, `B` and `C` functions of the input.
///
/// * `b_proj`, `c_proj`: `N × D`, row-major.
/// * `delta_proj`: length `D` (a `D → 1` projection broadcast to every channel).
/// * `delta_bias`, `skip_gain`: length `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<T> {
    a: StateMatrix<T>,
    b_proj: Vec<T>,
    c_proj: Vec<T>,
    delta_proj: Vec<T>,
    delta_bias: Vec<T>,
    skip_gain: Vec<T>,
}

impl<T: Real> SsmParams<T> {
    pub fn new(
        a: StateMatrix<T>,
        b_proj: Vec<T>,
        c_proj: Vec<T>,
        delta_proj: Vec<T>,
        delta_bias: Vec<T>,
        skip_gain: Vec<T>,
    ) -> Result<Self> {
        let (d, n) = (a.channels(), a.state());
        let check = |name: &str, v: &[T], want: usize| {
            if v.len() != want {
                Err(Error::shape(format!("{name}: expected {want} entries, got {}", v.len())))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(Error::InvalidValue(format!("{name} has non-finite entries")))
            } else {
                Ok(())
            }
        };
        check("b_proj", &b_proj, n * d)?;
        check("c_proj", &c_proj, n * d)?;
        check("delta_proj", &delta_proj, d)?;
        check("delta_bias", &delta_bias, d)?;
        check("skip_gain", &skip_gain, d)?;
        Ok(Self {
            a,
            b_proj,
            c_proj,
            delta_proj,
            delta_bias,
            skip_gain,
        })
    }

    /// Random parameters with an S4D-real state matrix. Projections are
    /// uniform in `±1/sqrt(D)` and `delta_bias` places `softplus(bias)` in
    /// roughly `[1e-3, 1e-1]`.
    pub fn random(channels: usize, state: usize, rng: &mut impl Rng) -> Result<Self> {
        let scale = 1.0 / (channels as f64).sqrt();
        let mut uniform = |n: usize, s: f64| -> Vec<T> {
            (0..n).map(|_| T::of(rng.gen_range(-s..s))).collect()
        };
        let b_proj = uniform(state * channels, scale);
        let c_proj = uniform(state * channels, scale);
        let delta_proj = uniform(channels, scale);
        let skip_gain = (0..channels).map(|_| T::of(rng.gen_range(0.5..1.5))).collect();
        // Inverse softplus of a log-uniform step size.
        let delta_bias = (0..channels)
            .map(|_| {
                let dt = (rng.gen_range(1e-3f64.ln()..1e-1f64.ln())).exp();
                T::of(dt + (-(-dt).exp_m1()).ln())
            })
            .collect();
        Self::new(
            StateMatrix::s4d_real(channels, state)?,
            b_proj,
            c_proj,
            delta_proj,
            delta_bias,
            skip_gain,
        )
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.a.channels()
    }

    #[inline]
    pub fn state(&self) -> usize {
        self.a.state()
    }

    pub fn a(&self) -> &StateMatrix<T> {
        &self.a
    }

    pub fn b_proj(&self) -> &[T] {
        &self.b_proj
    }

    pub fn c_proj(&self) -> &[T] {
        &self.c_proj
    }

    pub fn delta_proj(&self) -> &[T] {
        &self.delta_proj
    }

    pub fn delta_bias(&self) -> &[T] {
        &self.delta_bias
    }

    pub fn skip_gain(&self) -> &[T] {
        &self.skip_gain
    }

    /// The three input projections, mutably, in the order `b_proj`,
    /// `c_proj`, `delta_proj`.
    pub fn projections_mut(&mut self) -> [(&'static str, &mut Vec<T>); 3] {
        [
            ("b_proj", &mut self.b_proj),
            ("c_proj", &mut self.c_proj),
            ("delta_proj", &mut self.delta_proj),
        ]
    }

    pub fn set_skip_gain(&mut self, skip_gain: Vec<T>) -> Result<()> {
        if skip_gain.len() != self.channels() {
            return Err(Error::shape("skip_gain length"));
        }
        self.skip_gain = skip_gain;
        Ok(())
    }
}

/// Discretized inputs to the scan: `(a_bar, b_bar_u, c)` plus the skip path.
///
/// Shapes: `a_bar`, `b_bar_u` are `(B, D, L, N)`, `c` is `(B, N, L)`,
/// `u` is `(B, D, L)` and `skip_gain` has length `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteInputs<T> {
    pub a_bar: Tensor4<T>,
    pub b_bar_u: Tensor4<T>,
    pub c: Tensor3<T>,
    pub skip_gain: Vec<T>,
    pub u: Tensor3<T>,
}

impl<T: Real> DiscreteInputs<T> {
    pub fn new(
        a_bar: Tensor4<T>,
        b_bar_u: Tensor4<T>,
        c: Tensor3<T>,
        skip_gain: Vec<T>,
        u: Tensor3<T>,
    ) -> Result<Self> {
        let inputs = Self {
            a_bar,
            b_bar_u,
            c,
            skip_gain,
            u,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    /// Discretizes `params` on `u`: selection followed by ZOH.
    pub fn from_params(u: &Tensor3<T>, params: &SsmParams<T>) -> Result<Self> {
        let sel = selection(u, params)?;
        let (a_bar, b_bar_u) = discretize_zoh(&sel.delta, params.a(), &sel.b, u)?;
        Self::new(a_bar, b_bar_u, sel.c, params.skip_gain().to_vec(), u.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let [b, d, l, n] = self.a_bar.shape();
        if self.b_bar_u.shape() != [b, d, l, n] {
            return Err(Error::shape(format!(
                "b_bar_u {:?} vs a_bar {:?}",
                self.b_bar_u.shape(),
                self.a_bar.shape()
            )));
        }
        if self.c.shape() != [b, n, l] {
            return Err(Error::shape(format!(
                "c {:?}, expected {:?}",
                self.c.shape(),
                [b, n, l]
            )));
        }
        if self.u.shape() != [b, d, l] {
            return Err(Error::shape(format!(
                "u {:?}, expected {:?}",
                self.u.shape(),
                [b, d, l]
            )));
        }
        if self.skip_gain.len() != d {
            return Err(Error::shape(format!(
                "skip_gain has {} entries, expected {d}",
                self.skip_gain.len()
            )));
        }
        Ok(())
    }

    /// `(B, D, L, N)`.
    pub fn dims(&self) -> [usize; 4] {
        self.a_bar.shape()
    }

    pub fn cast<U: Real>(&self) -> DiscreteInputs<U> {
        DiscreteInputs {
            a_bar: self.a_bar.cast(),
            b_bar_u: self.b_bar_u.cast(),
            c: self.c.cast(),
            skip_gain: self.skip_gain.iter().map(|v| U::of(v.as_f64())).collect(),
            u: self.u.cast(),
        }
    }

    /// `c` transposed to `(B, L, N)` so the readout walks it contiguously.
    pub(crate) fn c_by_step(&self) -> Vec<T> {
        let [b, n, l] = self.c.shape();
        let mut out = vec![T::zero(); b * l * n];
        for bi in 0..b {
            for ni in 0..n {
                for (li, &v) in self.c.lane(bi, ni).iter().enumerate() {
                    out[(bi * l + li) * n + ni] = v;
                }
            }
        }
        out
    }
}

/// One element of the linear-recurrence monoid: the affine map
/// `h ↦ mult * h + add`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanElement<T> {
    pub mult: T,
    pub add: T,
}

impl<T: Real> ScanElement<T> {
    #[inline]
    pub fn new(mult: T, add: T) -> Self {
        Self { mult, add }
    }

    #[inline]
    pub fn identity() -> Self {
        Self {
            mult: T::one(),
            add: T::zero(),
        }
    }

    /// Applies the map to a state.
    #[inline]
    pub fn apply(self, h: T) -> T {
        self.mult * h + self.add
    }
}

/// `e1` followed by `e2`: `(a1·a2, a2·b1 + b2)`.
#[inline]
pub fn compose<T: Real>(e1: ScanElement<T>, e2: ScanElement<T>) -> ScanElement<T> {
    ScanElement {
        mult: e1.mult * e2.mult,
        add: e2.mult * e1.add + e2.add,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compose_identity_and_hand_value() {
        let e = ScanElement::new(0.3f64, -1.7);
        assert_eq!(compose(e, ScanElement::identity()), e);
        assert_eq!(compose(ScanElement::identity(), e), e);
        let h = ScanElement::new(0.5f64, 1.0);
        assert_eq!(compose(h, h), ScanElement::new(0.25, 1.5));
    }

    proptest! {
        #[test]
        fn compose_is_associative(
            a in (-2.0f64..2.0, -5.0f64..5.0),
            b in (-2.0f64..2.0, -5.0f64..5.0),
            c in (-2.0f64..2.0, -5.0f64..5.0),
        ) {
            let (a, b, c) = (
                ScanElement::new(a.0, a.1),
                ScanElement::new(b.0, b.1),
                ScanElement::new(c.0, c.1),
            );
            let l = compose(compose(a, b), c);
            let r = compose(a, compose(b, c));
            prop_assert!((l.mult - r.mult).abs() <= 1e-12);
            prop_assert!((l.add - r.add).abs() <= 1e-12);
        }

        #[test]
        fn compose_matches_sequential_application(
            a in (-2.0f64..2.0, -5.0f64..5.0),
            b in (-2.0f64..2.0, -5.0f64..5.0),
            h in -3.0f64..3.0,
        ) {
            let (a, b) = (ScanElement::new(a.0, a.1), ScanElement::new(b.0, b.1));
            let direct = b.apply(a.apply(h));
            prop_assert!((compose(a, b).apply(h) - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn state_matrix_rejects_unstable_entries() {
        assert!(StateMatrix::new(vec![-1.0f64, 0.0], 1, 2).is_err());
        assert!(StateMatrix::new(vec![-1.0f64, 0.5], 1, 2).is_err());
        assert!(StateMatrix::new(vec![-1.0f64, f64::NAN], 1, 2).is_err());
        assert!(StateMatrix::new(vec![-1.0f64], 1, 2).is_err());
        let a = StateMatrix::<f32>::s4d_real(2, 3).unwrap();
        assert_eq!(a.row(1), &[-1.0, -2.0, -3.0]);
    }

    #[test]
    fn params_shape_checks() {
        let a = StateMatrix::<f64>::s4d_real(2, 3).unwrap();
        let ok = SsmParams::new(a.clone(), vec![0.0; 6], vec![0.0; 6], vec![0.0; 2], vec![0.0; 2], vec![1.0; 2]);
        assert!(ok.is_ok());
        let bad = SsmParams::new(a, vec![0.0; 5], vec![0.0; 6], vec![0.0; 2], vec![0.0; 2], vec![1.0; 2]);
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn discrete_inputs_shape_checks() {
        let a = Tensor4::<f32>::zeros([1, 2, 3, 4]).unwrap();
        let c = Tensor3::<f32>::zeros([1, 4, 3]).unwrap();
        let u = Tensor3::<f32>::zeros([1, 2, 3]).unwrap();
        assert!(DiscreteInputs::new(a.clone(), a.clone(), c.clone(), vec![0.0; 2], u.clone()).is_ok());
        assert!(DiscreteInputs::new(a.clone(), a.clone(), c.clone(), vec![0.0; 3], u.clone()).is_err());
        let c_bad = Tensor3::<f32>::zeros([1, 3, 3]).unwrap();
        assert!(DiscreteInputs::new(a.clone(), a, c_bad, vec![0.0; 2], u).is_err());
    }
}
