//! Selective-scan state-space kernels with channel-mean scan compression.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`archive`]: dense activation containers and the on-disk
//!   tensor archive.
//! * [`ssm`]: discretization, input-dependent selection and three evaluators
//!   of the diagonal linear recurrence (sequential, associative parallel scan,
//!   and the convolution form for time-invariant systems).
//! * [`ss2d`]: the four-direction cross-scan / cross-merge wrapper used by
//!   vision backbones.
//! * [`vmeanba`]: the channel-mean reduction wrapped around the scan, channel
//!   statistics, and the FLOP cost model with an instrumented counter.
//! * [`model`]: a small stacked backbone, layer impact scoring and selection,
//!   K sweeps and l1 magnitude pruning.
//! * [`bench`]: shape sweeps, timing and report emission.

pub mod archive;
pub mod bench;
mod error;
pub mod model;
pub mod ss2d;
pub mod ssm;
pub mod tensor;
pub mod vmeanba;

pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor3, Tensor4};
