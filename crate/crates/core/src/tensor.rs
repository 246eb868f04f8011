//! Dense activation containers.
//!
//! [`Tensor3`] is laid out `(batch, channel, length)` and [`Tensor4`] is
//! `(batch, channel, length, state)`, both row-major with the last axis
//! fastest-varying. Keeping the scan axis contiguous in `Tensor3` makes a
//! sequential pass over one `(b, d)` lane a linear walk through memory.

use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Element type tag stored in archives and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::InvalidValue(format!("unknown dtype `{other}`"))),
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

mod sealed {
    pub trait Sealed {}
    impl Sealed for f32 {}
    impl Sealed for f64 {}
}

/// Floating point element supported by the kernels: `f32` or `f64`.
pub trait Real: Float + Default + Debug + Send + Sync + 'static + sealed::Sealed {
    const DTYPE: DType;

    /// Lossy conversion from `f64` (rounds to nearest for `f32`).
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn extend_le_bytes(values: &[Self], out: &mut Vec<u8>);

    /// Decodes `bytes.len() / size` little-endian values.
    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self>;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn extend_le_bytes(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 4);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn extend_le_bytes(values: &[Self], out: &mut Vec<u8>) {
        out.reserve(values.len() * 8);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn from_le_bytes_slice(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect()
    }
}

fn check_dims(dims: &[usize], what: &str) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::shape(format!("{what} dims must be >= 1, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("{what} dims overflow: {dims:?}")))
}

/// Rank-3 tensor `(B, D, L)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    data: Vec<T>,
    shape: [usize; 3],
}

impl<T: Real> Tensor3<T> {
    pub fn new(data: Vec<T>, shape: [usize; 3]) -> Result<Self> {
        let n = check_dims(&shape, "Tensor3")?;
        if data.len() != n {
            return Err(Error::shape(format!(
                "Tensor3 {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: [usize; 3]) -> Result<Self> {
        let n = check_dims(&shape, "Tensor3")?;
        Ok(Self {
            data: vec![T::zero(); n],
            shape,
        })
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let n = check_dims(&shape, "Tensor3")?;
        let mut data = Vec::with_capacity(n);
        for b in 0..shape[0] {
            for d in 0..shape[1] {
                for l in 0..shape[2] {
                    data.push(f(b, d, l));
                }
            }
        }
        Ok(Self { data, shape })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.shape[2]
    }

    /// Always false: every axis has at least one entry.
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, d: usize, l: usize) -> usize {
        (b * self.shape[1] + d) * self.shape[2] + l
    }

    #[inline]
    pub fn get(&self, b: usize, d: usize, l: usize) -> T {
        self.data[self.index(b, d, l)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, d: usize, l: usize, v: T) {
        let i = self.index(b, d, l);
        self.data[i] = v;
    }

    /// The contiguous length-`L` lane at `(b, d)`.
    #[inline]
    pub fn lane(&self, b: usize, d: usize) -> &[T] {
        let start = self.index(b, d, 0);
        &self.data[start..start + self.shape[2]]
    }

    #[inline]
    pub fn lane_mut(&mut self, b: usize, d: usize) -> &mut [T] {
        let start = self.index(b, d, 0);
        let len = self.shape[2];
        &mut self.data[start..start + len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            shape: self.shape,
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor3<U> {
        Tensor3 {
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            shape: self.shape,
        }
    }
}

/// Rank-4 tensor `(B, D, L, N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    data: Vec<T>,
    shape: [usize; 4],
}

impl<T: Real> Tensor4<T> {
    pub fn new(data: Vec<T>, shape: [usize; 4]) -> Result<Self> {
        let n = check_dims(&shape, "Tensor4")?;
        if data.len() != n {
            return Err(Error::shape(format!(
                "Tensor4 {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: [usize; 4]) -> Result<Self> {
        let n = check_dims(&shape, "Tensor4")?;
        Ok(Self {
            data: vec![T::zero(); n],
            shape,
        })
    }

    pub fn from_fn(
        shape: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        let n = check_dims(&shape, "Tensor4")?;
        let mut data = Vec::with_capacity(n);
        for b in 0..shape[0] {
            for d in 0..shape[1] {
                for l in 0..shape[2] {
                    for s in 0..shape[3] {
                        data.push(f(b, d, l, s));
                    }
                }
            }
        }
        Ok(Self { data, shape })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn state(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, d: usize, l: usize, n: usize) -> usize {
        ((b * self.shape[1] + d) * self.shape[2] + l) * self.shape[3] + n
    }

    #[inline]
    pub fn get(&self, b: usize, d: usize, l: usize, n: usize) -> T {
        self.data[self.index(b, d, l, n)]
    }

    /// The `L × N` block at `(b, d)`, row-major in `(l, n)`.
    #[inline]
    pub fn lane(&self, b: usize, d: usize) -> &[T] {
        let start = self.index(b, d, 0, 0);
        &self.data[start..start + self.shape[2] * self.shape[3]]
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            shape: self.shape,
        }
    }
}

/// Tensors with a channel axis at position 1.
pub trait ChannelAxis: Sized {
    type Elem: Real;

    /// `(outer, channels, inner)` where `outer` is the batch count and
    /// `inner` the number of contiguous elements per channel.
    fn channel_layout(&self) -> (usize, usize, usize);

    fn raw(&self) -> &[Self::Elem];

    /// Same shape except for the channel count.
    fn with_channels(&self, channels: usize, data: Vec<Self::Elem>) -> Self;
}

impl<T: Real> ChannelAxis for Tensor3<T> {
    type Elem = T;

    fn channel_layout(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2])
    }

    fn raw(&self) -> &[T] {
        &self.data
    }

    fn with_channels(&self, channels: usize, data: Vec<T>) -> Self {
        let shape = [self.shape[0], channels, self.shape[2]];
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { data, shape }
    }
}

impl<T: Real> ChannelAxis for Tensor4<T> {
    type Elem = T;

    fn channel_layout(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2] * self.shape[3])
    }

    fn raw(&self) -> &[T] {
        &self.data
    }

    fn with_channels(&self, channels: usize, data: Vec<T>) -> Self {
        let shape = [self.shape[0], channels, self.shape[2], self.shape[3]];
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { data, shape }
    }
}

/// Inner-axis tile for the channel reduction; keeps the accumulators in L1.
const MEAN_TILE: usize = 512;

/// Averages over the channel axis, leaving a single channel.
///
/// Accumulation is in `f64` whatever the element type, so wide channel counts
/// do not lose precision in `f32`. Positions where every channel holds the
/// same value return that value exactly (automatic for `f32`, whose `f64` sum
/// is exact; checked explicitly for `f64`).
pub fn mean_over_channels<X: ChannelAxis>(x: &X) -> X {
    let (outer, channels, inner) = x.channel_layout();
    let raw = x.raw();
    if channels == 1 {
        return x.with_channels(1, raw.to_vec());
    }
    let check_uniform = X::Elem::DTYPE == DType::F64;
    let count = channels as f64;
    let mut out = vec![X::Elem::default(); outer * inner];
    let mut acc = [0.0f64; MEAN_TILE];
    let mut uniform = [true; MEAN_TILE];
    for b in 0..outer {
        let block = &raw[b * channels * inner..(b + 1) * channels * inner];
        let mut start = 0;
        while start < inner {
            let width = MEAN_TILE.min(inner - start);
            let acc = &mut acc[..width];
            let uniform = &mut uniform[..width];
            let first = &block[start..start + width];
            acc.iter_mut().zip(first).for_each(|(a, &v)| *a = v.as_f64());
            uniform.fill(true);
            for d in 1..channels {
                let row = &block[d * inner + start..d * inner + start + width];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v.as_f64();
                }
                if check_uniform {
                    for ((u, &v), &f) in uniform.iter_mut().zip(row).zip(first) {
                        *u &= v == f;
                    }
                }
            }
            let dst = &mut out[b * inner + start..b * inner + start + width];
            for (i, o) in dst.iter_mut().enumerate() {
                *o = if check_uniform && uniform[i] { first[i] } else { X::Elem::of(acc[i] / count) };
            }
            start += width;
        }
    }
    x.with_channels(1, out)
}

/// Replicates a single-channel tensor `target` times along the channel axis.
pub fn broadcast_channels<X: ChannelAxis>(x: &X, target: usize) -> Result<X> {
    let (outer, channels, inner) = x.channel_layout();
    if channels != 1 {
        return Err(Error::shape(format!(
            "broadcast_channels needs a single-channel input, got {channels} channels"
        )));
    }
    if target == 0 {
        return Err(Error::shape("broadcast target channel count must be >= 1"));
    }
    let raw = x.raw();
    let mut out = Vec::with_capacity(outer * target * inner);
    for b in 0..outer {
        let row = &raw[b * inner..(b + 1) * inner];
        for _ in 0..target {
            out.extend_from_slice(row);
        }
    }
    Ok(x.with_channels(target, out))
}
