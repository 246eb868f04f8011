//! Two-dimensional selective scan: unfold a feature map into four 1D
//! sequences, scan each with its own parameters, fold back and sum.
//!
//! Directions follow the VMamba convention:
//!
//! | direction      | traversal                    |
//! |----------------|------------------------------|
//! | `RowForward`   | row-major                    |
//! | `ColForward`   | column-major                 |
//! | `RowBackward`  | row-major, reversed          |
//! | `ColBackward`  | column-major, reversed       |
//!
//! Merging sums the four folded maps, so identity processing yields `4·x`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ssm::{scan_parallel, scan_sequential, DiscreteInputs, SsmParams};
use crate::tensor::{Real, Tensor3};
use crate::vmeanba::{reduce_inputs, scan_vmeanba};
use crate::{Error, Result};

/// `(B, D, H, W)` feature map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    data: Vec<T>,
    shape: [usize; 4],
}

impl<T: Real> FeatureMap<T> {
    pub fn new(data: Vec<T>, shape: [usize; 4]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape(format!("feature map dims must be >= 1: {shape:?}")));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "feature map {shape:?} with {} elements",
                data.len()
            )));
        }
        Ok(Self { data, shape })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for d in 0..shape[1] {
                for i in 0..shape[2] {
                    for j in 0..shape[3] {
                        data.push(f(b, d, i, j));
                    }
                }
            }
        }
        Self::new(data, shape)
    }

    pub fn zeros(shape: [usize; 4]) -> Result<Self> {
        Self::new(vec![T::zero(); shape.iter().product()], shape)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, b: usize, d: usize, i: usize, j: usize) -> T {
        let [_, dd, h, w] = self.shape;
        self.data[((b * dd + d) * h + i) * w + j]
    }

    /// Views the map as `(B, D, H·W)` in row-major order.
    pub fn to_sequence(&self) -> Tensor3<T> {
        let [b, d, h, w] = self.shape;
        Tensor3::new(self.data.clone(), [b, d, h * w]).expect("valid map")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    RowForward,
    ColForward,
    RowBackward,
    ColBackward,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::RowForward,
        Direction::ColForward,
        Direction::RowBackward,
        Direction::ColBackward,
    ];

    /// Row-major position of the `k`-th element visited.
    #[inline]
    fn source(self, k: usize, h: usize, w: usize) -> usize {
        let col_major = |k: usize| (k % h) * w + k / h;
        match self {
            Direction::RowForward => k,
            Direction::ColForward => col_major(k),
            Direction::RowBackward => h * w - 1 - k,
            Direction::ColBackward => col_major(h * w - 1 - k),
        }
    }
}

/// The four unfolded sequences, indexed in [`Direction::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalSequences<T> {
    pub seqs: [Tensor3<T>; 4],
}

impl<T: Real> DirectionalSequences<T> {
    pub fn get(&self, dir: Direction) -> &Tensor3<T> {
        &self.seqs[dir as usize]
    }
}

pub fn cross_scan<T: Real>(x: &FeatureMap<T>) -> DirectionalSequences<T> {
    let [b, d, h, w] = x.shape();
    let hw = h * w;
    let seqs = Direction::ALL.map(|dir| {
        let mut out = Vec::with_capacity(b * d * hw);
        for plane in x.data.chunks_exact(hw) {
            out.extend((0..hw).map(|k| plane[dir.source(k, h, w)]));
        }
        Tensor3::new(out, [b, d, hw]).expect("valid map")
    });
    DirectionalSequences { seqs }
}

/// Folds each sequence back through its traversal and sums the four maps.
pub fn cross_merge<T: Real>(seqs: &[Tensor3<T>; 4], h: usize, w: usize) -> Result<FeatureMap<T>> {
    let [b, d, len] = seqs[0].shape();
    if len != h * w {
        return Err(Error::shape(format!("sequence length {len} != {h}x{w}")));
    }
    if let Some(bad) = seqs.iter().find(|s| s.shape() != [b, d, len]) {
        return Err(Error::shape(format!(
            "directional sequences disagree: {:?} vs {:?}",
            bad.shape(),
            [b, d, len]
        )));
    }
    let mut out = FeatureMap::zeros([b, d, h, w])?;
    for (dir, seq) in Direction::ALL.iter().zip(seqs) {
        for (plane, src) in out.data.chunks_exact_mut(len).zip(seq.data().chunks_exact(len)) {
            for (k, &v) in src.iter().enumerate() {
                let p = &mut plane[dir.source(k, h, w)];
                *p = *p + v;
            }
        }
    }
    Ok(out)
}

/// Scan evaluator used inside an SS2D block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockScan {
    Sequential,
    Parallel,
    /// Channel-mean reduced scan (parallel evaluator on the reduced channel).
    Vmeanba,
}

/// Runs one direction's selective scan on `(B, D, L)` input.
pub fn selective_scan<T: Real>(u: &Tensor3<T>, params: &SsmParams<T>, scan: BlockScan) -> Result<Tensor3<T>> {
    let inputs = DiscreteInputs::from_params(u, params)?;
    match scan {
        BlockScan::Sequential => scan_sequential(&inputs),
        BlockScan::Parallel => scan_parallel(&inputs),
        BlockScan::Vmeanba => scan_vmeanba(&reduce_inputs(&inputs)?, crate::ssm::ScanImpl::Parallel),
    }
}

/// cross-scan → per-direction selective scan → cross-merge.
pub fn ss2d_block<T: Real>(
    x: &FeatureMap<T>,
    params: &[SsmParams<T>; 4],
    scan: BlockScan,
) -> Result<FeatureMap<T>> {
    if let Some(p) = params.iter().find(|p| p.channels() != x.channels()) {
        return Err(Error::shape(format!(
            "map has {} channels, direction params {}",
            x.channels(),
            p.channels()
        )));
    }
    let seqs = cross_scan(x);
    let outs: Vec<Tensor3<T>> = seqs
        .seqs
        .par_iter()
        .zip(params.par_iter())
        .map(|(s, p)| selective_scan(s, p, scan))
        .collect::<Result<_>>()?;
    let outs: [Tensor3<T>; 4] = outs.try_into().expect("four directions");
    cross_merge(&outs, x.height(), x.width())
}
