use serde::{Deserialize, Serialize};

use crate::model::ToyModel;
use crate::{Error, Result};

/// Which weight matrices l1 pruning touches.
///
/// The toy backbone has no convolutions, so the choice is between the
/// classifier head alone and every projection matrix (head, patch merges and
/// the `B`, `C` and step-size projections of every block).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneTarget {
    Linear,
    AllProjections,
}

/// Number of entries to zero: `⌊ratio · n⌋`, with a small tolerance so that
/// products such as `0.29 · 100` land on the intended integer.
pub fn prune_count(ratio: f64, n: usize) -> usize {
    (((ratio * n as f64) + 1e-9).floor() as usize).min(n)
}

/// Zeros the `⌊ratio·n⌋` smallest-magnitude entries, ties by flat index.
pub(crate) fn prune_matrix(w: &mut [f32], ratio: f64) {
    let k = prune_count(ratio, w.len());
    if k == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    for &i in &order[..k] {
        w[i] = 0.0;
    }
}

/// Unstructured magnitude pruning, applied per matrix. Returns a new model.
pub fn prune_l1(model: &ToyModel, target: PruneTarget, ratio: f64) -> Result<ToyModel> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidValue(format!("pruning ratio {ratio} outside [0, 1]")));
    }
    let mut out = model.clone();
    prune_matrix(&mut out.head.weight, ratio);
    if target == PruneTarget::AllProjections {
        for stage in &mut out.stages {
            if let Some(m) = &mut stage.merge {
                prune_matrix(&mut m.weight, ratio);
            }
            for block in &mut stage.blocks {
                for p in &mut block.params {
                    for (_, w) in p.projections_mut() {
                        prune_matrix(w, ratio);
                    }
                }
            }
        }
    }
    Ok(out)
}
