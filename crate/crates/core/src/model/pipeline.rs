use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{argmax, ToyModel};
use crate::ss2d::FeatureMap;
use crate::{Error, Result};

/// Samples per forward call when evaluating a dataset.
const EVAL_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    TeacherLabeled,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalDataset {
    /// One `(1, D, H, W)` map per sample.
    pub inputs: Vec<FeatureMap<f32>>,
    pub labels: Vec<usize>,
    pub provenance: Provenance,
}

impl EvalDataset {
    pub fn new(
        inputs: Vec<FeatureMap<f32>>,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidValue(format!("label {bad} >= {num_classes} classes")));
        }
        if let Some(x) = inputs.iter().find(|x| x.batch() != 1 || x.shape() != inputs[0].shape()) {
            return Err(Error::shape(format!(
                "samples must share a (1, D, H, W) shape, found {:?}",
                x.shape()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// The first `n` samples (all of them if `n` is larger).
    pub fn subsample(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = n.min(self.len());
        Ok(Self {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            provenance: self.provenance,
        })
    }

    /// Concatenates samples `range` into one batch.
    fn batch(&self, range: std::ops::Range<usize>) -> FeatureMap<f32> {
        let [_, d, h, w] = self.inputs[0].shape();
        let data: Vec<f32> = self.inputs[range.clone()]
            .iter()
            .flat_map(|x| x.data().iter().copied())
            .collect();
        FeatureMap::new(data, [range.len(), d, h, w]).expect("uniform samples")
    }
}

fn predictions(model: &ToyModel, plan: Option<&LayerPlan>, data: &EvalDataset) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(data.len());
    for start in (0..data.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(data.len());
        let logits = model.forward(&data.batch(start..end), plan)?;
        preds.extend(logits.iter().map(|l| argmax(l)));
    }
    Ok(preds)
}

/// Random inputs labelled by the unplanned model's own predictions, so the
/// original model scores exactly 1.0 on them.
pub fn make_teacher_dataset(model: &ToyModel, seed: u64, count: usize) -> Result<EvalDataset> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let cfg = &model.config;
    let shape = [1, cfg.base_channels, cfg.base_height, cfg.base_width];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<FeatureMap<f32>> = (0..count)
        .map(|_| FeatureMap::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0f32..1.0)))
        .collect::<Result<_>>()?;
    let unlabeled = EvalDataset {
        inputs,
        labels: vec![0; count],
        provenance: Provenance::TeacherLabeled,
    };
    let labels = predictions(model, None, &unlabeled)?;
    EvalDataset::new(unlabeled.inputs, labels, cfg.num_classes, Provenance::TeacherLabeled)
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(model: &ToyModel, plan: Option<&LayerPlan>, data: &EvalDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = predictions(model, plan, data)?;
    let correct = preds.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub layer: usize,
    /// Accuracy lost when only this layer uses the reduced scan.
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub scores: Vec<LayerScore>,
    /// The `K` lowest-impact layers, in selection order.
    pub selected: Vec<usize>,
}

impl LayerPlan {
    /// A plan selecting exactly `layers`, without scores.
    pub fn only(layers: impl IntoIterator<Item = usize>) -> Self {
        Self {
            scores: Vec::new(),
            selected: layers.into_iter().collect(),
        }
    }
}

/// `S_layer = Acc(original) − Acc(reduced scan on that layer alone)`, each
/// layer scored independently against the unmodified model.
pub fn layer_impact_scores(model: &ToyModel, data: &EvalDataset) -> Result<Vec<LayerScore>> {
    let base = accuracy(model, None, data)?;
    (0..model.num_layers())
        .into_par_iter()
        .map(|layer| {
            let acc = accuracy(model, Some(&LayerPlan::only([layer])), data)?;
            Ok(LayerScore {
                layer,
                score: base - acc,
            })
        })
        .collect()
}

/// Stable ascending sort by `(score, layer)`, then the first `k`.
pub fn select_layers(scores: &[LayerScore], k: usize) -> Result<LayerPlan> {
    if k > scores.len() {
        return Err(Error::InvalidValue(format!(
            "K = {k} exceeds the {} scored layers",
            scores.len()
        )));
    }
    let mut order = scores.to_vec();
    order.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.layer.cmp(&b.layer)));
    Ok(LayerPlan {
        scores: scores.to_vec(),
        selected: order[..k].iter().map(|s| s.layer).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub selected: Vec<usize>,
    pub accuracy: f64,
    /// Wall time of the planned forward passes over the whole dataset.
    pub wall_time_ns: u64,
}

/// Scores layers once, then for each `K` selects, evaluates and times.
pub fn k_sweep(model: &ToyModel, data: &EvalDataset, k_values: &[usize]) -> Result<Vec<KSweepRow>> {
    let scores = layer_impact_scores(model, data)?;
    k_values
        .iter()
        .map(|&k| {
            let plan = select_layers(&scores, k)?;
            let start = Instant::now();
            let acc = accuracy(model, Some(&plan), data)?;
            let elapsed = start.elapsed().as_nanos().max(1) as u64;
            Ok(KSweepRow {
                k,
                selected: plan.selected,
                accuracy: acc,
                wall_time_ns: elapsed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_toy_model, ToyConfig};

    fn small_model() -> ToyModel {
        build_toy_model(
            3,
            &ToyConfig {
                depths: vec![2, 1],
                base_channels: 4,
                base_height: 4,
                base_width: 4,
                state: 2,
                num_classes: 4,
            },
        )
        .unwrap()
    }

    fn scores(v: &[f64]) -> Vec<LayerScore> {
        v.iter().enumerate().map(|(layer, &score)| LayerScore { layer, score }).collect()
    }

    #[test]
    fn select_by_score() {
        let p = select_layers(&scores(&[0.02, 0.0, 0.05]), 2).unwrap();
        assert_eq!(p.selected, vec![1, 0]);
        assert!(select_layers(&scores(&[0.02, 0.0, 0.05]), 0).unwrap().selected.is_empty());
        assert_eq!(select_layers(&scores(&[0.02, 0.0, 0.05]), 3).unwrap().selected, vec![1, 0, 2]);
        assert!(select_layers(&scores(&[0.1]), 2).is_err());
    }

    #[test]
    fn ties_by_layer_index() {
        let p = select_layers(&scores(&[0.1, 0.0, 0.1, 0.0]), 4).unwrap();
        assert_eq!(p.selected, vec![1, 3, 0, 2]);
    }

    #[test]
    fn teacher_set_properties() {
        let m = small_model();
        let d = make_teacher_dataset(&m, 9, 12).unwrap();
        assert_eq!(d, make_teacher_dataset(&m, 9, 12).unwrap());
        assert_eq!(accuracy(&m, None, &d).unwrap(), 1.0);
        assert_eq!(accuracy(&m, Some(&LayerPlan::default()), &d).unwrap(), 1.0);
        let single = make_teacher_dataset(&m, 9, 1).unwrap();
        assert_eq!(single.len(), 1);
        let s = layer_impact_scores(&m, &single).unwrap();
        assert!(s.iter().all(|s| (0.0..=1.0).contains(&s.score)));
        assert!(make_teacher_dataset(&m, 9, 0).is_err());
    }

    #[test]
    fn wrong_labels_score_zero() {
        let m = small_model();
        let mut d = make_teacher_dataset(&m, 1, 6).unwrap();
        for l in &mut d.labels {
            *l = (*l + 1) % 4;
        }
        assert_eq!(accuracy(&m, None, &d).unwrap(), 0.0);
    }

    #[test]
    fn one_induced_miss_in_three() {
        let m = small_model();
        let mut d = make_teacher_dataset(&m, 2, 3).unwrap();
        d.labels[1] = (d.labels[1] + 1) % 4;
        assert!((accuracy(&m, None, &d).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dataset_validation() {
        let x = FeatureMap::zeros([1, 4, 4, 4]).unwrap();
        assert!(matches!(
            EvalDataset::new(vec![], vec![], 3, Provenance::External),
            Err(Error::EmptyDataset)
        ));
        assert!(EvalDataset::new(vec![x.clone()], vec![3], 3, Provenance::External).is_err());
        assert!(EvalDataset::new(vec![x.clone()], vec![2], 3, Provenance::External).is_ok());
        let two = FeatureMap::zeros([2, 4, 4, 4]).unwrap();
        assert!(EvalDataset::new(vec![two], vec![0], 3, Provenance::External).is_err());
    }

    #[test]
    fn sweep_rows() {
        let m = small_model();
        let d = make_teacher_dataset(&m, 4, 8).unwrap();
        let rows = k_sweep(&m, &d, &[0, 1, 2, 3]).unwrap();
        assert_eq!(rows[0].accuracy, 1.0);
        for w in rows.windows(2) {
            assert!(w[1].selected.starts_with(&w[0].selected));
        }
        assert!(rows.iter().all(|r| r.wall_time_ns > 0));
        assert!(k_sweep(&m, &d, &[4]).is_err());
    }
}
