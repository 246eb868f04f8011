//! A small stacked SS2D backbone with a linear classification head, and the
//! layer-selection / pruning pipeline built on it.
//!
//! Stage `s` runs at `base_channels · 2^s` channels on a
//! `(H / 2^s) × (W / 2^s)` grid; between stages a 2×2 patch merge halves
//! each spatial side and doubles the channel count. Each block is
//!
//! ```text
//! x ← x + ½ · ss2d(rms_norm(x))
//! ```
//!
//! with the channel RMS norm parameter-free. Blocks are numbered in
//! flattened order across stages; that number is the layer index used by
//! [`LayerPlan`].

mod pipeline;
mod prune;

pub use pipeline::{
    accuracy, k_sweep, layer_impact_scores, make_teacher_dataset, select_layers, EvalDataset,
    KSweepRow, LayerPlan, LayerScore, Provenance,
};
pub use prune::{prune_l1, PruneTarget};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{find, NamedTensor};
use crate::ss2d::{ss2d_block, BlockScan, FeatureMap};
use crate::ssm::{SsmParams, StateMatrix};
use crate::{Error, Result};

const RESIDUAL_SCALE: f32 = 0.5;
const NORM_EPS: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub depths: Vec<usize>,
    pub base_channels: usize,
    pub base_height: usize,
    pub base_width: usize,
    pub state: usize,
    pub num_classes: usize,
}

impl ToyConfig {
    /// Stage depths `[2, 2, 8, 2]` at desk scale: 8 channels on a 16×16 grid.
    pub fn tiny() -> Self {
        Self {
            depths: vec![2, 2, 8, 2],
            base_channels: 8,
            base_height: 16,
            base_width: 16,
            state: 4,
            num_classes: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.depths.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.depths.contains(&0) {
            return bad(format!("stage depths must be positive: {:?}", self.depths));
        }
        if self.base_channels == 0 || self.state == 0 || self.num_classes == 0 {
            return bad("channels, state and class count must be positive".into());
        }
        let factor = 1usize << (self.depths.len() - 1);
        if self.base_height == 0
            || self.base_width == 0
            || !self.base_height.is_multiple_of(factor)
            || !self.base_width.is_multiple_of(factor)
        {
            return bad(format!(
                "{}x{} grid is not divisible by {factor} for {} stages",
                self.base_height,
                self.base_width,
                self.depths.len()
            ));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.depths.iter().sum()
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn final_channels(&self) -> usize {
        self.stage_channels(self.depths.len() - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub params: [SsmParams<f32>; 4],
    /// Baked-in channel-mean scan for this block, independent of any plan.
    pub vmeanba: bool,
}

/// Linear map from a 2×2 patch (`4·D` features) to `2·D` channels,
/// row-major `2D × 4D`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMerge {
    pub weight: Vec<f32>,
    pub in_channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    /// Present on every stage but the first.
    pub merge: Option<PatchMerge>,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// `num_classes × features`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub config: ToyConfig,
    pub stages: Vec<Stage>,
    pub head: Head,
}

fn uniform(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale) as f32).collect()
}

pub fn build_toy_model(seed: u64, config: &ToyConfig) -> Result<ToyModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::with_capacity(config.depths.len());
    for (s, &depth) in config.depths.iter().enumerate() {
        let channels = config.stage_channels(s);
        let merge = (s > 0).then(|| {
            let in_channels = channels / 2;
            PatchMerge {
                weight: uniform(&mut rng, channels * 4 * in_channels, 1.0 / (4.0 * in_channels as f64).sqrt()),
                in_channels,
            }
        });
        let blocks = (0..depth)
            .map(|_| {
                let mut dir = || SsmParams::random(channels, config.state, &mut rng);
                Ok(Block {
                    params: [dir()?, dir()?, dir()?, dir()?],
                    vmeanba: false,
                })
            })
            .collect::<Result<_>>()?;
        stages.push(Stage { merge, blocks });
    }
    let features = config.final_channels();
    let head = Head {
        weight: uniform(&mut rng, config.num_classes * features, 1.0 / (features as f64).sqrt()),
        bias: uniform(&mut rng, config.num_classes, 0.1),
    };
    Ok(ToyModel {
        config: config.clone(),
        stages,
        head,
    })
}

fn rms_norm(x: &FeatureMap<f32>) -> FeatureMap<f32> {
    let [b, d, h, w] = x.shape();
    let hw = h * w;
    let mut out = x.clone();
    for bi in 0..b {
        let base = bi * d * hw;
        for p in 0..hw {
            let ms: f32 = (0..d).map(|c| x.data()[base + c * hw + p].powi(2)).sum::<f32>() / d as f32;
            let inv = 1.0 / (ms + NORM_EPS).sqrt();
            for c in 0..d {
                out.data_mut()[base + c * hw + p] *= inv;
            }
        }
    }
    out
}

fn patch_merge(x: &FeatureMap<f32>, merge: &PatchMerge) -> Result<FeatureMap<f32>> {
    let [b, d, h, w] = x.shape();
    let (oh, ow, od) = (h / 2, w / 2, 2 * d);
    let mut out = FeatureMap::zeros([b, od, oh, ow])?;
    let mut patch = vec![0.0f32; 4 * d];
    for bi in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for (q, (di, dj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                    for c in 0..d {
                        patch[q * d + c] = x.get(bi, c, 2 * i + di, 2 * j + dj);
                    }
                }
                for o in 0..od {
                    let row = &merge.weight[o * 4 * d..(o + 1) * 4 * d];
                    let v: f32 = row.iter().zip(&patch).map(|(a, b)| a * b).sum();
                    out.data_mut()[((bi * od + o) * oh + i) * ow + j] = v;
                }
            }
        }
    }
    Ok(out)
}

impl ToyModel {
    pub fn num_layers(&self) -> usize {
        self.config.num_layers()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.stages.iter().flat_map(|s| s.blocks.iter())
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Block> {
        self.stages.iter_mut().flat_map(|s| s.blocks.iter_mut())
    }

    /// A copy with the plan's layers permanently switched to the reduced scan.
    pub fn with_plan(&self, plan: &LayerPlan) -> Result<ToyModel> {
        let mut m = self.clone();
        let n = m.num_layers();
        if let Some(&bad) = plan.selected.iter().find(|&&l| l >= n) {
            return Err(Error::Config(format!("layer {bad} out of range for {n} layers")));
        }
        for (i, block) in m.blocks_mut().enumerate() {
            block.vmeanba |= plan.selected.contains(&i);
        }
        Ok(m)
    }

    /// Final-stage features pooled over space, `(B, features)`.
    pub fn features(&self, x: &FeatureMap<f32>, plan: Option<&LayerPlan>) -> Result<Vec<Vec<f32>>> {
        let cfg = &self.config;
        let [_, d, h, w] = x.shape();
        if (d, h, w) != (cfg.base_channels, cfg.base_height, cfg.base_width) {
            return Err(Error::shape(format!(
                "model expects ({}, {}, {}) input, got ({d}, {h}, {w})",
                cfg.base_channels, cfg.base_height, cfg.base_width
            )));
        }
        if let Some(p) = plan {
            if let Some(&bad) = p.selected.iter().find(|&&l| l >= self.num_layers()) {
                return Err(Error::Config(format!("plan selects missing layer {bad}")));
            }
        }
        let mut x = x.clone();
        let mut layer = 0;
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                x = patch_merge(&x, merge)?;
            }
            for block in &stage.blocks {
                let reduced = block.vmeanba || plan.is_some_and(|p| p.selected.contains(&layer));
                let scan = if reduced { BlockScan::Vmeanba } else { BlockScan::Parallel };
                let y = ss2d_block(&rms_norm(&x), &block.params, scan)?;
                for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
                    *a += RESIDUAL_SCALE * b;
                }
                layer += 1;
            }
        }
        let [b, d, h, w] = x.shape();
        let hw = (h * w) as f32;
        Ok((0..b)
            .map(|bi| {
                (0..d)
                    .map(|c| {
                        let start = (bi * d + c) * h * w;
                        x.data()[start..start + h * w].iter().sum::<f32>() / hw
                    })
                    .collect()
            })
            .collect())
    }

    /// Class logits `(B, num_classes)`. Layers in `plan.selected` (and any
    /// baked-in reduced blocks) use the channel-mean scan; the rest use the
    /// parallel scan.
    pub fn forward(&self, x: &FeatureMap<f32>, plan: Option<&LayerPlan>) -> Result<Vec<Vec<f32>>> {
        let feats = self.features(x, plan)?;
        let f = self.config.final_channels();
        Ok(feats
            .iter()
            .map(|feat| {
                (0..self.config.num_classes)
                    .map(|k| {
                        let row = &self.head.weight[k * f..(k + 1) * f];
                        self.head.bias[k] + row.iter().zip(feat).map(|(a, b)| a * b).sum::<f32>()
                    })
                    .collect()
            })
            .collect())
    }

    pub fn to_archive(&self) -> Vec<NamedTensor> {
        let cfg = &self.config;
        let mut meta = vec![
            cfg.base_channels as f64,
            cfg.base_height as f64,
            cfg.base_width as f64,
            cfg.state as f64,
            cfg.num_classes as f64,
        ];
        meta.extend(cfg.depths.iter().map(|&d| d as f64));
        let mut out = vec![NamedTensor::from_vec("config", vec![meta.len()], meta).expect("sized")];
        let push = |out: &mut Vec<NamedTensor>, name: String, v: &[f32]| {
            out.push(NamedTensor::from_vec(name, vec![v.len()], v.to_vec()).expect("sized"));
        };
        for (s, stage) in self.stages.iter().enumerate() {
            if let Some(m) = &stage.merge {
                push(&mut out, format!("stage{s}.merge.weight"), &m.weight);
            }
            for (j, block) in stage.blocks.iter().enumerate() {
                let prefix = format!("stage{s}.block{j}");
                push(&mut out, format!("{prefix}.vmeanba"), &[block.vmeanba as u8 as f32]);
                for (k, p) in block.params.iter().enumerate() {
                    push(&mut out, format!("{prefix}.dir{k}.a"), p.a().data());
                    push(&mut out, format!("{prefix}.dir{k}.b_proj"), p.b_proj());
                    push(&mut out, format!("{prefix}.dir{k}.c_proj"), p.c_proj());
                    push(&mut out, format!("{prefix}.dir{k}.delta_proj"), p.delta_proj());
                    push(&mut out, format!("{prefix}.dir{k}.delta_bias"), p.delta_bias());
                    push(&mut out, format!("{prefix}.dir{k}.skip_gain"), p.skip_gain());
                }
            }
        }
        push(&mut out, "head.weight".into(), &self.head.weight);
        push(&mut out, "head.bias".into(), &self.head.bias);
        out
    }

    pub fn from_archive(tensors: &[NamedTensor]) -> Result<ToyModel> {
        let get = |name: &str| -> Result<Vec<f32>> {
            find(tensors, name)
                .map(|t| t.values::<f32>())
                .ok_or_else(|| Error::Config(format!("archive is missing `{name}`")))
        };
        let meta = find(tensors, "config")
            .ok_or_else(|| Error::Config("archive is missing `config`".into()))?
            .values::<f64>();
        if meta.len() < 6 {
            return Err(Error::Config("config entry too short".into()));
        }
        let config = ToyConfig {
            base_channels: meta[0] as usize,
            base_height: meta[1] as usize,
            base_width: meta[2] as usize,
            state: meta[3] as usize,
            num_classes: meta[4] as usize,
            depths: meta[5..].iter().map(|&d| d as usize).collect(),
        };
        config.validate()?;
        let mut stages = Vec::new();
        for (s, &depth) in config.depths.iter().enumerate() {
            let channels = config.stage_channels(s);
            let merge = if s > 0 {
                let weight = get(&format!("stage{s}.merge.weight"))?;
                if weight.len() != channels * 2 * channels {
                    return Err(Error::shape(format!("stage{s}.merge.weight length")));
                }
                Some(PatchMerge {
                    weight,
                    in_channels: channels / 2,
                })
            } else {
                None
            };
            let mut blocks = Vec::with_capacity(depth);
            for j in 0..depth {
                let prefix = format!("stage{s}.block{j}");
                let dir = |k: usize| -> Result<SsmParams<f32>> {
                    let g = |f: &str| get(&format!("{prefix}.dir{k}.{f}"));
                    SsmParams::new(
                        StateMatrix::new(g("a")?, channels, config.state)?,
                        g("b_proj")?,
                        g("c_proj")?,
                        g("delta_proj")?,
                        g("delta_bias")?,
                        g("skip_gain")?,
                    )
                };
                blocks.push(Block {
                    params: [dir(0)?, dir(1)?, dir(2)?, dir(3)?],
                    vmeanba: get(&format!("{prefix}.vmeanba"))?.first().is_some_and(|&v| v != 0.0),
                });
            }
            stages.push(Stage { merge, blocks });
        }
        let head = Head {
            weight: get("head.weight")?,
            bias: get("head.bias")?,
        };
        if head.weight.len() != config.num_classes * config.final_channels()
            || head.bias.len() != config.num_classes
        {
            return Err(Error::shape("head dimensions"));
        }
        Ok(ToyModel {
            config,
            stages,
            head,
        })
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig {
            depths: vec![1, 2],
            base_channels: 4,
            base_height: 4,
            base_width: 4,
            state: 2,
            num_classes: 3,
        }
    }

    #[test]
    fn tiny_has_fourteen_layers() {
        assert_eq!(ToyConfig::tiny().num_layers(), 14);
        let m = build_toy_model(0, &ToyConfig::tiny()).unwrap();
        assert_eq!(m.blocks().count(), 14);
        assert_eq!(m.config.final_channels(), 64);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_toy_model(42, &small()).unwrap();
        let b = build_toy_model(42, &small()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_toy_model(43, &small()).unwrap());
        assert!(a.blocks().all(|b| b.params.iter().all(|p| p.a().data().iter().all(|&v| v < 0.0))));
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.depths = vec![];
        assert!(matches!(build_toy_model(0, &c), Err(Error::Config(_))));
        let mut c = small();
        c.base_height = 3;
        assert!(build_toy_model(0, &c).is_err());
        let mut c = small();
        c.depths = vec![1, 0];
        assert!(build_toy_model(0, &c).is_err());
    }

    #[test]
    fn single_block_smoke() {
        let cfg = ToyConfig {
            depths: vec![1],
            base_channels: 4,
            base_height: 2,
            base_width: 2,
            state: 2,
            num_classes: 3,
        };
        let m = build_toy_model(1, &cfg).unwrap();
        let x = FeatureMap::from_fn([2, 4, 2, 2], |b, d, i, j| (b + d + i + j) as f32 * 0.1).unwrap();
        let logits = m.forward(&x, None).unwrap();
        assert_eq!(logits.len(), 2);
        assert!(logits.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let m = build_toy_model(1, &small()).unwrap();
        let x = FeatureMap::zeros([1, 4, 8, 4]).unwrap();
        assert!(matches!(m.forward(&x, None), Err(Error::Shape(_))));
    }

    #[test]
    fn archive_round_trip() {
        let mut m = build_toy_model(5, &small()).unwrap();
        m.stages[1].blocks[0].vmeanba = true;
        let back = ToyModel::from_archive(&m.to_archive()).unwrap();
        assert_eq!(back, m);
        let bytes = crate::archive::encode(&m.to_archive()).unwrap();
        let decoded = crate::archive::decode(&bytes).unwrap();
        assert_eq!(ToyModel::from_archive(&decoded).unwrap(), m);
    }

    #[test]
    fn empty_plan_is_bitwise_original() {
        let m = build_toy_model(2, &small()).unwrap();
        let x = FeatureMap::from_fn([3, 4, 4, 4], |b, d, i, j| ((b * 7 + d * 5 + i * 3 + j) % 11) as f32 * 0.1 - 0.5).unwrap();
        assert_eq!(m.forward(&x, Some(&LayerPlan::default())).unwrap(), m.forward(&x, None).unwrap());
    }

    #[test]
    fn channel_constant_layer_is_unaffected() {
        let cfg = ToyConfig {
            depths: vec![1],
            base_channels: 4,
            base_height: 2,
            base_width: 2,
            state: 3,
            num_classes: 3,
        };
        let mut m = build_toy_model(6, &cfg).unwrap();
        // identical A rows and step-size parameters on every channel
        for p in &mut m.stages[0].blocks[0].params {
            *p = SsmParams::new(
                StateMatrix::s4d_real(4, 3).unwrap(),
                p.b_proj().to_vec(),
                p.c_proj().to_vec(),
                vec![0.7; 4],
                vec![-2.0; 4],
                p.skip_gain().to_vec(),
            )
            .unwrap();
        }
        let x = FeatureMap::from_fn([2, 4, 2, 2], |b, _, i, j| (b + 2 * i + j) as f32 * 0.3 - 0.4).unwrap();
        let base = m.forward(&x, None).unwrap();
        let planned = m.forward(&x, Some(&LayerPlan::only([0]))).unwrap();
        for (a, b) in base.iter().flatten().zip(planned.iter().flatten()) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5, -2.0]), 1);
    }
}
