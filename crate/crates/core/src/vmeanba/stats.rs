use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor3};

/// Cross-channel statistics at one sequence position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Mean over batch and channels.
    pub mean: f64,
    /// Unbiased variance across channels (0 when `D = 1`), averaged over batch.
    pub variance: f64,
    /// `max_b max_{d,d'} |y[b,d,l] − y[b,d',l]|`.
    pub max_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub per_step: Vec<StepStats>,
    pub max_variance: f64,
    pub mean_variance: f64,
    pub median_variance: f64,
    pub p90_variance: f64,
    pub max_deviation: f64,
}

/// Linear interpolation between order statistics (`q` in `[0, 1]`).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// How consistent a layer output is across its channels, position by
/// position. Channel variance uses Welford's update in `f64`.
pub fn channel_stats<T: Real>(y: &Tensor3<T>) -> ChannelStats {
    let [batch, channels, len] = y.shape();
    let mut per_step = Vec::with_capacity(len);
    for l in 0..len {
        let mut total = 0.0;
        let mut var_sum = 0.0;
        let mut max_dev = 0.0f64;
        for b in 0..batch {
            let (mut mean, mut m2) = (0.0f64, 0.0f64);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for d in 0..channels {
                let v = y.get(b, d, l).as_f64();
                let delta = v - mean;
                mean += delta / (d + 1) as f64;
                m2 += delta * (v - mean);
                lo = lo.min(v);
                hi = hi.max(v);
                total += v;
            }
            if channels > 1 {
                var_sum += m2.max(0.0) / (channels - 1) as f64;
            }
            max_dev = max_dev.max(hi - lo);
        }
        per_step.push(StepStats {
            mean: total / (batch * channels) as f64,
            variance: var_sum / batch as f64,
            max_deviation: max_dev,
        });
    }
    let mut variances: Vec<f64> = per_step.iter().map(|s| s.variance).collect();
    variances.sort_by(f64::total_cmp);
    ChannelStats {
        max_variance: *variances.last().expect("len >= 1"),
        mean_variance: variances.iter().sum::<f64>() / len as f64,
        median_variance: quantile(&variances, 0.5),
        p90_variance: quantile(&variances, 0.9),
        max_deviation: per_step.iter().map(|s| s.max_deviation).fold(0.0, f64::max),
        per_step,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_channels_have_zero_spread() {
        let y = Tensor3::from_fn([3, 5, 7], |b, _, l| (b * 7 + l) as f64 * 0.1).unwrap();
        let s = channel_stats(&y);
        assert_eq!(s.max_variance, 0.0);
        assert_eq!(s.max_deviation, 0.0);
    }

    #[test]
    fn two_channel_hand_value() {
        let y = Tensor3::new(vec![1.0f64, 3.0], [1, 2, 1]).unwrap();
        let s = channel_stats(&y);
        assert_eq!(s.per_step[0].variance, 2.0);
        assert_eq!(s.per_step[0].max_deviation, 2.0);
        assert_eq!(s.per_step[0].mean, 2.0);
    }

    #[test]
    fn single_channel_variance_is_zero() {
        let y = Tensor3::from_fn([2, 1, 4], |_, _, l| l as f32).unwrap();
        assert!(channel_stats(&y).per_step.iter().all(|s| s.variance == 0.0));
    }

    #[test]
    fn matches_two_pass_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (bs, d, l) = (3, 11, 13);
        let y = Tensor3::from_fn([bs, d, l], |_, _, _| rng.gen_range(-5.0..5.0)).unwrap();
        let s = channel_stats(&y);
        for t in 0..l {
            let mut var = 0.0;
            for b in 0..bs {
                let m: f64 = (0..d).map(|c| y.get(b, c, t)).sum::<f64>() / d as f64;
                var += (0..d).map(|c| (y.get(b, c, t) - m).powi(2)).sum::<f64>() / (d - 1) as f64;
            }
            var /= bs as f64;
            assert!((s.per_step[t].variance - var).abs() < 1e-10);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert!((quantile(&v, 0.9) - 3.6).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }
}
