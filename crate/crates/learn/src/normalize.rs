//! Running moments and return-based reward scaling.

use serde::{Deserialize, Serialize};

/// Parallel-update running mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningMeanStd {
    fn default() -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            count: 1e-4,
        }
    }
}

impl RunningMeanStd {
    pub fn update(&mut self, x: f64) {
        self.update_batch(x, 0.0, 1.0);
    }

    pub fn update_slice(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        self.update_batch(mean, var, n);
    }

    fn update_batch(&mut self, mean: f64, var: f64, n: f64) {
        let delta = mean - self.mean;
        let total = self.count + n;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self, eps: f64) -> f64 {
        (self.var + eps).sqrt()
    }
}

/// Divides rewards by the running std of the discounted return and clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    pub gamma: f64,
    pub clip: f64,
    pub eps: f64,
    ret: f64,
    rms: RunningMeanStd,
}

impl RewardNormalizer {
    pub fn new(gamma: f64, clip: f64) -> Self {
        Self {
            gamma,
            clip,
            eps: 1e-8,
            ret: 0.0,
            rms: RunningMeanStd::default(),
        }
    }

    pub fn normalize(&mut self, reward: f64, done: bool) -> f64 {
        self.ret = self.ret * self.gamma + reward;
        self.rms.update(self.ret);
        let out = (reward / self.rms.std(self.eps)).clamp(-self.clip, self.clip);
        if done {
            self.ret = 0.0;
        }
        out
    }

    pub fn stats(&self) -> RunningMeanStd {
        self.rms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass_moments() {
        let xs: Vec<f64> = (0..500)
            .map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0)
            .collect();
        let mut a = RunningMeanStd {
            mean: 0.0,
            var: 0.0,
            count: 0.0,
        };
        for chunk in xs.chunks(7) {
            a.update_slice(chunk);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((a.mean - mean).abs() < 1e-10 && (a.var - var).abs() < 1e-9);
    }

    #[test]
    fn normalized_rewards_clip() {
        let mut n = RewardNormalizer::new(0.99, 10.0);
        for _ in 0..100 {
            n.normalize(0.01, false);
        }
        assert_eq!(n.normalize(-1900.0, true), -10.0);
    }
}
