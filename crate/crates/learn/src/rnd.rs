//! Random network distillation bonus.

use hexnav::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::mlp::Mlp;
use crate::normalize::RunningMeanStd;

pub const RND_HIDDEN: usize = 64;
pub const RND_OUTPUT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RndPair<T> {
    target: Mlp<T>,
    predictor: Mlp<T>,
    optimizer: Adam<T>,
    scale: RunningMeanStd,
    pub beta: f64,
}

impl<T: Real> RndPair<T> {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, beta: f64, rng: &mut R) -> Self {
        let sizes = [state_dim, RND_HIDDEN, RND_OUTPUT];
        let target = Mlp::new(&sizes, &[1.0, 1.0], rng);
        let predictor = Mlp::new(&sizes, &[1.0, 1.0], rng);
        let optimizer = Adam::new(predictor.n_params());
        Self {
            target,
            predictor,
            optimizer,
            scale: RunningMeanStd::default(),
            beta,
        }
    }

    /// Pair whose predictor starts as an exact copy of the target.
    pub fn with_copied_predictor(mut self) -> Self {
        self.predictor = self.target.clone();
        self
    }

    pub fn target(&self) -> &Mlp<T> {
        &self.target
    }

    pub fn predictor(&self) -> &Mlp<T> {
        &self.predictor
    }

    /// `|f_hat(s) - f(s)|^2`.
    pub fn prediction_error(&self, state: &[T]) -> T {
        let f = self.target.forward(state);
        let g = self.predictor.forward(state);
        f.iter().zip(&g).map(|(a, b)| (*b - *a) * (*b - *a)).sum()
    }

    /// Prediction error over the running std of observed errors.
    pub fn bonus(&self, state: &[T]) -> f64 {
        self.prediction_error(state).to_f64_lossy() / self.scale.std(1e-8)
    }

    /// Records a raw error in the running scale.
    pub fn observe(&mut self, raw_error: f64) {
        self.scale.update(raw_error);
    }

    /// One optimizer step on the mean squared error over `states`; returns the loss.
    pub fn train<S: AsRef<[T]>>(&mut self, states: &[S], lr: T) -> T {
        if states.is_empty() {
            return T::zero();
        }
        let n = T::from_usize_lossy(states.len() * RND_OUTPUT);
        let mut grad = vec![T::zero(); self.predictor.n_params()];
        let mut loss = T::zero();
        let two = T::lit(2.0);
        for s in states {
            let s = s.as_ref();
            let f = self.target.forward(s);
            let acts = self.predictor.forward_cached(s);
            let g_out: Vec<T> = acts
                .output()
                .iter()
                .zip(&f)
                .map(|(p, t)| two * (*p - *t) / n)
                .collect();
            loss += acts
                .output()
                .iter()
                .zip(&f)
                .map(|(p, t)| (*p - *t) * (*p - *t))
                .sum::<T>()
                / n;
            self.predictor.backward(&acts, &g_out, &mut grad);
        }
        self.optimizer.step(self.predictor.params_mut(), &grad, lr);
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn copied_predictor_gives_zero_bonus() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pair: RndPair<f64> = RndPair::new(8, 1.0, &mut rng).with_copied_predictor();
        assert_eq!(pair.bonus(&[0.3; 8]), 0.0);
    }

    #[test]
    fn training_drives_bonus_down_and_freezes_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pair: RndPair<f64> = RndPair::new(8, 1.0, &mut rng);
        let target = pair.target().clone();
        let s = vec![0.2, 0.9, 0.4, 0.5, 0.1, 0.7, 0.3, 0.8];
        let first = pair.prediction_error(&s);
        let mut block = Vec::new();
        for _ in 0..10 {
            let mut acc = 0.0;
            for _ in 0..100 {
                pair.train(&[&s[..]], 1e-3);
                acc += pair.prediction_error(&s);
            }
            block.push(acc / 100.0);
        }
        assert!(block.windows(2).all(|w| w[1] <= w[0]), "{block:?}");
        assert!(*block.last().unwrap() < 1e-3 * first);
        assert!(pair.prediction_error(&s) >= 0.0);
        assert_eq!(pair.target(), &target);
    }
}
