//! Rollout storage and generalized advantage estimation.

use hexnav::env::{Action, N_MANEUVERS};
use hexnav::Real;

use crate::error::{LearnError, Result};

/// How a stored transition ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEnd<T> {
    Continue,
    /// Absorbing: no value beyond this step.
    Terminal,
    /// Cut short; carries the value estimate of the state reached.
    Truncated(T),
}

/// Recursive GAE. `last_value` bootstraps a rollout whose final step is
/// `Continue`. Returns `(advantages, returns)` with `returns = adv + values`.
pub fn gae_advantages<T: Real>(
    rewards: &[T],
    values: &[T],
    ends: &[StepEnd<T>],
    last_value: T,
    gamma: T,
    lambda: T,
) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    assert!(
        values.len() == n && ends.len() == n,
        "rollout columns differ in length"
    );
    let mut adv = vec![T::zero(); n];
    let mut running = T::zero();
    for t in (0..n).rev() {
        let (next_value, carry) = match ends[t] {
            StepEnd::Continue => (if t + 1 < n { values[t + 1] } else { last_value }, T::one()),
            StepEnd::Terminal => (T::zero(), T::zero()),
            StepEnd::Truncated(v) => (v, T::zero()),
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    (adv, returns)
}

/// Zero mean, unit variance; constant input maps to zeros.
pub fn normalize_advantages<T: Real>(adv: &mut [T]) {
    if adv.is_empty() {
        return;
    }
    let n = T::from_usize_lossy(adv.len());
    let mean = adv.iter().copied().sum::<T>() / n;
    let var = adv.iter().map(|a| (*a - mean) * (*a - mean)).sum::<T>() / n;
    let std = var.sqrt() + T::lit(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Fixed-capacity on-policy buffer.
#[derive(Debug, Clone)]
pub struct RolloutBuffer<T> {
    capacity: usize,
    pub states: Vec<Vec<T>>,
    pub masks: Vec<[bool; N_MANEUVERS]>,
    pub actions: Vec<Action>,
    pub log_probs: Vec<T>,
    pub rewards: Vec<T>,
    pub values: Vec<T>,
    pub ends: Vec<StepEnd<T>>,
}

/// Advantage targets of a complete rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T> {
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T: Real> RolloutBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            states: Vec::with_capacity(capacity),
            masks: Vec::with_capacity(capacity),
            actions: Vec::with_capacity(capacity),
            log_probs: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            ends: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        state: Vec<T>,
        mask: [bool; N_MANEUVERS],
        action: Action,
        log_prob: T,
        reward: T,
        value: T,
        end: StepEnd<T>,
    ) {
        assert!(!self.is_full(), "rollout buffer is full");
        self.states.push(state);
        self.masks.push(mask);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.ends.push(end);
    }

    pub fn clear(&mut self) {
        self.states.clear();
        self.masks.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.ends.clear();
    }

    /// GAE over a full buffer with normalized advantages.
    pub fn targets(&self, last_value: T, gamma: T, lambda: T) -> Result<Targets<T>> {
        if !self.is_full() {
            return Err(LearnError::Config(format!(
                "rollout holds {} of {} steps",
                self.len(),
                self.capacity
            )));
        }
        let (mut advantages, returns) = gae_advantages(
            &self.rewards,
            &self.values,
            &self.ends,
            last_value,
            gamma,
            lambda,
        );
        normalize_advantages(&mut advantages);
        Ok(Targets {
            advantages,
            returns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use StepEnd::*;

    #[test]
    fn three_step_episode_hand_unrolled() {
        let r = [1.0f64, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let ends = [Continue, Continue, Terminal];
        let (g, l) = (0.9, 0.8);
        let (adv, ret) = gae_advantages(&r, &v, &ends, 99.0, g, l);
        let d2 = 2.0 - (-0.2);
        let d1 = -0.5 + g * -0.2 - 0.1;
        let d0 = 1.0 + g * 0.1 - 0.3;
        let a2 = d2;
        let a1 = d1 + g * l * a2;
        let a0 = d0 + g * l * a1;
        assert_eq!(adv, vec![a0, a1, a2]);
        assert_eq!(ret, vec![a0 + 0.3, a1 + 0.1, a2 - 0.2]);
    }

    #[test]
    fn lambda_one_is_monte_carlo() {
        let r = [1.0f64, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let g = 0.9;
        let (adv, _) = gae_advantages(&r, &v, &[Continue, Continue, Terminal], 0.0, g, 1.0);
        let mc = [1.0 + g * (-0.5) + g * g * 2.0, -0.5 + g * 2.0, 2.0];
        for t in 0..3 {
            assert!((adv[t] - (mc[t] - v[t])).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn lambda_zero_is_td(r in proptest::collection::vec(-5.0f64..5.0, 1..20), seed in 0u64..1000) {
            let n = r.len();
            let v: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 / 7.0 - 1.0).collect();
            let ends: Vec<_> = (0..n).map(|i| if (i as u64 + seed).is_multiple_of(5) { Terminal } else if (i as u64 + seed).is_multiple_of(7) { Truncated(0.4) } else { Continue }).collect();
            let (adv, _) = gae_advantages(&r, &v, &ends, 0.7, 0.95, 0.0);
            for t in 0..n {
                let next = match ends[t] { Continue => if t + 1 < n { v[t + 1] } else { 0.7 }, Terminal => 0.0, Truncated(x) => x };
                prop_assert!((adv[t] - (r[t] + 0.95 * next - v[t])).abs() < 1e-12);
            }
            let (adv0, _) = gae_advantages(&r, &v, &ends, 0.7, 0.0, 0.95);
            for t in 0..n {
                prop_assert!((adv0[t] - (r[t] - v[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncation_bootstraps_without_carry() {
        let (adv, _) = gae_advantages(
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[Truncated(5.0), Continue],
            2.0,
            0.5,
            1.0,
        );
        assert_eq!(adv, vec![1.0 + 0.5 * 5.0, 1.0 + 0.5 * 2.0]);
    }

    #[test]
    fn targets_need_a_full_buffer() {
        let mut b = RolloutBuffer::<f64>::new(2);
        b.push(
            vec![0.0],
            [true; 6],
            Action::new(0, 0),
            0.0,
            1.0,
            0.0,
            Continue,
        );
        assert!(b.targets(0.0, 0.99, 0.95).is_err());
        b.push(
            vec![0.0],
            [true; 6],
            Action::new(0, 0),
            0.0,
            3.0,
            0.0,
            Terminal,
        );
        let t = b.targets(0.0, 0.99, 0.95).unwrap();
        assert!(t.advantages.iter().sum::<f64>().abs() < 1e-12);
        let mut a = vec![4.0, 4.0];
        normalize_advantages(&mut a);
        assert_eq!(a, vec![0.0, 0.0]);
    }
}
