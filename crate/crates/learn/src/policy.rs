//! Shared actor-critic network over the factorised (maneuver x speed)
//! action space, and the clipped-surrogate loss with its analytic gradient.

use hexnav::env::{masked_distribution, Action, N_MANEUVERS};
use hexnav::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};
use crate::mlp::{Activations, Mlp};

pub const DEFAULT_HIDDEN: usize = 64;

fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    masked_distribution(logits, &vec![true; logits.len()]).expect("non-empty logits")
}

/// `-sum p ln p` over the support of `p`.
pub fn entropy<T: Real>(p: &[T]) -> T {
    p.iter()
        .filter(|&&x| x > T::zero())
        .map(|&x| -x * x.ln())
        .sum()
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax<T: Real>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in p.iter().enumerate() {
        if *x > p[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical<T: Real, R: Rng + ?Sized>(p: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, x) in p.iter().enumerate() {
        let x = x.to_f64_lossy();
        if x > 0.0 {
            acc += x;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Network outputs for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput<T> {
    pub maneuver_logits: Vec<T>,
    pub speed_logits: Vec<T>,
    pub maneuver_probs: Vec<T>,
    pub speed_probs: Vec<T>,
    pub value: T,
}

impl<T: Real> PolicyOutput<T> {
    /// `ln p(m) + ln p(s)`.
    pub fn log_prob(&self, a: Action) -> T {
        self.maneuver_probs[a.maneuver].ln() + self.speed_probs[a.speed].ln()
    }

    pub fn prob(&self, a: Action) -> T {
        self.maneuver_probs[a.maneuver] * self.speed_probs[a.speed]
    }

    pub fn entropy(&self) -> T {
        entropy(&self.maneuver_probs) + entropy(&self.speed_probs)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        let m = sample_categorical(&self.maneuver_probs, rng);
        let s = sample_categorical(&self.speed_probs, rng);
        Action::new(m, s)
    }

    pub fn greedy(&self) -> Action {
        Action::new(argmax(&self.maneuver_probs), argmax(&self.speed_probs))
    }
}

/// Two tanh hidden layers feeding maneuver logits, speed logits and a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet<T> {
    mlp: Mlp<T>,
    n_speeds: usize,
}

impl<T: Real> PolicyNet<T> {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        hidden: usize,
        n_speeds: usize,
        rng: &mut R,
    ) -> Self {
        let out = N_MANEUVERS + n_speeds + 1;
        let mut mlp = Mlp::new(&[state_dim, hidden, hidden, out], &[1.0, 1.0, 1.0], rng);
        mlp.scale_output_rows(0..N_MANEUVERS + n_speeds, T::lit(0.01));
        Self { mlp, n_speeds }
    }

    pub fn from_mlp(mlp: Mlp<T>, n_speeds: usize) -> Result<Self> {
        if mlp.output_dim() != N_MANEUVERS + n_speeds + 1 {
            return Err(LearnError::Dimension {
                expected: N_MANEUVERS + n_speeds + 1,
                got: mlp.output_dim(),
            });
        }
        Ok(Self { mlp, n_speeds })
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn state_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn n_speeds(&self) -> usize {
        self.n_speeds
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    /// Zeroes the output layer's weights and biases.
    pub fn zero_output_layer(&mut self) {
        let rows = self.mlp.output_dim();
        self.mlp.scale_output_rows(0..rows, T::zero());
    }

    fn check_dim(&self, state: &[T]) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(LearnError::Dimension {
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        Ok(())
    }

    fn split(&self, out: &[T], mask: &[bool]) -> Result<PolicyOutput<T>> {
        let maneuver_logits = out[..N_MANEUVERS].to_vec();
        let speed_logits = out[N_MANEUVERS..N_MANEUVERS + self.n_speeds].to_vec();
        let maneuver_probs = masked_distribution(&maneuver_logits, mask)?;
        let speed_probs = softmax(&speed_logits);
        Ok(PolicyOutput {
            maneuver_logits,
            speed_logits,
            maneuver_probs,
            speed_probs,
            value: out[out.len() - 1],
        })
    }

    /// Maneuver distribution under `mask`, plain speed distribution, value.
    pub fn forward(&self, state: &[T], mask: &[bool]) -> Result<PolicyOutput<T>> {
        self.check_dim(state)?;
        let out = self.mlp.forward(state);
        self.split(&out, mask)
    }

    fn forward_cached(
        &self,
        state: &[T],
        mask: &[bool],
    ) -> Result<(PolicyOutput<T>, Activations<T>)> {
        self.check_dim(state)?;
        let acts = self.mlp.forward_cached(state);
        let out = self.split(acts.output(), mask)?;
        Ok((out, acts))
    }

    pub fn value(&self, state: &[T]) -> Result<T> {
        self.check_dim(state)?;
        Ok(*self.mlp.forward(state).last().expect("value output"))
    }
}

/// Coefficients of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub clip: T,
    pub ent_coef: T,
    pub vf_coef: T,
}

/// One training sample for the surrogate loss.
#[derive(Debug, Clone, Copy)]
pub struct LossSample<'a, T> {
    pub state: &'a [T],
    pub mask: &'a [bool],
    pub action: Action,
    pub old_log_prob: T,
    pub advantage: T,
    pub ret: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats<T> {
    pub total: T,
    pub policy: T,
    pub value: T,
    pub entropy: T,
    pub clip_fraction: T,
    pub approx_kl: T,
    pub mean_ratio: T,
}

/// Per-sample surrogate `min(r A, clip(r) A)` and its derivative in `r`.
pub fn clipped_surrogate<T: Real>(ratio: T, adv: T, clip: T) -> (T, T) {
    let clipped = ratio.max(T::one() - clip).min(T::one() + clip);
    let (u, c) = (ratio * adv, clipped * adv);
    if u <= c {
        (u, adv)
    } else {
        (c, T::zero())
    }
}

/// `d ln p_a / d z_j = 1[j = a] - p_j` and `d H / d z_j = -p_j (ln p_j + H)`
/// over the support.
fn head_grads<T: Real>(p: &[T], a: usize, d_logp: T, d_ent: T, out: &mut [T]) {
    let h = entropy(p);
    for (j, &pj) in p.iter().enumerate() {
        if pj > T::zero() {
            let ind = if j == a { T::one() } else { T::zero() };
            out[j] = d_logp * (ind - pj) + d_ent * (-pj * (pj.ln() + h));
        } else {
            out[j] = T::zero();
        }
    }
}

/// Mean loss `-surrogate + vf_coef (R - V)^2 - ent_coef H` over `samples`,
/// writing its gradient into `grad` (overwritten).
pub fn loss_and_grad<T: Real>(
    net: &PolicyNet<T>,
    samples: &[LossSample<'_, T>],
    cfg: &LossConfig<T>,
    grad: &mut [T],
) -> Result<LossStats<T>> {
    grad.iter_mut().for_each(|g| *g = T::zero());
    let n = T::from_usize_lossy(samples.len().max(1));
    let mut stats = LossStats::default();
    let mut g_out = vec![T::zero(); net.mlp.output_dim()];
    let two = T::lit(2.0);
    for s in samples {
        let (out, acts) = net.forward_cached(s.state, s.mask)?;
        let logp = out.log_prob(s.action);
        let ratio = (logp - s.old_log_prob).exp();
        let (surr, d_surr_d_ratio) = clipped_surrogate(ratio, s.advantage, cfg.clip);
        let err = out.value - s.ret;
        let ent = out.entropy();
        stats.policy -= surr / n;
        stats.value += err * err / n;
        stats.entropy += ent / n;
        stats.mean_ratio += ratio / n;
        if (ratio - T::one()).abs() > cfg.clip {
            stats.clip_fraction += T::one() / n;
        }
        stats.approx_kl += ((ratio - T::one()) - (logp - s.old_log_prob)) / n;

        // d loss / d logp and d loss / d H for this sample
        let d_logp = -d_surr_d_ratio * ratio / n;
        let d_ent = -cfg.ent_coef / n;
        let split = N_MANEUVERS + net.n_speeds;
        let (gm, rest) = g_out.split_at_mut(N_MANEUVERS);
        head_grads(&out.maneuver_probs, s.action.maneuver, d_logp, d_ent, gm);
        head_grads(
            &out.speed_probs,
            s.action.speed,
            d_logp,
            d_ent,
            &mut rest[..net.n_speeds],
        );
        g_out[split] = cfg.vf_coef * two * err / n;
        net.mlp.backward(&acts, &g_out, grad);
    }
    stats.total = stats.policy + cfg.vf_coef * stats.value - cfg.ent_coef * stats.entropy;
    if !stats.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(LearnError::NonFinite(format!("loss {}", stats.total)));
    }
    Ok(stats)
}

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm<T: Real>(grad: &mut [T], max_norm: T) -> T {
    let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
    if norm > max_norm && norm > T::zero() {
        let k = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ALL: [bool; 6] = [true; 6];

    #[test]
    fn zero_output_layer_is_uniform_over_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net: PolicyNet<f64> = PolicyNet::new(8, 16, 5, &mut rng);
        net.zero_output_layer();
        let mask = [true, false, true, false, false, true];
        let out = net.forward(&[0.5; 8], &mask).unwrap();
        for (p, m) in out.maneuver_probs.iter().zip(mask) {
            assert_eq!(*p, if m { 1.0 / 3.0 } else { 0.0 });
        }
        assert!(out.speed_probs.iter().all(|p| (*p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn single_valid_maneuver_has_zero_log_prob() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net: PolicyNet<f64> = PolicyNet::new(8, 16, 5, &mut rng);
        let out = net
            .forward(&[0.1; 8], &[false, false, false, true, false, false])
            .unwrap();
        assert_eq!(out.maneuver_probs[3].ln(), 0.0);
        let a = Action::new(3, 2);
        assert_eq!(out.log_prob(a), out.speed_probs[2].ln());
        assert!(net.forward(&[0.1; 8], &[false; 6]).is_err());
        assert!(matches!(
            net.forward(&[0.1; 7], &ALL),
            Err(LearnError::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn joint_probability_factorizes(seed in any::<u64>(), m in 0usize..6, s in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net: PolicyNet<f64> = PolicyNet::new(4, 8, 5, &mut rng);
            net.mlp_mut().scale_output_rows(0..11, 100.0);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = net.forward(&x, &ALL).unwrap();
            let a = Action::new(m, s);
            prop_assert!((out.prob(a) - out.maneuver_probs[m] * out.speed_probs[s]).abs() < 1e-12);
            prop_assert!((out.log_prob(a).exp() - out.prob(a)).abs() < 1e-12);
        }

        #[test]
        fn entropy_bounded_by_valid_count(seed in any::<u64>(), mask in proptest::array::uniform6(any::<bool>())) {
            prop_assume!(mask.iter().any(|&m| m));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net: PolicyNet<f64> = PolicyNet::new(4, 8, 5, &mut rng);
            net.mlp_mut().scale_output_rows(0..11, 300.0);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = net.forward(&x, &mask).unwrap();
            let k = mask.iter().filter(|&&m| m).count() as f64;
            prop_assert!(entropy(&out.maneuver_probs) <= k.ln() + 1e-12);
            for (p, m) in out.maneuver_probs.iter().zip(mask) {
                if !m { prop_assert_eq!(*p, 0.0); }
            }
        }
    }

    #[test]
    fn clip_saturation() {
        let (v, d) = clipped_surrogate(1.5f64, 2.0, 0.2);
        assert!((v - 1.2 * 2.0).abs() < 1e-12);
        assert_eq!(d, 0.0);
        let (v, d) = clipped_surrogate(0.5f64, -1.0, 0.2);
        assert!((v + 0.8).abs() < 1e-12);
        assert_eq!(d, 0.0);
        let (_, d) = clipped_surrogate(1.5f64, -2.0, 0.2);
        assert_eq!(d, -2.0);
        let (v, d) = clipped_surrogate(1.1f64, 3.0, 0.2);
        assert!((v - 3.3).abs() < 1e-12 && d == 3.0);
    }

    #[test]
    fn sampling_never_picks_masked_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = masked_distribution(
            &[0.3f64, 2.0, -1.0, 0.0, 5.0, 1.0],
            &[true, false, true, true, false, true],
        )
        .unwrap();
        for _ in 0..5000 {
            let i = sample_categorical(&p, &mut rng);
            assert!(p[i] > 0.0);
        }
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    #[test]
    fn clip_grad_norm_scales() {
        let mut g = vec![3.0f64, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 5.0);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net: PolicyNet<f64> = PolicyNet::new(2, 3, 2, &mut rng);
        net.mlp_mut().scale_output_rows(0..8, 50.0);
        let states: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![0.2 * i as f64 - 0.4, 0.5 - 0.1 * i as f64])
            .collect();
        let masks = [
            [true; 6],
            [true, false, true, false, true, true],
            [false, false, false, true, false, false],
            [true, true, false, false, false, false],
            [false, true, true, true, true, false],
            [true; 6],
        ];
        let actions = [
            Action::new(0, 1),
            Action::new(4, 0),
            Action::new(3, 1),
            Action::new(1, 1),
            Action::new(2, 0),
            Action::new(5, 0),
        ];
        let ratios = [1.0, 1.4, 0.6, 1.1, 0.9, 1.5];
        let advs = [0.7, -1.2, 0.4, 1.5, -0.3, 2.0];
        let olds: Vec<f64> = (0..6)
            .map(|i| {
                net.forward(&states[i], &masks[i])
                    .unwrap()
                    .log_prob(actions[i])
                    - f64::ln(ratios[i])
            })
            .collect();
        let cfg = LossConfig {
            clip: 0.2,
            ent_coef: 0.01,
            vf_coef: 0.5,
        };
        let samples: Vec<LossSample<'_, f64>> = (0..6)
            .map(|i| LossSample {
                state: &states[i],
                mask: &masks[i],
                action: actions[i],
                old_log_prob: olds[i],
                advantage: advs[i],
                ret: 0.3 * i as f64 - 0.5,
            })
            .collect();
        let mut grad = vec![0.0; net.n_params()];
        loss_and_grad(&net, &samples, &cfg, &mut grad).unwrap();
        let mut scratch = vec![0.0; net.n_params()];
        let h = 1e-6;
        for i in 0..net.n_params() {
            let mut p = net.clone();
            p.mlp_mut().params_mut()[i] += h;
            let lp = loss_and_grad(&p, &samples, &cfg, &mut scratch)
                .unwrap()
                .total;
            let mut m = net.clone();
            m.mlp_mut().params_mut()[i] -= h;
            let lm = loss_and_grad(&m, &samples, &cfg, &mut scratch)
                .unwrap()
                .total;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(
                (fd - grad[i]).abs() / denom < 1e-4,
                "param {i}: fd {fd} analytic {}",
                grad[i]
            );
        }
    }
}
