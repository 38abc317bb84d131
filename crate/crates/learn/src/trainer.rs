//! Rollout collection and clipped-surrogate updates on one environment.

use std::io::Write;
use std::sync::Arc;

use hexnav::env::N_MANEUVERS;
use hexnav::{Env, EnvConfig, Real, SamplerState, Scenario, TaskSampler, TaskSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{linear_schedule, Adam};
use crate::checkpoint::Checkpoint;
use crate::error::{LearnError, Result};
use crate::gae::{RolloutBuffer, StepEnd};
use crate::normalize::RewardNormalizer;
use crate::policy::{clip_grad_norm, loss_and_grad, LossConfig, LossSample, LossStats, PolicyNet};
use crate::rnd::RndPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub n_steps: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub ent_coef: f64,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: usize,
    pub seed: u64,
    pub rnd_beta: f64,
    pub normalize_reward: bool,
    pub reward_clip: f64,
    pub sampler_threshold: u64,
    pub sampler_window: u64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 300_000,
            n_steps: 1024,
            minibatch_size: 64,
            epochs: 10,
            lr_start: 7e-4,
            lr_end: 1e-5,
            ent_coef: 0.01,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: 64,
            seed: 0,
            rnd_beta: 1.0,
            normalize_reward: true,
            reward_clip: 10.0,
            sampler_threshold: hexnav::tasks::DEFAULT_THRESHOLD,
            sampler_window: hexnav::tasks::DEFAULT_WINDOW,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        if self.n_steps == 0 || self.minibatch_size == 0 || self.epochs == 0 || self.hidden == 0 {
            return bad("n_steps, minibatch_size, epochs and hidden must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.lr_start > 0.0 && self.lr_end > 0.0 && self.reward_clip > 0.0) {
            return bad("clip, learning rates and reward_clip must be positive");
        }
        if self.max_grad_norm <= 0.0 || self.rnd_beta < 0.0 || self.ent_coef < 0.0 || self.vf_coef < 0.0 {
            return bad("max_grad_norm must be positive and coefficients non-negative");
        }
        Ok(())
    }
}

/// Policy variant flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub mask: bool,
    pub history: bool,
    pub rnd: bool,
}

impl Variant {
    pub const MASKED: Self = Self { mask: true, history: false, rnd: false };
    pub const UNMASKED: Self = Self { mask: false, history: false, rnd: false };

    /// `masked` or `unmasked`, optionally followed by `-history` and/or `-rnd`.
    pub fn parse(name: &str) -> Option<Self> {
        let mut parts = name.split('-');
        let mask = match parts.next()? {
            "masked" => true,
            "unmasked" => false,
            _ => return None,
        };
        let mut v = Self { mask, history: false, rnd: false };
        for p in parts {
            match p {
                "history" if !v.history && !v.rnd => v.history = true,
                "rnd" if !v.rnd => v.rnd = true,
                _ => return None,
            }
        }
        Some(v)
    }

    pub fn name(&self) -> String {
        let mut s = String::from(if self.mask { "masked" } else { "unmasked" });
        if self.history {
            s.push_str("-history");
        }
        if self.rnd {
            s.push_str("-rnd");
        }
        s
    }
}

/// One finished training episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub global_step: u64,
    pub episode: u64,
    pub task_id: usize,
    pub return_scaled: f64,
    pub return_penalty_only: f64,
    pub episode_len: usize,
    pub reached_goal: bool,
}

pub fn write_metrics_csv<W: Write>(writer: W, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = writer;
    writeln!(w, "global_step,episode,task_id,return_scaled,return_penalty_only,episode_len")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.global_step, r.episode, r.task_id, r.return_scaled, r.return_penalty_only, r.episode_len
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Finished-episode summary over the trailing `n` records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailStats {
    pub episodes: usize,
    pub mean_return: f64,
    pub completion_rate: f64,
}

pub fn tail_stats(records: &[EpisodeRecord], n: usize) -> TailStats {
    let tail = &records[records.len().saturating_sub(n)..];
    let k = tail.len().max(1) as f64;
    TailStats {
        episodes: tail.len(),
        mean_return: tail.iter().map(|r| r.return_scaled).sum::<f64>() / k,
        completion_rate: tail.iter().filter(|r| r.reached_goal).count() as f64 / k,
    }
}

struct Running<T> {
    task_id: usize,
    state: Vec<T>,
    mask: [bool; N_MANEUVERS],
    ret_scaled: f64,
    ret_penalty: f64,
    len: usize,
}

/// Statistics of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub global_step: u64,
    pub lr: f64,
    pub loss: LossStats<f64>,
    pub rnd_loss: f64,
}

pub struct Trainer<T> {
    env: Env,
    sampler: TaskSampler,
    cfg: TrainConfig,
    variant: Variant,
    net: PolicyNet<T>,
    last_good: PolicyNet<T>,
    opt: Adam<T>,
    rnd: Option<RndPair<T>>,
    reward_norm: RewardNormalizer,
    rng: ChaCha8Rng,
    buffer: RolloutBuffer<T>,
    global_step: u64,
    episodes: Vec<EpisodeRecord>,
    running: Option<Running<T>>,
}

fn to_real<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

impl<T: Real> Trainer<T> {
    /// Masking in `env_cfg` is overridden by the variant.
    pub fn new(
        scenario: Arc<Scenario>,
        mut env_cfg: EnvConfig,
        tasks: TaskSet,
        cfg: TrainConfig,
        variant: Variant,
    ) -> Result<Self> {
        cfg.validate()?;
        env_cfg.masking_enabled = variant.mask;
        let mut env = Env::new(scenario, env_cfg)?;
        for t in tasks.tasks() {
            env.task_distance(*t)?;
        }
        let state_dim = env.config().state_dim(variant.history);
        let n_speeds = env.config().n_speeds();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = PolicyNet::new(state_dim, cfg.hidden, n_speeds, &mut rng);
        let rnd = variant.rnd.then(|| RndPair::new(state_dim, cfg.rnd_beta, &mut rng));
        let sampler = TaskSampler::new(tasks, SamplerState::new(cfg.sampler_threshold, cfg.sampler_window));
        Ok(Self {
            opt: Adam::new(net.n_params()),
            last_good: net.clone(),
            net,
            env,
            sampler,
            reward_norm: RewardNormalizer::new(cfg.gamma, cfg.reward_clip),
            buffer: RolloutBuffer::new(cfg.n_steps),
            cfg,
            variant,
            rnd,
            rng,
            global_step: 0,
            episodes: Vec::new(),
            running: None,
        })
    }

    pub fn net(&self) -> &PolicyNet<T> {
        &self.net
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn sampler(&self) -> &TaskSampler {
        &self.sampler
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::new(self.env.config().clone(), self.cfg.clone(), self.variant, self.global_step, self.last_good.clone())
    }

    fn policy_mask(&self, env_mask: [bool; N_MANEUVERS]) -> [bool; N_MANEUVERS] {
        if self.variant.mask {
            env_mask
        } else {
            [true; N_MANEUVERS]
        }
    }

    fn begin_episode(&mut self) -> Result<()> {
        let task_id = self.sampler.sample_task(&mut self.rng);
        let task = self.sampler.tasks.get(task_id).expect("sampled index in range");
        let seed = self.rng.gen();
        let reset = self.env.reset(task, seed)?;
        self.running = Some(Running {
            task_id,
            state: to_real(&reset.state(self.variant.history)),
            mask: self.policy_mask(reset.mask.maneuver),
            ret_scaled: 0.0,
            ret_penalty: 0.0,
            len: 0,
        });
        Ok(())
    }

    /// Fills the rollout buffer; returns the bootstrap value of the last state.
    fn collect(&mut self) -> Result<T> {
        self.buffer.clear();
        while !self.buffer.is_full() {
            if self.running.is_none() {
                self.begin_episode()?;
            }
            let run = self.running.as_mut().expect("episode in progress");
            let out = self.net.forward(&run.state, &run.mask)?;
            let action = out.sample(&mut self.rng);
            let log_prob = out.log_prob(action);
            let step = self.env.step(action)?;
            self.sampler.record_step();
            self.global_step += 1;

            let run = self.running.as_mut().expect("episode in progress");
            run.ret_scaled += step.reward;
            run.ret_penalty += step.info.breakdown.r_penalty_scaled;
            run.len += 1;
            let done = step.done();
            let next_state: Vec<T> = to_real(&step.state(self.variant.history));
            let mut reward = if self.cfg.normalize_reward {
                self.reward_norm.normalize(step.reward, done)
            } else {
                step.reward
            };
            if let Some(rnd) = self.rnd.as_mut() {
                let raw = rnd.prediction_error(&next_state).to_f64_lossy();
                rnd.observe(raw);
                reward += rnd.beta * rnd.bonus(&next_state);
            }
            let end = if step.terminated || step.info.dead_end {
                StepEnd::Terminal
            } else if step.truncated {
                StepEnd::Truncated(self.net.value(&next_state)?)
            } else {
                StepEnd::Continue
            };
            let state = std::mem::replace(&mut run.state, next_state);
            let mask = std::mem::replace(&mut run.mask, [true; N_MANEUVERS]);
            self.buffer.push(state, mask, action, log_prob, T::lit(reward), out.value, end);
            if done {
                let run = self.running.take().expect("episode in progress");
                self.episodes.push(EpisodeRecord {
                    global_step: self.global_step,
                    episode: self.episodes.len() as u64,
                    task_id: run.task_id,
                    return_scaled: run.ret_scaled,
                    return_penalty_only: run.ret_penalty,
                    episode_len: run.len,
                    reached_goal: step.info.reached_goal,
                });
                if step.info.reached_goal {
                    self.sampler.record_completion(run.task_id)?;
                }
            } else {
                let m = self.policy_mask(step.mask.maneuver);
                self.running.as_mut().expect("episode in progress").mask = m;
            }
        }
        match &self.running {
            Some(run) => self.net.value(&run.state),
            None => Ok(T::zero()),
        }
    }

    fn restore(&mut self, why: String) -> LearnError {
        self.net = self.last_good.clone();
        self.opt = Adam::new(self.net.n_params());
        LearnError::NonFinite(why)
    }

    fn update(&mut self, last_value: T) -> Result<UpdateStats> {
        let targets = self.buffer.targets(last_value, T::lit(self.cfg.gamma), T::lit(self.cfg.gae_lambda))?;
        let progress = self.global_step as f64 / self.cfg.total_steps.max(1) as f64;
        let lr = linear_schedule(self.cfg.lr_start, self.cfg.lr_end, progress);
        let loss_cfg =
            LossConfig { clip: T::lit(self.cfg.clip), ent_coef: T::lit(self.cfg.ent_coef), vf_coef: T::lit(self.cfg.vf_coef) };
        let mut grad = vec![T::zero(); self.net.n_params()];
        let mut idx: Vec<usize> = (0..self.buffer.len()).collect();
        let mut last = LossStats::default();
        let mut rnd_loss = 0.0;
        for _ in 0..self.cfg.epochs {
            idx.shuffle(&mut self.rng);
            for chunk in idx.chunks(self.cfg.minibatch_size) {
                let b = &self.buffer;
                let samples: Vec<LossSample<'_, T>> = chunk
                    .iter()
                    .map(|&i| LossSample {
                        state: &b.states[i],
                        mask: &b.masks[i],
                        action: b.actions[i],
                        old_log_prob: b.log_probs[i],
                        advantage: targets.advantages[i],
                        ret: targets.returns[i],
                    })
                    .collect();
                let stats = match loss_and_grad(&self.net, &samples, &loss_cfg, &mut grad) {
                    Ok(s) => s,
                    Err(e) => return Err(self.restore(format!("{e} at step {}", self.global_step))),
                };
                clip_grad_norm(&mut grad, T::lit(self.cfg.max_grad_norm));
                self.opt.step(self.net.mlp_mut().params_mut(), &grad, T::lit(lr));
                if let Some(rnd) = self.rnd.as_mut() {
                    let states: Vec<&[T]> = chunk.iter().map(|&i| b.states[i].as_slice()).collect();
                    rnd_loss = rnd.train(&states, T::lit(lr)).to_f64_lossy();
                }
                last = stats;
            }
        }
        if !self.net.mlp().is_finite() {
            return Err(self.restore(format!("parameters diverged at step {}", self.global_step)));
        }
        self.last_good = self.net.clone();
        let loss = LossStats {
            total: last.total.to_f64_lossy(),
            policy: last.policy.to_f64_lossy(),
            value: last.value.to_f64_lossy(),
            entropy: last.entropy.to_f64_lossy(),
            clip_fraction: last.clip_fraction.to_f64_lossy(),
            approx_kl: last.approx_kl.to_f64_lossy(),
            mean_ratio: last.mean_ratio.to_f64_lossy(),
        };
        Ok(UpdateStats { global_step: self.global_step, lr, loss, rnd_loss })
    }

    /// One rollout plus one update.
    pub fn iterate(&mut self) -> Result<UpdateStats> {
        let last_value = self.collect()?;
        self.update(last_value)
    }

    /// Trains until `total_steps`. `on_checkpoint` receives periodic
    /// checkpoints and, on divergence, the last good one before the error
    /// is returned.
    pub fn run(&mut self, mut on_checkpoint: impl FnMut(&Checkpoint<T>) -> Result<()>) -> Result<()> {
        let mut next_ckpt = self.cfg.checkpoint_every;
        while self.global_step < self.cfg.total_steps {
            if let Err(e) = self.iterate() {
                if matches!(e, LearnError::NonFinite(_)) {
                    on_checkpoint(&self.checkpoint())?;
                }
                return Err(e);
            }
            if self.cfg.checkpoint_every > 0 && self.global_step >= next_ckpt {
                on_checkpoint(&self.checkpoint())?;
                next_ckpt += self.cfg.checkpoint_every;
            }
        }
        Ok(())
    }
}

/// Trains a fresh policy and returns its final checkpoint with the episode log.
pub fn train<T: Real>(
    scenario: Arc<Scenario>,
    env_cfg: EnvConfig,
    tasks: TaskSet,
    cfg: TrainConfig,
    variant: Variant,
) -> Result<(Checkpoint<T>, Vec<EpisodeRecord>)> {
    let mut trainer = Trainer::new(scenario, env_cfg, tasks, cfg, variant)?;
    trainer.run(|_| Ok(()))?;
    let ckpt = trainer.checkpoint();
    Ok((ckpt, trainer.episodes))
}
