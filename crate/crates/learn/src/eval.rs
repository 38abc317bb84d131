//! Greedy evaluation of a trained policy.

use std::sync::Arc;

use hexnav::env::TraceRow;
use hexnav::hexworld::CellId;
use hexnav::{Env, Real, Scenario, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{LearnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEval {
    pub task_id: usize,
    pub task: Task,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub completion_rate: f64,
    /// Cells visited in the first episode.
    pub route: Vec<CellId>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_task: Vec<TaskEval>,
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `n_episodes` argmax episodes per task; the start day of each
/// episode is drawn from `seed`.
pub fn evaluate_policy<T: Real>(
    ckpt: &Checkpoint<T>,
    scenario: Arc<Scenario>,
    tasks: &[Task],
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut cfg = ckpt.env_config.clone();
    cfg.masking_enabled = ckpt.variant.mask;
    let history = ckpt.variant.history;
    let mut env = Env::new(scenario, cfg)?;
    let expected = env.config().state_dim(history);
    if ckpt.net.state_dim() != expected {
        return Err(LearnError::Dimension { expected, got: ckpt.net.state_dim() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut all = Vec::new();
    for (task_id, &task) in tasks.iter().enumerate() {
        let mut returns = Vec::with_capacity(n_episodes);
        let mut completed = 0;
        let mut route = Vec::new();
        let mut trace = Vec::new();
        for ep in 0..n_episodes {
            let reset = env.reset(task, rng.gen())?;
            let mut state: Vec<T> = reset.state(history).iter().map(|&x| T::lit(x)).collect();
            let mut mask = reset.mask.maneuver;
            let mut total = 0.0;
            loop {
                let m = if ckpt.variant.mask { mask } else { [true; 6] };
                let action = ckpt.net.forward(&state, &m)?.greedy();
                let step = env.step(action)?;
                total += step.reward;
                if step.done() {
                    completed += usize::from(step.info.reached_goal);
                    break;
                }
                state = step.state(history).iter().map(|&x| T::lit(x)).collect();
                mask = step.mask.maneuver;
            }
            if ep == 0 {
                route = env.route().to_vec();
                trace = env.trace().to_vec();
            }
            returns.push(total);
        }
        let (mean, std) = mean_std(&returns);
        all.extend_from_slice(&returns);
        per_task.push(TaskEval {
            task_id,
            task,
            mean,
            std,
            completion_rate: completed as f64 / n_episodes.max(1) as f64,
            returns,
            route,
            trace,
        });
    }
    let (mean, std) = mean_std(&all);
    Ok(EvalReport { per_task, mean, std })
}
