//! Masked actor-critic training with an optional distillation bonus.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod gae;
pub mod mlp;
pub mod normalize;
pub mod policy;
pub mod rnd;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use error::{LearnError, Result};
pub use eval::{evaluate_policy, EvalReport, TaskEval};
pub use gae::{gae_advantages, RolloutBuffer, StepEnd};
pub use mlp::Mlp;
pub use policy::{PolicyNet, PolicyOutput};
pub use rnd::RndPair;
pub use trainer::{train, EpisodeRecord, TrainConfig, Trainer, Variant};

pub type PolicyNet64 = PolicyNet<f64>;
pub type PolicyNet32 = PolicyNet<f32>;
