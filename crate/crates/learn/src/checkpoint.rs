//! Versioned JSON parameter dumps.

use std::path::Path;

use hexnav::{EnvConfig, Real};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LearnError, Result};
use crate::policy::PolicyNet;
use crate::trainer::{TrainConfig, Variant};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub config_hash: String,
    pub variant: Variant,
    pub env_config: EnvConfig,
    pub train_config: TrainConfig,
    pub global_step: u64,
    pub net: PolicyNet<T>,
}

/// Hex SHA-256 of the canonical JSON of the configuration triple.
pub fn config_hash(env: &EnvConfig, train: &TrainConfig, variant: Variant) -> String {
    let json = serde_json::to_string(&(env, train, variant)).expect("configs serialize");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl<T: Real> Checkpoint<T> {
    pub fn new(env_config: EnvConfig, train_config: TrainConfig, variant: Variant, global_step: u64, net: PolicyNet<T>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(&env_config, &train_config, variant),
            variant,
            env_config,
            train_config,
            global_step,
            net,
        }
    }
}

impl<T: Real + Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        if c.config_hash != config_hash(&c.env_config, &c.train_config, c.variant) {
            return Err(LearnError::Checkpoint("config hash mismatch".into()));
        }
        if !c.net.mlp().is_finite() {
            return Err(LearnError::Checkpoint("non-finite parameters".into()));
        }
        let expected = c.env_config.state_dim(c.variant.history);
        if c.net.state_dim() != expected {
            return Err(LearnError::Dimension { expected, got: c.net.state_dim() });
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint<f64> {
        let env = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = PolicyNet::new(env.state_dim(true), 8, env.n_speeds(), &mut rng);
        Checkpoint::new(env, TrainConfig::default(), Variant { mask: true, history: true, rnd: false }, 42, net)
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = sample();
        assert_eq!(Checkpoint::from_json(&c.to_json().unwrap()).unwrap(), c);
        assert_eq!(c.config_hash.len(), 64);
    }

    #[test]
    fn tampered_config_is_rejected() {
        let mut c = sample();
        c.train_config.gamma = 0.5;
        assert!(matches!(Checkpoint::<f64>::from_json(&c.to_json().unwrap()), Err(LearnError::Checkpoint(_))));
        let mut c = sample();
        c.version = 9;
        assert!(Checkpoint::<f64>::from_json(&c.to_json().unwrap()).is_err());
    }
}
