//! Goal-conditioned vessel routing on a hexagonal lattice.
//!
//! The crate covers the full environment pipeline: a hex world over a
//! bounding box ([`hexworld`]), trajectory preprocessing and the Markovian
//! traffic graph ([`traffic`]), time-varying wind ([`wind`]), the routing
//! environment with shaped rewards and action masking ([`env`]), start-goal
//! task sampling ([`tasks`]) and classical baseline planners ([`planners`]).
//! [`fixtures`] bundles the synthetic "gulf-mini" world.

pub mod env;
pub mod error;
pub mod fixtures;
pub mod geo;
pub mod hexworld;
pub mod planners;
pub mod scalar;
pub mod tasks;
pub mod traffic;
pub mod wind;

pub use env::{Action, ActionMask, Env, EnvConfig, Observation, RewardBreakdown, Scenario, StepOutcome, Task};
pub use error::{Error, Result};
pub use hexworld::{build_world, BBox, CellId, Direction, LandMask, WorldGrid};
pub use scalar::Real;
pub use tasks::{SamplerState, TaskSampler, TaskSet};
pub use traffic::{build_graph, EdgeStats, TrafficGraph, Trajectory, TrajectoryPoint};
pub use wind::{load_wind, synth_wind, WindField, WindSample};

/// Geographic coordinate in double precision.
pub type GeoCoord = geo::GeoCoord<f64>;
