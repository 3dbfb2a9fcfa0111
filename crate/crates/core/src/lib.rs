//! Multi-objective autonomous braking.
//!
//! A vehicle approaches a pedestrian who may step into the road at any moment.
//! The crate provides the pedestrian trial data layer, the braking environment
//! with its safety/speed/comfort reward, a small fully-connected network
//! substrate, PPO and DDPG trainers, and the experiment harness behind the
//! `autobrake` command-line tool.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ddpg;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ppo;
pub mod training;
pub mod trial;

pub use env::{BrakingEnv, EnvConfig, EpisodeEvent, Observation, StepResult};
pub use error::{Error, Result};
pub use nn::{Activation, AdamState, Checkpoint, Network};
pub use trial::{SynthParams, Trial, TrialFrame};
