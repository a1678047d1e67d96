//! Core library for a two-stage legged-locomotion training stack.
//!
//! Stage one trains a teacher policy with privileged simulator state via PPO
//! on procedurally generated curriculum terrains. Stage two distills the
//! teacher into a proprioception-only student with an adversarial
//! discriminator, a disturbance-estimation auxiliary head, and the same PPO
//! machinery. Everything is deterministic under a master seed: scalar f64
//! math, counter-based RNG streams, fixed reduction orders, and
//! single-threaded updates.

pub mod config;
pub mod distill;
pub mod envpool;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod nn;
pub mod obs;
pub mod ppo;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod terrain;

pub use error::{Error, Result};
