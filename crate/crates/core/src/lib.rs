//! Behavior-explainable RL workbench: a highway driving simulator, a PPO trainer,
//! behavior measures over policies, and three explainers that target them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod env;
pub mod error;
pub mod explain;
pub mod manifest;
pub mod measure;
pub mod policy;
pub mod ppo;
pub mod rollout;
mod util;

pub use error::{Error, Result};
pub use util::{hash_f64s, mix_seed, sha256_hex};
