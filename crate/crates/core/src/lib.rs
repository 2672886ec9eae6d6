//! Multipath RF observation synthesis and reinforcement-learning agents that
//! navigate a receiver toward an unknown emitter.

pub mod app;
pub mod config;
pub mod dqn;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod meta;
pub mod nn;
pub mod ppo;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
