//! Small fixed-graph networks with hand-written reverse-mode gradients.
//!
//! Three architectures share one parameter store:
//!
//! ```text
//! ff_stats       flatten(2 x 4 x d) -> dense 128 -> dense 256 -> heads
//! ff_raw         (8, 1024) -> conv 16 -> conv 32 -> conv 64 -> dense 256 -> heads
//! recurrent_raw  (8, 1024) -> conv 16 -> conv 32 -> conv 64 -> dense 128 -> LSTM 512 -> heads
//! ```
//!
//! Convolutions use kernel 8 and stride 4 with ReLU; every hidden dense layer
//! is followed by ReLU. Heads are linear.

mod adam;
mod checkpoint;
mod dist;
mod grad;
mod init;
mod layers;
mod lstm;
mod net;
mod params;

pub use adam::Adam;
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use dist::{argmax, categorical_sample, log_softmax, softmax, Categorical};
pub use grad::{clip_global_norm, global_norm, grad_check, GradCheck};
pub use lstm::{
    lstm_gates_backward, lstm_hidden_backprop, lstm_input_projection, lstm_step, lstm_step_backward, lstm_step_projected, LstmCache, LstmWeights,
    Memory,
};
pub use net::{backward, forward, forward_train, ForwardOutput, Recurrence, Tape};
pub use params::{BlockKind, PolicyParams, TensorInfo};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    FfStats,
    FfRaw,
    RecurrentRaw,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff_stats" => Ok(Arch::FfStats),
            "ff_raw" => Ok(Arch::FfRaw),
            "recurrent_raw" => Ok(Arch::RecurrentRaw),
            other => Err(Error::Argument(format!("unknown architecture {other:?}"))),
        }
    }
}

impl Arch {
    pub fn is_recurrent(self) -> bool {
        self == Arch::RecurrentRaw
    }
}

/// What the network's output heads compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Policy logits plus a scalar state value.
    ActorCritic,
    /// One action value per action; no policy head.
    QValues,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub arch: Arch,
    pub obs_shape: Vec<usize>,
    pub n_actions: usize,
    pub head: HeadKind,
}

impl NetSpec {
    pub fn new(arch: Arch, obs_shape: &[usize], n_actions: usize, head: HeadKind) -> Self {
        Self {
            arch,
            obs_shape: obs_shape.to_vec(),
            n_actions,
            head,
        }
    }

    pub fn obs_len(&self) -> usize {
        self.obs_shape.iter().product()
    }
}

pub const CONV_KERNEL: usize = 8;
pub const CONV_STRIDE: usize = 4;
pub const CONV_CHANNELS: [usize; 3] = [16, 32, 64];
pub const STATS_HIDDEN: usize = 128;
pub const FF_LATENT: usize = 256;
pub const LSTM_INPUT: usize = 128;
pub const LSTM_HIDDEN: usize = 512;

/// Builds freshly initialized parameters for `spec`.
pub fn build_network<R: rand::Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<PolicyParams> {
    PolicyParams::init(spec, rng)
}
