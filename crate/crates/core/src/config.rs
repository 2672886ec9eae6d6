//! Experiment configuration files (JSON).
//!
//! Every block is optional and falls back to its defaults; unknown keys are
//! rejected. [`ExperimentConfig::resolve`] fills in the agent-dependent
//! defaults, and the resolved form is what runs and what gets written next
//! to the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dqn::DqnConfig;
use crate::env::{ArrayMount, Cell, EnvConfig, ObsMode, ObservationConfig, PolarGrid, RewardConfig};
use crate::features::FeatureKind;
use crate::meta::MetaConfig;
use crate::nn::Arch;
use crate::ppo::PpoConfig;
use crate::sim::{ArrayGeometry, Scene};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Dqn,
    DqnRecurrent,
    Ppo,
    PpoRecurrent,
}

impl AgentKind {
    pub fn is_recurrent(self) -> bool {
        matches!(self, AgentKind::DqnRecurrent | AgentKind::PpoRecurrent)
    }

    pub fn is_ppo(self) -> bool {
        matches!(self, AgentKind::Ppo | AgentKind::PpoRecurrent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Hyperparameters of PPO agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppo: Option<PpoConfig>,
    /// Hyperparameters of DQN agents. Missing keys take the feedforward or
    /// recurrent defaults according to `kind`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dqn: Option<DqnConfig>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::Ppo,
            ppo: None,
            dqn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationBlock {
    pub mode: ObsMode,
    /// Defaults to `phase_diff` for `stats_goal` and `raw_iq` for `raw_iq`.
    pub feature: Option<FeatureKind>,
    /// Noisy draws used to fit the normalizer.
    pub normalizer_draws: usize,
}

impl Default for ObservationBlock {
    fn default() -> Self {
        Self {
            mode: ObsMode::StatsGoal,
            feature: None,
            normalizer_draws: 2000,
        }
    }
}

impl ObservationBlock {
    pub fn observation(&self) -> ObservationConfig {
        let feature = self.feature.unwrap_or(match self.mode {
            ObsMode::StatsGoal => FeatureKind::PhaseDiff,
            ObsMode::RawIq => FeatureKind::RawIq,
        });
        ObservationConfig { mode: self.mode, feature }
    }
}

/// Which statistics the heatmap command exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSelection {
    All,
    Mean,
    Std,
    Rms,
    PhaseDiff,
}

impl HeatmapSelection {
    pub fn kinds(self) -> Vec<FeatureKind> {
        match self {
            HeatmapSelection::All => FeatureKind::STATISTICS.to_vec(),
            HeatmapSelection::Mean => vec![FeatureKind::Mean],
            HeatmapSelection::Std => vec![FeatureKind::Std],
            HeatmapSelection::Rms => vec![FeatureKind::Rms],
            HeatmapSelection::PhaseDiff => vec![FeatureKind::PhaseDiff],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Mode of the policy (argmax Q for DQN) instead of sampling.
    pub greedy: bool,
    /// Checkpoint period in environment steps (meta-iterations for
    /// meta-training); 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub heatmap_feature: HeatmapSelection,
    pub heatmap_draws: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            greedy: true,
            checkpoint_every: 100_000,
            heatmap_feature: HeatmapSelection::All,
            heatmap_draws: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Place the emitter over this cell (as in an episode with this goal)
    /// instead of at `scene.emitter_pos`.
    pub goal_cell: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub scene: Scene,
    pub array: ArrayGeometry,
    pub array_mount: ArrayMount,
    pub emitter_height_m: f64,
    pub grid: PolarGrid,
    pub reward: RewardConfig,
    pub observation: ObservationBlock,
    pub agent: AgentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<MetaConfig>,
    pub eval: EvalConfig,
    pub dataset: DatasetConfig,
    pub seeds: Seeds,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            name: "experiment".into(),
            scene: env.scene,
            array: env.array,
            array_mount: env.array_mount,
            emitter_height_m: env.emitter_height_m,
            grid: env.grid,
            reward: env.reward,
            observation: ObservationBlock::default(),
            agent: AgentConfig::default(),
            meta: None,
            eval: EvalConfig::default(),
            dataset: DatasetConfig::default(),
            seeds: Seeds::default(),
            out_dir: PathBuf::from("runs/experiment"),
        }
    }
}

/// `base` with the keys of `user` laid over it.
fn overlay(base: Value, user: Value) -> Value {
    match (base, user) {
        (Value::Object(mut b), Value::Object(u)) => {
            for (k, v) in u {
                let merged = match b.remove(&k) {
                    Some(old) => overlay(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (_, u) => u,
    }
}

impl ExperimentConfig {
    /// Parses and resolves a config document. Errors name the offending key
    /// and carry line/column context.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let at = |e: serde_json::Error| Error::Config(format!("{}: {e}", origin.display()));
        let mut value: Value = serde_json::from_str(text).map_err(at)?;
        // recurrent DQN has its own defaults for the keys a user leaves out
        if let Some(agent) = value.get_mut("agent").and_then(Value::as_object_mut) {
            if agent.get("kind").and_then(Value::as_str) == Some("dqn_recurrent") {
                if let Some(user) = agent.remove("dqn") {
                    let base = serde_json::to_value(DqnConfig::recurrent())?;
                    agent.insert("dqn".into(), overlay(base, user));
                }
            }
        }
        // re-parse from text so key and position errors refer to the file
        let parsed: Self = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(_) => serde_json::from_str(text).map_err(at)?,
        };
        parsed.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text, path)
    }

    /// Fills agent-dependent defaults and checks cross-block consistency.
    pub fn resolve(mut self) -> Result<Self> {
        let kind = self.agent.kind;
        if kind.is_ppo() {
            if self.agent.dqn.is_some() {
                return Err(Error::Config("agent.dqn is set for a PPO agent".into()));
            }
            self.agent.ppo.get_or_insert_with(PpoConfig::default);
        } else {
            if self.agent.ppo.is_some() {
                return Err(Error::Config("agent.ppo is set for a DQN agent".into()));
            }
            self.agent.dqn.get_or_insert_with(|| match kind {
                AgentKind::DqnRecurrent => DqnConfig::recurrent(),
                _ => DqnConfig::feedforward(),
            });
        }
        self.observation.feature = Some(self.observation.observation().feature);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        if self.observation.normalizer_draws == 0 {
            return Err(Error::Config("observation.normalizer_draws must be positive".into()));
        }
        self.arch()?;
        if let Some(p) = &self.agent.ppo {
            p.validate()?;
        }
        if let Some(d) = &self.agent.dqn {
            d.validate()?;
        }
        if let Some(m) = &self.meta {
            m.validate()?;
        }
        if self.eval.episodes == 0 || self.eval.heatmap_draws == 0 {
            return Err(Error::Config("eval.episodes and eval.heatmap_draws must be positive".into()));
        }
        if let Some(c) = self.dataset.goal_cell {
            if !self.grid.contains(c) {
                return Err(Error::Config(format!("dataset.goal_cell {c:?} is outside the grid")));
            }
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            scene: self.scene.clone(),
            array: self.array.clone(),
            array_mount: self.array_mount,
            grid: self.grid.clone(),
            reward: self.reward.clone(),
            observation: self.observation.observation(),
            emitter_height_m: self.emitter_height_m,
        }
    }

    /// Network architecture implied by the agent kind and observation mode.
    pub fn arch(&self) -> Result<Arch> {
        match (self.agent.kind.is_recurrent(), self.observation.mode) {
            (false, ObsMode::StatsGoal) => Ok(Arch::FfStats),
            (false, ObsMode::RawIq) => Ok(Arch::FfRaw),
            (true, ObsMode::RawIq) => Ok(Arch::RecurrentRaw),
            (true, ObsMode::StatsGoal) => Err(Error::Config(
                "recurrent agents take raw_iq observations".into(),
            )),
        }
    }

    pub fn ppo(&self) -> Result<&PpoConfig> {
        self.agent
            .ppo
            .as_ref()
            .filter(|_| self.agent.kind.is_ppo())
            .ok_or_else(|| Error::Config("agent is not a PPO agent".into()))
    }

    pub fn dqn(&self) -> Result<&DqnConfig> {
        self.agent
            .dqn
            .as_ref()
            .filter(|_| !self.agent.kind.is_ppo())
            .ok_or_else(|| Error::Config("agent is not a DQN agent".into()))
    }

    /// Discount used for evaluation returns.
    pub fn gamma(&self) -> f64 {
        match (&self.agent.ppo, &self.agent.dqn) {
            (Some(p), _) => p.gamma,
            (_, Some(d)) => d.gamma,
            _ => PpoConfig::default().gamma,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json_str(text, Path::new("test.json"))
    }

    #[test]
    fn empty_document_takes_defaults() {
        let c = parse("{}").unwrap();
        assert_eq!(c.agent.kind, AgentKind::Ppo);
        assert_eq!(c.ppo().unwrap(), &PpoConfig::default());
        assert_eq!(c.observation.feature, Some(FeatureKind::PhaseDiff));
        assert_eq!(c.arch().unwrap(), Arch::FfStats);
        assert_eq!(c.env_config(), EnvConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        for doc in [r#"{"sceen": {}}"#, r#"{"agent": {"kind": "ppo", "ppo": {"lr_x": 1}}}"#, r#"{"grid": {"rings": 3}}"#] {
            let err = parse(doc).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            let msg = err.to_string();
            assert!(msg.contains("unknown field"), "{msg}");
            assert!(msg.contains("line"), "{msg}");
        }
    }

    #[test]
    fn recurrent_dqn_defaults_fill_partial_blocks() {
        let c = parse(r#"{"observation": {"mode": "raw_iq"}, "agent": {"kind": "dqn_recurrent", "dqn": {"total_steps": 1000}}}"#).unwrap();
        let d = c.dqn().unwrap();
        assert_eq!(d.total_steps, 1000);
        assert_eq!((d.batch_size, d.buffer_capacity, d.seq_len), (32, 5000, 8));
        assert_eq!(c.arch().unwrap(), Arch::RecurrentRaw);
        assert_eq!(c.observation.feature, Some(FeatureKind::RawIq));
    }

    #[test]
    fn inconsistent_blocks_are_config_errors() {
        for doc in [
            r#"{"agent": {"kind": "ppo_recurrent"}}"#,
            r#"{"agent": {"kind": "ppo", "dqn": {}}}"#,
            r#"{"observation": {"mode": "raw_iq", "feature": "rms"}}"#,
            r#"{"grid": {"n_rings": 30}}"#,
            r#"{"meta": {"inner_steps": 0}}"#,
        ] {
            let err = parse(doc).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{doc}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn resolved_copy_round_trips() {
        let c = parse(r#"{"name": "x", "agent": {"kind": "ppo", "ppo": {"total_steps": 2048}}, "meta": {"meta_iters": 2}}"#).unwrap();
        let again = parse(&c.to_json().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.ppo().unwrap().total_steps, 2048);
        assert_eq!(again.meta.as_ref().unwrap().tasks_per_batch, 3);
    }
}
