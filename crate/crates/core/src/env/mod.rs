//! Goal-conditioned navigation over a polar grid, observed through the
//! simulated antenna array.
//!
//! Each episode draws a start cell and a distinct goal cell. The emitter is
//! placed above the goal cell (at `emitter_height_m`), so reaching the goal
//! and localizing the emitter are the same task.

mod grid;
mod reward;

pub use grid::{Action, Cell, PolarGrid};
pub use reward::{compute_reward, reward_terms, RewardConfig, RewardTerms};

use std::collections::HashMap;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{self, FeatureKind, Normalizer};
use crate::sim::{add_noise, ArrayGeometry, IQObservation, Scene, Synthesizer, Vec3, N_ANTENNAS, N_SAMPLES};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// Current and goal feature slices, `2 x 4 x d`.
    StatsGoal,
    /// Raw current-cell samples, `8 x 1024`.
    RawIq,
}

/// How the array is carried across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayMount {
    /// The array keeps its orientation relative to the agent, whose local x
    /// axis points radially outward and y axis along counter-clockwise motion.
    Agent,
    /// The array keeps its orientation relative to the hall at every cell.
    Hall,
}

impl ArrayMount {
    /// `base` as mounted at `cell`.
    pub fn array_at(self, base: &ArrayGeometry, grid: &PolarGrid, cell: Cell) -> ArrayGeometry {
        match self {
            ArrayMount::Hall => base.clone(),
            ArrayMount::Agent => {
                let (s, c) = grid.azimuth(cell.sector).sin_cos();
                let rz = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
                let o = &base.orientation;
                let mut out = base.clone();
                for (i, row) in out.orientation.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (0..3).map(|k| rz[i][k] * o[k][j]).sum();
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    pub mode: ObsMode,
    pub feature: FeatureKind,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            mode: ObsMode::StatsGoal,
            feature: FeatureKind::PhaseDiff,
        }
    }
}

impl ObservationConfig {
    pub fn raw() -> Self {
        Self {
            mode: ObsMode::RawIq,
            feature: FeatureKind::RawIq,
        }
    }

    pub fn stats(feature: FeatureKind) -> Self {
        Self {
            mode: ObsMode::StatsGoal,
            feature,
        }
    }

    /// Shape of the observation tensor.
    pub fn shape(&self) -> Vec<usize> {
        match self.mode {
            ObsMode::StatsGoal => vec![2, N_ANTENNAS, self.feature.dim().unwrap_or(0)],
            ObsMode::RawIq => vec![2 * N_ANTENNAS, N_SAMPLES],
        }
    }

    pub fn flat_len(&self) -> usize {
        self.shape().iter().product()
    }

    /// Channels seen by the normalizer.
    pub fn normalizer_channels(&self) -> usize {
        match self.mode {
            ObsMode::StatsGoal => N_ANTENNAS * self.feature.dim().unwrap_or(0),
            ObsMode::RawIq => 2 * N_ANTENNAS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.feature) {
            (ObsMode::StatsGoal, FeatureKind::RawIq) => Err(Error::Config(
                "stats_goal observations need a statistical feature kind".into(),
            )),
            (ObsMode::RawIq, k) if k != FeatureKind::RawIq => Err(Error::Config(format!(
                "raw_iq observations take feature \"raw_iq\", got \"{k}\""
            ))),
            _ => Ok(()),
        }
    }
}

/// Everything needed to build an environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Hall, walls, carrier and noise. `emitter_pos` is overridden per episode.
    pub scene: Scene,
    pub array: ArrayGeometry,
    pub array_mount: ArrayMount,
    pub grid: PolarGrid,
    pub reward: RewardConfig,
    pub observation: ObservationConfig,
    /// Emitter height above the floor; the emitter sits over the goal cell.
    pub emitter_height_m: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            scene: Scene::default(),
            array: ArrayGeometry::default(),
            array_mount: ArrayMount::Agent,
            grid: PolarGrid::default(),
            reward: RewardConfig::default(),
            observation: ObservationConfig::default(),
            emitter_height_m: 2.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.grid.validate(&self.scene)?;
        self.reward.validate()?;
        self.observation.validate()?;
        for cell in self.grid.cells() {
            let e = self.emitter_position(cell)?;
            if !self.scene.contains(e) {
                return Err(Error::Config(format!("emitter over cell {cell:?} at {e:?} is outside the hall")));
            }
        }
        Ok(())
    }

    pub fn emitter_position(&self, goal: Cell) -> Result<Vec3> {
        let p = self.grid.cell_to_position(goal)?;
        Ok(Vec3::new(p.x, p.y, self.grid.center.z + self.emitter_height_m))
    }

    /// Array geometry as mounted at `cell`.
    pub fn array_at(&self, cell: Cell) -> ArrayGeometry {
        self.array_mount.array_at(&self.array, &self.grid, cell)
    }

    /// Scene with the emitter over `goal`.
    pub fn scene_for_goal(&self, goal: Cell) -> Result<Scene> {
        Ok(Scene {
            emitter_pos: self.emitter_position(goal)?,
            ..self.scene.clone()
        })
    }
}

/// One environment observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Stats(Array3<f64>),
    Raw(Array2<f64>),
}

impl Observation {
    pub fn mode(&self) -> ObsMode {
        match self {
            Observation::Stats(_) => ObsMode::StatsGoal,
            Observation::Raw(_) => ObsMode::RawIq,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Observation::Stats(a) => a.shape().to_vec(),
            Observation::Raw(a) => a.shape().to_vec(),
        }
    }

    /// Row-major flattened values.
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Observation::Stats(a) => a.as_slice().expect("standard layout"),
            Observation::Raw(a) => a.as_slice().expect("standard layout"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_cell: Cell,
    pub agent_pos: Vec3,
    pub emitter_pos: Vec3,
    pub goal_cell: Cell,
    pub step_count: usize,
    pub prev_distance: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Distance to the emitter after the move.
    pub distance: f64,
    pub success: bool,
    /// Episode ended by the step limit rather than success.
    pub truncated: bool,
    pub moved: bool,
    pub terms: RewardTerms,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub cell: Cell,
    pub p_t: Vec3,
    pub action: Action,
    pub r_t: f64,
    pub d_t: f64,
    pub done: bool,
}

/// Single-owner navigation environment.
///
/// Movement is deterministic; start/goal draws and receiver noise come from
/// two separate ChaCha streams derived from the instance seed.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    synth: Synthesizer,
    normalizer: Normalizer,
    episode_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    state: Option<EnvState>,
    scene: Scene,
    clean_cache: HashMap<Cell, Array2<Complex64>>,
    goal_slice: Option<Array2<f64>>,
}

impl Env {
    pub fn new(cfg: EnvConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let channels = cfg.observation.normalizer_channels();
        if normalizer.channels() != channels {
            return Err(Error::Config(format!(
                "normalizer has {} channels, observation needs {channels}",
                normalizer.channels()
            )));
        }
        let synth = Synthesizer::new(&cfg.scene, cfg.array.clone(), N_SAMPLES)?;
        let episode_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(1);
        let scene = cfg.scene.clone();
        Ok(Self {
            cfg,
            synth,
            normalizer,
            episode_rng,
            noise_rng,
            state: None,
            scene,
            clean_cache: HashMap::new(),
            goal_slice: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Scene of the running episode (emitter over the goal).
    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Starts a new episode with random, distinct start and goal cells.
    pub fn reset(&mut self) -> Result<Observation> {
        let n = self.cfg.grid.n_cells();
        let agent = self.episode_rng.random_range(0..n);
        let mut goal = self.episode_rng.random_range(0..n);
        while goal == agent {
            goal = self.episode_rng.random_range(0..n);
        }
        let (agent, goal) = (self.cfg.grid.cell_at(agent), self.cfg.grid.cell_at(goal));
        self.reset_to(agent, goal)
    }

    /// Starts an episode from a chosen start and goal.
    pub fn reset_to(&mut self, agent: Cell, goal: Cell) -> Result<Observation> {
        if agent == goal {
            return Err(Error::Argument(format!("start and goal coincide at {agent:?}")));
        }
        self.scene = self.cfg.scene_for_goal(goal)?;
        self.clean_cache.clear();
        self.goal_slice = None;
        let agent_pos = self.cfg.grid.cell_to_position(agent)?;
        let emitter_pos = self.scene.emitter_pos;
        self.state = Some(EnvState {
            agent_cell: agent,
            agent_pos,
            emitter_pos,
            goal_cell: goal,
            step_count: 0,
            prev_distance: agent_pos.distance(emitter_pos),
            done: false,
            success: false,
        });
        if self.cfg.observation.mode == ObsMode::StatsGoal {
            // The goal reference is measured once per episode.
            let raw = self.feature_slice(goal)?;
            self.goal_slice = Some(raw);
        }
        self.assemble_observation()
    }

    pub fn step(&mut self, action: Action) -> Result<Step> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Usage("step called before reset".into()))?;
        if state.done {
            return Err(Error::Usage("step called on a finished episode; reset first".into()));
        }
        let (cell, moved) = self.cfg.grid.apply(state.agent_cell, action);
        let pos = self.cfg.grid.cell_to_position(cell)?;
        let d = pos.distance(state.emitter_pos);
        let success = d <= self.cfg.reward.epsilon_m;
        let terms = reward_terms(state.prev_distance, d, success, &self.cfg.reward)?;
        state.agent_cell = cell;
        state.agent_pos = pos;
        state.prev_distance = d;
        state.step_count += 1;
        state.success = success;
        state.done = success || state.step_count >= self.cfg.reward.max_steps;
        let done = state.done;
        let info = StepInfo {
            distance: d,
            success,
            truncated: done && !success,
            moved,
            terms,
        };
        let obs = self.assemble_observation()?;
        Ok(Step {
            obs,
            reward: terms.total(),
            done,
            info,
        })
    }

    fn clean_at(&mut self, cell: Cell) -> Result<&Array2<Complex64>> {
        if !self.clean_cache.contains_key(&cell) {
            let rx = self.cfg.grid.cell_to_position(cell)?;
            let array = self.cfg.array_at(cell);
            let samples = self.synth.clean_with(&self.scene, rx, &array)?;
            self.clean_cache.insert(cell, samples);
        }
        Ok(&self.clean_cache[&cell])
    }

    /// Fresh noisy IQ at `cell` under the current episode's scene.
    pub fn observe_iq(&mut self, cell: Cell) -> Result<IQObservation> {
        let mut samples = self.clean_at(cell)?.clone();
        add_noise(&mut samples, self.scene.noise_power, &mut self.noise_rng);
        Ok(IQObservation {
            samples,
            rx_pos: self.cfg.grid.cell_to_position(cell)?,
        })
    }

    /// Unnormalized feature values at `cell`, as `(4 * d) x 1`.
    fn feature_slice(&mut self, cell: Cell) -> Result<Array2<f64>> {
        let obs = self.observe_iq(cell)?;
        let f = features::extract(self.cfg.observation.feature, &obs)?;
        let n = f.values.len();
        Ok(f.values.into_shape_with_order((n, 1)).expect("contiguous"))
    }

    /// Observation at the agent's current cell.
    pub fn assemble_observation(&mut self) -> Result<Observation> {
        let cell = self
            .state
            .as_ref()
            .ok_or_else(|| Error::Usage("no active episode".into()))?
            .agent_cell;
        match self.cfg.observation.mode {
            ObsMode::StatsGoal => {
                let d = self.cfg.observation.feature.dim().expect("validated");
                let current = self.feature_slice(cell)?;
                let current = self.normalizer.apply(current.view())?;
                let goal = self.normalizer.apply(
                    self.goal_slice
                        .as_ref()
                        .ok_or_else(|| Error::Usage("goal slice missing".into()))?
                        .view(),
                )?;
                let mut out = Array3::zeros((2, N_ANTENNAS, d));
                for (slot, src) in [current, goal].iter().enumerate() {
                    for (k, v) in src.iter().enumerate() {
                        out[[slot, k / d, k % d]] = *v;
                    }
                }
                Ok(Observation::Stats(out))
            }
            ObsMode::RawIq => {
                let obs = self.observe_iq(cell)?;
                let raw = features::raw_channels(&obs);
                Ok(Observation::Raw(self.normalizer.apply(raw.view())?))
            }
        }
    }

    /// Fits the observation normalizer on `n_draws` noisy measurements at random
    /// (agent, goal) configurations.
    pub fn fit_normalizer(cfg: &EnvConfig, n_draws: usize, seed: u64) -> Result<Normalizer> {
        cfg.validate()?;
        if n_draws == 0 {
            return Err(Error::Argument("normalizer fit needs at least one draw".into()));
        }
        let synth = Synthesizer::new(&cfg.scene, cfg.array.clone(), N_SAMPLES)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.grid.n_cells();
        let mut tensors = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            let goal = cfg.grid.cell_at(rng.random_range(0..n));
            let cell = cfg.grid.cell_at(rng.random_range(0..n));
            let scene = cfg.scene_for_goal(goal)?;
            let rx = cfg.grid.cell_to_position(cell)?;
            let mut samples = synth.clean_with(&scene, rx, &cfg.array_at(cell))?;
            add_noise(&mut samples, scene.noise_power, &mut rng);
            let obs = IQObservation { samples, rx_pos: rx };
            let t = match cfg.observation.mode {
                ObsMode::StatsGoal => {
                    let f = features::extract(cfg.observation.feature, &obs)?;
                    let len = f.values.len();
                    f.values.into_shape_with_order((len, 1)).expect("contiguous")
                }
                ObsMode::RawIq => features::raw_channels(&obs),
            };
            tensors.push(t);
        }
        Normalizer::fit(
            tensors.iter().map(ArrayView2::from),
            format!("env-draws:{n_draws}:seed:{seed}"),
        )
    }
}
