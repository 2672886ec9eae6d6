//! Python bindings: the environment, feature extraction, GAE and the
//! experiment commands.

use std::path::PathBuf;

use ndarray::Array2;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rfseeker::app::{Command, RunOptions};
use rfseeker::config::ExperimentConfig;
use rfseeker::env::{Action, Cell};
use rfseeker::features::FeatureKind;
use rfseeker::sim::{IQObservation, Vec3};

fn err(e: rfseeker::Error) -> PyErr {
    match e {
        rfseeker::Error::Config(_) | rfseeker::Error::Argument(_) | rfseeker::Error::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_config(config_json: Option<&str>) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json_str(config_json.unwrap_or("{}"), std::path::Path::new("<python>")).map_err(err)
}

/// One navigation environment built from an experiment config (JSON text).
#[pyclass(unsendable)]
struct Env {
    inner: rfseeker::env::Env,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (config_json=None, seed=0))]
    fn new(config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = parse_config(config_json)?;
        let norm = rfseeker::app::fit_normalizer(&cfg).map_err(err)?;
        let inner = rfseeker::env::Env::new(cfg.env_config(), norm, seed).map_err(err)?;
        Ok(Self { inner })
    }

    /// Starts an episode; returns the flattened observation.
    #[pyo3(signature = (agent=None, goal=None))]
    fn reset(&mut self, agent: Option<(usize, usize)>, goal: Option<(usize, usize)>) -> PyResult<Vec<f64>> {
        let obs = match (agent, goal) {
            (Some(a), Some(g)) => self.inner.reset_to(Cell::new(a.0, a.1), Cell::new(g.0, g.1)),
            (None, None) => self.inner.reset(),
            _ => return Err(PyValueError::new_err("give both agent and goal cells or neither")),
        }
        .map_err(err)?;
        Ok(obs.as_slice().to_vec())
    }

    /// Applies action `0..6`; returns `(obs, reward, done, success, distance)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool, bool, f64)> {
        let a = Action::from_index(action).map_err(err)?;
        let s = self.inner.step(a).map_err(err)?;
        Ok((s.obs.as_slice().to_vec(), s.reward, s.done, s.info.success, s.info.distance))
    }

    /// Observation tensor shape.
    #[getter]
    fn obs_shape(&self) -> Vec<usize> {
        self.inner.config().observation.shape()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        Action::COUNT
    }
}

/// Feature `kind` of an `(antenna, sample)` IQ block given as real and
/// imaginary parts; returns `(antenna, d)` rows.
#[pyfunction]
fn extract_feature(kind: &str, re: Vec<Vec<f64>>, im: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let kind: FeatureKind = kind.parse().map_err(err)?;
    let rows = re.len();
    let cols = re.first().map_or(0, Vec::len);
    if im.len() != rows || re.iter().chain(&im).any(|r| r.len() != cols) || cols == 0 {
        return Err(PyValueError::new_err("re and im must be equal non-empty rectangular blocks"));
    }
    let samples = Array2::from_shape_fn((rows, cols), |(i, j)| Complex64::new(re[i][j], im[i][j]));
    let obs = IQObservation {
        samples,
        rx_pos: Vec3::new(0.0, 0.0, 0.0),
    };
    let f = rfseeker::features::extract(kind, &obs).map_err(err)?;
    Ok(f.values.rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Generalized advantage estimates; returns `(advantages, returns)`.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, bootstrap, gamma=0.997, lam=0.95))]
fn compute_gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    rfseeker::ppo::compute_gae(&rewards, &values, &dones, bootstrap, gamma, lam).map_err(err)
}

#[pyfunction]
fn explained_variance(pred: Vec<f64>, target: Vec<f64>) -> PyResult<Option<f64>> {
    rfseeker::eval::explained_variance(&pred, &target).map_err(err)
}

/// Runs an experiment command (`simulate`, `train`, `meta-train`, `eval`,
/// `heatmap`) and returns the output directory.
#[pyfunction]
#[pyo3(signature = (command, config, out=None, seed=None, checkpoint=None))]
fn run(py: Python<'_>, command: &str, config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, checkpoint: Option<PathBuf>) -> PyResult<String> {
    let cmd = match command {
        "simulate" => Command::Simulate,
        "train" => Command::Train,
        "meta-train" => Command::MetaTrain,
        "eval" => Command::Eval,
        "heatmap" => Command::Heatmap,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let opts = RunOptions {
        checkpoint,
        out,
        seed,
        verbose: false,
    };
    let dir = py.detach(|| rfseeker::app::run(cmd, &config, &opts)).map_err(err)?;
    Ok(dir.display().to_string())
}

#[pymodule]
fn rfseeker_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_function(wrap_pyfunction!(extract_feature, m)?)?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(explained_variance, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
