use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::features::{extract, FeatureKind};
use crate::io::write_atomic;
use crate::sim::{Scene, Synthesizer, N_SAMPLES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub ring: usize,
    pub sector: usize,
    pub x: f64,
    pub y: f64,
    /// Feature-vector norm averaged over noise draws.
    pub value: f64,
    /// Variance of the norm over the draws.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub feature_kind: FeatureKind,
    pub scene_id: String,
    pub cells: Vec<HeatmapCell>,
}

/// Short content hash identifying a scene.
pub fn scene_id(scene: &Scene) -> Result<String> {
    let bytes = serde_json::to_vec(scene)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

/// Per-cell magnitude and spread of a feature over `n_draws` noisy
/// observations of the (fixed-emitter) scene, with the grid and array mount
/// of `env_cfg`.
pub fn feature_heatmap(
    env_cfg: &EnvConfig,
    scene: &Scene,
    kind: FeatureKind,
    n_draws: usize,
) -> Result<HeatmapGrid> {
    if kind == FeatureKind::RawIq {
        return Err(Error::Argument("heatmaps need a statistical feature kind".into()));
    }
    if n_draws == 0 {
        return Err(Error::Argument("heatmap needs at least one draw".into()));
    }
    let grid = &env_cfg.grid;
    grid.validate(scene)?;
    let synth = Synthesizer::new(scene, env_cfg.array.clone(), N_SAMPLES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(2);
    let mut cells = Vec::with_capacity(grid.n_cells());
    for cell in grid.cells() {
        let rx = grid.cell_to_position(cell)?;
        let clean = synth.clean_with(scene, rx, &env_cfg.array_at(cell))?;
        let mut norms = Vec::with_capacity(n_draws);
        for _ in 0..n_draws {
            let mut samples = clean.clone();
            crate::sim::add_noise(&mut samples, scene.noise_power, &mut rng);
            let obs = crate::sim::IQObservation { samples, rx_pos: rx };
            norms.push(extract(kind, &obs)?.norm());
        }
        let m = norms.iter().sum::<f64>() / n_draws as f64;
        let var = norms.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_draws as f64;
        if !m.is_finite() || !var.is_finite() {
            return Err(Error::NonFinite(format!("heatmap value at {cell:?}")));
        }
        cells.push(HeatmapCell {
            ring: cell.ring,
            sector: cell.sector,
            x: rx.x,
            y: rx.y,
            value: m,
            variance: var,
        });
    }
    Ok(HeatmapGrid {
        feature_kind: kind,
        scene_id: scene_id(scene)?,
        cells,
    })
}

const HEADER: &str = "ring,sector,x,y,value,variance";

/// Writes the heatmap as CSV (atomically).
pub fn export_heatmap(path: &Path, grid: &HeatmapGrid) -> Result<()> {
    let mut s = String::with_capacity(64 * (grid.cells.len() + 1));
    s.push_str(HEADER);
    s.push('\n');
    for c in &grid.cells {
        writeln!(s, "{},{},{},{},{},{}", c.ring, c.sector, c.x, c.y, c.value, c.variance).expect("string write");
    }
    write_atomic(path, s.as_bytes())
}

/// Reads the cells of a heatmap CSV.
pub fn read_heatmap(path: &Path) -> Result<Vec<HeatmapCell>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let format = |line: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(format(1, "missing header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format(i + 2, format!("expected 6 fields, got {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| format(i + 2, e.to_string()));
            let num = |s: &str| s.parse::<f64>().map_err(|e| format(i + 2, e.to_string()));
            Ok(HeatmapCell {
                ring: int(f[0])?,
                sector: int(f[1])?,
                x: num(f[2])?,
                y: num(f[3])?,
                value: num(f[4])?,
                variance: num(f[5])?,
            })
        })
        .collect()
}
