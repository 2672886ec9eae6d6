//! Observation-grid files: noise-free IQ at every grid cell for one scene.
//!
//! Layout: the magic `RFSGRID\0`, a little-endian u64 header length, the
//! JSON header, then 32-bit float I/Q pairs ordered by cell (grid order),
//! antenna, sample.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::env::{ArrayMount, Cell, EnvConfig, PolarGrid};
use crate::io::write_atomic;
use crate::sim::{ArrayGeometry, Scene, Synthesizer, N_ANTENNAS, N_SAMPLES};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RFSGRID\0";
pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub version: u32,
    pub scene: Scene,
    pub array: ArrayGeometry,
    pub array_mount: ArrayMount,
    pub grid: PolarGrid,
    pub n_antennas: usize,
    pub n_samples: usize,
    /// Cells in payload order.
    pub cells: Vec<Cell>,
}

impl GridHeader {
    fn entry_floats(&self) -> usize {
        2 * self.n_antennas * self.n_samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub header: GridHeader,
    payload: Vec<f32>,
}

impl GridDataset {
    /// Synthesizes the noise-free grid for `scene` with the grid and array
    /// mount of `env_cfg`.
    pub fn synthesize(env_cfg: &EnvConfig, scene: &Scene) -> Result<Self> {
        scene.validate()?;
        env_cfg.grid.validate(scene)?;
        let synth = Synthesizer::new(scene, env_cfg.array.clone(), N_SAMPLES)?;
        let cells: Vec<Cell> = env_cfg.grid.cells().collect();
        let mut payload = Vec::with_capacity(cells.len() * 2 * N_ANTENNAS * N_SAMPLES);
        for &cell in &cells {
            let rx = env_cfg.grid.cell_to_position(cell)?;
            let iq = synth.clean_with(scene, rx, &env_cfg.array_at(cell))?;
            for z in iq.iter() {
                payload.push(z.re as f32);
                payload.push(z.im as f32);
            }
        }
        Ok(Self {
            header: GridHeader {
                version: GRID_VERSION,
                scene: scene.clone(),
                array: env_cfg.array.clone(),
                array_mount: env_cfg.array_mount,
                grid: env_cfg.grid.clone(),
                n_antennas: N_ANTENNAS,
                n_samples: N_SAMPLES,
                cells,
            },
            payload,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.header.cells.len()
    }

    /// Stored samples of `cell` as `(antenna, sample)`.
    pub fn entry(&self, cell: Cell) -> Result<Array2<Complex64>> {
        let idx = self
            .header
            .cells
            .iter()
            .position(|&c| c == cell)
            .ok_or_else(|| Error::Argument(format!("cell {cell:?} is not in the dataset")))?;
        let n = self.header.entry_floats();
        let raw = &self.payload[idx * n..(idx + 1) * n];
        let values: Vec<Complex64> = raw
            .chunks_exact(2)
            .map(|p| Complex64::new(f64::from(p[0]), f64::from(p[1])))
            .collect();
        Ok(Array2::from_shape_vec((self.header.n_antennas, self.header.n_samples), values).expect("entry size"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Format { path: path.into(), msg };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not an observation-grid file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: GridHeader = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.version != GRID_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        let payload_bytes = &bytes[16 + hlen..];
        let expected = header.cells.len() * header.entry_floats() * 4;
        if payload_bytes.len() != expected {
            return Err(bad(format!("payload has {} bytes, header implies {expected}", payload_bytes.len())));
        }
        let payload: Vec<f32> = payload_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if payload.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite sample".into()));
        }
        Ok(Self { header, payload })
    }

    /// Writes the file atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
