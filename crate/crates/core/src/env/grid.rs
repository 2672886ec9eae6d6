use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::sim::{Scene, Vec3};
use crate::{Error, Result};

/// Concentric-ring navigation grid around `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarGrid {
    /// Grid origin on the floor; cells sit `agent_height_m` above it.
    pub center: Vec3,
    pub n_rings: usize,
    pub n_sectors: usize,
    pub ring_spacing_m: f64,
    /// Radius of ring 0.
    pub r_min_m: f64,
    pub agent_height_m: f64,
}

impl Default for PolarGrid {
    fn default() -> Self {
        Self {
            center: Vec3::new(20.0, 15.0, 0.0),
            n_rings: 8,
            n_sectors: 16,
            ring_spacing_m: 1.5,
            r_min_m: 1.0,
            agent_height_m: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub ring: usize,
    pub sector: usize,
}

impl Cell {
    pub const fn new(ring: usize, sector: usize) -> Self {
        Self { ring, sector }
    }
}

/// Discrete moves on the polar grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Ccw1,
    Ccw2,
    Cw1,
    Cw2,
    RadialIn,
    RadialOut,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Ccw1,
        Action::Ccw2,
        Action::Cw1,
        Action::Cw2,
        Action::RadialIn,
        Action::RadialOut,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Argument(format!("action index {i} out of range")))
    }
}

impl PolarGrid {
    /// Grid centered in the floor plan of `scene`'s hall.
    pub fn centered_in(scene: &Scene) -> Self {
        Self {
            center: Vec3::new(scene.hall_dims.x / 2.0, scene.hall_dims.y / 2.0, 0.0),
            ..Self::default()
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_rings * self.n_sectors
    }

    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.ring * self.n_sectors + cell.sector
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.n_sectors, index % self.n_sectors)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_cells()).map(|i| self.cell_at(i))
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.ring < self.n_rings && cell.sector < self.n_sectors
    }

    pub fn radius(&self, ring: usize) -> f64 {
        self.r_min_m + ring as f64 * self.ring_spacing_m
    }

    pub fn azimuth(&self, sector: usize) -> f64 {
        2.0 * PI * sector as f64 / self.n_sectors as f64
    }

    pub fn cell_to_position(&self, cell: Cell) -> Result<Vec3> {
        if !self.contains(cell) {
            return Err(Error::Argument(format!(
                "cell {cell:?} outside {}x{} grid",
                self.n_rings, self.n_sectors
            )));
        }
        let r = self.radius(cell.ring);
        let (s, c) = self.azimuth(cell.sector).sin_cos();
        Ok(self.center + Vec3::new(r * c, r * s, self.agent_height_m))
    }

    /// Cell reached by `action`, and whether the agent actually moved.
    pub fn apply(&self, cell: Cell, action: Action) -> (Cell, bool) {
        let n = self.n_sectors;
        let rotate = |k: usize| Cell::new(cell.ring, (cell.sector + k) % n);
        match action {
            Action::Ccw1 => (rotate(1), true),
            Action::Ccw2 => (rotate(2), true),
            Action::Cw1 => (rotate(n - 1), true),
            Action::Cw2 => (rotate(n - 2), true),
            Action::RadialIn if cell.ring == 0 => (cell, false),
            Action::RadialIn => (Cell::new(cell.ring - 1, cell.sector), true),
            Action::RadialOut if cell.ring + 1 == self.n_rings => (cell, false),
            Action::RadialOut => (Cell::new(cell.ring + 1, cell.sector), true),
        }
    }

    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if self.n_rings < 2 || self.n_sectors < 4 {
            return Err(Error::Config(format!(
                "grid needs at least 2 rings and 4 sectors, got {}x{}",
                self.n_rings, self.n_sectors
            )));
        }
        if !(self.r_min_m > 0.0 && self.ring_spacing_m > 0.0) {
            return Err(Error::Config("ring radius and spacing must be positive".into()));
        }
        for cell in self.cells() {
            let p = self.cell_to_position(cell)?;
            if !scene.contains(p) {
                return Err(Error::Config(format!(
                    "cell {cell:?} at {p:?} lies outside the hall {:?}",
                    scene.hall_dims
                )));
            }
        }
        Ok(())
    }

    /// Action on a shortest move sequence from `from` to `to`; ties go to the
    /// lowest action index.
    pub fn geodesic_action(&self, from: Cell, to: Cell) -> Action {
        let dist = self.distances_to(to);
        Action::ALL
            .into_iter()
            .min_by_key(|&a| dist[self.cell_index(self.apply(from, a).0)])
            .expect("non-empty action set")
    }

    /// Number of moves needed to reach `target` from every cell.
    pub fn distances_to(&self, target: Cell) -> Vec<usize> {
        // Moves are reversible (CW/CCW and in/out pair up), so BFS from the
        // target gives distances toward it.
        let mut dist = vec![usize::MAX; self.n_cells()];
        let mut queue = VecDeque::new();
        dist[self.cell_index(target)] = 0;
        queue.push_back(target);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.cell_index(c)];
            for a in Action::ALL {
                let (next, moved) = self.apply(c, a);
                let i = self.cell_index(next);
                if moved && dist[i] == usize::MAX {
                    dist[i] = d + 1;
                    queue.push_back(next);
                }
            }
        }
        dist
    }
}
