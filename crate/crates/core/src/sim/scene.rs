use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Vec3;
use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// GPS L1 center frequency.
pub const GPS_L1_HZ: f64 = 1.575_42e9;

/// Samples per antenna in one observation.
pub const N_SAMPLES: usize = 1024;

pub const N_ANTENNAS: usize = 4;

/// Planar boundary of the rectangular hall, in the order used by
/// [`Scene::wall_reflectivity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Surface {
    pub const ALL: [Surface; 6] = [
        Surface::XMin,
        Surface::XMax,
        Surface::YMin,
        Surface::YMax,
        Surface::ZMin,
        Surface::ZMax,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn axis(self) -> usize {
        self.index() / 2
    }

    pub fn is_upper(self) -> bool {
        self.index() % 2 == 1
    }
}

/// Rectangular hall `[0, Lx] x [0, Ly] x [0, Lz]` with one emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scene {
    pub hall_dims: Vec3,
    /// Complex reflection coefficient per surface, ordered as [`Surface::ALL`].
    pub wall_reflectivity: [Complex64; 6],
    pub emitter_pos: Vec3,
    pub carrier_freq_hz: f64,
    /// Complex baseband bandwidth; also the sample rate.
    pub bandwidth_hz: f64,
    pub max_reflection_order: u32,
    /// Variance of the additive complex Gaussian receiver noise.
    pub noise_power: f64,
    /// Seed of the transmitted waveform.
    pub seed: u64,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            hall_dims: Vec3::new(40.0, 30.0, 8.0),
            wall_reflectivity: [Complex64::new(0.7, 0.0); 6],
            emitter_pos: Vec3::new(26.0, 18.0, 2.0),
            carrier_freq_hz: GPS_L1_HZ,
            bandwidth_hz: 100e6,
            max_reflection_order: 2,
            noise_power: 1e-8,
            seed: 0,
        }
    }
}

impl Scene {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    pub fn sample_rate(&self) -> f64 {
        self.bandwidth_hz
    }

    /// Same scene with every surface sharing one reflection coefficient.
    pub fn with_uniform_reflectivity(mut self, gamma: Complex64) -> Self {
        self.wall_reflectivity = [gamma; 6];
        self
    }

    /// True if `p` lies strictly inside the hall.
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| {
            let v = p.component(a);
            v > 0.0 && v < self.hall_dims.component(a)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.hall_dims;
        if !(d.is_finite() && d.x > 0.0 && d.y > 0.0 && d.z > 0.0) {
            return Err(Error::Domain(format!("hall dimensions must be positive, got {d:?}")));
        }
        if !self.emitter_pos.is_finite() || !self.contains(self.emitter_pos) {
            return Err(Error::Domain(format!(
                "emitter {:?} not strictly inside hall {:?}",
                self.emitter_pos, d
            )));
        }
        if let Some(g) = self.wall_reflectivity.iter().find(|g| !(g.norm() <= 1.0)) {
            return Err(Error::Domain(format!("wall reflectivity {g} exceeds unit magnitude")));
        }
        if !(self.bandwidth_hz > 0.0 && self.carrier_freq_hz > self.bandwidth_hz) {
            return Err(Error::Domain(format!(
                "need carrier > bandwidth > 0, got carrier {} bandwidth {}",
                self.carrier_freq_hz, self.bandwidth_hz
            )));
        }
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return Err(Error::Domain(format!("noise power {} invalid", self.noise_power)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scene_is_valid() {
        Scene::default().validate().unwrap();
    }

    #[test]
    fn rejects_emitter_on_wall() {
        let mut s = Scene::default();
        s.emitter_pos.x = 0.0;
        assert!(matches!(s.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_active_walls_and_bad_band() {
        let s = Scene::default().with_uniform_reflectivity(Complex64::new(0.8, 0.8));
        assert!(s.validate().is_err());
        let s = Scene {
            bandwidth_hz: 2e9,
            ..Scene::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_round_trip_rejects_unknown_keys() {
        let s = Scene::default();
        let text = serde_json::to_string(&s).unwrap();
        let back: Scene = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = text.replacen("\"seed\"", "\"sead\"", 1);
        assert!(serde_json::from_str::<Scene>(&bad).is_err());
    }
}
