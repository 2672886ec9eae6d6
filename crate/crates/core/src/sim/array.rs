use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Vec3, GPS_L1_HZ, N_ANTENNAS, SPEED_OF_LIGHT};
use crate::{Error, Result};

/// 2x2 planar patch array. Offsets are in the array's local frame and
/// `orientation` rotates them into the hall frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub element_offsets: [Vec3; N_ANTENNAS],
    /// Row-major rotation matrix, local to hall frame.
    pub orientation: [[f64; 3]; 3],
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl ArrayGeometry {
    /// Square 2x2 grid in the local x-y plane, centered at the origin. Element
    /// `2 * row + col` sits at `((col - 0.5) d, (row - 0.5) d, 0)`.
    pub fn square(spacing_m: f64) -> Self {
        let h = spacing_m / 2.0;
        Self {
            element_offsets: [
                Vec3::new(-h, -h, 0.0),
                Vec3::new(h, -h, 0.0),
                Vec3::new(-h, h, 0.0),
                Vec3::new(h, h, 0.0),
            ],
            orientation: IDENTITY,
        }
    }

    /// Half-wavelength square array for `carrier_hz`.
    pub fn half_wavelength(carrier_hz: f64) -> Self {
        Self::square(SPEED_OF_LIGHT / carrier_hz / 2.0)
    }

    /// Element offsets rotated into the hall frame.
    pub fn world_offsets(&self) -> [Vec3; N_ANTENNAS] {
        let r = &self.orientation;
        self.element_offsets.map(|p| {
            Vec3::new(
                r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
                r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
                r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
            )
        })
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::half_wavelength(GPS_L1_HZ)
    }
}

/// Plane-wave response of each element for a wave arriving from
/// `(azimuth, elevation)`: element `i` gets `exp(j 2 pi (u . r_i) / lambda)`.
pub fn array_response(
    array: &ArrayGeometry,
    azimuth: f64,
    elevation: f64,
    carrier_freq: f64,
) -> Result<[Complex64; N_ANTENNAS]> {
    if !(carrier_freq > 0.0) {
        return Err(Error::Argument(format!("carrier frequency must be positive, got {carrier_freq}")));
    }
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    let u = Vec3::new(ce * ca, ce * sa, se);
    Ok(response_for_direction(array, u, carrier_freq))
}

pub(crate) fn response_for_direction(
    array: &ArrayGeometry,
    u: Vec3,
    carrier_freq: f64,
) -> [Complex64; N_ANTENNAS] {
    let k = 2.0 * PI * carrier_freq / SPEED_OF_LIGHT;
    array.world_offsets().map(|r| Complex64::from_polar(1.0, k * u.dot(r)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const F: f64 = GPS_L1_HZ;

    #[test]
    fn broadside_phases_equal() {
        let a = array_response(&ArrayGeometry::default(), 0.3, PI / 2.0, F).unwrap();
        for z in &a {
            assert!((z - a[0]).norm() < 1e-12);
            assert!((z.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn endfire_half_wavelength_is_pi() {
        let a = array_response(&ArrayGeometry::default(), 0.0, 0.0, F).unwrap();
        // Elements 0 and 1 are separated by lambda/2 along x.
        let dphi = (a[1] * a[0].conj()).arg();
        assert!((dphi.abs() - PI).abs() < 1e-12);
        // Elements 0 and 2 are separated along y only.
        assert!((a[2] * a[0].conj()).arg().abs() < 1e-12);
    }

    #[test]
    fn matches_direct_plane_wave_evaluation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let arr = ArrayGeometry::default();
        let lambda = SPEED_OF_LIGHT / F;
        for _ in 0..200 {
            let az = rng.random_range(-PI..PI);
            let el = rng.random_range(-PI / 2.0..PI / 2.0);
            let a = array_response(&arr, az, el, F).unwrap();
            for (i, off) in arr.element_offsets.iter().enumerate() {
                let path = off.x * el.cos() * az.cos() + off.y * el.cos() * az.sin() + off.z * el.sin();
                let phase = 2.0 * PI * path / lambda;
                let want = Complex64::new(phase.cos(), phase.sin());
                assert!((a[i] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn offsets_symmetric_under_half_turn() {
        let arr = ArrayGeometry::default();
        for p in arr.element_offsets {
            assert!(arr.element_offsets.iter().any(|q| (*q + p).norm() < 1e-15));
        }
    }

    #[test]
    fn rejects_nonpositive_carrier() {
        assert!(array_response(&ArrayGeometry::default(), 0.0, 0.0, 0.0).is_err());
    }
}
