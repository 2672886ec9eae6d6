//! Image-source enumeration of specular paths inside a rectangular hall.
//!
//! Along each axis with length `L` and source coordinate `s`, the images sit
//! at `(1 - 2q) s + 2 n L` for `q in {0, 1}` and integer `n`. Such an image has
//! bounced `|n - q|` times off the lower wall and `|n|` times off the upper
//! wall. A 3-D image is any combination of per-axis images, and its order is
//! the total bounce count.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Scene, Vec3, SPEED_OF_LIGHT};
use crate::{Error, Result};

/// One specular path from the emitter to the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    /// Free-space loss times wall reflections times carrier phase.
    pub attenuation: Complex64,
    pub delay_s: f64,
    /// Direction from the receiver toward the (image) source.
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub reflections: u32,
}

impl PropagationPath {
    pub fn length_m(&self) -> f64 {
        self.delay_s * SPEED_OF_LIGHT
    }

    /// Unit vector pointing from the receiver toward the arriving wavefront's source.
    pub fn arrival_direction(&self) -> Vec3 {
        let (se, ce) = self.elevation_rad.sin_cos();
        let (sa, ca) = self.azimuth_rad.sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }
}

#[derive(Debug, Clone, Copy)]
struct AxisImage {
    coord: f64,
    lower: u32,
    upper: u32,
}

fn axis_images(source: f64, len: f64, max_order: u32) -> Vec<AxisImage> {
    let k = max_order as i64;
    let mut out = Vec::new();
    for n in -k..=k {
        for q in 0..=1i64 {
            let lower = (n - q).unsigned_abs() as u32;
            let upper = n.unsigned_abs() as u32;
            if lower + upper > max_order {
                continue;
            }
            let sign = (1 - 2 * q) as f64;
            out.push(AxisImage {
                coord: sign * source + 2.0 * n as f64 * len,
                lower,
                upper,
            });
        }
    }
    out
}

/// Direct path plus every image-source reflection up to the scene's maximum order,
/// sorted by delay.
pub fn trace_paths(scene: &Scene, rx_pos: Vec3) -> Result<Vec<PropagationPath>> {
    if !rx_pos.is_finite() || !scene.contains(rx_pos) {
        return Err(Error::Domain(format!(
            "receiver {rx_pos:?} not strictly inside hall {:?}",
            scene.hall_dims
        )));
    }
    if rx_pos.distance(scene.emitter_pos) < 1e-9 {
        return Err(Error::DegenerateGeometry(format!(
            "receiver coincides with emitter at {rx_pos:?}"
        )));
    }

    let order = scene.max_reflection_order;
    let per_axis: Vec<Vec<AxisImage>> = (0..3)
        .map(|a| axis_images(scene.emitter_pos.component(a), scene.hall_dims.component(a), order))
        .collect();

    let lambda = scene.wavelength();
    let gamma = &scene.wall_reflectivity;
    let mut paths = Vec::new();
    for ix in &per_axis[0] {
        for iy in &per_axis[1] {
            let xy = ix.lower + ix.upper + iy.lower + iy.upper;
            if xy > order {
                continue;
            }
            for iz in &per_axis[2] {
                let total = xy + iz.lower + iz.upper;
                if total > order {
                    continue;
                }
                let image = Vec3::new(ix.coord, iy.coord, iz.coord);
                let to_src = image - rx_pos;
                let r = to_src.norm();
                let delay = r / SPEED_OF_LIGHT;

                let mut refl = Complex64::new(1.0, 0.0);
                for (axis, img) in [ix, iy, iz].into_iter().enumerate() {
                    refl *= gamma[2 * axis].powu(img.lower) * gamma[2 * axis + 1].powu(img.upper);
                }
                let spreading = lambda / (4.0 * PI * r);
                let carrier = Complex64::from_polar(1.0, -2.0 * PI * scene.carrier_freq_hz * delay);

                let u = to_src * (1.0 / r);
                paths.push(PropagationPath {
                    attenuation: refl * spreading * carrier,
                    delay_s: delay,
                    azimuth_rad: u.y.atan2(u.x),
                    elevation_rad: u.z.clamp(-1.0, 1.0).asin(),
                    reflections: total,
                });
            }
        }
    }
    paths.sort_by(|a, b| a.delay_s.total_cmp(&b.delay_s));
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn reflect(p: Vec3, axis: usize, wall: f64) -> Vec3 {
        p.with_component(axis, 2.0 * wall - p.component(axis))
    }

    /// Reflect the emitter across every ordered sequence of surfaces (no immediate
    /// repeats) up to `order`, keeping each distinct image once.
    fn brute_force_images(scene: &Scene, order: u32) -> Vec<(Vec3, u32)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut frontier = vec![(scene.emitter_pos, None::<usize>, 0u32)];
        let key = |p: Vec3| {
            (
                (p.x * 1e6).round() as i64,
                (p.y * 1e6).round() as i64,
                (p.z * 1e6).round() as i64,
            )
        };
        seen.insert(key(scene.emitter_pos));
        out.push((scene.emitter_pos, 0));
        while let Some((p, last, k)) = frontier.pop() {
            if k == order {
                continue;
            }
            for surf in 0..6 {
                if Some(surf) == last {
                    continue;
                }
                let axis = surf / 2;
                let wall = if surf % 2 == 0 { 0.0 } else { scene.hall_dims.component(axis) };
                let q = reflect(p, axis, wall);
                if seen.insert(key(q)) {
                    out.push((q, k + 1));
                }
                frontier.push((q, Some(surf), k + 1));
            }
        }
        out
    }

    fn scene_with_order(order: u32) -> Scene {
        Scene {
            max_reflection_order: order,
            ..Scene::default()
        }
    }

    #[test]
    fn direct_path_only_at_order_zero() {
        let scene = Scene {
            emitter_pos: Vec3::new(10.0, 10.0, 3.0),
            ..scene_with_order(0)
        };
        let paths = trace_paths(&scene, Vec3::new(20.0, 10.0, 3.0)).unwrap();
        assert_eq!(paths.len(), 1);
        let expected = 10.0 / SPEED_OF_LIGHT;
        assert!((paths[0].delay_s - expected).abs() <= 1e-12 * expected);
        assert!((paths[0].delay_s * 1e9 - 33.356).abs() < 1e-3);
        assert_eq!(paths[0].reflections, 0);
    }

    #[test]
    fn first_order_box_has_seven_paths() {
        let paths = trace_paths(&scene_with_order(1), Vec3::new(12.0, 9.0, 1.5)).unwrap();
        assert_eq!(paths.len(), 7);
        assert_eq!(paths.iter().filter(|p| p.reflections == 1).count(), 6);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for order in 0..=3 {
            let scene = scene_with_order(order);
            let rx = Vec3::new(7.5, 21.0, 1.5);
            let paths = trace_paths(&scene, rx).unwrap();
            let mut oracle: Vec<(f64, u32)> = brute_force_images(&scene, order)
                .into_iter()
                .map(|(p, k)| (p.distance(rx) / SPEED_OF_LIGHT, k))
                .collect();
            oracle.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert_eq!(paths.len(), oracle.len(), "order {order}");
            for (p, (d, k)) in paths.iter().zip(&oracle) {
                assert!((p.delay_s - d).abs() <= 1e-12 * d);
                assert_eq!(p.reflections, *k);
            }
        }
    }

    #[test]
    fn attenuation_follows_free_space_and_reflections() {
        let scene = scene_with_order(2);
        let rx = Vec3::new(5.0, 5.0, 2.0);
        for p in trace_paths(&scene, rx).unwrap() {
            let r = p.length_m();
            let mag = 0.7f64.powi(p.reflections as i32) * scene.wavelength() / (4.0 * PI * r);
            assert!((p.attenuation.norm() - mag).abs() < 1e-12 * mag);
            let phase = Complex64::from_polar(1.0, -2.0 * PI * scene.carrier_freq_hz * p.delay_s);
            assert!((p.attenuation / p.attenuation.norm() - phase).norm() < 1e-9);
        }
    }

    #[test]
    fn direction_points_at_source() {
        let scene = scene_with_order(0);
        let rx = Vec3::new(20.0, 14.0, 1.0);
        let p = trace_paths(&scene, rx).unwrap()[0];
        let u = p.arrival_direction();
        let expected = (scene.emitter_pos - rx) * (1.0 / scene.emitter_pos.distance(rx));
        assert!((u - expected).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_receivers() {
        let scene = Scene::default();
        assert!(matches!(
            trace_paths(&scene, Vec3::new(-1.0, 5.0, 1.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            trace_paths(&scene, scene.emitter_pos),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn direct_power_decreases_with_distance() {
        let scene = Scene {
            emitter_pos: Vec3::new(5.0, 15.0, 2.0),
            ..scene_with_order(0)
        };
        let mut prev = f64::INFINITY;
        for i in 1..30 {
            let rx = Vec3::new(5.0 + i as f64, 15.0, 2.0);
            let p = trace_paths(&scene, rx).unwrap()[0].attenuation.norm_sqr();
            assert!(p < prev);
            prev = p;
        }
    }
}
