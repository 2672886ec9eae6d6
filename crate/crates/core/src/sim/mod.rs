//! Deterministic image-source multipath simulator for a 2x2 patch array.

mod array;
mod image_source;
mod scene;
mod synth;
mod vec3;

pub use array::{array_response, ArrayGeometry};
pub use image_source::{trace_paths, PropagationPath};
pub use scene::{Scene, Surface, GPS_L1_HZ, N_ANTENNAS, N_SAMPLES, SPEED_OF_LIGHT};
pub use synth::{add_noise, synthesize_iq, synthesize_waveform, IQObservation, Synthesizer, Waveform};
pub use vec3::Vec3;
