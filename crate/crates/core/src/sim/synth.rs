//! Baseband synthesis of the received multipath signal
//! `y_i(t) = sum_l alpha_l a_i(theta_l, phi_l) s(t - tau_l) + n_i(t)`.
//!
//! The transmitted waveform is periodic over the observation window and
//! strictly band-limited (the Nyquist bin is empty), so fractional delays are
//! exact phase ramps in the frequency domain.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use super::{array::response_for_direction, trace_paths, ArrayGeometry, Scene, Vec3, N_ANTENNAS};
use crate::{Error, Result};

/// Complex IQ samples from the four array elements at one receiver position.
#[derive(Debug, Clone, PartialEq)]
pub struct IQObservation {
    /// `(antenna, sample)`.
    pub samples: Array2<Complex64>,
    pub rx_pos: Vec3,
}

impl IQObservation {
    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Transmitted waveform and its Fourier coefficients
/// (`samples = inverse_dft(coeffs)`, unnormalized).
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub coeffs: Vec<Complex64>,
}

impl Waveform {
    /// Unit-average-power complex white noise occupying every bin but Nyquist.
    pub fn generate(seed: u64, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Argument("waveform needs at least one sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nyquist = (n_samples % 2 == 0).then_some(n_samples / 2).filter(|&k| k > 0);
        let occupied = n_samples - usize::from(nyquist.is_some());
        let scale = FRAC_1_SQRT_2 / (occupied as f64).sqrt();
        let mut coeffs: Vec<Complex64> = (0..n_samples)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * scale
            })
            .collect();
        if let Some(k) = nyquist {
            coeffs[k] = Complex64::new(0.0, 0.0);
        }
        let mut samples = coeffs.clone();
        FftPlanner::new().plan_fft_inverse(n_samples).process(&mut samples);
        Ok(Self { samples, coeffs })
    }
}

/// Transmitted baseband waveform `s(t)` for the scene's seed.
pub fn synthesize_waveform(scene: &Scene, n_samples: usize) -> Result<Vec<Complex64>> {
    Ok(Waveform::generate(scene.seed, n_samples)?.samples)
}

/// Reusable synthesis state for one waveform seed and array.
///
/// Holds the waveform spectrum and FFT plan so repeated observations only pay
/// for path tracing and four inverse transforms.
#[derive(Clone)]
pub struct Synthesizer {
    array: ArrayGeometry,
    seed: u64,
    waveform: Waveform,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Synthesizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Synthesizer")
            .field("seed", &self.seed)
            .field("n_samples", &self.waveform.samples.len())
            .finish()
    }
}

impl Synthesizer {
    pub fn new(scene: &Scene, array: ArrayGeometry, n_samples: usize) -> Result<Self> {
        let waveform = Waveform::generate(scene.seed, n_samples)?;
        let ifft = FftPlanner::new().plan_fft_inverse(n_samples);
        Ok(Self {
            array,
            seed: scene.seed,
            waveform,
            ifft,
        })
    }

    pub fn array(&self) -> &ArrayGeometry {
        &self.array
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    pub fn n_samples(&self) -> usize {
        self.waveform.samples.len()
    }

    /// Noise-free received samples at `rx_pos`.
    pub fn clean(&self, scene: &Scene, rx_pos: Vec3) -> Result<Array2<Complex64>> {
        self.clean_with(scene, rx_pos, &self.array)
    }

    pub fn clean_with(&self, scene: &Scene, rx_pos: Vec3, array: &ArrayGeometry) -> Result<Array2<Complex64>> {
        if scene.seed != self.seed {
            return Err(Error::Argument(format!(
                "synthesizer built for waveform seed {}, scene uses {}",
                self.seed, scene.seed
            )));
        }
        let paths = trace_paths(scene, rx_pos)?;
        let n = self.n_samples();
        let half = n / 2;
        let bin_hz = scene.sample_rate() / n as f64;

        // H_i[k] = sum_l alpha_l a_i(l) exp(-j 2 pi f_k tau_l)
        let mut spectra = vec![Complex64::new(0.0, 0.0); N_ANTENNAS * n];
        let mut ramp = vec![Complex64::new(0.0, 0.0); half + 1];
        for p in &paths {
            let gains = response_for_direction(array, p.arrival_direction(), scene.carrier_freq_hz)
                .map(|a| a * p.attenuation);
            let step_angle = -2.0 * PI * bin_hz * p.delay_s;
            let step = Complex64::from_polar(1.0, step_angle);
            let mut cur = Complex64::new(1.0, 0.0);
            for (m, slot) in ramp.iter_mut().enumerate() {
                // re-anchor periodically so the recurrence cannot drift
                if m % 64 == 0 {
                    cur = Complex64::from_polar(1.0, step_angle * m as f64);
                }
                *slot = cur;
                cur *= step;
            }
            for (i, g) in gains.iter().enumerate() {
                let row = &mut spectra[i * n..(i + 1) * n];
                let (pos, neg) = row.split_at_mut(half.min(n - 1) + 1);
                for (slot, r) in pos.iter_mut().zip(&ramp) {
                    *slot += g * r;
                }
                // bins n-1, n-2, ... hold negative frequencies -1, -2, ...
                for (slot, r) in neg.iter_mut().rev().zip(&ramp[1..]) {
                    *slot += g * r.conj();
                }
            }
        }

        let coeffs = &self.waveform.coeffs;
        let mut out = Array2::<Complex64>::zeros((N_ANTENNAS, n));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..N_ANTENNAS {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = coeffs[k] * spectra[i * n + k];
            }
            self.ifft.process(&mut buf);
            out.row_mut(i).iter_mut().zip(&buf).for_each(|(o, b)| *o = *b);
        }
        Ok(out)
    }

    /// Received samples with fresh receiver noise drawn from `rng`.
    pub fn observe<R: Rng + ?Sized>(&self, scene: &Scene, rx_pos: Vec3, rng: &mut R) -> Result<IQObservation> {
        let mut samples = self.clean(scene, rx_pos)?;
        add_noise(&mut samples, scene.noise_power, rng);
        Ok(IQObservation { samples, rx_pos })
    }
}

/// Adds circular complex Gaussian noise of variance `power` to every sample.
pub fn add_noise<R: Rng + ?Sized>(samples: &mut Array2<Complex64>, power: f64, rng: &mut R) {
    if power <= 0.0 {
        return;
    }
    let sd = (power / 2.0).sqrt();
    for z in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(re * sd, im * sd);
    }
}

/// One-shot synthesis of a full observation (1024 samples per antenna).
pub fn synthesize_iq<R: Rng + ?Sized>(
    scene: &Scene,
    array: &ArrayGeometry,
    rx_pos: Vec3,
    rng: &mut R,
) -> Result<IQObservation> {
    Synthesizer::new(scene, array.clone(), super::N_SAMPLES)?.observe(scene, rx_pos, rng)
}
