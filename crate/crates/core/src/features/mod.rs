//! Per-antenna statistics of IQ observations and channel-wise z-scoring.

mod normalize;

pub use normalize::Normalizer;

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::sim::{IQObservation, N_ANTENNAS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Mean,
    Std,
    Rms,
    PhaseDiff,
    RawIq,
}

impl FeatureKind {
    pub const STATISTICS: [FeatureKind; 4] = [
        FeatureKind::Mean,
        FeatureKind::Std,
        FeatureKind::Rms,
        FeatureKind::PhaseDiff,
    ];

    /// Values per antenna; `None` for raw IQ, which is not summarized.
    pub fn dim(self) -> Option<usize> {
        match self {
            FeatureKind::Mean | FeatureKind::Std => Some(2),
            FeatureKind::Rms => Some(1),
            FeatureKind::PhaseDiff => Some(N_ANTENNAS - 1),
            FeatureKind::RawIq => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mean => "mean",
            FeatureKind::Std => "std",
            FeatureKind::Rms => "rms",
            FeatureKind::PhaseDiff => "phase_diff",
            FeatureKind::RawIq => "raw_iq",
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Argument(format!("unknown feature kind {s:?}")))
    }
}

/// `(antenna, d)` summary of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Array2<f64>,
}

impl FeatureVector {
    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn per_antenna<F>(obs: &IQObservation, kind: FeatureKind, f: F) -> FeatureVector
where
    F: Fn(ndarray::ArrayView1<Complex64>) -> Vec<f64>,
{
    let d = kind.dim().expect("statistical kind");
    let mut values = Array2::zeros((obs.samples.nrows(), d));
    for (i, row) in obs.samples.rows().into_iter().enumerate() {
        for (j, v) in f(row).into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    FeatureVector { kind, values }
}

/// `[mean(I), mean(Q)]` per antenna.
pub fn feat_mean(obs: &IQObservation) -> FeatureVector {
    per_antenna(obs, FeatureKind::Mean, |row| {
        let n = row.len() as f64;
        let s = row.iter().fold(Complex64::new(0.0, 0.0), |a, z| a + z);
        vec![s.re / n, s.im / n]
    })
}

/// Population standard deviation of I and Q per antenna.
pub fn feat_std(obs: &IQObservation) -> FeatureVector {
    per_antenna(obs, FeatureKind::Std, |row| {
        let n = row.len() as f64;
        let m = row.iter().fold(Complex64::new(0.0, 0.0), |a, z| a + z) / n;
        let (vi, vq) = row.iter().fold((0.0, 0.0), |(vi, vq), z| {
            let d = z - m;
            (vi + d.re * d.re, vq + d.im * d.im)
        });
        vec![(vi / n).sqrt(), (vq / n).sqrt()]
    })
}

/// `sqrt(mean |y|^2)` per antenna.
pub fn feat_rms(obs: &IQObservation) -> FeatureVector {
    per_antenna(obs, FeatureKind::Rms, |row| {
        let p = row.iter().map(|z| z.norm_sqr()).sum::<f64>() / row.len() as f64;
        vec![p.sqrt()]
    })
}

/// For antenna `i`, the circular mean of `arg(y_i[n] conj(y_j[n]))` over samples,
/// for every other antenna `j` in ascending order. Values lie in `(-pi, pi]`.
pub fn feat_phase_diff(obs: &IQObservation) -> Result<FeatureVector> {
    let s = &obs.samples;
    let n_ant = s.nrows();
    for i in 0..n_ant {
        if s.row(i).iter().all(|z| z.norm_sqr() == 0.0) {
            return Err(Error::UndefinedPhase { antenna: i });
        }
    }
    // Pairwise sums of unit phasors; entry (j, i) is the conjugate of (i, j).
    let mut sums = Array2::<Complex64>::zeros((n_ant, n_ant));
    for i in 0..n_ant {
        for j in (i + 1)..n_ant {
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in s.row(i).iter().zip(s.row(j).iter()) {
                let p = a * b.conj();
                let m2 = p.norm_sqr();
                if m2 > 0.0 {
                    acc += p * m2.sqrt().recip();
                }
            }
            sums[[i, j]] = acc;
            sums[[j, i]] = acc.conj();
        }
    }
    let mut values = Array2::zeros((n_ant, n_ant - 1));
    for i in 0..n_ant {
        for (col, j) in (0..n_ant).filter(|&j| j != i).enumerate() {
            values[[i, col]] = wrap_phase(sums[[i, j]].arg());
        }
    }
    Ok(FeatureVector {
        kind: FeatureKind::PhaseDiff,
        values,
    })
}

/// Maps an angle from `atan2` into `(-pi, pi]`.
fn wrap_phase(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Extracts one statistical feature kind.
pub fn extract(kind: FeatureKind, obs: &IQObservation) -> Result<FeatureVector> {
    match kind {
        FeatureKind::Mean => Ok(feat_mean(obs)),
        FeatureKind::Std => Ok(feat_std(obs)),
        FeatureKind::Rms => Ok(feat_rms(obs)),
        FeatureKind::PhaseDiff => feat_phase_diff(obs),
        FeatureKind::RawIq => Err(Error::Argument(
            "raw_iq is not a statistical feature; use raw_channels".into(),
        )),
    }
}

/// Splits samples into `2 * n_antennas` real rows: `I_0, Q_0, I_1, Q_1, ...`.
pub fn raw_channels(obs: &IQObservation) -> Array2<f64> {
    let (n_ant, n) = obs.samples.dim();
    let mut out = Array2::zeros((2 * n_ant, n));
    for i in 0..n_ant {
        for k in 0..n {
            let z = obs.samples[[i, k]];
            out[[2 * i, k]] = z.re;
            out[[2 * i + 1, k]] = z.im;
        }
    }
    out
}
