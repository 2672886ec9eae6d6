use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-6;
const FORMAT_VERSION: u32 = 1;

/// Channel-wise z-score transform fitted on a training set. Rows of every
/// tensor are channels; columns are pooled samples of that channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub fitted_on: String,
    pub version: u32,
}

impl Normalizer {
    /// Identity transform over `channels` channels.
    pub fn identity(channels: usize) -> Self {
        Self {
            mu: vec![0.0; channels],
            sigma: vec![1.0; channels],
            fitted_on: "identity".into(),
            version: FORMAT_VERSION,
        }
    }

    /// Population mean and standard deviation per channel over every tensor,
    /// with `sigma` floored at `1e-6`.
    pub fn fit<'a, I>(dataset: I, fitted_on: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = ArrayView2<'a, f64>>,
    {
        // Chan et al. pairwise merge of (count, mean, M2) per channel.
        let mut count = 0.0f64;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for x in dataset {
            let (c, l) = x.dim();
            if mean.is_empty() {
                mean = vec![0.0; c];
                m2 = vec![0.0; c];
            } else if c != mean.len() {
                return Err(Error::shape(&[mean.len(), l], &[c, l]));
            }
            if l == 0 {
                continue;
            }
            let nb = l as f64;
            for (ch, row) in x.rows().into_iter().enumerate() {
                let mb = row.sum() / nb;
                let m2b = row.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
                let delta = mb - mean[ch];
                let total = count + nb;
                mean[ch] += delta * nb / total;
                m2[ch] += m2b + delta * delta * count * nb / total;
            }
            count += nb;
        }
        if count == 0.0 {
            return Err(Error::Argument("cannot fit a normalizer on an empty dataset".into()));
        }
        let sigma = m2
            .iter()
            .map(|v| (v / count).sqrt().max(SIGMA_FLOOR))
            .collect();
        Ok(Self {
            mu: mean,
            sigma,
            fitted_on: fitted_on.into(),
            version: FORMAT_VERSION,
        })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.nrows() != self.channels() {
            return Err(Error::shape(&[self.channels(), x.ncols()], &[x.nrows(), x.ncols()]));
        }
        Ok(())
    }

    /// `(x - mu) / sigma` per channel.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let mut out = x.to_owned();
        for (ch, mut row) in out.rows_mut().into_iter().enumerate() {
            let (m, s) = (self.mu[ch], self.sigma[ch]);
            row.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn invert(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let mut out = x.to_owned();
        for (ch, mut row) in out.rows_mut().into_iter().enumerate() {
            let (m, s) = (self.mu[ch], self.sigma[ch]);
            row.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let n: Normalizer = serde_json::from_str(&text)?;
        if n.mu.len() != n.sigma.len() || n.sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Format {
                path: path.into(),
                msg: "normalizer needs matching mu/sigma with sigma > 0".into(),
            });
        }
        Ok(n)
    }
}
