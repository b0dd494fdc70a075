use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::FeatureVector;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature training-split mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Fits from training features, skipping entries flagged missing.
    pub fn fit(train: &[FeatureVector]) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::invalid(format!(
                "normalizer needs at least 2 training instances, got {}",
                train.len()
            )));
        }
        let dim = train[0].values.len();
        if train.iter().any(|f| f.values.len() != dim) {
            return Err(Error::invalid("feature vectors differ in dimension"));
        }
        let mut mean = vec![0.0; dim];
        let mut scale = vec![STD_FLOOR; dim];
        for d in 0..dim {
            let present = || train.iter().filter(|f| !f.missing[d]).map(|f| f.values[d]);
            let n = present().count();
            if n == 0 {
                continue;
            }
            let mu = present().sum::<f64>() / n as f64;
            let var = present().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            mean[d] = mu;
            scale[d] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(f - mean) / scale` for present entries, zero for missing ones.
    pub fn apply(&self, feat: &FeatureVector) -> Result<FeatureVector> {
        if feat.values.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature dim {} does not match normalizer dim {}",
                feat.values.len(),
                self.dim()
            )));
        }
        let values = feat
            .values
            .iter()
            .zip(&feat.missing)
            .enumerate()
            .map(|(i, (&v, &m))| if m { 0.0 } else { (v - self.mean[i]) / self.scale[i] })
            .collect();
        Ok(FeatureVector { values, missing: feat.missing.clone() })
    }
}
