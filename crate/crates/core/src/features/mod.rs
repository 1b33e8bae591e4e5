//! Anomaly feature pipeline: temporal averaging of log-likelihood tensors,
//! per-cell standardization against training bona-fide statistics, PCA with
//! an unexplained-variance residual, and a final standardization against
//! validation bona-fide features.

pub mod io;
pub mod pca;

use ndarray::Array3;

use crate::density::PixelLogLikTensor;
use crate::error::{Error, Result};

pub use pca::PcaModel;

/// Standard deviations below this are floored; the transformed value of a
/// constant cell is 0.
pub const STD_FLOOR: f64 = 1e-8;

/// Element-wise mean of a stack of log-likelihood tensors.
pub fn temporal_average(tensors: &[PixelLogLikTensor]) -> Result<Array3<f64>> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::invalid("empty tensor sequence"))?;
    let dim = first.grid.dim();
    let mut acc = Array3::<f64>::zeros(dim);
    for t in tensors {
        if t.grid.dim() != dim {
            return Err(Error::invalid("tensor shapes differ"));
        }
        acc += &t.grid;
    }
    acc /= tensors.len() as f64;
    Ok(acc)
}

/// Per-cell mean/std over training bona-fide temporally-averaged tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelStandardizer {
    pub mean: Array3<f64>,
    pub std: Array3<f64>,
}

fn moments(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt().max(STD_FLOOR))
}

impl PixelStandardizer {
    /// Fit population mean/std per grid cell.
    pub fn fit(grids: &[Array3<f64>]) -> Result<Self> {
        if grids.len() < 2 {
            return Err(Error::invalid("insufficient data for variance"));
        }
        let dim = grids[0].dim();
        if grids.iter().any(|g| g.dim() != dim) {
            return Err(Error::invalid("grid shapes differ"));
        }
        let mut mean = Array3::zeros(dim);
        let mut std = Array3::zeros(dim);
        for ((idx, m), s) in mean.indexed_iter_mut().zip(std.iter_mut()) {
            let (mu, sigma) = moments(grids.iter().map(move |g| g[idx]), grids.len());
            *m = mu;
            *s = sigma;
        }
        Ok(PixelStandardizer { mean, std })
    }

    pub fn transform(&self, grid: &Array3<f64>) -> Result<Array3<f64>> {
        if grid.dim() != self.mean.dim() {
            return Err(Error::invalid("grid shape does not match standardizer"));
        }
        Ok((grid - &self.mean) / &self.std)
    }
}

/// PCA coordinates augmented with the distance to the PCA hyperplane.
/// The residual occupies the last slot; once standardized it is a z-score
/// like every other dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyFeature {
    values: Vec<f64>,
    standardized: bool,
}

impl AnomalyFeature {
    pub fn from_projection(coords: Vec<f64>, residual: f64) -> Self {
        debug_assert!(residual >= 0.0);
        let mut values = coords;
        values.push(residual);
        AnomalyFeature {
            values,
            standardized: false,
        }
    }

    /// Rebuild an already-standardized feature, e.g. when loading cached
    /// feature vectors from disk.
    pub fn from_standardized(values: Vec<f64>) -> Self {
        AnomalyFeature {
            values,
            standardized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn residual(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }
}

/// Project a vector into the PCA space and measure what the hyperplane
/// fails to explain.
pub fn project(pca: &PcaModel, vector: &[f64]) -> Result<AnomalyFeature> {
    let (coords, residual) = pca.project_with_residual(vector)?;
    Ok(AnomalyFeature::from_projection(coords, residual))
}

/// Per-dimension mean/std over validation bona-fide augmented features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStandardizer {
    pub fn fit(features: &[AnomalyFeature]) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::invalid("insufficient data for variance"));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::invalid("feature lengths differ"));
        }
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        for d in 0..dim {
            let (mu, sigma) = moments(features.iter().map(|f| f.values[d]), features.len());
            mean[d] = mu;
            std[d] = sigma;
        }
        Ok(FeatureStandardizer { mean, std })
    }

    pub fn standardize(&self, feature: &AnomalyFeature) -> Result<AnomalyFeature> {
        if feature.len() != self.mean.len() {
            return Err(Error::invalid("feature length does not match standardizer"));
        }
        let values = feature
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        Ok(AnomalyFeature {
            values,
            standardized: true,
        })
    }
}

/// The fitted feature front-end: pixel standardizer, PCA, and feature
/// standardizer, applied in sequence to a temporally-averaged grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePipeline {
    pub pixel: PixelStandardizer,
    pub pca: PcaModel,
    pub feature: FeatureStandardizer,
}

impl FeaturePipeline {
    /// Output dimensionality (PCA coordinates plus residual).
    pub fn feature_len(&self) -> usize {
        self.pca.component_count() + 1
    }

    /// Standardized anomaly feature for one temporally-averaged grid.
    pub fn features_for_grid(&self, grid: &Array3<f64>) -> Result<AnomalyFeature> {
        let standardized = self.pixel.transform(grid)?;
        let flat: Vec<f64> = standardized.iter().copied().collect();
        let projected = project(&self.pca, &flat)?;
        self.feature.standardize(&projected)
    }
}
