//! Generator-based one-class detection. Two anomaly measures — the
//! aggregated video log-likelihood (anomalous when low) and the anomaly
//! energy over the tail PCA dimensions (anomalous when high) — are each
//! scored against a Gaussian fit on validation bona-fide statistics, then
//! averaged. Fitting never sees attack data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AnomalyFeature;

const SIGMA_FLOOR: f64 = 1e-8;

/// Oriented deviations cap at 8 sigma: beyond that everything is equally
/// anomalous, and the cap keeps p_BF strictly positive (and the attack
/// probability strictly below 1) in f64 arithmetic.
const DEVIATION_CAP: f64 = 8.0;

/// A detector output: probability of attack in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DetectionScore(pub f64);

impl DetectionScore {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("detection score {p} outside [0, 1]")));
        }
        Ok(DetectionScore(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Which side of the bona-fide mean counts as anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Scores below the mean are anomalous (log-likelihood).
    AnomalousBelow,
    /// Scores above the mean are anomalous (anomaly energy).
    AnomalousAbove,
}

/// Gaussian fit of validation bona-fide scores with a one-sided reading:
/// deviations toward the non-anomalous side never count against a probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScorer {
    pub mean: f64,
    pub std: f64,
    pub orientation: Orientation,
}

impl GaussianScorer {
    pub fn fit(scores: &[f64], orientation: Orientation) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::invalid("insufficient validation scores"));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        Ok(GaussianScorer {
            mean,
            std: var.sqrt().max(SIGMA_FLOOR),
            orientation,
        })
    }

    /// Likelihood of belonging to the bona-fide distribution, max-normalized:
    /// p = exp(-z^2/2) with z the oriented standardized deviation clamped at 0.
    pub fn bf_likelihood(&self, score: f64) -> f64 {
        let deviation = match self.orientation {
            Orientation::AnomalousBelow => (self.mean - score) / self.std,
            Orientation::AnomalousAbove => (score - self.mean) / self.std,
        };
        let z = deviation.max(0.0).min(DEVIATION_CAP);
        (-0.5 * z * z).exp()
    }
}

/// Euclidean norm over the last ceil(tail_fraction * len) dimensions of a
/// standardized feature.
pub fn anomaly_energy(feature: &AnomalyFeature, tail_fraction: f64) -> Result<f64> {
    if !feature.is_standardized() {
        return Err(Error::invalid("anomaly energy requires a standardized feature"));
    }
    if !(0.0 < tail_fraction && tail_fraction < 1.0) {
        return Err(Error::invalid("tail fraction must lie in (0, 1)"));
    }
    let len = feature.len();
    let tail = ((tail_fraction * len as f64).ceil() as usize).clamp(1, len);
    let energy = feature.values()[len - tail..]
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    Ok(energy)
}

/// The fitted one-class model: one scorer per anomaly measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneClassModel {
    pub loglik_scorer: GaussianScorer,
    pub energy_scorer: GaussianScorer,
    pub tail_fraction: f64,
}

impl OneClassModel {
    /// Fit both Gaussians on validation bona-fide data only.
    pub fn fit(
        validation_features: &[AnomalyFeature],
        validation_logliks: &[f64],
        tail_fraction: f64,
    ) -> Result<Self> {
        if validation_features.len() != validation_logliks.len() {
            return Err(Error::invalid("feature and log-likelihood counts differ"));
        }
        let energies: Vec<f64> = validation_features
            .iter()
            .map(|f| anomaly_energy(f, tail_fraction))
            .collect::<Result<_>>()?;
        Ok(OneClassModel {
            loglik_scorer: GaussianScorer::fit(validation_logliks, Orientation::AnomalousBelow)?,
            energy_scorer: GaussianScorer::fit(&energies, Orientation::AnomalousAbove)?,
            tail_fraction,
        })
    }

    /// Per-measure bona-fide likelihoods for a probe.
    pub fn measure_likelihoods(
        &self,
        feature: &AnomalyFeature,
        aggregated_loglik: f64,
    ) -> Result<(f64, f64)> {
        let energy = anomaly_energy(feature, self.tail_fraction)?;
        Ok((
            self.loglik_scorer.bf_likelihood(aggregated_loglik),
            self.energy_scorer.bf_likelihood(energy),
        ))
    }

    /// Attack probability: 1 - mean of the two bona-fide likelihoods.
    pub fn score(&self, feature: &AnomalyFeature, aggregated_loglik: f64) -> Result<DetectionScore> {
        let (p_ll, p_energy) = self.measure_likelihoods(feature, aggregated_loglik)?;
        DetectionScore::new(1.0 - (p_ll + p_energy) / 2.0)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
