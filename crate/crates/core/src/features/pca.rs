//! PCA by eigendecomposition of the sample covariance, with components
//! sorted by explained variance. When there are fewer samples than
//! dimensions the Gram-matrix route solves the same eigenproblem at sample
//! count cost; directions beyond the data rank are completed with an
//! orthonormal basis of the null space and zero explained variance.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below max(eigenvalue) * RANK_TOL are treated as rank-deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Mean of the training vectors (length D).
    pub mean: Vec<f64>,
    /// Orthonormal component rows, m x D, sorted by explained variance.
    pub components: Vec<Vec<f64>>,
    /// Non-increasing explained variances (length m).
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn fit(samples: &[Vec<f64>], m: usize) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid("PCA needs at least 2 samples"));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::invalid("PCA samples have differing lengths"));
        }
        if m > n.min(d) {
            return Err(Error::invalid(format!(
                "requested {m} components but only min(samples={n}, dims={d}) are available"
            )));
        }

        let mut mean = vec![0.0; d];
        for s in samples {
            for (acc, v) in mean.iter_mut().zip(s) {
                *acc += v;
            }
        }
        for v in mean.iter_mut() {
            *v /= n as f64;
        }

        // centered data, n x d
        let centered = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mean[j]);

        let (mut pairs, rank) = if d <= n {
            Self::eig_covariance(&centered, n, d)
        } else {
            Self::eig_gram(&centered, n, d)
        };

        // descending variance; deterministic tie order by original index
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

        let mut components: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut explained = Vec::with_capacity(m);
        for (var, comp) in pairs.into_iter().take(m.min(rank)) {
            components.push(comp);
            explained.push(var.max(0.0));
        }
        while components.len() < m {
            let extra = Self::null_direction(&components, d)?;
            components.push(extra);
            explained.push(0.0);
        }
        for comp in components.iter_mut() {
            Self::fix_sign(comp);
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance: explained,
        })
    }

    /// Direct D x D covariance eigendecomposition.
    fn eig_covariance(centered: &DMatrix<f64>, n: usize, d: usize) -> (Vec<(f64, Vec<f64>)>, usize) {
        let cov = centered.transpose() * centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let max_ev = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let pairs: Vec<(f64, Vec<f64>)> = (0..d)
            .map(|i| {
                let var = eig.eigenvalues[i];
                let comp: Vec<f64> = (0..d).map(|j| eig.eigenvectors[(j, i)]).collect();
                (var, comp)
            })
            .collect();
        // the full basis is available regardless of data rank
        let _ = max_ev;
        (pairs, d)
    }

    /// Gram-matrix route for n < d: same nonzero spectrum, n x n cost.
    fn eig_gram(centered: &DMatrix<f64>, n: usize, d: usize) -> (Vec<(f64, Vec<f64>)>, usize) {
        let gram = centered * centered.transpose() / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(gram);
        let max_ev = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        let tol = max_ev * RANK_TOL;
        let mut pairs = Vec::new();
        for i in 0..n {
            let var = eig.eigenvalues[i];
            if var <= tol || var <= 0.0 {
                continue;
            }
            // component = X^T u / ||X^T u||; scale is sqrt(var * (n-1))
            let u = eig.eigenvectors.column(i);
            let mut comp = vec![0.0; d];
            for r in 0..n {
                let w = u[r];
                for (cj, x) in comp.iter_mut().zip(centered.row(r).iter()) {
                    *cj += w * x;
                }
            }
            let norm = comp.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 0.0 {
                continue;
            }
            for v in comp.iter_mut() {
                *v /= norm;
            }
            pairs.push((var, comp));
        }
        let rank = pairs.len();
        (pairs, rank)
    }

    /// Deterministic completion: first canonical basis vector that survives
    /// Gram-Schmidt against the current components.
    fn null_direction(components: &[Vec<f64>], d: usize) -> Result<Vec<f64>> {
        for axis in 0..d {
            let mut v = vec![0.0; d];
            v[axis] = 1.0;
            for comp in components {
                let dot: f64 = v.iter().zip(comp).map(|(a, b)| a * b).sum();
                for (vi, ci) in v.iter_mut().zip(comp) {
                    *vi -= dot * ci;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                return Ok(v);
            }
        }
        Err(Error::invalid("cannot complete orthonormal basis"))
    }

    /// Make each component's largest-magnitude entry positive (ties keep
    /// the lowest index) so serialized models are reproducible.
    fn fix_sign(comp: &mut [f64]) {
        let mut best = 0;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[best].abs() {
                best = i;
            }
        }
        if comp[best] < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Coordinates in component space and the Euclidean distance from the
    /// input to its projection on the component hyperplane.
    pub fn project_with_residual(&self, vector: &[f64]) -> Result<(Vec<f64>, f64)> {
        if vector.len() != self.mean.len() {
            return Err(Error::invalid(format!(
                "vector length {} does not match PCA dimension {}",
                vector.len(),
                self.mean.len()
            )));
        }
        let centered: Vec<f64> = vector.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let coords: Vec<f64> = self
            .components
            .iter()
            .map(|comp| comp.iter().zip(&centered).map(|(c, v)| c * v).sum())
            .collect();
        let mut reconstruction = vec![0.0; self.mean.len()];
        for (coord, comp) in coords.iter().zip(&self.components) {
            for (r, c) in reconstruction.iter_mut().zip(comp) {
                *r += coord * c;
            }
        }
        let residual = centered
            .iter()
            .zip(&reconstruction)
            .map(|(v, r)| (v - r) * (v - r))
            .sum::<f64>()
            .sqrt();
        Ok((coords, residual))
    }
}
