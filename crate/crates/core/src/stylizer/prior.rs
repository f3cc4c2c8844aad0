use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in style space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEmbedding(Vec<f64>);

impl StyleEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("style embedding entries must be finite"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `alpha * style + (1 - alpha) * content`.
pub fn blend_embeddings(
    content: &StyleEmbedding,
    style: &StyleEmbedding,
    alpha: f64,
) -> Result<StyleEmbedding> {
    if content.dim() != style.dim() {
        return Err(Error::arg(format!(
            "embedding dimensions differ: {} vs {}",
            content.dim(),
            style.dim()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!("alpha = {alpha} is outside [0, 1]")));
    }
    Ok(StyleEmbedding(
        content
            .0
            .iter()
            .zip(&style.0)
            .map(|(c, s)| alpha * s + (1.0 - alpha) * c)
            .collect(),
    ))
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    dim: usize,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

/// Gaussian prior over style embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct StylePrior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    /// `L` with `L Lᵀ = covariance`.
    factor: DMatrix<f64>,
}

impl StylePrior {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::arg("prior dimension must be positive"));
        }
        if covariance.shape() != (d, d) {
            return Err(Error::arg(format!(
                "covariance is {:?}, expected {d}×{d}",
                covariance.shape()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("prior entries must be finite"));
        }
        let scale = covariance.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > tol {
                    return Err(Error::arg(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let sym = (&covariance + covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let min = eig.eigenvalues.min();
        if min < -1e-8 * scale {
            return Err(Error::arg(format!(
                "covariance is not positive semi-definite (eigenvalue {min:e})"
            )));
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance,
            factor,
        })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim) * variance)
    }

    /// `N(mean, inflation · cov)` of a set of embeddings (population covariance).
    pub fn from_embeddings(embeddings: &[StyleEmbedding], inflation: f64) -> Result<Self> {
        let first = embeddings
            .first()
            .ok_or_else(|| Error::arg("cannot fit a prior to zero embeddings"))?;
        if !(inflation >= 0.0) {
            return Err(Error::arg("inflation must be non-negative"));
        }
        let d = first.dim();
        if embeddings.iter().any(|e| e.dim() != d) {
            return Err(Error::arg("embeddings differ in dimension"));
        }
        let n = embeddings.len() as f64;
        let mut mean = DVector::zeros(d);
        for e in embeddings {
            mean += DVector::from_column_slice(e.values());
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for e in embeddings {
            let c = DVector::from_column_slice(e.values()) - &mean;
            cov += &c * c.transpose();
        }
        cov *= inflation / n;
        Self::new(mean.as_slice().to_vec(), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PriorFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if file.mean.len() != file.dim || file.covariance.len() != file.dim {
            return Err(bad(format!("dim = {} disagrees with mean/covariance", file.dim)));
        }
        if file.covariance.iter().any(|row| row.len() != file.dim) {
            return Err(bad("covariance rows must have length dim".into()));
        }
        let cov = DMatrix::from_fn(file.dim, file.dim, |i, j| file.covariance[i][j]);
        Self::new(file.mean, cov).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        let file = PriorFile {
            dim: d,
            mean: self.mean.as_slice().to_vec(),
            covariance: (0..d)
                .map(|i| (0..d).map(|j| self.covariance[(i, j)]).collect())
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `z = mean + L u` with `u ~ N(0, I)` drawn from `rng`.
pub fn sample_style_embedding<R: Rng>(prior: &StylePrior, rng: &mut R) -> StyleEmbedding {
    let d = prior.dim();
    let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = &prior.mean + &prior.factor * u;
    StyleEmbedding(z.as_slice().to_vec())
}
