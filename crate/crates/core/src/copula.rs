//! Gaussian-copula fit of the features and the second-order Gaussian
//! knockoff used as the optimizer's starting point.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::marginals::{normal_cdf, normal_quantile, MarginalModel};
use crate::matrix::DataMatrix;

/// Eigenvalue floor used when repairing an indefinite correlation matrix.
pub const PSD_FLOOR: f64 = 1e-10;
/// Shrink factor applied to the equicorrelated s-vector.
pub const S_SHRINK: f64 = 1.0 - 1e-6;
/// Tolerance on the joint feature/knockoff covariance eigenvalues.
pub const JOINT_PSD_TOLERANCE: f64 = 1e-8;
const CONDITIONAL_PSD_TOLERANCE: f64 = 1e-6;
const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianCopulaModel {
    /// Column names the model was fitted on.
    pub names: Vec<String>,
    /// Latent correlation matrix as nested rows.
    pub latent_correlation: Vec<Vec<f64>>,
    pub marginals: Vec<MarginalModel>,
    /// Whether eigenvalue clipping was needed to make the matrix PSD.
    #[serde(default)]
    pub psd_repaired: bool,
}

impl GaussianCopulaModel {
    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_fn(p, p, |i, j| self.latent_correlation[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.marginals.len();
        let bad = |msg: String| Err(KnockoffError::InvalidInput(msg));
        if p == 0 {
            return bad("copula has no marginals".into());
        }
        if self.names.len() != p {
            return bad(format!("copula has {} names for {p} marginals", self.names.len()));
        }
        if self.latent_correlation.len() != p || self.latent_correlation.iter().any(|r| r.len() != p) {
            return bad(format!("latent correlation must be {p}x{p}"));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        for i in 0..p {
            for j in 0..p {
                let v = self.latent_correlation[i][j];
                if !v.is_finite() || v.abs() > 1.0 + 1e-9 {
                    return bad(format!("latent correlation entry ({i},{j}) = {v} is not a correlation"));
                }
                if (v - self.latent_correlation[j][i]).abs() > 1e-9 {
                    return bad("latent correlation is not symmetric".into());
                }
            }
            if (self.latent_correlation[i][i] - 1.0).abs() > 1e-9 {
                return bad("latent correlation diagonal must be 1".into());
            }
        }
        let min_eig = min_eigenvalue(&self.correlation());
        if min_eig < -PSD_FLOOR {
            return bad(format!("latent correlation is not positive semidefinite (min eigenvalue {min_eig:e})"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: GaussianCopulaModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Normal scores `Φ⁻¹(F_j(x_ij))` of every entry.
///
/// CDF values of exactly 0 or 1 are clamped to `1/(n+1)` and `n/(n+1)`.
pub fn latent_scores(data: &DataMatrix, marginals: &[MarginalModel]) -> Result<DataMatrix> {
    if marginals.len() != data.ncols() {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("{} marginals", data.ncols()),
            actual: format!("{}", marginals.len()),
        });
    }
    let n = data.nrows();
    let lo = 1.0 / (n + 1) as f64;
    let hi = n as f64 / (n + 1) as f64;
    let mut clamped = 0usize;
    let mut scores = data.clone();
    for (j, model) in marginals.iter().enumerate() {
        for v in scores.col_mut(j) {
            let mut u = model.cdf(*v);
            if u <= 0.0 {
                u = lo;
                clamped += 1;
            } else if u >= 1.0 {
                u = hi;
                clamped += 1;
            }
            *v = normal_quantile(u);
        }
    }
    if clamped > 0 {
        warn!("{clamped} CDF values hit 0 or 1 and were clamped");
    }
    Ok(scores)
}

/// Sample correlation matrix of the columns (biased moments).
pub fn sample_correlation(data: &DataMatrix) -> DMatrix<f64> {
    let p = data.ncols();
    let n = data.nrows() as f64;
    let centered: Vec<Vec<f64>> = data
        .columns()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let sd: Vec<f64> = centered.iter().map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n).sqrt()).collect();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / n / (sd[i] * sd[j])
        }
    })
}

/// Clips eigenvalues at [`PSD_FLOOR`] and rescales to unit diagonal.
/// Returns the repaired matrix and whether any change was needed.
pub fn repair_correlation(sigma: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.min() >= PSD_FLOOR {
        return (sigma.clone(), false);
    }
    let clipped = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| l.max(PSD_FLOOR)));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d: Vec<f64> = (0..rebuilt.nrows()).map(|i| rebuilt[(i, i)].sqrt()).collect();
    let p = rebuilt.nrows();
    let mut out = DMatrix::from_fn(p, p, |i, j| rebuilt[(i, j)] / (d[i] * d[j]));
    for i in 0..p {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    (out, true)
}

/// Fits the Gaussian copula: latent normal scores through the given
/// marginals, then their correlation matrix, repaired to be PSD.
pub fn fit_copula(features: &DataMatrix, marginals: &[MarginalModel]) -> Result<GaussianCopulaModel> {
    if features.nrows() <= features.ncols() {
        warn!("fitting a {}-dimensional copula on only {} observations", features.ncols(), features.nrows());
    }
    let scores = latent_scores(features, marginals)?;
    let (sigma, repaired) = repair_correlation(&sample_correlation(&scores));
    if repaired {
        warn!("latent correlation was indefinite and has been repaired");
    }
    if !sigma.iter().all(|v| v.is_finite()) {
        return Err(KnockoffError::Numeric("latent correlation has non-finite entries".into()));
    }
    let p = sigma.nrows();
    Ok(GaussianCopulaModel {
        names: features.names().to_vec(),
        latent_correlation: (0..p).map(|i| (0..p).map(|j| sigma[(i, j)]).collect()).collect(),
        marginals: marginals.to_vec(),
        psd_repaired: repaired,
    })
}

/// Per-feature decorrelation amounts of the Gaussian knockoff construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffSVector {
    pub values: Vec<f64>,
}

impl KnockoffSVector {
    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.values))
    }
}

/// The `2p × 2p` matrix `[[Σ, Σ - D], [Σ - D, Σ]]` with `D = diag(s)`.
pub fn joint_covariance(sigma: &DMatrix<f64>, s: &KnockoffSVector) -> DMatrix<f64> {
    let p = sigma.nrows();
    let off = sigma - s.diag();
    let mut g = DMatrix::zeros(2 * p, 2 * p);
    g.view_mut((0, 0), (p, p)).copy_from(sigma);
    g.view_mut((p, p), (p, p)).copy_from(sigma);
    g.view_mut((0, p), (p, p)).copy_from(&off);
    g.view_mut((p, 0), (p, p)).copy_from(&off);
    g
}

/// Checks that the joint feature/knockoff covariance is PSD.
pub fn check_joint_psd(sigma: &DMatrix<f64>, s: &KnockoffSVector) -> Result<()> {
    if s.values.len() != sigma.nrows() {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("s of length {}", sigma.nrows()),
            actual: format!("{}", s.values.len()),
        });
    }
    let min_eig = min_eigenvalue(&joint_covariance(sigma, s));
    if min_eig < -JOINT_PSD_TOLERANCE {
        return Err(KnockoffError::Numeric(format!(
            "joint knockoff covariance is not PSD (min eigenvalue {min_eig:e}); s is infeasible"
        )));
    }
    Ok(())
}

/// Equicorrelated choice `s_j = min(1, 2 λ_min(Σ))`, shrunk by [`S_SHRINK`].
pub fn equicorrelated_s(sigma: &DMatrix<f64>) -> Result<KnockoffSVector> {
    let lambda_min = min_eigenvalue(sigma);
    if lambda_min.is_nan() || lambda_min <= 0.0 {
        return Err(KnockoffError::Numeric(format!(
            "latent correlation has min eigenvalue {lambda_min:e}; repair it before building knockoffs"
        )));
    }
    let s = (2.0 * lambda_min).min(1.0) * S_SHRINK;
    Ok(KnockoffSVector { values: vec![s; sigma.nrows()] })
}

fn invert_spd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = sigma.clone().cholesky() {
        return Ok(ch.inverse());
    }
    let p = sigma.nrows();
    let ridged = sigma + DMatrix::identity(p, p) * RIDGE;
    ridged
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| KnockoffError::Numeric("latent correlation is singular even after ridge".into()))
}

/// Draws Gaussian knockoff scores conditional on the observed scores.
///
/// Each row `z` gets `z̃ ~ N(z - z Σ⁻¹ D, 2D - D Σ⁻¹ D)` with `D = diag(s)`.
/// Row `i` uses stream `i` of a ChaCha20 generator keyed by `seed`.
pub fn sample_gaussian_knockoffs(
    scores: &DataMatrix,
    sigma: &DMatrix<f64>,
    s: &KnockoffSVector,
    seed: u64,
) -> Result<DataMatrix> {
    let p = scores.ncols();
    if sigma.nrows() != p || sigma.ncols() != p || s.values.len() != p {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("{p}x{p} correlation and s of length {p}"),
            actual: format!("{}x{} and {}", sigma.nrows(), sigma.ncols(), s.values.len()),
        });
    }
    check_joint_psd(sigma, s)?;
    let inv = invert_spd(sigma)?;
    let d = s.diag();
    let shrink = &inv * &d;
    let cond_cov = &d * 2.0 - &d * &inv * &d;
    let cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cond_cov);
    let min_eig = eig.eigenvalues.min();
    if min_eig < -CONDITIONAL_PSD_TOLERANCE {
        return Err(KnockoffError::Numeric(format!(
            "conditional knockoff covariance has eigenvalue {min_eig:e}; s is too large"
        )));
    }
    let roots = DVector::from_iterator(p, eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
    let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);

    let n = scores.nrows();
    let mut out = scores.zeros_like();
    let mut base = ChaCha20Rng::seed_from_u64(seed);
    let mut z = vec![0.0; p];
    let mut eps = vec![0.0; p];
    for row in 0..n {
        base.set_stream(row as u64);
        base.set_word_pos(0);
        for j in 0..p {
            z[j] = scores.get(row, j);
            eps[j] = StandardNormal.sample(&mut base);
        }
        for j in 0..p {
            let mut mean = z[j];
            let mut noise = 0.0;
            for l in 0..p {
                mean -= z[l] * shrink[(l, j)];
                noise += factor[(j, l)] * eps[l];
            }
            out.set(row, j, mean + noise);
        }
    }
    Ok(out)
}

/// Maps latent scores back through the marginals, `F_j⁻¹(Φ(z))`.
pub fn scores_to_data(scores: &DataMatrix, marginals: &[MarginalModel]) -> Result<DataMatrix> {
    let mut out = scores.clone();
    let lo = f64::MIN_POSITIVE;
    let hi = 1.0 - f64::EPSILON / 2.0;
    for (j, model) in marginals.iter().enumerate() {
        for v in out.col_mut(j) {
            *v = model.quantile(normal_cdf(*v).clamp(lo, hi))?;
        }
    }
    Ok(out)
}

/// Initial knockoff guess from the fitted copula using the equicorrelated s.
pub fn initial_guess(features: &DataMatrix, model: &GaussianCopulaModel, seed: u64) -> Result<DataMatrix> {
    let s = equicorrelated_s(&model.correlation())?;
    initial_guess_with_s(features, model, &s, seed)
}

/// Initial knockoff guess with a caller-supplied s-vector.
pub fn initial_guess_with_s(
    features: &DataMatrix,
    model: &GaussianCopulaModel,
    s: &KnockoffSVector,
    seed: u64,
) -> Result<DataMatrix> {
    if features.ncols() != model.dim() {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("{} features", model.dim()),
            actual: format!("{}", features.ncols()),
        });
    }
    let scores = latent_scores(features, &model.marginals)?;
    let latent = sample_gaussian_knockoffs(&scores, &model.correlation(), s, seed)?;
    let mut guess = scores_to_data(&latent, &model.marginals)?;
    guess.set_names(features.names().to_vec())?;
    Ok(guess)
}
