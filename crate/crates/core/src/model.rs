//! Joint Gaussian factor model parameters and the prediction rule they induce.

use crate::linalg::{symmetrize, LowRankCov};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("uniquenesses must be strictly positive")]
    NonPositivePsi,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Parameters of x̄ | λ ~ N(B̄ᵀλ, Ψ̄), λ ~ N(0, I_d), with B̄ = [B β].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorParams {
    pub d: usize,
    /// d × p loadings, serialized row-major as nested arrays.
    #[serde(rename = "B", with = "row_major")]
    pub b: DMatrix<f64>,
    #[serde(with = "dvec")]
    pub beta: DVector<f64>,
    /// Intercept of the logistic outcome; zero for the linear model.
    pub beta0: f64,
    #[serde(with = "dvec")]
    pub psi: DVector<f64>,
    pub sigma2: f64,
}

impl FactorParams {
    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.b.nrows() != self.d || self.beta.len() != self.d || self.psi.len() != self.b.ncols() {
            return Err(ModelError::Dimension(format!(
                "B is {}x{}, beta {}, psi {}, d {}",
                self.b.nrows(),
                self.b.ncols(),
                self.beta.len(),
                self.psi.len(),
                self.d
            )));
        }
        if self.psi.iter().any(|v| !(*v > 0.0)) {
            return Err(ModelError::NonPositivePsi);
        }
        Ok(())
    }

    /// Build from joint loadings B̄ (d×(p+1)) and Ψ̄ (length p+1), outcome last.
    pub fn from_joint(b_bar: &DMatrix<f64>, psi_bar: &DVector<f64>) -> Self {
        let p = b_bar.ncols() - 1;
        Self {
            d: b_bar.nrows(),
            b: b_bar.columns(0, p).into_owned(),
            beta: b_bar.column(p).into_owned(),
            beta0: 0.0,
            psi: psi_bar.rows(0, p).into_owned(),
            sigma2: psi_bar[p],
        }
    }

    /// B̄ = [B β].
    pub fn joint_loadings(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.p() + 1);
        out.columns_mut(0, self.p()).copy_from(&self.b);
        out.column_mut(self.p()).copy_from(&self.beta);
        out
    }

    pub fn joint_psi(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.p() + 1);
        out.rows_mut(0, self.p()).copy_from(&self.psi);
        out[self.p()] = self.sigma2;
        out
    }

    /// Implied joint covariance B̄ᵀB̄ + Ψ̄.
    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let bb = self.joint_loadings();
        let mut s = bb.transpose() * &bb;
        let psi = self.joint_psi();
        for j in 0..psi.len() {
            s[(j, j)] += psi[j];
        }
        symmetrize(&s)
    }
}

/// A linear prediction rule ŷ = intercept + xᵀ coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRule {
    #[serde(with = "dvec")]
    pub coefficients: DVector<f64>,
    pub intercept: f64,
}

impl PredictionRule {
    pub fn zeros(p: usize) -> Self {
        Self {
            coefficients: DVector::zeros(p),
            intercept: 0.0,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = x * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        out
    }
}

/// β̃ = (BᵀB + Ψ)⁻¹Bᵀβ, evaluated as Ψ⁻¹Bᵀ(I + BΨ⁻¹Bᵀ)⁻¹β.
pub fn induced_coefficients(params: &FactorParams) -> Result<DVector<f64>, ModelError> {
    params.validate()?;
    let lr = LowRankCov::new(&params.b, &params.psi).ok_or(ModelError::NotPositiveDefinite)?;
    Ok(lr.score_map() * &params.beta)
}

/// Plug-in rule of the joint model; the intercept is β₀ (zero when linear).
pub fn induced_rule(params: &FactorParams) -> Result<PredictionRule, ModelError> {
    Ok(PredictionRule {
        coefficients: induced_coefficients(params)?,
        intercept: params.beta0,
    })
}

/// Posterior means of the factors, (BΨ⁻¹Bᵀ + I)⁻¹BΨ⁻¹x, one row per observation.
pub fn factor_scores(params: &FactorParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ModelError> {
    params.validate()?;
    if x.ncols() != params.p() {
        return Err(ModelError::Dimension(format!("x has {} columns, model has {}", x.ncols(), params.p())));
    }
    let lr = LowRankCov::new(&params.b, &params.psi).ok_or(ModelError::NotPositiveDefinite)?;
    Ok(x * lr.score_map())
}

/// Kaiser criterion: number of sample-correlation eigenvalues above one,
/// clamped to [1, min(n-1, p)].
pub fn kaiser_dimension(x: &DMatrix<f64>) -> usize {
    let (n, p) = x.shape();
    let hi = (n.saturating_sub(1)).min(p).max(1);
    if n < 2 {
        return 1;
    }
    let mut z = x.clone();
    for j in 0..p {
        let mut col = z.column_mut(j);
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let s = col.norm();
        if s > 0.0 {
            col.scale_mut(1.0 / s);
        }
    }
    // Nonzero eigenvalues of ZᵀZ equal those of ZZᵀ; use the smaller side.
    let gram = if n < p { &z * z.transpose() } else { z.transpose() * &z };
    let eig = symmetrize(&gram).symmetric_eigenvalues();
    let count = eig.iter().filter(|&&v| v > 1.0 + 1e-12).count();
    count.clamp(1, hi)
}

pub(crate) mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub(crate) mod row_major {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}
