//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Cholesky factor of a symmetric positive-definite matrix, or `None`.
pub fn chol(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m))
}

/// Inverse of an SPD matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    chol(m).map(|c| symmetrize(&c.inverse()))
}

/// Inverse and log-determinant of an SPD matrix.
pub fn spd_inverse_logdet(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let c = chol(m)?;
    let ld = chol_logdet(&c);
    Some((symmetrize(&c.inverse()), ld))
}

pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

pub fn spd_logdet(m: &DMatrix<f64>) -> Option<f64> {
    chol(m).map(|c| chol_logdet(&c))
}

/// (A + Aᵀ)/2, used to strip rounding asymmetry before factorizing.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// tr(A B) without forming the product.
pub fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// vᵀ A v.
pub fn quad(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v))
}

/// Ψ⁻¹-weighted low-rank helper for covariances of the form BᵀB + Ψ,
/// with B a k×p loading block and Ψ diagonal.
#[derive(Debug, Clone)]
pub struct LowRankCov {
    /// B Ψ⁻¹ (k×p).
    pub b_psi_inv: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// (I + BΨ⁻¹Bᵀ)⁻¹.
    pub core_inv: DMatrix<f64>,
    pub core_logdet: f64,
}

impl LowRankCov {
    pub fn new(b: &DMatrix<f64>, psi: &DVector<f64>) -> Option<Self> {
        let k = b.nrows();
        let mut b_psi_inv = b.clone();
        for j in 0..b.ncols() {
            if !(psi[j] > 0.0) {
                return None;
            }
            b_psi_inv.column_mut(j).scale_mut(1.0 / psi[j]);
        }
        let core = DMatrix::identity(k, k) + &b_psi_inv * b.transpose();
        let (core_inv, core_logdet) = spd_inverse_logdet(&core)?;
        Some(Self {
            b_psi_inv,
            psi: psi.clone(),
            core_inv,
            core_logdet,
        })
    }

    pub fn logdet(&self) -> f64 {
        self.psi.iter().map(|v| v.ln()).sum::<f64>() + self.core_logdet
    }

    /// Σ⁻¹ v through Woodbury.
    pub fn solve_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.component_div(&self.psi);
        let t = &self.core_inv * (&self.b_psi_inv * v);
        out -= self.b_psi_inv.transpose() * t;
        out
    }

    /// Σ⁻¹ as a dense p×p matrix.
    pub fn inverse(&self) -> DMatrix<f64> {
        let p = self.psi.len();
        let mut out = -(self.b_psi_inv.transpose() * &self.core_inv * &self.b_psi_inv);
        for j in 0..p {
            out[(j, j)] += 1.0 / self.psi[j];
        }
        symmetrize(&out)
    }

    /// Ψ⁻¹Bᵀ(I + BΨ⁻¹Bᵀ)⁻¹, the p×k map from observations to factor scores.
    pub fn score_map(&self) -> DMatrix<f64> {
        self.b_psi_inv.transpose() * &self.core_inv
    }
}

/// Sample mean and variance by Welford's recursion. A repeated value leaves
/// the mean bit-for-bit unchanged.
#[derive(Debug, Clone)]
pub struct Welford {
    pub n: usize,
    pub mean: DVector<f64>,
    m2: DVector<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        if self.n == 1 {
            self.mean.copy_from(x);
            return;
        }
        let k = self.n as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            if delta != 0.0 {
                self.mean[i] += delta / k;
                self.m2[i] += delta * (x[i] - self.mean[i]);
            }
        }
    }

    /// Unbiased sample variance (zero with fewer than two points).
    pub fn variance(&self) -> DVector<f64> {
        if self.n < 2 {
            return DVector::zeros(self.mean.len());
        }
        &self.m2 / (self.n as f64 - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(p: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0 - 0.4);
        &a * a.transpose() + DMatrix::identity(p, p)
    }

    #[test]
    fn woodbury_matches_dense_inverse() {
        let b = DMatrix::from_fn(2, 5, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.1);
        let psi = DVector::from_fn(5, |j, _| 0.5 + j as f64 * 0.2);
        let lr = LowRankCov::new(&b, &psi).unwrap();
        let sigma = b.transpose() * &b + DMatrix::from_diagonal(&psi);
        let dense = sigma.clone().try_inverse().unwrap();
        assert!((lr.inverse() - &dense).norm() < 1e-12);
        assert!((lr.logdet() - sigma.determinant().ln()).abs() < 1e-12);
        let v = DVector::from_fn(5, |j, _| j as f64 - 2.0);
        assert!((lr.solve_vec(&v) - &dense * &v).norm() < 1e-12);
    }

    #[test]
    fn trace_prod_matches_product() {
        let a = spd(4);
        let b = DMatrix::from_fn(4, 4, |i, j| (i + 2 * j) as f64);
        assert!((trace_prod(&a, &b) - (&a * &b).trace()).abs() < 1e-12);
    }

    #[test]
    fn inverse_logdet() {
        let a = spd(3);
        let (inv, ld) = spd_inverse_logdet(&a).unwrap();
        assert!((&inv * &a - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!((ld - a.determinant().ln()).abs() < 1e-12);
    }

    #[test]
    fn welford_repeated_value_is_exact() {
        let v = DVector::from_vec(vec![0.1, 1.0 / 3.0, -7.25]);
        let mut w = Welford::new(3);
        for _ in 0..1000 {
            w.push(&v);
        }
        assert_eq!(w.mean, v);
        assert_eq!(w.variance(), DVector::zeros(3));
    }
}
