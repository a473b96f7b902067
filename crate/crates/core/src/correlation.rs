//! Correlation-matrix modelling with loadings truncated to the unit ball.
//!
//! Experimental. The default estimators use the post-hoc rescaling in
//! [`crate::vb_linear`]; this module keeps the proper treatment available.
//!
//! Moments of N(μ*, Ω*) restricted to ‖b‖ < 1 come from the series
//! L = Σ_t c_t F_{d+2t}(1/r) for P(‖b‖² < 1), differentiated in μ*:
//! v = Ω* ∂L/∂μ*, V = Ω* ∂²L/∂μ*² Ω*.

use crate::linalg::{spd_inverse, spd_logdet, symmetrize, trace_prod};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorrError {
    #[error("truncated-moment series produced a non-finite value")]
    SeriesDiverged,
    #[error("scale matrix is not positive definite")]
    NotPd,
    #[error("uniqueness ζ_{0} left (0, 1)")]
    ZetaOutOfRange(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub const DEFAULT_T_MAX: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMoments {
    /// Mass of the unit ball under N(μ*, Ω*).
    pub l: f64,
    pub log_l: f64,
    pub v: DVector<f64>,
    pub big_v: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub r: f64,
    pub t_max: usize,
}

/// Chi-square distribution function with k degrees of freedom.
pub fn chi2_cdf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(k / 2.0, x / 2.0)
    }
}

pub fn trunc_moments(mu: &DVector<f64>, omega: &DMatrix<f64>, t_max: usize) -> Result<TruncatedMoments, CorrError> {
    if t_max == 0 {
        return Err(CorrError::Invalid("t_max must be positive".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(omega));
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) {
        return Err(CorrError::NotPd);
    }
    let r = 29.0 / 32.0 * lmin;
    match series(mu, &eig, r, t_max) {
        Ok(m) => Ok(m),
        Err(_) => series(mu, &eig, r / 2.0, t_max),
    }
}

fn series(mu: &DVector<f64>, eig: &SymmetricEigen<f64, nalgebra::Dyn>, r: f64, t_max: usize) -> Result<TruncatedMoments, CorrError> {
    let d = mu.len();
    let q = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let u = q.transpose() * mu;
    let rho = lam.map(|l| 1.0 - r / l);
    let nc: f64 = (0..d).map(|j| u[j] * u[j] / lam[j]).sum();
    // coefficients below are scaled by 1/c₀
    let log_c0 = -0.5 * nc + (0..d).map(|j| 0.5 * (r / lam[j]).ln()).sum::<f64>();
    let omega = q * DMatrix::from_diagonal(lam) * q.transpose();

    let mut dm = vec![0.0; t_max + 1];
    let mut dpm = vec![DVector::zeros(d); t_max + 1];
    let mut ddm = vec![DMatrix::zeros(d, d); t_max + 1];
    for m in 1..=t_max {
        let mf = m as f64;
        let z = DVector::from_fn(d, |j, _| r / lam[j] * rho[j].powi(m as i32 - 1));
        dm[m] = (0..d).map(|j| rho[j].powi(m as i32)).sum::<f64>() + mf * (0..d).map(|j| z[j] * u[j] * u[j] / lam[j]).sum::<f64>();
        let w = DVector::from_fn(d, |j, _| z[j] * u[j]);
        dpm[m] = q * w * (2.0 * mf);
        ddm[m] = q * DMatrix::from_diagonal(&DVector::from_fn(d, |j, _| z[j] * lam[j])) * q.transpose() * (2.0 * mf);
    }

    let mut c = vec![0.0; t_max + 1];
    let mut cp = vec![DVector::zeros(d); t_max + 1];
    let mut cpp = vec![DMatrix::zeros(d, d); t_max + 1];
    c[0] = 1.0;
    cp[0] = -mu.clone();
    cpp[0] = mu * mu.transpose() - &omega;
    for t in 1..=t_max {
        let mut a = 0.0;
        let mut av = DVector::zeros(d);
        let mut am = DMatrix::zeros(d, d);
        for s in 0..t {
            let k = t - s;
            a += dm[k] * c[s];
            av += &dpm[k] * c[s] + &cp[s] * dm[k];
            am += &ddm[k] * c[s] + &dpm[k] * cp[s].transpose() + &cp[s] * dpm[k].transpose() + &cpp[s] * dm[k];
        }
        let h = 1.0 / (2.0 * t as f64);
        c[t] = a * h;
        cp[t] = av * h;
        cpp[t] = am * h;
    }

    let mut l = 0.0;
    let mut v = DVector::zeros(d);
    let mut big_v = DMatrix::zeros(d, d);
    for t in 0..=t_max {
        let f = chi2_cdf((d + 2 * t) as f64, 1.0 / r);
        l += c[t] * f;
        v += &cp[t] * f;
        big_v += &cpp[t] * f;
    }
    if !(l > 0.0) || !l.is_finite() || v.iter().chain(big_v.iter()).any(|x| !x.is_finite()) {
        return Err(CorrError::SeriesDiverged);
    }
    let mean = mu + &v / l;
    let cov = symmetrize(&(&omega + &big_v / l - &v * v.transpose() / (l * l)));
    let log_l = log_c0 + l.ln();
    Ok(TruncatedMoments {
        l: log_l.exp(),
        log_l,
        v: v * log_c0.exp(),
        big_v: big_v * log_c0.exp(),
        mean,
        cov,
        r,
        t_max,
    })
}

/// Series length adequate for noncentrality μ*ᵀΩ*⁻¹μ*: the coefficients
/// behave like Poisson weights with mean near half of it.
pub fn adaptive_t_max(mu: &DVector<f64>, omega: &DMatrix<f64>) -> usize {
    let nc = spd_inverse(omega).map_or(0.0, |inv| mu.dot(&(inv * mu)));
    let half = nc / 2.0;
    DEFAULT_T_MAX.max((half + 10.0 * (half + 1.0).sqrt() + 20.0).ceil() as usize)
}

/// Variational state of the proper-correlation model on features only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrState {
    pub phi: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    /// Untruncated parameters of q(b_j), rows of `mu_star`.
    pub mu_star: DMatrix<f64>,
    pub omega_star: Vec<DMatrix<f64>>,
    /// Truncated moments E(b_j), V(b_j).
    pub mu: DMatrix<f64>,
    pub omega: Vec<DMatrix<f64>>,
    pub log_lq: Vec<f64>,
    pub zeta: DVector<f64>,
    pub elbo_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProperCorr {
    pub x: DMatrix<f64>,
    pub gammas: Vec<f64>,
    pub d: usize,
    pub t_max: usize,
}

impl ProperCorr {
    pub fn new(x: DMatrix<f64>, gammas: Vec<f64>, d: usize) -> Result<Self, CorrError> {
        if gammas.len() != x.ncols() {
            return Err(CorrError::Invalid(format!("{} gammas for {} columns", gammas.len(), x.ncols())));
        }
        if d == 0 || d >= x.nrows() || d > x.ncols() {
            return Err(CorrError::Invalid(format!("latent dimension {d}")));
        }
        Ok(Self { x, gammas, d, t_max: DEFAULT_T_MAX })
    }

    pub fn init(&self) -> Result<CorrState, CorrError> {
        let (n, p, d) = (self.x.nrows(), self.x.ncols(), self.d);
        let svd = self.x.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors");
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let phi = DMatrix::from_fn(n, d, |i, h| u[(i, idx[h])] * (n as f64).sqrt());
        let mut st = CorrState {
            phi,
            xi: DMatrix::identity(d, d) * 0.5,
            mu_star: DMatrix::zeros(p, d),
            omega_star: vec![DMatrix::identity(d, d); p],
            mu: DMatrix::zeros(p, d),
            omega: vec![DMatrix::identity(d, d); p],
            log_lq: vec![0.0; p],
            zeta: DVector::from_element(p, 0.5),
            elbo_trace: Vec::new(),
        };
        self.update_loadings(&mut st)?;
        self.update_zeta(&mut st)?;
        Ok(st)
    }

    pub fn update_latent(&self, st: &mut CorrState) -> Result<(), CorrError> {
        let d = self.d;
        let mut prec = DMatrix::identity(d, d);
        let mut w = st.mu.clone();
        for j in 0..self.x.ncols() {
            let mj = st.mu.row(j).transpose();
            prec += (&st.omega[j] + &mj * mj.transpose()) / st.zeta[j];
            w.row_mut(j).scale_mut(1.0 / st.zeta[j]);
        }
        st.xi = spd_inverse(&symmetrize(&prec)).ok_or(CorrError::NotPd)?;
        st.phi = &self.x * w * &st.xi;
        Ok(())
    }

    pub fn update_loadings(&self, st: &mut CorrState) -> Result<(), CorrError> {
        let (n, d) = (self.x.nrows() as f64, self.d);
        let gram = st.phi.transpose() * &st.phi + &st.xi * n;
        let ptx = st.phi.transpose() * &self.x;
        for j in 0..self.x.ncols() {
            let inv = spd_inverse(&(&gram + DMatrix::identity(d, d) / self.gammas[j])).ok_or(CorrError::NotPd)?;
            let ms = &inv * ptx.column(j);
            let os = symmetrize(&(inv * st.zeta[j]));
            let tm = trunc_moments(&ms, &os, self.t_max.max(adaptive_t_max(&ms, &os)))?;
            st.mu_star.row_mut(j).copy_from(&ms.transpose());
            st.mu.row_mut(j).copy_from(&tm.mean.transpose());
            st.omega_star[j] = os;
            st.omega[j] = tm.cov;
            st.log_lq[j] = tm.log_l;
        }
        Ok(())
    }

    /// ζ_j = 1 - E(b_j)ᵀE(b_j) - tr V(b_j), so every implied variance is one.
    pub fn update_zeta(&self, st: &mut CorrState) -> Result<(), CorrError> {
        for j in 0..self.x.ncols() {
            let z = 1.0 - st.mu.row(j).norm_squared() - st.omega[j].trace();
            if !(z > 0.0 && z < 1.0) {
                return Err(CorrError::ZetaOutOfRange(j));
            }
            st.zeta[j] = z;
        }
        Ok(())
    }

    pub fn sweep(&self, st: &mut CorrState) -> Result<(), CorrError> {
        self.update_latent(st)?;
        self.update_loadings(st)?;
        self.update_zeta(st)
    }

    /// Lower bound with q(ψ_j) a point mass at ζ_j and the prior
    /// b_j | ζ_j ~ N(0, ζ_j γ_j I) restricted to the unit ball.
    pub fn elbo(&self, st: &CorrState) -> f64 {
        let (n, p, d) = (self.x.nrows() as f64, self.x.ncols(), self.d as f64);
        let ln2pi = (2.0 * PI).ln();
        let gram = st.phi.transpose() * &st.phi + &st.xi * n;
        let ptx = st.phi.transpose() * &self.x;
        let mut total = -0.5 * n * d * ln2pi - 0.5 * (st.phi.norm_squared() + n * st.xi.trace());
        total += n * (0.5 * d * (1.0 + ln2pi) + 0.5 * spd_logdet(&st.xi).unwrap_or(f64::NEG_INFINITY));
        for j in 0..p {
            let z = st.zeta[j];
            let g = self.gammas[j];
            let mj = st.mu.row(j).transpose();
            let oj = &st.omega[j];
            let second = oj + &mj * mj.transpose();
            let xj = self.x.column(j);
            total += -0.5 * n * (ln2pi + z.ln()) - 0.5 / z * (xj.norm_squared() - 2.0 * mj.dot(&ptx.column(j)) + trace_prod(&gram, &second));
            let log_lp = chi2_cdf(d, 1.0 / (z * g)).ln();
            total += -0.5 * d * (ln2pi + (z * g).ln()) - 0.5 * (oj.trace() + mj.norm_squared()) / (z * g) - log_lp;
            let os = &st.omega_star[j];
            let os_inv = spd_inverse(os).expect("pd Ω*");
            let dm = &mj - st.mu_star.row(j).transpose();
            total += 0.5 * d * ln2pi + 0.5 * spd_logdet(os).unwrap_or(f64::NEG_INFINITY) + 0.5 * (trace_prod(&os_inv, oj) + dm.dot(&(&os_inv * &dm))) + st.log_lq[j];
        }
        total
    }

    pub fn fit(&self, tol: f64, max_iter: usize) -> Result<(CorrState, bool), CorrError> {
        let mut st = self.init()?;
        let mut prev = self.elbo(&st);
        for _ in 0..max_iter {
            let before = st.clone();
            self.sweep(&mut st)?;
            let e = self.elbo(&st);
            st.elbo_trace.push(e);
            if (e - prev).abs() <= tol * e.abs() && max_param_change(&before, &st) < tol.sqrt() {
                return Ok((st, true));
            }
            prev = e;
        }
        Ok((st, false))
    }
}

pub fn max_param_change(a: &CorrState, b: &CorrState) -> f64 {
    let mut m = (&a.mu - &b.mu).amax().max((&a.zeta - &b.zeta).amax()).max((&a.phi - &b.phi).amax());
    for (x, y) in a.omega.iter().zip(&b.omega) {
        m = m.max((x - y).amax());
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Truncated 1-D normal moments by Simpson quadrature.
    fn quad_1d(mu: f64, sd: f64) -> (f64, f64) {
        let k = 20000;
        let h = 2.0 / k as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=k {
            let x = -1.0 + i as f64 * h;
            let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let f = w * (-0.5 * ((x - mu) / sd).powi(2)).exp();
            z += f;
            m1 += f * x;
            m2 += f * x * x;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }

    #[test]
    fn one_dimensional_symmetric_mean_is_zero() {
        let tm = trunc_moments(&DVector::zeros(1), &DMatrix::from_element(1, 1, 0.3), 50).unwrap();
        assert!(tm.mean[0].abs() < 1e-10);
    }

    #[test]
    fn wide_normal_is_nearly_uniform() {
        let tm = trunc_moments(&DVector::zeros(1), &DMatrix::from_element(1, 1, 100.0), 50).unwrap();
        assert!((tm.cov[(0, 0)] - 1.0 / 3.0).abs() < 1e-3, "{}", tm.cov[(0, 0)]);
    }

    #[test]
    fn matches_quadrature_in_one_dimension() {
        for &(mu, s2) in &[(0.3, 0.2), (-0.5, 0.1), (0.9, 0.4), (0.0, 1.0)] {
            let tm = trunc_moments(&DVector::from_element(1, mu), &DMatrix::from_element(1, 1, s2), 50).unwrap();
            let (m, v) = quad_1d(mu, f64::sqrt(s2));
            assert!((tm.mean[0] - m).abs() < 1e-8, "mean {mu},{s2}: {} vs {m}", tm.mean[0]);
            assert!((tm.cov[(0, 0)] - v).abs() < 1e-8, "var {mu},{s2}: {} vs {v}", tm.cov[(0, 0)]);
            let mass = 0.5 * (statrs::function::erf::erf((1.0 - mu) / (2.0 * s2).sqrt()) - statrs::function::erf::erf((-1.0 - mu) / (2.0 * s2).sqrt()));
            assert!((tm.l - mass).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_sign_agrees_with_finite_differences() {
        // v = Ω* ∂L/∂μ*
        let mu = DVector::from_vec(vec![0.3, -0.2]);
        let om = DMatrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]);
        let tm = trunc_moments(&mu, &om, 60).unwrap();
        let h = 1e-6;
        let mut grad = DVector::zeros(2);
        for k in 0..2 {
            let mut a = mu.clone();
            let mut b = mu.clone();
            a[k] += h;
            b[k] -= h;
            grad[k] = (trunc_moments(&a, &om, 60).unwrap().l - trunc_moments(&b, &om, 60).unwrap().l) / (2.0 * h);
        }
        let v = &om * grad;
        assert!((v - &tm.v).amax() < 1e-7);
        assert!(tm.v.dot(&mu) < 0.0);
    }

    #[test]
    fn rejection_oracle_two_dimensions() {
        let mu = DVector::from_vec(vec![0.4, 0.1]);
        let om = DMatrix::from_row_slice(2, 2, &[0.25, 0.08, 0.08, 0.15]);
        let tm = trunc_moments(&mu, &om, 50).unwrap();
        let l = crate::linalg::chol(&om).unwrap().l();
        let mut r = rng::stream(21, "test-trunc", 0);
        let mut acc = crate::linalg::Welford::new(2);
        let mut kept = 0usize;
        let total = 200_000;
        for _ in 0..total {
            let e = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut r));
            let b = &mu + &l * e;
            if b.norm_squared() < 1.0 {
                acc.push(&b);
                kept += 1;
            }
        }
        let var = acc.variance();
        for k in 0..2 {
            let se = (var[k] / kept as f64).sqrt();
            assert!((acc.mean[k] - tm.mean[k]).abs() < 3.0 * se);
        }
        let phat = kept as f64 / total as f64;
        assert!((phat - tm.l).abs() < 3.0 * (phat * (1.0 - phat) / total as f64).sqrt());
    }

    #[test]
    fn longer_series_changes_little() {
        let mu = DVector::from_vec(vec![0.2, -0.3]);
        let om = DMatrix::from_row_slice(2, 2, &[0.3, 0.02, 0.02, 0.2]);
        let a = trunc_moments(&mu, &om, 50).unwrap();
        let b = trunc_moments(&mu, &om, 100).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-8);
        assert!((a.cov - b.cov).amax() < 1e-8);
    }

    fn corr_problem(seed: u64) -> ProperCorr {
        let mut r = rng::stream(seed, "test-corr", 0);
        let (n, p) = (30, 5);
        let b: Vec<f64> = (0..p).map(|_| { let e: f64 = StandardNormal.sample(&mut r); 0.7 * e }).collect();
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            let l: f64 = StandardNormal.sample(&mut r);
            for j in 0..p {
                let e: f64 = StandardNormal.sample(&mut r);
                x[(i, j)] = b[j] * l + 0.6 * e;
            }
        }
        let st = crate::data::standardize(&x, None).unwrap();
        ProperCorr::new(st.x, vec![1.0; p], 1).unwrap()
    }

    #[test]
    fn unit_diagonal_every_sweep() {
        let pc = corr_problem(1);
        let mut st = pc.init().unwrap();
        for _ in 0..10 {
            pc.sweep(&mut st).unwrap();
            for j in 0..5 {
                let c = st.mu.row(j).norm_squared() + st.omega[j].trace() + st.zeta[j];
                assert!((c - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn latent_and_loading_blocks_raise_the_bound() {
        for seed in 0..5 {
            let pc = corr_problem(seed);
            let mut st = pc.init().unwrap();
            for _ in 0..15 {
                let e0 = pc.elbo(&st);
                pc.update_latent(&mut st).unwrap();
                let e1 = pc.elbo(&st);
                pc.update_loadings(&mut st).unwrap();
                let e2 = pc.elbo(&st);
                assert!(e1 >= e0 - 1e-8 * e0.abs(), "latent {e0} -> {e1}");
                assert!(e2 >= e1 - 1e-8 * e1.abs(), "loadings {e1} -> {e2}");
                pc.update_zeta(&mut st).unwrap();
            }
        }
    }

    #[test]
    fn converged_state_is_a_fixed_point() {
        let pc = corr_problem(2);
        let (st, converged) = pc.fit(1e-12, 5000).unwrap();
        assert!(converged);
        let mut again = st.clone();
        pc.sweep(&mut again).unwrap();
        assert!(max_param_change(&st, &again) < 1e-6);
    }

    #[test]
    fn concentrated_at_zero_gives_unit_zeta() {
        let pc = corr_problem(3);
        let mut st = pc.init().unwrap();
        st.mu.fill(0.0);
        for o in st.omega.iter_mut() {
            *o = DMatrix::identity(1, 1) * 1e-12;
        }
        pc.update_zeta(&mut st).unwrap();
        assert!(st.zeta.iter().all(|z| (z - 1.0).abs() < 1e-10));
    }

    #[test]
    fn equal_truncation_masses_cancel() {
        // a point where q(b) equals the prior: log L_q - log L_p = 0
        let g = 0.4;
        let tm = trunc_moments(&DVector::zeros(2), &(DMatrix::identity(2, 2) * g), 50).unwrap();
        assert!((tm.log_l - chi2_cdf(2.0, 1.0 / g).ln()).abs() < 1e-12);
    }
}
