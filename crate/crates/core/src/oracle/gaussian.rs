//! Gaussians and Gaussian mixtures under the linear interpolation
//! perturbation, in closed form.
//!
//! With data X1 ~ N(mu, Sigma), noise X0 ~ N(0, I) independent, and
//! X_t = t*X1 + (1-t)*X0, the perturbed marginal is
//! N(t*mu, t^2*Sigma + (1-t)^2*I); scores, drifts, and KL below all follow
//! from that.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::rng::normal;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("covariance is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("mixture weights must be positive and sum to 1 (sum {0})")]
    BadWeights(f64),
    #[error("dimension mismatch: spec is {spec}-d, point is {point}-d")]
    DimMismatch { spec: usize, point: usize },
}

/// A full-covariance Gaussian with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct GaussianSpec {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, cov_rows: Vec<Vec<f64>>) -> Result<Self, OracleError> {
        let d = mean.len();
        let mut cov = DMatrix::zeros(d, d);
        for (i, row) in cov_rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                cov[(i, j)] = v;
            }
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(OracleError::NotSymmetric(asym));
        }
        let chol = Cholesky::new(cov.clone()).ok_or(OracleError::NotPositiveDefinite)?;
        Ok(Self { mean: DVector::from_vec(mean), cov, chol })
    }

    pub fn isotropic(mean: Vec<f64>, var: f64) -> Self {
        let d = mean.len();
        let rows = (0..d)
            .map(|i| (0..d).map(|j| if i == j { var } else { 0.0 }).collect())
            .collect();
        Self::new(mean, rows).expect("isotropic covariance is SPD")
    }

    pub fn standard(d: usize) -> Self {
        Self::isotropic(vec![0.0; d], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean.iter().copied().collect()
    }

    pub fn cov_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.cov[(i, j)]).collect())
            .collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| normal(rng)));
        (&self.mean + self.chol.l() * z).iter().copied().collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), OracleError> {
        if x.len() != self.dim() {
            return Err(OracleError::DimMismatch { spec: self.dim(), point: x.len() });
        }
        Ok(())
    }

    /// Mean and covariance of X_t = t*X1 + (1-t)*X0.
    fn perturbed(&self, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mean = &self.mean * t;
        let cov = &self.cov * (t * t) + DMatrix::identity(d, d) * ((1.0 - t) * (1.0 - t));
        (mean, cov)
    }

    /// Score of the perturbed marginal: -(t^2 Sigma + (1-t)^2 I)^{-1}(x - t mu).
    pub fn perturbed_score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        self.check_dim(x)?;
        assert!((0.0..1.0).contains(&t), "perturbed_score needs t in [0, 1), got {t}");
        let (mean_t, cov_t) = self.perturbed(t);
        let chol_t = Cholesky::new(cov_t).ok_or(OracleError::NotPositiveDefinite)?;
        let resid = DVector::from_row_slice(x) - mean_t;
        let s = -chol_t.solve(&resid);
        Ok(s.iter().copied().collect())
    }

    /// Log density of the perturbed marginal at x.
    pub fn perturbed_log_pdf(&self, t: f64, x: &[f64]) -> Result<f64, OracleError> {
        self.check_dim(x)?;
        let (mean_t, cov_t) = self.perturbed(t);
        let chol_t = Cholesky::new(cov_t).ok_or(OracleError::NotPositiveDefinite)?;
        let resid = DVector::from_row_slice(x) - mean_t;
        let maha = resid.dot(&chol_t.solve(&resid));
        let logdet: f64 = chol_t.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let d = self.dim() as f64;
        Ok(-0.5 * (maha + logdet + d * (2.0 * std::f64::consts::PI).ln()))
    }

    /// The rectified-flow minimizer E[X0 - X1 | X_t = x] in closed form:
    /// -mu + ((1-t) I - t Sigma)(t^2 Sigma + (1-t)^2 I)^{-1}(x - t mu).
    pub fn analytic_drift(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        self.check_dim(x)?;
        assert!(t > 0.0 && t < 1.0, "analytic_drift needs t in (0, 1), got {t}");
        let d = self.dim();
        let (mean_t, cov_t) = self.perturbed(t);
        let chol_t = Cholesky::new(cov_t).ok_or(OracleError::NotPositiveDefinite)?;
        let resid = DVector::from_row_slice(x) - mean_t;
        let cross = DMatrix::identity(d, d) * (1.0 - t) - &self.cov * t;
        let v = -&self.mean + cross * chol_t.solve(&resid);
        Ok(v.iter().copied().collect())
    }
}

/// Drift of a point mass at `mu` (the Sigma -> 0 limit): (x - t mu)/(1 - t) - mu.
pub fn point_mass_drift(mu: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
    assert!(t < 1.0);
    x.iter()
        .zip(mu)
        .map(|(&xi, &mi)| (xi - t * mi) / (1.0 - t) - mi)
        .collect()
}

/// Score of the perturbed point mass N(t mu, (1-t)^2 I): -(x - t mu)/(1-t)^2.
pub fn point_mass_score(mu: &[f64], t: f64, x: &[f64]) -> Vec<f64> {
    assert!(t < 1.0);
    let s2 = (1.0 - t) * (1.0 - t);
    x.iter().zip(mu).map(|(&xi, &mi)| -(xi - t * mi) / s2).collect()
}

/// Weighted Gaussian mixture.
#[derive(Clone, Debug)]
pub struct MixtureSpec {
    components: Vec<(f64, GaussianSpec)>,
}

impl MixtureSpec {
    pub fn new(components: Vec<(f64, GaussianSpec)>) -> Result<Self, OracleError> {
        let sum: f64 = components.iter().map(|(w, _)| w).sum();
        if components.iter().any(|(w, _)| *w <= 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(OracleError::BadWeights(sum));
        }
        Ok(Self { components })
    }

    /// Equal-weight isotropic modes centered on a circle of `radius`,
    /// starting at angle 0; the standard several-Gaussians testbed.
    pub fn ring(n_modes: usize, radius: f64, sigma: f64) -> Self {
        let comps = (0..n_modes)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n_modes as f64;
                let g = GaussianSpec::isotropic(vec![radius * a.cos(), radius * a.sin()], sigma * sigma);
                (1.0 / n_modes as f64, g)
            })
            .collect();
        Self::new(comps).expect("ring weights sum to 1")
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    pub fn components(&self) -> &[(f64, GaussianSpec)] {
        &self.components
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|(_, g)| g.mean()).collect()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (w, g) in &self.components {
            acc += w;
            if u < acc {
                return g.sample(rng);
            }
        }
        self.components.last().unwrap().1.sample(rng)
    }

    /// Responsibility-weighted combination of component perturbed scores,
    /// computed in the log domain with max subtraction.
    pub fn perturbed_score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut logs = Vec::with_capacity(self.components.len());
        let mut scores = Vec::with_capacity(self.components.len());
        for (w, g) in &self.components {
            logs.push(w.ln() + g.perturbed_log_pdf(t, x)?);
            scores.push(g.perturbed_score(t, x)?);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        let d = x.len();
        let mut out = vec![0.0; d];
        for (w, s) in weights.iter().zip(&scores) {
            for (o, &si) in out.iter_mut().zip(s) {
                *o += w / z * si;
            }
        }
        Ok(out)
    }

    pub fn perturbed_log_pdf(&self, t: f64, x: &[f64]) -> Result<f64, OracleError> {
        let mut logs = Vec::with_capacity(self.components.len());
        for (w, g) in &self.components {
            logs.push(w.ln() + g.perturbed_log_pdf(t, x)?);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
    }
}

/// Closed-form KL(q || p) between Gaussians.
pub fn gaussian_kl(q: &GaussianSpec, p: &GaussianSpec) -> Result<f64, OracleError> {
    assert_eq!(q.dim(), p.dim(), "gaussian_kl dimension mismatch");
    let d = q.dim() as f64;
    let p_chol = &p.chol;
    let trace = p_chol.solve(&q.cov).trace();
    let resid = &p.mean - &q.mean;
    let maha = resid.dot(&p_chol.solve(&resid));
    let logdet = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
        c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0
    };
    Ok(0.5 * (trace + maha - d + logdet(p_chol) - logdet(&q.chol)))
}

/// Time-weighted KL between perturbed 1-D marginals for q = N(b, a^2)
/// against p = N(0, 1), integrated by the midpoint rule over [lo, hi]
/// with uniform p(t). The analytic route of the distillation objective.
pub fn weighted_kl_1d(
    a: f64,
    b: f64,
    (lo, hi): (f64, f64),
    weight: impl Fn(f64) -> f64,
    t_nodes: usize,
) -> f64 {
    let dt = (hi - lo) / t_nodes as f64;
    let mut acc = 0.0;
    for j in 0..t_nodes {
        let t = lo + (j as f64 + 0.5) * dt;
        let s2q = t * t * a * a + (1.0 - t) * (1.0 - t);
        let s2p = t * t + (1.0 - t) * (1.0 - t);
        let mq = t * b;
        let kl = 0.5 * ((s2p / s2q).ln() + (s2q + mq * mq) / s2p - 1.0);
        acc += weight(t) * kl / t_nodes as f64;
    }
    acc
}

/// Moment-matched Gaussian fit of a sample set.
pub fn moment_fit(samples: &[Vec<f64>]) -> Result<GaussianSpec, OracleError> {
    let n = samples.len();
    assert!(n >= 2, "moment_fit needs at least two samples");
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, &x) in mean.iter_mut().zip(s) {
            *m += x / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]) / (n as f64 - 1.0);
            }
        }
    }
    GaussianSpec::new(mean, cov)
}


impl GaussianSpec {
    /// Unperturbed log density (used by the KL Monte-Carlo check).
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let resid = DVector::from_row_slice(x) - &self.mean;
        let maha = resid.dot(&self.chol.solve(&resid));
        let logdet: f64 = self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let d = self.dim() as f64;
        -0.5 * (maha + logdet + d * (2.0 * std::f64::consts::PI).ln())
    }
}
