//! Normal-inverse-Wishart sufficient statistics with a maintained Cholesky
//! factor of the posterior scale matrix.
//!
//! For a topic holding points `s` (count `n`, mean `x̄`):
//!
//! ```text
//! κₙ = κ + n,  vₙ = v + n,  uₙ = (κ·u + n·x̄)/κₙ
//! Ψₙ = Ψ + (κ·n/κₙ)(x̄ − u)(x̄ − u)ᵀ + Σᵢ (xᵢ − x̄)(xᵢ − x̄)ᵀ
//! ```
//!
//! Adding a point `x` changes `Ψₙ` by the single outer product
//! `κₙ/(κₙ+1) · (x − uₙ)(x − uₙ)ᵀ`, so the factor is maintained with one
//! rank-one update per add and one downdate per remove.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{Cholesky, LinalgError};
use crate::math::{ln_gamma, log_multigamma};
use crate::scalar::Scalar;

const LN_PI: f64 = 1.144_729_885_849_400_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussianError {
    #[error("invalid NIW prior: {0}")]
    InvalidPrior(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("cannot remove a point from an empty topic")]
    Empty,
    #[error("point has dimension {got}, topic has {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Normal-inverse-Wishart hyperparameters `(u, Ψ, κ, v)`.
#[derive(Debug, Clone)]
pub struct NiwPrior<T> {
    mean: Vec<T>,
    psi: Vec<T>,
    psi_chol: Cholesky<T>,
    kappa: f64,
    dof: f64,
}

impl<T: Scalar> NiwPrior<T> {
    /// `psi` is row-major `M×M`; it must be symmetric positive definite and
    /// `dof > M − 1`.
    pub fn new(mean: Vec<T>, psi: Vec<T>, kappa: f64, dof: f64) -> Result<Self, GaussianError> {
        let dim = mean.len();
        if dim == 0 {
            return Err(GaussianError::InvalidPrior("dimension must be positive".into()));
        }
        if psi.len() != dim * dim {
            return Err(GaussianError::InvalidPrior(format!(
                "scale matrix has {} entries, expected {}",
                psi.len(),
                dim * dim
            )));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(GaussianError::InvalidPrior(format!("kappa must be > 0, got {kappa}")));
        }
        if !(dof > dim as f64 - 1.0) || !dof.is_finite() {
            return Err(GaussianError::InvalidPrior(format!(
                "degrees of freedom must exceed M-1 = {}, got {dof}",
                dim - 1
            )));
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (psi[i * dim + j].as_f64(), psi[j * dim + i].as_f64());
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(GaussianError::InvalidPrior("scale matrix is not symmetric".into()));
                }
            }
        }
        let psi_chol = Cholesky::factor(&psi, dim)?;
        Ok(Self {
            mean,
            psi,
            psi_chol,
            kappa,
            dof,
        })
    }

    /// Prior with `Ψ = scale · I`.
    pub fn isotropic(mean: Vec<T>, scale: f64, kappa: f64, dof: f64) -> Result<Self, GaussianError> {
        let dim = mean.len();
        let mut psi = vec![T::zero(); dim * dim];
        for i in 0..dim {
            psi[i * dim + i] = T::from_f64_lossy(scale);
        }
        Self::new(mean, psi, kappa, dof)
    }

    /// Same prior with `Ψ` multiplied by `ratio`.
    pub fn with_scaled_psi(&self, ratio: f64) -> Result<Self, GaussianError> {
        let r = T::from_f64_lossy(ratio);
        let psi = self.psi.iter().map(|&p| p * r).collect();
        Self::new(self.mean.clone(), psi, self.kappa, self.dof)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &[T] {
        &self.mean
    }
    pub fn psi(&self) -> &[T] {
        &self.psi
    }
    pub fn psi_chol(&self) -> &Cholesky<T> {
        &self.psi_chol
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn dof(&self) -> f64 {
        self.dof
    }
}

/// Per-topic NIW posterior state.
#[derive(Debug, Clone)]
pub struct GaussianTopicStats<T> {
    prior: Arc<NiwPrior<T>>,
    n: usize,
    sum: Vec<T>,
    // lower triangle of Σ x xᵀ, kept for the downdate-failure rebuild
    scatter: Vec<T>,
    chol: Cholesky<T>,
    refactorizations: u64,
}

impl<T: Scalar> GaussianTopicStats<T> {
    pub fn new(prior: Arc<NiwPrior<T>>) -> Self {
        let dim = prior.dim();
        let chol = prior.psi_chol().clone();
        Self {
            prior,
            n: 0,
            sum: vec![T::zero(); dim],
            scatter: vec![T::zero(); dim * dim],
            chol,
            refactorizations: 0,
        }
    }

    /// Batch construction: two-pass centered scatter, then one factorization.
    pub fn from_points<'a, I>(prior: Arc<NiwPrior<T>>, points: I) -> Result<Self, GaussianError>
    where
        I: IntoIterator<Item = &'a [T]>,
        T: 'a,
    {
        let mut stats = Self::new(prior);
        let pts: Vec<&[T]> = points.into_iter().collect();
        if pts.is_empty() {
            return Ok(stats);
        }
        let dim = stats.dim();
        for p in &pts {
            stats.check_dim(p)?;
            for (s, &x) in stats.sum.iter_mut().zip(p.iter()) {
                *s = *s + x;
            }
            for i in 0..dim {
                for j in 0..=i {
                    stats.scatter[i * dim + j] = stats.scatter[i * dim + j] + p[i] * p[j];
                }
            }
        }
        stats.n = pts.len();
        let psi_n = stats.psi_from_centered(&pts);
        stats.chol = Cholesky::factor(&psi_n, dim)?;
        Ok(stats)
    }

    pub fn prior(&self) -> &Arc<NiwPrior<T>> {
        &self.prior
    }
    pub fn dim(&self) -> usize {
        self.prior.dim()
    }
    pub fn count(&self) -> usize {
        self.n
    }
    pub fn sum(&self) -> &[T] {
        &self.sum
    }
    pub fn chol(&self) -> &Cholesky<T> {
        &self.chol
    }
    /// Number of full refactorizations performed by the downdate fallback.
    pub fn refactorizations(&self) -> u64 {
        self.refactorizations
    }

    pub fn kappa_n(&self) -> f64 {
        self.prior.kappa() + self.n as f64
    }
    pub fn dof_n(&self) -> f64 {
        self.prior.dof() + self.n as f64
    }
    /// Degrees of freedom of the Student-t predictive, `vₙ − M + 1`.
    pub fn predictive_dof(&self) -> f64 {
        self.dof_n() - self.dim() as f64 + 1.0
    }

    pub fn posterior_mean(&self) -> Vec<T> {
        let kappa = T::from_f64_lossy(self.prior.kappa());
        let kn = T::from_f64_lossy(self.kappa_n());
        self.prior
            .mean()
            .iter()
            .zip(&self.sum)
            .map(|(&u, &s)| (kappa * u + s) / kn)
            .collect()
    }

    fn check_dim(&self, x: &[T]) -> Result<(), GaussianError> {
        if x.len() != self.dim() {
            return Err(GaussianError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn scaled_deviation(&self, x: &[T]) -> Vec<T> {
        let kn = self.kappa_n();
        let w = T::from_f64_lossy((kn / (kn + 1.0)).sqrt());
        self.posterior_mean()
            .iter()
            .zip(x)
            .map(|(&m, &xi)| w * (xi - m))
            .collect()
    }

    pub fn add_point(&mut self, x: &[T]) -> Result<(), GaussianError> {
        self.check_dim(x)?;
        let mut w = self.scaled_deviation(x);
        self.chol.rank_one_update(&mut w);
        self.accumulate(x, T::one());
        self.n += 1;
        Ok(())
    }

    /// Removes a previously added point. If the downdate loses positive
    /// definiteness the factor is rebuilt from the raw statistics.
    pub fn remove_point(&mut self, x: &[T]) -> Result<(), GaussianError> {
        self.check_dim(x)?;
        if self.n == 0 {
            return Err(GaussianError::Empty);
        }
        self.accumulate(x, -T::one());
        self.n -= 1;
        let mut w = self.scaled_deviation(x);
        if self.chol.rank_one_downdate(&mut w).is_err() {
            self.rebuild_factor()?;
        }
        Ok(())
    }

    fn accumulate(&mut self, x: &[T], sign: T) {
        let dim = self.dim();
        for (s, &xi) in self.sum.iter_mut().zip(x) {
            *s = *s + sign * xi;
        }
        for i in 0..dim {
            let sxi = sign * x[i];
            let row = &mut self.scatter[i * dim..i * dim + i + 1];
            for (c, &xj) in row.iter_mut().zip(&x[..=i]) {
                *c = *c + sxi * xj;
            }
        }
    }

    /// Recompute `Ψₙ` from `(n, Σx, Σxxᵀ)` and refactor. O(M³).
    pub fn rebuild_factor(&mut self) -> Result<(), GaussianError> {
        let psi_n = self.psi_from_raw();
        self.chol = Cholesky::factor(&psi_n, self.dim())?;
        self.refactorizations += 1;
        Ok(())
    }

    /// Dense `Ψₙ` from the raw accumulated statistics.
    pub fn psi_from_raw(&self) -> Vec<T> {
        let dim = self.dim();
        let mut psi = self.prior.psi().to_vec();
        if self.n == 0 {
            return psi;
        }
        let nf = T::from_usize(self.n).unwrap();
        let mean: Vec<T> = self.sum.iter().map(|&s| s / nf).collect();
        let kappa = self.prior.kappa();
        let shrink = T::from_f64_lossy(kappa * self.n as f64 / (kappa + self.n as f64));
        let u = self.prior.mean();
        for i in 0..dim {
            for j in 0..=i {
                let centered = self.scatter[i * dim + j] - nf * mean[i] * mean[j];
                let v = psi[i * dim + j] + shrink * (mean[i] - u[i]) * (mean[j] - u[j]) + centered;
                psi[i * dim + j] = v;
                psi[j * dim + i] = v;
            }
        }
        psi
    }

    fn psi_from_centered(&self, pts: &[&[T]]) -> Vec<T> {
        let dim = self.dim();
        let nf = T::from_usize(pts.len()).unwrap();
        let mean: Vec<T> = self.sum.iter().map(|&s| s / nf).collect();
        let kappa = self.prior.kappa();
        let n = pts.len() as f64;
        let shrink = T::from_f64_lossy(kappa * n / (kappa + n));
        let u = self.prior.mean();
        let mut psi = self.prior.psi().to_vec();
        for i in 0..dim {
            for j in 0..=i {
                let mut c = T::zero();
                for p in pts {
                    c = c + (p[i] - mean[i]) * (p[j] - mean[j]);
                }
                let v = psi[i * dim + j] + shrink * (mean[i] - u[i]) * (mean[j] - u[j]) + c;
                psi[i * dim + j] = v;
                psi[j * dim + i] = v;
            }
        }
        psi
    }

    /// Log density of the multivariate Student-t predictive
    /// `T_ν(x | uₙ, (κₙ+1)/(κₙ ν) · Ψₙ)` with `ν = vₙ − M + 1`.
    pub fn log_predictive(&self, x: &[T]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let m = self.dim() as f64;
        let nu = self.predictive_dof();
        let kn = self.kappa_n();
        let scale = (kn + 1.0) / (kn * nu);
        let diff: Vec<T> = self
            .posterior_mean()
            .iter()
            .zip(x)
            .map(|(&mu, &xi)| xi - mu)
            .collect();
        let q = self.chol.inverse_quadratic_form(&diff).as_f64();
        let log_det = m * scale.ln() + self.chol.log_det();
        ln_gamma((nu + m) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * m * (nu.ln() + LN_PI) - 0.5 * log_det
            - 0.5 * (nu + m) * (q / (scale * nu)).ln_1p()
    }

    /// Log of the marginal probability of adding the set `points` to this
    /// topic: the Γ_M ratio, `|Ψ|` powers and `(κ+|s|)/(κ+|s|+|t|)` factor
    /// with a `π^{−|t|M/2}` normalizer.
    pub fn log_marginal_set(&self, points: &[&[T]]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let dim = self.dim();
        let m = dim as f64;
        let s = self.n as f64;
        let t = points.len() as f64;
        let v = self.prior.dof();
        let kappa = self.prior.kappa();

        let mut chol = self.chol.clone();
        let mut mean = self.posterior_mean();
        let mut kn = self.kappa_n();
        let mut w = vec![T::zero(); dim];
        for p in points {
            debug_assert_eq!(p.len(), dim);
            let c = T::from_f64_lossy((kn / (kn + 1.0)).sqrt());
            for i in 0..dim {
                w[i] = c * (p[i] - mean[i]);
            }
            chol.rank_one_update(&mut w);
            let kf = T::from_f64_lossy(kn);
            let kf1 = T::from_f64_lossy(kn + 1.0);
            for i in 0..dim {
                mean[i] = (kf * mean[i] + p[i]) / kf1;
            }
            kn += 1.0;
        }

        let gamma_ratio = log_multigamma(dim, (v + s + t) / 2.0).expect("dof validated by prior")
            - log_multigamma(dim, (v + s) / 2.0).expect("dof validated by prior");
        -0.5 * t * m * LN_PI + gamma_ratio + 0.5 * (v + s) * self.chol.log_det()
            - 0.5 * (v + s + t) * chol.log_det()
            + 0.5 * m * ((kappa + s).ln() - (kappa + s + t).ln())
    }

    /// Log marginal likelihood of all points currently held, from the prior.
    pub fn log_evidence(&self) -> f64 {
        let dim = self.dim();
        let m = dim as f64;
        let n = self.n as f64;
        let v = self.prior.dof();
        let kappa = self.prior.kappa();
        let gamma_ratio = log_multigamma(dim, (v + n) / 2.0).expect("dof validated by prior")
            - log_multigamma(dim, v / 2.0).expect("dof validated by prior");
        -0.5 * n * m * LN_PI + gamma_ratio + 0.5 * v * self.prior.psi_chol().log_det()
            - 0.5 * (v + n) * self.chol.log_det()
            + 0.5 * m * (kappa.ln() - (kappa + n).ln())
    }
}
