//! Q-learning: least squares fit of the linear-exposure outcome model
//! `μ_i = f0(x_i)·α + abar_i · fA(x_i)·β` with a sandwich covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, max_abs, weighted_cross};
use crate::netdata::{FeatureMap, OutcomeTable};
use crate::{Error, Real, Result};

/// Bases for the baseline (`f0`) and treatment-effect (`fA`) functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeModelSpec {
    pub basis_f0: FeatureMap,
    pub basis_fa: FeatureMap,
}

impl OutcomeModelSpec {
    pub fn new(basis_f0: FeatureMap, basis_fa: FeatureMap) -> Self {
        Self { basis_f0, basis_fa }
    }

    /// `(dim α, dim β)` for `p` outcome covariates.
    pub fn dims(&self, p: usize) -> (usize, usize) {
        (self.basis_f0.dim(p), self.basis_fa.dim(p))
    }
}

/// Row-stacked regressors `d_i = (f0(x_i), abar_i · fA(x_i))`.
pub fn design<T: Real>(x: &DMatrix<T>, abar: &DVector<T>, spec: &OutcomeModelSpec) -> Result<DMatrix<T>> {
    if abar.len() != x.nrows() {
        return Err(Error::Dimension { context: "exposure length", expected: x.nrows(), got: abar.len() });
    }
    let phi0 = spec.basis_f0.expand(x);
    let mut phia = spec.basis_fa.expand(x);
    for (i, mut row) in phia.row_iter_mut().enumerate() {
        row.scale_mut(abar[i]);
    }
    let (k0, ka) = (phi0.ncols(), phia.ncols());
    let mut d = DMatrix::zeros(x.nrows(), k0 + ka);
    d.columns_mut(0, k0).copy_from(&phi0);
    d.columns_mut(k0, ka).copy_from(&phia);
    Ok(d)
}

/// Averaged estimating function `(1/n) Σ_i d_i (Y_i − d_i·θ)`.
pub fn estimating_mean<T: Real>(design: &DMatrix<T>, y: &DVector<T>, theta: &DVector<T>) -> DVector<T> {
    design.transpose() * (y - design * theta) / T::from_count(design.nrows())
}

/// Bread `Σ_d = (1/n) Σ_i d_i d_iᵀ`, the negative Jacobian of
/// [`estimating_mean`].
pub fn bread<T: Real>(design: &DMatrix<T>) -> DMatrix<T> {
    design.transpose() * design / T::from_count(design.nrows())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QFit<T: Real> {
    pub spec: OutcomeModelSpec,
    pub alpha: DVector<T>,
    pub beta: DVector<T>,
    /// Sandwich covariance of `(α̂, β̂)`, already divided by `n`.
    pub cov_theta: DMatrix<T>,
    pub residuals: DVector<T>,
    /// Max-norm of `Dᵀ r` at the solution.
    pub normal_eq_norm: T,
    pub condition: T,
}

impl<T: Real> QFit<T> {
    pub fn theta(&self) -> DVector<T> {
        let mut v = DVector::zeros(self.alpha.len() + self.beta.len());
        v.rows_mut(0, self.alpha.len()).copy_from(&self.alpha);
        v.rows_mut(self.alpha.len(), self.beta.len()).copy_from(&self.beta);
        v
    }

    pub fn std_errors(&self) -> DVector<T> {
        self.cov_theta.diagonal().map(|v| v.max(T::zero()).sqrt())
    }

    /// Covariance block of `β̂`.
    pub fn cov_beta(&self) -> DMatrix<T> {
        let k0 = self.alpha.len();
        let kb = self.beta.len();
        self.cov_theta.view((k0, k0), (kb, kb)).into_owned()
    }
}

pub fn fit_q<T: Real>(out: &OutcomeTable<T>, abar: &DVector<T>, spec: &OutcomeModelSpec) -> Result<QFit<T>> {
    let d = design(&out.x, abar, spec)?;
    let (n, k) = d.shape();
    if n <= k {
        return Err(Error::Validation(format!(
            "Q-learning needs more outcome units ({n}) than parameters ({k})"
        )));
    }
    let ls = linalg::least_squares(&d, &out.y, "Q-learning design")?;
    let residuals = &out.y - &d * &ls.coef;
    let nt = T::from_count(n);
    let normal_eq_norm = max_abs((d.transpose() * &residuals).iter().copied());

    let bread_inv = &ls.gram_inverse * nt;
    let meat = weighted_cross(&d, &d, &residuals.map(|r| r * r));
    let cov_theta = linalg::symmetrize(&(&bread_inv * meat * &bread_inv)) / nt;

    let k0 = spec.basis_f0.dim(out.width());
    Ok(QFit {
        spec: *spec,
        alpha: ls.coef.rows(0, k0).into_owned(),
        beta: ls.coef.rows(k0, k - k0).into_owned(),
        cov_theta,
        residuals,
        normal_eq_norm,
        condition: ls.condition,
    })
}

/// Fitted means `f0(x_i)·α̂ + abar_i · fA(x_i)·β̂`.
pub fn q_predict<T: Real>(fit: &QFit<T>, x: &DMatrix<T>, abar: &DVector<T>) -> Result<DVector<T>> {
    let d = design(x, abar, &fit.spec)?;
    if d.ncols() != fit.alpha.len() + fit.beta.len() {
        return Err(Error::Dimension {
            context: "q_predict covariate width",
            expected: fit.alpha.len() + fit.beta.len(),
            got: d.ncols(),
        });
    }
    Ok(d * fit.theta())
}
