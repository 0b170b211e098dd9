//! A-learning: doubly robust estimation of the outcome model.
//!
//! The baseline coefficients `α` solve the usual least squares equations
//! while `β` solves
//!
//! ```text
//! (1/n) Σ_i λ_i (Y_i − μ_i(α, β)) (abar_i − âbar_i) = 0,
//! ```
//!
//! where `âbar` is the exposure expected under the propensity model and
//! `λ_i = c_i · fA(x_i)` with `c_i` the row mass of `H`. The estimate of
//! `β` is consistent when either the baseline model or the propensity
//! model is correct. Both bases are linear in their parameters, so the
//! joint system is a single square linear solve.
//!
//! The covariance adds a propensity-estimation term to the usual sandwich:
//! `Ω = Ω_φ + Ω_γ` with `Ω_γ = R⁻¹ (S⁻¹ S_γ) Ω_ε (S⁻¹ S_γ)ᵀ`, `R = J/n`.
//! The cross-covariance between the two pieces is not included.

use nalgebra::{DMatrix, DVector};

use crate::exposure::{expected_exposure, exposure_map, exposure_row_mass};
use crate::linalg::{self, max_abs, weighted_cross};
use crate::netdata::{FeatureMap, InterferenceMap, InterventionTable, OutcomeTable};
use crate::propensity::{fit_propensity, logistic, PropensityFit};
use crate::qlearn::OutcomeModelSpec;
use crate::{Error, Real, Result};

/// Where the propensities in `âbar` come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensitySource<T: Real> {
    /// Fit a logistic model with this basis on the intervention covariates.
    Estimate(FeatureMap),
    /// Use these propensities as known; no estimation term in the
    /// covariance.
    Known(DVector<T>),
}

/// Residual norms of the two estimating blocks at the returned solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ADiagnostics<T: Real> {
    pub alpha_block_norm: T,
    pub beta_block_norm: T,
    /// Magnitude of the summands, `max_k (1/n) Σ_i |g_ik Y_i|`.
    pub scale: T,
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AFit<T: Real> {
    pub spec: OutcomeModelSpec,
    pub alpha: DVector<T>,
    pub beta: DVector<T>,
    /// `None` when propensities were supplied as known.
    pub gamma_fit: Option<PropensityFit<T>>,
    /// Propensities used for the expected exposure.
    pub propensities: DVector<T>,
    /// Covariance of `(α̂, β̂)`, `(Ω̂_φ + Ω̂_γ) / n`.
    pub cov_alphabeta: DMatrix<T>,
    pub omega_phi: DMatrix<T>,
    pub omega_gamma: DMatrix<T>,
    /// `J / n`.
    pub ratio_r: T,
    pub residuals: DVector<T>,
    pub diagnostics: ADiagnostics<T>,
}

impl<T: Real> AFit<T> {
    pub fn theta(&self) -> DVector<T> {
        concat(&self.alpha, &self.beta)
    }

    pub fn std_errors(&self) -> DVector<T> {
        self.cov_alphabeta.diagonal().map(|v| v.max(T::zero()).sqrt())
    }

    pub fn cov_beta(&self) -> DMatrix<T> {
        let k0 = self.alpha.len();
        let kb = self.beta.len();
        self.cov_alphabeta.view((k0, k0), (kb, kb)).into_owned()
    }
}

fn concat<T: Real>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

/// Everything the estimating equations need, evaluated once.
#[derive(Debug, Clone)]
pub struct AlearnProblem<'a, T: Real> {
    pub spec: OutcomeModelSpec,
    pub h: &'a InterferenceMap<T>,
    pub y: DVector<T>,
    pub phi0: DMatrix<T>,
    pub phia: DMatrix<T>,
    pub abar: DVector<T>,
    pub row_mass: DVector<T>,
}

impl<'a, T: Real> AlearnProblem<'a, T> {
    pub fn new(
        out: &OutcomeTable<T>,
        a: &DVector<T>,
        h: &'a InterferenceMap<T>,
        spec: &OutcomeModelSpec,
    ) -> Result<Self> {
        if h.n_outcomes() != out.len() {
            return Err(Error::Dimension {
                context: "A-learning outcome units",
                expected: h.n_outcomes(),
                got: out.len(),
            });
        }
        h.check_nonnegative("A-learning interference map")?;
        let abar = exposure_map(h, a)?;
        Ok(Self {
            spec: *spec,
            h,
            y: out.y.clone(),
            phi0: spec.basis_f0.expand(&out.x),
            phia: spec.basis_fa.expand(&out.x),
            abar,
            row_mass: exposure_row_mass(h),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k0(&self) -> usize {
        self.phi0.ncols()
    }

    pub fn ka(&self) -> usize {
        self.phia.ncols()
    }

    /// Regressors `d_i = (φ0_i, abar_i φA_i)`.
    pub fn regressors(&self) -> DMatrix<T> {
        self.stack(&self.abar)
    }

    /// Instruments `g_i = (φ0_i, c_i φA_i (abar_i − âbar_i))`.
    pub fn instruments(&self, abar_hat: &DVector<T>) -> DMatrix<T> {
        let w = DVector::from_fn(self.n(), |i, _| self.row_mass[i] * (self.abar[i] - abar_hat[i]));
        self.stack(&w)
    }

    fn stack(&self, w: &DVector<T>) -> DMatrix<T> {
        let (k0, ka) = (self.k0(), self.ka());
        let mut m = DMatrix::zeros(self.n(), k0 + ka);
        m.columns_mut(0, k0).copy_from(&self.phi0);
        let mut right = self.phia.clone();
        for (i, mut row) in right.row_iter_mut().enumerate() {
            row.scale_mut(w[i]);
        }
        m.columns_mut(k0, ka).copy_from(&right);
        m
    }

    pub fn expected_exposure(&self, e: &DVector<T>) -> Result<DVector<T>> {
        expected_exposure(self.h, e)
    }

    pub fn residuals(&self, theta: &DVector<T>) -> DVector<T> {
        &self.y - self.regressors() * theta
    }

    /// Averaged stacked estimating function at `θ = (α, β)`.
    pub fn estimating_mean(&self, theta: &DVector<T>, abar_hat: &DVector<T>) -> DVector<T> {
        self.instruments(abar_hat).transpose() * self.residuals(theta) / T::from_count(self.n())
    }

    /// Same, with propensities `logistic(z γ)`.
    pub fn estimating_mean_at_gamma(
        &self,
        theta: &DVector<T>,
        z_int: &DMatrix<T>,
        gamma: &DVector<T>,
    ) -> Result<DVector<T>> {
        let e = (z_int * gamma).map(logistic);
        Ok(self.estimating_mean(theta, &self.expected_exposure(&e)?))
    }

    /// `∂/∂θ` of [`Self::estimating_mean`], i.e. `−(1/n) Σ g_i d_iᵀ`.
    pub fn jacobian_theta(&self, abar_hat: &DVector<T>) -> DMatrix<T> {
        let g = self.instruments(abar_hat);
        let d = self.regressors();
        -(g.transpose() * d) / T::from_count(self.n())
    }

    /// `∂/∂γ` of the averaged estimating function. Only the `β` block
    /// depends on `γ`, through `∂âbar_i/∂γ = (1/J) Σ_j H_ij e_j (1 − e_j) z_j`.
    pub fn jacobian_gamma(&self, theta: &DVector<T>, z_int: &DMatrix<T>, e: &DVector<T>) -> DMatrix<T> {
        let j = T::from_count(self.h.n_interventions());
        let mut weighted = z_int.clone();
        for (jj, mut row) in weighted.row_iter_mut().enumerate() {
            row.scale_mut(e[jj] * (T::one() - e[jj]));
        }
        let dabar = self.h.matrix() * weighted / j;
        let r = self.residuals(theta);
        let coef = DVector::from_fn(self.n(), |i, _| -self.row_mass[i] * r[i]);
        let beta_block = weighted_cross(&self.phia, &dabar, &coef);
        let (k0, ka) = (self.k0(), self.ka());
        let mut out = DMatrix::zeros(k0 + ka, z_int.ncols());
        out.rows_mut(k0, ka).copy_from(&beta_block);
        out
    }
}

/// Plug-in covariance pieces for a solved A-learning system.
#[derive(Debug, Clone, PartialEq)]
pub struct ACovariance<T: Real> {
    pub omega_phi: DMatrix<T>,
    pub omega_gamma: DMatrix<T>,
    /// `(Ω̂_φ + Ω̂_γ) / n`.
    pub cov: DMatrix<T>,
}

/// Sandwich covariance of `(α̂, β̂)`. `propensity` carries the propensity
/// design and `cov_gamma` (covariance of `√J (γ̂ − γ₀)`); pass `None` when
/// the propensities are known, which sets `Ω̂_γ = 0`.
pub fn a_covariance<T: Real>(
    problem: &AlearnProblem<'_, T>,
    theta: &DVector<T>,
    e: &DVector<T>,
    propensity: Option<(&DMatrix<T>, &DMatrix<T>)>,
) -> Result<ACovariance<T>> {
    let n = problem.n();
    let nt = T::from_count(n);
    let abar_hat = problem.expected_exposure(e)?;
    let g = problem.instruments(&abar_hat);
    let r = problem.residuals(theta);
    let jac = problem.jacobian_theta(&abar_hat);
    let jac_inv = linalg::inverse_square(&jac, "A-learning bread")?;

    let meat = weighted_cross(&g, &g, &r.map(|v| v * v));
    let omega_phi = linalg::symmetrize(&(&jac_inv * meat * jac_inv.transpose()));

    let k = theta.len();
    let omega_gamma = match propensity {
        None => DMatrix::zeros(k, k),
        Some((z_int, cov_gamma)) => {
            let ratio = T::from_count(problem.h.n_interventions()) / nt;
            let sens = &jac_inv * problem.jacobian_gamma(theta, z_int, e);
            linalg::symmetrize(&(&sens * cov_gamma * sens.transpose())) / ratio
        }
    };
    let cov = (&omega_phi + &omega_gamma) / nt;
    Ok(ACovariance { omega_phi, omega_gamma, cov })
}

/// Fits the A-learning estimator: propensities first (or taken as known),
/// then the joint `(α, β)` system.
pub fn fit_a<T: Real>(
    out: &OutcomeTable<T>,
    int: &InterventionTable<T>,
    h: &InterferenceMap<T>,
    spec: &OutcomeModelSpec,
    propensity: &PropensitySource<T>,
) -> Result<AFit<T>> {
    if h.n_interventions() != int.len() {
        return Err(Error::Dimension {
            context: "A-learning intervention units",
            expected: h.n_interventions(),
            got: int.len(),
        });
    }
    let (gamma_fit, e, z_int) = match propensity {
        PropensitySource::Estimate(basis) => {
            let fit = fit_propensity(&int.x, &int.a, *basis)?;
            let e = fit.fitted.clone();
            (Some(fit), e, Some(basis.expand(&int.x)))
        }
        PropensitySource::Known(e) => {
            if e.len() != int.len() {
                return Err(Error::Dimension {
                    context: "known propensities",
                    expected: int.len(),
                    got: e.len(),
                });
            }
            (None, e.clone(), None)
        }
    };

    let problem = AlearnProblem::new(out, &int.a, h, spec)?;
    let n = problem.n();
    let k = problem.k0() + problem.ka();
    if n <= k {
        return Err(Error::Validation(format!(
            "A-learning needs more outcome units ({n}) than parameters ({k})"
        )));
    }
    let abar_hat = problem.expected_exposure(&e)?;
    if problem.abar.iter().zip(abar_hat.iter()).all(|(a, b)| *a == *b) {
        return Err(Error::Singular {
            context: "A-learning: observed exposure equals its expectation everywhere",
            condition: f64::INFINITY,
        });
    }

    let g = problem.instruments(&abar_hat);
    let d = problem.regressors();
    let nt = T::from_count(n);
    let lhs = g.transpose() * &d / nt;
    let rhs = g.transpose() * &problem.y / nt;
    let (theta, condition) = linalg::solve_square(&lhs, &rhs, "A-learning joint system")?;

    let est = problem.estimating_mean(&theta, &abar_hat);
    let k0 = problem.k0();
    let abs_gy = g.abs().transpose() * problem.y.abs() / nt;
    let scale = max_abs(abs_gy.iter().copied());
    let diagnostics = ADiagnostics {
        alpha_block_norm: max_abs(est.rows(0, k0).iter().copied()),
        beta_block_norm: max_abs(est.rows(k0, k - k0).iter().copied()),
        scale: if scale > T::zero() { scale } else { T::one() },
        condition,
    };

    let cov = a_covariance(
        &problem,
        &theta,
        &e,
        match (&z_int, &gamma_fit) {
            (Some(z), Some(fit)) => Some((z, &fit.cov_gamma)),
            _ => None,
        },
    )?;

    Ok(AFit {
        spec: *spec,
        alpha: theta.rows(0, k0).into_owned(),
        beta: theta.rows(k0, k - k0).into_owned(),
        gamma_fit,
        propensities: e,
        cov_alphabeta: cov.cov,
        omega_phi: cov.omega_phi,
        omega_gamma: cov.omega_gamma,
        ratio_r: T::from_count(h.n_interventions()) / nt,
        residuals: problem.residuals(&theta),
        diagnostics,
    })
}
