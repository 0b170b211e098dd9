//! Logistic propensity model for intervention units: IRLS fit with a
//! sandwich covariance, quantile trimming, and intercept calibration.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, max_abs, weighted_cross};
use crate::netdata::FeatureMap;
use crate::{Error, Real, Result};

pub const MAX_ITERATIONS: usize = 100;
/// Fitted probabilities this close to 0 or 1 flag quasi-separation.
pub const SEPARATION_EPS: f64 = 1e-10;

/// Score tolerance: `1e-8`, or a few ulps for low-precision scalars.
pub fn score_tolerance<T: Real>() -> T {
    T::lit(1e-8).max(T::default_epsilon() * T::lit(64.0))
}

pub fn logistic<T: Real>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// `log(1 + e^t)` without overflow.
fn softplus<T: Real>(t: T) -> T {
    if t > T::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit<T: Real> {
    pub basis: FeatureMap,
    pub gamma: DVector<T>,
    /// `logistic(basis(x_j) · gamma)` for every unit.
    pub fitted: DVector<T>,
    /// Sandwich estimate of the covariance of `√J (γ̂ − γ₀)`.
    pub cov_gamma: DMatrix<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Some fitted probability is within [`SEPARATION_EPS`] of 0 or 1.
    pub separation: bool,
    /// Max-norm of the averaged score at `gamma`.
    pub score_norm: T,
}

impl<T: Real> PropensityFit<T> {
    pub fn n_units(&self) -> usize {
        self.fitted.len()
    }

    /// Standard errors of the coefficients, `sqrt(diag(cov_gamma) / J)`.
    pub fn std_errors(&self) -> DVector<T> {
        let j = T::from_count(self.n_units());
        self.cov_gamma.diagonal().map(|v| (v.max(T::zero()) / j).sqrt())
    }

    /// Fitted probabilities for new covariate rows.
    pub fn predict(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        let z = self.basis.expand(x);
        if z.ncols() != self.gamma.len() {
            return Err(Error::Dimension {
                context: "propensity predict",
                expected: self.gamma.len(),
                got: z.ncols(),
            });
        }
        Ok((z * &self.gamma).map(logistic))
    }
}

/// Averaged logistic score `(1/J) Σ_j z_j (a_j − e_j)`.
pub fn score<T: Real>(z: &DMatrix<T>, a: &DVector<T>, gamma: &DVector<T>) -> DVector<T> {
    let p = (z * gamma).map(logistic);
    z.transpose() * (a - p) / T::from_count(z.nrows())
}

fn log_likelihood<T: Real>(eta: &DVector<T>, a: &DVector<T>) -> T {
    eta.iter()
        .zip(a.iter())
        .fold(T::zero(), |acc, (t, y)| acc + *y * *t - softplus(*t))
}

/// Fits `P(A_j = 1 | x_j) = logistic(basis(x_j) · γ)` by Newton/IRLS with
/// step halving, stopping when the averaged score has max-norm below
/// [`score_tolerance`] or after [`MAX_ITERATIONS`] steps.
pub fn fit_propensity<T: Real>(
    x_int: &DMatrix<T>,
    a: &DVector<T>,
    basis: FeatureMap,
) -> Result<PropensityFit<T>> {
    let j = x_int.nrows();
    if a.len() != j {
        return Err(Error::Dimension { context: "fit_propensity", expected: j, got: a.len() });
    }
    if let Some(index) = a.iter().position(|v| *v != T::zero() && *v != T::one()) {
        return Err(Error::OutOfRange {
            context: "fit_propensity",
            index,
            detail: format!("treatment {} is not 0/1", a[index]),
        });
    }
    let treated = a.iter().filter(|v| **v == T::one()).count();
    if treated == 0 || treated == j {
        return Err(Error::Validation(format!(
            "propensity model needs both treatment classes ({treated} of {j} treated)"
        )));
    }
    let z = basis.expand(x_int);
    let k = z.ncols();
    if j <= k {
        return Err(Error::Validation(format!(
            "propensity model has {k} parameters but only {j} units"
        )));
    }
    let jt = T::from_count(j);
    let tol = score_tolerance::<T>();

    let mut gamma = DVector::zeros(k);
    if basis.include_intercept {
        gamma[0] = logit(T::from_count(treated) / jt);
    }
    let mut eta = &z * &gamma;
    let mut ll = log_likelihood(&eta, a);
    let mut iterations = 0;
    let mut converged = false;
    let mut s = score(&z, a, &gamma);
    while iterations < MAX_ITERATIONS {
        if max_abs(s.iter().copied()) <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let p = eta.map(logistic);
        let w = p.map(|v| v * (T::one() - v));
        let info = weighted_cross(&z, &z, &w);
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&s),
            None => linalg::solve_square(&info, &s, "propensity information")?.0,
        };
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &gamma + &step * t;
            let cand_eta = &z * &cand;
            let cand_ll = log_likelihood(&cand_eta, a);
            if cand_ll.is_finite_value() && cand_ll >= ll - T::default_epsilon() * ll.abs() {
                gamma = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= T::lit(0.5);
        }
        s = score(&z, a, &gamma);
        if !accepted {
            break;
        }
    }
    if !converged && max_abs(s.iter().copied()) <= tol {
        converged = true;
    }

    let fitted = eta.map(logistic);
    let lo = T::lit(SEPARATION_EPS);
    let separation = fitted.iter().any(|p| *p < lo || *p > T::one() - lo);
    if separation {
        log::warn!("propensity fit: fitted probabilities at 0/1 (quasi-separation)");
    }
    if !converged {
        log::warn!("propensity fit did not converge after {iterations} iterations");
    }

    let w = fitted.map(|v| v * (T::one() - v));
    let r2 = (a - &fitted).map(|r| r * r);
    let bread = weighted_cross(&z, &z, &w);
    let meat = weighted_cross(&z, &z, &r2);
    let bread_inv = match linalg::inverse_square(&bread, "propensity bread") {
        Ok(inv) => inv,
        Err(_) => bread
            .clone()
            .pseudo_inverse(T::default_epsilon())
            .map_err(|e| Error::Numerical(e.to_string()))?,
    };
    let cov_gamma = linalg::symmetrize(&(&bread_inv * meat * bread_inv.transpose()));

    Ok(PropensityFit {
        basis,
        gamma,
        fitted,
        cov_gamma,
        converged,
        iterations,
        separation,
        score_norm: max_abs(s.iter().copied()),
    })
}

/// Units kept and dropped by a propensity quantile cut.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimReport<T: Real> {
    pub threshold: T,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (N − 1) q`).
pub fn empirical_quantile<T: Real>(values: &[T], q: T) -> T {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = q * T::from_count(sorted.len() - 1);
    let lo = h.floor();
    let idx = lo.as_f64() as usize;
    if idx + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[idx] + (h - lo) * (sorted[idx + 1] - sorted[idx])
}

/// Drops units whose fitted propensity is strictly below the `quantile`
/// of the fitted values. `quantile` must lie in `[0, 1)`; zero keeps every
/// unit.
pub fn trim_by_propensity<T: Real>(fitted: &DVector<T>, quantile: T) -> Result<TrimReport<T>> {
    if !(quantile >= T::zero() && quantile < T::one()) {
        return Err(Error::Validation(format!("trim quantile {quantile} outside [0, 1)")));
    }
    if fitted.is_empty() {
        return Err(Error::Validation("no fitted propensities to trim".into()));
    }
    if let Some(index) = fitted.iter().position(|v| !v.is_finite_value()) {
        return Err(Error::OutOfRange {
            context: "trim_by_propensity",
            index,
            detail: "non-finite propensity".into(),
        });
    }
    let threshold = empirical_quantile(fitted.as_slice(), quantile);
    let (kept, dropped): (Vec<usize>, Vec<usize>) =
        (0..fitted.len()).partition(|&j| fitted[j] >= threshold);
    Ok(TrimReport { threshold, kept, dropped })
}

/// Finds the intercept that makes the mean propensity equal `target_mean`,
/// holding the non-intercept coefficients at `slopes`. The mean is strictly
/// increasing in the intercept, so a bracket is grown until it straddles
/// the target and then bisected to machine precision; the result is
/// checked against `tol`.
pub fn calibrate_propensity_intercept<T: Real>(
    x_int: &DMatrix<T>,
    basis: FeatureMap,
    slopes: &[T],
    target_mean: T,
    tol: T,
) -> Result<T> {
    if !(target_mean > T::zero() && target_mean < T::one()) {
        return Err(Error::Validation(format!("target mean {target_mean} outside (0, 1)")));
    }
    if !(tol > T::zero()) {
        return Err(Error::Validation("calibration tolerance must be positive".into()));
    }
    if !basis.include_intercept {
        return Err(Error::Validation("calibration needs a basis with an intercept".into()));
    }
    let z = basis.expand(x_int);
    if slopes.len() + 1 != z.ncols() {
        return Err(Error::Dimension {
            context: "calibrate_propensity_intercept slopes",
            expected: z.ncols() - 1,
            got: slopes.len(),
        });
    }
    if z.nrows() == 0 {
        return Err(Error::Validation("no intervention units".into()));
    }
    let offsets: Vec<T> = z
        .row_iter()
        .map(|row| row.iter().skip(1).zip(slopes).fold(T::zero(), |acc, (v, s)| acc + *v * *s))
        .collect();
    let jt = T::from_count(offsets.len());
    let mean_at = |b: T| offsets.iter().fold(T::zero(), |acc, o| acc + logistic(b + *o)) / jt;

    let mut lo = -T::one();
    let mut hi = T::one();
    let mut guard = 0;
    while mean_at(lo) > target_mean || mean_at(hi) < target_mean {
        if mean_at(lo) > target_mean {
            lo *= T::lit(2.0);
        }
        if mean_at(hi) < target_mean {
            hi *= T::lit(2.0);
        }
        guard += 1;
        if guard > 1100 {
            return Err(Error::Numerical("could not bracket the target mean propensity".into()));
        }
    }
    let mut mid = (lo + hi) * T::lit(0.5);
    for _ in 0..2000 {
        mid = (lo + hi) * T::lit(0.5);
        let m = mean_at(mid);
        if m == target_mean || mid <= lo || mid >= hi {
            break;
        }
        if m < target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let achieved = mean_at(mid);
    if (achieved - target_mean).abs() > tol {
        return Err(Error::Numerical(format!(
            "calibrated mean propensity {achieved} misses target {target_mean} by more than {tol}"
        )));
    }
    Ok(mid)
}
