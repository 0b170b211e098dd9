//! Per-intervention-unit total effects and their plug-in inference.
//!
//! Treating unit `j` moves the exposure of outcome unit `i` by `H_ij / J`,
//! so with the linear-exposure model the total effect on the outcome
//! population is
//!
//! ```text
//! TE_j = (1/J) Σ_i H_ij fA(x_i)ᵀ β = w_jᵀ β,   w_j = (1/J) Σ_i H_ij fA(x_i).
//! ```
//!
//! Negative effects are beneficial. Standard errors are `sqrt(w_jᵀ C w_j)`
//! for the covariance `C` of `β̂`; p-values are for `H0: TE_j ≥ 0` and are
//! not corrected for multiplicity.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{normal_cdf, two_sided_z};
use crate::netdata::{FeatureMap, InterferenceMap};
use crate::{Error, Real, Result};

pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct EffectTable<T: Real> {
    pub total_effect: DVector<T>,
    pub se: DVector<T>,
    pub p_one_sided: DVector<T>,
    pub ci_low: DVector<T>,
    pub ci_high: DVector<T>,
    /// `TE_j / cost_j` where the cost is positive.
    pub benefit_cost: Option<Vec<Option<T>>>,
    /// Columns of `H` that are identically zero; their effect is
    /// structurally absent and reported as 0.
    pub zero_columns: Vec<usize>,
    pub level: f64,
}

impl<T: Real> EffectTable<T> {
    pub fn len(&self) -> usize {
        self.total_effect.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total_effect.is_empty()
    }
}

/// The `J × dim(fA)` matrix of effect weights `(1/J) Hᵀ fA(X)`.
pub fn effect_weights<T: Real>(
    h: &InterferenceMap<T>,
    x_out: &DMatrix<T>,
    basis_fa: FeatureMap,
) -> Result<DMatrix<T>> {
    if h.n_outcomes() != x_out.nrows() {
        return Err(Error::Dimension {
            context: "effect weights outcome units",
            expected: h.n_outcomes(),
            got: x_out.nrows(),
        });
    }
    let phia = basis_fa.expand(x_out);
    Ok(h.matrix().transpose() * phia / T::from_count(h.n_interventions()))
}

pub fn total_effects<T: Real>(
    h: &InterferenceMap<T>,
    x_out: &DMatrix<T>,
    beta: &DVector<T>,
    basis_fa: FeatureMap,
) -> Result<DVector<T>> {
    let w = effect_weights(h, x_out, basis_fa)?;
    apply_weights(&w, beta)
}

fn apply_weights<T: Real>(w: &DMatrix<T>, beta: &DVector<T>) -> Result<DVector<T>> {
    if w.ncols() != beta.len() {
        return Err(Error::Dimension {
            context: "treatment-effect coefficients",
            expected: w.ncols(),
            got: beta.len(),
        });
    }
    Ok(w * beta)
}

/// `se_j = sqrt(w_jᵀ C w_j)`. Small negative quadratic forms from rounding
/// are clamped to zero; anything beyond that is an error.
pub fn standard_errors<T: Real>(weights: &DMatrix<T>, cov_beta: &DMatrix<T>) -> Result<DVector<T>> {
    let k = weights.ncols();
    if cov_beta.shape() != (k, k) {
        return Err(Error::Dimension {
            context: "treatment-effect covariance",
            expected: k,
            got: cov_beta.nrows(),
        });
    }
    let abs_cov = cov_beta.abs();
    let tol = T::lit(1e-10);
    let mut se = DVector::zeros(weights.nrows());
    for j in 0..weights.nrows() {
        let w = weights.row(j).transpose();
        let v = (w.transpose() * cov_beta * &w)[(0, 0)];
        let size = (w.abs().transpose() * &abs_cov * w.abs())[(0, 0)];
        if !v.is_finite_value() {
            return Err(Error::Numerical(format!("non-finite effect variance for unit {j}")));
        }
        if v < -tol * size {
            return Err(Error::Numerical(format!(
                "negative effect variance {} for unit {j}: treatment-effect covariance block is not positive semidefinite",
                v.as_f64()
            )));
        }
        se[j] = v.max(T::zero()).sqrt();
    }
    Ok(se)
}

/// `Φ(TE/se)`; a zero standard error gives a degenerate test.
pub fn one_sided_p<T: Real>(te: T, se: T) -> T {
    if se > T::zero() {
        T::lit(normal_cdf((te / se).as_f64()))
    } else if te < T::zero() {
        T::zero()
    } else if te > T::zero() {
        T::one()
    } else {
        T::lit(0.5)
    }
}

/// Elementwise `te / cost`, `None` where the cost is not positive.
pub fn benefit_cost<T: Real>(te: &DVector<T>, cost: &DVector<T>) -> Result<Vec<Option<T>>> {
    if te.len() != cost.len() {
        return Err(Error::Dimension { context: "benefit-cost costs", expected: te.len(), got: cost.len() });
    }
    Ok(te
        .iter()
        .zip(cost.iter())
        .map(|(&t, &c)| (c > T::zero()).then(|| t / c))
        .collect())
}

/// Assembles the effect table from the weights, `β̂`, and its covariance.
pub fn effect_table<T: Real>(
    weights: &DMatrix<T>,
    zero_columns: Vec<usize>,
    beta: &DVector<T>,
    cov_beta: &DMatrix<T>,
    level: f64,
    cost: Option<&DVector<T>>,
) -> Result<EffectTable<T>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let te = apply_weights(weights, beta)?;
    let se = standard_errors(weights, cov_beta)?;
    let z = T::lit(two_sided_z(level));
    let p = DVector::from_fn(te.len(), |j, _| one_sided_p(te[j], se[j]));
    let ci_low = DVector::from_fn(te.len(), |j, _| te[j] - z * se[j]);
    let ci_high = DVector::from_fn(te.len(), |j, _| te[j] + z * se[j]);
    let benefit_cost = cost.map(|c| benefit_cost(&te, c)).transpose()?;
    Ok(EffectTable { total_effect: te, se, p_one_sided: p, ci_low, ci_high, benefit_cost, zero_columns, level })
}

/// Effect table straight from the data and a fitted `β̂`.
pub fn estimate_effects<T: Real>(
    h: &InterferenceMap<T>,
    x_out: &DMatrix<T>,
    basis_fa: FeatureMap,
    beta: &DVector<T>,
    cov_beta: &DMatrix<T>,
    level: f64,
    cost: Option<&DVector<T>>,
) -> Result<EffectTable<T>> {
    let w = effect_weights(h, x_out, basis_fa)?;
    effect_table(&w, h.zero_columns(), beta, cov_beta, level, cost)
}
