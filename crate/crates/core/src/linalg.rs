//! Small dense linear algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Real, Result};

/// Relative singular value threshold below which a design is declared
/// rank deficient.
pub fn rank_tolerance<T: Real>() -> T {
    let eps = T::default_epsilon() * T::lit(100.0);
    eps.max(T::lit(1e-10))
}

/// Condition number above which a square system is rejected.
pub const CONDITION_FAIL: f64 = 1e14;
/// Condition number above which a square system is solved with a warning.
pub const CONDITION_WARN: f64 = 1e10;

/// Least squares solution of `design * coef ≈ y`.
#[derive(Debug, Clone)]
pub struct LeastSquares<T: Real> {
    pub coef: DVector<T>,
    /// `(designᵀ design)⁻¹`.
    pub gram_inverse: DMatrix<T>,
    pub condition: T,
}

/// Solves a full-column-rank least squares problem through the SVD of the
/// design. Columns whose removal would restore rank are reported.
pub fn least_squares<T: Real>(
    design: &DMatrix<T>,
    y: &DVector<T>,
    context: &'static str,
) -> Result<LeastSquares<T>> {
    let (n, k) = design.shape();
    if y.len() != n {
        return Err(Error::Dimension { context, expected: n, got: y.len() });
    }
    if n < k || k == 0 {
        return Err(Error::Validation(format!(
            "{context}: need at least as many rows ({n}) as parameters ({k})"
        )));
    }
    let svd = design.clone().svd(true, true);
    let sv = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("requested V");
    let u = svd.u.as_ref().expect("requested U");
    let (imax, smax) = argmax(sv.iter().copied());
    let (imin, smin) = argmin(sv.iter().copied());
    let _ = imax;
    if smax <= T::zero() || smin <= smax * rank_tolerance::<T>() {
        let column = if smax <= T::zero() {
            0
        } else {
            // The right singular vector of the smallest singular value
            // spans the (near) null space; its largest loading names the
            // column most involved in the dependency.
            argmax(v_t.row(imin).iter().map(|x| x.abs())).0
        };
        let ratio = if smax > T::zero() { (smin / smax).as_f64() } else { 0.0 };
        return Err(Error::RankDeficient { context, column, ratio });
    }
    let uty = u.transpose() * y;
    let mut scaled = uty;
    for (s, val) in scaled.iter_mut().zip(sv.iter()) {
        *s /= *val;
    }
    let v = v_t.transpose();
    let coef = &v * scaled;
    let mut vs = v.clone();
    for (j, val) in sv.iter().enumerate() {
        let w = T::one() / (*val * *val);
        vs.column_mut(j).scale_mut(w);
    }
    let gram_inverse = symmetrize(&(vs * v.transpose()));
    Ok(LeastSquares { coef, gram_inverse, condition: smax / smin })
}

/// 2-norm condition number of a square matrix.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let sv = m.clone().singular_values();
    let smax = argmax(sv.iter().copied()).1;
    let smin = argmin(sv.iter().copied()).1;
    if smin <= T::zero() {
        T::max_value().unwrap_or(T::one() / T::default_epsilon())
    } else {
        smax / smin
    }
}

/// Solves a square system, refusing matrices with condition number above
/// [`CONDITION_FAIL`]. Returns the solution and the condition estimate.
pub fn solve_square<T: Real>(
    m: &DMatrix<T>,
    b: &DVector<T>,
    context: &'static str,
) -> Result<(DVector<T>, f64)> {
    let k = m.nrows();
    if m.ncols() != k {
        return Err(Error::Dimension { context, expected: k, got: m.ncols() });
    }
    if b.len() != k {
        return Err(Error::Dimension { context, expected: k, got: b.len() });
    }
    let condition = condition_number(m).as_f64();
    if !condition.is_finite() || condition > CONDITION_FAIL {
        return Err(Error::Singular { context, condition });
    }
    if condition > CONDITION_WARN {
        log::warn!("{context}: ill-conditioned system (condition {condition:.3e})");
    }
    let lu = m.clone().full_piv_lu();
    let x = lu.solve(b).ok_or(Error::Singular { context, condition })?;
    Ok((x, condition))
}

/// Inverse of a square matrix with the same condition guard as
/// [`solve_square`].
pub fn inverse_square<T: Real>(m: &DMatrix<T>, context: &'static str) -> Result<DMatrix<T>> {
    let condition = condition_number(m).as_f64();
    if !condition.is_finite() || condition > CONDITION_FAIL {
        return Err(Error::Singular { context, condition });
    }
    m.clone()
        .full_piv_lu()
        .try_inverse()
        .ok_or(Error::Singular { context, condition })
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// `(1/n) Σ_i w_i a_i b_iᵀ` for row-stacked `a` and `b`.
pub fn weighted_cross<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, w: &DVector<T>) -> DMatrix<T> {
    let n = a.nrows();
    let mut wb = b.clone();
    for (i, mut row) in wb.row_iter_mut().enumerate() {
        row.scale_mut(w[i]);
    }
    (a.transpose() * wb) / T::from_count(n)
}

/// Largest absolute entry.
pub fn max_abs<T: Real>(v: impl IntoIterator<Item = T>) -> T {
    v.into_iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

fn argmax<T: Real>(it: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::min_value().unwrap_or(-T::one() / T::default_epsilon()));
    for (i, x) in it.enumerate() {
        if i == 0 || x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn argmin<T: Real>(it: impl Iterator<Item = T>) -> (usize, T) {
    let mut best = (0, T::zero());
    for (i, x) in it.enumerate() {
        if i == 0 || x < best.1 {
            best = (i, x);
        }
    }
    best
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided critical value for a confidence level in (0, 1).
pub fn two_sided_z(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}
