//! Exposure mappings: `abar_i = (1/J) Σ_j H_ij a_j`.

use nalgebra::DVector;

use crate::netdata::InterferenceMap;
use crate::{Error, Real, Result};

fn check_len<T: Real>(h: &InterferenceMap<T>, v: &DVector<T>, context: &'static str) -> Result<()> {
    if v.len() != h.n_interventions() {
        return Err(Error::Dimension { context, expected: h.n_interventions(), got: v.len() });
    }
    Ok(())
}

fn weighted_mean_rows<T: Real>(h: &InterferenceMap<T>, w: &DVector<T>) -> DVector<T> {
    (h.matrix() * w) / T::from_count(h.n_interventions())
}

/// Observed exposure for treatments (or a fractional policy) in `[0, 1]^J`.
pub fn exposure_map<T: Real>(h: &InterferenceMap<T>, a: &DVector<T>) -> Result<DVector<T>> {
    check_len(h, a, "exposure_map")?;
    if let Some(index) = a.iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(Error::OutOfRange {
            context: "exposure_map",
            index,
            detail: format!("treatment {} outside [0, 1]", a[index]),
        });
    }
    Ok(weighted_mean_rows(h, a))
}

/// Expected exposure under propensities strictly inside `(0, 1)`.
pub fn expected_exposure<T: Real>(h: &InterferenceMap<T>, e: &DVector<T>) -> Result<DVector<T>> {
    check_len(h, e, "expected_exposure")?;
    if let Some(index) = e.iter().position(|v| !(*v > T::zero() && *v < T::one())) {
        return Err(Error::OutOfRange {
            context: "expected_exposure",
            index,
            detail: format!("propensity {} outside (0, 1)", e[index]),
        });
    }
    Ok(weighted_mean_rows(h, e))
}

/// Row mass `c_i = (1/J) Σ_j H_ij`.
pub fn exposure_row_mass<T: Real>(h: &InterferenceMap<T>) -> DVector<T> {
    let ones = DVector::from_element(h.n_interventions(), T::one());
    weighted_mean_rows(h, &ones)
}
