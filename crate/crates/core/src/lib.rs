//! Policy learning for bipartite network interference.
//!
//! Treatments are assigned to *intervention units* (columns of an
//! interference map `H`), outcomes are measured on *outcome units* (rows),
//! and each outcome unit sees the exposure `(1/J) Σ_j H_ij A_j`. The crate
//! fits the linear-exposure outcome model by plain least squares
//! ([`qlearn`]) or by the doubly robust estimating equations of
//! [`alearn`], turns the fitted treatment-effect coefficients into
//! per-unit total effects ([`effects`]), and allocates treatment under a
//! budget ([`policy`]). [`simlab`] is a seeded Monte Carlo harness for the
//! estimators and [`costimpute`] fills in missing treatment costs.
//!
//! The estimation core is generic over the scalar type (any [`Real`],
//! in practice `f64` or `f32`). The aliases at the crate root fix the
//! scalar to `f64`, which is what the simulation and cost modules use.

pub mod alearn;
pub mod costimpute;
pub mod effects;
mod error;
pub mod exposure;
pub mod linalg;
pub mod netdata;
pub mod policy;
pub mod propensity;
pub mod qlearn;
pub mod simlab;

pub use error::{Error, Result};

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Scalar type accepted by the estimation core.
pub trait Real: RealField + Copy + ToPrimitive {
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Converts an index or count.
    #[inline]
    fn from_count(n: usize) -> Self {
        nalgebra::convert(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl<T: RealField + Copy + ToPrimitive> Real for T {}

pub use netdata::{BasisKind, ValidationReport};
pub use policy::PolicyMethod;

pub type InterferenceMap = netdata::InterferenceMap<f64>;
pub type OutcomeTable = netdata::OutcomeTable<f64>;
pub type InterventionTable = netdata::InterventionTable<f64>;
pub type FeatureMap = netdata::FeatureMap;
pub type Standardizer = netdata::Standardizer<f64>;
pub type PropensityFit = propensity::PropensityFit<f64>;
pub type QFit = qlearn::QFit<f64>;
pub type AFit = alearn::AFit<f64>;
pub type EffectTable = effects::EffectTable<f64>;
pub type PolicySolution = policy::PolicySolution<f64>;
