//! Data model shared by every estimator: the interference map, the two
//! unit tables, basis expansions and covariate standardization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Dense nonnegative `n × J` matrix linking outcome units (rows) to
/// intervention units (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMap<T: Real> {
    h: DMatrix<T>,
}

impl<T: Real> InterferenceMap<T> {
    /// Wraps a matrix. Only the shape is checked here; content problems
    /// (negative or non-finite weights, empty columns) are reported by
    /// [`validate_bundle`] and rejected by the operations that care.
    pub fn new(h: DMatrix<T>) -> Result<Self> {
        if h.nrows() == 0 || h.ncols() == 0 {
            return Err(Error::Validation(format!(
                "interference map must be at least 1×1, got {}×{}",
                h.nrows(),
                h.ncols()
            )));
        }
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.h
    }

    /// Number of outcome units.
    pub fn n_outcomes(&self) -> usize {
        self.h.nrows()
    }

    /// Number of intervention units.
    pub fn n_interventions(&self) -> usize {
        self.h.ncols()
    }

    /// Indices of columns without a single nonzero weight.
    pub fn zero_columns(&self) -> Vec<usize> {
        self.h
            .column_iter()
            .enumerate()
            .filter(|(_, c)| c.iter().all(|v| *v == T::zero()))
            .map(|(j, _)| j)
            .collect()
    }

    /// Keeps the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        Self::new(self.h.select_columns(cols))
    }

    pub(crate) fn check_nonnegative(&self, context: &'static str) -> Result<()> {
        for (idx, v) in self.h.iter().enumerate() {
            if !v.is_finite_value() || *v < T::zero() {
                let n = self.h.nrows();
                return Err(Error::OutOfRange {
                    context,
                    index: idx,
                    detail: format!(
                        "H[{}, {}] = {} must be finite and nonnegative",
                        idx % n,
                        idx / n,
                        v
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Outcome-unit covariates, outcomes and optional person-years.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTable<T: Real> {
    pub x: DMatrix<T>,
    pub y: DVector<T>,
    pub person_years: Option<DVector<T>>,
}

impl<T: Real> OutcomeTable<T> {
    pub fn new(x: DMatrix<T>, y: DVector<T>, person_years: Option<DVector<T>>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                context: "outcome table rows",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if let Some(py) = &person_years {
            if py.len() != y.len() {
                return Err(Error::Dimension {
                    context: "person-years length",
                    expected: y.len(),
                    got: py.len(),
                });
            }
        }
        Ok(Self { x, y, person_years })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    /// Same table with `y` multiplied by `k`.
    pub fn scale_outcome(&self, k: T) -> Self {
        Self { x: self.x.clone(), y: &self.y * k, person_years: self.person_years.clone() }
    }
}

/// Intervention-unit covariates, treatments and optional costs.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionTable<T: Real> {
    pub x: DMatrix<T>,
    pub a: DVector<T>,
    pub cost: Option<DVector<T>>,
}

impl<T: Real> InterventionTable<T> {
    pub fn new(x: DMatrix<T>, a: DVector<T>, cost: Option<DVector<T>>) -> Result<Self> {
        if x.nrows() != a.len() {
            return Err(Error::Dimension {
                context: "intervention table rows",
                expected: x.nrows(),
                got: a.len(),
            });
        }
        if let Some(c) = &cost {
            if c.len() != a.len() {
                return Err(Error::Dimension {
                    context: "cost length",
                    expected: a.len(),
                    got: c.len(),
                });
            }
        }
        Ok(Self { x, a, cost })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    /// Keeps the listed units, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            a: self.a.select_rows(rows),
            cost: self.cost.as_ref().map(|c| c.select_rows(rows)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Linear,
    Quadratic,
    Cubic,
    /// `(x, sin x, cos x)` per coordinate.
    Trig,
}

impl BasisKind {
    /// Number of blocks of width `p` after the intercept.
    fn blocks(self) -> usize {
        match self {
            BasisKind::Linear => 1,
            BasisKind::Quadratic => 2,
            BasisKind::Cubic | BasisKind::Trig => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Linear => "linear",
            BasisKind::Quadratic => "quadratic",
            BasisKind::Cubic => "cubic",
            BasisKind::Trig => "trig",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(BasisKind::Linear),
            "quadratic" => Ok(BasisKind::Quadratic),
            "cubic" => Ok(BasisKind::Cubic),
            "trig" => Ok(BasisKind::Trig),
            other => Err(Error::Validation(format!(
                "unknown basis `{other}` (expected linear, quadratic, cubic or trig)"
            ))),
        }
    }
}

/// Deterministic coordinatewise basis expansion with an intercept.
///
/// Columns are laid out block by block: `1`, then `x_1..x_p`, then the
/// second block (`x_k²`, or `sin x_k` for the trig basis), then the third
/// (`x_k³` or `cos x_k`). No cross terms are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: BasisKind,
    pub include_intercept: bool,
}

impl FeatureMap {
    pub const fn new(kind: BasisKind) -> Self {
        Self { kind, include_intercept: true }
    }

    pub const fn linear() -> Self {
        Self::new(BasisKind::Linear)
    }

    pub const fn quadratic() -> Self {
        Self::new(BasisKind::Quadratic)
    }

    /// Expanded width for `p` input covariates.
    pub fn dim(&self, p: usize) -> usize {
        usize::from(self.include_intercept) + self.kind.blocks() * p
    }

    pub fn expand_row<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.dim(x.len()));
        if self.include_intercept {
            out.push(T::one());
        }
        out.extend_from_slice(x);
        match self.kind {
            BasisKind::Linear => {}
            BasisKind::Quadratic => out.extend(x.iter().map(|v| *v * *v)),
            BasisKind::Cubic => {
                out.extend(x.iter().map(|v| *v * *v));
                out.extend(x.iter().map(|v| *v * *v * *v));
            }
            BasisKind::Trig => {
                out.extend(x.iter().map(|v| v.sin()));
                out.extend(x.iter().map(|v| v.cos()));
            }
        }
        out
    }

    /// Expands every row of `x`.
    pub fn expand<T: Real>(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let (n, p) = x.shape();
        let k = self.dim(p);
        let mut out = DMatrix::zeros(n, k);
        let mut row = vec![T::zero(); p];
        for i in 0..n {
            for (c, r) in row.iter_mut().enumerate() {
                *r = x[(i, c)];
            }
            for (c, v) in self.expand_row(&row).into_iter().enumerate() {
                out[(i, c)] = v;
            }
        }
        out
    }

    /// Human-readable column names, `prefix` naming the raw covariates
    /// (`x` gives `x1`, `x1^2`, …).
    pub fn names(&self, p: usize, prefix: &str) -> Vec<String> {
        let raw: Vec<String> = (1..=p).map(|k| format!("{prefix}{k}")).collect();
        self.names_for(&raw)
    }

    /// Column names for covariates called `raw`.
    pub fn names_for(&self, raw: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim(raw.len()));
        if self.include_intercept {
            out.push("(Intercept)".to_string());
        }
        out.extend(raw.iter().cloned());
        match self.kind {
            BasisKind::Linear => {}
            BasisKind::Quadratic => out.extend(raw.iter().map(|r| format!("{r}^2"))),
            BasisKind::Cubic => {
                out.extend(raw.iter().map(|r| format!("{r}^2")));
                out.extend(raw.iter().map(|r| format!("{r}^3")));
            }
            BasisKind::Trig => {
                out.extend(raw.iter().map(|r| format!("sin({r})")));
                out.extend(raw.iter().map(|r| format!("cos({r})")));
            }
        }
        out
    }
}

/// Column means and standard deviations (`n − 1` divisor).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T: Real> {
    pub means: Vec<T>,
    pub sds: Vec<T>,
    /// Columns found constant; their sd is set to 1.
    pub constant: Vec<bool>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(x: &DMatrix<T>) -> Result<Self> {
        let (n, p) = x.shape();
        if let Some(idx) = x.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::OutOfRange {
                context: "standardizer",
                index: idx,
                detail: "non-finite covariate".into(),
            });
        }
        let mut means = Vec::with_capacity(p);
        let mut sds = Vec::with_capacity(p);
        let mut constant = Vec::with_capacity(p);
        for col in x.column_iter() {
            let mean = if n == 0 { T::zero() } else { col.sum() / T::from_count(n) };
            let ss = col.iter().fold(T::zero(), |acc, v| acc + (*v - mean) * (*v - mean));
            let sd = if n > 1 { (ss / T::from_count(n - 1)).sqrt() } else { T::zero() };
            let floor = T::default_epsilon() * T::lit(16.0) * T::one().max(mean.abs());
            let is_const = sd <= floor;
            if is_const {
                log::warn!("standardizer: constant column, left unscaled");
            }
            means.push(mean);
            sds.push(if is_const { T::one() } else { sd });
            constant.push(is_const);
        }
        Ok(Self { means, sds, constant })
    }

    pub fn has_constant_columns(&self) -> bool {
        self.constant.iter().any(|c| *c)
    }

    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_width(x)?;
        let mut out = x.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[c], self.sds[c]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    pub fn invert(&self, z: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_width(z)?;
        let mut out = z.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[c], self.sds[c]);
            col.apply(|v| *v = *v * s + m);
        }
        Ok(out)
    }

    fn check_width(&self, x: &DMatrix<T>) -> Result<()> {
        if x.ncols() != self.means.len() {
            return Err(Error::Dimension {
                context: "standardizer width",
                expected: self.means.len(),
                got: x.ncols(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueKind {
    DimensionMismatch,
    NonFinite,
    NegativeWeight,
    ZeroColumn { column: usize },
    NonBinaryTreatment { index: usize },
    NegativeCost { index: usize },
    NonPositivePersonYears { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub kind: IssueKind,
    pub message: String,
}

/// Problems found in a data bundle. Empty when the bundle is clean;
/// usable when it carries no [`Severity::Error`] entries (empty columns of
/// `H` are warnings).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn is_usable(&self) -> bool {
        self.issues.iter().all(|i| i.severity == Severity::Warning)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }

    /// Converts error-level issues into an [`Error::Validation`].
    pub fn ensure_usable(&self) -> Result<()> {
        if self.is_usable() {
            return Ok(());
        }
        let msgs: Vec<&str> = self.errors().map(|i| i.message.as_str()).collect();
        Err(Error::Validation(msgs.join("; ")))
    }

    fn push(&mut self, severity: Severity, kind: IssueKind, message: String) {
        self.issues.push(Issue { severity, kind, message });
    }
}

/// Checks a bundle for every problem the estimators would reject. Pure:
/// the report depends only on the inputs.
pub fn validate_bundle<T: Real>(
    h: &InterferenceMap<T>,
    out: &OutcomeTable<T>,
    int: &InterventionTable<T>,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let err = Severity::Error;

    if h.n_outcomes() != out.len() {
        report.push(
            err,
            IssueKind::DimensionMismatch,
            format!(
                "interference map has {} rows but there are {} outcome units",
                h.n_outcomes(),
                out.len()
            ),
        );
    }
    if h.n_interventions() != int.len() {
        report.push(
            err,
            IssueKind::DimensionMismatch,
            format!(
                "interference map has {} columns but there are {} intervention units",
                h.n_interventions(),
                int.len()
            ),
        );
    }

    let nrows = h.n_outcomes();
    let mut negative_reported = false;
    for (idx, v) in h.matrix().iter().enumerate() {
        if !v.is_finite_value() {
            report.push(
                err,
                IssueKind::NonFinite,
                format!("H[{}, {}] is not finite", idx % nrows, idx / nrows),
            );
        } else if *v < T::zero() && !negative_reported {
            negative_reported = true;
            report.push(
                err,
                IssueKind::NegativeWeight,
                format!("H[{}, {}] is negative", idx % nrows, idx / nrows),
            );
        }
    }
    for column in h.zero_columns() {
        report.push(
            Severity::Warning,
            IssueKind::ZeroColumn { column },
            format!("column {column} has no transport"),
        );
    }

    let non_finite = |m: &DMatrix<T>| m.iter().position(|v| !v.is_finite_value());
    if let Some(idx) = non_finite(&out.x) {
        let n = out.x.nrows().max(1);
        report.push(
            err,
            IssueKind::NonFinite,
            format!("outcome covariate ({}, {}) is not finite", idx % n, idx / n),
        );
    }
    if let Some(i) = out.y.iter().position(|v| !v.is_finite_value()) {
        report.push(err, IssueKind::NonFinite, format!("outcome {i} is not finite"));
    }
    if let Some(py) = &out.person_years {
        for (index, v) in py.iter().enumerate() {
            if !v.is_finite_value() || *v <= T::zero() {
                report.push(
                    err,
                    IssueKind::NonPositivePersonYears { index },
                    format!("person-years at {index} must be positive, got {v}"),
                );
            }
        }
    }
    if let Some(idx) = non_finite(&int.x) {
        let n = int.x.nrows().max(1);
        report.push(
            err,
            IssueKind::NonFinite,
            format!("intervention covariate ({}, {}) is not finite", idx % n, idx / n),
        );
    }
    for (index, v) in int.a.iter().enumerate() {
        if *v != T::zero() && *v != T::one() {
            report.push(
                err,
                IssueKind::NonBinaryTreatment { index },
                format!("non-binary treatment at index {index}: {v}"),
            );
        }
    }
    if let Some(cost) = &int.cost {
        for (index, v) in cost.iter().enumerate() {
            if !v.is_finite_value() || *v < T::zero() {
                report.push(
                    err,
                    IssueKind::NegativeCost { index },
                    format!("cost at index {index} must be finite and nonnegative, got {v}"),
                );
            }
        }
    }
    report
}
