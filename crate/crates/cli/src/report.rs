//! Human-readable tables and the coefficient report.

use nalgebra::{DMatrix, DVector};
use netpolicy::linalg::{normal_cdf, two_sided_z};

/// Four significant digits.
pub fn sig4(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn sig4_opt(v: Option<f64>) -> String {
    v.map(sig4).unwrap_or_else(|| "-".into())
}

/// Column-aligned plain-text table.
pub struct TextTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut width: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&width)
                .enumerate()
                .map(|(k, (c, w))| if k == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * width.len().saturating_sub(1)));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRow {
    pub model: String,
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided, `H0: coefficient = 0`.
    pub p_value: f64,
    /// Zero standard error: the interval and test are degenerate.
    pub degenerate: bool,
}

/// Rows for one model block from estimates and their covariance.
pub fn coefficient_rows(
    model: &str,
    names: &[String],
    estimate: &DVector<f64>,
    cov: &DMatrix<f64>,
    level: f64,
) -> Vec<CoefficientRow> {
    let z = two_sided_z(level);
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let est = estimate[k];
            let se = cov[(k, k)].max(0.0).sqrt();
            let degenerate = se == 0.0;
            let p_value = if degenerate {
                if est == 0.0 { 1.0 } else { 0.0 }
            } else {
                (2.0 * (1.0 - normal_cdf((est / se).abs()))).clamp(0.0, 1.0)
            };
            CoefficientRow {
                model: model.into(),
                name: name.clone(),
                estimate: est,
                se,
                ci_low: est - z * se,
                ci_high: est + z * se,
                p_value,
                degenerate,
            }
        })
        .collect()
}
