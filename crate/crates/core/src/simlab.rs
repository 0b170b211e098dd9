//! Seeded Monte Carlo harness for the Q- and A-learning estimators.
//!
//! A [`SimDesign`] is built once from the master seed: covariates, the
//! interference map, true coefficients, calibrated propensities, and the
//! true total effects. Each replication then draws fresh treatments and
//! noise, and every estimator cell is fit on that shared dataset.
//!
//! Seeding: the design uses `mix(master_seed, u64::MAX)`, replication `r`
//! uses `mix(master_seed, r)`, both feeding a ChaCha8 generator. `mix` is a
//! SplitMix64 finalizer over `master_seed ^ splitmix(r)`. Replications are
//! run in parallel but aggregated in index order, so reports do not depend
//! on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, LogNormal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alearn::{fit_a, PropensitySource};
use crate::effects::total_effects;
use crate::exposure::{exposure_map, expected_exposure};
use crate::linalg::two_sided_z;
use crate::netdata::{FeatureMap, InterferenceMap, InterventionTable, OutcomeTable, Standardizer};
use crate::propensity::{calibrate_propensity_intercept, logistic};
use crate::qlearn::{fit_q, OutcomeModelSpec};
use crate::{Error, Result};

/// Outcome-model coefficients used when `p = 13` and none are given.
/// The first 27 entries are `α` (intercept, linear, squared), the rest `β`.
pub const DEFAULT_THETA0: [f64; 54] = [
    -0.000955, 0.0288, 0.0382, -0.000148, -0.00227, 0.0167, -0.0199, 0.0396, 0.0152, 0.0173,
    -0.0119, 0.0161, 0.0329, 0.0365, -0.0203, 0.0221, -0.0181, -0.0262, 2.170e-05, 0.0305,
    -0.0310, 0.0357, -0.0187, 0.00968, 0.0204, 0.0269, 0.00420, -0.000470, -0.000344, -0.000490,
    0.000127, 0.00115, 0.00140, 0.00118, 0.00133, 0.00120, -0.000423, -0.000867, 0.000361,
    -0.00135, -0.001362, 5.567e-05, 0.000982, -0.000606, 0.000586, -0.00121, -0.000864,
    -0.000517, -0.00135, -0.000558, 0.00103, 0.00106, 0.00117, -0.000676,
];

/// Half-width of the uniform draw for coefficients that are not supplied.
const DRAW_HALF_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSource {
    SyntheticGaussian,
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HSource {
    SyntheticLognormal,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub p: usize,
    pub q: usize,
    pub snr: f64,
    pub reps: usize,
    pub master_seed: u64,
    /// `(α, β)`, each of length `1 + 2p`.
    pub theta0: Option<Vec<f64>>,
    /// Propensity coefficients of length `1 + 2q`; the intercept is
    /// replaced by calibration.
    pub gamma0: Option<Vec<f64>>,
    pub target_mean_propensity: f64,
    pub target_mean_outcome: f64,
    pub propensity_tolerance: f64,
    pub outcome_tolerance: f64,
    pub covariate_source: CovariateSource,
    pub h_source: HSource,
    /// Keep per-replication records in the report.
    pub keep_records: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            j: 100,
            p: 13,
            q: 6,
            snr: 3.0,
            reps: 1000,
            master_seed: 20_050_101,
            theta0: None,
            gamma0: None,
            target_mean_propensity: 0.19,
            target_mean_outcome: 0.29,
            propensity_tolerance: 0.01,
            outcome_tolerance: 0.001,
            covariate_source: CovariateSource::SyntheticGaussian,
            h_source: HSource::SyntheticLognormal,
            keep_records: false,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("config field `{field}`: {msg}"))
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(invalid("snr", format!("must be positive and finite (snr = {})", self.snr)));
        }
        if self.reps == 0 {
            return Err(invalid("reps", "must be at least 1"));
        }
        if self.j < 2 {
            return Err(invalid("J", format!("need at least 2 intervention units (J = {})", self.j)));
        }
        if self.n < 2 {
            return Err(invalid("n", format!("need at least 2 outcome units (n = {})", self.n)));
        }
        let t = self.target_mean_propensity;
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid("target_mean_propensity", format!("must lie in (0, 1) (got {t})")));
        }
        if !self.target_mean_outcome.is_finite() {
            return Err(invalid("target_mean_outcome", "must be finite"));
        }
        for (name, v) in [
            ("propensity_tolerance", self.propensity_tolerance),
            ("outcome_tolerance", self.outcome_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive (got {v})")));
            }
        }
        if let Some(t) = &self.theta0 {
            if t.len() != 2 * (1 + 2 * self.p) {
                return Err(invalid("theta0", format!("expected {} entries, got {}", 2 * (1 + 2 * self.p), t.len())));
            }
        }
        if let Some(g) = &self.gamma0 {
            if g.len() != 1 + 2 * self.q {
                return Err(invalid("gamma0", format!("expected {} entries, got {}", 1 + 2 * self.q, g.len())));
            }
        }
        Ok(())
    }
}

/// SplitMix64 step.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for stream `index` under `master`.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    splitmix(master ^ splitmix(index))
}

fn std_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // fill column by column so the draw order is documented and stable
    let mut m = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn standardize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Standardizer::fit(x)?.apply(x)
}

/// Everything held fixed across replications.
#[derive(Debug, Clone)]
pub struct SimDesign {
    pub config: SimConfig,
    /// Standardized outcome covariates, `n × p`.
    pub x_out: DMatrix<f64>,
    /// Standardized intervention covariates, `J × q`.
    pub x_int: DMatrix<f64>,
    pub h: InterferenceMap<f64>,
    /// `α` after the intercept shift.
    pub alpha0: DVector<f64>,
    pub beta0: DVector<f64>,
    /// Propensity coefficients with the calibrated intercept.
    pub gamma0: DVector<f64>,
    pub propensity: DVector<f64>,
    /// `f0(x_i; α0)` and `fA(x_i; β0)`.
    pub f0: DVector<f64>,
    pub fa: DVector<f64>,
    pub true_te: DVector<f64>,
    pub mean_propensity: f64,
    /// Mean of `μ` under the expected exposure.
    pub mean_outcome: f64,
}

impl SimDesign {
    /// Synthetic covariates and interference map.
    pub fn synthetic(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.master_seed, u64::MAX));
        let x_out = std_normal_matrix(&mut rng, config.n, config.p);
        let x_int = std_normal_matrix(&mut rng, config.j, config.q);
        let lognormal = LogNormal::new(0.0, 1.0).expect("valid lognormal");
        let mut h = DMatrix::zeros(config.n, config.j);
        for c in 0..config.j {
            for r in 0..config.n {
                h[(r, c)] = lognormal.sample(&mut rng);
            }
        }
        Self::assemble(config, x_out, x_int, InterferenceMap::new(h)?, &mut rng)
    }

    /// Design on user-supplied covariates (standardized here) and map.
    pub fn from_inputs(
        config: &SimConfig,
        x_out: DMatrix<f64>,
        x_int: DMatrix<f64>,
        h: InterferenceMap<f64>,
    ) -> Result<Self> {
        let mut config = config.clone();
        config.n = x_out.nrows();
        config.p = x_out.ncols();
        config.j = x_int.nrows();
        config.q = x_int.ncols();
        config.covariate_source = CovariateSource::UserSupplied;
        config.h_source = HSource::UserSupplied;
        config.validate()?;
        if h.n_outcomes() != config.n || h.n_interventions() != config.j {
            return Err(Error::Validation(format!(
                "interference map is {}x{}, covariates imply {}x{}",
                h.n_outcomes(),
                h.n_interventions(),
                config.n,
                config.j
            )));
        }
        h.check_nonnegative("simulation interference map")?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.master_seed, u64::MAX));
        Self::assemble(&config, x_out, x_int, h, &mut rng)
    }

    fn assemble(
        config: &SimConfig,
        x_out: DMatrix<f64>,
        x_int: DMatrix<f64>,
        h: InterferenceMap<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let x_out = standardize(&x_out)?;
        let x_int = standardize(&x_int)?;
        let (p, q) = (config.p, config.q);
        let quad = FeatureMap::quadratic();
        let uniform = Uniform::new(-DRAW_HALF_WIDTH, DRAW_HALF_WIDTH).expect("valid range");

        let theta: Vec<f64> = match &config.theta0 {
            Some(t) => t.clone(),
            None if p == 13 => DEFAULT_THETA0.to_vec(),
            None => (0..2 * (1 + 2 * p)).map(|_| uniform.sample(rng)).collect(),
        };
        let k = 1 + 2 * p;
        let mut alpha0 = DVector::from_column_slice(&theta[..k]);
        let beta0 = DVector::from_column_slice(&theta[k..]);
        let gamma_start: Vec<f64> = match &config.gamma0 {
            Some(g) => g.clone(),
            None => (0..1 + 2 * q).map(|_| uniform.sample(rng)).collect(),
        };

        let intercept = calibrate_propensity_intercept(
            &x_int,
            quad,
            &gamma_start[1..],
            config.target_mean_propensity,
            config.propensity_tolerance,
        )?;
        let mut gamma0 = DVector::from_column_slice(&gamma_start);
        gamma0[0] = intercept;
        let z_int = quad.expand(&x_int);
        let propensity = (&z_int * &gamma0).map(logistic);
        let mean_propensity = propensity.mean();
        if (mean_propensity - config.target_mean_propensity).abs() > config.propensity_tolerance {
            return Err(Error::Numerical(format!(
                "propensity calibration missed: mean {mean_propensity}"
            )));
        }

        let phi = quad.expand(&x_out);
        let fa = &phi * &beta0;
        let abar_exp = expected_exposure(&h, &propensity)?;
        let f0_raw = &phi * &alpha0;
        let mean_raw = (f0_raw + abar_exp.component_mul(&fa)).mean();
        alpha0[0] += config.target_mean_outcome - mean_raw;
        let f0 = &phi * &alpha0;
        let mean_outcome = (&f0 + abar_exp.component_mul(&fa)).mean();
        if (mean_outcome - config.target_mean_outcome).abs() > config.outcome_tolerance {
            return Err(Error::Numerical(format!("outcome calibration missed: mean {mean_outcome}")));
        }
        let true_te = total_effects(&h, &x_out, &beta0, quad)?;

        Ok(Self {
            config: config.clone(),
            x_out,
            x_int,
            h,
            alpha0,
            beta0,
            gamma0,
            propensity,
            f0,
            fa,
            true_te,
            mean_propensity,
            mean_outcome,
        })
    }

    /// Draws replication `rep`: treatments, exposure, and noisy outcomes.
    pub fn draw(&self, rep: u64) -> Result<SimData> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.master_seed, rep));
        let a = DVector::from_iterator(
            self.propensity.len(),
            self.propensity.iter().map(|&e| {
                let b = Bernoulli::new(e).expect("propensity in (0, 1)");
                if b.sample(&mut rng) { 1.0 } else { 0.0 }
            }),
        );
        let abar = exposure_map(&self.h, &a)?;
        let mu = &self.f0 + abar.component_mul(&self.fa);
        let var_mu = mu.variance();
        if !(var_mu > 0.0) {
            return Err(Error::Numerical("mean outcome is constant; noise variance undefined".into()));
        }
        let sd = var_mu.sqrt() / self.config.snr;
        let eps = DVector::from_fn(mu.len(), |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let y = &mu + &eps;
        Ok(SimData {
            outcomes: OutcomeTable::new(self.x_out.clone(), y, None)?,
            interventions: InterventionTable::new(self.x_int.clone(), a, None)?,
            abar,
            mu,
        })
    }
}

/// One replication's data.
#[derive(Debug, Clone)]
pub struct SimData {
    pub outcomes: OutcomeTable<f64>,
    pub interventions: InterventionTable<f64>,
    pub abar: DVector<f64>,
    pub mu: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Q,
    A,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellPropensity {
    Estimated(FeatureMap),
    /// Use the true propensities of the design.
    Known,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub name: String,
    pub estimator: Estimator,
    pub basis_f0: FeatureMap,
    pub basis_fa: FeatureMap,
    pub propensity: CellPropensity,
}

impl CellSpec {
    fn new(name: &str, estimator: Estimator, f0: FeatureMap, e: FeatureMap) -> Self {
        Self {
            name: name.into(),
            estimator,
            basis_f0: f0,
            basis_fa: FeatureMap::quadratic(),
            propensity: CellPropensity::Estimated(e),
        }
    }
}

/// The six standard cells; misspecification drops the squared terms.
pub fn standard_cells() -> Vec<CellSpec> {
    let (quad, lin) = (FeatureMap::quadratic(), FeatureMap::linear());
    vec![
        CellSpec::new("q_correct", Estimator::Q, quad, quad),
        CellSpec::new("q_misspec", Estimator::Q, lin, quad),
        CellSpec::new("a_cc", Estimator::A, quad, quad),
        CellSpec::new("a_c_misP", Estimator::A, quad, lin),
        CellSpec::new("a_misB_c", Estimator::A, lin, quad),
        CellSpec::new("a_mis_mis", Estimator::A, lin, lin),
    ]
}

/// Metrics of one fit against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    /// `‖β̂ − β0‖₂` over the shared coordinates.
    pub bias: f64,
    /// Root mean squared error of the estimated total effects.
    pub rmse: f64,
    /// Fraction of shared `β` coordinates whose 95% interval covers `β0`.
    pub covered: f64,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
}

/// Fits `cell` on `data` and scores it against the design's truth.
pub fn run_cell(design: &SimDesign, data: &SimData, cell: &CellSpec) -> Result<CellOutcome> {
    let spec = OutcomeModelSpec::new(cell.basis_f0, cell.basis_fa);
    let (beta, cov_beta) = match cell.estimator {
        Estimator::Q => {
            let fit = fit_q(&data.outcomes, &data.abar, &spec)?;
            (fit.beta.clone(), fit.cov_beta())
        }
        Estimator::A => {
            let source = match cell.propensity {
                CellPropensity::Estimated(basis) => PropensitySource::Estimate(basis),
                CellPropensity::Known => PropensitySource::Known(design.propensity.clone()),
            };
            let fit = fit_a(&data.outcomes, &data.interventions, &design.h, &spec, &source)?;
            (fit.beta.clone(), fit.cov_beta())
        }
    };
    let se: Vec<f64> = cov_beta.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    // fitted and true bases share their leading (intercept, linear) block
    let shared = beta.len().min(design.beta0.len());
    let z = two_sided_z(0.95);
    let mut sq = 0.0;
    let mut hits = 0usize;
    for k in 0..shared {
        let d = beta[k] - design.beta0[k];
        sq += d * d;
        if d.abs() <= z * se[k] {
            hits += 1;
        }
    }
    let te_hat = total_effects(&design.h, &design.x_out, &beta, cell.basis_fa)?;
    let rmse = (&te_hat - &design.true_te).norm() / (design.true_te.len() as f64).sqrt();
    Ok(CellOutcome {
        bias: sq.sqrt(),
        rmse,
        covered: hits as f64 / shared as f64,
        beta: beta.iter().copied().collect(),
        se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    /// One entry per cell, `None` when the fit failed.
    pub cells: Vec<Option<CellOutcome>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub bias: f64,
    pub rmse: f64,
    /// Percent.
    pub coverage: f64,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub gamma0: Vec<f64>,
    pub theta0: Vec<f64>,
    pub mean_propensity: f64,
    pub mean_outcome: f64,
    pub cells: Vec<CellSummary>,
    pub records: Option<Vec<RepRecord>>,
}

impl SimReport {
    pub fn cell(&self, name: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == name)
    }
}

/// Runs every replication of `cells` on `design` in the current rayon pool.
pub fn run_cells(design: &SimDesign, cells: &[CellSpec]) -> Result<SimReport> {
    let reps = design.config.reps as u64;
    let records: Vec<RepRecord> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let cells = match design.draw(rep) {
                Ok(data) => cells
                    .iter()
                    .map(|c| match run_cell(design, &data, c) {
                        Ok(o) => Some(o),
                        Err(e) => {
                            log::debug!("rep {rep} cell {}: {e}", c.name);
                            None
                        }
                    })
                    .collect(),
                Err(e) => {
                    log::debug!("rep {rep}: {e}");
                    vec![None; cells.len()]
                }
            };
            RepRecord { rep, cells }
        })
        .collect();

    let summaries = cells
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let (mut bias, mut rmse, mut cov, mut done) = (0.0, 0.0, 0.0, 0usize);
            for r in &records {
                if let Some(o) = &r.cells[c] {
                    bias += o.bias;
                    rmse += o.rmse;
                    cov += o.covered;
                    done += 1;
                }
            }
            let m = |s: f64| if done > 0 { s / done as f64 } else { f64::NAN };
            CellSummary {
                cell: spec.name.clone(),
                bias: m(bias),
                rmse: m(rmse),
                coverage: 100.0 * m(cov),
                completed: done,
                failed: records.len() - done,
            }
        })
        .collect();

    let mut theta0 = design.alpha0.as_slice().to_vec();
    theta0.extend_from_slice(design.beta0.as_slice());
    Ok(SimReport {
        config: design.config.clone(),
        gamma0: design.gamma0.as_slice().to_vec(),
        theta0,
        mean_propensity: design.mean_propensity,
        mean_outcome: design.mean_outcome,
        cells: summaries,
        records: design.config.keep_records.then_some(records),
    })
}

/// Builds the synthetic design and runs the six standard cells.
pub fn run_monte_carlo(config: &SimConfig) -> Result<SimReport> {
    let design = SimDesign::synthetic(config)?;
    run_cells(&design, &standard_cells())
}
