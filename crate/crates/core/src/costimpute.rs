//! Imputation of missing treatment costs.
//!
//! Two candidate models, ordinary least squares with an intercept and a
//! regression forest, are fit on a seeded training split and scored on the
//! held-out rows by
//!
//! ```text
//! NMAE = (1/m) Σ |C_j − Ĉ_j| / |Ĉ_j|
//! ```
//!
//! (the denominator is the prediction). The lower score wins, ties broken
//! by model name, and the winner is refit on every labeled row.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::least_squares;
use crate::simlab::mix_seed;
use crate::{Error, Result};

/// Predictions this close to zero make NMAE undefined.
pub const NMAE_ZERO_GUARD: f64 = 1e-12;
pub const MIN_LABELED_ROWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0 }
    }
}

/// Seeded shuffle of `0..m`; the first `⌈fraction · m⌉` go to training.
pub fn split_train_val(m: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if m < MIN_LABELED_ROWS {
        return Err(Error::Validation(format!(
            "need at least {MIN_LABELED_ROWS} labeled rows, got {m}"
        )));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    // the small slack keeps 0.8 * 135 = 108.00000000000001 from rounding up
    let n_train = ((spec.train_fraction * m as f64 - 1e-9).ceil() as usize).clamp(1, m - 1);
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

pub fn nmae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension { context: "nmae", expected: actual.len(), got: predicted.len() });
    }
    if actual.is_empty() {
        return Err(Error::Validation("nmae of an empty set".into()));
    }
    let mut total = 0.0;
    for (j, (c, p)) in actual.iter().zip(predicted).enumerate() {
        if p.abs() < NMAE_ZERO_GUARD {
            return Err(Error::Numerical(format!("nmae undefined: prediction {j} is zero")));
        }
        total += (c - p).abs() / p.abs();
    }
    Ok(total / actual.len() as f64)
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCostModel {
    /// Intercept first.
    pub coef: Vec<f64>,
}

impl LinearCostModel {
    pub fn fit(x: &DMatrix<f64>, c: &[f64]) -> Result<Self> {
        let (m, q) = x.shape();
        if m <= q + 1 {
            return Err(Error::Validation(format!(
                "linear cost model needs more than {} rows, got {m}",
                q + 1
            )));
        }
        let mut design = DMatrix::from_element(m, q + 1, 1.0);
        design.columns_mut(1, q).copy_from(x);
        let ls = least_squares(&design, &DVector::from_column_slice(c), "linear cost model")?;
        Ok(Self { coef: ls.coef.as_slice().to_vec() })
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.coef[0] + self.coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split; `None` means `⌈q/3⌉`.
    pub mtry: Option<usize>,
    /// Minimum rows in each child of a split.
    pub min_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 500, mtry: None, min_leaf: 5, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    c: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: &mut [usize], rng: &mut ChaCha8Rng) -> usize {
        let at = self.nodes.len();
        let mean = idx.iter().map(|&i| self.c[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if idx.len() < 2 * self.min_leaf {
            return at;
        }
        let Some((feature, threshold, gain)) = self.best_split(idx, rng) else {
            return at;
        };
        self.importance[feature] += gain;
        let mid = partition(idx, |&i| self.x[(i, feature)] <= threshold);
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }

    /// Best variance-reduction split among `mtry` random features.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, f64)> {
        let m = idx.len();
        let total: f64 = idx.iter().map(|&i| self.c[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.c[i] * self.c[i]).sum();
        let sse = total_sq - total * total / m as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in index::sample(rng, self.x.ncols(), self.mtry) {
            order.sort_by(|&a, &b| self.x[(a, f)].total_cmp(&self.x[(b, f)]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for k in 0..m - 1 {
                let v = self.c[order[k]];
                left_sum += v;
                left_sq += v * v;
                let nl = k + 1;
                let nr = m - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let (xa, xb) = (self.x[(order[k], f)], self.x[(order[k + 1], f)]);
                if xa == xb {
                    continue;
                }
                let right_sum = total - left_sum;
                let right_sq = total_sq - left_sq;
                let child = (left_sq - left_sum * left_sum / nl as f64)
                    + (right_sq - right_sum * right_sum / nr as f64);
                let gain = sse - child;
                if gain > 1e-12 * sse.max(f64::MIN_POSITIVE) && best.is_none_or(|b| gain > b.2) {
                    let mut t = 0.5 * (xa + xb);
                    if t >= xb {
                        t = xa;
                    }
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }
}

fn partition<F: Fn(&usize) -> bool>(idx: &mut [usize], pred: F) -> usize {
    let mut mid = 0;
    for k in 0..idx.len() {
        if pred(&idx[k]) {
            idx.swap(mid, k);
            mid += 1;
        }
    }
    mid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
    /// Summed SSE decrease of the splits on each feature, over all trees.
    pub importance: Vec<f64>,
    pub n_features: usize,
}

impl Forest {
    pub fn fit(x: &DMatrix<f64>, c: &[f64], params: &ForestParams) -> Result<Self> {
        let (m, q) = x.shape();
        if m == 0 || q == 0 {
            return Err(Error::Validation("forest needs at least one row and one feature".into()));
        }
        if params.n_trees == 0 || params.min_leaf == 0 {
            return Err(Error::Validation("forest needs n_trees >= 1 and min_leaf >= 1".into()));
        }
        let mtry = params.mtry.unwrap_or(q.div_ceil(3)).clamp(1, q);
        let grown: Vec<(RegressionTree, Vec<f64>)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, t as u64));
                let mut idx: Vec<usize> = if params.bootstrap {
                    (0..m).map(|_| rng.random_range(0..m)).collect()
                } else {
                    (0..m).collect()
                };
                let mut g = Grower {
                    x,
                    c,
                    mtry,
                    min_leaf: params.min_leaf,
                    nodes: Vec::new(),
                    importance: vec![0.0; q],
                };
                g.grow(&mut idx, &mut rng);
                (RegressionTree { nodes: g.nodes }, g.importance)
            })
            .collect();
        let mut importance = vec![0.0; q];
        let mut trees = Vec::with_capacity(grown.len());
        for (tree, imp) in grown {
            for (a, b) in importance.iter_mut().zip(imp) {
                *a += b;
            }
            trees.push(tree);
        }
        Ok(Self { trees, importance, n_features: q })
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostModelKind {
    Forest,
    Linear,
}

impl CostModelKind {
    pub fn name(self) -> &'static str {
        match self {
            CostModelKind::Forest => "forest",
            CostModelKind::Linear => "linear",
        }
    }
}

impl fmt::Display for CostModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostModel {
    Linear(LinearCostModel),
    Forest(Forest),
}

impl CostModel {
    pub fn kind(&self) -> CostModelKind {
        match self {
            CostModel::Linear(_) => CostModelKind::Linear,
            CostModel::Forest(_) => CostModelKind::Forest,
        }
    }

    pub fn fit(kind: CostModelKind, x: &DMatrix<f64>, c: &[f64], params: &ForestParams) -> Result<Self> {
        Ok(match kind {
            CostModelKind::Linear => CostModel::Linear(LinearCostModel::fit(x, c)?),
            CostModelKind::Forest => CostModel::Forest(Forest::fit(x, c, params)?),
        })
    }

    pub fn n_features(&self) -> usize {
        match self {
            CostModel::Linear(l) => l.coef.len() - 1,
            CostModel::Forest(f) => f.n_features,
        }
    }

    /// Raw predictions, one per row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::Dimension { context: "cost model features", expected: self.n_features(), got: x.ncols() });
        }
        let mut row = vec![0.0; x.ncols()];
        Ok((0..x.nrows())
            .map(|i| {
                for (c, r) in row.iter_mut().enumerate() {
                    *r = x[(i, c)];
                }
                match self {
                    CostModel::Linear(l) => l.predict_row(&row),
                    CostModel::Forest(f) => f.predict_row(&row),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelFit {
    pub model: CostModel,
    pub nmae_validation: f64,
    /// Forest only.
    pub importance: Option<Vec<f64>>,
}

impl CostModelFit {
    pub fn kind(&self) -> CostModelKind {
        self.model.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub kind: CostModelKind,
    pub nmae_validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSelection {
    /// The winner, refit on all labeled rows.
    pub selected: CostModelFit,
    /// Sorted by (NMAE, name).
    pub leaderboard: Vec<LeaderboardEntry>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Fits both models on the training split, scores them on validation, and
/// refits the winner on every labeled row.
pub fn fit_cost_models(
    x: &DMatrix<f64>,
    c: &[f64],
    split: &SplitSpec,
    forest: &ForestParams,
) -> Result<CostSelection> {
    if x.nrows() != c.len() {
        return Err(Error::Dimension { context: "labeled costs", expected: x.nrows(), got: c.len() });
    }
    if let Some(j) = c.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("labeled cost {j} is not finite")));
    }
    if c.iter().all(|v| *v == c[0]) {
        return Err(Error::Validation("labeled costs are constant; nothing to model".into()));
    }
    let (train, validation) = split_train_val(c.len(), split)?;
    let (xt, ct) = (rows(x, &train), pick(c, &train));
    let (xv, cv) = (rows(x, &validation), pick(c, &validation));

    let mut leaderboard = Vec::new();
    for kind in [CostModelKind::Linear, CostModelKind::Forest] {
        let model = CostModel::fit(kind, &xt, &ct, forest)?;
        let score = nmae(&cv, &model.predict(&xv)?)?;
        leaderboard.push(LeaderboardEntry { kind, nmae_validation: score });
    }
    leaderboard.sort_by(|a, b| {
        a.nmae_validation.total_cmp(&b.nmae_validation).then(a.kind.name().cmp(b.kind.name()))
    });
    let winner = leaderboard[0].clone();
    let model = CostModel::fit(winner.kind, x, c, forest)?;
    let importance = match &model {
        CostModel::Forest(f) => Some(f.importance.clone()),
        CostModel::Linear(_) => None,
    };
    Ok(CostSelection {
        selected: CostModelFit { model, nmae_validation: winner.nmae_validation, importance },
        leaderboard,
        train,
        validation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPredictions {
    pub values: Vec<f64>,
    pub total: f64,
    /// Number of negative predictions set to zero.
    pub clipped: usize,
}

/// Predicted costs for unlabeled rows, clipped below at zero.
pub fn predict_costs(fit: &CostModelFit, x: &DMatrix<f64>) -> Result<CostPredictions> {
    let raw = fit.model.predict(x)?;
    let clipped = raw.iter().filter(|v| **v < 0.0).count();
    if clipped > 0 {
        log::warn!("{clipped} negative cost predictions clipped to 0");
    }
    let values: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
    Ok(CostPredictions { total: values.iter().sum(), values, clipped })
}
