//! Treatment allocation from estimated total effects.
//!
//! Without a budget the optimal rule treats every unit with a negative
//! total effect. With costs and a budget the relaxed problem over
//! `π ∈ [0,1]^J` is a fractional knapsack, solved greedily in
//! benefit-cost order. The TE-ranked greedy is the naive comparator.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::netdata::{FeatureMap, InterferenceMap};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMethod {
    BcGreedy,
    TeGreedy,
    Unconstrained,
}

impl PolicyMethod {
    pub fn name(self) -> &'static str {
        match self {
            PolicyMethod::BcGreedy => "bc_greedy",
            PolicyMethod::TeGreedy => "te_greedy",
            PolicyMethod::Unconstrained => "unconstrained",
        }
    }
}

impl fmt::Display for PolicyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" | "bc_greedy" => Ok(PolicyMethod::BcGreedy),
            "te" | "te_greedy" => Ok(PolicyMethod::TeGreedy),
            "unconstrained" => Ok(PolicyMethod::Unconstrained),
            other => Err(Error::Validation(format!("unknown policy method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution<T: Real> {
    pub pi: DVector<T>,
    /// `Σ π_j c_j`, zero when no costs were given.
    pub spent: T,
    /// `None` for the unconstrained rule.
    pub budget: Option<T>,
    /// `(1/n) Σ_j π_j TE_j`.
    pub value_rate: T,
    pub value_count: Option<T>,
    pub method: PolicyMethod,
    /// Index of the strictly fractional coordinate, if any.
    pub fractional: Option<usize>,
}

impl<T: Real> PolicySolution<T> {
    /// Budget left after spending; zero for the unconstrained rule.
    pub fn residual_budget(&self) -> T {
        self.budget.map_or(T::zero(), |b| (b - self.spent).max(T::zero()))
    }

    /// Drops the fractional unit. `te`, `cost`, `n` are the inputs the
    /// solution was computed from; `value_count` is cleared.
    pub fn truncate_fractional(&mut self, te: &DVector<T>, cost: &DVector<T>, n: usize) -> Result<()> {
        if let Some(j) = self.fractional.take() {
            self.pi[j] = T::zero();
            self.spent = self.pi.dot(cost);
            self.value_rate = policy_value(te, &self.pi, n)?;
            self.value_count = None;
        }
        Ok(())
    }

    pub fn n_treated(&self) -> usize {
        self.pi.iter().filter(|p| **p > T::zero()).count()
    }
}

fn check_len<T: Real>(context: &'static str, expected: usize, v: &DVector<T>) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension { context, expected, got: v.len() });
    }
    Ok(())
}

fn check_finite<T: Real>(te: &DVector<T>) -> Result<()> {
    match te.iter().position(|v| !v.is_finite_value()) {
        Some(j) => Err(Error::Validation(format!("total effect for unit {j} is not finite"))),
        None => Ok(()),
    }
}

/// `(1/n) Σ_j π_j TE_j`.
pub fn policy_value<T: Real>(te: &DVector<T>, pi: &DVector<T>, n: usize) -> Result<T> {
    check_len("policy vector", te.len(), pi)?;
    if n == 0 {
        return Err(Error::Validation("policy value needs at least one outcome unit".into()));
    }
    Ok(pi.dot(te) / T::from_count(n))
}

/// Change in outcome counts: `Σ_i δ_i PY_i / 10000` with
/// `δ_i = (1/J) Σ_j H_ij π_j fA(x_i)ᵀ β`.
pub fn policy_count<T: Real>(
    h: &InterferenceMap<T>,
    x_out: &DMatrix<T>,
    basis_fa: FeatureMap,
    beta: &DVector<T>,
    pi: &DVector<T>,
    person_years: &DVector<T>,
) -> Result<T> {
    check_len("policy vector", h.n_interventions(), pi)?;
    check_len("person-years", h.n_outcomes(), person_years)?;
    if x_out.nrows() != h.n_outcomes() {
        return Err(Error::Dimension { context: "policy count outcome units", expected: h.n_outcomes(), got: x_out.nrows() });
    }
    let fa = basis_fa.expand(x_out) * beta;
    let exposure = h.matrix() * pi / T::from_count(h.n_interventions());
    let delta = exposure.component_mul(&fa);
    Ok(delta.dot(person_years) / T::lit(10_000.0))
}

/// Treats every unit with `TE_j < 0`.
pub fn unconstrained_policy<T: Real>(te: &DVector<T>, cost: Option<&DVector<T>>, n: usize) -> Result<PolicySolution<T>> {
    check_finite(te)?;
    let pi = te.map(|t| if t < T::zero() { T::one() } else { T::zero() });
    let spent = match cost {
        Some(c) => {
            check_len("costs", te.len(), c)?;
            pi.dot(c)
        }
        None => T::zero(),
    };
    Ok(PolicySolution {
        value_rate: policy_value(te, &pi, n)?,
        pi,
        spent,
        budget: None,
        value_count: None,
        method: PolicyMethod::Unconstrained,
        fractional: None,
    })
}

/// Fractional knapsack in benefit-cost order; optimal for the relaxed
/// program.
pub fn knapsack_policy<T: Real>(te: &DVector<T>, cost: &DVector<T>, budget: T, n: usize) -> Result<PolicySolution<T>> {
    greedy(te, cost, budget, n, PolicyMethod::BcGreedy)
}

/// Same greedy mechanics, ranked by total effect alone.
pub fn te_ranked_policy<T: Real>(te: &DVector<T>, cost: &DVector<T>, budget: T, n: usize) -> Result<PolicySolution<T>> {
    greedy(te, cost, budget, n, PolicyMethod::TeGreedy)
}

/// Dispatches on `method`; `Unconstrained` ignores the budget.
pub fn solve_policy<T: Real>(
    method: PolicyMethod,
    te: &DVector<T>,
    cost: &DVector<T>,
    budget: T,
    n: usize,
) -> Result<PolicySolution<T>> {
    match method {
        PolicyMethod::Unconstrained => unconstrained_policy(te, Some(cost), n),
        m => greedy(te, cost, budget, n, m),
    }
}

fn greedy<T: Real>(te: &DVector<T>, cost: &DVector<T>, budget: T, n: usize, method: PolicyMethod) -> Result<PolicySolution<T>> {
    check_len("costs", te.len(), cost)?;
    check_finite(te)?;
    if !(budget >= T::zero()) || !budget.is_finite_value() {
        return Err(Error::Validation(format!("budget must be a finite nonnegative number, got {}", budget.as_f64())));
    }
    let mut candidates: Vec<usize> = (0..te.len()).filter(|&j| te[j] < T::zero()).collect();
    if let Some(&j) = candidates.iter().find(|&&j| !(cost[j] > T::zero()) || !cost[j].is_finite_value()) {
        return Err(Error::Validation(format!(
            "unit {j} has a negative effect but nonpositive cost {}",
            cost[j].as_f64()
        )));
    }
    let key = |j: usize| match method {
        PolicyMethod::BcGreedy => te[j] / cost[j],
        _ => te[j],
    };
    candidates.sort_by(|&a, &b| {
        key(a)
            .partial_cmp(&key(b))
            .unwrap_or(Ordering::Equal)
            .then(cost[a].partial_cmp(&cost[b]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });

    let mut pi = DVector::zeros(te.len());
    let mut spent = T::zero();
    let mut fractional = None;
    for j in candidates {
        let next = spent + cost[j];
        if next <= budget {
            pi[j] = T::one();
            spent = next;
        } else {
            let frac = (budget - spent) / cost[j];
            if frac > T::zero() {
                pi[j] = frac;
                spent += frac * cost[j];
                fractional = Some(j);
            }
            break;
        }
    }
    Ok(PolicySolution {
        value_rate: policy_value(te, &pi, n)?,
        pi,
        spent,
        budget: Some(budget),
        value_count: None,
        method,
        fractional,
    })
}

/// Both greedy policies at `budget_f = f · Σ_j cost_j` for each fraction.
pub fn budget_sweep<T: Real>(
    te: &DVector<T>,
    cost: &DVector<T>,
    fractions: &[T],
    n: usize,
) -> Result<Vec<(PolicySolution<T>, PolicySolution<T>)>> {
    check_len("costs", te.len(), cost)?;
    if let Some(f) = fractions.iter().find(|f| !(**f > T::zero() && **f <= T::one())) {
        return Err(Error::Validation(format!("budget fraction {} outside (0, 1]", f.as_f64())));
    }
    if fractions.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("budget fractions must be sorted ascending".into()));
    }
    let total = cost.sum();
    fractions
        .iter()
        .map(|&f| {
            let b = f * total;
            Ok((knapsack_policy(te, cost, b, n)?, te_ranked_policy(te, cost, b, n)?))
        })
        .collect()
}

/// Optimum of the relaxed program by enumerating every feasible subset
/// plus the best single fractional completion. Exponential; for testing
/// on small instances.
pub fn enumerate_optimum<T: Real>(te: &DVector<T>, cost: &DVector<T>, budget: T) -> Result<T> {
    let m = te.len();
    if m > 20 {
        return Err(Error::Validation(format!("enumeration limited to 20 units, got {m}")));
    }
    check_len("costs", m, cost)?;
    let mut best = T::zero();
    for mask in 0u32..(1u32 << m) {
        let mut c = T::zero();
        let mut v = T::zero();
        for j in 0..m {
            if mask & (1 << j) != 0 {
                c += cost[j];
                v += te[j];
            }
        }
        if c > budget {
            continue;
        }
        let left = budget - c;
        let mut extra = T::zero();
        for j in 0..m {
            if mask & (1 << j) == 0 && te[j] < T::zero() && cost[j] > T::zero() {
                let frac = (left / cost[j]).min(T::one());
                extra = extra.min(frac * te[j]);
            }
        }
        best = best.min(v + extra);
    }
    Ok(best)
}
