use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use netpolicy::alearn::{fit_a, PropensitySource};
use netpolicy::costimpute::{fit_cost_models, predict_costs, ForestParams, SplitSpec};
use netpolicy::effects::{estimate_effects, EffectTable};
use netpolicy::exposure::exposure_map;
use netpolicy::netdata::{validate_bundle, FeatureMap, InterferenceMap, InterventionTable, OutcomeTable};
use netpolicy::policy::{budget_sweep, policy_count, solve_policy, PolicyMethod, PolicySolution};
use netpolicy::propensity::{fit_propensity, trim_by_propensity, PropensityFit, TrimReport};
use netpolicy::qlearn::{fit_q, OutcomeModelSpec};
use netpolicy::simlab::{run_cells, standard_cells, CellPropensity, CovariateSource, Estimator, HSource, SimConfig, SimDesign};

use crate::args::{DataArgs, EstimatorArg, FitArgs, ImputeArgs, MethodArg, ModelArgs, PolicyArgs, SimulateArgs, SweepArgs};
use crate::error::{CliError, CliResult};
use crate::io::{self, num, opt_num, read_interventions, read_map, read_outcomes, InterventionData, MachineFile, OutcomeData};
use crate::report::{coefficient_rows, sig4, sig4_opt, CoefficientRow, TextTable};

const MULTIPLICITY_CAVEAT: &str = "One-sided p-values test H0: TE >= 0 for each unit separately. \
No multiplicity correction is applied; read them as exploratory.";

fn out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Inputs of the data-driven commands, validated together.
pub struct Loaded {
    pub outcomes: OutcomeData,
    pub interventions: InterventionData,
    pub h: InterferenceMap<f64>,
}

pub fn load(data: &DataArgs) -> CliResult<Loaded> {
    let outcomes = read_outcomes(&data.outcomes)?;
    let interventions = read_interventions(&data.interventions)?;
    let h = read_map(&data.h, data.h_format, outcomes.ids.len(), interventions.len())?;
    let report = validate_bundle(&h, &outcomes.table, &interventions.table()?);
    for w in report.warnings() {
        log::warn!("{}", w.message);
    }
    report.ensure_usable()?;
    Ok(Loaded { outcomes, interventions, h })
}

/// A fitted outcome model on the (possibly trimmed) intervention units.
pub struct Fitted {
    /// Original indices of the intervention units used.
    pub kept: Vec<usize>,
    pub trim: Option<TrimReport<f64>>,
    pub h: InterferenceMap<f64>,
    pub int: InterventionTable<f64>,
    pub spec: OutcomeModelSpec,
    pub estimator: EstimatorArg,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub cov_theta: DMatrix<f64>,
    pub propensity: Option<PropensityFit<f64>>,
}

impl Fitted {
    pub fn cov_beta(&self) -> DMatrix<f64> {
        let k0 = self.alpha.len();
        let kb = self.beta.len();
        self.cov_theta.view((k0, k0), (kb, kb)).into_owned()
    }
}

fn check_level(level: f64) -> CliResult<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::Validation(format!("--level must lie in (0, 1), got {level}")))
    }
}

pub fn fit_models(loaded: &Loaded, model: &ModelArgs) -> CliResult<Fitted> {
    check_level(model.level)?;
    let prop_basis = FeatureMap::new(model.propensity_basis);
    let full = loaded.interventions.table()?;
    let (kept, trim) = match model.trim {
        Some(q) => {
            let first = fit_propensity(&full.x, &full.a, prop_basis)?;
            let report = trim_by_propensity(&first.fitted, q)?;
            log::info!(
                "trimming at propensity {}: kept {}, dropped {}",
                report.threshold,
                report.kept.len(),
                report.dropped.len()
            );
            (report.kept.clone(), Some(report))
        }
        None => ((0..full.len()).collect(), None),
    };
    let (h, int) = if trim.is_some() {
        (loaded.h.select_columns(&kept)?, full.select(&kept))
    } else {
        (loaded.h.clone(), full)
    };
    let spec = OutcomeModelSpec::new(FeatureMap::new(model.f0), FeatureMap::new(model.fa));
    let out = &loaded.outcomes.table;
    let (alpha, beta, cov_theta, propensity) = match model.estimator {
        EstimatorArg::Q => {
            let abar = exposure_map(&h, &int.a)?;
            let fit = fit_q(out, &abar, &spec)?;
            let prop = trim.as_ref().map(|_| fit_propensity(&int.x, &int.a, prop_basis)).transpose()?;
            (fit.alpha, fit.beta, fit.cov_theta, prop)
        }
        EstimatorArg::A => {
            let fit = fit_a(out, &int, &h, &spec, &PropensitySource::Estimate(prop_basis))?;
            if fit.diagnostics.condition > netpolicy::linalg::CONDITION_WARN {
                log::warn!("A-learning system is ill-conditioned ({:e})", fit.diagnostics.condition);
            }
            (fit.alpha, fit.beta, fit.cov_alphabeta, fit.gamma_fit)
        }
    };
    Ok(Fitted { kept, trim, h, int, spec, estimator: model.estimator, alpha, beta, cov_theta, propensity })
}

fn estimator_name(e: EstimatorArg) -> &'static str {
    match e {
        EstimatorArg::A => "A-learning",
        EstimatorArg::Q => "Q-learning",
    }
}

fn fit_summary(loaded: &Loaded, fitted: &Fitted) -> String {
    let mut s = format!(
        "estimator: {}\noutcome units: {}\nintervention units: {} of {}\n",
        estimator_name(fitted.estimator),
        loaded.outcomes.ids.len(),
        fitted.kept.len(),
        loaded.interventions.len()
    );
    if let Some(t) = &fitted.trim {
        s.push_str(&format!("trim threshold: {}\n", sig4(t.threshold)));
    }
    s
}

pub fn coefficient_report(loaded: &Loaded, fitted: &Fitted, level: f64) -> Vec<CoefficientRow> {
    let names = &loaded.outcomes.covariates;
    let k0 = fitted.alpha.len();
    let kb = fitted.beta.len();
    let cov = &fitted.cov_theta;
    let mut rows = coefficient_rows(
        "baseline",
        &fitted.spec.basis_f0.names_for(names),
        &fitted.alpha,
        &cov.view((0, 0), (k0, k0)).into_owned(),
        level,
    );
    rows.extend(coefficient_rows(
        "effect",
        &fitted.spec.basis_fa.names_for(names),
        &fitted.beta,
        &cov.view((k0, k0), (kb, kb)).into_owned(),
        level,
    ));
    if let Some(p) = &fitted.propensity {
        let j = p.n_units() as f64;
        rows.extend(coefficient_rows(
            "propensity",
            &p.basis.names_for(&loaded.interventions.covariates),
            &p.gamma,
            &(&p.cov_gamma / j),
            level,
        ));
    }
    rows
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let loaded = load(&args.data)?;
    let fitted = fit_models(&loaded, &args.model)?;
    let rows = coefficient_report(&loaded, &fitted, args.model.level);
    let dir = &args.data.out_dir;
    out_dir(dir)?;

    let mut f = MachineFile::with_comments(
        &dir.join("coefficients.csv"),
        "coefficients",
        &[("estimator", estimator_name(fitted.estimator).into()), ("level", num(args.model.level))],
        &["model", "term", "estimate", "se", "ci_low", "ci_high", "p_value", "degenerate"],
    )?;
    let mut t = TextTable::new(&["model", "term", "estimate", "se", "ci low", "ci high", "p", "note"]);
    for r in &rows {
        f.row([
            r.model.clone(),
            r.name.clone(),
            num(r.estimate),
            num(r.se),
            num(r.ci_low),
            num(r.ci_high),
            num(r.p_value),
            r.degenerate.to_string(),
        ])?;
        t.row(vec![
            r.model.clone(),
            r.name.clone(),
            sig4(r.estimate),
            sig4(r.se),
            sig4(r.ci_low),
            sig4(r.ci_high),
            sig4(r.p_value),
            if r.degenerate { "zero SE".into() } else { String::new() },
        ]);
    }
    f.finish()?;
    let text = format!(
        "{}confidence level: {}\np-values are two-sided tests of a zero coefficient.\n\n{}",
        fit_summary(&loaded, &fitted),
        args.model.level,
        t.render()
    );
    io::write_text(&dir.join("coefficients.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn kept_costs(loaded: &Loaded, fitted: &Fitted) -> Option<DVector<f64>> {
    let costs = loaded.interventions.costs.as_ref()?;
    let picked: Option<Vec<f64>> = fitted.kept.iter().map(|&j| costs[j]).collect();
    picked.map(DVector::from_vec)
}

pub fn effects_for(loaded: &Loaded, fitted: &Fitted, level: f64) -> CliResult<EffectTable<f64>> {
    let cost = kept_costs(loaded, fitted);
    Ok(estimate_effects(
        &fitted.h,
        &loaded.outcomes.table.x,
        fitted.spec.basis_fa,
        &fitted.beta,
        &fitted.cov_beta(),
        level,
        cost.as_ref(),
    )?)
}

pub const EFFECTS_HEADER: [&str; 8] =
    ["id", "total_effect", "se", "ci_low", "ci_high", "p_one_sided", "benefit_cost", "zero_column"];

pub fn write_effects(path: &Path, ids: &[String], t: &EffectTable<f64>) -> CliResult<()> {
    let mut f = MachineFile::with_comments(path, "effects", &[("level", num(t.level))], &EFFECTS_HEADER)?;
    for j in 0..t.len() {
        f.row([
            ids[j].clone(),
            num(t.total_effect[j]),
            num(t.se[j]),
            num(t.ci_low[j]),
            num(t.ci_high[j]),
            num(t.p_one_sided[j]),
            opt_num(t.benefit_cost.as_ref().and_then(|b| b[j])),
            t.zero_columns.contains(&j).to_string(),
        ])?;
    }
    f.finish()
}

/// Parses an effects file written by [`write_effects`].
pub fn read_effects(path: &Path) -> CliResult<(Vec<String>, EffectTable<f64>)> {
    let m = io::read_machine(path, "effects")?;
    if m.header != EFFECTS_HEADER {
        return Err(CliError::invalid(path, "unexpected effects columns"));
    }
    let bad = |what: &str| CliError::invalid(path, format!("bad {what}"));
    let level: f64 = m.comment("level").ok_or_else(|| bad("level"))?.parse().map_err(|_| bad("level"))?;
    let col = |k: usize| -> CliResult<DVector<f64>> {
        let v: Result<Vec<f64>, _> = m.rows.iter().map(|r| r[k].parse::<f64>()).collect();
        v.map(DVector::from_vec).map_err(|_| bad(EFFECTS_HEADER[k]))
    };
    let bc: Vec<Option<f64>> = m
        .rows
        .iter()
        .map(|r| if r[6].is_empty() { Ok(None) } else { r[6].parse().map(Some) })
        .collect::<Result<_, _>>()
        .map_err(|_| bad("benefit_cost"))?;
    let table = EffectTable {
        total_effect: col(1)?,
        se: col(2)?,
        ci_low: col(3)?,
        ci_high: col(4)?,
        p_one_sided: col(5)?,
        benefit_cost: bc.iter().any(Option::is_some).then_some(bc),
        zero_columns: m.rows.iter().enumerate().filter(|(_, r)| r[7] == "true").map(|(j, _)| j).collect(),
        level,
    };
    Ok((m.rows.iter().map(|r| r[0].clone()).collect(), table))
}

fn kept_ids(loaded: &Loaded, fitted: &Fitted) -> Vec<String> {
    fitted.kept.iter().map(|&j| loaded.interventions.ids[j].clone()).collect()
}

pub fn cmd_effects(args: &FitArgs) -> CliResult<()> {
    let loaded = load(&args.data)?;
    let fitted = fit_models(&loaded, &args.model)?;
    let table = effects_for(&loaded, &fitted, args.model.level)?;
    let ids = kept_ids(&loaded, &fitted);
    let dir = &args.data.out_dir;
    out_dir(dir)?;
    write_effects(&dir.join("effects.csv"), &ids, &table)?;

    let mut t = TextTable::new(&["unit", "total effect", "se", "ci low", "ci high", "p (TE<0)", "benefit/cost"]);
    for j in 0..table.len() {
        t.row(vec![
            ids[j].clone(),
            sig4(table.total_effect[j]),
            sig4(table.se[j]),
            sig4(table.ci_low[j]),
            sig4(table.ci_high[j]),
            sig4(table.p_one_sided[j]),
            sig4_opt(table.benefit_cost.as_ref().and_then(|b| b[j])),
        ]);
    }
    let below = table.p_one_sided.iter().filter(|p| **p < 0.05).count();
    let mut text = format!(
        "{}confidence level: {}\nunits with one-sided p < 0.05: {below} of {}\n{MULTIPLICITY_CAVEAT}\n",
        fit_summary(&loaded, &fitted),
        table.level,
        table.len()
    );
    if !table.zero_columns.is_empty() {
        let z: Vec<&str> = table.zero_columns.iter().map(|&j| ids[j].as_str()).collect();
        text.push_str(&format!("no transport to any outcome unit (effect structurally 0): {}\n", z.join(", ")));
    }
    text.push('\n');
    text.push_str(&t.render());
    io::write_text(&dir.join("effects.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn method(m: MethodArg) -> PolicyMethod {
    match m {
        MethodArg::Bc => PolicyMethod::BcGreedy,
        MethodArg::Te => PolicyMethod::TeGreedy,
        MethodArg::Unconstrained => PolicyMethod::Unconstrained,
    }
}

/// Total effects and costs of the kept units, ready for allocation.
struct PolicyInputs {
    loaded: Loaded,
    fitted: Fitted,
    ids: Vec<String>,
    te: DVector<f64>,
    cost: DVector<f64>,
}

fn policy_inputs(args: &FitArgs) -> CliResult<PolicyInputs> {
    let loaded = load(&args.data)?;
    let all_costs = loaded.interventions.complete_costs()?;
    let fitted = fit_models(&loaded, &args.model)?;
    let cost = DVector::from_iterator(fitted.kept.len(), fitted.kept.iter().map(|&j| all_costs[j]));
    let te = netpolicy::effects::total_effects(&fitted.h, &loaded.outcomes.table.x, &fitted.beta, fitted.spec.basis_fa)?;
    let ids = kept_ids(&loaded, &fitted);
    Ok(PolicyInputs { loaded, fitted, ids, te, cost })
}

fn with_count(p: &PolicyInputs, mut s: PolicySolution<f64>) -> CliResult<PolicySolution<f64>> {
    let out: &OutcomeTable<f64> = &p.loaded.outcomes.table;
    if let Some(py) = &out.person_years {
        s.value_count = Some(policy_count(&p.fitted.h, &out.x, p.fitted.spec.basis_fa, &p.fitted.beta, &s.pi, py)?);
    }
    Ok(s)
}

pub fn cmd_policy(args: &PolicyArgs) -> CliResult<()> {
    let m = method(args.method);
    let frac = match (m, args.budget_frac) {
        (PolicyMethod::Unconstrained, _) => None,
        (_, Some(f)) if f >= 0.0 && f.is_finite() => Some(f),
        (_, Some(f)) => return Err(CliError::Validation(format!("--budget-frac must be nonnegative, got {f}"))),
        (_, None) => return Err(CliError::Validation("--budget-frac is required for --method bc|te".into())),
    };
    let p = policy_inputs(&args.fit)?;
    let n = p.loaded.outcomes.ids.len();
    let budget = frac.map_or(0.0, |f| f * p.cost.sum());
    let mut s = solve_policy(m, &p.te, &p.cost, budget, n)?;
    if args.integral {
        s.truncate_fractional(&p.te, &p.cost, n)?;
    }
    let s = with_count(&p, s)?;

    let dir = &args.fit.data.out_dir;
    out_dir(dir)?;
    let mut f = MachineFile::create(&dir.join("policy.csv"), "policy", &["id", "total_effect", "cost", "pi"])?;
    for j in 0..p.te.len() {
        f.row([p.ids[j].clone(), num(p.te[j]), num(p.cost[j]), num(s.pi[j])])?;
    }
    f.finish()?;
    let mut f = MachineFile::create(
        &dir.join("policy_summary.csv"),
        "policy-summary",
        &["method", "budget_frac", "budget", "spent", "residual_budget", "value_rate", "value_count", "n_treated", "fractional_id", "integral"],
    )?;
    let fractional = s.fractional.map(|j| p.ids[j].clone()).unwrap_or_default();
    f.row([
        m.name().to_string(),
        opt_num(frac),
        opt_num(s.budget),
        num(s.spent),
        num(s.residual_budget()),
        num(s.value_rate),
        opt_num(s.value_count),
        s.n_treated().to_string(),
        fractional.clone(),
        args.integral.to_string(),
    ])?;
    f.finish()?;

    let mut t = TextTable::new(&["unit", "total effect", "cost", "pi"]);
    for j in 0..p.te.len() {
        if s.pi[j] > 0.0 {
            t.row(vec![p.ids[j].clone(), sig4(p.te[j]), sig4(p.cost[j]), sig4(s.pi[j])]);
        }
    }
    let text = format!(
        "{}method: {}\nbudget: {}\nspent: {}\nresidual budget: {}\nchange in mean outcome: {}\nchange in outcome count (per 10,000 person-years scale): {}\nunits treated: {}{}\n\n{}",
        fit_summary(&p.loaded, &p.fitted),
        m,
        sig4_opt(s.budget),
        sig4(s.spent),
        sig4(s.residual_budget()),
        sig4(s.value_rate),
        sig4_opt(s.value_count),
        s.n_treated(),
        if fractional.is_empty() { String::new() } else { format!(" (unit {fractional} fractional)") },
        t.render()
    );
    io::write_text(&dir.join("policy.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let p = policy_inputs(&args.fit)?;
    let n = p.loaded.outcomes.ids.len();
    let sweep = budget_sweep(&p.te, &p.cost, &args.fractions, n)?;
    let dir = &args.fit.data.out_dir;
    out_dir(dir)?;
    let mut f = MachineFile::create(
        &dir.join("sweep.csv"),
        "sweep",
        &[
            "fraction", "budget", "bc_value_rate", "te_value_rate", "bc_value_count", "te_value_count",
            "bc_spent", "te_spent", "bc_treated", "te_treated", "dominance",
        ],
    )?;
    let mut t = TextTable::new(&["fraction", "budget", "bc value", "te value", "bc count", "te count", "bc <= te"]);
    let mut all_dominate = true;
    for (&frac, (bc, te)) in args.fractions.iter().zip(sweep) {
        let bc = with_count(&p, bc)?;
        let te = with_count(&p, te)?;
        let dominates = bc.value_rate <= te.value_rate;
        all_dominate &= dominates;
        let budget = bc.budget.unwrap_or_default();
        f.row([
            num(frac),
            num(budget),
            num(bc.value_rate),
            num(te.value_rate),
            opt_num(bc.value_count),
            opt_num(te.value_count),
            num(bc.spent),
            num(te.spent),
            bc.n_treated().to_string(),
            te.n_treated().to_string(),
            dominates.to_string(),
        ])?;
        t.row(vec![
            sig4(frac),
            sig4(budget),
            sig4(bc.value_rate),
            sig4(te.value_rate),
            sig4_opt(bc.value_count),
            sig4_opt(te.value_count),
            if dominates { "yes".into() } else { "no".into() },
        ]);
    }
    f.finish()?;
    let text = format!(
        "{}benefit-cost policy at least as good as TE ranking at every fraction: {}\n\n{}",
        fit_summary(&p.loaded, &p.fitted),
        if all_dominate { "yes" } else { "no" },
        t.render()
    );
    io::write_text(&dir.join("sweep.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_impute_costs(args: &ImputeArgs) -> CliResult<()> {
    let data = read_interventions(&args.interventions)?;
    let costs = data
        .costs
        .clone()
        .ok_or_else(|| CliError::invalid(&data.path, "no `cost` column to learn from"))?;
    let labeled: Vec<usize> = (0..costs.len()).filter(|&j| costs[j].is_some()).collect();
    let unlabeled: Vec<usize> = (0..costs.len()).filter(|&j| costs[j].is_none()).collect();
    let x_rows = |idx: &[usize]| DMatrix::from_fn(idx.len(), data.x.ncols(), |r, c| data.x[(idx[r], c)]);
    let c: Vec<f64> = labeled.iter().map(|&j| costs[j].unwrap_or_default()).collect();
    let split = SplitSpec { train_fraction: args.train_frac, seed: args.seed };
    let forest = ForestParams {
        n_trees: args.trees,
        mtry: args.mtry,
        min_leaf: args.min_leaf,
        bootstrap: true,
        seed: args.seed,
    };
    let sel = fit_cost_models(&x_rows(&labeled), &c, &split, &forest)?;
    let pred = predict_costs(&sel.selected, &x_rows(&unlabeled))?;

    let dir = &args.out_dir;
    out_dir(dir)?;
    let mut filled = costs.clone();
    for (k, &j) in unlabeled.iter().enumerate() {
        filled[j] = Some(pred.values[k]);
    }
    let mut f = MachineFile::create(&dir.join("costs.csv"), "costs", &["id", "cost", "imputed"])?;
    for j in 0..filled.len() {
        f.row([data.ids[j].clone(), opt_num(filled[j]), costs[j].is_none().to_string()])?;
    }
    f.finish()?;

    let selected = sel.selected.kind();
    let mut f = MachineFile::create(
        &dir.join("cost_leaderboard.csv"),
        "cost-leaderboard",
        &["model", "nmae_validation", "selected"],
    )?;
    for e in &sel.leaderboard {
        f.row([e.kind.name().to_string(), num(e.nmae_validation), (e.kind == selected).to_string()])?;
    }
    f.finish()?;
    if let Some(imp) = &sel.selected.importance {
        let mut f = MachineFile::create(&dir.join("cost_importance.csv"), "cost-importance", &["feature", "importance"])?;
        for (name, v) in data.covariates.iter().zip(imp) {
            f.row([name.clone(), num(*v)])?;
        }
        f.finish()?;
    }
    let model_json = serde_json::to_string(&sel.selected).map_err(|e| CliError::Io(e.to_string()))?;
    io::write_text(&dir.join("cost_model.json"), &model_json)?;

    // same layout as the input, ready for the policy commands
    let mut header = vec!["id".to_string(), "a".into(), "cost".into()];
    header.extend(data.covariates.iter().cloned());
    let path = dir.join("interventions_imputed.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record(&header).map_err(|e| CliError::io(&path, e))?;
    for j in 0..data.len() {
        let mut rec = vec![data.ids[j].clone(), num(data.a[j]), opt_num(filled[j])];
        rec.extend((0..data.x.ncols()).map(|c| num(data.x[(j, c)])));
        w.write_record(&rec).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let mut t = TextTable::new(&["model", "validation NMAE"]);
    for e in &sel.leaderboard {
        t.row(vec![e.kind.name().into(), sig4(e.nmae_validation)]);
    }
    let mut text = format!(
        "labeled units: {} (train {}, validation {})\nselected model: {selected} (refit on all labeled units)\nimputed units: {}\ntotal imputed cost: {}\n",
        labeled.len(),
        sel.train.len(),
        sel.validation.len(),
        unlabeled.len(),
        sig4(pred.total)
    );
    if pred.clipped > 0 {
        text.push_str(&format!("negative predictions clipped to 0: {}\n", pred.clipped));
    }
    text.push('\n');
    text.push_str(&t.render());
    if let Some(imp) = &sel.selected.importance {
        let mut it = TextTable::new(&["feature", "importance"]);
        let mut order: Vec<usize> = (0..imp.len()).collect();
        order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
        for k in order {
            it.row(vec![data.covariates[k].clone(), sig4(imp[k])]);
        }
        text.push('\n');
        text.push_str(&it.render());
    }
    io::write_text(&dir.join("costs.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn load_sim_config(path: Option<&Path>) -> CliResult<SimConfig> {
    let config = match path {
        None => SimConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::invalid(p, e))?
        }
    };
    config.validate()?;
    Ok(config)
}

fn cell_labels(cell: &netpolicy::simlab::CellSpec) -> (&'static str, &'static str, &'static str) {
    let correct = |b: FeatureMap| if b == FeatureMap::quadratic() { "correct" } else { "misspecified" };
    match cell.estimator {
        Estimator::Q => ("Q-learning", correct(cell.basis_f0), "-"),
        Estimator::A => (
            "A-learning",
            correct(cell.basis_f0),
            match cell.propensity {
                CellPropensity::Estimated(b) => correct(b),
                CellPropensity::Known => "known",
            },
        ),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let config = load_sim_config(args.config.as_deref())?;
    let design = match (config.covariate_source, config.h_source) {
        (CovariateSource::SyntheticGaussian, HSource::SyntheticLognormal) => SimDesign::synthetic(&config)?,
        (CovariateSource::UserSupplied, HSource::UserSupplied) => {
            let need = |p: &Option<std::path::PathBuf>, flag: &str| {
                p.clone().ok_or_else(|| CliError::Validation(format!("user-supplied inputs need {flag}")))
            };
            let out = read_outcomes(&need(&args.outcomes, "--outcomes")?)?;
            let int = read_interventions(&need(&args.interventions, "--interventions")?)?;
            let h = read_map(&need(&args.h, "--h")?, args.h_format, out.ids.len(), int.len())?;
            SimDesign::from_inputs(&config, out.table.x, int.x, h)?
        }
        _ => {
            return Err(CliError::Validation(
                "config fields `covariate_source` and `h_source` must both be synthetic or both user_supplied".into(),
            ))
        }
    };
    let cells = standard_cells();
    let report = run_cells(&design, &cells)?;

    let dir = &args.out_dir;
    out_dir(dir)?;
    let mut f = MachineFile::with_comments(
        &dir.join("simulation.csv"),
        "simulation",
        &[
            ("n", design.config.n.to_string()),
            ("J", design.config.j.to_string()),
            ("reps", design.config.reps.to_string()),
            ("master_seed", design.config.master_seed.to_string()),
        ],
        &["cell", "method", "bs", "ps", "bias", "rmse", "coverage", "completed", "failed"],
    )?;
    let mut t = TextTable::new(&["Method", "BS (f0)", "PS (e)", "Bias", "RMSE", "Coverage", "failed"]);
    for (cell, s) in cells.iter().zip(&report.cells) {
        let (m, bs, ps) = cell_labels(cell);
        f.row([
            s.cell.clone(),
            m.into(),
            bs.into(),
            ps.into(),
            num(s.bias),
            num(s.rmse),
            num(s.coverage),
            s.completed.to_string(),
            s.failed.to_string(),
        ])?;
        t.row(vec![m.into(), bs.into(), ps.into(), sig4(s.bias), sig4(s.rmse), sig4(s.coverage), s.failed.to_string()]);
    }
    f.finish()?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    io::write_text(&dir.join("simulation.json"), &json)?;
    let gamma: Vec<String> = report.gamma0.iter().map(|g| sig4(*g)).collect();
    let text = format!(
        "n = {}, J = {}, reps = {}, snr = {}, master seed = {}\nmean propensity: {}  mean outcome: {}\npropensity coefficients: {}\n\n{}",
        design.config.n,
        design.config.j,
        design.config.reps,
        design.config.snr,
        design.config.master_seed,
        sig4(report.mean_propensity),
        sig4(report.mean_outcome),
        gamma.join(", "),
        t.render()
    );
    io::write_text(&dir.join("simulation.txt"), &text)?;
    print!("{text}");
    Ok(())
}
