//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs under `cargo test`. A failing criterion is reported but does not fail
//! the run unless `NETPOLICY_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use netpolicy::alearn::{fit_a, AlearnProblem, PropensitySource};
use netpolicy::costimpute::{fit_cost_models, nmae, split_train_val, CostModelKind, ForestParams, SplitSpec};
use netpolicy::effects::total_effects;
use netpolicy::exposure::{expected_exposure, exposure_map, exposure_row_mass};
use netpolicy::netdata::{FeatureMap, InterferenceMap, InterventionTable, OutcomeTable};
use netpolicy::policy::{enumerate_optimum, knapsack_policy, te_ranked_policy};
use netpolicy::propensity::logistic;
use netpolicy::qlearn::{self, fit_q, OutcomeModelSpec};
use netpolicy::simlab::{run_cells, standard_cells, CellPropensity, CellSpec, Estimator, SimConfig, SimDesign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const EXPOSURE_TOL: f64 = 1e-12;
const EXACT_TOL: f64 = 1e-8;
const SCALE_REL_TOL: f64 = 1e-12;
const JACOBIAN_REL_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const KNAPSACK_TOL: f64 = 1e-9;
const MC_Z: f64 = 3.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn normal_matrix(r: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| normal(r))
}

fn random_map(r: &mut ChaCha8Rng, n: usize, j: usize) -> InterferenceMap<f64> {
    InterferenceMap::new(DMatrix::from_fn(n, j, |_, _| if r.random::<f64>() < 0.2 { 0.0 } else { 2.0 * r.random::<f64>() }))
        .unwrap()
}

fn treatments(r: &mut ChaCha8Rng, j: usize) -> DVector<f64> {
    loop {
        let a = DVector::from_fn(j, |_, _| if r.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
        if a.sum() > 0.0 && a.sum() < j as f64 {
            return a;
        }
    }
}

struct Problem {
    out: OutcomeTable<f64>,
    int: InterventionTable<f64>,
    h: InterferenceMap<f64>,
}

fn random_problem(seed: u64, n: usize, j: usize, p: usize, q: usize) -> Problem {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, n, p);
    let y = DVector::from_fn(n, |_, _| normal(&mut r));
    let z = normal_matrix(&mut r, j, q);
    let a = treatments(&mut r, j);
    let h = random_map(&mut r, n, j);
    Problem {
        out: OutcomeTable::new(x, y, None).unwrap(),
        int: InterventionTable::new(z, a, None).unwrap(),
        h,
    }
}

fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let h = FD_STEP * x[k].abs().max(1.0);
        let (mut up, mut dn) = (x.clone(), x.clone());
        up[k] += h;
        dn[k] -= h;
        jac.set_column(k, &((f(&up) - f(&dn)) / (2.0 * h)));
    }
    jac
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max().max(1e-12)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut r = rng(1001);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..=200);
        let j = r.random_range(1..=20);
        let p = r.random_range(1..=4);
        let h = random_map(&mut r, n, j);
        let a = DVector::from_fn(j, |_, _| r.random::<f64>());
        let x = normal_matrix(&mut r, n, p);
        let basis = FeatureMap::quadratic();
        let beta = DVector::from_fn(basis.dim(p), |_, _| normal(&mut r));
        let hm = h.matrix();
        let jf = j as f64;

        let abar = exposure_map(&h, &a).unwrap();
        let mass = exposure_row_mass(&h);
        for i in 0..n {
            let (mut s, mut c) = (0.0, 0.0);
            for k in 0..j {
                s += hm[(i, k)] * a[k];
                c += hm[(i, k)];
            }
            worst = worst.max((abar[i] - s / jf).abs()).max((mass[i] - c / jf).abs());
        }

        let te = total_effects(&h, &x, &beta, basis).unwrap();
        let fa: Vec<f64> = (0..n)
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                basis.expand_row(&row).iter().zip(beta.iter()).map(|(b, c)| b * c).sum()
            })
            .collect();
        for k in 0..j {
            let mut s = 0.0;
            for i in 0..n {
                s += hm[(i, k)] * fa[i];
            }
            worst = worst.max((te[k] - s / jf).abs());
        }
    }
    let took = start.elapsed();
    verdict(
        worst <= EXPOSURE_TOL && took < Duration::from_secs(1),
        format!("max |matrix - loop| = {worst:.2e} (tol {EXPOSURE_TOL:.0e}), {took:.2?} (< 1 s)"),
    )
}

fn criterion_2() -> Verdict {
    let pb = random_problem(7, 200, 12, 3, 1);
    let abar = exposure_map(&pb.h, &pb.int.a).unwrap();
    let spec = OutcomeModelSpec::new(FeatureMap::linear(), FeatureMap::linear());
    let theta0 = DVector::from_fn(8, |k, _| 0.5 - 0.13 * k as f64);
    let d = qlearn::design(&pb.out.x, &abar, &spec).unwrap();
    let out = OutcomeTable::new(pb.out.x.clone(), &d * &theta0, None).unwrap();
    let fit = fit_q(&out, &abar, &spec).unwrap();
    let recovery = (fit.theta() - &theta0).amax();

    let quad = OutcomeModelSpec::new(FeatureMap::quadratic(), FeatureMap::quadratic());
    let mut resid = qlearn::estimating_mean(&d, &out.y, &fit.theta()).amax();
    for seed in 0..50 {
        let pb = random_problem(300 + seed, 80, 10, 3, 1);
        let abar = exposure_map(&pb.h, &pb.int.a).unwrap();
        let fit = fit_q(&pb.out, &abar, &quad).unwrap();
        let d = qlearn::design(&pb.out.x, &abar, &quad).unwrap();
        resid = resid.max(qlearn::estimating_mean(&d, &pb.out.y, &fit.theta()).amax());
    }
    verdict(
        recovery <= EXACT_TOL && resid <= EXACT_TOL,
        format!("noiseless recovery {recovery:.2e}, worst estimating residual {resid:.2e} over 51 fits (tol {EXACT_TOL:.0e})"),
    )
}

fn criterion_3() -> Verdict {
    let spec = OutcomeModelSpec::new(FeatureMap::quadratic(), FeatureMap::quadratic());
    let source = PropensitySource::Estimate(FeatureMap::linear());
    let (mut block, mut scale_err) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let pb = random_problem(200 + seed, 120, 15, 2, 2);
        let fit = fit_a(&pb.out, &pb.int, &pb.h, &spec, &source).unwrap();
        block = block.max(fit.diagnostics.alpha_block_norm).max(fit.diagnostics.beta_block_norm);
        let scaled = fit_a(&pb.out.scale_outcome(10.0), &pb.int, &pb.h, &spec, &source).unwrap();
        let base = fit.theta() * 10.0;
        for (s, b) in scaled.theta().iter().zip(base.iter()) {
            scale_err = scale_err.max((s - b).abs() / b.abs().max(1e-300));
        }
    }
    verdict(
        block <= EXACT_TOL && scale_err <= SCALE_REL_TOL,
        format!(
            "worst block max-norm {block:.2e} (tol {EXACT_TOL:.0e}); Y x10 worst relative deviation {scale_err:.2e} (tol {SCALE_REL_TOL:.0e}) over 20 fits"
        ),
    )
}

fn criterion_4() -> Verdict {
    let lin = FeatureMap::linear();
    let quad = FeatureMap::quadratic();
    let (mut sd, mut sba, mut sg) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..20 {
        let pb = random_problem(100 + seed, 50, 9, 2, 2);
        let mut r = rng(seed);

        let spec_q = OutcomeModelSpec::new(quad, quad);
        let abar = exposure_map(&pb.h, &pb.int.a).unwrap();
        let d = qlearn::design(&pb.out.x, &abar, &spec_q).unwrap();
        let theta = DVector::from_fn(d.ncols(), |_, _| r.random_range(-1.0..1.0));
        let fd = fd_jacobian(|t| qlearn::estimating_mean(&d, &pb.out.y, t), &theta);
        sd = sd.max(rel_err(&fd, &-qlearn::bread(&d)));

        let spec = OutcomeModelSpec::new(quad, lin);
        let problem = AlearnProblem::new(&pb.out, &pb.int.a, &pb.h, &spec).unwrap();
        let z = lin.expand(&pb.int.x);
        let gamma = DVector::from_fn(z.ncols(), |_, _| r.random_range(-0.5..0.5));
        let theta = DVector::from_fn(problem.k0() + problem.ka(), |_, _| r.random_range(-1.0..1.0));
        let e = (&z * &gamma).map(logistic);
        let abar_hat = expected_exposure(&pb.h, &e).unwrap();
        let fd = fd_jacobian(|t| problem.estimating_mean(t, &abar_hat), &theta);
        sba = sba.max(rel_err(&fd, &problem.jacobian_theta(&abar_hat)));
        let fd = fd_jacobian(|g| problem.estimating_mean_at_gamma(&theta, &z, g).unwrap(), &gamma);
        sg = sg.max(rel_err(&fd, &problem.jacobian_gamma(&theta, &z, &e)));
    }
    let worst = sd.max(sba).max(sg);
    verdict(
        worst <= JACOBIAN_REL_TOL,
        format!("worst relative error: bread {sd:.2e}, theta block {sba:.2e}, gamma block {sg:.2e} (tol {JACOBIAN_REL_TOL:.0e}, 20 configs)"),
    )
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let config = SimConfig { n: 2000, j: 100, reps: 500, ..SimConfig::default() };
    let design = SimDesign::synthetic(&config).unwrap();
    let report = run_cells(&design, &standard_cells()).unwrap();
    let took = start.elapsed();
    let c = |name: &str| report.cell(name).unwrap();
    let qc = c("q_correct");
    let qm = c("q_misspec");
    let mb = c("a_misB_c");
    let a_cells = ["a_cc", "a_c_misP", "a_misB_c", "a_mis_mis"];
    let mut failed = Vec::new();
    if !(93.0..=97.0).contains(&qc.coverage) {
        failed.push("q_correct coverage".to_string());
    }
    for name in a_cells {
        if !(92.0..=99.0).contains(&c(name).coverage) {
            failed.push(format!("{name} coverage"));
        }
    }
    if qm.coverage >= 60.0 {
        failed.push("q_misspec coverage".into());
    }
    if mb.coverage - qm.coverage < 30.0 {
        failed.push("coverage gap".into());
    }
    if mb.bias >= qm.bias {
        failed.push("bias ordering".into());
    }
    if mb.rmse >= qm.rmse {
        failed.push("rmse ordering".into());
    }
    if took >= Duration::from_secs(600) {
        failed.push("runtime".into());
    }
    let table: Vec<String> = report
        .cells
        .iter()
        .map(|s| format!("{} cov {:.2} bias {:.3} rmse {:.3}", s.cell, s.coverage, s.bias, s.rmse))
        .collect();
    let failures = if failed.is_empty() { String::new() } else { format!("; failing clauses: {}", failed.join(", ")) };
    verdict(failed.is_empty(), format!("{} ({took:.0?}){failures}", table.join(" | ")))
}

fn criterion_6() -> Verdict {
    let config = SimConfig { n: 20000, j: 100, reps: 200, keep_records: true, ..SimConfig::default() };
    let design = SimDesign::synthetic(&config).unwrap();
    let cell = CellSpec {
        name: "a_misB_known".into(),
        estimator: Estimator::A,
        basis_f0: FeatureMap::linear(),
        basis_fa: FeatureMap::quadratic(),
        propensity: CellPropensity::Known,
    };
    let report = run_cells(&design, &[cell]).unwrap();
    let betas: Vec<&Vec<f64>> =
        report.records.as_ref().unwrap().iter().filter_map(|r| r.cells[0].as_ref().map(|o| &o.beta)).collect();
    let m = betas.len() as f64;
    let mut worst = (0usize, 0.0f64);
    let mut over = 0usize;
    for k in 0..design.beta0.len() {
        let diffs: Vec<f64> = betas.iter().map(|b| b[k] - design.beta0[k]).collect();
        let mean = diffs.iter().sum::<f64>() / m;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m - 1.0);
        let z = mean / (var / m).sqrt();
        if z.abs() > MC_Z {
            over += 1;
        }
        if z.abs() > worst.1.abs() {
            worst = (k, z);
        }
    }
    verdict(
        over == 0 && betas.len() == config.reps,
        format!(
            "{} of {} fits; worst coordinate {} at z = {:.2}; {over} of {} coordinates beyond {MC_Z} MC SE",
            betas.len(),
            config.reps,
            worst.0,
            worst.1,
            design.beta0.len()
        ),
    )
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let mut r = rng(7);
    let instance = |r: &mut ChaCha8Rng, j: usize| {
        let te = DVector::from_fn(j, |_, _| r.random_range(-3.0..1.0));
        let cost = DVector::from_fn(j, |_, _| r.random_range(0.1..5.0));
        let budget = r.random_range(0.0..1.0) * cost.sum();
        (te, cost, budget)
    };
    let mut opt_err = 0.0f64;
    for _ in 0..1000 {
        let j = r.random_range(1..=12);
        let (te, cost, budget): (DVector<f64>, DVector<f64>, f64) = instance(&mut r, j);
        let s = knapsack_policy(&te, &cost, budget, 1).unwrap();
        let best: f64 = enumerate_optimum(&te, &cost, budget).unwrap();
        opt_err = opt_err.max((s.value_rate - best).abs() / best.abs().max(1.0));
    }
    let (mut dominance, mut feasible) = (true, true);
    for _ in 0..1000 {
        let j = r.random_range(1..=400);
        let (te, cost, budget): (DVector<f64>, DVector<f64>, f64) = instance(&mut r, j);
        let bc = knapsack_policy(&te, &cost, budget, 1).unwrap();
        let tr = te_ranked_policy(&te, &cost, budget, 1).unwrap();
        dominance &= bc.value_rate <= tr.value_rate + KNAPSACK_TOL * tr.value_rate.abs();
        for s in [&bc, &tr] {
            feasible &= s.pi.dot(&cost) <= budget * (1.0 + KNAPSACK_TOL);
        }
    }
    let took = start.elapsed();
    verdict(
        opt_err <= KNAPSACK_TOL && dominance && feasible && took < Duration::from_secs(30),
        format!("optimality gap {opt_err:.2e} (tol {KNAPSACK_TOL:.0e}), dominance {dominance}, feasibility {feasible}, {took:.2?} (< 30 s)"),
    )
}

fn criterion_8() -> Verdict {
    let (mut worst_e, mut worst_mu) = (0.0f64, 0.0f64);
    let seeds: Vec<u64> = (0..10).map(|k| SimConfig::default().master_seed + k).collect();
    for &seed in &seeds {
        let config = SimConfig { master_seed: seed, reps: 1, ..SimConfig::default() };
        let d = SimDesign::synthetic(&config).unwrap();
        worst_e = worst_e.max((d.mean_propensity - 0.19).abs());
        worst_mu = worst_mu.max((d.mean_outcome - 0.29).abs());
    }
    verdict(
        worst_e <= 0.01 && worst_mu <= 0.001,
        format!(
            "worst |mean e - 0.19| = {worst_e:.2e} (tol 0.01), worst |mean mu - 0.29| = {worst_mu:.2e} (tol 0.001) over {} default designs",
            seeds.len()
        ),
    )
}

fn criterion_9() -> Verdict {
    let hand = nmae(&[10.0, 20.0], &[8.0, 25.0]).unwrap();
    let split = split_train_val(135, &SplitSpec::default()).unwrap();
    let forest = ForestParams { n_trees: 100, seed: 3, ..ForestParams::default() };

    let mut r = rng(10);
    let x = normal_matrix(&mut r, 135, 3);
    let c: Vec<f64> = (0..135).map(|i| 50.0 + 3.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 0.5 * x[(i, 2)]).collect();
    let linear = fit_cost_models(&x, &c, &SplitSpec::default(), &forest).unwrap().selected.kind();

    let mut r = rng(11);
    let x = DMatrix::from_fn(500, 3, |_, _| r.random_range(-1.0..1.0));
    let c: Vec<f64> = (0..500).map(|i| if x[(i, 0)] > 0.2 { 40.0 } else { 4.0 }).collect();
    let step = fit_cost_models(&x, &c, &SplitSpec::default(), &forest).unwrap().selected.kind();

    let (train, val) = (split.0.len(), split.1.len());
    verdict(
        hand == 0.225 && train == 108 && val == 27 && linear == CostModelKind::Linear && step == CostModelKind::Forest,
        format!("hand NMAE {hand}, split {train}/{val}, linear fixture -> {linear}, step fixture -> {step}"),
    )
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "json"))
        .collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect()
}

fn criterion_10() -> Verdict {
    use common::*;
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let b = sim_bundle(&data, 300, 40, true);
    let cfg = data.join("sim.json");
    fs::write(&cfg, r#"{"n": 400, "J": 40, "reps": 8, "master_seed": 99}"#).unwrap();
    // blank a few costs so impute-costs has work to do
    let partial = data.join("partial.csv");
    let text = fs::read_to_string(&b.interventions).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(k, l)| {
            if k > 0 && k % 4 == 0 {
                let mut f: Vec<&str> = l.split(',').collect();
                f[2] = "";
                f.join(",")
            } else {
                l.to_string()
            }
        })
        .collect();
    fs::write(&partial, lines.join("\n") + "\n").unwrap();

    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--config", p(&cfg)]),
        ("fit", vec!["fit", "--estimator", "a"]),
        ("effects", vec!["effects", "--trim", "0.05"]),
        ("policy", vec!["policy", "--budget-frac", "0.3"]),
        ("sweep", vec!["sweep"]),
        ("impute-costs", vec!["impute-costs", "--interventions", p(&partial), "--trees", "60", "--seed", "5"]),
    ];
    let mut mismatched = Vec::new();
    let mut compared = 0usize;
    for (name, args) in &commands {
        let mut seen: Option<Vec<(String, Vec<u8>)>> = None;
        for (k, threads) in ["1", "4", "4"].iter().enumerate() {
            let out = d.path().join(format!("{name}_{k}"));
            let mut full = vec!["--threads", threads];
            full.extend(args.iter().copied());
            if !matches!(*name, "simulate" | "impute-costs") {
                full.extend(["--outcomes", p(&b.outcomes), "--interventions", p(&b.interventions), "--h", p(&b.h)]);
            }
            full.extend(["--out-dir", p(&out)]);
            let res = run(&full);
            if !res.status.success() {
                mismatched.push(format!("{name} failed: {}", String::from_utf8_lossy(&res.stderr).trim()));
                break;
            }
            let files = outputs(&out);
            match &seen {
                None => seen = Some(files),
                Some(first) => {
                    compared += files.len();
                    if first != &files {
                        mismatched.push(name.to_string());
                    }
                }
            }
        }
    }
    verdict(
        mismatched.is_empty(),
        format!(
            "{} commands x 3 runs (threads 1, 4, 4), {compared} file comparisons{}",
            commands.len(),
            if mismatched.is_empty() { String::new() } else { format!("; differing: {}", mismatched.join(", ")) }
        ),
    )
}

fn main() {
    // `cargo test -- --list` and friends expect no work
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("exposure and total-effect oracle", criterion_1),
        ("Q-learning exactness", criterion_2),
        ("A-learning root and equivariance", criterion_3),
        ("Jacobian checks", criterion_4),
        ("simulation pattern at desk scale", criterion_5),
        ("double robustness with known propensities", criterion_6),
        ("knapsack optimality, dominance, feasibility", criterion_7),
        ("calibration", criterion_8),
        ("NMAE, split, and model selection", criterion_9),
        ("determinism across thread counts", criterion_10),
    ];
    let mut passed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        if v.pass {
            passed += 1;
        }
        println!("criterion {:>2} {}: {name}: {}", k + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {passed}/{} criteria pass", criteria.len());
    let strict = std::env::var("NETPOLICY_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < criteria.len() {
        std::process::exit(1);
    }
}
