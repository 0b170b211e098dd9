mod common;

use std::fs;

use common::*;
use nalgebra::{DMatrix, DVector};
use netpolicy::exposure::exposure_map;
use netpolicy::netdata::InterferenceMap;
use netpolicy_cli::commands::{read_effects, write_effects};
use tempfile::tempdir;

#[test]
fn zero_snr_is_rejected_by_field_name() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("c.json");
    fs::write(&cfg, r#"{"snr": 0}"#).unwrap();
    let out = run(&["simulate", "--config", p(&cfg), "--out-dir", p(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`snr`"));
}

#[test]
fn unknown_config_field_reports_position() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("c.json");
    fs::write(&cfg, "{\n  \"rep\": 3\n}").unwrap();
    let out = run(&["simulate", "--config", p(&cfg), "--out-dir", p(d.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rep") && err.contains("line 2"), "{err}");
}

#[test]
fn simulate_is_byte_identical_across_threads() {
    let d = tempdir().unwrap();
    let cfg = d.path().join("c.json");
    fs::write(&cfg, r#"{"n": 300, "J": 40, "reps": 2}"#).unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    run_ok(&["--threads", "1", "simulate", "--config", p(&cfg), "--out-dir", p(&a)]);
    run_ok(&["--threads", "4", "simulate", "--config", p(&cfg), "--out-dir", p(&b)]);
    for f in ["simulation.csv", "simulation.json", "simulation.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(data_rows(&a.join("simulation.csv")).len(), 6);
}

#[test]
fn noiseless_q_fit_recovers_coefficients() {
    let d = tempdir().unwrap();
    let mut r = 11u64;
    let mut next = move || {
        r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (r >> 11) as f64 / (1u64 << 53) as f64
    };
    let (n, j) = (80, 15);
    let x = DMatrix::from_fn(n, 2, |_, _| next() * 2.0 - 1.0);
    let z = DMatrix::from_fn(j, 1, |_, _| next());
    let a = DVector::from_fn(j, |k, _| (k % 3 == 0) as u8 as f64);
    let hm = DMatrix::from_fn(n, j, |_, _| next() * 3.0);
    let abar = exposure_map(&InterferenceMap::new(hm.clone()).unwrap(), &a).unwrap();
    let alpha = [0.5, -1.0, 2.0];
    let beta = [1.5, 0.25, -0.75];
    let y = DVector::from_fn(n, |i, _| {
        let f0 = alpha[0] + alpha[1] * x[(i, 0)] + alpha[2] * x[(i, 1)];
        let fa = beta[0] + beta[1] * x[(i, 0)] + beta[2] * x[(i, 1)];
        f0 + abar[i] * fa
    });
    let b = Bundle {
        outcomes: d.path().join("o.csv"),
        interventions: d.path().join("i.csv"),
        h: d.path().join("h.csv"),
    };
    write_outcomes(&b.outcomes, &x, &y, None);
    write_interventions(&b.interventions, &z, &a, None);
    write_dense(&b.h, &hm);
    let mut args = vec!["fit", "--estimator", "q"];
    args.extend(b.data_args(d.path()));
    run_ok(&args);
    let rows = data_rows(&d.path().join("coefficients.csv"));
    let est: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    let truth: Vec<f64> = alpha.iter().chain(&beta).copied().collect();
    assert_eq!(est.len(), 6);
    for (e, t) in est.iter().zip(&truth) {
        assert!((e - t).abs() < 1e-8, "{e} vs {t}");
    }
    assert_eq!(rows[0][1], "(Intercept)");
}

#[test]
fn zero_column_has_null_effect() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 120, 20, true);
    // cut unit 3 off from every outcome unit
    let text = fs::read_to_string(&b.h).unwrap();
    let zeroed: Vec<String> = text
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f[3] = "0";
            f.join(",")
        })
        .collect();
    fs::write(&b.h, zeroed.join("\n") + "\n").unwrap();
    let mut args = vec!["effects", "--estimator", "q"];
    args.extend(b.data_args(d.path()));
    let out = run_ok(&args);
    let rows = data_rows(&d.path().join("effects.csv"));
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[3][1..6], ["0", "0", "0", "0", "0.5"]);
    assert_eq!(rows[3][7], "true");
    assert!(String::from_utf8_lossy(&out.stdout).contains("p3"));
    assert!(fs::read_to_string(d.path().join("effects.txt")).unwrap().contains("multiplicity"));
}

#[test]
fn effects_file_round_trips() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 150, 25, true);
    let mut args = vec!["effects"];
    args.extend(b.data_args(d.path()));
    run_ok(&args);
    let first = d.path().join("effects.csv");
    let (ids, table) = read_effects(&first).unwrap();
    assert!(table.benefit_cost.is_some());
    let second = d.path().join("again.csv");
    write_effects(&second, &ids, &table).unwrap();
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn sweep_has_nine_rows_and_dominance() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 200, 30, true);
    let mut args = vec!["sweep"];
    args.extend(b.data_args(d.path()));
    run_ok(&args);
    let rows = data_rows(&d.path().join("sweep.csv"));
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert_eq!(r[10], "true");
        let spent: f64 = r[6].parse().unwrap();
        let budget: f64 = r[1].parse().unwrap();
        assert!(spent <= budget * (1.0 + 1e-9));
        assert!(r[4].parse::<f64>().is_ok(), "count column filled from person-years");
    }
}

#[test]
fn integral_policy_stays_in_budget() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 200, 30, true);
    let mut args = vec!["policy", "--budget-frac", "0.35", "--integral"];
    args.extend(b.data_args(d.path()));
    run_ok(&args);
    let pi: Vec<f64> = data_rows(&d.path().join("policy.csv")).iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(pi.iter().all(|v| *v == 0.0 || *v == 1.0));
    let s = &data_rows(&d.path().join("policy_summary.csv"))[0];
    let (budget, spent): (f64, f64) = (s[2].parse().unwrap(), s[3].parse().unwrap());
    assert!(spent <= budget);
    assert_eq!(s[8], "");
}

#[test]
fn policy_needs_costs_and_budget() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 100, 15, false);
    let mut args = vec!["policy", "--budget-frac", "0.5"];
    args.extend(b.data_args(d.path()));
    assert_eq!(run(&args).status.code(), Some(2));

    let b = sim_bundle(d.path(), 100, 15, true);
    let mut args = vec!["policy"];
    args.extend(b.data_args(d.path()));
    assert_eq!(run(&args).status.code(), Some(2));

    let mut args = vec!["policy", "--method", "unconstrained"];
    args.extend(b.data_args(d.path()));
    run_ok(&args);
}

#[test]
fn exit_codes_by_failure_kind() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 60, 10, true);
    let missing = d.path().join("nope.csv");
    let out = run(&[
        "fit", "--outcomes", p(&missing), "--interventions", p(&b.interventions), "--h", p(&b.h),
        "--out-dir", p(d.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));

    // map with the wrong number of columns
    let h = d.path().join("bad_h.csv");
    write_dense(&h, &DMatrix::from_element(60, 9, 1.0));
    let out = run(&[
        "fit", "--outcomes", p(&b.outcomes), "--interventions", p(&b.interventions), "--h", p(&h),
        "--out-dir", p(d.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // all-treated units leave the propensity model without a contrast
    let z = DMatrix::from_fn(10, 1, |j, _| j as f64);
    write_interventions(&b.interventions, &z, &DVector::from_element(10, 1.0), None);
    let mut args = vec!["fit"];
    args.extend(b.data_args(d.path()));
    let code = run(&args).status.code();
    assert!(matches!(code, Some(2) | Some(3)), "{code:?}");
}

#[test]
fn triplet_map_matches_dense() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 90, 12, true);
    let text = fs::read_to_string(&b.h).unwrap();
    let mut trip = String::from("i,j,value\n");
    for (i, l) in text.lines().enumerate() {
        for (j, v) in l.split(',').enumerate() {
            trip.push_str(&format!("{i},{j},{v}\n"));
        }
    }
    let th = d.path().join("h_trip.csv");
    fs::write(&th, trip).unwrap();
    let (a, t) = (d.path().join("a"), d.path().join("t"));
    let mut args = vec!["effects"];
    args.extend(b.data_args(&a));
    run_ok(&args);
    let tb = Bundle { h: th, ..b };
    let mut args = vec!["effects"];
    args.extend(tb.data_args(&t));
    run_ok(&args);
    assert_eq!(fs::read(a.join("effects.csv")).unwrap(), fs::read(t.join("effects.csv")).unwrap());
}

#[test]
fn trimming_drops_low_propensity_units() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 200, 40, true);
    let mut args = vec!["effects", "--trim", "0.1"];
    args.extend(b.data_args(d.path()));
    run_ok(&args);
    let rows = data_rows(&d.path().join("effects.csv"));
    assert_eq!(rows.len(), 36);
}

#[test]
fn impute_costs_fills_missing_and_feeds_policy() {
    let d = tempdir().unwrap();
    let b = sim_bundle(d.path(), 150, 60, true);
    // blank every fifth cost
    let text = fs::read_to_string(&b.interventions).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    for (k, l) in lines.iter_mut().enumerate().skip(1) {
        if k % 5 == 0 {
            let mut f: Vec<&str> = l.split(',').collect();
            f[2] = "";
            *l = f.join(",");
        }
    }
    fs::write(&b.interventions, lines.join("\n") + "\n").unwrap();
    let out_dir = d.path().join("imp");
    run_ok(&["impute-costs", "--interventions", p(&b.interventions), "--trees", "50", "--out-dir", p(&out_dir)]);
    let rows = data_rows(&out_dir.join("costs.csv"));
    assert_eq!(rows.len(), 60);
    assert_eq!(rows.iter().filter(|r| r[2] == "true").count(), 12);
    assert!(rows.iter().all(|r| r[1].parse::<f64>().unwrap() >= 0.0));
    assert_eq!(data_rows(&out_dir.join("cost_leaderboard.csv")).len(), 2);

    let filled = Bundle { interventions: out_dir.join("interventions_imputed.csv"), ..b };
    let mut args = vec!["policy", "--budget-frac", "0.5"];
    args.extend(filled.data_args(d.path()));
    run_ok(&args);
}
