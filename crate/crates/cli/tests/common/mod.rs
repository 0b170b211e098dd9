#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use netpolicy::simlab::{SimConfig, SimDesign};
use netpolicy_cli::io::num;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_netpolicy"));
    c.env_remove("NETPOLICY_THREADS").env_remove("RUST_LOG");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Paths of a written data bundle.
pub struct Bundle {
    pub outcomes: PathBuf,
    pub interventions: PathBuf,
    pub h: PathBuf,
}

impl Bundle {
    pub fn data_args<'a>(&'a self, out_dir: &'a Path) -> Vec<&'a str> {
        vec![
            "--outcomes",
            p(&self.outcomes),
            "--interventions",
            p(&self.interventions),
            "--h",
            p(&self.h),
            "--out-dir",
            p(out_dir),
        ]
    }
}

pub fn write_outcomes(path: &Path, x: &DMatrix<f64>, y: &DVector<f64>, py: Option<&DVector<f64>>) {
    let mut s = String::from("id,y");
    if py.is_some() {
        s.push_str(",person_years");
    }
    for k in 0..x.ncols() {
        s.push_str(&format!(",x{}", k + 1));
    }
    s.push('\n');
    for i in 0..x.nrows() {
        s.push_str(&format!("z{i},{}", num(y[i])));
        if let Some(py) = py {
            s.push_str(&format!(",{}", num(py[i])));
        }
        for k in 0..x.ncols() {
            s.push_str(&format!(",{}", num(x[(i, k)])));
        }
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

pub fn write_interventions(path: &Path, x: &DMatrix<f64>, a: &DVector<f64>, cost: Option<&[Option<f64>]>) {
    let mut s = String::from("id,a");
    if cost.is_some() {
        s.push_str(",cost");
    }
    for k in 0..x.ncols() {
        s.push_str(&format!(",w{}", k + 1));
    }
    s.push('\n');
    for j in 0..x.nrows() {
        s.push_str(&format!("p{j},{}", num(a[j])));
        if let Some(c) = cost {
            s.push_str(&format!(",{}", c[j].map(num).unwrap_or_default()));
        }
        for k in 0..x.ncols() {
            s.push_str(&format!(",{}", num(x[(j, k)])));
        }
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

pub fn write_dense(path: &Path, h: &DMatrix<f64>) {
    let mut s = String::new();
    for i in 0..h.nrows() {
        let row: Vec<String> = h.row(i).iter().map(|v| num(*v)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

/// Deterministic positive costs with plenty of ties broken by value.
pub fn costs(j: usize) -> Vec<Option<f64>> {
    (0..j).map(|k| Some(1.0 + ((k * 7) % 11) as f64 / 4.0)).collect()
}

/// One rep of the synthetic design at a small size, written as CSV.
pub fn sim_bundle(dir: &Path, n: usize, j: usize, with_costs: bool) -> Bundle {
    let config = SimConfig { n, j, reps: 1, ..SimConfig::default() };
    let design = SimDesign::synthetic(&config).unwrap();
    let data = design.draw(0).unwrap();
    let b = Bundle {
        outcomes: dir.join("outcomes.csv"),
        interventions: dir.join("interventions.csv"),
        h: dir.join("h.csv"),
    };
    let py = DVector::from_fn(n, |i, _| 1000.0 + (i % 13) as f64 * 250.0);
    write_outcomes(&b.outcomes, &data.outcomes.x, &data.outcomes.y, Some(&py));
    let c = costs(j);
    write_interventions(&b.interventions, &data.interventions.x, &data.interventions.a, with_costs.then_some(&c[..]));
    write_dense(&b.h, design.h.matrix());
    b
}

/// Data rows of a machine file, comments and header dropped.
pub fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
