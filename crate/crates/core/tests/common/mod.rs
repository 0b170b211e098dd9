#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use netpolicy::netdata::{InterferenceMap, InterventionTable, OutcomeTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Nonnegative map with roughly a fifth of the entries zero.
pub fn sparse_map(rng: &mut ChaCha8Rng, n: usize, j: usize) -> InterferenceMap<f64> {
    let h = DMatrix::from_fn(n, j, |_, _| {
        if rng.random::<f64>() < 0.2 { 0.0 } else { 2.0 * rng.random::<f64>() }
    });
    InterferenceMap::new(h).unwrap()
}

/// Binary treatments with both classes present.
pub fn treatments(rng: &mut ChaCha8Rng, j: usize, rate: f64) -> DVector<f64> {
    loop {
        let a = DVector::from_fn(j, |_, _| if rng.random::<f64>() < rate { 1.0 } else { 0.0 });
        let s = a.sum();
        if s > 0.0 && s < j as f64 {
            return a;
        }
    }
}

pub struct Problem {
    pub out: OutcomeTable<f64>,
    pub int: InterventionTable<f64>,
    pub h: InterferenceMap<f64>,
}

pub fn random_problem(seed: u64, n: usize, j: usize, p: usize, q: usize) -> Problem {
    let mut r = rng(seed);
    let x = normal_matrix(&mut r, n, p);
    let y = normal_vector(&mut r, n);
    let xi = normal_matrix(&mut r, j, q);
    let a = treatments(&mut r, j, 0.4);
    let h = sparse_map(&mut r, n, j);
    Problem {
        out: OutcomeTable::new(x, y, None).unwrap(),
        int: InterventionTable::new(xi, a, None).unwrap(),
        h,
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let h = step * x[k].abs().max(1.0);
        let mut up = x.clone();
        let mut dn = x.clone();
        up[k] += h;
        dn[k] -= h;
        let col = (f(&up) - f(&dn)) / (2.0 * h);
        jac.set_column(k, &col);
    }
    jac
}

/// `‖a − b‖_max / max(‖b‖_max, floor)`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    let diff = (a - b).abs().max();
    diff / b.abs().max().max(floor)
}
