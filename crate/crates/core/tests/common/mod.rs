//! Brute-force reference implementations shared by the oracle and acceptance targets.
#![allow(dead_code)]

use afttest::data::SurvivalDataset;
use afttest::estimate::{EqType, EstMethod, FitResult};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-12;

pub struct Instance {
    pub d: SurvivalDataset,
    pub beta: Vec<f64>,
}

/// Small random datasets; covariates and times are drawn from coarse grids so
/// that tied residuals and tied covariate values occur regularly.
pub fn instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let n = rng.random_range(2..=8);
        let p = rng.random_range(1..=3);
        let coarse = rng.random_bool(0.5);
        let draw = |rng: &mut ChaCha8Rng| if coarse { rng.random_range(0..4) as f64 * 0.5 } else { rng.random_range(-1.0..1.0) };
        let z: Vec<f64> = (0..n * p).map(|_| draw(&mut rng)).collect();
        let time: Vec<f64> = (0..n).map(|_| if coarse { rng.random_range(1..5) as f64 } else { rng.random_range(0.1..5.0) }).collect();
        let status: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let beta: Vec<f64> = (0..p).map(|_| if coarse { rng.random_range(-2..=2) as f64 * 0.5 } else { rng.random_range(-1.0..1.0) }).collect();
        let names = (0..p).map(|q| format!("z{q}")).collect();
        if let Ok(d) = SurvivalDataset::new(time, status, Array2::from_shape_vec((n, p), z).unwrap(), names) {
            out.push(Instance { d, beta });
        }
    }
    out
}

pub fn residuals(d: &SurvivalDataset, beta: &[f64]) -> Vec<f64> {
    (0..d.n()).map(|i| d.time()[i].ln() + d.row(i).iter().zip(beta).map(|(z, b)| z * b).sum::<f64>()).collect()
}

pub fn brute_gehan(d: &SurvivalDataset, beta: &[f64]) -> Vec<f64> {
    let e = residuals(d, beta);
    let (n, p) = (d.n(), d.p());
    let mut u = vec![0.0; p];
    for i in 0..n {
        for j in 0..n {
            if d.status()[i] && e[j] >= e[i] {
                for (q, uq) in u.iter_mut().enumerate() {
                    *uq += d.row(i)[q] - d.row(j)[q];
                }
            }
        }
    }
    u.iter().map(|v| v / n as f64).collect()
}

/// `M̂_i(t) = Δ_i I(e_i ≤ t) − Σ_{l: Δ_l = 1, e_l ≤ min(e_i, t)} 1 / #{m : e_m ≥ e_l}`.
pub fn brute_martingale(e: &[f64], status: &[bool], i: usize, t: f64) -> f64 {
    let cap = e[i].min(t);
    let hazard: f64 = (0..e.len())
        .filter(|&l| status[l] && e[l] <= cap)
        .map(|l| 1.0 / e.iter().filter(|&&m| m >= e[l]).count() as f64)
        .sum();
    f64::from(u8::from(status[i] && e[i] <= t)) - hazard
}

pub fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn lexicographic_anchors(d: &SurvivalDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.n()).collect();
    idx.sort_by(|&a, &b| {
        for (x, y) in d.row(a).iter().zip(d.row(b)) {
            match x.partial_cmp(y).unwrap() {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        a.cmp(&b)
    });
    idx
}

pub fn fixed_fit(beta: &[f64]) -> FitResult {
    FitResult {
        beta: beta.to_vec(),
        beta_original: beta.to_vec(),
        est_method: EstMethod::Rr,
        eq_type: Some(EqType::Ns),
        solver: None,
        bj: None,
    }
}


/// Omnibus process by the triple loop: rows are anchors in lexicographic
/// order, columns are the sorted residual times.
pub fn brute_omnibus(d: &SurvivalDataset, beta: &[f64]) -> Vec<Vec<f64>> {
    let n = d.n();
    let e = residuals(d, beta);
    let grid = sorted(&e);
    let leq = |i: usize, j: usize| d.row(i).iter().zip(d.row(j)).all(|(a, b)| a <= b);
    lexicographic_anchors(d)
        .into_iter()
        .map(|j| {
            grid.iter()
                .map(|&t| (0..n).filter(|&i| leq(i, j)).map(|i| brute_martingale(&e, d.status(), i, t)).sum::<f64>() / (n as f64).sqrt())
                .collect()
        })
        .collect()
}

/// Functional-form process for 1-based covariate `q` over its sorted values.
pub fn brute_covform(d: &SurvivalDataset, beta: &[f64], q: usize) -> Vec<f64> {
    let n = d.n();
    let e = residuals(d, beta);
    let t_max = sorted(&e)[n - 1];
    let zq: Vec<f64> = (0..n).map(|i| d.row(i)[q - 1]).collect();
    sorted(&zq)
        .into_iter()
        .map(|z| (0..n).filter(|&i| zq[i] <= z).map(|i| brute_martingale(&e, d.status(), i, t_max)).sum::<f64>() / (n as f64).sqrt())
        .collect()
}
