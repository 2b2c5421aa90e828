//! Fast implementations checked against direct brute-force definitions.

mod common;

use afttest::data::SurvivalDataset;
use afttest::estimate::{fit, gehan_loss, gehan_score_ns, EqType, EstMethod, GehanData};
use afttest::gof::{observed_process, run_tests, terminal_process_at, TestConfig, TestSpec};
use afttest::residual::martingale_matrix;
use afttest::sim::{calibrate_censoring, generate_sample, SimConfig};
use afttest::solver::{dfsane, SolverConfig};
use common::*;

#[test]
fn gehan_score_matches_double_sum() {
    for inst in instances(100, 1) {
        let fast = gehan_score_ns(&inst.beta, &GehanData::from_dataset(&inst.d));
        let slow = brute_gehan(&inst.d, &inst.beta);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= TOL, "{fast:?} vs {slow:?}");
        }
    }
}

#[test]
fn gehan_loss_matches_double_sum() {
    for inst in instances(100, 5) {
        let e = residuals(&inst.d, &inst.beta);
        let n = inst.d.n();
        let slow: f64 = (0..n)
            .filter(|&i| inst.d.status()[i])
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (e[j] - e[i]).max(0.0))
            .sum::<f64>()
            / n as f64;
        let fast = gehan_loss(&inst.beta, &GehanData::from_dataset(&inst.d));
        assert!((fast - slow).abs() <= TOL * slow.abs().max(1.0), "{fast} vs {slow}");
    }
}

#[test]
fn martingale_matrix_matches_definition() {
    for inst in instances(100, 2) {
        let rs = martingale_matrix(&inst.beta, &inst.d).unwrap();
        let e = residuals(&inst.d, &inst.beta);
        let grid = sorted(&e);
        for (a, b) in rs.grid.iter().zip(&grid) {
            assert!((a - b).abs() <= TOL);
        }
        for i in 0..inst.d.n() {
            for (k, &t) in grid.iter().enumerate() {
                let slow = brute_martingale(&e, inst.d.status(), i, t);
                assert!((rs.mhat(i, k) - slow).abs() <= TOL, "i={i} k={k}: {} vs {slow}", rs.mhat(i, k));
            }
        }
    }
}

#[test]
fn observed_processes_match_triple_loops() {
    for inst in instances(100, 3) {
        let (d, n) = (&inst.d, inst.d.n());
        let f = fixed_fit(&inst.beta);
        let slow = brute_omnibus(d, &inst.beta);

        let omni = observed_process(TestSpec::Omnibus, &f, d).unwrap();
        assert_eq!((omni.rows, omni.cols), (n, n));
        let link = observed_process(TestSpec::Link, &f, d).unwrap();
        assert_eq!((link.rows, link.cols), (n, 1));
        for (r, row) in slow.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert!((omni.get(r, k) - v).abs() <= TOL);
            }
            // the link process is the omnibus process at the last time point
            assert!((link.get(r, 0) - row[n - 1]).abs() <= TOL);
        }

        for q in (1..=d.p()).filter(|&q| d.kinds()[q - 1] != afttest::data::ColumnKind::Binary) {
            let cov = observed_process(TestSpec::Covform(q), &f, d).unwrap();
            for (r, v) in brute_covform(d, &inst.beta, q).iter().enumerate() {
                assert!((cov.get(r, 0) - v).abs() <= TOL);
            }
        }
    }
}

fn simulated(n: usize, seed: u64) -> SurvivalDataset {
    let cfg = SimConfig { n, seed, ..SimConfig::default() };
    generate_sample(&cfg, calibrate_censoring(&cfg), 0).unwrap()
}

#[test]
fn residual_identities_hold_on_fitted_data() {
    for seed in 1..=5 {
        let d = simulated(60, seed);
        let f = fit(&d, EstMethod::Rr, EqType::Ns, &SolverConfig::default()).unwrap();
        let rs = martingale_matrix(&f.beta, &d).unwrap();
        let n = d.n();
        for k in 0..n {
            let total: f64 = (0..n).map(|i| rs.mhat(i, k)).sum();
            assert!(total.abs() <= 1e-10, "column {k} sums to {total}");
        }
        let zmax: Vec<f64> = (0..d.p()).map(|q| d.covariates().column(q).fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
        assert!(terminal_process_at(&zmax, &rs, &d).abs() <= 1e-10);

        let omni = observed_process(TestSpec::Omnibus, &f, &d).unwrap();
        let link = observed_process(TestSpec::Link, &f, &d).unwrap();
        for r in 0..n {
            assert!((omni.get(r, n - 1) - link.get(r, 0)).abs() <= 1e-12);
        }
    }
}

#[test]
fn covform_equals_link_with_one_covariate() {
    let cfg = SimConfig { n: 40, beta0: vec![1.0], seed: 4, ..SimConfig::default() };
    let d = generate_sample(&cfg, calibrate_censoring(&cfg), 0).unwrap();
    let f = fit(&d, EstMethod::Rr, EqType::Ns, &SolverConfig::default()).unwrap();
    let link = observed_process(TestSpec::Link, &f, &d).unwrap();
    let cov = observed_process(TestSpec::Covform(1), &f, &d).unwrap();
    for (a, b) in link.values.iter().zip(&cov.values) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn dfsane_solves_affine_and_exponential_systems() {
    let cfg = SolverConfig::default();
    let a = [[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 2.0]];
    let b = [1.0, -2.0, 0.5];
    let affine = |x: &[f64]| -> Vec<f64> { (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i]).collect() };
    let r = dfsane(affine, &[0.0; 3], &cfg).unwrap();
    assert!(r.f_norm <= 1e-7 && r.iterations <= 500, "{r:?}");

    // F_1 = e^{x_1} − 1, F_i = (i/10)(e^{x_i} + x_{i−1} − 1), root at the origin
    let p = 10;
    let expo = |x: &[f64]| -> Vec<f64> {
        (0..x.len()).map(|i| if i == 0 { x[0].exp() - 1.0 } else { (i + 1) as f64 / 10.0 * (x[i].exp() + x[i - 1] - 1.0) }).collect()
    };
    for start in [1.0 / (p * p) as f64, 0.5] {
        let r = dfsane(expo, &vec![start; p], &cfg).unwrap();
        assert!(r.f_norm <= 1e-7 && r.iterations <= 500, "{r:?}");
    }
}

#[test]
fn gehan_root_matches_grid_search() {
    for seed in 1..=3 {
        let cfg = SimConfig { n: 80, beta0: vec![1.0], seed, ..SimConfig::default() };
        let d = generate_sample(&cfg, calibrate_censoring(&cfg), 0).unwrap();
        let f = fit(&d, EstMethod::Rr, EqType::Ns, &SolverConfig::default()).unwrap();
        let g = GehanData::from_dataset(&d);
        // the Gehan loss is convex, so its grid minimizer brackets the root
        let grid: Vec<f64> = (0..=8000).map(|k| -1.0 + 4.0 * k as f64 / 8000.0).collect();
        let losses: Vec<f64> = grid.iter().map(|&b| gehan_loss(&[b], &g)).collect();
        let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let flat: Vec<f64> = grid.iter().zip(&losses).filter(|(_, l)| **l <= best + 1e-12).map(|(b, _)| *b).collect();
        let (lo, hi) = (flat[0], flat[flat.len() - 1]);
        let b = f.beta[0];
        assert!(b >= lo - 2e-3 && b <= hi + 2e-3, "root {b} outside minimizer set [{lo}, {hi}]");
    }
}

#[test]
fn rescaling_a_covariate_is_equivariant() {
    let d = simulated(100, 11);
    let cfg = TestConfig { npath: 40, npathsave: 0, seed: 9, threads: Some(1), ..TestConfig::default() };
    let tests = [TestSpec::Omnibus, TestSpec::Link, TestSpec::Covform(1), TestSpec::Covform(2)];
    let base_fit = fit(&d, EstMethod::Rr, EqType::Ns, &cfg.solver).unwrap();
    let base = run_tests(&d, &tests, &cfg, None).unwrap();
    let e0 = residuals(&d, &base_fit.beta);
    for q in 0..d.p() {
        for c in [0.1, 10.0] {
            let dc = d.rescale_column(q, c);
            let f = fit(&dc, EstMethod::Rr, EqType::Ns, &cfg.solver).unwrap();
            for (k, (a, b)) in f.beta.iter().zip(&base_fit.beta).enumerate() {
                let want = if k == q { b / c } else { *b };
                assert!((a - want).abs() <= 1e-4 * want.abs(), "q={q} c={c}: beta {a} vs {want}");
            }
            for (a, b) in residuals(&dc, &f.beta).iter().zip(&e0) {
                assert!((a - b).abs() <= 1e-6);
            }
            let r = run_tests(&dc, &tests, &cfg, None).unwrap();
            for (x, y) in r.iter().zip(&base) {
                assert_eq!((x.p_value, x.p_std_value), (y.p_value, y.p_std_value), "q={q} c={c} {:?}", x.test_type);
            }
        }
    }
}
