//! Acceptance report: one PASS/FAIL line per criterion at the agreed tolerances.
//!
//! Statistical criteria are reported rather than asserted so the full report
//! is always printed. Set `AFTTEST_STRICT_ACCEPTANCE=1` to turn any FAIL into a
//! non-zero exit status.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use afttest::data::{ingest_csv, standardize_covariates, SurvivalDataset};
use afttest::estimate::{fit, gehan_loss, gehan_score_ns, EqType, EstMethod, GehanData};
use afttest::formula::parse_formula;
use afttest::gof::{observed_process, run_tests, terminal_process_at, TestConfig, TestSpec};
use afttest::residual::martingale_matrix;
use afttest::sim::{calibrate_censoring, generate_sample, rejection_rate, Misspec, SimConfig};
use afttest::solver::{dfsane, SolverConfig};
use common::*;

const M1: &str = "Surv(time, status) ~ bili + protime + albumin + age + edema + trt";
const M2: &str = "Surv(time, status) ~ log_bili + protime + albumin + age + edema + trt";
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn pbc(formula: &str) -> SurvivalDataset {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/pbc.csv");
    standardize_covariates(&ingest_csv(path, &parse_formula(formula).unwrap()).unwrap()).unwrap()
}

fn fmt_ps(ps: &[f64]) -> String {
    ps.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" ")
}

fn pbc_reproduction() -> Verdict {
    let (m1, m2) = (pbc(M1), pbc(M2));
    let (mut cov1, mut link1, mut cov2, mut omni2, mut slowest) = (vec![], vec![], vec![], vec![], 0.0f64);
    for seed in SEEDS {
        let cfg = TestConfig { npath: 200, seed, threads: Some(1), ..TestConfig::default() };
        let start = Instant::now();
        let r = run_tests(&m1, &[TestSpec::Covform(1), TestSpec::Link], &cfg, None).unwrap();
        slowest = slowest.max(start.elapsed().as_secs_f64());
        cov1.push(r[0].p_std_value);
        link1.push(r[1].p_std_value);
        let r = run_tests(&m2, &[TestSpec::Covform(1), TestSpec::Omnibus], &cfg, None).unwrap();
        cov2.push(r[0].p_std_value);
        omni2.push(r[1].p_std_value);
    }
    let at_least_four = |ps: &[f64], ok: fn(f64) -> bool| ps.iter().filter(|p| ok(**p)).count() >= 4;
    let checks = [
        ("M1 covform(bili) p_std<=0.05", at_least_four(&cov1, |p| p <= 0.05), &cov1),
        ("M1 link p_std<=0.05", at_least_four(&link1, |p| p <= 0.05), &link1),
        ("M2 covform(log_bili) p_std>=0.10", at_least_four(&cov2, |p| p >= 0.10), &cov2),
        ("M2 omnibus p_std>=0.10", at_least_four(&omni2, |p| p >= 0.10), &omni2),
    ];
    let runtime_ok = slowest <= 60.0;
    let detail = checks
        .iter()
        .map(|(name, ok, ps)| format!("{name} [{}] {}", fmt_ps(ps), if *ok { "ok" } else { "MISS" }))
        .chain(std::iter::once(format!("slowest single-thread run {slowest:.1}s (limit 60s)")))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(checks.iter().all(|c| c.1) && runtime_ok, detail)
}

fn empirical_size() -> Verdict {
    let cfg = SimConfig { n: 100, beta0: vec![1.0, 1.0], censor_rate: 0.3, npath: 100, replications: 200, alpha: 0.05, seed: 1, ..SimConfig::default() };
    let start = Instant::now();
    let rates = rejection_rate(&cfg, &[TestSpec::Omnibus, TestSpec::Link, TestSpec::Covform(1)]).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let band = |r: f64| (0.01..=0.10).contains(&r);
    let pass = band(rates[0].rate_std) && band(rates[2].rate_std) && secs <= 1800.0;
    let detail = format!(
        "std rates omnibus {:.3}, covform(1) {:.3} (band [0.01, 0.10]); link {:.3}; unstandardized omnibus {:.3}, link {:.3}, covform {:.3}; censoring {:.3}; {:.0}s",
        rates[0].rate_std, rates[2].rate_std, rates[1].rate_std, rates[0].rate, rates[1].rate, rates[2].rate, rates[0].achieved_censoring, secs
    );
    verdict(pass, detail)
}

fn power_ordering() -> Verdict {
    let base = SimConfig { n: 200, beta0: vec![1.0, 1.0], npath: 100, replications: 200, seed: 1, ..SimConfig::default() };
    let null = rejection_rate(&base, &[TestSpec::Covform(1)]).unwrap().remove(0);
    let alt_cfg = SimConfig { misspec: Misspec::Quadratic { q: 1, a: 2.0 }, ..base };
    let alt = rejection_rate(&alt_cfg, &[TestSpec::Covform(1)]).unwrap().remove(0);
    let pass = alt.rate_std > null.rate_std && alt.rate_std >= 0.50;
    verdict(pass, format!("covform(1) std rejection: quadratic a=2 {:.3} vs null {:.3} (need > null and >= 0.50)", alt.rate_std, null.rate_std))
}

fn oracle_equivalence() -> Verdict {
    let (mut worst_u, mut worst_m, mut worst_w) = (0.0f64, 0.0f64, 0.0f64);
    for inst in instances(100, 42) {
        let (d, n) = (&inst.d, inst.d.n());
        let fast = gehan_score_ns(&inst.beta, &GehanData::from_dataset(d));
        for (a, b) in fast.iter().zip(brute_gehan(d, &inst.beta)) {
            worst_u = worst_u.max((a - b).abs());
        }
        let rs = martingale_matrix(&inst.beta, d).unwrap();
        let e = residuals(d, &inst.beta);
        for (k, &t) in sorted(&e).iter().enumerate() {
            for i in 0..n {
                worst_m = worst_m.max((rs.mhat(i, k) - brute_martingale(&e, d.status(), i, t)).abs());
            }
        }
        let f = fixed_fit(&inst.beta);
        let omni = observed_process(TestSpec::Omnibus, &f, d).unwrap();
        let link = observed_process(TestSpec::Link, &f, d).unwrap();
        for (r, row) in brute_omnibus(d, &inst.beta).iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                worst_w = worst_w.max((omni.get(r, k) - v).abs());
            }
            worst_w = worst_w.max((link.get(r, 0) - row[n - 1]).abs());
        }
        for q in (1..=d.p()).filter(|&q| d.kinds()[q - 1] != afttest::data::ColumnKind::Binary) {
            let cov = observed_process(TestSpec::Covform(q), &f, d).unwrap();
            for (r, v) in brute_covform(d, &inst.beta, q).iter().enumerate() {
                worst_w = worst_w.max((cov.get(r, 0) - v).abs());
            }
        }
    }
    let pass = worst_u <= TOL && worst_m <= TOL && worst_w <= TOL;
    verdict(pass, format!("max abs error: gehan score {worst_u:.1e}, martingale matrix {worst_m:.1e}, observed processes {worst_w:.1e} (limit 1e-12)"))
}

fn identities() -> Verdict {
    let mut datasets: Vec<(String, SurvivalDataset)> = vec![("pbc M1".into(), pbc(M1)), ("pbc M2".into(), pbc(M2))];
    for seed in SEEDS {
        let cfg = SimConfig { n: 100, seed, ..SimConfig::default() };
        datasets.push((format!("sim {seed}"), generate_sample(&cfg, calibrate_censoring(&cfg), 0).unwrap()));
    }
    let (mut sum_m, mut at_max, mut last_row) = (0.0f64, 0.0f64, 0.0f64);
    for (_, d) in &datasets {
        for (est, eq) in [(EstMethod::Rr, EqType::Ns), (EstMethod::Rr, EqType::Is), (EstMethod::Ls, EqType::Ns)] {
            let f = fit(d, est, eq, &SolverConfig::default()).unwrap();
            let rs = martingale_matrix(&f.beta, d).unwrap();
            let n = d.n();
            for k in 0..n {
                sum_m = sum_m.max((0..n).map(|i| rs.mhat(i, k)).sum::<f64>().abs());
            }
            let zmax: Vec<f64> = (0..d.p()).map(|q| d.covariates().column(q).fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
            at_max = at_max.max(terminal_process_at(&zmax, &rs, d).abs());
            let omni = observed_process(TestSpec::Omnibus, &f, d).unwrap();
            let link = observed_process(TestSpec::Link, &f, d).unwrap();
            for r in 0..n {
                last_row = last_row.max((omni.get(r, n - 1) - link.get(r, 0)).abs());
            }
        }
    }
    let pass = sum_m <= 1e-10 && at_max <= 1e-10 && last_row <= 1e-12;
    verdict(
        pass,
        format!(
            "{} datasets x 3 estimators: max |sum M| {sum_m:.1e}, link at max anchor {at_max:.1e} (limit 1e-10), omnibus last time vs link {last_row:.1e} (limit 1e-12)",
            datasets.len()
        ),
    )
}

fn solver() -> Verdict {
    let cfg = SolverConfig::default();
    let a = [[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, -1.0, 2.0]];
    let b = [1.0, -2.0, 0.5];
    let affine = dfsane(|x| (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i]).collect(), &[0.0; 3], &cfg).unwrap();
    let expo = dfsane(
        |x| (0..x.len()).map(|i| if i == 0 { x[0].exp() - 1.0 } else { (i + 1) as f64 / 10.0 * (x[i].exp() + x[i - 1] - 1.0) }).collect(),
        &[0.01; 10],
        &cfg,
    )
    .unwrap();
    let systems_ok = [&affine, &expo].iter().all(|r| r.f_norm <= 1e-7 && r.iterations <= 500);

    let mut worst_gap = 0.0f64;
    for seed in 1..=3 {
        let sc = SimConfig { n: 80, beta0: vec![1.0], seed, ..SimConfig::default() };
        let d = generate_sample(&sc, calibrate_censoring(&sc), 0).unwrap();
        let beta = fit(&d, EstMethod::Rr, EqType::Ns, &cfg).unwrap().beta[0];
        let g = GehanData::from_dataset(&d);
        let grid: Vec<f64> = (0..=8000).map(|k| -1.0 + 4.0 * k as f64 / 8000.0).collect();
        let losses: Vec<f64> = grid.iter().map(|&b| gehan_loss(&[b], &g)).collect();
        let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        let argmins: Vec<f64> = grid.iter().zip(&losses).filter(|(_, l)| **l <= best + 1e-12).map(|(b, _)| *b).collect();
        let gap = if beta < argmins[0] { argmins[0] - beta } else { (beta - argmins[argmins.len() - 1]).max(0.0) };
        worst_gap = worst_gap.max(gap);
    }
    verdict(
        systems_ok && worst_gap <= 2e-3,
        format!(
            "affine |F|/sqrt(p) {:.1e} in {} its, exponential {:.1e} in {} its (limit 1e-7, 500); Gehan root vs grid search {worst_gap:.1e} (limit 2e-3)",
            affine.f_norm, affine.iterations, expo.f_norm, expo.iterations
        ),
    )
}

fn equivariance() -> Verdict {
    let sc = SimConfig { n: 100, seed: 11, ..SimConfig::default() };
    let d = generate_sample(&sc, calibrate_censoring(&sc), 0).unwrap();
    let cfg = TestConfig { npath: 100, npathsave: 0, seed: 9, threads: Some(1), ..TestConfig::default() };
    let tests = [TestSpec::Omnibus, TestSpec::Link, TestSpec::Covform(1), TestSpec::Covform(2)];
    let base = run_tests(&d, &tests, &cfg, None).unwrap();
    let beta0 = &base[0].fit.beta;
    let e0 = residuals(&d, beta0);
    let (mut beta_rel, mut resid, mut p_changed) = (0.0f64, 0.0f64, 0usize);
    for q in 0..d.p() {
        for c in [0.1, 10.0] {
            let dc = d.rescale_column(q, c);
            let r = run_tests(&dc, &tests, &cfg, None).unwrap();
            let beta = &r[0].fit.beta;
            for (k, (a, b)) in beta.iter().zip(beta0).enumerate() {
                let want = if k == q { b / c } else { *b };
                beta_rel = beta_rel.max((a - want).abs() / want.abs());
            }
            for (a, b) in residuals(&dc, beta).iter().zip(&e0) {
                resid = resid.max((a - b).abs());
            }
            p_changed += r.iter().zip(&base).filter(|(x, y)| (x.p_value, x.p_std_value) != (y.p_value, y.p_std_value)).count();
        }
    }
    verdict(
        beta_rel <= 1e-4 && resid <= 1e-6 && p_changed == 0,
        format!("beta rel err {beta_rel:.1e} (limit 1e-4), residual err {resid:.1e} (limit 1e-6), p-values changed in {p_changed} of 16 test runs"),
    )
}

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_afttest"));
    c.env_remove("AFTTEST_THREADS").env("RUST_LOG", "warn");
    c
}

fn data_path(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).display().to_string()
}

fn determinism(dir: &Path) -> Verdict {
    let run = |tag: &str, threads: &str| {
        let out = dir.join(format!("{tag}.json"));
        let o = cli()
            .args(["test", "--data", &data_path("pbc.csv"), "--formula", M1, "--test-type", "link", "--seed", "7", "--threads", threads, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "8"));
    verdict(a == b && a == c, format!("seed 7 twice: {}; threads 1 vs 8: {}", if a == b { "identical" } else { "DIFFER" }, if a == c { "identical" } else { "DIFFER" }))
}

fn cli_contract(dir: &Path) -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, pass: bool| {
        ok &= pass;
        notes.push(format!("{name} {}", if pass { "ok" } else { "MISS" }));
    };

    let help = String::from_utf8(cli().args(["test", "--help"]).output().unwrap().stdout).unwrap();
    check("npath default 200", help.contains("--npath <NPATH>") && help.contains("[default: 200]"));

    let doc_path = dir.join("raised.json");
    let o = cli()
        .args(["test", "--data", &data_path("pbc.csv"), "--formula", M2, "--test-type", "covform", "--cov-tested", "log_bili", "--npath", "5", "--npathsave", "3", "--out"])
        .arg(&doc_path)
        .output()
        .unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&doc_path).unwrap_or_default()).unwrap_or_default();
    check("npath 5 raised to 10", o.status.success() && doc["npath"] == 10 && doc["npath_effective"] == 10);

    let svg = dir.join("plot.svg");
    let o = cli().arg("plot").arg(&doc_path).args(["--npath", "50", "--out"]).arg(&svg).output().unwrap();
    let table = fs::read_to_string(dir.join("plot.csv")).unwrap_or_default();
    let mut series: Vec<&str> = table.lines().skip(1).filter_map(|l| l.split(',').nth(1)).collect();
    series.dedup();
    check("plot path cap", o.status.success() && series == ["observed", "path_1", "path_2", "path_3"]);

    let bogus = dir.join("bogus.json");
    fs::write(&bogus, "{\"beta\": [0.5]}").unwrap();
    let o = cli().arg("plot").arg(&bogus).arg("--out").arg(dir.join("x.svg")).output().unwrap();
    check("class error", o.status.code() == Some(1) && String::from_utf8_lossy(&o.stderr).contains("Must be afttest class"));

    verdict(ok, notes.join("; "))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn main() {
    let strict = std::env::var("AFTTEST_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Criterion> = vec![
        ("PBC qualitative reproduction", Box::new(pbc_reproduction)),
        ("empirical size", Box::new(empirical_size)),
        ("power ordering", Box::new(power_ordering)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("identities", Box::new(identities)),
        ("solver", Box::new(solver)),
        ("equivariance", Box::new(equivariance)),
        ("determinism", Box::new(|| determinism(dir.path()))),
        ("CLI contract", Box::new(|| cli_contract(dir.path()))),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "criterion {} {name}: {} ({:.0}s) {}",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
