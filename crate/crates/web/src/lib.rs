//! Browser bindings for the static demo page in `www/`.
//!
//! Every entry point takes plain arguments and returns a JSON string. Errors
//! are returned as `{"error": "..."}` so the page can show them inline.

use afttest::data::{ingest_table, ColumnKind, Table};
use afttest::estimate::{EqType, EstMethod};
use afttest::formula::{parse_formula, resolve_covariate, CovariateKey};
use afttest::gof::{run_afttest, LinkAnchor, TestConfig, TestType};
use afttest::plot::{build_panels, DEFAULT_QUANTILES};
use afttest::report::ResultDocument;
use afttest::sim::{calibrate_censoring, generate_sample, ErrorDist, Misspec, SimConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const PBC_CSV: &str = include_str!("../../core/data/pbc.csv");

/// Paths drawn on the page; the browser canvas gets slow beyond this.
const SHOWN_PATHS: usize = 40;

#[derive(Serialize)]
struct PanelJson {
    title: String,
    x_label: String,
    x: Vec<f64>,
    observed: Vec<f64>,
    paths: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TestJson {
    test_type: TestType,
    p_value: f64,
    p_std_value: f64,
    npath_effective: usize,
    n: usize,
    beta: Vec<f64>,
    names: Vec<String>,
    panels: Vec<PanelJson>,
}

#[derive(Serialize)]
struct ErrorJson {
    error: String,
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v),
        Err(error) => serde_json::to_string(&ErrorJson { error }),
    }
    .unwrap_or_else(|e| format!(r#"{{"error":"{e}"}}"#))
}

fn parse_test_type(s: &str) -> Result<TestType, String> {
    s.parse::<TestType>()
}

fn run_and_render(
    d: &afttest::data::SurvivalDataset,
    test_type: TestType,
    cov_tested: usize,
    npath: usize,
    seed: u64,
    standardized: bool,
    link_anchor: LinkAnchor,
) -> Result<TestJson, String> {
    let cfg = TestConfig {
        test_type,
        cov_tested,
        est_method: EstMethod::Rr,
        eq_type: EqType::Ns,
        npath,
        npathsave: SHOWN_PATHS,
        seed,
        threads: None,
        link_anchor,
        ..TestConfig::default()
    };
    let r = run_afttest(d, &cfg, None).map_err(|e| e.to_string())?;
    let doc = ResultDocument::new(&r, d, "browser demo");
    let panels = build_panels(&doc, SHOWN_PATHS, standardized, &DEFAULT_QUANTILES)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|p| {
            let x = p.series.first().map(|s| s.points.iter().map(|pt| pt.0).collect()).unwrap_or_default();
            let mut ys = p.series.into_iter().map(|s| s.points.into_iter().map(|(_, y)| y).collect::<Vec<_>>());
            let observed = ys.next().unwrap_or_default();
            PanelJson { title: p.title, x_label: p.x_label, x, observed, paths: ys.collect() }
        })
        .collect();
    Ok(TestJson {
        test_type,
        p_value: r.p_value,
        p_std_value: r.p_std_value,
        npath_effective: r.npath_effective,
        n: d.n(),
        beta: doc.beta,
        names: d.names().to_vec(),
        panels,
    })
}

/// Runs a test on CSV text with a `Surv(time, status) ~ ...` formula.
/// `cov_tested` is a covariate name or 1-based index (functional form test only).
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn test_csv(
    csv_text: &str,
    formula: &str,
    test_type: &str,
    cov_tested: &str,
    npath: usize,
    seed: u64,
    standardized: bool,
    fitted_index_link: bool,
) -> String {
    to_json((|| {
        let spec = parse_formula(formula).map_err(|e| e.to_string())?;
        let table = Table::from_reader(csv_text.as_bytes()).map_err(|e| e.to_string())?;
        let d = ingest_table(&table, &spec).map_err(|e| e.to_string())?;
        let test_type = parse_test_type(test_type)?;
        let key = match cov_tested.trim().parse::<i64>() {
            Ok(q) => CovariateKey::Index(q),
            Err(_) => CovariateKey::Name(cov_tested.trim().to_string()),
        };
        let q = resolve_covariate(&spec, &key).map_err(|e| e.to_string())?;
        if test_type == TestType::Covform && d.kinds()[q - 1] == ColumnKind::Binary {
            return Err(format!("functional form test is not supported for binary covariate '{}'", d.names()[q - 1]));
        }
        let anchor = if fitted_index_link { LinkAnchor::FittedIndex } else { LinkAnchor::Covariates };
        run_and_render(&d, test_type, q, npath, seed, standardized, anchor)
    })())
}

/// The bundled PBC table (complete cases, with a `log_bili` column) as CSV text.
#[wasm_bindgen]
pub fn pbc_csv() -> String {
    PBC_CSV.to_string()
}

/// Simulates one AFT sample (Uniform(0,1) covariates, N(0,1) errors,
/// uniform censoring) and tests it.
///
/// `misspec` is `none`, `quadratic` (adds `strength · Z₁²`) or `loglink`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_and_test(
    n: usize,
    censor_rate: f64,
    misspec: &str,
    strength: f64,
    test_type: &str,
    npath: usize,
    seed: u64,
    standardized: bool,
) -> String {
    to_json((|| {
        let misspec = match misspec {
            "none" => Misspec::None,
            "quadratic" => Misspec::Quadratic { q: 1, a: strength },
            "loglink" => Misspec::LogLink { a: strength },
            other => return Err(format!("unknown misspecification '{other}'")),
        };
        let cfg = SimConfig {
            n,
            censor_rate,
            misspec,
            error_dist: ErrorDist::Normal { sigma: 1.0 },
            seed,
            ..SimConfig::default()
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let c = calibrate_censoring(&cfg);
        let d = generate_sample(&cfg, c, 0).map_err(|e| e.to_string())?;
        run_and_render(&d, parse_test_type(test_type)?, 1, npath, seed, standardized, LinkAnchor::Covariates)
    })())
}
