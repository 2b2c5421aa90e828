//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::data::{ingest_table, recode_pbc, standardize_covariates, ColumnKind, SurvivalDataset, Table};
use crate::estimate::{fit, EqType, EstMethod};
use crate::formula::{parse_formula, resolve_covariate, CovariateKey};
use crate::gof::{run_afttest, LinkAnchor, MultiplierTerm, TestConfig, TestSpec, TestType};
use crate::plot::{emit_plot, parse_quantiles, DEFAULT_PLOT_NPATH, DEFAULT_QUANTILES};
use crate::report::ResultDocument;
use crate::sim::{rejection_rate, write_rates_csv, ErrorDist, Misspec, SimConfig};
use crate::solver::SolverConfig;

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "AFTTEST_THREADS";

#[derive(Debug, Parser)]
#[command(name = "afttest", version, about = "Goodness-of-fit tests for semiparametric AFT models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the AFT model and print the coefficients as JSON.
    Fit(FitArgs),
    /// Fit the model and run a supremum test; writes a result document.
    Test(TestArgs),
    /// Plot a stored result document as SVG with a companion CSV.
    Plot(PlotArgs),
    /// Monte Carlo rejection rates on synthetic data, as CSV.
    Simulate(SimArgs),
    /// Recode the raw PBC table (treatment 0/1, death indicator, log bilirubin).
    RecodePbc(RecodeArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    formula: String,
    #[arg(long, default_value = "rr")]
    est_method: EstMethod,
    #[arg(long, default_value = "ns")]
    eq_type: EqType,
    /// Treat these covariates as binary (comma-separated names).
    #[arg(long, value_delimiter = ',')]
    binary: Vec<String>,
    /// Treat these covariates as continuous (comma-separated names).
    #[arg(long, value_delimiter = ',')]
    continuous: Vec<String>,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value = "omnibus")]
    test_type: TestType,
    /// Covariate for the functional form test: a name or a 1-based index.
    #[arg(long, default_value = "1")]
    cov_tested: String,
    #[arg(long, default_value_t = 200)]
    npath: usize,
    #[arg(long, default_value_t = 50)]
    npathsave: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; falls back to AFTTEST_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Multiplier term of the resampled process.
    #[arg(long, default_value = "compensated", value_parser = parse_term)]
    multiplier_term: MultiplierTerm,
    /// Link test indicator: covariates (componentwise) or fitted-index.
    #[arg(long, default_value = "covariates", value_parser = parse_link_anchor)]
    link_anchor: LinkAnchor,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    result: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PLOT_NPATH)]
    npath: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    std: bool,
    /// Five anchor-rank quantiles for omnibus panels, as fractions or percentages.
    #[arg(long)]
    quantiles: Option<String>,
    /// SVG output; the CSV is written next to it with a `.csv` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// True coefficients (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    beta0: Vec<f64>,
    /// normal or extreme-value
    #[arg(long, default_value = "normal")]
    error: String,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    censor_rate: f64,
    /// none, quadratic or loglink
    #[arg(long, default_value = "none")]
    misspec: String,
    /// 1-based covariate of the quadratic term.
    #[arg(long, default_value_t = 1)]
    misspec_q: usize,
    #[arg(long, default_value_t = 1.0)]
    misspec_a: f64,
    #[arg(long, default_value_t = 200)]
    replications: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 100)]
    npath: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "ns")]
    eq_type: EqType,
    /// Tests to run: omnibus, link, covform:<q> (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "omnibus,link,covform:1")]
    tests: Vec<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// CSV output; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

fn parse_term(s: &str) -> Result<MultiplierTerm, String> {
    match s {
        "compensated" => Ok(MultiplierTerm::Compensated),
        "plain" => Ok(MultiplierTerm::Plain),
        _ => Err(format!("unknown multiplier term '{s}' (expected compensated or plain)")),
    }
}

fn parse_link_anchor(s: &str) -> Result<LinkAnchor, String> {
    match s {
        "covariates" => Ok(LinkAnchor::Covariates),
        "fitted-index" => Ok(LinkAnchor::FittedIndex),
        _ => Err(format!("unknown link anchor '{s}' (expected covariates or fitted-index)")),
    }
}

/// Error carrying the process exit code.
struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl ToString) -> Failure {
    Failure { code: 2, message: message.to_string() }
}

fn runtime(message: impl ToString) -> Failure {
    Failure { code: 1, message: message.to_string() }
}

/// Runs the CLI and returns the exit code: 0 on success, 1 on runtime errors,
/// 2 on usage errors.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Test(a) => cmd_test(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::RecodePbc(a) => cmd_recode(&a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load(a: &FitArgs) -> Result<(crate::formula::ModelSpec, SurvivalDataset), Failure> {
    let spec = parse_formula(&a.formula).map_err(usage)?;
    let table = Table::read_csv(&a.data).map_err(runtime)?;
    let mut d = ingest_table(&table, &spec).map_err(runtime)?;
    for (names, kind) in [(&a.binary, ColumnKind::Binary), (&a.continuous, ColumnKind::Continuous)] {
        for name in names {
            d.set_kind(name, kind).map_err(usage)?;
        }
    }
    let d = standardize_covariates(&d).map_err(runtime)?;
    log::info!("{} complete cases", d.n());
    Ok((spec, d))
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let (spec, d) = load(a)?;
    let r = fit(&d, a.est_method, a.eq_type, &SolverConfig::default()).map_err(runtime)?;
    let out = json!({
        "formula": spec.to_string(),
        "n": d.n(),
        "names": d.names(),
        "beta": r.beta_original,
        "estMethod": r.est_method,
        "eqType": r.eq_type,
        "converged": r.solver.as_ref().map(|s| s.converged),
        "f_norm": r.solver.as_ref().map(|s| s.f_norm),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(())
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().map(Some).map_err(|_| usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))
        }
        _ => Ok(None),
    }
}

/// Canonical echo of a test invocation. Thread count and output path are left
/// out so that the document depends only on the data and the statistical settings.
fn test_call(a: &TestArgs, cov: Option<&str>) -> String {
    let mut call = format!(
        "afttest test --data {} --formula \"{}\" --est-method {} --eq-type {} --test-type {}",
        a.fit.data.display(),
        a.fit.formula,
        a.fit.est_method,
        a.fit.eq_type,
        a.test_type
    );
    if let Some(c) = cov {
        call.push_str(&format!(" --cov-tested {c}"));
    }
    call.push_str(&format!(" --npath {} --npathsave {} --seed {}", a.npath, a.npathsave, a.seed));
    if a.multiplier_term != MultiplierTerm::default() {
        call.push_str(" --multiplier-term plain");
    }
    if a.link_anchor != LinkAnchor::default() {
        call.push_str(" --link-anchor fitted-index");
    }
    call
}

fn cmd_test(a: &TestArgs) -> Result<(), Failure> {
    let (spec, d) = load(&a.fit)?;
    let cov_tested = resolve_covariate(&spec, &CovariateKey::from(a.cov_tested.as_str())).map_err(usage)?;
    if a.npath < crate::gof::MIN_NPATH {
        log::warn!("npath {} raised to {}", a.npath, crate::gof::MIN_NPATH);
    }
    let cfg = TestConfig {
        test_type: a.test_type,
        cov_tested,
        est_method: a.fit.est_method,
        eq_type: a.fit.eq_type,
        npath: a.npath,
        npathsave: a.npathsave,
        seed: a.seed,
        threads: resolve_threads(a.threads)?,
        multiplier_term: a.multiplier_term,
        link_anchor: a.link_anchor,
        ..TestConfig::default()
    };
    if let TestSpec::Covform(q) = TestSpec::new(cfg.test_type, cfg.cov_tested) {
        if d.kinds()[q - 1] == ColumnKind::Binary {
            return Err(usage(format!("functional form test is not supported for binary covariate '{}'", d.names()[q - 1])));
        }
    }
    let r = run_afttest(&d, &cfg, None).map_err(runtime)?;
    let cov_name = (a.test_type == TestType::Covform).then(|| d.names()[cov_tested - 1].clone());
    let doc = ResultDocument::new(&r, &d, test_call(a, cov_name.as_deref()));
    fs::write(&a.out, doc.to_json()).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    println!("p_value {} p_std_value {} (npath {}, effective {})", r.p_value, r.p_std_value, r.npath, r.npath_effective);
    Ok(())
}

fn csv_sibling(svg: &Path) -> PathBuf {
    svg.with_extension("csv")
}

fn cmd_plot(a: &PlotArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.result).map_err(|e| runtime(format!("{}: {e}", a.result.display())))?;
    let doc = ResultDocument::from_json(&text).map_err(runtime)?;
    let quantiles = match &a.quantiles {
        Some(s) => parse_quantiles(s).map_err(usage)?,
        None => DEFAULT_QUANTILES.to_vec(),
    };
    if a.npath > doc.apprx_process.len() {
        log::info!("plot npath {} capped at the {} stored paths", a.npath, doc.apprx_process.len());
    }
    let (svg, csv) = emit_plot(&doc, a.npath, a.std, &quantiles).map_err(usage)?;
    fs::write(&a.out, svg).map_err(runtime)?;
    fs::write(csv_sibling(&a.out), csv).map_err(runtime)?;
    Ok(())
}

fn parse_tests(items: &[String]) -> Result<Vec<TestSpec>, Failure> {
    items
        .iter()
        .map(|t| match t.trim() {
            "omnibus" => Ok(TestSpec::Omnibus),
            "link" => Ok(TestSpec::Link),
            "link-index" => Ok(TestSpec::LinkIndex),
            "covform" => Ok(TestSpec::Covform(1)),
            other => other
                .strip_prefix("covform:")
                .and_then(|q| q.parse().ok())
                .map(TestSpec::Covform)
                .ok_or_else(|| usage(format!("unknown test '{other}'"))),
        })
        .collect()
}

fn cmd_simulate(a: &SimArgs) -> Result<(), Failure> {
    let error_dist = match a.error.as_str() {
        "normal" => ErrorDist::Normal { sigma: a.sigma },
        "extreme-value" => ErrorDist::ExtremeValue,
        e => return Err(usage(format!("unknown error distribution '{e}'"))),
    };
    let misspec = match a.misspec.as_str() {
        "none" => Misspec::None,
        "quadratic" => Misspec::Quadratic { q: a.misspec_q, a: a.misspec_a },
        "loglink" => Misspec::LogLink { a: a.misspec_a },
        m => return Err(usage(format!("unknown misspecification '{m}'"))),
    };
    let cfg = SimConfig {
        n: a.n,
        beta0: a.beta0.clone(),
        error_dist,
        censor_rate: a.censor_rate,
        misspec,
        replications: a.replications,
        alpha: a.alpha,
        npath: a.npath,
        seed: a.seed,
        eq_type: a.eq_type,
        ..SimConfig::default()
    };
    cfg.validate().map_err(usage)?;
    let tests = parse_tests(&a.tests)?;
    let threads = resolve_threads(a.threads)?;
    let rates = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(runtime)?
            .install(|| rejection_rate(&cfg, &tests)),
        None => rejection_rate(&cfg, &tests),
    }
    .map_err(runtime)?;
    let mut buf = Vec::new();
    write_rates_csv(&cfg, &rates, &mut buf).map_err(runtime)?;
    match &a.out {
        Some(p) => fs::write(p, buf).map_err(runtime)?,
        None => std::io::stdout().write_all(&buf).map_err(runtime)?,
    }
    Ok(())
}

fn cmd_recode(a: &RecodeArgs) -> Result<(), Failure> {
    let raw = Table::read_csv(&a.input).map_err(runtime)?;
    let recoded = recode_pbc(&raw).map_err(runtime)?;
    let file = fs::File::create(&a.output).map_err(runtime)?;
    recoded.write_csv(file).map_err(runtime)?;
    Ok(())
}
