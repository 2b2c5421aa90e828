//! Goodness-of-fit diagnostics for semiparametric accelerated failure time models.
//!
//! The model is `log T = -Zᵀβ + ε` with an unspecified error distribution. After
//! fitting `β` (rank-based Gehan or Buckley–James least squares), adequacy is
//! checked with cumulative sums of martingale residuals. Their null distribution
//! is approximated by multiplier resampling, and p-values come from
//! Kolmogorov-type supremum statistics.
//!
//! ```no_run
//! use afttest::prelude::*;
//!
//! let spec = parse_formula("Surv(time, status) ~ log(bili) + protime + albumin").unwrap();
//! let data = standardize_covariates(&ingest_csv("pbc.csv", &spec).unwrap()).unwrap();
//! let cfg = TestConfig { test_type: TestType::Link, npath: 200, seed: 1, ..TestConfig::default() };
//! let result = run_afttest(&data, &cfg, None).unwrap();
//! println!("p = {}, standardized p = {}", result.p_value, result.p_std_value);
//! ```

pub mod cli;
pub mod data;
pub mod estimate;
pub mod formula;
pub mod gof;
pub mod plot;
pub mod report;
pub mod residual;
pub mod sim;
pub mod solver;

pub mod prelude {
    pub use crate::data::{ingest_csv, ingest_table, recode_pbc, standardize_covariates, ColumnKind, SurvivalDataset, Table};
    pub use crate::estimate::{fit, fit_ls, fit_rank, EqType, EstMethod, FitResult};
    pub use crate::formula::{parse_formula, resolve_covariate, CovariateKey, ModelSpec};
    pub use crate::gof::{run_afttest, GofTestResult, TestConfig, TestType};
    pub use crate::solver::{dfsane, SolverConfig, SolverResult};
}
