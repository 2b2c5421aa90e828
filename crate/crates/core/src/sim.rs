//! Synthetic AFT data with optional misspecification, and Monte Carlo
//! rejection rates of the supremum tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SurvivalDataset};
use crate::estimate::{EqType, EstMethod};
use crate::gof::{run_tests, GofError, MultiplierTerm, Multipliers, PlugInTerm, TestConfig, TestSpec};
use crate::solver::SolverConfig;

/// Draws used to calibrate the censoring bound.
pub const PILOT_DRAWS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Gof(#[from] GofError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorDist {
    Normal { sigma: f64 },
    /// Log of a unit exponential (minimum extreme value).
    ExtremeValue,
}

impl ErrorDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            ErrorDist::Normal { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            ErrorDist::ExtremeValue => rng.sample::<f64, _>(Exp1).ln(),
        }
    }
}

/// Departure from the linear predictor `η = Zᵀβ0` in `log T = −h(Z) + ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Misspec {
    None,
    /// `h = η + a Z_q²` with 1-based `q`.
    Quadratic { q: usize, a: f64 },
    /// `h = log(1 + a e^η) / a`, a smooth monotone distortion of the index.
    LogLink { a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub beta0: Vec<f64>,
    pub error_dist: ErrorDist,
    /// Target censoring fraction; `C ~ Uniform(0, c)` on the time scale with
    /// `c` calibrated to it. Zero disables censoring.
    pub censor_rate: f64,
    pub misspec: Misspec,
    pub replications: usize,
    pub alpha: f64,
    pub npath: usize,
    pub seed: u64,
    pub eq_type: EqType,
    pub multiplier_term: MultiplierTerm,
    pub multipliers: Multipliers,
    pub plug_in: PlugInTerm,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            beta0: vec![1.0, 1.0],
            error_dist: ErrorDist::Normal { sigma: 1.0 },
            censor_rate: 0.3,
            misspec: Misspec::None,
            replications: 200,
            alpha: 0.05,
            npath: 100,
            seed: 1,
            eq_type: EqType::Ns,
            multiplier_term: MultiplierTerm::default(),
            multipliers: Multipliers::default(),
            plug_in: PlugInTerm::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.n < 20 {
            return bad("n must be at least 20");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.beta0.is_empty() {
            return bad("beta0 must have at least one entry");
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return bad("censor_rate must lie in [0, 1)");
        }
        if let ErrorDist::Normal { sigma } = self.error_dist {
            if !(sigma > 0.0) {
                return bad("sigma must be positive");
            }
        }
        match self.misspec {
            Misspec::Quadratic { q, .. } if q == 0 || q > self.beta0.len() => bad("quadratic term index out of range"),
            Misspec::LogLink { a } if !(a > 0.0) => bad("log-link parameter must be positive"),
            _ => Ok(()),
        }
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    fn predictor(&self, z: &[f64]) -> f64 {
        let eta: f64 = z.iter().zip(&self.beta0).map(|(a, b)| a * b).sum();
        match self.misspec {
            Misspec::None => eta,
            Misspec::Quadratic { q, a } => eta + a * z[q - 1] * z[q - 1],
            Misspec::LogLink { a } => (a * eta.exp()).ln_1p() / a,
        }
    }

    /// One draw of covariates and uncensored failure time.
    fn draw_subject(&self, rng: &mut ChaCha8Rng, z: &mut [f64]) -> f64 {
        for v in z.iter_mut() {
            *v = rng.random::<f64>();
        }
        let eps = self.error_dist.sample(rng);
        (eps - self.predictor(z)).exp()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Expected censoring fraction of pilot failure times under `C ~ Uniform(0, c)`,
/// using `P(C < t) = min(t, c) / c` per draw.
fn expected_censoring(times: &[f64], c: f64) -> f64 {
    times.iter().map(|&t| t.min(c) / c).sum::<f64>() / times.len() as f64
}

/// Upper bound `c` of the uniform censoring law giving the target censoring
/// rate over a pilot sample; `∞` when the target is zero.
pub fn calibrate_censoring(cfg: &SimConfig) -> f64 {
    if cfg.censor_rate <= 0.0 {
        return f64::INFINITY;
    }
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let mut z = vec![0.0; cfg.p()];
    let times: Vec<f64> = (0..PILOT_DRAWS).map(|_| cfg.draw_subject(&mut rng, &mut z)).collect();
    // expected censoring decreases in c
    let (mut lo, mut hi) = (1e-12f64, 1.0f64);
    while expected_censoring(&times, hi) > cfg.censor_rate {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if expected_censoring(&times, mid) > cfg.censor_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    hi
}

/// Generates replication `rep` with censoring bound `c`.
pub fn generate_sample(cfg: &SimConfig, c: f64, rep: usize) -> Result<SurvivalDataset, SimError> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p());
    let mut rng = stream_rng(cfg.seed, rep as u64);
    let mut z = Array2::<f64>::zeros((n, p));
    let mut time = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        let t = cfg.draw_subject(&mut rng, &mut row);
        z.row_mut(i).iter_mut().zip(&row).for_each(|(a, b)| *a = *b);
        let cens = if c.is_finite() { c * rng.random::<f64>() } else { f64::INFINITY };
        // a zero censoring draw has probability zero but would break log-time
        let cens = cens.max(f64::MIN_POSITIVE);
        time.push(t.min(cens));
        status.push(t <= cens);
    }
    let names = (1..=p).map(|q| format!("z{q}")).collect();
    Ok(SurvivalDataset::new(time, status, z, names)?)
}

/// Rejection summary for one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub test: String,
    pub rate: f64,
    pub rate_std: f64,
    pub achieved_censoring: f64,
    /// Replications that produced a test result.
    pub replications: usize,
    pub failures: usize,
}

/// Per-replication p-values `(p_value, p_std_value)` for each test, or `None`
/// where the replication failed.
pub type ReplicationPvalues = Vec<Option<Vec<(f64, f64)>>>;

fn test_label(t: &TestSpec) -> String {
    match t {
        TestSpec::Omnibus => "omnibus".into(),
        TestSpec::Link => "link".into(),
        TestSpec::LinkIndex => "link-index".into(),
        TestSpec::Covform(q) => format!("covform({q})"),
    }
}

/// Runs every replication and returns its p-values together with the mean
/// censoring fraction.
pub fn replicate(cfg: &SimConfig, tests: &[TestSpec]) -> Result<(ReplicationPvalues, f64), SimError> {
    cfg.validate()?;
    let c = calibrate_censoring(cfg);
    let results: Vec<Result<(Option<Vec<(f64, f64)>>, f64), SimError>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let d = generate_sample(cfg, c, rep)?;
            let censored = 1.0 - d.n_events() as f64 / d.n() as f64;
            let tcfg = TestConfig {
                npath: cfg.npath,
                npathsave: 0,
                seed: cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rep as u64),
                est_method: EstMethod::Rr,
                eq_type: cfg.eq_type,
                multiplier_term: cfg.multiplier_term,
                multipliers: cfg.multipliers,
                plug_in: cfg.plug_in,
                solver: SolverConfig::default(),
                ..TestConfig::default()
            };
            match run_tests(&d, tests, &tcfg, None) {
                Ok(rs) => Ok((Some(rs.iter().map(|r| (r.p_value, r.p_std_value)).collect()), censored)),
                Err(e) => {
                    log::warn!("replication {rep} failed: {e}");
                    Ok((None, censored))
                }
            }
        })
        .collect();
    let mut pvals = Vec::with_capacity(cfg.replications);
    let mut cens = 0.0;
    for r in results {
        let (p, c) = r?;
        pvals.push(p);
        cens += c;
    }
    Ok((pvals, cens / cfg.replications as f64))
}

/// Share of successful replications with `p ≤ alpha`, for each test.
pub fn rates_from_pvalues(pvals: &ReplicationPvalues, tests: &[TestSpec], alpha: f64, censoring: f64) -> Vec<RejectionRate> {
    let ok: Vec<&Vec<(f64, f64)>> = pvals.iter().flatten().collect();
    let used = ok.len();
    tests
        .iter()
        .enumerate()
        .map(|(t, spec)| {
            let count = |f: fn(&(f64, f64)) -> f64| ok.iter().filter(|v| f(&v[t]) <= alpha).count() as f64;
            let denom = used.max(1) as f64;
            RejectionRate {
                test: test_label(spec),
                rate: count(|v| v.0) / denom,
                rate_std: count(|v| v.1) / denom,
                achieved_censoring: censoring,
                replications: used,
                failures: pvals.len() - used,
            }
        })
        .collect()
}

/// Monte Carlo rejection rates of `tests` at level `cfg.alpha`.
pub fn rejection_rate(cfg: &SimConfig, tests: &[TestSpec]) -> Result<Vec<RejectionRate>, SimError> {
    let (pvals, censoring) = replicate(cfg, tests)?;
    Ok(rates_from_pvalues(&pvals, tests, cfg.alpha, censoring))
}

/// Writes rejection rates as CSV with one row per test.
pub fn write_rates_csv<W: std::io::Write>(cfg: &SimConfig, rates: &[RejectionRate], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "test", "n", "p", "misspec", "censor_target", "censor_achieved", "alpha", "npath", "replications", "failures", "rate",
        "rate_std", "seed",
    ])?;
    let misspec = match cfg.misspec {
        Misspec::None => "none".to_string(),
        Misspec::Quadratic { q, a } => format!("quadratic(q={q};a={a})"),
        Misspec::LogLink { a } => format!("loglink(a={a})"),
    };
    for r in rates {
        out.write_record([
            r.test.clone(),
            cfg.n.to_string(),
            cfg.p().to_string(),
            misspec.clone(),
            cfg.censor_rate.to_string(),
            format!("{:.6}", r.achieved_censoring),
            cfg.alpha.to_string(),
            cfg.npath.to_string(),
            r.replications.to_string(),
            r.failures.to_string(),
            format!("{:.6}", r.rate),
            format!("{:.6}", r.rate_std),
            cfg.seed.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
