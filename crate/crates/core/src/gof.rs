//! Cumulative martingale-residual processes, their multiplier-resampled null
//! approximations and the supremum tests built on them.
//!
//! The observed process is
//! `W(t, z) = n^{-1/2} Σ_i I(Z_i ≤ z) M̂_i(t; β̂)`
//! on the grid of sorted residual times and the observed covariate anchors.
//! The omnibus test uses the full `n × n` surface; the link test fixes `t` at the
//! last grid point; the functional-form test additionally restricts the
//! indicator to one covariate.
//!
//! Each resampled path draws `ξ_1..ξ_n ~ Exp(1)`, re-solves the
//! product-weighted estimating equation for `β̂*`, and combines a multiplier
//! term on the martingale residuals at `β̂` with the plug-in difference
//! `W(t, z; β̂*) − W(t, z; β̂)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize_all_covariates, ColumnKind, SurvivalDataset};
use crate::estimate::{buckley_james, convert_beta, fit_as_is, solve_gehan, EqType, EstMethod, FitError, FitResult, GehanData};
use crate::residual::{residual_process_set, GridMartingale, ResidualError, ResidualProcessSet};
use crate::solver::SolverConfig;

/// Smallest number of resampled paths; smaller requests are raised to it.
pub const MIN_NPATH: usize = 10;
/// Pointwise standard errors below this are treated as zero.
pub const SE_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GofError {
    #[error("functional form test is not supported for binary covariate '{0}'")]
    BinaryCovariateForCovform(String),
    #[error("covariate index {0} out of range")]
    CovariateOutOfRange(usize),
    #[error("every resampled path failed")]
    AllPathsFailed,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestType {
    Omnibus,
    Link,
    Covform,
}

impl fmt::Display for TestType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestType::Omnibus => "omnibus",
            TestType::Link => "link",
            TestType::Covform => "covform",
        })
    }
}

impl FromStr for TestType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "omnibus" => Ok(TestType::Omnibus),
            "link" => Ok(TestType::Link),
            "covform" => Ok(TestType::Covform),
            _ => Err(format!("unknown test type '{s}' (expected omnibus, link or covform)")),
        }
    }
}

/// A test with its covariate selection resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestSpec {
    Omnibus,
    Link,
    /// 1-based covariate index.
    Covform(usize),
    /// Link test indexed by the fitted linear predictor, `π_i(z) = I(Z_iᵀβ̂ ≤ zᵀβ̂)`.
    LinkIndex,
}

impl TestSpec {
    pub fn new(test_type: TestType, cov_tested: usize) -> Self {
        match test_type {
            TestType::Omnibus => TestSpec::Omnibus,
            TestType::Link => TestSpec::Link,
            TestType::Covform => TestSpec::Covform(cov_tested),
        }
    }

    pub fn from_config(cfg: &TestConfig) -> Self {
        match (cfg.test_type, cfg.link_anchor) {
            (TestType::Link, LinkAnchor::FittedIndex) => TestSpec::LinkIndex,
            (t, _) => TestSpec::new(t, cfg.cov_tested),
        }
    }

    pub fn test_type(&self) -> TestType {
        match self {
            TestSpec::Omnibus => TestType::Omnibus,
            TestSpec::Link | TestSpec::LinkIndex => TestType::Link,
            TestSpec::Covform(_) => TestType::Covform,
        }
    }

    fn validate(&self, d: &SurvivalDataset) -> Result<(), GofError> {
        if let TestSpec::Covform(q) = *self {
            if q == 0 || q > d.p() {
                return Err(GofError::CovariateOutOfRange(q));
            }
            if d.kinds()[q - 1] == ColumnKind::Binary {
                return Err(GofError::BinaryCovariateForCovform(d.names()[q - 1].clone()));
            }
        }
        Ok(())
    }
}

/// Multiplier distribution for resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multipliers {
    #[default]
    Exponential,
    /// `ξ ∈ {0, 2}` with equal probability: nonnegative with unit mean and
    /// variance, and symmetric about one.
    TwoPoint,
    /// Every multiplier equal to one; the resampled paths then collapse to zero.
    Unit,
}

/// How the multiplier term of a resampled path is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierTerm {
    /// `Σ_i (ξ_i − 1) ∫ [π_i(z) − Ē_z(s)] dM̂_i(s)`, where `Ē_z` is the at-risk
    /// average of `π(z)`; this accounts for the Nelson–Aalen plug-in.
    #[default]
    Compensated,
    /// `Σ_i (ξ_i − 1) π_i(z) M̂_i(t)`.
    Plain,
}

/// How the re-estimation term `W(t, z; β̂*) − W(t, z; β̂)` of a resampled path is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlugInTerm {
    /// `η̂(t, z)ᵀ(β̂* − β̂)` with `η̂` a central difference quotient of `W` in `β`
    /// at step `n^{-1/3}` per coordinate. Smooth in `t`, like its asymptotic limit.
    #[default]
    Linearized,
    /// The exact difference on the fitted time grid. Residuals of `β̂*` crossing
    /// grid points add counting-process jitter that the observed process lacks.
    Difference,
}

/// Indicator used by the link test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkAnchor {
    /// Componentwise `I(Z_i ≤ z)` over the observed covariate vectors.
    #[default]
    Covariates,
    /// `I(Z_iᵀβ̂ ≤ zᵀβ̂)` over the fitted linear predictor.
    FittedIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub test_type: TestType,
    /// 1-based covariate for the functional form test.
    pub cov_tested: usize,
    pub est_method: EstMethod,
    pub eq_type: EqType,
    pub npath: usize,
    pub npathsave: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub solver: SolverConfig,
    pub multipliers: Multipliers,
    pub multiplier_term: MultiplierTerm,
    pub plug_in: PlugInTerm,
    pub link_anchor: LinkAnchor,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            test_type: TestType::Omnibus,
            cov_tested: 1,
            est_method: EstMethod::Rr,
            eq_type: EqType::Ns,
            npath: 200,
            npathsave: 50,
            seed: 0,
            threads: None,
            solver: SolverConfig::default(),
            multipliers: Multipliers::default(),
            multiplier_term: MultiplierTerm::default(),
            plug_in: PlugInTerm::default(),
            link_anchor: LinkAnchor::default(),
        }
    }
}

impl TestConfig {
    pub fn effective_npath(&self) -> usize {
        self.npath.max(MIN_NPATH)
    }
}

/// A process on its grid: `rows × cols`, row-major. Link and functional-form
/// processes have a single column.
#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Process {
    fn zeros(rows: usize, cols: usize) -> Self {
        Process { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn sup_abs(&self) -> f64 {
        sup_abs(&self.values)
    }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Anchor ordering and indicator weights `π_i(z_j)` for one test.
#[derive(Debug, Clone)]
pub struct Anchors {
    /// Subject index supplying each anchor, in display order.
    pub order: Vec<usize>,
    /// `pi[j * n + i] = I(Z_i ≤ z_j)`.
    pi: Vec<bool>,
    n: usize,
}

impl Anchors {
    /// Anchors of `test` for data `d`; `beta` is only used by [`TestSpec::LinkIndex`].
    pub fn new(test: TestSpec, d: &SurvivalDataset, beta: &[f64]) -> Self {
        let n = d.n();
        let mut order: Vec<usize> = (0..n).collect();
        let mut pi = vec![false; n * n];
        let mut scalar = |v: &[f64], order: &mut Vec<usize>| {
            order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
            for (j, &a) in order.iter().enumerate() {
                for i in 0..n {
                    pi[j * n + i] = v[i] <= v[a];
                }
            }
        };
        match test {
            TestSpec::Covform(q) => scalar(&d.covariates().column(q - 1).to_vec(), &mut order),
            TestSpec::LinkIndex => {
                let index: Vec<f64> = (0..n).map(|i| d.row(i).iter().zip(beta).map(|(z, b)| z * b).sum()).collect();
                scalar(&index, &mut order)
            }
            TestSpec::Omnibus | TestSpec::Link => {
                order.sort_by(|&a, &b| {
                    d.row(a)
                        .iter()
                        .zip(d.row(b))
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                for (j, &a) in order.iter().enumerate() {
                    let za = d.row(a);
                    for i in 0..n {
                        pi[j * n + i] = d.row(i).iter().zip(za).all(|(x, y)| x <= y);
                    }
                }
            }
        }
        Anchors { order, pi, n }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn weights(&self, j: usize) -> &[bool] {
        &self.pi[j * self.n..(j + 1) * self.n]
    }

    pub fn includes(&self, j: usize, i: usize) -> bool {
        self.pi[j * self.n + i]
    }
}

/// Event structure of the fitted residuals needed by the compensated multiplier term.
#[derive(Debug, Clone)]
struct RiskSets {
    /// Subjects by ascending residual with the start of their tied block.
    order: Vec<usize>,
    block_start: Vec<usize>,
}

impl RiskSets {
    fn new(rs: &ResidualProcessSet) -> Self {
        let n = rs.n();
        let mut block_start = vec![0; n];
        for k in 1..n {
            block_start[k] = if rs.grid[k] == rs.grid[k - 1] { block_start[k - 1] } else { k };
        }
        RiskSets { order: rs.order.clone(), block_start }
    }

    /// `Σ_{i: e_i ≥ e_(k)} v_i` for every sorted position `k`.
    fn suffix_sums(&self, v: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.order.len();
        let mut out = vec![0.0; n];
        let mut acc = 0.0;
        let mut hi = n;
        while hi > 0 {
            let lo = self.block_start[hi - 1];
            for k in lo..hi {
                acc += v(self.order[k]);
            }
            for slot in &mut out[lo..hi] {
                *slot = acc;
            }
            hi = lo;
        }
        out
    }
}

/// Everything fixed by the fitted model and shared by all paths of one test.
pub struct ProcessContext<'a> {
    pub data: &'a SurvivalDataset,
    pub beta: Vec<f64>,
    pub residuals: ResidualProcessSet,
    pub test: TestSpec,
    pub anchors: Anchors,
    risk: RiskSets,
    observed: Process,
    /// `∂W/∂β_q` difference quotients, one surface per coefficient.
    slopes: Vec<Process>,
}

impl<'a> ProcessContext<'a> {
    pub fn new(test: TestSpec, beta: &[f64], d: &'a SurvivalDataset) -> Result<Self, GofError> {
        test.validate(d)?;
        let e = crate::estimate::residual_times(beta, d.log_time(), d.covariates().as_slice().expect("standard layout"));
        let residuals = residual_process_set(e, d.status())?;
        let anchors = Anchors::new(test, d, beta);
        let risk = RiskSets::new(&residuals);
        let mut ctx = ProcessContext {
            data: d,
            beta: beta.to_vec(),
            residuals,
            test,
            anchors,
            risk,
            observed: Process::zeros(0, 0),
            slopes: Vec::new(),
        };
        ctx.observed = ctx.plug_in_process(&ctx.residuals.martingale, None);
        ctx.slopes = ctx.difference_quotients()?;
        Ok(ctx)
    }

    /// Process at coefficients `beta`, evaluated on the fitted grid.
    fn process_at(&self, beta: &[f64]) -> Result<Process, GofError> {
        let d = self.data;
        let e = crate::estimate::residual_times(beta, d.log_time(), d.covariates().as_slice().expect("standard layout"));
        let gm = GridMartingale::new(&e, d.status(), &self.residuals.grid)?;
        Ok(self.plug_in_process(&gm, None))
    }

    fn difference_quotients(&self) -> Result<Vec<Process>, GofError> {
        let h = (self.n() as f64).powf(-1.0 / 3.0);
        (0..self.beta.len())
            .map(|q| {
                let mut up = self.beta.clone();
                let mut down = self.beta.clone();
                up[q] += h;
                down[q] -= h;
                let mut slope = self.process_at(&up)?;
                let lo = self.process_at(&down)?;
                slope.values.iter_mut().zip(&lo.values).for_each(|(a, b)| *a = (*a - b) / (2.0 * h));
                Ok(slope)
            })
            .collect()
    }

    pub fn observed(&self) -> &Process {
        &self.observed
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn cols(&self) -> usize {
        match self.test {
            TestSpec::Omnibus => self.n(),
            _ => 1,
        }
    }

    /// `n^{-1/2} Σ_i π_i(z_j) a_i M̂_i(t_k)` for martingale residuals `gm` on the fitted grid.
    fn plug_in_process(&self, gm: &GridMartingale, a: Option<&[f64]>) -> Process {
        let n = self.n();
        let scale = 1.0 / (n as f64).sqrt();
        let wt = |i: usize| a.map_or(1.0, |a| a[i]);
        let mut out = Process::zeros(self.anchors.len(), self.cols());
        match self.test {
            TestSpec::Omnibus => {
                let mut jump = vec![0.0; n + 1];
                let mut leave = vec![0.0; n + 1];
                for j in 0..self.anchors.len() {
                    jump.iter_mut().for_each(|v| *v = 0.0);
                    leave.iter_mut().for_each(|v| *v = 0.0);
                    let mut total = 0.0;
                    for (i, _) in self.anchors.weights(j).iter().enumerate().filter(|(_, &on)| on) {
                        let w = wt(i);
                        let k = gm.entry[i];
                        jump[k] += w * gm.final_value[i];
                        leave[k] += w;
                        total += w;
                    }
                    let row = &mut out.values[j * n..(j + 1) * n];
                    let (mut cum_jump, mut cum_leave) = (0.0, 0.0);
                    for k in 0..n {
                        cum_jump += jump[k];
                        cum_leave += leave[k];
                        row[k] = scale * (cum_jump - gm.grid_hazard[k] * (total - cum_leave));
                    }
                }
            }
            TestSpec::Link | TestSpec::LinkIndex | TestSpec::Covform(_) => {
                let terminal: Vec<f64> = (0..n).map(|i| wt(i) * gm.terminal(i)).collect();
                for j in 0..self.anchors.len() {
                    let s: f64 = self.anchors.weights(j).iter().zip(&terminal).filter(|(&on, _)| on).map(|(_, m)| m).sum();
                    out.values[j] = scale * s;
                }
            }
        }
        out
    }

    /// `n^{-1/2} Σ_i g_i ∫_0^{t_k} Ē_j(s) dM̂_i(s)` with `g_i = ξ_i − 1`.
    fn compensator(&self, g: &[f64]) -> Process {
        let n = self.n();
        let scale = 1.0 / (n as f64).sqrt();
        let status = self.data.status();
        let risk = &self.risk;
        let sg = risk.suffix_sums(|i| g[i]);
        let at_risk: Vec<f64> = (0..n).map(|k| (n - risk.block_start[k]) as f64).collect();
        // per sorted event position: g_l − S_g(e_l)/R_l
        let h: Vec<f64> = (0..n)
            .map(|k| {
                let l = risk.order[k];
                if status[l] {
                    g[l] - sg[k] / at_risk[k]
                } else {
                    0.0
                }
            })
            .collect();
        let mut out = Process::zeros(self.anchors.len(), self.cols());
        let mut contrib = vec![0.0; n];
        for j in 0..self.anchors.len() {
            let pi = self.anchors.weights(j);
            let s_pi = risk.suffix_sums(|i| if pi[i] { 1.0 } else { 0.0 });
            for k in 0..n {
                contrib[k] = if h[k] != 0.0 { s_pi[k] / at_risk[k] * h[k] } else { 0.0 };
            }
            match self.test {
                TestSpec::Omnibus => {
                    // an event at sorted position k enters at its tied-block start
                    let row = &mut out.values[j * n..(j + 1) * n];
                    let mut by_entry = vec![0.0; n];
                    for k in 0..n {
                        by_entry[risk.block_start[k]] += contrib[k];
                    }
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += by_entry[k];
                        row[k] = scale * acc;
                    }
                }
                _ => out.values[j] = scale * contrib.iter().sum::<f64>(),
            }
        }
        out
    }

    /// Resampled process for multipliers `xi` and re-estimated coefficients `beta_star`.
    pub fn perturbed_process(
        &self,
        xi: &[f64],
        beta_star: &[f64],
        term: MultiplierTerm,
        plug_in: PlugInTerm,
    ) -> Result<Process, GofError> {
        let g: Vec<f64> = xi.iter().map(|x| x - 1.0).collect();
        let mut out = self.plug_in_process(&self.residuals.martingale, Some(&g));
        if term == MultiplierTerm::Compensated {
            let comp = self.compensator(&g);
            out.values.iter_mut().zip(&comp.values).for_each(|(o, c)| *o -= c);
        }
        match plug_in {
            PlugInTerm::Linearized => {
                for (slope, (bs, b)) in self.slopes.iter().zip(beta_star.iter().zip(&self.beta)) {
                    let delta = bs - b;
                    out.values.iter_mut().zip(&slope.values).for_each(|(o, s)| *o += s * delta);
                }
            }
            PlugInTerm::Difference => {
                let w_star = self.process_at(beta_star)?;
                for ((o, ws), w) in out.values.iter_mut().zip(&w_star.values).zip(&self.observed.values) {
                    *o += ws - w;
                }
            }
        }
        Ok(out)
    }
}

/// Observed process of `test` at the fitted coefficients.
pub fn observed_process(test: TestSpec, fit: &FitResult, d: &SurvivalDataset) -> Result<Process, GofError> {
    Ok(ProcessContext::new(test, &fit.beta, d)?.observed)
}

/// `n^{-1/2} Σ_i I(Z_i ≤ z) M̂_i(∞)` at an arbitrary anchor `z` (all coordinates).
pub fn terminal_process_at(z: &[f64], rs: &ResidualProcessSet, d: &SurvivalDataset) -> f64 {
    let n = d.n();
    let s: f64 = (0..n)
        .filter(|&i| d.row(i).iter().zip(z).all(|(a, b)| a <= b))
        .map(|i| rs.martingale.terminal(i))
        .sum();
    s / (n as f64).sqrt()
}

/// One resampling draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDraw {
    pub xi: Vec<f64>,
    pub beta: Vec<f64>,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn draw_multipliers(rng: &mut ChaCha8Rng, n: usize, kind: Multipliers) -> Vec<f64> {
    match kind {
        Multipliers::Exponential => (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect(),
        Multipliers::TwoPoint => (0..n).map(|_| if rng.random_bool(0.5) { 2.0 } else { 0.0 }).collect(),
        Multipliers::Unit => vec![1.0; n],
    }
}

/// Re-solves the multiplier-weighted estimating equation from `beta_hat`.
pub fn perturbed_beta(
    d: &SurvivalDataset,
    xi: &[f64],
    beta_hat: &[f64],
    est: EstMethod,
    eq_type: EqType,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, FitError> {
    match est {
        EstMethod::Rr => {
            let g = GehanData::from_dataset(d).with_weights(xi);
            Ok(solve_gehan(&g, eq_type, beta_hat, cfg)?.x)
        }
        EstMethod::Ls => Ok(buckley_james(d, Some(xi), beta_hat)?.0),
    }
}

/// Draws path `path` (0-based). A failed solve is retried once with the next
/// multipliers from the same stream; `None` if both attempts fail.
pub fn draw_path(d: &SurvivalDataset, beta_hat: &[f64], cfg: &TestConfig, path: usize) -> Option<PathDraw> {
    let mut rng = path_rng(cfg.seed, path);
    for attempt in 0..2 {
        let xi = draw_multipliers(&mut rng, d.n(), cfg.multipliers);
        match perturbed_beta(d, &xi, beta_hat, cfg.est_method, cfg.eq_type, &cfg.solver) {
            Ok(beta) => return Some(PathDraw { xi, beta }),
            Err(e) => log::debug!("path {path} attempt {attempt} failed: {e}"),
        }
    }
    log::warn!("dropping resampling path {path} after two solver failures");
    None
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T, GofError> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| GofError::ThreadPool(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

/// Draws every resampling path. Failed paths are dropped; the result keeps
/// path-index order.
pub fn resample_draws(d: &SurvivalDataset, beta_hat: &[f64], cfg: &TestConfig) -> Result<Vec<PathDraw>, GofError> {
    let npath = cfg.effective_npath();
    let draws: Vec<PathDraw> = with_pool(cfg.threads, || {
        (0..npath).into_par_iter().map(|b| draw_path(d, beta_hat, cfg, b)).collect::<Vec<_>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    if draws.is_empty() {
        return Err(GofError::AllPathsFailed);
    }
    Ok(draws)
}

/// Paths per accumulation chunk. Fixed so that floating-point sums do not
/// depend on the number of worker threads.
const CHUNK: usize = 32;

/// `Σ_b f(path_b)` accumulated chunk by chunk in path order.
fn ordered_sum<F>(draws: &[PathDraw], len: usize, f: F) -> Result<Vec<f64>, GofError>
where
    F: Fn(&PathDraw) -> Result<Vec<f64>, GofError> + Sync,
{
    let partials = draws
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; len];
            for draw in chunk {
                acc.iter_mut().zip(f(draw)?).for_each(|(a, v)| *a += v);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>, GofError>>()?;
    let mut total = vec![0.0; len];
    for part in partials {
        total.iter_mut().zip(part).for_each(|(a, v)| *a += v);
    }
    Ok(total)
}

/// Pointwise sample standard deviation over paths (divisor `npath − 1`) and the
/// standardized observed and resampled values. Points whose standard error is
/// below [`SE_FLOOR`] standardize to zero.
pub fn standardize(obs: &[f64], paths: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let m = paths.len() as f64;
    let len = obs.len();
    let mut mean = vec![0.0; len];
    for p in paths {
        mean.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut ss = vec![0.0; len];
    for p in paths {
        ss.iter_mut().zip(p).zip(&mean).for_each(|((s, v), mu)| *s += (v - mu) * (v - mu));
    }
    let se: Vec<f64> = ss.iter().map(|s| if m > 1.0 { (s / (m - 1.0)).sqrt() } else { 0.0 }).collect();
    let scale = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(&se).map(|(x, s)| if *s >= SE_FLOOR { x / s } else { 0.0 }).collect()
    };
    let obs_std = scale(obs);
    let paths_std = paths.iter().map(|p| scale(p)).collect();
    (obs_std, paths_std, se)
}

/// Share of paths whose supremum reaches the observed supremum, for the raw and
/// standardized processes.
pub fn supremum_pvalues(obs: &[f64], paths: &[Vec<f64>], obs_std: &[f64], paths_std: &[Vec<f64>]) -> (f64, f64) {
    let p = |o: &[f64], ps: &[Vec<f64>]| -> f64 {
        let s = sup_abs(o);
        ps.iter().filter(|q| sup_abs(q) >= s).count() as f64 / ps.len() as f64
    };
    (p(obs, paths), p(obs_std, paths_std))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GofTestResult {
    pub test_type: TestType,
    /// 1-based tested covariate (functional form test only).
    pub cov_tested: Option<usize>,
    pub fit: FitResult,
    pub npath: usize,
    pub npath_effective: usize,
    pub npathsave: usize,
    pub seed: u64,
    pub obs_process: Process,
    pub apprx_process: Vec<Process>,
    pub se_process: Process,
    pub obs_std_process: Process,
    pub apprx_std_process: Vec<Process>,
    pub p_value: f64,
    pub p_std_value: f64,
    /// Subject index of each anchor row, in display order.
    pub anchor_order: Vec<usize>,
    /// Sorted residual times of the fit.
    pub time_grid: Vec<f64>,
}

fn summarize(ctx: &ProcessContext<'_>, fit: &FitResult, draws: &[PathDraw], cfg: &TestConfig) -> Result<GofTestResult, GofError> {
    let obs = ctx.observed.clone();
    let (rows, cols) = (obs.rows, obs.cols);
    let len = obs.values.len();
    let m = draws.len() as f64;
    let path = |draw: &PathDraw| ctx.perturbed_process(&draw.xi, &draw.beta, cfg.multiplier_term, cfg.plug_in).map(|p| p.values);

    let mut mean = ordered_sum(draws, len, path)?;
    mean.iter_mut().for_each(|v| *v /= m);
    let ss = ordered_sum(draws, len, |draw| {
        Ok(path(draw)?.iter().zip(&mean).map(|(v, mu)| (v - mu) * (v - mu)).collect())
    })?;
    let se: Vec<f64> = ss.iter().map(|s| if m > 1.0 { (s / (m - 1.0)).sqrt() } else { 0.0 }).collect();
    let std_of = |v: &[f64]| -> Vec<f64> { v.iter().zip(&se).map(|(x, s)| if *s >= SE_FLOOR { x / s } else { 0.0 }).collect() };
    let obs_std = std_of(&obs.values);

    let keep = cfg.npathsave.min(draws.len());
    let per_path = draws
        .par_iter()
        .enumerate()
        .map(|(b, draw)| {
            let raw = path(draw)?;
            let stdz = std_of(&raw);
            let sups = (sup_abs(&raw), sup_abs(&stdz));
            Ok((sups, (b < keep).then_some((raw, stdz))))
        })
        .collect::<Result<Vec<_>, GofError>>()?;

    let (s_obs, s_obs_std) = (sup_abs(&obs.values), sup_abs(&obs_std));
    let exceed = |f: fn(&(f64, f64)) -> f64, s: f64| per_path.iter().filter(|(sups, _)| f(sups) >= s).count() as f64 / m;
    let p_value = exceed(|s| s.0, s_obs);
    let p_std_value = exceed(|s| s.1, s_obs_std);

    let wrap = |values: Vec<f64>| Process { rows, cols, values };
    let (mut apprx, mut apprx_std) = (Vec::with_capacity(keep), Vec::with_capacity(keep));
    for (_, saved) in per_path {
        if let Some((raw, stdz)) = saved {
            apprx.push(wrap(raw));
            apprx_std.push(wrap(stdz));
        }
    }
    Ok(GofTestResult {
        test_type: ctx.test.test_type(),
        cov_tested: match ctx.test {
            TestSpec::Covform(q) => Some(q),
            _ => None,
        },
        fit: fit.clone(),
        npath: cfg.effective_npath(),
        npath_effective: draws.len(),
        npathsave: cfg.npathsave,
        seed: cfg.seed,
        obs_process: obs,
        apprx_process: apprx,
        se_process: wrap(se),
        obs_std_process: wrap(obs_std),
        apprx_std_process: apprx_std,
        p_value,
        p_std_value,
        anchor_order: ctx.anchors.order.clone(),
        time_grid: ctx.residuals.grid.clone(),
    })
}

/// Runs several tests on one fit, sharing the resampling draws.
pub fn run_tests(
    d: &SurvivalDataset,
    tests: &[TestSpec],
    cfg: &TestConfig,
    fitted: Option<&FitResult>,
) -> Result<Vec<GofTestResult>, GofError> {
    for t in tests {
        t.validate(d)?;
    }
    // processes are invariant to affine rescaling of the covariates, and the
    // perturbed equations are better conditioned on the standardized scale
    let s = standardize_all_covariates(d).map_err(|_| FitError::SingularDesign)?;
    let (fit_result, beta_s) = match fitted {
        Some(f) => (f.clone(), convert_beta(&f.beta, d, &s)),
        None => {
            let mut f = fit_as_is(&s, cfg.est_method, cfg.eq_type, &cfg.solver)?;
            let beta_s = std::mem::take(&mut f.beta);
            f.beta = convert_beta(&beta_s, &s, d);
            (f, beta_s)
        }
    };
    let contexts = tests
        .iter()
        .map(|&t| ProcessContext::new(t, &beta_s, &s))
        .collect::<Result<Vec<_>, _>>()?;
    let draws = resample_draws(&s, &beta_s, cfg)?;
    with_pool(cfg.threads, || contexts.iter().map(|c| summarize(c, &fit_result, &draws, cfg)).collect())?
}

/// Fits the model (unless a fit is supplied) and runs the configured test.
pub fn run_afttest(d: &SurvivalDataset, cfg: &TestConfig, fitted: Option<&FitResult>) -> Result<GofTestResult, GofError> {
    let test = TestSpec::from_config(cfg);
    Ok(run_tests(d, &[test], cfg, fitted)?.remove(0))
}
