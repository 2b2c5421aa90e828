//! Estimating functions and fitting procedures for `log T = -Zᵀβ + ε`.
//!
//! Rank-based fits solve the Gehan estimating equation, either in its
//! non-smoothed form (`ns`) or with induced smoothing (`is`). Least-squares fits
//! use the Buckley–James iteration started from the non-smoothed Gehan estimate.
//!
//! All kernels take optional subject weights so the same code serves the
//! multiplier-perturbed equations used for resampling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::data::{standardize_all_covariates, SurvivalDataset};
use crate::solver::{dfsane, SolverConfig, SolverError, SolverResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("solver did not reach tolerance (final ‖U‖/√p = {f_norm:.3e})")]
    SolverFailure { f_norm: f64 },
    #[error("covariate design is singular")]
    SingularDesign,
    #[error("Kaplan–Meier estimate is degenerate: no events")]
    KaplanMeierDegenerate,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstMethod {
    Rr,
    Ls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqType {
    Ns,
    Is,
}

impl fmt::Display for EstMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstMethod::Rr => "rr",
            EstMethod::Ls => "ls",
        })
    }
}

impl fmt::Display for EqType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EqType::Ns => "ns",
            EqType::Is => "is",
        })
    }
}

impl FromStr for EstMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rr" => Ok(EstMethod::Rr),
            "ls" => Ok(EstMethod::Ls),
            _ => Err(format!("unknown estimation method '{s}' (expected rr or ls)")),
        }
    }
}

impl FromStr for EqType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ns" => Ok(EqType::Ns),
            "is" => Ok(EqType::Is),
            _ => Err(format!("unknown equation type '{s}' (expected ns or is)")),
        }
    }
}

/// Buckley–James iteration summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BjLog {
    pub iterations: usize,
    pub converged: bool,
    /// Set when the iteration did not settle and the last two iterates were averaged.
    pub oscillated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Coefficients on the covariate scale of the dataset that was fitted.
    pub beta: Vec<f64>,
    /// Coefficients mapped back to the input covariate scale.
    pub beta_original: Vec<f64>,
    pub est_method: EstMethod,
    pub eq_type: Option<EqType>,
    pub solver: Option<SolverResult>,
    pub bj: Option<BjLog>,
}

/// `e_i(β) = log X_i + Z_iᵀβ` for a row-major `n × p` covariate slice.
pub fn residual_times(beta: &[f64], log_time: &[f64], z: &[f64]) -> Vec<f64> {
    let p = beta.len();
    log_time
        .iter()
        .zip(z.chunks_exact(p))
        .map(|(lt, zi)| lt + zi.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Borrowed view of the pieces every estimating function needs.
#[derive(Debug, Clone, Copy)]
pub struct GehanData<'a> {
    pub log_time: &'a [f64],
    pub status: &'a [bool],
    /// Row-major `n × p`.
    pub z: &'a [f64],
    pub p: usize,
    /// Per-subject multipliers; `None` means all ones.
    pub weights: Option<&'a [f64]>,
}

impl<'a> GehanData<'a> {
    pub fn from_dataset(d: &'a SurvivalDataset) -> Self {
        GehanData {
            log_time: d.log_time(),
            status: d.status(),
            z: d.covariates().as_slice().expect("standard layout"),
            p: d.p(),
            weights: None,
        }
    }

    pub fn with_weights(self, w: &'a [f64]) -> Self {
        GehanData { weights: Some(w), ..self }
    }

    pub fn n(&self) -> usize {
        self.log_time.len()
    }

    fn w(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    fn row(&self, i: usize) -> &'a [f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    pub fn residuals(&self, beta: &[f64]) -> Vec<f64> {
        residual_times(beta, self.log_time, self.z)
    }
}

/// Indices sorting `e` ascending, ties broken by original index.
pub fn residual_order(e: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..e.len()).collect();
    idx.sort_by(|&a, &b| e[a].total_cmp(&e[b]).then(a.cmp(&b)));
    idx
}

/// Non-smoothed Gehan score
/// `U(β) = n⁻¹ Σ_i Σ_j w_i w_j Δ_i (Z_i − Z_j) I(e_j ≥ e_i)`, evaluated in
/// `O(n log n + np)` with suffix sums over the sorted residuals.
pub fn gehan_score_ns(beta: &[f64], g: &GehanData<'_>) -> Vec<f64> {
    let (n, p) = (g.n(), g.p);
    let e = g.residuals(beta);
    let order = residual_order(&e);
    let mut out = vec![0.0; p];
    let mut w_sum = 0.0;
    let mut wz_sum = vec![0.0; p];
    let mut hi = n;
    while hi > 0 {
        // tied block order[lo..hi]
        let mut lo = hi - 1;
        while lo > 0 && e[order[lo - 1]] == e[order[hi - 1]] {
            lo -= 1;
        }
        for &j in &order[lo..hi] {
            let wj = g.w(j);
            w_sum += wj;
            for (acc, zj) in wz_sum.iter_mut().zip(g.row(j)) {
                *acc += wj * zj;
            }
        }
        for &i in &order[lo..hi] {
            if g.status[i] {
                let wi = g.w(i);
                for ((o, zi), s) in out.iter_mut().zip(g.row(i)).zip(&wz_sum) {
                    *o += wi * (zi * w_sum - s);
                }
            }
        }
        hi = lo;
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

/// Standard normal distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Induced-smoothed Gehan score: the indicator `I(e_j ≥ e_i)` is replaced by
/// `Φ((e_j − e_i)/r_ij)` with `r_ij² = ‖Z_i − Z_j‖²/n`. Pairs with `r_ij = 0`
/// have `Z_i = Z_j` and contribute nothing.
pub fn gehan_score_is(beta: &[f64], g: &GehanData<'_>) -> Vec<f64> {
    let (n, p) = (g.n(), g.p);
    let e = g.residuals(beta);
    let nf = n as f64;
    let mut out = vec![0.0; p];
    let mut diff = vec![0.0; p];
    for i in (0..n).filter(|&i| g.status[i]) {
        let zi = g.row(i);
        let wi = g.w(i);
        for j in 0..n {
            let mut r2 = 0.0;
            for ((d, a), b) in diff.iter_mut().zip(zi).zip(g.row(j)) {
                *d = a - b;
                r2 += *d * *d;
            }
            if r2 == 0.0 {
                continue;
            }
            let k = wi * g.w(j) * std_normal_cdf((e[j] - e[i]) / (r2 / nf).sqrt());
            for (o, d) in out.iter_mut().zip(&diff) {
                *o += k * d;
            }
        }
    }
    out.iter_mut().for_each(|o| *o /= nf);
    out
}

/// Convex Gehan objective `n⁻¹ Σ_i Σ_j w_i w_j Δ_i max(e_j − e_i, 0)`; its
/// gradient is `−U(β)` wherever no residuals tie. Evaluated in `O(n log n)`
/// with weighted suffix sums over the sorted residuals.
pub fn gehan_loss(beta: &[f64], g: &GehanData<'_>) -> f64 {
    let mut e = g.residuals(beta);
    let n = g.n();
    let centre = e.iter().sum::<f64>() / n as f64;
    e.iter_mut().for_each(|v| *v -= centre);
    let order = residual_order(&e);
    let (mut w_above, mut we_above, mut s) = (0.0, 0.0, 0.0);
    for &i in order.iter().rev() {
        w_above += g.w(i);
        we_above += g.w(i) * e[i];
        if g.status[i] {
            s += g.w(i) * (we_above - e[i] * w_above);
        }
    }
    s / n as f64
}

/// Moves a non-smoothed Gehan solution to a minimizer of the Gehan loss by
/// exact line searches along the score direction.
///
/// The score is piecewise constant, so the solver stops anywhere on the
/// plateau of smallest `‖U‖`. That plateau borders the loss minimizer but
/// can be wide when few pairs change order nearby.
pub fn polish_ns(beta: &[f64], g: &GehanData<'_>) -> Vec<f64> {
    const LINES: usize = 10;
    const GOLDEN_STEPS: usize = 60;
    let phi = |b: &[f64], dir: &[f64], t: f64| -> f64 {
        let x: Vec<f64> = b.iter().zip(dir).map(|(b, d)| b + t * d).collect();
        gehan_loss(&x, g)
    };
    let mut x = beta.to_vec();
    let mut fx = gehan_loss(&x, g);
    let h0 = ns_resolution(g);
    for _ in 0..LINES {
        let u = gehan_score_ns(&x, g);
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let dir: Vec<f64> = u.iter().map(|v| v / norm).collect();
        // bracket the minimum of the convex line function
        let (mut lo, mut hi) = (0.0, h0);
        while phi(&x, &dir, hi) < phi(&x, &dir, hi / 2.0) && hi < 1e3 {
            lo = hi / 2.0;
            hi *= 2.0;
        }
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let (mut c, mut d) = (b - ratio * (b - a), a + ratio * (b - a));
        let (mut fc, mut fd) = (phi(&x, &dir, c), phi(&x, &dir, d));
        for _ in 0..GOLDEN_STEPS {
            if fc <= fd {
                (b, d, fd) = (d, c, fc);
                c = b - ratio * (b - a);
                fc = phi(&x, &dir, c);
            } else {
                (a, c, fc) = (c, d, fd);
                d = a + ratio * (b - a);
                fd = phi(&x, &dir, d);
            }
        }
        let t = (a + b) / 2.0;
        let ft = phi(&x, &dir, t);
        if !(ft < fx) {
            break;
        }
        x.iter_mut().zip(&dir).for_each(|(xi, di)| *xi += t * di);
        fx = ft;
    }
    x
}

/// Resolution of the piecewise-constant non-smoothed score: no iterate can be
/// expected to push `‖U‖/√p` much below the jump produced by a handful of pair
/// reorderings, `p · max_q range(Z_q) · max_i w_i / n`, floored at `1e-4`.
pub fn ns_resolution(g: &GehanData<'_>) -> f64 {
    let (n, p) = (g.n(), g.p);
    let mut range: f64 = 0.0;
    for q in 0..p {
        let (lo, hi) = (0..n).map(|i| g.z[i * p + q]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        range = range.max(hi - lo);
    }
    // weights scale the size of a pair's jump
    let wmax = g.weights.map_or(1.0, |w| w.iter().cloned().fold(0.0, f64::max));
    (p as f64 * range * wmax / n as f64).max(1e-4)
}

/// Solves the selected Gehan equation from `start`.
pub fn solve_gehan(g: &GehanData<'_>, eq_type: EqType, start: &[f64], cfg: &SolverConfig) -> Result<SolverResult, FitError> {
    match eq_type {
        EqType::Ns => {
            let tol = ns_resolution(g);
            let cfg = SolverConfig { tol_f: cfg.tol_f.max(tol * 1e-3), ..*cfg };
            let r = dfsane(|b| gehan_score_ns(b, g), start, &cfg)?;
            if r.converged || r.f_norm <= tol {
                let x = polish_ns(&r.x, g);
                let f_norm = (gehan_score_ns(&x, g).iter().map(|v| v * v).sum::<f64>() / g.p as f64).sqrt();
                Ok(SolverResult { converged: true, x, f_norm, ..r })
            } else {
                Err(FitError::SolverFailure { f_norm: r.f_norm })
            }
        }
        EqType::Is => {
            let r = dfsane(|b| gehan_score_is(b, g), start, cfg)?;
            if r.converged {
                Ok(r)
            } else {
                Err(FitError::SolverFailure { f_norm: r.f_norm })
            }
        }
    }
}

/// Rank-based (Gehan) fit started at `β = 0`.
pub fn fit_rank(d: &SurvivalDataset, eq_type: EqType, cfg: &SolverConfig) -> Result<FitResult, FitError> {
    let g = GehanData::from_dataset(d);
    let r = solve_gehan(&g, eq_type, &vec![0.0; d.p()], cfg)?;
    Ok(FitResult {
        beta_original: d.unscale_beta(&r.x),
        beta: r.x.clone(),
        est_method: EstMethod::Rr,
        eq_type: Some(eq_type),
        solver: Some(r),
        bj: None,
    })
}

/// Weighted Kaplan–Meier masses of a residual distribution, with the largest
/// residual treated as an event so that all mass is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualKm {
    /// Distinct support points, ascending.
    pub support: Vec<f64>,
    /// Probability mass at each support point; sums to 1.
    pub mass: Vec<f64>,
}

impl ResidualKm {
    pub fn fit(e: &[f64], status: &[bool], weights: Option<&[f64]>) -> Result<Self, FitError> {
        let n = e.len();
        if !status.iter().any(|&s| s) {
            return Err(FitError::KaplanMeierDegenerate);
        }
        let w = |i: usize| weights.map_or(1.0, |w| w[i]);
        let order = residual_order(e);
        let last = order[n - 1];
        let emax = e[last];
        let mut at_risk: f64 = (0..n).map(w).sum();
        let mut surv = 1.0;
        let mut support = Vec::new();
        let mut mass = Vec::new();
        let mut k = 0;
        while k < n {
            let t = e[order[k]];
            let mut events = 0.0;
            let mut leaving = 0.0;
            while k < n && e[order[k]] == t {
                let i = order[k];
                if status[i] || t == emax {
                    events += w(i);
                }
                leaving += w(i);
                k += 1;
            }
            if events > 0.0 {
                let jump = if t == emax { surv } else { surv * events / at_risk };
                support.push(t);
                mass.push(jump);
                surv -= jump;
            }
            at_risk -= leaving;
        }
        Ok(ResidualKm { support, mass })
    }

    /// `E[ε | ε > t]`; equals `t` when no mass lies strictly above `t`.
    pub fn conditional_mean_above(&self, t: f64) -> f64 {
        let k = self.support.partition_point(|&s| s <= t);
        let m: f64 = self.mass[k..].iter().sum();
        if m <= 0.0 {
            return t;
        }
        self.support[k..].iter().zip(&self.mass[k..]).map(|(s, p)| s * p).sum::<f64>() / m
    }
}

/// Buckley–James iteration from `start`, with optional subject weights.
pub fn buckley_james(
    d: &SurvivalDataset,
    weights: Option<&[f64]>,
    start: &[f64],
) -> Result<(Vec<f64>, BjLog), FitError> {
    const TOL: f64 = 1e-6;
    const MAX_ITER: usize = 100;
    let (n, p) = (d.n(), d.p());
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..n).map(w).sum();

    // weighted centering and the Cholesky factor of the scatter matrix are fixed
    let zbar: Vec<f64> = (0..p).map(|q| (0..n).map(|i| w(i) * d.row(i)[q]).sum::<f64>() / wsum).collect();
    let mut szz = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let c = DVector::from_iterator(p, d.row(i).iter().zip(&zbar).map(|(a, b)| a - b));
        szz += w(i) * &c * c.transpose();
    }
    let chol = szz.cholesky().ok_or(FitError::SingularDesign)?;
    let diag = chol.l_dirty().diagonal();
    if diag.min() <= 1e-7 * diag.max() {
        return Err(FitError::SingularDesign);
    }

    let mut prev = start.to_vec();
    let mut prev2: Option<Vec<f64>> = None;
    for it in 1..=MAX_ITER {
        let e = residual_times(&prev, d.log_time(), d.covariates().as_slice().expect("standard layout"));
        let km = ResidualKm::fit(&e, d.status(), weights)?;
        let yhat: Vec<f64> = (0..n)
            .map(|i| {
                if d.status()[i] {
                    d.log_time()[i]
                } else {
                    let zb: f64 = d.row(i).iter().zip(&prev).map(|(a, b)| a * b).sum();
                    km.conditional_mean_above(e[i]) - zb
                }
            })
            .collect();
        let ybar = (0..n).map(|i| w(i) * yhat[i]).sum::<f64>() / wsum;
        let mut szy = DVector::<f64>::zeros(p);
        for i in 0..n {
            for q in 0..p {
                szy[q] += w(i) * (d.row(i)[q] - zbar[q]) * (yhat[i] - ybar);
            }
        }
        let next: Vec<f64> = chol.solve(&szy).iter().map(|v| -v).collect();
        let step = next.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if step <= TOL {
            return Ok((next, BjLog { iterations: it, converged: true, oscillated: false }));
        }
        let cycling = prev2
            .as_ref()
            .is_some_and(|b2| next.iter().zip(b2).all(|(a, b)| (a - b).abs() <= TOL));
        if cycling || it == MAX_ITER {
            let avg = next.iter().zip(&prev).map(|(a, b)| 0.5 * (a + b)).collect();
            return Ok((avg, BjLog { iterations: it, converged: false, oscillated: true }));
        }
        prev2 = Some(std::mem::replace(&mut prev, next));
    }
    unreachable!("loop returns on its last iteration")
}

/// Least-squares (Buckley–James) fit initialized at the non-smoothed Gehan estimate.
pub fn fit_ls(d: &SurvivalDataset, cfg: &SolverConfig) -> Result<FitResult, FitError> {
    let init = fit_rank(d, EqType::Ns, cfg)?;
    let (beta, log) = buckley_james(d, None, &init.beta)?;
    if log.oscillated {
        log::warn!("Buckley–James iteration did not settle; averaged the last two iterates");
    }
    Ok(FitResult {
        beta_original: d.unscale_beta(&beta),
        beta,
        est_method: EstMethod::Ls,
        eq_type: None,
        solver: init.solver,
        bj: Some(log),
    })
}

/// Maps coefficients between two scalings of the same covariates.
pub fn convert_beta(beta: &[f64], from: &SurvivalDataset, to: &SurvivalDataset) -> Vec<f64> {
    beta.iter()
        .zip(from.scaling().iter().zip(to.scaling()))
        .map(|(b, (f, t))| b * t.scale / f.scale)
        .collect()
}

/// Fits with the requested estimator; `eq_type` is ignored for least squares.
///
/// Covariates are standardized before solving and the coefficients
/// are mapped back, so the fit does not depend on the units of the inputs.
pub fn fit(d: &SurvivalDataset, est: EstMethod, eq_type: EqType, cfg: &SolverConfig) -> Result<FitResult, FitError> {
    let s = standardize_all_covariates(d).map_err(|_| FitError::SingularDesign)?;
    let mut r = fit_as_is(&s, est, eq_type, cfg)?;
    r.beta = convert_beta(&r.beta, &s, d);
    Ok(r)
}

/// Fits on the covariates exactly as given, without standardizing.
pub fn fit_as_is(d: &SurvivalDataset, est: EstMethod, eq_type: EqType, cfg: &SolverConfig) -> Result<FitResult, FitError> {
    match est {
        EstMethod::Rr => fit_rank(d, eq_type, cfg),
        EstMethod::Ls => fit_ls(d, cfg),
    }
}
