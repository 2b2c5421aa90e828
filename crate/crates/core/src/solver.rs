//! Derivative-free spectral residual method (DF-SANE) for square nonlinear
//! systems `F(x) = 0`.
//!
//! The iteration moves along `±σ_k F(x_k)` with a Barzilai–Borwein spectral
//! coefficient and accepts steps through a nonmonotone line search on the merit
//! `f(x) = ‖F(x)‖²`. Nothing requires `F` to be smooth; on piecewise-constant
//! systems the best iterate seen is returned with `stagnated` set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("non-finite function value at x = {x:?}")]
    NonFiniteEvaluation { x: Vec<f64> },
    #[error("starting point has length {got}, system has dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence threshold on `‖F‖/√p`.
    pub tol_f: f64,
    pub max_iter: usize,
    /// Length of the merit history used by the nonmonotone acceptance rule.
    pub history_m: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub gamma: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Stop after this many iterations without improving the best merit.
    pub no_improve: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_f: 1e-7,
            max_iter: 500,
            history_m: 10,
            sigma_min: 1e-10,
            sigma_max: 1e10,
            gamma: 1e-4,
            tau_min: 0.1,
            tau_max: 0.5,
            no_improve: 100,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tol_f > 0.0) {
            return Err(SolverError::InvalidConfig("tol_f must be positive"));
        }
        if !(0.0 < self.tau_min && self.tau_min < self.tau_max && self.tau_max < 1.0) {
            return Err(SolverError::InvalidConfig("need 0 < tau_min < tau_max < 1"));
        }
        if !(0.0 < self.sigma_min && self.sigma_min < self.sigma_max) {
            return Err(SolverError::InvalidConfig("need 0 < sigma_min < sigma_max"));
        }
        if self.history_m == 0 {
            return Err(SolverError::InvalidConfig("history_m must be at least 1"));
        }
        Ok(())
    }
}

/// One accepted step: the merit reached and the nonmonotone bound it had to meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub merit: f64,
    pub bound: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    /// Best iterate found.
    pub x: Vec<f64>,
    /// `‖F(x)‖/√p` at the returned iterate.
    pub f_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stagnated: bool,
    #[serde(skip)]
    pub trace: Vec<StepRecord>,
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `F(x) = 0` from `x0`.
pub fn dfsane<F>(mut f: F, x0: &[f64], cfg: &SolverConfig) -> Result<SolverResult, SolverError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    cfg.validate()?;
    let p = x0.len();
    let rootp = (p as f64).sqrt();
    let mut evals = 0usize;
    let mut eval = |x: &[f64]| -> Result<(Vec<f64>, f64), SolverError> {
        evals += 1;
        let fx = f(x);
        if fx.len() != p {
            return Err(SolverError::DimensionMismatch { got: p, want: fx.len() });
        }
        let merit = sq_norm(&fx);
        Ok((fx, merit))
    };

    let mut x = x0.to_vec();
    let (mut fx, mut merit) = eval(&x)?;
    if !merit.is_finite() {
        return Err(SolverError::NonFiniteEvaluation { x });
    }
    let merit0 = merit;
    let mut best = (x.clone(), merit);
    let mut since_best = 0usize;
    let mut history = vec![merit];
    let mut trace = Vec::new();
    let mut sigma = if merit > 0.0 { (1.0 / merit.sqrt()).min(1.0) } else { 1.0 };
    let mut stagnated = false;
    let mut iter = 0usize;

    while iter < cfg.max_iter {
        if merit.sqrt() / rootp <= cfg.tol_f {
            break;
        }
        let d: Vec<f64> = fx.iter().map(|v| -sigma * v).collect();
        let fbar = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let eta = merit0.sqrt() / ((1 + iter) as f64).powi(2);

        let (mut ap, mut am) = (1.0f64, 1.0f64);
        let accepted = loop {
            let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + ap * b).collect();
            // a non-finite trial is rejected like any other and the step shrinks
            let (fp, mp) = finite(eval(&xp)?);
            let bound_p = fbar + eta - cfg.gamma * ap * ap * merit;
            if mp <= bound_p {
                break Some((xp, fp, mp, bound_p, ap));
            }
            let xm: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - am * b).collect();
            let (fm, mm) = finite(eval(&xm)?);
            let bound_m = fbar + eta - cfg.gamma * am * am * merit;
            if mm <= bound_m {
                break Some((xm, fm, mm, bound_m, -am));
            }
            ap = backtrack(ap, merit, mp, cfg);
            am = backtrack(am, merit, mm, cfg);
            if ap.max(am) < 1e-14 {
                break None;
            }
        };
        let Some((xn, fxn, mn, bound, alpha)) = accepted else {
            stagnated = true;
            break;
        };
        iter += 1;

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = fxn.iter().zip(&fx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        sigma = if sy == 0.0 {
            1.0
        } else {
            let raw = sq_norm(&s) / sy;
            raw.signum() * raw.abs().clamp(cfg.sigma_min, cfg.sigma_max)
        };

        log::debug!("dfsane iter {iter}: merit {mn:.6e} bound {bound:.6e} alpha {alpha:.3e} sigma {sigma:.3e}");
        trace.push(StepRecord { merit: mn, bound, alpha });
        x = xn;
        fx = fxn;
        merit = mn;
        history.push(merit);
        if history.len() > cfg.history_m {
            history.remove(0);
        }
        if merit < best.1 {
            best = (x.clone(), merit);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.no_improve {
                stagnated = true;
                break;
            }
        }
    }

    let f_norm = best.1.sqrt() / rootp;
    let converged = f_norm <= cfg.tol_f;
    Ok(SolverResult {
        x: best.0,
        f_norm,
        iterations: iter,
        evaluations: evals,
        converged,
        stagnated: stagnated || (!converged && iter >= cfg.max_iter),
        trace,
    })
}

fn finite((fx, merit): (Vec<f64>, f64)) -> (Vec<f64>, f64) {
    if merit.is_finite() {
        (fx, merit)
    } else {
        (fx, f64::INFINITY)
    }
}

/// Quadratic-interpolation step reduction, safeguarded into `[τ_min α, τ_max α]`.
fn backtrack(alpha: f64, merit: f64, trial: f64, cfg: &SolverConfig) -> f64 {
    let denom = trial + (2.0 * alpha - 1.0) * merit;
    let interp = if denom > 0.0 { alpha * alpha * merit / denom } else { cfg.tau_max * alpha };
    interp.clamp(cfg.tau_min * alpha, cfg.tau_max * alpha)
}
