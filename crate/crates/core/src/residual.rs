//! Counting-process machinery on the residual time scale: risk sets, the
//! Nelson–Aalen cumulative hazard and martingale residuals
//! `M̂_i(t) = Δ_i I(e_i ≤ t) − Λ̂(min(e_i, t))`.

use thiserror::Error;

use crate::data::SurvivalDataset;
use crate::estimate::{residual_order, residual_times};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResidualError {
    #[error("Nelson–Aalen estimator needs at least one observation")]
    EmptyInput,
    #[error("residual and status vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Right-continuous Nelson–Aalen step function.
#[derive(Debug, Clone, PartialEq)]
pub struct NelsonAalen {
    /// Distinct event times, ascending.
    pub jump_times: Vec<f64>,
    /// `Λ̂` at each jump time.
    pub cumhaz: Vec<f64>,
}

impl NelsonAalen {
    /// `Λ̂(t) = Σ_{i: Δ_i = 1, e_i ≤ t} 1/R(e_i)` with `R(s) = #{j : e_j ≥ s}`.
    pub fn fit(e: &[f64], status: &[bool]) -> Result<Self, ResidualError> {
        if e.is_empty() {
            return Err(ResidualError::EmptyInput);
        }
        if e.len() != status.len() {
            return Err(ResidualError::LengthMismatch(e.len(), status.len()));
        }
        let order = residual_order(e);
        let n = e.len();
        let mut jump_times = Vec::new();
        let mut cumhaz = Vec::new();
        let mut total = 0.0;
        let mut k = 0;
        while k < n {
            let t = e[order[k]];
            let at_risk = (n - k) as f64;
            let mut jumped = false;
            while k < n && e[order[k]] == t {
                if status[order[k]] {
                    total += 1.0 / at_risk;
                    jumped = true;
                }
                k += 1;
            }
            if jumped {
                jump_times.push(t);
                cumhaz.push(total);
            }
        }
        Ok(NelsonAalen { jump_times, cumhaz })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&s| s <= t) {
            0 => 0.0,
            k => self.cumhaz[k - 1],
        }
    }
}

/// Martingale residuals of one fit, evaluated on a fixed time grid `t_0 ≤ … ≤ t_{n−1}`.
///
/// `M̂_i(t_k)` is `final_value[i]` once `k ≥ entry[i]` and `−grid_hazard[k]` before.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMartingale {
    /// First grid index with `t_k ≥ e_i`; equals the grid length when `e_i` lies beyond it.
    pub entry: Vec<usize>,
    /// `Δ_i − Λ̂(e_i)`.
    pub final_value: Vec<f64>,
    /// `Λ̂(t_k)`.
    pub grid_hazard: Vec<f64>,
}

impl GridMartingale {
    pub fn new(e: &[f64], status: &[bool], grid: &[f64]) -> Result<Self, ResidualError> {
        let na = NelsonAalen::fit(e, status)?;
        let entry = e.iter().map(|&ei| grid.partition_point(|&t| t < ei)).collect();
        let final_value = e.iter().zip(status).map(|(&ei, &s)| if s { 1.0 } else { 0.0 } - na.eval(ei)).collect();
        let grid_hazard = grid.iter().map(|&t| na.eval(t)).collect();
        Ok(GridMartingale { entry, final_value, grid_hazard })
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        if k >= self.entry[i] {
            self.final_value[i]
        } else {
            -self.grid_hazard[k]
        }
    }

    /// `M̂_i` at the last grid point, standing in for `t = ∞`.
    pub fn terminal(&self, i: usize) -> f64 {
        self.value(i, self.grid_hazard.len() - 1)
    }
}

/// Residuals, their sorted grid, the Nelson–Aalen steps and the full `n × n`
/// martingale residual matrix of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProcessSet {
    pub e: Vec<f64>,
    /// Permutation sorting `e` ascending, ties by original index.
    pub order: Vec<usize>,
    /// Sorted residuals `t_k = e_(k)`.
    pub grid: Vec<f64>,
    /// `Λ̂(t_k)`.
    pub na_steps: Vec<f64>,
    /// Row-major `n × n`: `mhat[i * n + k] = M̂_i(t_k)`.
    pub mhat: Vec<f64>,
    pub martingale: GridMartingale,
}

impl ResidualProcessSet {
    pub fn n(&self) -> usize {
        self.e.len()
    }

    pub fn mhat(&self, i: usize, k: usize) -> f64 {
        self.mhat[i * self.n() + k]
    }
}

/// Builds the residual process set at `beta`.
pub fn martingale_matrix(beta: &[f64], d: &SurvivalDataset) -> Result<ResidualProcessSet, ResidualError> {
    let e = residual_times(beta, d.log_time(), d.covariates().as_slice().expect("standard layout"));
    residual_process_set(e, d.status())
}

pub fn residual_process_set(e: Vec<f64>, status: &[bool]) -> Result<ResidualProcessSet, ResidualError> {
    let n = e.len();
    let order = residual_order(&e);
    let grid: Vec<f64> = order.iter().map(|&i| e[i]).collect();
    let martingale = GridMartingale::new(&e, status, &grid)?;
    let na_steps = martingale.grid_hazard.clone();
    let mut mhat = Vec::with_capacity(n * n);
    for i in 0..n {
        mhat.extend((0..n).map(|k| martingale.value(i, k)));
    }
    Ok(ResidualProcessSet { e, order, grid, na_steps, mhat, martingale })
}
