//! Levenberg–Marquardt with central-difference Jacobians.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub parameter_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-12,
            parameter_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// `‖Jᵀr‖∞` fell below the gradient tolerance.
    Gradient,
    /// The proposed step fell below the relative parameter tolerance.
    Step,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LmFailure {
    NonFinite,
    IterationLimit { cost: f64 },
    DampingOverflow { cost: f64 },
}

impl std::fmt::Display for LmFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LmFailure::NonFinite => write!(f, "non-finite residual at the initial point"),
            LmFailure::IterationLimit { cost } => {
                write!(f, "iteration limit reached with cost {cost:e}")
            }
            LmFailure::DampingOverflow { cost } => {
                write!(f, "damping overflow with cost {cost:e}")
            }
        }
    }
}

const DAMPING_LIMIT: f64 = 1e32;

/// Step used for the central difference of parameter `theta`.
pub fn difference_step(theta: f64) -> f64 {
    1e-7 * theta.abs().max(1.0)
}

/// Central-difference Jacobian, one column per parameter. Columns are
/// computed in parallel and assembled in order, so the result is
/// independent of scheduling.
pub fn numerical_jacobian<F>(f: &F, x: &DVector<f64>, rows: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let columns: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = difference_step(x[j]);
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[j] += h;
            minus[j] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect();
    let mut jac = DMatrix::zeros(rows, x.len());
    for (j, col) in columns.iter().enumerate() {
        jac.set_column(j, col);
    }
    jac
}

pub fn minimize<F>(f: F, init: DVector<f64>, s: &LmSettings) -> Result<LmReport, LmFailure>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let mut x = init;
    let mut r = f(&x);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(LmFailure::NonFinite);
    }
    let mut lambda = s.initial_damping;
    let mut history = vec![cost];

    for iteration in 0..s.max_iterations {
        let jac = numerical_jacobian(&f, &x, r.len());
        let gradient = jac.transpose() * &r;
        if gradient.amax() <= s.gradient_tolerance {
            return Ok(report(x, cost, iteration, history, Termination::Gradient));
        }
        let normal = jac.transpose() * &jac;
        let diag_floor = 1e-12 * normal.diagonal().amax().max(f64::MIN_POSITIVE);

        loop {
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * normal[(i, i)].max(diag_floor);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= s.damping_up;
                if lambda > DAMPING_LIMIT {
                    return Err(LmFailure::DampingOverflow { cost });
                }
                continue;
            };
            let step = -chol.solve(&gradient);
            if step.norm() <= s.parameter_tolerance * (x.norm() + s.parameter_tolerance) {
                return Ok(report(x, cost, iteration + 1, history, Termination::Step));
            }
            let candidate = &x + &step;
            let r_new = f(&candidate);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                x = candidate;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda * s.damping_down).max(1e-15);
                break;
            }
            lambda *= s.damping_up;
            if lambda > DAMPING_LIMIT {
                return Err(LmFailure::DampingOverflow { cost });
            }
        }
    }
    Err(LmFailure::IterationLimit { cost })
}

fn report(
    params: DVector<f64>,
    cost: f64,
    iterations: usize,
    cost_history: Vec<f64>,
    termination: Termination,
) -> LmReport {
    LmReport {
        params,
        cost,
        iterations,
        cost_history,
        termination,
    }
}
