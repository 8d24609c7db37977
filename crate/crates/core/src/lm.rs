//! Levenberg-Marquardt minimizer for small dense nonlinear least-squares
//! problems.
//!
//! Each trial step solves the damped normal equations
//!
//! ```text
//! (JᵀJ + λ·D) Δ = −Jᵀr
//! ```
//!
//! where `D` is `diag(JᵀJ)` (Marquardt scaling, the default) or the identity
//! (Levenberg). A step that lowers the sum of squared residuals is accepted and
//! λ shrinks, moving the method towards Gauss-Newton; a step that does not is
//! discarded and λ grows, moving it towards (scaled) gradient descent.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Damping above which a singular augmented matrix is treated as degenerate.
pub const DEGENERATE_DAMPING: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmError {
    #[error("residual length {residuals} is smaller than parameter count {params}")]
    Underdetermined { residuals: usize, params: usize },
    #[error("jacobian is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    JacobianShape { rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    #[error("invalid solver configuration: {0}")]
    Config(&'static str),
    #[error("initial parameters or residuals are not finite")]
    NonFinite,
}

/// How the damping term is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DampingScaling {
    /// `λ·diag(JᵀJ)`.
    #[default]
    Marquardt,
    /// `λ·I`.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    /// Accepted steps never lower λ below this.
    pub min_damping: f64,
    /// Iteration stops once the computed step norm falls below this.
    pub step_tolerance: f64,
    /// Iteration stops once an accepted step improves the objective by less than this.
    pub residual_tolerance: f64,
    /// Upper bound on trial steps (accepted and rejected).
    pub max_iterations: usize,
    pub scaling: DampingScaling,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            min_damping: 1e-7,
            step_tolerance: 1e-8,
            residual_tolerance: 1e-10,
            max_iterations: 100,
            scaling: DampingScaling::Marquardt,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if !(self.initial_damping >= 0.0 && self.initial_damping.is_finite()) {
            return Err(LmError::Config("initial_damping must be finite and non-negative"));
        }
        if !(self.min_damping >= 0.0 && self.min_damping.is_finite()) {
            return Err(LmError::Config("min_damping must be finite and non-negative"));
        }
        if !(self.damping_increase > 1.0) || !(self.damping_decrease > 1.0) {
            return Err(LmError::Config("damping factors must exceed 1"));
        }
        if !(self.step_tolerance > 0.0) || !(self.residual_tolerance > 0.0) {
            return Err(LmError::Config("tolerances must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(LmError::Config("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Snapshot of the iteration after an accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct LmState {
    pub params: DVector<f64>,
    pub damping: f64,
    pub iteration: usize,
    /// Sum of squared residuals.
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// `‖Δ‖` fell below `step_tolerance`.
    StepBelowLimit,
    /// An accepted step improved the objective by less than `residual_tolerance`.
    ObjectiveStalled,
    MaxIterations,
    /// The augmented matrix stayed singular up to [`DEGENERATE_DAMPING`].
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: DVector<f64>,
    /// Trial steps taken.
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    pub termination: Termination,
    /// Accepted states in order, starting with the initial point.
    pub history: Vec<LmState>,
}

fn objective(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Solves the damped normal equations for one trial step.
///
/// Returns `None` when the augmented matrix is not positive definite.
pub fn damped_step(
    jacobian: &DMatrix<f64>,
    residuals: &DVector<f64>,
    damping: f64,
    scaling: DampingScaling,
) -> Option<DVector<f64>> {
    let jt = jacobian.transpose();
    let mut a = &jt * jacobian;
    let g = &jt * residuals;
    for i in 0..a.nrows() {
        let d = match scaling {
            DampingScaling::Marquardt => a[(i, i)],
            DampingScaling::Identity => 1.0,
        };
        a[(i, i)] += damping * d;
    }
    let step = a.cholesky()?.solve(&(-g));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

fn check_shapes(r: &DVector<f64>, j: &DMatrix<f64>, n: usize) -> Result<(), LmError> {
    if r.len() < n {
        return Err(LmError::Underdetermined { residuals: r.len(), params: n });
    }
    if j.nrows() != r.len() || j.ncols() != n {
        return Err(LmError::JacobianShape {
            rows: j.nrows(),
            cols: j.ncols(),
            expected_rows: r.len(),
            expected_cols: n,
        });
    }
    Ok(())
}

/// Minimizes `‖r(p)‖²` starting from `initial`.
///
/// Non-convergence is reported through [`LmResult::converged`]; only contract
/// violations (shapes, configuration, non-finite start) are errors.
pub fn minimize<R, J>(
    residual_fn: R,
    jacobian_fn: J,
    initial: DVector<f64>,
    config: &LmConfig,
) -> Result<LmResult, LmError>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    config.validate()?;
    let n = initial.len();
    let mut params = initial;
    let mut r = residual_fn(&params);
    let mut jac = jacobian_fn(&params);
    check_shapes(&r, &jac, n)?;
    if !params.iter().chain(r.iter()).all(|v| v.is_finite()) {
        return Err(LmError::NonFinite);
    }

    let mut obj = objective(&r);
    let mut damping = config.initial_damping;
    let mut history = vec![LmState { params: params.clone(), damping, iteration: 0, objective: obj }];
    let mut iterations = 0;

    let termination = loop {
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let Some(step) = damped_step(&jac, &r, damping, config.scaling) else {
            if damping >= DEGENERATE_DAMPING {
                break Termination::Degenerate;
            }
            damping = (damping * config.damping_increase).max(f64::MIN_POSITIVE);
            continue;
        };

        let step_small = step.norm() < config.step_tolerance;
        let candidate = &params + &step;
        let r_new = residual_fn(&candidate);
        if r_new.len() != r.len() {
            return Err(LmError::Underdetermined { residuals: r_new.len(), params: n });
        }
        let obj_new = objective(&r_new);

        if obj_new.is_finite() && obj_new < obj {
            let improvement = obj - obj_new;
            params = candidate;
            r = r_new;
            obj = obj_new;
            damping = (damping / config.damping_decrease).max(config.min_damping.min(damping));
            jac = jacobian_fn(&params);
            check_shapes(&r, &jac, n)?;
            history.push(LmState { params: params.clone(), damping, iteration: iterations, objective: obj });
            if step_small {
                break Termination::StepBelowLimit;
            }
            if improvement < config.residual_tolerance {
                break Termination::ObjectiveStalled;
            }
        } else {
            if step_small {
                break Termination::StepBelowLimit;
            }
            damping = (damping * config.damping_increase).max(f64::MIN_POSITIVE);
        }
    };

    let converged = matches!(termination, Termination::StepBelowLimit | Termination::ObjectiveStalled);
    Ok(LmResult { params, iterations, final_objective: obj, converged, termination, history })
}
