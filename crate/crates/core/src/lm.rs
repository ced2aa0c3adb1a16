//! Levenberg-Marquardt for small dense problems.

use nalgebra::{DMatrix, DVector};

/// A weighted least-squares problem `min sum r_i(p)^2`.
pub(crate) trait LeastSquaresProblem {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    /// Jacobian of the residuals, rows = residuals, columns = parameters.
    fn jacobian(&self, params: &DVector<f64>) -> DMatrix<f64>;

    /// Map a trial point back into the feasible region.
    fn project(&self, _params: &mut DVector<f64>) {}
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmSettings {
    pub max_iterations: usize,
    /// Relative cost decrease below which a step counts as stalled.
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub params: DVector<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-15;
const LAMBDA_MAX: f64 = 1e14;
// consecutive accepted steps below tolerance before declaring convergence
const STALL_STEPS: usize = 3;

fn cost_of(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

pub(crate) fn minimize<P: LeastSquaresProblem>(
    problem: &P,
    init: DVector<f64>,
    settings: LmSettings,
) -> LmOutcome {
    let mut params = init;
    problem.project(&mut params);
    let mut residuals = problem.residuals(&params);
    let mut cost = cost_of(&residuals);
    let mut lambda = LAMBDA_INIT;
    let mut stalled = 0;
    let mut jac = problem.jacobian(&params);
    let mut recompute = false;

    for iteration in 1..=settings.max_iterations {
        if cost == 0.0 {
            return LmOutcome {
                params,
                cost,
                iterations: iteration - 1,
                converged: true,
            };
        }
        if recompute {
            jac = problem.jacobian(&params);
            recompute = false;
        }
        let jt = jac.transpose();
        let normal = &jt * &jac;
        let gradient = &jt * &residuals;

        let mut damped = normal.clone();
        for j in 0..damped.ncols() {
            let d = normal[(j, j)].max(f64::MIN_POSITIVE.sqrt());
            damped[(j, j)] += lambda * d;
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-&gradient)),
            None => {
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    break;
                }
                continue;
            }
        };

        let mut trial = &params + &step;
        problem.project(&mut trial);
        let trial_res = problem.residuals(&trial);
        let trial_cost = cost_of(&trial_res);

        if trial_cost.is_finite() && trial_cost < cost {
            let rel = (cost - trial_cost) / cost;
            params = trial;
            residuals = trial_res;
            cost = trial_cost;
            recompute = true;
            lambda = (lambda / 10.0).max(LAMBDA_MIN);
            if rel < settings.tolerance {
                stalled += 1;
                if stalled >= STALL_STEPS {
                    return LmOutcome {
                        params,
                        cost,
                        iterations: iteration,
                        converged: true,
                    };
                }
            } else {
                stalled = 0;
            }
        } else {
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // no descent direction left at machine precision
                return LmOutcome {
                    params,
                    cost,
                    iterations: iteration,
                    converged: true,
                };
            }
        }
    }

    LmOutcome {
        params,
        cost,
        iterations: settings.max_iterations,
        converged: false,
    }
}
