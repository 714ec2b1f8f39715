use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) const ARMIJO_C: f64 = 1e-4;
pub(crate) const MAX_HALVINGS: usize = 50;

/// Objective value, gradient and Hessian of a function to minimize.
pub(crate) struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub hess: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton with Armijo backtracking. A Hessian that is not positive
/// definite is regularized with a growing ridge.
pub(crate) fn newton_minimize(
    f: impl Fn(&DVector<f64>) -> Eval,
    value_only: impl Fn(&DVector<f64>) -> f64,
    x0: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonResult> {
    let mut x = x0;
    let mut cur = f(&x);
    if !cur.value.is_finite() {
        return Err(Error::Fit("objective is not finite at the starting point".into()));
    }
    let mut iterations = 0;
    loop {
        let grad_inf = cur.grad.amax();
        if grad_inf < tol || iterations >= max_iter {
            return Ok(NewtonResult {
                x,
                value: cur.value,
                grad_inf,
                hess: cur.hess,
                iterations,
                converged: grad_inf < tol,
            });
        }
        iterations += 1;
        let dir = newton_direction(&cur.hess, &cur.grad);
        let slope = cur.grad.dot(&dir);
        let slack = 1e-12 * cur.value.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        let mut finite_seen = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &x + &dir * step;
            let v = value_only(&cand);
            if v.is_finite() {
                finite_seen = true;
                if v <= cur.value + ARMIJO_C * step * slope + slack {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(cand) => {
                x = cand;
                cur = f(&x);
            }
            None if !finite_seen => {
                return Err(Error::Fit(format!(
                    "non-finite likelihood after {MAX_HALVINGS} step halvings (iteration {iterations})"
                )))
            }
            None => {
                // no representable decrease left; report where we are
                let grad_inf = cur.grad.amax();
                return Ok(NewtonResult {
                    x,
                    value: cur.value,
                    grad_inf,
                    hess: cur.hess,
                    iterations,
                    converged: grad_inf < tol,
                });
            }
        }
    }
}

fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let scale = h.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let mut ridge = 0.0;
    loop {
        let m = h + DMatrix::identity(n, n) * ridge;
        if let Some(ch) = m.cholesky() {
            return -ch.solve(g);
        }
        ridge = if ridge == 0.0 { 1e-8 * scale } else { ridge * 10.0 };
        if ridge > 1e12 * scale {
            return -g.clone();
        }
    }
}

/// Inverse of a symmetric positive definite matrix.
pub(crate) fn spd_inverse(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = h.clone().cholesky()?;
    let inv = ch.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}
