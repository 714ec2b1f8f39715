use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cohort::{CohortTable, Standardizer};
use super::optim::{newton_minimize, spd_inverse, Eval};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullOptions {
    /// Holds `log rho` at this value instead of estimating it.
    pub fixed_log_rho: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WeibullOptions {
    fn default() -> Self {
        WeibullOptions {
            fixed_log_rho: None,
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

/// Weibull accelerated failure time model: `S(t | x) = exp(-(t / lambda)^rho)`,
/// `lambda = exp(beta0 + beta . x)`, `rho = exp(log_rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeibullAftModel {
    pub columns: Vec<String>,
    pub standardizer: Standardizer,
    /// Raw-scale intercept and coefficients.
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub log_rho: f64,
    pub rho_fixed: bool,
    /// Coefficients on the fitting scale (after standardization).
    pub beta0_std: f64,
    pub beta_std: Vec<f64>,
    /// Raw-scale covariance of `(beta0, beta..., log_rho)`; rows of constant
    /// columns and of a fixed `log_rho` are zero.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf: f64,
}

impl WeibullAftModel {
    pub fn rho(&self) -> f64 {
        self.log_rho.exp()
    }

    /// `log lambda` for a raw covariate row.
    pub fn log_scale(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::arg(format!("expected {} covariates, got {}", self.beta.len(), x.len())));
        }
        let z = self.standardizer.apply(x);
        Ok(self.beta0_std + self.beta_std.iter().zip(&z).map(|(b, v)| b * v).sum::<f64>())
    }

    pub fn survival(&self, t: f64, x: &[f64]) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::arg("negative time"));
        }
        let lam = self.log_scale(x)?.exp();
        Ok((-(t / lam).powf(self.rho())).exp())
    }

    pub fn median_survival(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_scale(x)?.exp() * std::f64::consts::LN_2.powf(1.0 / self.rho()))
    }
}

/// Negative log-likelihood with gradient and Hessian in `theta = (beta0, beta..., log_rho)`,
/// where `log_rho` is omitted from `theta` when `fixed_log_rho` is given.
pub fn weibull_objective(
    theta: &[f64],
    x: &[Vec<f64>],
    time: &[f64],
    event: &[u8],
    fixed_log_rho: Option<f64>,
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let e = eval(&DVector::from_column_slice(theta), x, time, event, fixed_log_rho, true);
    let h = (0..theta.len()).map(|i| e.hess.row(i).iter().copied().collect()).collect();
    (e.value, e.grad.iter().copied().collect(), h)
}

fn eval(theta: &DVector<f64>, x: &[Vec<f64>], time: &[f64], event: &[u8], fixed: Option<f64>, second: bool) -> Eval {
    let p = x.first().map_or(0, |r| r.len());
    let np = theta.len();
    let gamma = fixed.unwrap_or_else(|| theta[np - 1]);
    let rho = gamma.exp();
    let mut value = 0.0;
    let mut grad = DVector::zeros(np);
    let mut hess = DMatrix::zeros(np, np);
    let mut feat = vec![0.0; p + 1];
    for i in 0..x.len() {
        feat[0] = 1.0;
        feat[1..].copy_from_slice(&x[i]);
        let eta: f64 = (0..=p).map(|k| theta[k] * feat[k]).sum();
        let d = event[i] as f64;
        let z = rho * (time[i].ln() - eta);
        let u = z.exp();
        value -= d * (gamma + z - time[i].ln()) - u;
        if !second && !value.is_finite() {
            continue;
        }
        // derivatives of the per-row log-likelihood
        let l_eta = rho * (u - d);
        let l_gam = d * (1.0 + z) - u * z;
        let l_ee = -rho * rho * u;
        let l_eg = rho * (u - d) + rho * u * z;
        let l_gg = d * z - u * z * (1.0 + z);
        for a in 0..=p {
            grad[a] -= l_eta * feat[a];
            if second {
                for b in 0..=a {
                    hess[(a, b)] -= l_ee * feat[a] * feat[b];
                }
            }
        }
        if fixed.is_none() {
            grad[np - 1] -= l_gam;
            if second {
                for a in 0..=p {
                    hess[(np - 1, a)] -= l_eg * feat[a];
                }
                hess[(np - 1, np - 1)] -= l_gg;
            }
        }
    }
    for a in 0..np {
        for b in 0..a {
            hess[(b, a)] = hess[(a, b)];
        }
    }
    Eval { value, grad, hess }
}

pub fn fit_weibull_aft(tbl: &CohortTable) -> Result<WeibullAftModel> {
    fit_weibull_aft_with(tbl, &WeibullOptions::default())
}

pub fn fit_weibull_aft_with(tbl: &CohortTable, opts: &WeibullOptions) -> Result<WeibullAftModel> {
    if tbl.has_missing() {
        return Err(Error::arg("cohort has missing cells; impute first"));
    }
    if tbl.n_events() == 0 {
        return Err(Error::Fit("no events in cohort".into()));
    }
    let p = tbl.columns.len();
    let st = Standardizer::fit(&tbl.x, p);
    let active: Vec<usize> = (0..p).filter(|&j| !st.constant[j]).collect();
    let xs: Vec<Vec<f64>> = tbl
        .x
        .iter()
        .map(|r| {
            let z = st.apply(r);
            active.iter().map(|&j| z[j]).collect()
        })
        .collect();
    let q = active.len();
    let free_rho = opts.fixed_log_rho.is_none();
    let np = q + 1 + usize::from(free_rho);
    let mean_t = tbl.time.iter().sum::<f64>() / tbl.len() as f64;
    let mut theta0 = DVector::zeros(np);
    theta0[0] = mean_t.ln();

    let fixed = opts.fixed_log_rho;
    let res = newton_minimize(
        |th| eval(th, &xs, &tbl.time, &tbl.event, fixed, true),
        |th| eval(th, &xs, &tbl.time, &tbl.event, fixed, false).value,
        theta0,
        opts.tol,
        opts.max_iter,
    )?;
    if !res.converged {
        log::warn!("weibull fit stopped after {} iterations, |grad| = {:.3e}", res.iterations, res.grad_inf);
    }

    let log_rho = fixed.unwrap_or(res.x[np - 1]);
    let beta0_std = res.x[0];
    let mut beta_std = vec![0.0; p];
    for (k, &j) in active.iter().enumerate() {
        beta_std[j] = res.x[1 + k];
    }
    let beta: Vec<f64> = (0..p).map(|j| beta_std[j] / st.scale[j]).collect();
    let beta0 = beta0_std - (0..p).map(|j| beta_std[j] * st.mean[j] / st.scale[j]).sum::<f64>();

    // covariance: embed active block into (beta0, beta..., log_rho) and map to raw scale
    let covariance = spd_inverse(&res.hess).map(|inv| {
        let full = p + 2;
        let pos = |k: usize| -> usize {
            if k == 0 {
                0
            } else if k <= q {
                1 + active[k - 1]
            } else {
                p + 1
            }
        };
        let mut c_std = DMatrix::zeros(full, full);
        for a in 0..np {
            for b in 0..np {
                c_std[(pos(a), pos(b))] = inv[(a, b)];
            }
        }
        let mut jac = DMatrix::identity(full, full);
        for j in 0..p {
            jac[(0, 1 + j)] = -st.mean[j] / st.scale[j];
            jac[(1 + j, 1 + j)] = 1.0 / st.scale[j];
        }
        let c = &jac * c_std * jac.transpose();
        (0..full).map(|i| c.row(i).iter().copied().collect()).collect()
    });

    Ok(WeibullAftModel {
        columns: tbl.columns.clone(),
        standardizer: st,
        beta0,
        beta,
        log_rho,
        rho_fixed: !free_rho,
        beta0_std,
        beta_std,
        covariance,
        log_likelihood: -res.value,
        iterations: res.iterations,
        converged: res.converged,
        grad_inf: res.grad_inf,
    })
}
