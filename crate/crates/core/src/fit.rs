//! Box-constrained Levenberg–Marquardt for small dense problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A scalar model `y = f(x; p)` with an analytic gradient in `p`.
pub trait CurveModel {
    fn n_params(&self) -> usize;
    /// Value at `x`; the parameter gradient is written into `grad`.
    fn eval(&self, params: &[f64], x: f64, grad: &mut [f64]) -> f64;
    /// Keeps parameters inside the feasible box.
    fn project(&self, _params: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative parameter step treated as converged.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// One-sigma errors from the residual-scaled covariance.
    pub std_errors: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
}

fn residuals<M: CurveModel>(
    model: &M,
    params: &[f64],
    xs: &[f64],
    ys: &[f64],
    jac: Option<&mut DMatrix<f64>>,
) -> (DVector<f64>, f64) {
    let k = model.n_params();
    let mut grad = vec![0.0; k];
    let mut r = DVector::zeros(xs.len());
    match jac {
        Some(j) => {
            for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                r[i] = model.eval(params, x, &mut grad) - y;
                for (c, g) in grad.iter().enumerate() {
                    j[(i, c)] = *g;
                }
            }
        }
        None => {
            for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
                r[i] = model.eval(params, x, &mut grad) - y;
            }
        }
    }
    let cost = r.norm_squared();
    (r, cost)
}

pub fn levenberg_marquardt<M: CurveModel>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    initial: &[f64],
    options: LmOptions,
) -> Result<LmReport> {
    let k = model.n_params();
    let n = xs.len();
    if n <= k {
        return Err(Error::Input(format!(
            "{n} samples cannot constrain {k} parameters"
        )));
    }
    let mut params = initial.to_vec();
    model.project(&mut params);
    let mut jac = DMatrix::zeros(n, k);
    let (mut r, mut cost) = residuals(model, &params, xs, ys, Some(&mut jac));
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        if jtr.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let mut trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            model.project(&mut trial);
            let (_, trial_cost) = residuals(model, &trial, xs, ys, None);
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel_step = params
                    .iter()
                    .zip(&trial)
                    .map(|(p, t)| (t - p).abs() / p.abs().max(1e-300))
                    .fold(0.0, f64::max);
                params = trial;
                let (r_new, c_new) = residuals(model, &params, xs, ys, Some(&mut jac));
                let small_gain = cost - c_new <= 1e-15 * cost;
                r = r_new;
                cost = c_new;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_step < options.step_tolerance || (small_gain && rel_step < 1e-6) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // No descent direction left: stationary to machine precision.
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            best: params,
            cost,
        });
    }

    let jtj = jac.transpose() * &jac;
    let svd = jtj.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-14 {
        return Err(Error::RankDeficient(format!(
            "normal matrix condition {:.3e} at the solution",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let cov = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let s2 = cost / (n - k) as f64;
    let std_errors = (0..k).map(|i| (cov[(i, i)] * s2).max(0.0).sqrt()).collect();

    Ok(LmReport {
        params,
        std_errors,
        cost,
        iterations,
    })
}
