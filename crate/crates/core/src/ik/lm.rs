//! Levenberg-Marquardt least squares with Nielsen's damping update and a
//! finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    /// Initial damping, relative to the largest diagonal entry of `J^T J`.
    pub initial_damping: f64,
    /// Stop when an accepted step changes `||r||` by less than this, relative.
    pub tolerance: f64,
    /// Stop when `||r||` falls below this absolute value.
    pub residual_floor: f64,
    pub max_iter: usize,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { initial_damping: 1e-3, tolerance: 1e-8, residual_floor: 1e-13, max_iter: 100, fd_step: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference Jacobian. Component `i` is perturbed by
/// `h * max(|x_i|, scale_i)`; where the residual fails on one side a
/// one-sided difference is used, and a zero column where it fails on both.
pub fn fd_jacobian<F>(f: &mut F, x: &DVector<f64>, r0: &DVector<f64>, scale: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(scale[i]);
        xp[i] = x[i] + step;
        let fp = f(&xp);
        xp[i] = x[i] - step;
        let fm = f(&xp);
        xp[i] = x[i];
        let col = match (fp, fm) {
            (Some(p), Some(m)) => (p - m) / (2.0 * step),
            (Some(p), None) => (p - r0) / step,
            (None, Some(m)) => (r0 - m) / step,
            (None, None) => continue,
        };
        jac.set_column(i, &col);
    }
    jac
}

/// Minimises `||f(x)||^2`. `f` returns `None` where it cannot be evaluated
/// (for example a diverging integration); such trial steps are rejected and
/// the damping raised. Returns `None` only if `f(x0)` itself fails.
pub fn levenberg_marquardt<F>(mut f: F, x0: DVector<f64>, scale: &DVector<f64>, opts: &LmOptions) -> Option<LmOutcome>
where
    F: FnMut(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut x = x0;
    let mut r = f(&x)?;
    let mut norm = r.norm();
    let mut mu = -1.0;
    let mut nu = 2.0;
    let mut iterations = 0;
    let mut converged = norm <= opts.residual_floor;
    let mut fresh = true;
    let mut jtj = DMatrix::zeros(0, 0);
    let mut grad = DVector::zeros(0);
    let mut diag = DVector::zeros(0);

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        if fresh {
            let jac = fd_jacobian(&mut f, &x, &r, scale, opts.fd_step);
            jtj = jac.transpose() * &jac;
            grad = jac.transpose() * &r;
            let max_diag = jtj.diagonal().max();
            if !(max_diag > 0.0) {
                break;
            }
            diag = jtj.diagonal().map(|d| d.max(1e-12 * max_diag));
            if mu < 0.0 {
                mu = opts.initial_damping;
            }
            if grad.amax() <= f64::EPSILON * max_diag.sqrt() * norm {
                converged = true;
                break;
            }
            fresh = false;
        }

        let mut lhs = jtj.clone();
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += mu * diag[i];
        }
        let Some(step) = lhs.cholesky().map(|c| c.solve(&(-&grad))) else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        if step.norm() <= f64::EPSILON * (x.norm() + f64::EPSILON) {
            converged = true;
            break;
        }

        let trial = &x + &step;
        let accepted = f(&trial).and_then(|r_new| {
            let predicted = 0.5 * step.dot(&(step.component_mul(&diag) * mu - &grad));
            let actual = 0.5 * (norm * norm - r_new.norm_squared());
            let rho = actual / predicted;
            (predicted > 0.0 && rho > 0.0).then_some((r_new, rho))
        });
        match accepted {
            Some((r_new, rho)) => {
                let new_norm = r_new.norm();
                let change = (norm - new_norm).abs();
                x = trial;
                r = r_new;
                norm = new_norm;
                mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                fresh = true;
                converged = norm <= opts.residual_floor || change <= opts.tolerance * norm.max(opts.residual_floor);
            }
            None => {
                mu *= nu;
                nu *= 2.0;
            }
        }
    }
    Some(LmOutcome { x, residual: r, iterations, converged })
}
