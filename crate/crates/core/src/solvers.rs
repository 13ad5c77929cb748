//! Krylov solvers on plain vectors with a user-supplied operator and
//! preconditioner.

use crate::error::{DgError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverControl {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverControl {
    fn default() -> Self {
        SolverControl { rel_tol: 1e-10, max_iter: 5000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator, starting from `x`. Stops when `‖r‖ ≤ rel_tol ‖b‖`.
pub fn cg(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut precondition: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    x: &mut [f64],
    control: SolverControl,
) -> Result<SolveStats> {
    let ax = apply(x)?;
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let target = control.rel_tol * norm(b);
    let initial = norm(&r);
    if initial <= target {
        return Ok(SolveStats { iterations: 0, initial_residual: initial, final_residual: initial });
    }
    let mut z = precondition(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=control.max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(DgError::ContractViolation(format!("operator not positive definite (pᵀAp = {pap:e})")));
        }
        let alpha = rz / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r);
        if res <= target {
            return Ok(SolveStats { iterations: it, initial_residual: initial, final_residual: res });
        }
        z = precondition(&r)?;
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(DgError::ContractViolation(format!("CG did not converge in {} iterations", control.max_iter)))
}

/// Restarted GMRES with right preconditioning, starting from `x`.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut precondition: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    x: &mut [f64],
    restart: usize,
    control: SolverControl,
) -> Result<SolveStats> {
    let n = b.len();
    let target = control.rel_tol * norm(b);
    let mut initial = None;
    let mut iterations = 0;
    while iterations < control.max_iter {
        let ax = apply(x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        let first = *initial.get_or_insert(beta);
        if beta <= target {
            return Ok(SolveStats { iterations, initial_residual: first, final_residual: beta });
        }
        let m = restart.max(1);
        let mut v = vec![r.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..m {
            let z = precondition(&v[j])?;
            let mut w = apply(&z)?;
            zs.push(z);
            for i in 0..=j {
                h[i][j] = dot(&w, &v[i]);
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= h[i][j] * vk;
                }
            }
            h[j + 1][j] = norm(&w);
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let rho = h[j][j].hypot(h[j + 1][j]);
            cs[j] = h[j][j] / rho;
            sn[j] = h[j + 1][j] / rho;
            h[j][j] = rho;
            let hn = h[j + 1][j];
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            iterations += 1;
            if g[j + 1].abs() <= target || iterations >= control.max_iter || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|x| x / hn).collect());
        }
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            y[i] = (g[i] - (i + 1..used).map(|k| h[i][k] * y[k]).sum::<f64>()) / h[i][i];
        }
        for (yi, z) in y.iter().zip(&zs) {
            for k in 0..n {
                x[k] += yi * z[k];
            }
        }
    }
    let ax = apply(x)?;
    let res = norm(&b.iter().zip(&ax).map(|(b, a)| b - a).collect::<Vec<_>>());
    if res <= target {
        return Ok(SolveStats { iterations, initial_residual: initial.unwrap_or(res), final_residual: res });
    }
    Err(DgError::ContractViolation(format!("GMRES did not converge in {} iterations", control.max_iter)))
}
