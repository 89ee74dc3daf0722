//! Damped Newton driver with GMRES inner solves, and a central-difference
//! Jacobian checker.

use serde::{Deserialize, Serialize};

use super::gmres::{gmres, KrylovConfig};
use super::{norm2, norm_inf, CsrMatrix, LinalgError};

/// Residual map with an analytic Jacobian.
pub trait NonlinearSystem {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64]) -> CsrMatrix;
}

/// Adapter for closure pairs.
pub struct FnSystem<R, J> {
    pub dim: usize,
    pub residual: R,
    pub jacobian: J,
}

impl<R, J> NonlinearSystem for FnSystem<R, J>
where
    R: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64]) -> CsrMatrix,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        (self.residual)(x, out)
    }
    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        (self.jacobian)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    None,
    /// Halve the step until the residual 2-norm decreases, at most 8 times.
    #[default]
    Backtracking,
}

const MAX_HALVINGS: usize = 8;
const INEXACT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    /// Stop when ‖F‖∞ <= abs_tol ...
    pub abs_tol: f64,
    /// ... or when ‖F‖∞ <= rel_tol ‖F(x0)‖∞.
    pub rel_tol: f64,
    pub max_iters: usize,
    pub damping: Damping,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-14, max_iters: 20, damping: Damping::Backtracking }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<(), LinalgError> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) || self.max_iters < 1 {
            return Err(LinalgError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonStats {
    pub converged: bool,
    pub iterations: usize,
    pub linear_iterations: usize,
    /// ‖F‖∞ at x0 and after every update.
    pub residual_history: Vec<f64>,
}

impl NewtonStats {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub stats: NewtonStats,
}

pub fn newton<S: NonlinearSystem>(
    system: &S,
    x0: &[f64],
    cfg: &NewtonConfig,
    krylov: &KrylovConfig,
) -> Result<NewtonOutcome, LinalgError> {
    cfg.validate()?;
    krylov.validate()?;
    let n = system.dim();
    if x0.len() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, found: x0.len() });
    }
    let mut x = x0.to_vec();
    let mut f = vec![0.0; n];
    system.residual(&x, &mut f);
    let mut stats = NewtonStats::default();
    let mut fnorm = norm_inf(&f);
    if !fnorm.is_finite() {
        return Err(LinalgError::NonFiniteResidual { iteration: 0 });
    }
    stats.residual_history.push(fnorm);
    let f0 = fnorm;
    let mut trial = vec![0.0; n];
    let mut ftrial = vec![0.0; n];

    while !(fnorm <= cfg.abs_tol || fnorm <= cfg.rel_tol * f0) {
        if stats.iterations >= cfg.max_iters {
            return Ok(NewtonOutcome { x, stats });
        }
        let iteration = stats.iterations + 1;
        let jac = system.jacobian(&x);
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let lin = gmres(&jac, &rhs, &vec![0.0; n], krylov)
            .map_err(|e| LinalgError::LinearSolve { iteration, reason: e.to_string() })?;
        stats.linear_iterations += lin.stats.iterations;
        // an unconverged direction is still used when it halves the linear
        // residual; the line search decides whether it helps
        if !lin.stats.converged && !(lin.stats.residual_norm <= INEXACT * lin.stats.rhs_norm) {
            return Err(LinalgError::LinearSolve {
                iteration,
                reason: format!(
                    "GMRES stopped after {} iterations at residual {:.3e} (rhs {:.3e})",
                    lin.stats.iterations, lin.stats.residual_norm, lin.stats.rhs_norm
                ),
            });
        }
        let dx = lin.x;

        let f2 = norm2(&f);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for ((t, xi), di) in trial.iter_mut().zip(&x).zip(&dx) {
                *t = xi + lambda * di;
            }
            system.residual(&trial, &mut ftrial);
            let ok = ftrial.iter().all(|v| v.is_finite());
            if cfg.damping == Damping::None {
                if !ok {
                    return Err(LinalgError::NonFiniteResidual { iteration });
                }
                accepted = true;
                break;
            }
            if ok && norm2(&ftrial) < f2 {
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            if ftrial.iter().any(|v| !v.is_finite()) {
                return Err(LinalgError::NonFiniteResidual { iteration });
            }
            return Err(LinalgError::LineSearch { iteration, residual: fnorm });
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut f, &mut ftrial);
        fnorm = norm_inf(&f);
        stats.iterations = iteration;
        stats.residual_history.push(fnorm);
    }
    stats.converged = true;
    Ok(NewtonOutcome { x, stats })
}

/// max over stored Jacobian entries of
/// |J_ij - (F_i(x + h e_j) - F_i(x - h e_j)) / 2h| / (1 + |J_ij|).
pub fn check_jacobian<S: NonlinearSystem>(system: &S, x: &[f64], h: f64) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    let n = system.dim();
    let jac = system.jacobian(x);
    // column-wise access to the stored pattern
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for r in 0..jac.n_rows() {
        for (c, v) in jac.row(r) {
            by_col[c].push((r, v));
        }
    }
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut worst = 0.0f64;
    for (j, entries) in by_col.iter().enumerate() {
        if entries.is_empty() {
            continue;
        }
        xp[j] = x[j] + h;
        system.residual(&xp, &mut fp);
        xp[j] = x[j] - h;
        system.residual(&xp, &mut fm);
        xp[j] = x[j];
        for &(i, jij) in entries {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            worst = worst.max((jij - fd).abs() / (1.0 + jij.abs()));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(f: fn(f64) -> f64, df: fn(f64) -> f64) -> impl NonlinearSystem {
        FnSystem {
            dim: 1,
            residual: move |x: &[f64], out: &mut [f64]| out[0] = f(x[0]),
            jacobian: move |x: &[f64]| CsrMatrix::from_triplets(1, 1, &[(0, 0, df(x[0]))]),
        }
    }

    #[test]
    fn linear_problem_in_one_step() {
        let sys = FnSystem {
            dim: 3,
            residual: |x: &[f64], out: &mut [f64]| out.copy_from_slice(x),
            jacobian: |_: &[f64]| CsrMatrix::identity(3),
        };
        let out = newton(&sys, &[1.0, -2.0, 3.0], &NewtonConfig::default(), &KrylovConfig::default()).unwrap();
        assert!(out.stats.converged);
        assert_eq!(out.stats.iterations, 1);
    }

    #[test]
    fn square_root_of_four() {
        // independent trace: x_{k+1} = x_k - (x_k² - 4) / (2 x_k) from 3
        let mut trace = vec![3.0f64];
        for _ in 0..6 {
            let x = *trace.last().unwrap();
            trace.push(x - (x * x - 4.0) / (2.0 * x));
        }
        let sys = scalar(|x| x * x - 4.0, |x| 2.0 * x);
        let cfg = NewtonConfig { abs_tol: 1e-13, ..Default::default() };
        let out = newton(&sys, &[3.0], &cfg, &KrylovConfig::default()).unwrap();
        assert!(out.stats.converged && out.stats.iterations <= 8);
        assert!((out.x[0] - 2.0).abs() < 1e-12);
        // iterates follow the classical trace
        let k = out.stats.iterations;
        assert!((out.x[0] - trace[k]).abs() < 1e-14);
        // quadratic decay: e_{k+1} <= C e_k² with C = 1/(2·2) asymptotically
        let h = &out.stats.residual_history;
        for w in h.windows(2).skip(1) {
            if w[0] < 1e-2 && w[1] > 1e-15 {
                assert!(w[1] <= w[0] * w[0]);
            }
        }
    }

    #[test]
    fn non_finite_residual_aborts() {
        let sys = scalar(|x| if x > 10.0 { f64::NAN } else { x.ln() }, |x| 1.0 / x);
        let err = newton(&sys, &[f64::NAN], &NewtonConfig::default(), &KrylovConfig::default()).unwrap_err();
        assert!(matches!(err, LinalgError::NonFiniteResidual { iteration: 0 }));
    }

    #[test]
    fn iteration_cap_returns_last_iterate() {
        let sys = scalar(|x| x.atan(), |x| 1.0 / (1.0 + x * x));
        let cfg = NewtonConfig { max_iters: 2, damping: Damping::None, ..Default::default() };
        let out = newton(&sys, &[1.3], &cfg, &KrylovConfig::default()).unwrap();
        assert!(!out.stats.converged);
        assert_eq!(out.stats.residual_history.len(), 3);
    }

    #[test]
    fn backtracking_rescues_arctan() {
        // undamped Newton on atan diverges from x0 = 1.5
        let sys = scalar(|x| x.atan(), |x| 1.0 / (1.0 + x * x));
        let out = newton(&sys, &[1.5], &NewtonConfig::default(), &KrylovConfig::default()).unwrap();
        assert!(out.stats.converged);
        assert!(out.x[0].abs() < 1e-10);
    }

    fn quadratic_system(corrupt: bool) -> impl NonlinearSystem {
        FnSystem {
            dim: 2,
            residual: |x: &[f64], out: &mut [f64]| {
                out[0] = x[0] * x[0] + 3.0 * x[1];
                out[1] = x[0] * x[1] - 1.0;
            },
            jacobian: move |x: &[f64]| {
                let j00 = if corrupt { 2.0 * x[0] + 0.5 } else { 2.0 * x[0] };
                CsrMatrix::from_triplets(2, 2, &[(0, 0, j00), (0, 1, 3.0), (1, 0, x[1]), (1, 1, x[0])])
            },
        }
    }

    #[test]
    fn jacobian_check() {
        let lin = FnSystem {
            dim: 2,
            residual: |x: &[f64], out: &mut [f64]| {
                out[0] = 2.0 * x[0] - x[1];
                out[1] = x[0] + 4.0 * x[1];
            },
            jacobian: |_: &[f64]| CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, 1.0), (1, 1, 4.0)]),
        };
        assert!(check_jacobian(&lin, &[0.3, -0.7], 1e-6) <= 1e-10);
        assert!(check_jacobian(&quadratic_system(false), &[0.3, -0.7], 1e-6) <= 1e-8);
        assert!(check_jacobian(&quadratic_system(true), &[0.3, -0.7], 1e-6) > 1e-2);
    }
}
