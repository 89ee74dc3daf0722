//! Restarted GMRES with right preconditioning.
//!
//! Right preconditioning keeps the monitored residual equal to the true
//! residual `b - A x`, so the stopping test is on the quantity callers care
//! about. Orthogonalization is modified Gram-Schmidt and the Hessenberg least
//! squares problem is reduced with Givens rotations.

use serde::{Deserialize, Serialize};

use super::precond::{Preconditioner, PreconditionerKind};
use super::{dot, norm2, CsrMatrix, LinalgError};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n_rows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv_into(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrylovConfig {
    pub rtol: f64,
    /// Absolute floor on the residual 2-norm; 0 disables it.
    pub atol: f64,
    /// Total inner iterations over all restart cycles.
    pub max_iters: usize,
    pub restart: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 0.0, max_iters: 2000, restart: 30, preconditioner: PreconditionerKind::None }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<(), LinalgError> {
        if !(self.rtol > 0.0) || !(self.atol >= 0.0) || self.restart < 1 || self.max_iters < 1 {
            return Err(LinalgError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Breakdown {
    /// The Krylov space became invariant, or a full restart cycle cut the
    /// residual by less than 0.1%, without reaching the tolerance.
    Stagnation,
}

const STALL: f64 = 0.999;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GmresStats {
    pub converged: bool,
    pub iterations: usize,
    pub restarts: usize,
    /// True residual 2-norm of the returned iterate.
    pub residual_norm: f64,
    pub rhs_norm: f64,
    /// Least-squares residual estimate after every inner iteration, with one
    /// entry per cycle start holding the true residual.
    pub history: Vec<f64>,
    /// Indices into `history` where a restart cycle begins.
    pub cycle_starts: Vec<usize>,
    pub breakdown: Option<Breakdown>,
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub stats: GmresStats,
}

/// Solve `A x = b` starting from `x0`, building the preconditioner from `cfg`.
pub fn gmres(a: &CsrMatrix, b: &[f64], x0: &[f64], cfg: &KrylovConfig) -> Result<GmresOutcome, LinalgError> {
    if a.n_rows() != a.n_cols() {
        return Err(LinalgError::InvalidMatrix("GMRES needs a square matrix".into()));
    }
    let m = Preconditioner::build(cfg.preconditioner, a)?;
    gmres_with(a, &m, b, x0, cfg)
}

pub fn gmres_with<A: LinearOperator>(
    a: &A,
    m: &Preconditioner,
    b: &[f64],
    x0: &[f64],
    cfg: &KrylovConfig,
) -> Result<GmresOutcome, LinalgError> {
    cfg.validate()?;
    let n = a.dim();
    for v in [b, x0] {
        if v.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: v.len() });
        }
    }
    if b.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }

    let mut x = x0.to_vec();
    let mut stats = GmresStats { rhs_norm: norm2(b), ..Default::default() };
    let target = (cfg.rtol * stats.rhs_norm).max(cfg.atol);
    let restart = cfg.restart.min(n.max(1));

    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
    // column-major Hessenberg, h[j] has j + 2 entries
    let mut h: Vec<Vec<f64>> = Vec::with_capacity(restart);
    let mut cs = vec![0.0; restart];
    let mut sn = vec![0.0; restart];
    let mut g = vec![0.0; restart + 1];

    loop {
        a.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm2(&r);
        stats.residual_norm = beta;
        stats.cycle_starts.push(stats.history.len());
        stats.history.push(beta);
        if !beta.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        if beta <= target {
            stats.converged = true;
            return Ok(GmresOutcome { x, stats });
        }
        if stats.iterations >= cfg.max_iters || stats.breakdown.is_some() {
            return Ok(GmresOutcome { x, stats });
        }
        if stats.iterations > 0 {
            stats.restarts += 1;
        }

        basis.clear();
        h.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k = 0;
        while k < restart && stats.iterations < cfg.max_iters {
            m.apply(&basis[k], &mut z);
            a.apply(&z, &mut w);
            let mut col = vec![0.0; k + 2];
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                col[i] = hij;
                for (wj, vj) in w.iter_mut().zip(v) {
                    *wj -= hij * vj;
                }
            }
            let hnext = norm2(&w);
            col[k + 1] = hnext;
            for i in 0..k {
                let t = cs[i] * col[i] + sn[i] * col[i + 1];
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
                col[i] = t;
            }
            let denom = col[k].hypot(col[k + 1]);
            if denom == 0.0 {
                // A z = 0 within the current space: nothing more to gain
                stats.breakdown = Some(Breakdown::Stagnation);
                break;
            }
            cs[k] = col[k] / denom;
            sn[k] = col[k + 1] / denom;
            col[k] = denom;
            col[k + 1] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            h.push(col);
            k += 1;
            stats.iterations += 1;
            let est = g[k].abs();
            stats.history.push(est);
            let scale = h[k - 1][k - 1].abs().max(beta);
            if est <= target || hnext <= 1e-14 * scale {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }

        if k > 0 {
            let mut y = vec![0.0; k];
            for i in (0..k).rev() {
                let s: f64 = (i + 1..k).map(|j| h[j][i] * y[j]).sum();
                y[i] = (g[i] - s) / h[i][i];
            }
            let mut u = vec![0.0; n];
            for (yj, v) in y.iter().zip(&basis) {
                for (ui, vi) in u.iter_mut().zip(v) {
                    *ui += yj * vi;
                }
            }
            m.apply(&u, &mut z);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += zi;
            }
            if k == restart && g[k].abs() > STALL * beta {
                stats.breakdown = Some(Breakdown::Stagnation);
            }
        }
    }
}
