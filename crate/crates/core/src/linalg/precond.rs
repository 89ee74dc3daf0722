use serde::{Deserialize, Serialize};

use super::{Amg, CsrMatrix, LinalgError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    #[default]
    None,
    Jacobi,
    /// Incomplete LU with the sparsity pattern of the matrix.
    Ilu0,
    /// One smoothed-aggregation multigrid V-cycle.
    Amg,
}

/// Applies z = M⁻¹ r.
#[derive(Debug, Clone)]
pub enum Preconditioner {
    Identity,
    Jacobi(Vec<f64>),
    Ilu0(Ilu0),
    Amg(Box<Amg>),
}

impl Preconditioner {
    pub fn build(kind: PreconditionerKind, a: &CsrMatrix) -> Result<Self, LinalgError> {
        Ok(match kind {
            PreconditionerKind::None => Preconditioner::Identity,
            PreconditionerKind::Jacobi => {
                let d = a.diagonal();
                let mut inv = Vec::with_capacity(d.len());
                for (i, v) in d.into_iter().enumerate() {
                    if v == 0.0 || !v.is_finite() {
                        return Err(LinalgError::Singular { pivot: i });
                    }
                    inv.push(1.0 / v);
                }
                Preconditioner::Jacobi(inv)
            }
            PreconditionerKind::Ilu0 => Preconditioner::Ilu0(Ilu0::factor(a)?),
            PreconditionerKind::Amg => {
                if a.n_rows() != a.n_cols() {
                    return Err(LinalgError::InvalidMatrix("AMG needs a square matrix".into()));
                }
                Preconditioner::Amg(Box::new(Amg::build(a)))
            }
        })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Identity => z.copy_from_slice(r),
            Preconditioner::Jacobi(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * di;
                }
            }
            Preconditioner::Ilu0(f) => f.solve(r, z),
            Preconditioner::Amg(m) => m.apply(r, z),
        }
    }
}

/// ILU(0) factors stored in the pattern of the source matrix: strict lower
/// part holds L (unit diagonal implied), the rest holds U.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    factors: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return Err(LinalgError::InvalidMatrix("ILU(0) needs a square matrix".into()));
        }
        let mut f = a.clone();
        let offs = f.row_offsets().to_vec();
        let cols = f.col_indices().to_vec();
        let mut diag_pos = vec![usize::MAX; n];
        for r in 0..n {
            match cols[offs[r]..offs[r + 1]].binary_search(&r) {
                Ok(k) => diag_pos[r] = offs[r] + k,
                Err(_) => return Err(LinalgError::Singular { pivot: r }),
            }
        }
        // scatter map from column to position in the current row
        let mut pos = vec![usize::MAX; n];
        let vals = f.values_mut();
        for i in 0..n {
            let (s, e) = (offs[i], offs[i + 1]);
            for k in s..e {
                pos[cols[k]] = k;
            }
            for k in s..e {
                let col = cols[k];
                if col >= i {
                    break;
                }
                let pivot = vals[diag_pos[col]];
                if pivot == 0.0 || !pivot.is_finite() {
                    return Err(LinalgError::Singular { pivot: col });
                }
                let l = vals[k] / pivot;
                vals[k] = l;
                for kk in diag_pos[col] + 1..offs[col + 1] {
                    let p = pos[cols[kk]];
                    if p != usize::MAX {
                        vals[p] -= l * vals[kk];
                    }
                }
            }
            for k in s..e {
                pos[cols[k]] = usize::MAX;
            }
            if vals[diag_pos[i]] == 0.0 {
                return Err(LinalgError::Singular { pivot: i });
            }
        }
        Ok(Self { factors: f, diag_pos })
    }

    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        let offs = self.factors.row_offsets();
        let cols = self.factors.col_indices();
        let vals = self.factors.values();
        for i in 0..n {
            let mut acc = r[i];
            for k in offs[i]..self.diag_pos[i] {
                acc -= vals[k] * z[cols[k]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for k in self.diag_pos[i] + 1..offs[i + 1] {
                acc -= vals[k] * z[cols[k]];
            }
            z[i] = acc / vals[self.diag_pos[i]];
        }
    }
}
