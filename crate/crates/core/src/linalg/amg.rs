//! Smoothed-aggregation algebraic multigrid, used as a fixed preconditioner
//! (one V-cycle per application) for the elliptic solves.

use super::{CsrMatrix, DenseLu};

/// Coarsening stops below this many unknowns; the last level is solved
/// directly.
const COARSE_SIZE: usize = 400;
const MAX_LEVELS: usize = 20;
/// Largest coarsest level factored densely; a stalled coarsening above this
/// falls back to smoothing.
const DIRECT_MAX: usize = 2000;
/// Strength threshold `|a_ij| >= θ sqrt(|a_ii a_jj|)`.
const THETA: f64 = 0.08;

#[derive(Debug, Clone)]
struct Level {
    a: CsrMatrix,
    p: CsrMatrix,
    r: CsrMatrix,
}

#[derive(Debug, Clone)]
enum Coarse {
    Direct(DenseLu),
    /// Gauss-Seidel sweeps when the coarsest matrix is singular or too large.
    Smooth(CsrMatrix),
}

#[derive(Debug, Clone)]
pub struct Amg {
    levels: Vec<Level>,
    coarse: Coarse,
}

pub fn transpose(a: &CsrMatrix) -> CsrMatrix {
    let (m, n) = (a.n_rows(), a.n_cols());
    let mut counts = vec![0usize; n + 1];
    for &c in a.col_indices() {
        counts[c + 1] += 1;
    }
    for k in 0..n {
        counts[k + 1] += counts[k];
    }
    let mut next = counts.clone();
    let mut cols = vec![0usize; a.nnz()];
    let mut vals = vec![0.0; a.nnz()];
    for r in 0..m {
        for (c, v) in a.row(r) {
            let k = next[c];
            cols[k] = r;
            vals[k] = v;
            next[c] += 1;
        }
    }
    CsrMatrix::from_csr(n, m, counts, cols, vals).expect("transpose keeps CSR invariants")
}

/// Sparse product `A B` (Gustavson, columns sorted per row).
pub fn spgemm(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
    assert_eq!(a.n_cols(), b.n_rows(), "spgemm dimensions");
    let n = b.n_cols();
    let mut acc = vec![0.0; n];
    let mut mark = vec![usize::MAX; n];
    let mut offs = vec![0usize];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut row_cols = Vec::new();
    for r in 0..a.n_rows() {
        row_cols.clear();
        for (k, av) in a.row(r) {
            for (c, bv) in b.row(k) {
                if mark[c] != r {
                    mark[c] = r;
                    acc[c] = 0.0;
                    row_cols.push(c);
                }
                acc[c] += av * bv;
            }
        }
        row_cols.sort_unstable();
        for &c in &row_cols {
            cols.push(c);
            vals.push(acc[c]);
        }
        offs.push(cols.len());
    }
    CsrMatrix::from_csr(a.n_rows(), n, offs, cols, vals).expect("spgemm keeps CSR invariants")
}

/// Aggregate index per node.
fn aggregate(a: &CsrMatrix) -> (Vec<usize>, usize) {
    let n = a.n_rows();
    let d = a.diagonal();
    let strong: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            a.row(i)
                .filter(|&(j, v)| j != i && v != 0.0 && v.abs() >= THETA * (d[i] * d[j]).abs().sqrt())
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    const NONE: usize = usize::MAX;
    let mut agg = vec![NONE; n];
    let mut count = 0;
    // seeds whose whole neighborhood is free
    for i in 0..n {
        if agg[i] == NONE && strong[i].iter().all(|&j| agg[j] == NONE) {
            agg[i] = count;
            for &j in &strong[i] {
                agg[j] = count;
            }
            count += 1;
        }
    }
    // attach leftovers to a neighboring aggregate
    let snapshot = agg.clone();
    for i in 0..n {
        if agg[i] == NONE {
            if let Some(&j) = strong[i].iter().find(|&&j| snapshot[j] != NONE) {
                agg[i] = snapshot[j];
            }
        }
    }
    for i in 0..n {
        if agg[i] == NONE {
            agg[i] = count;
            for &j in &strong[i] {
                if agg[j] == NONE {
                    agg[j] = count;
                }
            }
            count += 1;
        }
    }
    (agg, count)
}

/// Prolongator `(I - ω D⁻¹ A) P_tent` with `ω = 4 / (3 ρ)`, `ρ` a
/// Gershgorin bound on the spectral radius of `D⁻¹ A`.
fn smoothed_prolongator(a: &CsrMatrix, agg: &[usize], n_agg: usize) -> CsrMatrix {
    let n = a.n_rows();
    let d = a.diagonal();
    let rho = (0..n)
        .map(|i| if d[i] != 0.0 { a.row(i).map(|(_, v)| v.abs()).sum::<f64>() / d[i].abs() } else { 1.0 })
        .fold(1.0, f64::max);
    let omega = 4.0 / (3.0 * rho);
    let mut offs = vec![0usize];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        entries.clear();
        entries.push((agg[i], 1.0));
        if d[i] != 0.0 {
            for (j, v) in a.row(i) {
                entries.push((agg[j], -omega * v / d[i]));
            }
        }
        entries.sort_by_key(|e| e.0);
        let mut k = 0;
        while k < entries.len() {
            let c = entries[k].0;
            let mut s = 0.0;
            while k < entries.len() && entries[k].0 == c {
                s += entries[k].1;
                k += 1;
            }
            if s != 0.0 {
                cols.push(c);
                vals.push(s);
            }
        }
        offs.push(cols.len());
    }
    CsrMatrix::from_csr(n, n_agg, offs, cols, vals).expect("prolongator keeps CSR invariants")
}

fn gauss_seidel(a: &CsrMatrix, b: &[f64], x: &mut [f64], forward: bool) {
    let n = a.n_rows();
    let offs = a.row_offsets();
    let cols = a.col_indices();
    let vals = a.values();
    let mut sweep = |i: usize| {
        let mut acc = b[i];
        let mut diag = 0.0;
        for k in offs[i]..offs[i + 1] {
            let c = cols[k];
            if c == i {
                diag = vals[k];
            } else {
                acc -= vals[k] * x[c];
            }
        }
        if diag != 0.0 {
            x[i] = acc / diag;
        }
    };
    if forward {
        (0..n).for_each(&mut sweep);
    } else {
        (0..n).rev().for_each(&mut sweep);
    }
}

impl Amg {
    pub fn build(a: &CsrMatrix) -> Self {
        let mut levels = Vec::new();
        let mut current = a.clone();
        while current.n_rows() > COARSE_SIZE && levels.len() < MAX_LEVELS {
            let (agg, n_agg) = aggregate(&current);
            if n_agg == 0 || n_agg * 10 > current.n_rows() * 9 {
                break;
            }
            let p = smoothed_prolongator(&current, &agg, n_agg);
            let r = transpose(&p);
            let coarse = spgemm(&r, &spgemm(&current, &p));
            levels.push(Level { a: current, p, r });
            current = coarse;
        }
        let direct = if current.n_rows() <= DIRECT_MAX { DenseLu::factor(&current.to_dense()).ok() } else { None };
        let coarse = match direct {
            Some(lu) => Coarse::Direct(lu),
            None => Coarse::Smooth(current),
        };
        Self { levels, coarse }
    }

    pub fn levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        if level == self.levels.len() {
            match &self.coarse {
                Coarse::Direct(lu) => {
                    let sol = lu.solve(b).expect("coarse dimensions match");
                    x.copy_from_slice(&sol);
                }
                Coarse::Smooth(a) => {
                    x.iter_mut().for_each(|v| *v = 0.0);
                    for _ in 0..10 {
                        gauss_seidel(a, b, x, true);
                        gauss_seidel(a, b, x, false);
                    }
                }
            }
            return;
        }
        let l = &self.levels[level];
        x.iter_mut().for_each(|v| *v = 0.0);
        gauss_seidel(&l.a, b, x, true);
        let mut res = vec![0.0; b.len()];
        l.a.spmv_into(x, &mut res);
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let mut bc = vec![0.0; l.r.n_rows()];
        l.r.spmv_into(&res, &mut bc);
        let mut xc = vec![0.0; bc.len()];
        self.cycle(level + 1, &bc, &mut xc);
        let mut corr = vec![0.0; x.len()];
        l.p.spmv_into(&xc, &mut corr);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        gauss_seidel(&l.a, b, x, false);
    }

    /// One V-cycle from a zero initial guess.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gmres, KrylovConfig, PreconditionerKind, TripletBuilder};

    fn laplacian(n: usize, shift: f64) -> CsrMatrix {
        let mut b = TripletBuilder::new(n * n, n * n);
        for j in 0..n {
            for i in 0..n {
                let r = j * n + i;
                let mut diag = shift;
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                        b.add(r, jj as usize * n + ii as usize, -1.0);
                        diag += 1.0;
                    }
                }
                b.add(r, r, diag);
            }
        }
        b.build()
    }

    #[test]
    fn products_match_dense() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)]);
        let b = CsrMatrix::from_triplets(3, 2, &[(0, 1, 4.0), (1, 0, 5.0), (2, 0, 6.0), (2, 1, 7.0)]);
        assert_eq!(spgemm(&a, &b).to_dense(), vec![vec![12.0, 18.0], vec![15.0, 0.0]]);
        assert_eq!(transpose(&a).to_dense(), vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 0.0]]);
    }

    #[test]
    fn aggregates_cover_every_node() {
        let a = laplacian(20, 1e-3);
        let (agg, n) = aggregate(&a);
        assert!(agg.iter().all(|&g| g < n));
        assert!(n < 400 / 3);
    }

    #[test]
    fn iterations_stay_flat_under_refinement() {
        let mut its = Vec::new();
        for n in [32, 64, 128] {
            let a = laplacian(n, 1e-4);
            let b: Vec<f64> = (0..n * n).map(|k| ((k * 7919) % 13) as f64 - 6.0).collect();
            let cfg = KrylovConfig { rtol: 1e-10, restart: 50, preconditioner: PreconditionerKind::Amg, ..Default::default() };
            let out = gmres(&a, &b, &vec![0.0; n * n], &cfg).unwrap();
            assert!(out.stats.converged);
            let r = a.spmv(&out.x).unwrap();
            let err: f64 = r.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1.1e-10 * b.iter().map(|v| v * v).sum::<f64>().sqrt());
            its.push(out.stats.iterations);
        }
        assert!(its[2] <= 40, "{its:?}");
        assert!(its[2] <= 2 * its[0] + 5, "{its:?}");
    }
}
