//! Compressed sparse row matrices.

use rayon::prelude::*;

use super::LinalgError;

/// CSR matrix with strictly increasing column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// Rows larger than this are split across the rayon pool.
const PAR_MIN_ROWS: usize = 4096;

impl CsrMatrix {
    /// Build from raw CSR arrays, checking the structural invariants.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, LinalgError> {
        let bad = |why: &str| Err(LinalgError::InvalidMatrix(why.to_string()));
        if row_offsets.len() != n_rows + 1 || row_offsets[0] != 0 {
            return bad("row_offsets must have n_rows + 1 entries starting at 0");
        }
        if *row_offsets.last().unwrap() != values.len() || col_indices.len() != values.len() {
            return bad("last row offset must equal the number of stored values");
        }
        for r in 0..n_rows {
            let (s, e) = (row_offsets[r], row_offsets[r + 1]);
            if e < s {
                return bad("row_offsets must be non-decreasing");
            }
            let cols = &col_indices[s..e];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad("column indices must be strictly increasing within a row");
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return bad("column index out of range");
            }
        }
        Ok(Self { n_rows, n_cols, row_offsets, col_indices, values })
    }

    /// Assemble from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut builder = TripletBuilder::new(n_rows, n_cols);
        for &(r, c, v) in triplets {
            builder.add(r, c, v);
        }
        builder.build()
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }
    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Stored entries of row `r` as (column, value).
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[s..e].binary_search(&c).ok().map(|k| self.values[s + k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|r| self.get(r, r).unwrap_or(0.0)).collect()
    }

    /// y = A x.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.n_cols {
            return Err(LinalgError::DimensionMismatch { expected: self.n_cols, found: x.len() });
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// y = A x without dimension checks. Each row is summed left to right,
    /// so the result does not depend on the thread count.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        let row_dot = |r: usize| {
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            acc
        };
        if self.n_rows >= PAR_MIN_ROWS && rayon::current_num_threads() > 1 {
            y.par_iter_mut().enumerate().for_each(|(r, yr)| *yr = row_dot(r));
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                *yr = row_dot(r);
            }
        }
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }
}

/// Row-by-row accumulator used by the assemblers.
#[derive(Debug, Clone)]
pub struct TripletBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<Vec<(usize, f64)>>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, entries: vec![Vec::new(); n_rows] }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.n_rows && c < self.n_cols, "entry ({r}, {c}) out of bounds");
        self.entries[r].push((c, v));
    }

    pub fn build(self) -> CsrMatrix {
        let mut row_offsets = Vec::with_capacity(self.n_rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for mut row in self.entries {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if col_indices.len() > *row_offsets.last().unwrap() && *col_indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(values.len());
        }
        CsrMatrix { n_rows: self.n_rows, n_cols: self.n_cols, row_offsets, col_indices, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.add(i, i, 2.0);
            if i > 0 {
                b.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.add(i, i + 1, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn identity_is_identity() {
        let x = vec![1.5, -2.0, 3.25];
        assert_eq!(CsrMatrix::identity(3).spmv(&x).unwrap(), x);
    }

    #[test]
    fn laplacian_times_ones() {
        let y = laplacian_1d(4).spmv(&[1.0; 4]).unwrap();
        assert_eq!(y, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            laplacian_1d(4).spmv(&[1.0; 3]),
            Err(LinalgError::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), Some(3.0));
    }

    #[test]
    fn structural_checks() {
        assert!(CsrMatrix::from_csr(2, 2, vec![0, 2, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::from_csr(2, 2, vec![0, 1, 1], vec![0], vec![1.0, 2.0]).is_err());
        assert!(CsrMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 2], vec![1.0, 2.0]).is_err());
        assert!(CsrMatrix::from_csr(2, 2, vec![0, 2, 3], vec![0, 1, 1], vec![1.0, 2.0, 3.0]).is_ok());
    }

    proptest! {
        #[test]
        fn spmv_matches_dense(entries in prop::collection::vec((0usize..20, 0usize..20, -10.0f64..10.0), 1..80),
                              x in prop::collection::vec(-5.0f64..5.0, 20)) {
            let a = CsrMatrix::from_triplets(20, 20, &entries);
            let dense = a.to_dense();
            let y = a.spmv(&x).unwrap();
            for r in 0..20 {
                let yd: f64 = (0..20).map(|c| dense[r][c] * x[c]).sum();
                let scale = 1.0 + (0..20).map(|c| (dense[r][c] * x[c]).abs()).sum::<f64>();
                prop_assert!((y[r] - yd).abs() <= 1e-14 * scale);
            }
        }
    }
}
