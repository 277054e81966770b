use super::tensor::Matrix;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists. Columns within a row are
    /// sorted on construction.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < n_cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `self * m` for dense `m`.
    pub fn mul_dense(&self, m: &Matrix) -> Matrix {
        assert_eq!(m.rows(), self.n_cols);
        let n = m.cols();
        let mut out = Matrix::zeros(self.n_rows, n);
        let src = m.as_slice();
        let dst = out.as_mut_slice();
        for r in 0..self.n_rows {
            let orow = &mut dst[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, &b) in orow.iter_mut().zip(&src[c * n..(c + 1) * n]) {
                    *o += v * b;
                }
            }
        }
        out
    }

    /// `self^T * m` for dense `m`, by scatter.
    pub fn t_mul_dense(&self, m: &Matrix) -> Matrix {
        assert_eq!(m.rows(), self.n_rows);
        let n = m.cols();
        let mut out = Matrix::zeros(self.n_cols, n);
        let src = m.as_slice();
        let dst = out.as_mut_slice();
        for r in 0..self.n_rows {
            let mrow = &src[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                for (o, &b) in dst[c * n..(c + 1) * n].iter_mut().zip(mrow) {
                    *o += v * b;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_transposed_products() {
        let s = CsrMatrix::from_rows(3, vec![vec![(2, 1.0), (0, 2.0)], vec![], vec![(1, 3.0)]]);
        let m = Matrix::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let d = s.to_dense();
        assert_eq!(s.mul_dense(&m), d.matmul(&m));
        assert_eq!(s.t_mul_dense(&m), d.t_matmul(&m));
        assert_eq!(s.mul_vec(&[1., 1., 1.]), vec![3., 0., 3.]);
    }
}
