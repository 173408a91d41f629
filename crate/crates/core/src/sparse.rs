//! Compressed sparse row matrices used as constant graph operators.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= n_rows {
                return Err(Error::IndexOutOfRange { index: r, len: n_rows });
            }
            if c >= n_cols {
                return Err(Error::IndexOutOfRange { index: c, len: n_cols });
            }
        }
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(t: &Tensor) -> Result<Self> {
        let (r, c) = t.require_rank2("csr")?;
        let mut trip = Vec::new();
        for i in 0..r {
            for j in 0..c {
                let v = t.get(i, j);
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(r, c, trip)
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.n_rows, self.n_cols]);
        let cols = self.n_cols;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                out.data_mut()[i * cols + j] = v;
            }
        }
        out
    }

    /// `self * x` for a dense `n_cols x k` matrix.
    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        let (xr, k) = x.require_rank2("sparse-matmul")?;
        if xr != self.n_cols {
            return Err(Error::shape(
                "sparse-matmul",
                format!("[{}, {}] x [{xr}, {k}]", self.n_rows, self.n_cols),
            ));
        }
        let xd = x.data();
        let mut out = vec![0.0; self.n_rows * k];
        for i in 0..self.n_rows {
            let dst = &mut out[i * k..(i + 1) * k];
            for (j, a) in self.row(i) {
                let src = &xd[j * k..(j + 1) * k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Tensor::matrix(self.n_rows, k, out)
    }

    /// Accumulates `selfᵀ * g` into `out` (shape `n_cols x k`).
    pub(crate) fn transpose_matmul_into(&self, g: &Tensor, out: &mut [f64]) {
        let k = g.cols();
        let gd = g.data();
        for i in 0..self.n_rows {
            let src = &gd[i * k..(i + 1) * k];
            for (j, a) in self.row(i) {
                let dst = &mut out[j * k..(j + 1) * k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }

    /// `y = self * x` for a vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        let dense = self.to_dense();
        let n = self.n_rows;
        (0..n).all(|i| (0..n).all(|j| (dense.get(i, j) - dense.get(j, i)).abs() <= tol))
    }
}
