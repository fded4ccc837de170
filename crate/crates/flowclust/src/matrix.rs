//! Matrix storage for the clustering pipeline.
//!
//! [`FlowMatrix`] is the square, column-oriented matrix the Markov clustering
//! iterates on. Columns are transition distributions, so all primitives here
//! (products, normalization, thresholding, diffs) work column-wise and run in
//! parallel across columns. Storage starts sparse and falls back to a dense
//! layout when fill-in from repeated products makes sparsity pointless.
//!
//! [`DenseMatrix`] is a plain column-major rectangle used for gradients and
//! model weights, where fill-in is the common case.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nonzero fraction beyond which a product result switches to dense storage.
const DENSIFY_FRACTION: f64 = 0.25;
/// Nonzero fraction below which a pruned dense matrix switches back to sparse.
const SPARSIFY_FRACTION: f64 = 0.125;

/// Square column-oriented matrix with adaptive sparse/dense storage.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix<T> {
    n: usize,
    storage: Storage<T>,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage<T> {
    /// Per-column `(row, value)` pairs, sorted by row, zero entries absent.
    Sparse(Vec<Vec<(u32, T)>>),
    /// Column-major `n * n` buffer.
    Dense(Vec<T>),
}

impl<T: Scalar> FlowMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        FlowMatrix {
            n,
            storage: Storage::Sparse(vec![Vec::new(); n]),
        }
    }

    pub fn identity(n: usize) -> Self {
        let cols = (0..n).map(|j| vec![(j as u32, T::one())]).collect();
        FlowMatrix {
            n,
            storage: Storage::Sparse(cols),
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicate entries accumulate.
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, T)>) -> Self {
        let mut cols: Vec<Vec<(u32, T)>> = vec![Vec::new(); n];
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet out of bounds");
            if v != T::zero() {
                cols[c].push((r as u32, v));
            }
        }
        for col in &mut cols {
            col.sort_by_key(|&(r, _)| r);
            let mut merged: Vec<(u32, T)> = Vec::with_capacity(col.len());
            for &(r, v) in col.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == r => last.1 += v,
                    _ => merged.push((r, v)),
                }
            }
            *col = merged;
        }
        FlowMatrix {
            n,
            storage: Storage::Sparse(cols),
        }
    }

    /// Builds a dense matrix from a column-major buffer of length `n * n`.
    pub fn from_dense_data(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n);
        FlowMatrix {
            n,
            storage: Storage::Dense(data),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Count of stored nonzero entries.
    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Sparse(cols) => cols.iter().map(Vec::len).sum(),
            Storage::Dense(data) => data.iter().filter(|&&v| v != T::zero()).count(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        assert!(row < self.n && col < self.n);
        match &self.storage {
            Storage::Sparse(cols) => cols[col]
                .binary_search_by_key(&(row as u32), |&(r, _)| r)
                .map(|k| cols[col][k].1)
                .unwrap_or_else(|_| T::zero()),
            Storage::Dense(data) => data[col * self.n + row],
        }
    }

    /// Iterates the stored nonzeros of one column in ascending row order.
    pub fn col(&self, col: usize) -> ColIter<'_, T> {
        match &self.storage {
            Storage::Sparse(cols) => ColIter::Sparse(cols[col].iter()),
            Storage::Dense(data) => ColIter::Dense {
                slice: &data[col * self.n..(col + 1) * self.n],
                row: 0,
            },
        }
    }

    pub fn col_sum(&self, col: usize) -> T {
        self.col(col).map(|(_, v)| v).sum()
    }

    pub fn col_sums(&self) -> Vec<T> {
        (0..self.n).map(|j| self.col_sum(j)).collect()
    }

    /// Total of all entries.
    pub fn total_mass(&self) -> T {
        (0..self.n).map(|j| self.col_sum(j)).sum()
    }

    /// Matrix product `self * rhs`, parallel over result columns.
    ///
    /// The result densifies when fill-in exceeds [`DENSIFY_FRACTION`] or when
    /// either operand is already dense.
    pub fn matmul(&self, rhs: &FlowMatrix<T>) -> Result<FlowMatrix<T>> {
        if self.n != rhs.n {
            return Err(Error::DimensionMismatch {
                lhs: self.n,
                rhs: rhs.n,
            });
        }
        let n = self.n;
        if self.is_dense() || rhs.is_dense() {
            let mut data = vec![T::zero(); n * n];
            data.par_chunks_mut(n).enumerate().for_each(|(j, out)| {
                for (k, w) in rhs.col(j) {
                    self.axpy_col(k, w, out);
                }
            });
            return Ok(FlowMatrix {
                n,
                storage: Storage::Dense(data),
            });
        }
        let cols: Vec<Vec<(u32, T)>> = (0..n)
            .into_par_iter()
            .map_init(
                || vec![T::zero(); n],
                |scratch, j| {
                    for (k, w) in rhs.col(j) {
                        for (r, v) in self.col(k) {
                            scratch[r] += v * w;
                        }
                    }
                    let mut out = Vec::new();
                    for (r, s) in scratch.iter_mut().enumerate() {
                        if *s != T::zero() {
                            out.push((r as u32, *s));
                            *s = T::zero();
                        }
                    }
                    out
                },
            )
            .collect();
        let mut result = FlowMatrix {
            n,
            storage: Storage::Sparse(cols),
        };
        if result.nnz() as f64 > DENSIFY_FRACTION * (n * n) as f64 {
            result = result.densified();
        }
        Ok(result)
    }

    /// Adds `w * self[:, k]` into a dense column buffer.
    fn axpy_col(&self, k: usize, w: T, out: &mut [T]) {
        match &self.storage {
            Storage::Sparse(cols) => {
                for &(r, v) in &cols[k] {
                    out[r as usize] += v * w;
                }
            }
            Storage::Dense(data) => {
                let col = &data[k * self.n..(k + 1) * self.n];
                for (o, &v) in out.iter_mut().zip(col) {
                    *o += v * w;
                }
            }
        }
    }

    /// Divides every column by its sum; fails on the first all-zero column.
    pub fn normalize_columns_in_place(&mut self) -> Result<()> {
        let sums = self.col_sums();
        if let Some(column) = sums.iter().position(|&s| s == T::zero()) {
            return Err(Error::ZeroColumn {
                column,
                iteration: None,
            });
        }
        match &mut self.storage {
            Storage::Sparse(cols) => {
                cols.par_iter_mut().zip(&sums).for_each(|(col, &s)| {
                    for (_, v) in col.iter_mut() {
                        *v /= s;
                    }
                });
            }
            Storage::Dense(data) => {
                data.par_chunks_mut(self.n).zip(&sums).for_each(|(col, &s)| {
                    for v in col.iter_mut() {
                        *v /= s;
                    }
                });
            }
        }
        Ok(())
    }

    /// Zeroes entries strictly below `threshold`; sparse storage drops them.
    pub fn prune_in_place(&mut self, threshold: T) {
        match &mut self.storage {
            Storage::Sparse(cols) => {
                cols.par_iter_mut()
                    .for_each(|col| col.retain(|&(_, v)| v >= threshold));
            }
            Storage::Dense(data) => {
                data.par_iter_mut().for_each(|v| {
                    if *v < threshold {
                        *v = T::zero();
                    }
                });
            }
        }
        if self.is_dense() {
            let n = self.n;
            if (self.nnz() as f64) < SPARSIFY_FRACTION * (n * n) as f64 {
                *self = self.sparsified();
            }
        }
    }

    /// Largest absolute entry-wise difference between two matrices.
    pub fn max_abs_diff(&self, other: &FlowMatrix<T>) -> T {
        assert_eq!(self.n, other.n);
        let n = self.n;
        (0..n)
            .into_par_iter()
            .map_init(
                || vec![T::zero(); n],
                |scratch, j| {
                    let mut touched = Vec::new();
                    for (r, v) in self.col(j) {
                        scratch[r] = v;
                        touched.push(r);
                    }
                    let mut worst = T::zero();
                    for (r, v) in other.col(j) {
                        let d = (scratch[r] - v).abs();
                        if scratch[r] == T::zero() {
                            touched.push(r);
                        }
                        scratch[r] = T::zero();
                        if d > worst {
                            worst = d;
                        }
                    }
                    for r in touched {
                        let left = scratch[r].abs();
                        if left > worst {
                            worst = left;
                        }
                        scratch[r] = T::zero();
                    }
                    worst
                },
            )
            .reduce(T::zero, |a, b| if a > b { a } else { b })
    }

    pub fn transpose(&self) -> FlowMatrix<T> {
        let n = self.n;
        match &self.storage {
            Storage::Sparse(_) => {
                let mut cols: Vec<Vec<(u32, T)>> = vec![Vec::new(); n];
                for j in 0..n {
                    for (r, v) in self.col(j) {
                        cols[r].push((j as u32, v));
                    }
                }
                // Row order inside each output column follows ascending j already.
                FlowMatrix {
                    n,
                    storage: Storage::Sparse(cols),
                }
            }
            Storage::Dense(data) => {
                let mut out = vec![T::zero(); n * n];
                for j in 0..n {
                    for i in 0..n {
                        out[i * n + j] = data[j * n + i];
                    }
                }
                FlowMatrix {
                    n,
                    storage: Storage::Dense(out),
                }
            }
        }
    }

    /// `self^T * g`, producing a dense result.
    pub fn t_mul_dense(&self, g: &DenseMatrix<T>) -> DenseMatrix<T> {
        assert_eq!(self.n, g.rows());
        let n = self.n;
        let mut out = DenseMatrix::zeros(n, g.cols());
        out.data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(j, out_col)| {
                let g_col = g.col(j);
                for (i, o) in out_col.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for (k, v) in self.col(i) {
                        acc += v * g_col[k];
                    }
                    *o = acc;
                }
            });
        out
    }

    pub fn to_dense_matrix(&self) -> DenseMatrix<T> {
        let n = self.n;
        let mut data = vec![T::zero(); n * n];
        for j in 0..n {
            for (r, v) in self.col(j) {
                data[j * n + r] = v;
            }
        }
        DenseMatrix::from_vec(n, n, data)
    }

    fn densified(&self) -> FlowMatrix<T> {
        let d = self.to_dense_matrix();
        FlowMatrix {
            n: self.n,
            storage: Storage::Dense(d.into_vec()),
        }
    }

    fn sparsified(&self) -> FlowMatrix<T> {
        let mut cols: Vec<Vec<(u32, T)>> = vec![Vec::new(); self.n];
        for (j, col) in cols.iter_mut().enumerate() {
            col.extend(self.col(j).map(|(r, v)| (r as u32, v)));
        }
        FlowMatrix {
            n: self.n,
            storage: Storage::Sparse(cols),
        }
    }

    /// Stored nonzero positions, column-major order.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.n {
            out.extend(self.col(j).map(|(r, _)| (r, j)));
        }
        out
    }

    /// Copy with one entry replaced (inserted if absent).
    pub fn with_entry(&self, row: usize, col: usize, value: T) -> FlowMatrix<T> {
        let mut m = self.clone();
        match &mut m.storage {
            Storage::Sparse(cols) => {
                let c = &mut cols[col];
                match c.binary_search_by_key(&(row as u32), |&(r, _)| r) {
                    Ok(k) => c[k].1 = value,
                    Err(k) => c.insert(k, (row as u32, value)),
                }
            }
            Storage::Dense(data) => data[col * self.n + row] = value,
        }
        m
    }
}

/// Iterator over one column's stored nonzeros as `(row, value)`.
pub enum ColIter<'a, T> {
    Sparse(std::slice::Iter<'a, (u32, T)>),
    Dense { slice: &'a [T], row: usize },
}

impl<'a, T: Scalar> Iterator for ColIter<'a, T> {
    type Item = (usize, T);

    fn next(&mut self) -> Option<(usize, T)> {
        match self {
            ColIter::Sparse(it) => it.next().map(|&(r, v)| (r as usize, v)),
            ColIter::Dense { slice, row } => {
                while *row < slice.len() {
                    let r = *row;
                    *row += 1;
                    if slice[r] != T::zero() {
                        return Some((r, slice[r]));
                    }
                }
                None
            }
        }
    }
}

/// Plain column-major dense matrix (gradients, model weights).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols);
        DenseMatrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[col * self.rows + row] = value;
    }

    #[inline]
    pub fn col(&self, col: usize) -> &[T] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, col: usize) -> &mut [T] {
        let rows = self.rows;
        &mut self.data[col * rows..(col + 1) * rows]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// `self += other`.
    pub fn add_in_place(&mut self, other: &DenseMatrix<T>) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self * f` where `f` is a flow matrix, parallel over result columns.
    pub fn mul_flow(&self, f: &FlowMatrix<T>) -> DenseMatrix<T> {
        assert_eq!(self.cols, f.dim());
        let rows = self.rows;
        let mut out = DenseMatrix::zeros(rows, f.dim());
        out.data
            .par_chunks_mut(rows)
            .enumerate()
            .for_each(|(j, out_col)| {
                for (k, w) in f.col(j) {
                    let a_col = self.col(k);
                    for (o, &v) in out_col.iter_mut().zip(a_col) {
                        *o += v * w;
                    }
                }
            });
        out
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain4() -> FlowMatrix<f64> {
        // 4-node chain: node k feeds node k+1, last node absorbing.
        FlowMatrix::from_triplets(
            4,
            vec![
                (1, 0, 0.7),
                (0, 0, 0.3),
                (2, 1, 0.6),
                (1, 1, 0.4),
                (3, 2, 1.0),
                (3, 3, 1.0),
            ],
        )
    }

    /// Scalar triple-loop reference product.
    fn matmul_oracle(a: &FlowMatrix<f64>, b: &FlowMatrix<f64>) -> Vec<f64> {
        let n = a.dim();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out[j * n + i] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let m = chain4();
        let sq = m.matmul(&m).unwrap();
        let expect = matmul_oracle(&m, &m);
        for i in 0..4 {
            for j in 0..4 {
                assert!((sq.get(i, j) - expect[j * 4 + i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dense_and_sparse_products_agree() {
        let m = chain4();
        let dense = FlowMatrix::from_dense_data(4, m.to_dense_matrix().into_vec());
        let a = m.matmul(&m).unwrap();
        let b = dense.matmul(&m).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
        assert!(b.is_dense());
    }

    #[test]
    fn normalize_rejects_zero_column() {
        let mut m = FlowMatrix::<f64>::from_triplets(3, vec![(0, 0, 1.0), (1, 2, 0.5)]);
        let err = m.normalize_columns_in_place().unwrap_err();
        match err {
            Error::ZeroColumn { column, .. } => assert_eq!(column, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn prune_keeps_threshold_entries() {
        let mut m = FlowMatrix::from_triplets(2, vec![(0, 0, 0.10), (1, 0, 0.15), (1, 1, 0.9)]);
        m.prune_in_place(0.15);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 0), 0.15);
        assert_eq!(m.get(1, 1), 0.9);
    }

    #[test]
    fn transpose_round_trip() {
        let m = chain4();
        let tt = m.transpose().transpose();
        assert!(m.max_abs_diff(&tt) == 0.0);
    }

    #[test]
    fn t_mul_dense_matches_explicit_transpose() {
        let m = chain4();
        let g = DenseMatrix::from_vec(4, 4, (0..16).map(|k| 0.1 * k as f64).collect());
        let fast = m.t_mul_dense(&g);
        let slowct = m.transpose();
        let mut slow = DenseMatrix::zeros(4, 4);
        for j in 0..4 {
            for i in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += slowct.get(i, k) * g.get(k, j);
                }
                slow.set(i, j, acc);
            }
        }
        for j in 0..4 {
            for i in 0..4 {
                assert!((fast.get(i, j) - slow.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn densify_policy_on_fill_in() {
        // Fully-connected uniform 8-node matrix: product is dense.
        let n = 8;
        let mut trips = Vec::new();
        for j in 0..n {
            for i in 0..n {
                trips.push((i, j, 1.0 / n as f64));
            }
        }
        let m = FlowMatrix::from_triplets(n, trips);
        let p = m.matmul(&m).unwrap();
        assert!(p.is_dense());
        // Pruning everything away sparsifies again.
        let mut p2 = p;
        p2.prune_in_place(1.0);
        assert!(!p2.is_dense());
        assert_eq!(p2.nnz(), 0);
    }
}
