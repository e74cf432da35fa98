//! Minimal dense vector/matrix kernel.
//!
//! Everything downstream (clustering, the decision rule, the encoder) is built
//! on this module. Scalars are `f64` throughout training so that
//! finite-difference gradient checks are meaningful at 1e-4 relative tolerance.
//!
//! Reductions accumulate left-to-right over the contracted index, and no
//! internal parallelism is used, so results are bit-reproducible for a fixed
//! seed.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from row slices; all rows must share a length and every entry
    /// must be finite.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for &x in row {
                if !x.is_finite() {
                    return Err(Error::DegenerateInput(format!(
                        "non-finite entry {x} in row {i}"
                    )));
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Build from a flat row-major buffer.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "flat buffer of {} entries cannot be {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Stack a subset of rows (in the given order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }
}

/// Dot product with fixed left-to-right accumulation.
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = 0.0;
    for i in 0..u.len() {
        acc += u[i] * v[i];
    }
    acc
}

/// Euclidean norm, left-to-right accumulation.
pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit Euclidean norm, preserving direction.
///
/// A vector already within 1e-12 of unit norm is returned unchanged, which
/// makes the operation bitwise idempotent. Zero vectors are rejected:
/// normalization is undefined for them.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "cannot normalize vector with norm {norm}"
        )));
    }
    if (norm - 1.0).abs() <= 1e-12 {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Normalize every row of `m` in place. Fails on any zero row.
pub fn l2_normalize_rows(m: &mut Matrix) -> Result<()> {
    for i in 0..m.rows() {
        let normalized = l2_normalize(m.row(i))
            .map_err(|_| Error::DegenerateInput(format!("row {i} has zero norm")))?;
        m.row_mut(i).copy_from_slice(&normalized);
    }
    Ok(())
}

/// Negated cosine similarity: -u.v / (|u||v|). Lies in [-1, 1];
/// -1 iff the vectors are parallel, +1 iff antiparallel.
///
/// Norms within 1e-12 of 1 are treated as exactly 1, so on row-normalized
/// inputs the result agrees bitwise with the negated [`similarity_matrix`]
/// entry.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine_distance on lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine distance undefined for zero vector".into(),
        ));
    }
    let scale = nu * nv;
    if (scale - 1.0).abs() <= 1e-12 {
        return Ok(-dot(u, v));
    }
    Ok(-dot(u, v) / scale)
}

/// Pairwise dot products: entry (n, m) = x.row(n) . p.row(m).
///
/// For row-normalized inputs this is the cosine similarity, i.e. the negation
/// of [`cosine_distance`].
pub fn similarity_matrix(x: &Matrix, p: &Matrix) -> Result<Matrix> {
    if x.cols() != p.cols() {
        return Err(Error::Shape(format!(
            "similarity_matrix on widths {} and {}",
            x.cols(),
            p.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), p.rows());
    for n in 0..x.rows() {
        let xr = x.row(n);
        for m in 0..p.rows() {
            out.set(n, m, dot(xr, p.row(m)));
        }
    }
    Ok(out)
}

/// C = A (n x k) * B (k x m).
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// C = A^T (k x n)^T * B (n x m) = (k x m); contraction over rows of both.
pub fn matmul_transpose_a(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul_transpose_a {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.cols(), b.cols());
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for n in 0..a.rows() {
                acc += a.get(n, i) * b.get(n, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// C = A (n x k) * B^T (m x k)^T = (n x m); contraction over columns of both.
pub fn matmul_transpose_b(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    similarity_matrix(a, b)
}
