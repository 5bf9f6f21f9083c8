//! Small dense linear-algebra helpers shared by the kinematics, model and
//! inversion code. Everything here is sized for `n ≤ ~32` joints.

use crate::error::{Error, Result};

/// A 2×n matrix stored row-major (`[row0.., row1..]`).
///
/// This is the shape of every per-point Jacobian in the crate: two image (or
/// world) axes by `n` joints.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat2xN {
    n: usize,
    data: Vec<f64>,
}

impl Mat2xN {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; 2 * n] }
    }

    pub fn from_rows(row0: &[f64], row1: &[f64]) -> Self {
        assert_eq!(row0.len(), row1.len(), "rows must have equal length");
        let mut data = Vec::with_capacity(2 * row0.len());
        data.extend_from_slice(row0);
        data.extend_from_slice(row1);
        Self { n: row0.len(), data }
    }

    /// Wraps a row-major `2n` slice.
    pub fn from_slice(n: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), 2 * n);
        Self { n, data: data.to_vec() }
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.n + col] = v;
    }

    pub fn column(&self, col: usize) -> [f64; 2] {
        [self.get(0, col), self.get(1, col)]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `J · x` for an n-vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> [f64; 2] {
        debug_assert_eq!(x.len(), self.n);
        let (r0, r1) = self.data.split_at(self.n);
        [dot(r0, x), dot(r1, x)]
    }

    /// `Jᵀ · y` for a 2-vector `y`.
    pub fn tr_mul_vec(&self, y: [f64; 2]) -> Vec<f64> {
        let (r0, r1) = self.data.split_at(self.n);
        r0.iter().zip(r1).map(|(a, b)| a * y[0] + b * y[1]).collect()
    }

    /// `J Jᵀ` as `[a, b, c]` for the symmetric matrix `[[a, b], [b, c]]`.
    pub fn gram(&self) -> [f64; 3] {
        let (r0, r1) = self.data.split_at(self.n);
        [dot(r0, r0), dot(r0, r1), dot(r1, r1)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// An n×2 matrix stored as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MatNx2 {
    pub rows: Vec<[f64; 2]>,
}

impl MatNx2 {
    pub fn mul_vec(&self, v: [f64; 2]) -> Vec<f64> {
        self.rows.iter().map(|r| r[0] * v[0] + r[1] * v[1]).collect()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pairwise (fixed binary tree) summation. The combining order depends only
/// on `values.len()`, so the result is reproducible across runs.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        len => {
            let (a, b) = values.split_at(len / 2);
            tree_sum(a) + tree_sum(b)
        }
    }
}

/// Inverse of a symmetric 2×2 matrix `[[a, b], [b, c]]`, returned in the same
/// packed form. Fails when the determinant is not safely positive.
pub fn inv_sym2(m: [f64; 3]) -> Result<[f64; 3]> {
    let [a, b, c] = m;
    let det = a * c - b * b;
    let scale = (a.abs() + c.abs()).max(f64::MIN_POSITIVE);
    if !det.is_finite() || det <= 1e-14 * scale * scale {
        return Err(Error::Singular(format!("2x2 determinant {det:e}")));
    }
    Ok([c / det, -b / det, a / det])
}

#[inline]
pub fn sym2_mul(m: [f64; 3], v: [f64; 2]) -> [f64; 2] {
    [m[0] * v[0] + m[1] * v[1], m[1] * v[0] + m[2] * v[1]]
}

/// In-place Cholesky factorization of a row-major symmetric positive-definite
/// `n×n` matrix. On success the lower triangle holds `L` with `A = L Lᵀ`.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular(format!("matrix not positive definite at pivot {j} ({d:e})")));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` given the factor produced by [`cholesky_in_place`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Smallest eigenvalue of a symmetric row-major `n×n` matrix.
pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(n, n, a);
    m.symmetric_eigenvalues().min()
}
