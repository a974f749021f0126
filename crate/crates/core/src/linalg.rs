//! Small dense linear algebra: LU with partial pivoting, transpose solves,
//! a 1-norm condition estimate, and a Cholesky probe for PSD checks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath::{abs, sqrt};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
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

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Max absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                s += abs(self[(i, j)]);
            }
            best = best.max(s);
        }
        best
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max(abs(self[(i, j)] - self[(j, i)]));
            }
        }
        worst
    }

    /// Rank-one update `self += scale * x xᵀ` restricted to the given index
    /// pattern; used to accumulate sparse outer products.
    pub fn add_scaled_outer_sparse(&mut self, scale: f64, entries: &[(usize, f64)]) {
        for &(i, xi) in entries {
            let row = i * self.cols;
            for &(j, xj) in entries {
                self.data[row + j] += scale * xi * xj;
            }
        }
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting: `P A = L U`.
pub struct Lu {
    lu: Matrix,
    // perm[i] = source row of factored row i.
    perm: Vec<usize>,
}

pub fn lu_factor(a: &Matrix) -> Result<Lu> {
    assert_eq!(a.rows, a.cols, "LU requires a square matrix");
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut pivot = k;
        let mut best = abs(lu[(k, k)]);
        for i in (k + 1)..n {
            let v = abs(lu[(i, k)]);
            if v > best {
                best = v;
                pivot = i;
            }
        }
        if best == 0.0 {
            return Err(Error::Singular {
                condition: f64::INFINITY,
            });
        }
        if pivot != k {
            perm.swap(k, pivot);
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(pivot, j)];
                lu[(pivot, j)] = tmp;
            }
        }
        let inv = 1.0 / lu[(k, k)];
        for i in (k + 1)..n {
            let m = lu[(i, k)] * inv;
            lu[(i, k)] = m;
            if m != 0.0 {
                for j in (k + 1)..n {
                    lu[(i, j)] -= m * lu[(k, j)];
                }
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn n(&self) -> usize {
        self.lu.rows
    }

    /// Solves `A x = b`.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // Ly = Pb (unit lower-triangular).
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        // Ux = y.
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves `Aᵀ x = b` using the same factorization
    /// (`Aᵀ = Uᵀ Lᵀ P`, so back-substitute then permute back).
    pub fn solve_transpose_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        // Uᵀ w = b (lower-triangular with U's diagonal).
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[(j, i)] * y[j];
            }
            y[i] = s / self.lu[(i, i)];
        }
        // Lᵀ v = w (unit upper-triangular).
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.lu[(j, i)] * y[j];
            }
            y[i] = s;
        }
        // x = Pᵀ v scatters row i back to source position perm[i].
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = y[i];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        assert_eq!(b.rows, self.n());
        let mut out = Matrix::zeros(b.rows, b.cols);
        let mut col = vec![0.0; b.rows];
        for j in 0..b.cols {
            for i in 0..b.rows {
                col[i] = b[(i, j)];
            }
            let x = self.solve_vec(&col);
            for i in 0..b.rows {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    /// Hager/Higham style estimate of `‖A⁻¹‖₁` from a handful of solves.
    pub fn inverse_norm_one_estimate(&self) -> f64 {
        let n = self.n();
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0f64;
        for _ in 0..5 {
            let y = self.solve_vec(&x);
            let y_norm: f64 = y.iter().map(|v| abs(*v)).sum();
            est = est.max(y_norm);
            let xi: Vec<f64> = y
                .iter()
                .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            let z = self.solve_transpose_vec(&xi);
            let (mut best_j, mut best) = (0, 0.0);
            for (j, &v) in z.iter().enumerate() {
                if abs(v) > best {
                    best = abs(v);
                    best_j = j;
                }
            }
            let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if best <= zx {
                break;
            }
            x = vec![0.0; n];
            x[best_j] = 1.0;
        }
        est
    }
}

/// 1-norm condition estimate `‖A‖₁ · est(‖A⁻¹‖₁)`.
pub fn condition_estimate(a: &Matrix, lu: &Lu) -> f64 {
    a.norm_one() * lu.inverse_norm_one_estimate()
}

/// Attempts a Cholesky factorization of `A + shift·I`; returns false if a
/// nonpositive pivot appears. Used as a PSD probe in tests and diagnostics.
pub fn cholesky_psd_probe(a: &Matrix, shift: f64) -> bool {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += shift;
    }
    for k in 0..n {
        let mut d = m[(k, k)];
        for j in 0..k {
            d -= m[(k, j)] * m[(k, j)];
        }
        if d <= 0.0 {
            return false;
        }
        let d = sqrt(d);
        m[(k, k)] = d;
        for i in (k + 1)..n {
            let mut s = m[(i, k)];
            for j in 0..k {
                s -= m[(i, j)] * m[(k, j)];
            }
            m[(i, k)] = s / d;
        }
    }
    true
}

/// `A · B`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}
