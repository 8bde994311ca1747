//! Dense row-major matrices and the handful of decompositions the crate needs.
//!
//! Products go through `matrixmultiply`'s blocked gemm. The SVD is a one-sided
//! (Hestenes) Jacobi iteration, which is accurate for the small, possibly
//! rank-deficient operators used here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite matrix entry at {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let width = self.cols.max(1);
        self.data.chunks_exact(width).take(self.rows)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.iter_rows().map(|r| dot(r, x)).collect())
    }

    /// `Aᵀ y`.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::dim(format!(
                "matvec_t: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in self.iter_rows().zip(y) {
            axpy(yr, r, &mut out);
        }
        Ok(out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self, false, other, false, 0.0, &mut out);
        Ok(out)
    }

    /// `self · otherᵀ`; with `self` holding samples as rows and `other` an
    /// operator, this measures every sample at once.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::dim(format!(
                "matmul_t: {}x{} times ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(1.0, self, false, other, true, 0.0, &mut out);
        Ok(out)
    }

    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks
            .first()
            .map(|b| b.cols)
            .ok_or_else(|| Error::dim("vstack of zero blocks"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for b in blocks {
            if b.cols != cols {
                return Err(Error::dim(format!(
                    "vstack: block with {} columns, expected {cols}",
                    b.cols
                )));
            }
            data.extend_from_slice(&b.data);
            rows += b.rows;
        }
        Ok(Matrix::from_vec_unchecked(rows, cols, data))
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_block(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_vec_unchecked(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec_unchecked(idx.len(), self.cols, data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `c ← alpha · op(a) · op(b) + beta · c`. Shapes are checked with asserts;
/// callers validate user-facing shapes before getting here.
pub fn gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides describe in-bounds views of `a`, `b` and `c`, whose
    // lengths match the asserted shapes; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Unit-norm copy of `v`; `None` for the zero vector.
pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

pub fn check_unit(x: &[f64], tol: f64) -> Result<()> {
    let n = norm(x);
    if (n - 1.0).abs() > tol || !n.is_finite() {
        return Err(Error::Normalization(n));
    }
    Ok(())
}

/// Singular values (descending) and matching right singular vectors.
#[derive(Clone, Debug)]
pub struct Svd {
    pub singular_values: Vec<f64>,
    /// `right_vectors[j]` pairs with `singular_values[j]`; there are always
    /// `cols` of them, so the tail spans the nullspace of a wide matrix.
    pub right_vectors: Vec<Vec<f64>>,
}

impl Svd {
    /// Orthonormal basis of the numerical nullspace at relative tolerance `tol`.
    pub fn nullspace(&self, tol: f64) -> Vec<Vec<f64>> {
        let cutoff = tol * self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .zip(&self.right_vectors)
            .filter(|(s, _)| **s <= cutoff)
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn rank(&self, tol: f64) -> usize {
        let cutoff = tol * self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values.iter().filter(|s| **s > cutoff).count()
    }
}

/// One-sided Jacobi SVD. Returns every right singular vector, including the
/// nullspace directions of a wide or rank-deficient matrix.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.is_empty() {
        return Err(Error::dim("SVD of an empty matrix"));
    }
    let (m, n) = a.shape();
    // columns of A, stored contiguously
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    const MAX_SWEEPS: usize = 80;
    let eps = 1e-15;
    // columns below this squared norm are numerically zero; rotating noise
    // against noise never converges
    let negligible = 1e-30 * a.as_slice().iter().map(|x| x * x).sum::<f64>();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0
                    || gamma.abs() <= eps * (alpha * beta).sqrt()
                    || alpha.min(beta) <= negligible
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Jacobi SVD did not converge".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sv: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    Ok(Svd {
        singular_values: order.iter().map(|&i| sv[i]).collect(),
        right_vectors: order.iter().map(|&i| v[i].clone()).collect(),
    })
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Solves `S z = b` for symmetric positive definite `S` by Cholesky.
/// Fails with the estimated condition number when a pivot collapses.
pub fn cholesky_solve(s: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = s.rows();
    if s.cols() != n || b.len() != n {
        return Err(Error::dim("cholesky_solve: shape mismatch"));
    }
    let mut l = Matrix::zeros(n, n);
    let scale = (0..n).map(|i| s.get(i, i).abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = s.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d <= 1e-13 * scale || !d.is_finite() {
            let diag: Vec<f64> = (0..j).map(|i| l.get(i, i) * l.get(i, i)).collect();
            let max = diag.iter().copied().fold(scale, f64::max);
            let cond = if d > 0.0 { max / d } else { f64::INFINITY };
            return Err(Error::Numerical(format!(
                "matrix is singular to working precision (pivot {j}, condition estimate {cond:.3e})"
            )));
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut x = s.get(i, j);
            for k in 0..j {
                x -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, x / d);
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l.get(i, k) * z[k];
        }
        z[i] /= l.get(i, i);
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l.get(k, i) * z[k];
        }
        z[i] /= l.get(i, i);
    }
    Ok(z)
}

/// Determinant by LU with partial pivoting.
pub fn determinant(a: &Matrix) -> Result<f64> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim("determinant of a non-square matrix"));
    }
    let mut m = a.clone();
    let mut det = 1.0;
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| m.get(i, k).abs().total_cmp(&m.get(j, k).abs()))
            .unwrap_or(k);
        if m.get(piv, k) == 0.0 {
            return Ok(0.0);
        }
        if piv != k {
            for c in 0..n {
                let t = m.get(k, c);
                m.set(k, c, m.get(piv, c));
                m.set(piv, c, t);
            }
            det = -det;
        }
        let p = m.get(k, k);
        det *= p;
        for i in k + 1..n {
            let f = m.get(i, k) / p;
            for c in k..n {
                let v = m.get(i, c) - f * m.get(k, c);
                m.set(i, c, v);
            }
        }
    }
    Ok(det)
}

/// Modified Gram–Schmidt on the rows of `a`; fails on (numerically) dependent rows.
pub fn orthonormalize_rows(a: &Matrix) -> Result<Matrix> {
    let mut q = a.clone();
    for i in 0..q.rows() {
        for j in 0..i {
            let (head, tail) = q.data.split_at_mut(i * q.cols);
            let qj = &head[j * q.cols..(j + 1) * q.cols];
            let qi = &mut tail[..q.cols];
            let r = dot(qj, qi);
            axpy(-r, qj, qi);
        }
        let row = q.row_mut(i);
        let n = norm(row);
        if n < 1e-12 {
            return Err(Error::Numerical(format!("row {i} is linearly dependent")));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(q)
}
