//! Dense row-major matrices, Cholesky factorization and symmetric eigenvalue helpers.

use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn<F>(rows: usize, cols: usize, exec: Execution, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let mut data = vec![0.0; rows * cols];
        exec.fill_rows(&mut data, cols, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = f(i, j);
            }
        });
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], exec: Execution) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y, exec);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64], exec: Execution) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        exec.fill_rows(y, 1, |i, out| out[0] = dot(self.row(i), x));
    }

    /// `y = A^T x`, accumulated row by row (sequential, deterministic).
    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut y);
            }
        }
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64], exec: Execution) -> f64 {
        dot(x, &self.matvec(y, exec))
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

    /// Principal or rectangular submatrix picked by index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            let src = self.row(i);
            let dst = m.row_mut(a);
            for (b, &j) in cols.iter().enumerate() {
                dst[b] = src[j];
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replace `A` by `(A + A^T)/2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    /// `A B` with rows of the result computed independently.
    pub fn matmul(&self, other: &Matrix, exec: Execution) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        let cols = other.cols;
        exec.fill_rows(&mut out.data, cols, |i, row| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), row);
                }
            }
        });
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators so the compiler can vectorize; order is fixed
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `y += a x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Lower-triangular Cholesky factor `A = L L^T`, stored row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidSpec("Cholesky needs a square matrix".into()));
        }
        let n = a.rows();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let (done, rest) = l.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..=i {
                let row_j: &[f64] = if j == i { &row_i[..j] } else { &done[j * n..j * n + j] };
                let s = a[(i, j)] - dot(&row_i[..j], row_j);
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    row_i[i] = s.sqrt();
                } else {
                    row_i[j] = s / done[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n);
        // L y = b
        for i in 0..n {
            let s = x[i] - dot(&self.l[i * n..i * n + i], &x[..i]);
            x[i] = s / self.at(i, i);
        }
        // L^T x = y, column sweep so rows of L are read contiguously
        for i in (0..n).rev() {
            x[i] /= self.at(i, i);
            let xi = x[i];
            if xi != 0.0 {
                axpy(-xi, &self.l[i * n..i * n + i], &mut x[..i]);
            }
        }
    }

    /// log det A.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * self.at(i, i).ln()).sum()
    }
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Meant for small matrices (a few hundred rows at most).
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize();
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev = m.diagonal();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// Small matrices go through Jacobi. Larger ones are first tested with a
/// Cholesky factorization; if it succeeds the smallest eigenvalue is found by
/// inverse iteration, otherwise by shifted power iteration (which then yields a
/// non-positive estimate).
pub fn min_eigenvalue(a: &Matrix, exec: Execution) -> f64 {
    let n = a.rows();
    if n == 0 {
        return f64::INFINITY;
    }
    if n <= 120 {
        return symmetric_eigenvalues(a)[0];
    }
    let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 101) as f64).collect();
    match Cholesky::factor(a) {
        Ok(ch) => {
            let mut v = normalized(start);
            let mut est = 0.0;
            for _ in 0..500 {
                let w = ch.solve(&v);
                let rq = dot(&v, &w);
                let next = normalized(w);
                let done = ((rq - est) / rq).abs() < 1e-12;
                est = rq;
                v = next;
                if done {
                    break;
                }
            }
            let av = a.matvec(&v, exec);
            dot(&v, &av)
        }
        Err(_) => {
            let shift = (0..n).map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
            let mut v = normalized(start);
            let mut est = 0.0;
            for _ in 0..2000 {
                let av = a.matvec(&v, exec);
                let w: Vec<f64> = v.iter().zip(&av).map(|(vi, ai)| shift * vi - ai).collect();
                let rq = dot(&v, &w);
                est = shift - rq;
                v = normalized(w);
            }
            est
        }
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let nrm = dot(&v, &v).sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd(n: usize) -> Matrix {
        // Hilbert-like plus diagonal shift
        Matrix::from_fn(n, n, Execution::Sequential, |i, j| 1.0 / (1.0 + i as f64 + j as f64) + if i == j { 1.0 } else { 0.0 })
    }

    #[test]
    fn cholesky_solves() {
        let a = spd(30);
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&x, Execution::Sequential);
        let got = Cholesky::factor(&a).unwrap().solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert_relative_eq!(g, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Cholesky::factor(&a), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // tridiagonal (2,-1): eigenvalues 2 - 2 cos(k pi/(n+1))
        let n = 12;
        let a = Matrix::from_fn(n, n, Execution::Sequential, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let ev = symmetric_eigenvalues(&a);
        for (k, e) in ev.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert_relative_eq!(*e, exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn inverse_iteration_agrees_with_jacobi() {
        let n = 150;
        let a = Matrix::from_fn(n, n, Execution::Sequential, |i, j| match i.abs_diff(j) {
            0 => 2.0 + 1e-3,
            1 => -1.0,
            _ => 0.0,
        });
        let exact = 2.0 + 1e-3 - 2.0 * (std::f64::consts::PI / (n + 1) as f64).cos();
        assert_relative_eq!(min_eigenvalue(&a, Execution::Sequential), exact, max_relative = 1e-8);
        let shifted = Matrix::from_fn(n, n, Execution::Sequential, |i, j| a[(i, j)] - if i == j { 0.01 } else { 0.0 });
        assert!(min_eigenvalue(&shifted, Execution::Sequential) < 0.0);
    }

    #[test]
    fn parallel_matvec_is_bitwise_sequential() {
        let a = spd(64);
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).cos()).collect();
        assert_eq!(a.matvec(&x, Execution::Sequential), a.matvec(&x, Execution::Parallel));
    }
}
