//! Nonnegative least squares in a kernel metric:
//!
//!   minimize ½ θᵀKθ − bᵀθ  subject to θ ≥ 0,
//!
//! for a fixed symmetric positive definite Gram matrix K, by block principal
//! pivoting. Each iteration solves either on the free set F (factorizing K_FF)
//! or on the zero set Z through the inverse (θ = y + M[:,Z]ν with M = K⁻¹,
//! M_ZZ ν = −y_Z). Columns of M are computed on demand and cached, so many
//! right-hand sides with small zero sets are cheap.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{axpy, dot, norm_inf, Cholesky, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// whichever of F or Z is smaller
    Auto,
    Free,
    Zero,
}

#[derive(Clone, Debug)]
pub struct ConeSolution {
    pub theta: Vec<f64>,
    /// pivoting iterations (0 when the unconstrained solution is already feasible)
    pub iterations: usize,
    pub zero_count: usize,
}

pub struct ConeProjector {
    gram: Matrix,
    chol: Cholesky,
    inverse: Vec<OnceLock<Vec<f64>>>,
    pub max_iterations: usize,
}

impl ConeProjector {
    pub fn new(gram: Matrix) -> Result<Self> {
        let chol = Cholesky::factor(&gram)?;
        let n = gram.rows();
        Ok(ConeProjector { gram, chol, inverse: (0..n).map(|_| OnceLock::new()).collect(), max_iterations: 200 })
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// Unconstrained minimizer `K⁻¹ b`.
    pub fn unconstrained(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(b)
    }

    /// Column `j` of `K⁻¹`.
    pub fn inverse_column(&self, j: usize) -> &[f64] {
        self.inverse[j].get_or_init(|| {
            let mut e = vec![0.0; self.dim()];
            e[j] = 1.0;
            self.chol.solve_in_place(&mut e);
            e
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<ConeSolution> {
        self.solve_with(b, Route::Auto)
    }

    pub fn solve_many(&self, rhs: &[Vec<f64>], exec: Execution) -> Result<Vec<ConeSolution>> {
        exec.map(rhs.len(), |i| self.solve(&rhs[i])).into_iter().collect()
    }

    pub fn solve_with(&self, b: &[f64], route: Route) -> Result<ConeSolution> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let y = self.chol.solve(b);
        if y.iter().all(|&v| v >= 0.0) {
            return Ok(ConeSolution { theta: y, iterations: 0, zero_count: 0 });
        }
        let tol_theta = 1e-13 * norm_inf(&y).max(f64::MIN_POSITIVE);
        let tol_grad = 1e-13 * norm_inf(b).max(f64::MIN_POSITIVE);

        let mut in_zero: Vec<bool> = y.iter().map(|&v| v < 0.0).collect();
        let mut best = n + 1;
        let mut budget = 3;
        for it in 1..=self.max_iterations {
            let zeros: Vec<usize> = (0..n).filter(|&i| in_zero[i]).collect();
            let use_zero = match route {
                Route::Zero => true,
                Route::Free => false,
                Route::Auto => zeros.len() <= n - zeros.len(),
            };
            let (theta, grad_z) = if use_zero { self.zero_route(&y, &zeros)? } else { self.free_route(b, &in_zero)? };

            let mut bad = Vec::new();
            let mut gz = grad_z.iter();
            for i in 0..n {
                if in_zero[i] {
                    if *gz.next().expect("one gradient per zero index") < -tol_grad {
                        bad.push(i);
                    }
                } else if theta[i] < -tol_theta {
                    bad.push(i);
                }
            }
            if bad.is_empty() {
                let theta = theta.into_iter().map(|v| v.max(0.0)).collect();
                return Ok(ConeSolution { theta, iterations: it, zero_count: zeros.len() });
            }
            if bad.len() < best {
                best = bad.len();
                budget = 3;
                bad.iter().for_each(|&i| in_zero[i] = !in_zero[i]);
            } else if budget > 0 {
                budget -= 1;
                bad.iter().for_each(|&i| in_zero[i] = !in_zero[i]);
            } else {
                let i = *bad.last().expect("nonempty");
                in_zero[i] = !in_zero[i];
            }
        }
        Err(Error::SolverDivergence(format!("block pivoting did not settle in {} iterations", self.max_iterations)))
    }

    /// Returns θ (zero on Z) and the gradient Kθ − b restricted to Z.
    fn zero_route(&self, y: &[f64], zeros: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        if zeros.is_empty() {
            return Ok((y.to_vec(), Vec::new()));
        }
        let cols: Vec<&[f64]> = zeros.iter().map(|&j| self.inverse_column(j)).collect();
        let m = zeros.len();
        let mut mzz = Matrix::zeros(m, m);
        for (a, &i) in zeros.iter().enumerate() {
            for (c, col) in cols.iter().enumerate() {
                mzz[(a, c)] = col[i];
            }
        }
        mzz.symmetrize();
        let rhs: Vec<f64> = zeros.iter().map(|&i| -y[i]).collect();
        let nu = Cholesky::factor(&mzz)?.solve(&rhs);
        let mut theta = y.to_vec();
        for (col, &v) in cols.iter().zip(&nu) {
            axpy(v, col, &mut theta);
        }
        for &i in zeros {
            theta[i] = 0.0;
        }
        Ok((theta, nu))
    }

    fn free_route(&self, b: &[f64], in_zero: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let free: Vec<usize> = (0..n).filter(|&i| !in_zero[i]).collect();
        let mut theta = vec![0.0; n];
        if !free.is_empty() {
            let kff = self.gram.select(&free, &free);
            let bf: Vec<f64> = free.iter().map(|&i| b[i]).collect();
            let tf = Cholesky::factor(&kff)?.solve(&bf);
            for (&i, v) in free.iter().zip(tf) {
                theta[i] = v;
            }
        }
        let grad = (0..n).filter(|&i| in_zero[i]).map(|i| dot(self.gram.row(i), &theta) - b[i]).collect();
        Ok((theta, grad))
    }
}
