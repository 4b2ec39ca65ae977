//! Dense linear algebra: row-major matrices, Jacobi-preconditioned CG,
//! Cholesky and power iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows below this size are multiplied serially.
const PAR_THRESHOLD: usize = 256;

/// Seed for every randomized start vector in the crate.
pub const DEFAULT_SEED: u64 = 0x5eed_f4ac;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_rows(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`. Each entry is a serial dot product, so the result does not
    /// depend on the thread count.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        if self.dim >= PAR_THRESHOLD {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = dot(self.row(i), x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = dot(self.row(i), x);
            }
        }
        y
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `a - b`.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Outcome of a conjugate gradient run.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b - A x‖₂ / ‖b‖₂` at exit.
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient for SPD `A`.
///
/// Stops once `‖b - A x‖₂ ≤ tol ‖b‖₂`; fails after `max_iter` iterations.
pub fn conjugate_gradient(
    a: &DenseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(CgReport {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut rnorm = bnorm;
    for it in 0..max_iter {
        let ap = a.matvec(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = norm2(&r);
        if rnorm <= tol * bnorm {
            // recompute the true residual; the recursive one drifts
            let true_r = sub(b, &a.matvec(&x));
            let true_norm = norm2(&true_r);
            if true_norm <= tol * bnorm {
                return Ok(CgReport {
                    x,
                    iterations: it + 1,
                    relative_residual: true_norm / bnorm,
                });
            }
            r = true_r;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        method: "conjugate gradient",
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { row: j, pivot: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            let (head, tail) = l.split_at_mut((j + 1) * n);
            let lj = &head[j * n..j * n + j];
            let update = |(off, row): (usize, &mut [f64])| {
                let i = j + 1 + off;
                let v = a.get(i, j) - dot(&row[..j], lj);
                row[j] = v / djj;
            };
            if n - j > PAR_THRESHOLD {
                tail.par_chunks_mut(n).enumerate().for_each(update);
            } else {
                tail.chunks_mut(n).enumerate().for_each(update);
            }
        }
        Ok(Self { dim: n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            y[i] = (y[i] - dot(row, &y[..i])) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in i + 1..n {
                v -= self.l[k * n + i] * y[k];
            }
            y[i] = v / self.l[i * n + i];
        }
        y
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite map by power
/// iteration from a seeded random start. Stops when successive Rayleigh
/// quotients agree to `rel_tol` or after `max_iter` steps.
pub fn power_iteration(
    apply: impl Fn(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    rel_tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect();
    let n0 = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = apply(&v)?;
        let next = dot(&v, &w);
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if (next - lambda).abs() <= rel_tol * next.abs() {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let v = 1.0 / (1.0 + (i as f64 - j as f64).abs());
                a.set(i, j, if i == j { v + n as f64 } else { -v });
            }
        }
        a
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let a = spd(40);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let cg = conjugate_gradient(&a, &b, 1e-12, 400).unwrap();
        let ch = Cholesky::factor(&a).unwrap().solve(&b);
        assert!(cg.relative_residual <= 1e-12);
        for (x, y) in cg.x.iter().zip(&ch) {
            assert!((x - y).abs() < 1e-10);
        }
        let r = sub(&b, &a.matvec(&ch));
        assert!(norm2(&r) < 1e-12 * norm2(&b));
    }

    #[test]
    fn cg_zero_rhs_and_cap() {
        let a = spd(10);
        let rep = conjugate_gradient(&a, &[0.0; 10], 1e-10, 5).unwrap();
        assert_eq!(rep.x, vec![0.0; 10]);
        let b = vec![1.0; 10];
        assert!(matches!(
            conjugate_gradient(&a, &b, 1e-30, 2),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_rows(2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            Cholesky::factor(&a),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn power_iteration_diagonal() {
        let d = [1.0, 5.0, 2.0, 4.5];
        let l = power_iteration(
            |v| Ok(v.iter().zip(&d).map(|(a, b)| a * b).collect()),
            4,
            1e-12,
            5000,
            DEFAULT_SEED,
        )
        .unwrap();
        assert!((l - 5.0).abs() < 1e-6);
    }
}
