//! Homogeneous nonlocal Dirichlet problem and the objective `Φ_s`.

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::linalg::{conjugate_gradient, dot, Cholesky};
use crate::operator::Operator;

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Jacobi-preconditioned conjugate gradient.
    #[default]
    Cg,
    /// Dense Cholesky, factored once per [`StateSolver`].
    Cholesky,
}

/// Reusable solver for `A u = f` on one operator.
pub struct StateSolver<'a> {
    op: &'a Operator,
    tol: f64,
    factor: Option<Cholesky>,
}

impl<'a> StateSolver<'a> {
    pub fn new(op: &'a Operator, kind: SolverKind, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("solver tolerance must be positive, got {tol}")));
        }
        let factor = match kind {
            SolverKind::Cg => None,
            SolverKind::Cholesky => Some(Cholesky::factor(op.matrix())?),
        };
        Ok(Self { op, tol, factor })
    }

    pub fn operator(&self) -> &'a Operator {
        self.op
    }

    pub fn solve_values(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.op.dim() {
            return Err(Error::Mismatch(format!(
                "right-hand side has {} values, operator has {} nodes",
                f.len(),
                self.op.dim()
            )));
        }
        match &self.factor {
            Some(l) => Ok(l.solve(f)),
            None => {
                let cap = 10 * self.op.dim();
                Ok(conjugate_gradient(self.op.matrix(), f, self.tol, cap)?.x)
            }
        }
    }
}

/// `u_f` with `‖A u - f‖₂ ≤ tol ‖f‖₂` and zero exterior value.
pub fn solve(op: &Operator, f: &Field, tol: f64) -> Result<Field> {
    check_rhs(f)?;
    let u = StateSolver::new(op, SolverKind::Cg, tol)?.solve_values(&f.values)?;
    Ok(Field::new(u, 0.0))
}

/// `Φ_s(f) = |u_f|_s² = 2 hⁿ Σ f_i (u_f)_i`.
pub fn phi(op: &Operator, f: &Field) -> Result<f64> {
    check_rhs(f)?;
    let u = StateSolver::new(op, SolverKind::Cg, DEFAULT_TOL)?.solve_values(&f.values)?;
    Ok(objective(op, &f.values, &u))
}

/// `2 hⁿ fᵀ u` for a precomputed state.
pub(crate) fn objective(op: &Operator, f: &[f64], u: &[f64]) -> f64 {
    2.0 * op.grid.cell_volume() * dot(f, u)
}

fn check_rhs(f: &Field) -> Result<()> {
    if f.exterior != 0.0 {
        return Err(Error::Mismatch("load must vanish outside D".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain};
    use crate::kernel::KernelParams;
    use crate::operator::assemble;

    fn op(n: usize) -> Operator {
        let g = build_grid(Domain::interval(-1.0, 1.0), n).unwrap();
        assemble(&g, KernelParams::new(1, 0.5, true).unwrap()).unwrap()
    }

    #[test]
    fn zero_load() {
        let a = op(16);
        let u = solve(&a, &Field::zeros(16), 1e-10).unwrap();
        assert_eq!(u.values, vec![0.0; 16]);
        assert_eq!(phi(&a, &Field::zeros(16)).unwrap(), 0.0);
    }

    #[test]
    fn linearity() {
        let a = op(32);
        let f1 = Field::sample(&a.grid, |p| p[0].sin() + 1.0);
        let f2 = Field::sample(&a.grid, |p| (3.0 * p[0]).cos());
        let sum = Field::new(
            f1.values.iter().zip(&f2.values).map(|(a, b)| a + b).collect(),
            0.0,
        );
        let (u1, u2, u) = (
            solve(&a, &f1, 1e-12).unwrap(),
            solve(&a, &f2, 1e-12).unwrap(),
            solve(&a, &sum, 1e-12).unwrap(),
        );
        for i in 0..32 {
            assert!((u.values[i] - u1.values[i] - u2.values[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn residual_meets_tolerance_and_cholesky_agrees() {
        let a = op(64);
        let f = Field::sample(&a.grid, |p| 1.0 + p[0] * p[0]);
        let u = solve(&a, &f, 1e-10).unwrap();
        let r: Vec<f64> = a.matvec(&u.values).iter().zip(&f.values).map(|(x, y)| x - y).collect();
        assert!(dot(&r, &r).sqrt() <= 1e-10 * dot(&f.values, &f.values).sqrt());
        let ch = StateSolver::new(&a, SolverKind::Cholesky, 1e-10).unwrap();
        let v = ch.solve_values(&f.values).unwrap();
        for (x, y) in u.values.iter().zip(&v) {
            assert!((x - y).abs() < 1e-8 * y.abs().max(1.0));
        }
    }

    #[test]
    fn nonzero_exterior_load_rejected() {
        let a = op(8);
        assert!(solve(&a, &Field::zeros(8).with_exterior(1.0), 1e-10).is_err());
        assert!(StateSolver::new(&a, SolverKind::Cg, 0.0).is_err());
    }
}
