//! Randomized invariants of the operator, the oracles and the solvers.

use std::sync::OnceLock;

use fracopt::dirichlet::{self, SolverKind, StateSolver};
use fracopt::grid::{integrate, split_signs};
use fracopt::rearrangement::{bathtub_lmo, project_capped_box};
use fracopt::{assemble, build_grid, Domain, Field, KernelParams, Operator};
use proptest::prelude::*;

const N: usize = 24;

fn op_1d() -> &'static Operator {
    static OP: OnceLock<Operator> = OnceLock::new();
    OP.get_or_init(|| {
        let g = build_grid(Domain::interval(-1.0, 1.0), N).unwrap();
        assemble(&g, KernelParams::new(1, 0.4, true).unwrap()).unwrap()
    })
}

fn op_2d() -> &'static Operator {
    static OP: OnceLock<Operator> = OnceLock::new();
    OP.get_or_init(|| {
        let g = build_grid(Domain::disk([0.0, 0.0], 1.0), 10).unwrap();
        assemble(&g, KernelParams::new(2, 0.7, true).unwrap()).unwrap()
    })
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn density(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sign_parts_lower_the_energy(w in values(N)) {
        let op = op_1d();
        let w = Field::new(w, 0.0);
        let (p, m) = split_signs(&w);
        let e = op.energy(&w).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(op.energy(&p).unwrap() <= e);
        prop_assert!(op.energy(&m).unwrap() <= e);
    }

    #[test]
    fn sign_parts_lower_the_energy_2d(seed in any::<u64>()) {
        let op = op_2d();
        let w: Vec<f64> = (0..op.dim())
            .map(|i| ((seed.wrapping_add(i as u64 * 7919) % 2001) as f64 / 1000.0) - 1.0)
            .collect();
        let w = Field::new(w, 0.0);
        let (p, m) = split_signs(&w);
        let e = op.energy(&w).unwrap();
        prop_assert!(op.energy(&p).unwrap() <= e);
        prop_assert!(op.energy(&m).unwrap() <= e);
    }

    #[test]
    fn lmo_is_feasible_and_scale_invariant(u in values(N), beta in 0.05f64..2.0, k in 0i32..6) {
        let h = 2.0 / N as f64;
        let f = bathtub_lmo(&u, beta, h).unwrap();
        prop_assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((f.iter().sum::<f64>() * h - beta).abs() <= 1e-12);
        let c = 2f64.powi(k - 3);
        let scaled: Vec<f64> = u.iter().map(|v| c * v).collect();
        prop_assert_eq!(bathtub_lmo(&scaled, beta, h).unwrap(), f);
    }

    #[test]
    fn lmo_minimizes_the_linear_functional(u in values(N), q in density(N), beta in 0.05f64..2.0) {
        let h = 2.0 / N as f64;
        let f = bathtub_lmo(&u, beta, h).unwrap();
        // any feasible point, via projection
        let q = project_capped_box(&q, beta, h);
        let dot = |a: &[f64]| a.iter().zip(&u).map(|(x, y)| x * y).sum::<f64>();
        prop_assert!(dot(&f) <= dot(&q) + 1e-12);
    }

    #[test]
    fn projection_is_feasible_and_optimal(g in values(N), q in density(N), beta in 0.05f64..2.0) {
        let h = 2.0 / N as f64;
        let p = project_capped_box(&g, beta, h);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() * h - beta).abs() <= 1e-10);
        let q = project_capped_box(&q, beta, h);
        // variational inequality ⟨g - p, q - p⟩ ≤ 0
        let vi: f64 = (0..N).map(|i| (g[i] - p[i]) * (q[i] - p[i])).sum();
        prop_assert!(vi <= 1e-10);
        // idempotent
        let pp = project_capped_box(&p, beta, h);
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn integration_is_linear(f in values(N), g in values(N), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let grid = &op_1d().grid;
        let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = integrate(grid, &Field::new(comb, 0.0));
        let rhs = a * integrate(grid, &Field::new(f, 0.0)) + b * integrate(grid, &Field::new(g, 0.0));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn nonnegative_sources_give_nonnegative_states(f in density(N)) {
        let op = op_1d();
        let u = StateSolver::new(op, SolverKind::Cholesky, 1e-12).unwrap().solve_values(&f).unwrap();
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(u.iter().all(|&v| v >= -1e-13 * scale));
    }

    #[test]
    fn objective_is_convex(f1 in density(N), f2 in density(N)) {
        let op = op_1d();
        let mid: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 0.5 * (a + b)).collect();
        let phi = |f: Vec<f64>| dirichlet::phi(op, &Field::new(f, 0.0)).unwrap();
        let (a, b, m) = (phi(f1), phi(f2), phi(mid));
        prop_assert!(m <= 0.5 * (a + b) * (1.0 + 1e-9));
    }

    #[test]
    fn energy_identity(f in density(N)) {
        let op = op_1d();
        let f = Field::new(f, 0.0);
        let u = dirichlet::solve(op, &f, 1e-12).unwrap();
        let phi = dirichlet::phi(op, &f).unwrap();
        let e = op.energy(&u).unwrap();
        prop_assert!((phi - e).abs() <= 1e-9 * e.abs().max(1e-300));
    }
}
