//! Cross-checks between the solvers and small exhaustive oracles.

use fracopt::dirichlet;
use fracopt::linalg::{norm2, sub};
use fracopt::obstacle::{equivalence_check, minimize_j, ObstacleOptions};
use fracopt::operator::{assemble_with, AssemblyOptions, SelfCell};
use fracopt::rearrangement::{
    solve_frank_wolfe, solve_projected_gradient, verify_structure, FwOptions, PgOptions,
    RearrangementClass, StructureTolerances,
};
use fracopt::slimit::{assemble_local, solve_local_rearrangement};
use fracopt::{assemble, build_grid, Domain, Field, KernelParams, Operator};

/// Minimum of `Φ` over `f_i ∈ {0, δ, 2δ, …, 1}` with `h Σ f_i = β`, for
/// three cells.
fn brute_force_min(op: &Operator, beta: f64, delta: f64) -> f64 {
    let top = (1.0 / delta).round() as i64;
    let units = (beta / op.grid.h / delta).round() as i64;
    let mut best = f64::INFINITY;
    for a in 0..=top {
        for b in 0..=top {
            let c = units - a - b;
            if !(0..=top).contains(&c) {
                continue;
            }
            let f = Field::new(vec![a as f64 * delta, b as f64 * delta, c as f64 * delta], 0.0);
            best = best.min(dirichlet::phi(op, &f).unwrap());
        }
    }
    best
}

fn check_three_cells(op: &Operator, delta: f64) {
    let beta = 1.0;
    let opts = FwOptions {
        gap_tol: 1e-10,
        ..Default::default()
    };
    let sol = solve_frank_wolfe(op, RearrangementClass { beta }, &opts).unwrap();
    let brute = brute_force_min(op, beta, delta);
    assert!(sol.objective - sol.gap <= brute + 1e-12);
    assert!((brute - sol.objective).abs() <= 1e-3 * sol.objective, "{brute} vs {}", sol.objective);
}

#[test]
fn three_cell_brute_force_fractional() {
    let g = build_grid(Domain::interval(-1.0, 1.0), 3).unwrap();
    for s in [0.5, 0.8] {
        check_three_cells(&assemble(&g, KernelParams::new(1, s, true).unwrap()).unwrap(), 0.05);
    }
    // the optimum (0.566, 0.367, 0.566) sits between 0.05 lattice points
    // closely enough that the coarse lattice is off by 1.02e-3
    check_three_cells(&assemble(&g, KernelParams::new(1, 0.3, true).unwrap()).unwrap(), 0.01);
}

#[test]
fn three_cell_brute_force_local() {
    let g = build_grid(Domain::interval(-1.0, 1.0), 3).unwrap();
    check_three_cells(&assemble_local(&g), 0.05);
}

#[test]
fn projected_gradient_agrees_with_frank_wolfe() {
    let g = build_grid(Domain::interval(-1.0, 1.0), 128).unwrap();
    let op = assemble(&g, KernelParams::new(1, 0.5, true).unwrap()).unwrap();
    let class = RearrangementClass { beta: 1.0 };
    let fw = solve_frank_wolfe(&op, class, &FwOptions::default()).unwrap();
    let pg = solve_projected_gradient(&op, class, &PgOptions::default()).unwrap();
    let d = norm2(&sub(&fw.u_hat.values, &pg.u_hat.values));
    assert!(d <= 1e-4 * norm2(&fw.u_hat.values), "{d}");
    assert!((fw.objective - pg.objective).abs() <= 1e-6 * fw.objective);
}

#[test]
fn structure_on_the_disk() {
    let g = build_grid(Domain::disk([0.0, 0.0], 1.0), 20).unwrap();
    let op = assemble(&g, KernelParams::new(2, 0.5, true).unwrap()).unwrap();
    let beta = 0.5 * g.measure();
    let sol = solve_frank_wolfe(&op, RearrangementClass { beta }, &FwOptions::default()).unwrap();
    let report = verify_structure(&op, &sol, &StructureTolerances::default());
    assert!(report.passed, "{report:?}");
    let obst = minimize_j(&op, sol.alpha, &ObstacleOptions::default()).unwrap();
    let eq = equivalence_check(&op, &sol, &obst).unwrap();
    assert!(eq.passes(1e-3, 1e-8), "{eq:?}");
}

#[test]
fn local_optimum_is_an_indicator() {
    let g = build_grid(Domain::interval(-1.0, 1.0), 128).unwrap();
    let sol = solve_local_rearrangement(&g, 1.0, &FwOptions::default()).unwrap();
    let partial = sol.f_hat.values.iter().filter(|&&v| v > 1e-3 && v < 1.0 - 1e-3).count();
    assert_eq!(partial, 0);
    // the low set of û is the centered interval of length β
    for (p, f) in g.nodes.iter().zip(&sol.f_hat.values) {
        if p[0].abs() < 0.5 - g.h {
            assert_eq!(*f, 0.0);
        }
        if p[0].abs() > 0.5 + g.h {
            assert_eq!(*f, 1.0);
        }
    }
}

/// Fractional rows all see the exterior; local rows only at the boundary.
fn assert_m_matrix(op: &Operator) {
    let local = op.params().is_none();
    let a = op.matrix();
    assert!(a.is_symmetric());
    for i in 0..op.dim() {
        let row = a.row(i);
        assert!(row[i] > 0.0);
        for (j, &v) in row.iter().enumerate() {
            if j != i {
                assert!(v <= 0.0, "A[{i}][{j}] = {v}");
            }
        }
        let sum: f64 = row.iter().sum();
        let boundary = op.grid.neighbors(i).iter().any(Option::is_none);
        if local && !boundary {
            assert_eq!(op.tail()[i], 0.0);
        } else {
            assert!(op.tail()[i] > 0.0);
        }
        assert!((sum - op.tail()[i]).abs() <= 1e-9 * row[i], "row {i}: {sum} vs {}", op.tail()[i]);
    }
}

#[test]
fn two_dimensional_m_matrices() {
    let domains = [
        Domain::rectangle([0.0, 0.0], [1.0, 1.0]),
        Domain::rectangle([-1.0, 0.0], [1.0, 0.5]),
        Domain::disk([0.2, -0.1], 0.8),
    ];
    for d in domains {
        let g = build_grid(d, 16).unwrap();
        for s in [0.2, 0.5, 0.9] {
            for normalized in [true, false] {
                for self_cell in [SelfCell::Omit, SelfCell::SecondOrder] {
                    let opts = AssemblyOptions {
                        self_cell,
                        ..Default::default()
                    };
                    let p = KernelParams::new(2, s, normalized).unwrap();
                    assert_m_matrix(&assemble_with(&g, p, opts).unwrap());
                }
            }
        }
        assert_m_matrix(&assemble_local(&g));
    }
}

#[test]
fn normalized_energy_approaches_dirichlet_energy() {
    let g = build_grid(Domain::interval(-1.0, 1.0), 512).unwrap();
    let w = Field::sample(&g, |p| (1.0 - p[0] * p[0]).powi(2));
    // 2 ∫ |w'|², the limit of the normalized energy
    let limit = 2.0 * 256.0 / 105.0;
    let local = assemble_local(&g).energy(&w).unwrap();
    assert!((local - limit).abs() <= 1e-3 * limit);
    let mut prev = f64::INFINITY;
    for s in [0.6, 0.8, 0.9, 0.95] {
        let op = assemble(&g, KernelParams::new(1, s, true).unwrap()).unwrap();
        let rel = (op.energy(&w).unwrap() - limit).abs() / limit;
        assert!(rel < prev, "s = {s}: {rel} after {prev}");
        prev = rel;
    }
    assert!(prev <= 0.1, "{prev}");
}

#[test]
fn obstacle_initializations_agree() {
    let g = build_grid(Domain::interval(-1.0, 1.0), 128).unwrap();
    let op = assemble(&g, KernelParams::new(1, 0.6, true).unwrap()).unwrap();
    let alpha = 0.2;
    let a = minimize_j(&op, alpha, &ObstacleOptions::default()).unwrap();
    let start: Vec<f64> = (0..g.len()).map(|i| -alpha * ((i * 37 % 11) as f64 / 10.0)).collect();
    let b = minimize_j(
        &op,
        alpha,
        &ObstacleOptions {
            initial: Some(start),
            accelerate: true,
            ..Default::default()
        },
    )
    .unwrap();
    let d = a
        .state
        .values
        .iter()
        .zip(&b.state.values)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(d <= 1e-6, "{d}");
}
