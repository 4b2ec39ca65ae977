//! Local (`s = 1`) reference solvers and the `s → 1` sweep.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{build_grid, Domain, Grid};
use crate::kernel::KernelParams;
use crate::linalg::{norm2, sub, DenseMatrix};
use crate::operator::{assemble_with, AssemblyOptions, Operator, OperatorKind};
use crate::rearrangement::{solve_frank_wolfe, FwOptions, RearrangementClass, RearrangementSolution};

/// Five-point (three-point in 1D) Laplacian scaled by `1/h²`.
///
/// Zero Dirichlet data is imposed on the cell faces through an odd ghost
/// value, so a missing neighbor adds `2/h²` to the diagonal; this keeps the
/// cell-centered scheme second order.
pub fn assemble_local(grid: &Grid) -> Operator {
    let n = grid.len();
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let mut a = DenseMatrix::zeros(n);
    let mut tail = vec![0.0; n];
    for i in 0..n {
        let mut diag = 0.0;
        for nb in grid.neighbors(i) {
            match nb {
                Some(j) => {
                    a.set(i, j, -inv_h2);
                    diag += inv_h2;
                }
                None => {
                    diag += 2.0 * inv_h2;
                    tail[i] += 2.0 * inv_h2;
                }
            }
        }
        a.set(i, i, diag);
    }
    Operator::from_parts(OperatorKind::Local, grid.clone(), a, tail)
}

/// Rearrangement problem for `-Δ`, solved with the same Frank–Wolfe method.
pub fn solve_local_rearrangement(
    grid: &Grid,
    beta: f64,
    opts: &FwOptions,
) -> Result<RearrangementSolution> {
    let op = assemble_local(grid);
    solve_frank_wolfe(&op, RearrangementClass { beta }, opts)
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub fw: FwOptions,
    pub assembly: AssemblyOptions,
    /// Must stay `true`: without the constant the energies blow up as `s → 1`.
    pub normalized: bool,
    /// Largest admissible `s`.
    pub s_cap: f64,
    /// Densities in `(eps, 1 - eps)` count as intermediate.
    pub eps: f64,
    /// Rows solved concurrently on this many threads; serial when `None`.
    pub workers: Option<usize>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            fw: FwOptions::default(),
            assembly: AssemblyOptions::default(),
            normalized: true,
            s_cap: 0.97,
            eps: 1e-3,
            workers: None,
        }
    }
}

pub const PROBE_COUNT: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct SweepMetrics {
    pub alpha_s: f64,
    pub objective: f64,
    /// `‖û_s - û_loc‖₂` over the node values.
    pub state_dist: f64,
    /// `|Φ_s(f̂_s) - Φ(f̂_loc)|`.
    pub objective_diff: f64,
    /// `∫ (f̂_s - f̂_loc) φ_k` for the Gaussian probes.
    pub density_tests: Vec<f64>,
    pub frac_measure: f64,
    pub iterations: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub s: f64,
    pub metrics: Option<SweepMetrics>,
    /// Solver failure for this `s`; the remaining rows are still computed.
    pub error: Option<String>,
    #[serde(skip)]
    pub solution: Option<RearrangementSolution>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalSummary {
    pub alpha: f64,
    pub objective: f64,
    pub frac_measure: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub n: usize,
    pub beta: f64,
    pub eps: f64,
    pub local: LocalSummary,
    /// Sorted by `s`.
    pub rows: Vec<SweepRow>,
    #[serde(skip)]
    pub local_solution: RearrangementSolution,
}

impl SweepTable {
    /// Metrics of every row, failing on the first failed row.
    pub fn metrics(&self) -> Result<Vec<&SweepMetrics>> {
        self.rows
            .iter()
            .map(|r| {
                r.metrics.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "sweep row s = {} failed: {}",
                        r.s,
                        r.error.as_deref().unwrap_or("unknown")
                    ))
                })
            })
            .collect()
    }
}

/// Gaussian probes of width `|D|/8`, centered at evenly spaced points of
/// the bounding box diagonal.
pub fn probe_profiles(grid: &Grid) -> Vec<Vec<f64>> {
    let (lo, hi) = match grid.domain {
        Domain::Interval { a, b } => ([a, 0.0], [b, 0.0]),
        Domain::Rectangle { lower, upper, .. } => (lower, upper),
    };
    let width = grid.measure() / 8.0;
    (0..PROBE_COUNT)
        .map(|k| {
            let t = (k + 1) as f64 / (PROBE_COUNT + 1) as f64;
            let c = [lo[0] + t * (hi[0] - lo[0]), lo[1] + t * (hi[1] - lo[1])];
            grid.nodes
                .iter()
                .map(|p| {
                    let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                    (-r2 / (2.0 * width * width)).exp()
                })
                .collect()
        })
        .collect()
}

/// Measure of `{eps < f < 1 - eps}`.
pub fn intermediate_measure(grid: &Grid, f: &[f64], eps: f64) -> f64 {
    grid.cell_volume() * f.iter().filter(|&&v| v > eps && v < 1.0 - eps).count() as f64
}

fn validate(s_list: &[f64], opts: &SweepOptions) -> Result<()> {
    if !opts.normalized {
        return Err(Error::Config(
            "normalized = false is not allowed for a sweep".into(),
        ));
    }
    if s_list.is_empty() {
        return Err(Error::Config("s_list is empty".into()));
    }
    for w in s_list.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Config(format!(
                "s_list must be strictly ascending ({} before {})",
                w[0], w[1]
            )));
        }
    }
    for &s in s_list {
        if !(s > 0.0 && s <= opts.s_cap) {
            return Err(Error::Config(format!(
                "s = {s} outside (0, {}] (raise s_cap to go closer to 1)",
                opts.s_cap
            )));
        }
    }
    Ok(())
}

/// Solves the fractional problem for every `s` and the local one once.
pub fn s_sweep(
    domain: Domain,
    n: usize,
    beta: f64,
    s_list: &[f64],
    opts: &SweepOptions,
) -> Result<SweepTable> {
    validate(s_list, opts)?;
    let grid = build_grid(domain, n)?;
    let local = solve_local_rearrangement(&grid, beta, &opts.fw)?;
    let probes = probe_profiles(&grid);
    let hn = grid.cell_volume();

    let row = |s: f64| -> SweepRow {
        let solved = KernelParams::new(grid.dim(), s, true)
            .and_then(|p| assemble_with(&grid, p, opts.assembly))
            .and_then(|op| solve_frank_wolfe(&op, RearrangementClass { beta }, &opts.fw));
        match solved {
            Ok(sol) => {
                let df = sub(&sol.f_hat.values, &local.f_hat.values);
                let metrics = SweepMetrics {
                    alpha_s: sol.alpha,
                    objective: sol.objective,
                    state_dist: norm2(&sub(&sol.u_hat.values, &local.u_hat.values)),
                    objective_diff: (sol.objective - local.objective).abs(),
                    density_tests: probes
                        .iter()
                        .map(|p| hn * p.iter().zip(&df).map(|(a, b)| a * b).sum::<f64>())
                        .collect(),
                    frac_measure: intermediate_measure(&grid, &sol.f_hat.values, opts.eps),
                    iterations: sol.iterations,
                    gap: sol.gap,
                };
                SweepRow {
                    s,
                    metrics: Some(metrics),
                    error: None,
                    solution: Some(sol),
                }
            }
            Err(e) => SweepRow {
                s,
                metrics: None,
                error: Some(e.to_string()),
                solution: None,
            },
        }
    };

    let rows: Vec<SweepRow> = match opts.workers {
        Some(w) if w > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {w} workers: {e}")))?;
            pool.install(|| s_list.par_iter().map(|&s| row(s)).collect())
        }
        _ => s_list.iter().map(|&s| row(s)).collect(),
    };

    Ok(SweepTable {
        n,
        beta,
        eps: opts.eps,
        local: LocalSummary {
            alpha: local.alpha,
            objective: local.objective,
            frac_measure: intermediate_measure(&grid, &local.f_hat.values, opts.eps),
            iterations: local.iterations,
        },
        rows,
        local_solution: local,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet;
    use crate::grid::Field;

    fn interval(n: usize) -> Grid {
        build_grid(Domain::interval(-1.0, 1.0), n).unwrap()
    }

    #[test]
    fn stencil_rows() {
        let g = interval(8);
        let op = assemble_local(&g);
        let a = op.matrix();
        let h2 = g.h * g.h;
        assert_eq!(a.get(3, 2) * h2, -1.0);
        assert_eq!(a.get(3, 3) * h2, 2.0);
        assert_eq!(a.get(3, 4) * h2, -1.0);
        assert_eq!(a.get(0, 0) * h2, 3.0);
        assert!(a.is_symmetric());
        for i in 0..8 {
            let row_sum: f64 = a.row(i).iter().sum();
            assert!((row_sum - op.tail()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn five_point_rows() {
        let g = build_grid(Domain::rectangle([0.0, 0.0], [1.0, 1.0]), 5).unwrap();
        let op = assemble_local(&g);
        let h2 = g.h * g.h;
        let center = g.index_of(2, 2).unwrap();
        assert_eq!(op.matrix().get(center, center) * h2, 4.0);
        assert_eq!(op.tail()[center], 0.0);
        let corner = g.index_of(0, 0).unwrap();
        assert_eq!(op.matrix().get(corner, corner) * h2, 6.0);
    }

    #[test]
    fn parabola_second_order() {
        let errs: Vec<f64> = [32, 64, 128]
            .iter()
            .map(|&n| {
                let g = interval(n);
                let u = dirichlet::solve(&assemble_local(&g), &Field::constant(n, 1.0), 1e-11)
                    .unwrap();
                g.nodes
                    .iter()
                    .zip(&u.values)
                    .map(|(p, v)| (v - 0.5 * (1.0 - p[0] * p[0])).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
        }
    }

    #[test]
    fn local_full_budget_and_indicator() {
        let g = interval(64);
        let full = solve_local_rearrangement(&g, 2.0, &FwOptions::default()).unwrap();
        assert!(full.f_hat.values.iter().all(|&v| v == 1.0));
        let half = solve_local_rearrangement(&g, 1.0, &FwOptions::default()).unwrap();
        // at most the two cells straddling each free boundary point
        assert!(intermediate_measure(&g, &half.f_hat.values, 1e-3) <= 2.0 * g.h + 1e-12);
    }

    #[test]
    fn sweep_validation() {
        let d = Domain::interval(-1.0, 1.0);
        let o = SweepOptions::default();
        assert!(s_sweep(d, 16, 1.0, &[], &o).is_err());
        assert!(s_sweep(d, 16, 1.0, &[0.8, 0.6], &o).is_err());
        assert!(s_sweep(d, 16, 1.0, &[0.99], &o).is_err());
        let bad = SweepOptions {
            normalized: false,
            ..o
        };
        assert!(s_sweep(d, 16, 1.0, &[0.5], &bad).is_err());
    }

    #[test]
    fn single_row_matches_direct_solve() {
        let d = Domain::interval(-1.0, 1.0);
        let t = s_sweep(d, 32, 1.0, &[0.5], &SweepOptions::default()).unwrap();
        let g = interval(32);
        let op = crate::operator::assemble(&g, KernelParams::new(1, 0.5, true).unwrap()).unwrap();
        let direct =
            solve_frank_wolfe(&op, RearrangementClass { beta: 1.0 }, &FwOptions::default())
                .unwrap();
        let row = t.rows[0].solution.as_ref().unwrap();
        assert_eq!(row.f_hat, direct.f_hat);
        assert_eq!(row.u_hat, direct.u_hat);
        assert_eq!(row.objective, direct.objective);
    }

    #[test]
    fn parallel_rows_are_identical() {
        let d = Domain::interval(-1.0, 1.0);
        let s = [0.4, 0.6, 0.8];
        let serial = s_sweep(d, 32, 1.0, &s, &SweepOptions::default()).unwrap();
        let par = s_sweep(
            d,
            32,
            1.0,
            &s,
            &SweepOptions {
                workers: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in serial.rows.iter().zip(&par.rows) {
            assert_eq!(a.solution.as_ref().unwrap().f_hat, b.solution.as_ref().unwrap().f_hat);
        }
    }
}
