//! Minimization of `Φ_s(f) = |u_f|_s²` over densities `0 ≤ f ≤ 1` with
//! `∫_D f = β`, and the checks of the optimal structure.
//!
//! `Φ_s(f) = 2 hⁿ fᵀ A⁻¹ f`, so its derivative is `4 hⁿ u_f`. Only the
//! direction of the gradient enters the linear oracle; the duality gap and
//! the line search use the exact derivative.

use serde::Serialize;

use crate::dirichlet::{objective, SolverKind, StateSolver};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::linalg::{dot, norm2, power_iteration, sub, Cholesky, DenseMatrix, DEFAULT_SEED};
use crate::operator::Operator;

/// Values this close to 0 or 1 are treated as sitting on the bound.
const BOUND_EPS: f64 = 1e-13;

/// Densities `0 ≤ f ≤ 1` with `hⁿ Σ f = β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RearrangementClass {
    pub beta: f64,
}

impl RearrangementClass {
    /// Accepts `0 < β ≤ |D|`; `β = |D|` is the single point `f ≡ 1`.
    pub fn new(beta: f64, measure: f64) -> Result<Self> {
        if !(beta > 0.0) || beta > measure * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "volume budget must lie in (0, |D|] = (0, {measure}], got {beta}"
            )));
        }
        Ok(Self { beta })
    }
}

/// Minimizer of `hⁿ Σ u_i f_i` over the class: fill the lowest values of
/// `u` first (ties by node index), one fractional cell at the end.
pub fn bathtub_lmo(u: &[f64], beta: f64, cellvol: f64) -> Result<Vec<f64>> {
    let measure = u.len() as f64 * cellvol;
    if beta > measure * (1.0 + 1e-12) || beta < 0.0 {
        return Err(Error::Domain(format!(
            "budget {beta} outside [0, |D|] = [0, {measure}]"
        )));
    }
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    let mut f = vec![0.0; u.len()];
    fill(&mut f, &order, beta / cellvol);
    Ok(f)
}

/// Puts `cells` units of mass into `f` following `order`.
fn fill(f: &mut [f64], order: &[usize], cells: f64) {
    let mut q = cells.max(0.0);
    if (q - q.round()).abs() <= 1e-12 * q.max(1.0) {
        q = q.round();
    }
    let full = (q.floor() as usize).min(order.len());
    for &i in &order[..full] {
        f[i] = 1.0;
    }
    if full < order.len() {
        let rest = q - full as f64;
        if rest > 0.0 {
            f[order[full]] = rest;
        }
    }
}

/// Euclidean projection onto the class: `clip(g - λ, 0, 1)` with `λ` chosen
/// so the mass is `β`.
///
/// `λ` is bracketed in `[min g - 1, max g]` and bisected; the final value is
/// solved exactly on the set of unclipped entries.
pub fn project_capped_box(g: &[f64], beta: f64, cellvol: f64) -> Vec<f64> {
    let target = beta / cellvol;
    let mass = |lambda: f64| -> f64 { g.iter().map(|&v| (v - lambda).clamp(0.0, 1.0)).sum() };
    let lo0 = g.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi0 = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut lambda = 0.5 * (lo + hi);
    // mass(λ) is affine on the current active set; solve it exactly there
    let (mut ones, mut free_sum, mut free_count) = (0.0, 0.0, 0usize);
    for &v in g {
        let t = v - lambda;
        if t >= 1.0 {
            ones += 1.0;
        } else if t > 0.0 {
            free_sum += v;
            free_count += 1;
        }
    }
    if free_count > 0 {
        let exact = (free_sum + ones - target) / free_count as f64;
        if (exact - lambda).abs() <= (hi0 - lo0) * 1e-9 + 1e-12 {
            lambda = exact;
        }
    }
    g.iter().map(|&v| (v - lambda).clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub gap: f64,
    pub step: f64,
    /// Away (in-face) step rather than a step toward the oracle vertex.
    pub away: bool,
}

/// Result of either rearrangement solver.
#[derive(Debug, Clone)]
pub struct RearrangementSolution {
    pub f_hat: Field,
    pub u_hat: Field,
    pub alpha: f64,
    /// Frank–Wolfe gap `⟨∇Φ_s(f̂), f̂ - f_lmo⟩` at the returned density.
    pub gap: f64,
    pub iterations: usize,
    pub objective: f64,
    pub beta: f64,
    pub log: Vec<IterationRecord>,
}

/// Step directions used by [`solve_frank_wolfe`].
///
/// The away vertex maximizes `⟨u, ·⟩` over the smallest face of the class
/// containing the iterate, so no vertex decomposition has to be stored.
/// The optimum usually lies inside a large face (the plateau), where the
/// plain method converges sublinearly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FwVariant {
    /// Toward the oracle vertex only.
    Vanilla,
    /// Toward the oracle vertex or away from the in-face vertex.
    Away,
    /// Mass moved from the in-face away vertex to the oracle vertex.
    Pairwise,
    /// Pairwise steps alternated with exact minimization over the affine
    /// hull of the current face (clipped to the box).
    #[default]
    InFace,
}

#[derive(Debug, Clone, Copy)]
pub struct FwOptions {
    /// Stop once `gap ≤ gap_tol · Φ_s(f⁰)`.
    pub gap_tol: f64,
    pub max_iter: usize,
    pub variant: FwVariant,
    pub solver: SolverKind,
    pub solver_tol: f64,
    /// Re-solve the state from scratch every this many iterations.
    pub refresh_every: usize,
}

impl Default for FwOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            max_iter: 5000,
            variant: FwVariant::InFace,
            solver: SolverKind::Cholesky,
            solver_tol: 1e-12,
            refresh_every: 50,
        }
    }
}

/// Frank–Wolfe with the bathtub oracle and exact line search.
///
/// Starts from the constant density `β/|D|`. The state is updated linearly
/// along each direction (`u ← u + γ A⁻¹d`), which costs one solve per step.
pub fn solve_frank_wolfe(
    op: &Operator,
    class: RearrangementClass,
    opts: &FwOptions,
) -> Result<RearrangementSolution> {
    let grid = &op.grid;
    let cellvol = grid.cell_volume();
    let class = RearrangementClass::new(class.beta, grid.measure())?;
    let solver = StateSolver::new(op, opts.solver, opts.solver_tol)?;
    let n = op.dim();

    let mut f = vec![(class.beta / grid.measure()).min(1.0); n];
    let mut u = solver.solve_values(&f)?;
    let phi0 = objective(op, &f, &u);
    let threshold = opts.gap_tol * phi0;
    let mut log = Vec::new();
    let target = class.beta / cellvol;

    for it in 0..=opts.max_iter {
        if it > 0 && opts.refresh_every > 0 && it % opts.refresh_every == 0 {
            repair_mass(&mut f, target);
            u = solver.solve_values(&f)?;
        }
        let vertex = bathtub_lmo(&u, class.beta, cellvol)?;
        let fw_dir = sub(&vertex, &f);
        let gap = -4.0 * cellvol * dot(&u, &fw_dir);
        let obj = objective(op, &f, &u);
        if gap <= threshold {
            log.push(IterationRecord {
                iteration: it,
                objective: obj,
                gap,
                step: 0.0,
                away: false,
            });
            return finish(op, &solver, f, gap.max(0.0), it, class.beta, log);
        }
        if it == opts.max_iter {
            return Err(Error::NotConverged {
                method: "Frank-Wolfe",
                iterations: it,
                residual: gap / phi0,
            });
        }

        if opts.variant == FwVariant::InFace && it % 2 == 1 {
            if let Some((target_f, target_u)) = face_minimizer(op, &f, target)? {
                let dir = sub(&target_f, &f);
                let slope = dot(&u, &dir);
                if slope < 0.0 {
                    let step = max_feasible_step(&f, &dir).min(1.0);
                    for i in 0..n {
                        f[i] += step * dir[i];
                        u[i] += step * (target_u[i] - u[i]);
                    }
                    snap_bounds(&mut f);
                    log.push(IterationRecord {
                        iteration: it,
                        objective: obj,
                        gap,
                        step,
                        away: true,
                    });
                    continue;
                }
            }
        }

        let mut dir = fw_dir;
        let mut max_step = 1.0;
        let mut away = false;
        if opts.variant != FwVariant::Vanilla {
            if let Some(a) = away_vertex(&f, &u, target) {
                let candidate = match opts.variant {
                    FwVariant::Away => sub(&f, &a),
                    _ => sub(&vertex, &a),
                };
                let limit = max_feasible_step(&f, &candidate);
                let better = opts.variant == FwVariant::Pairwise
                    || dot(&u, &candidate) < dot(&u, &dir);
                if better && limit > 0.0 && dot(&u, &candidate) < 0.0 {
                    dir = candidate;
                    max_step = limit;
                    away = true;
                }
            }
        }
        let z = solver.solve_values(&dir)?;
        let slope = dot(&u, &dir);
        let curvature = dot(&dir, &z);
        let step = if curvature > 0.0 {
            (-slope / curvature).clamp(0.0, max_step)
        } else {
            max_step
        };
        for i in 0..n {
            f[i] += step * dir[i];
            u[i] += step * z[i];
        }
        snap_bounds(&mut f);
        log.push(IterationRecord {
            iteration: it,
            objective: obj,
            gap,
            step,
            away,
        });
    }
    unreachable!("loop returns on the last iteration")
}

/// Vertex maximizing `⟨u, ·⟩` over the smallest face of the class that
/// contains `f`.
fn away_vertex(f: &[f64], u: &[f64], target: f64) -> Option<Vec<f64>> {
    let mut vertex = vec![0.0; f.len()];
    let mut free = Vec::new();
    let mut ones = 0.0;
    for (i, &v) in f.iter().enumerate() {
        if v >= 1.0 - BOUND_EPS {
            vertex[i] = 1.0;
            ones += 1.0;
        } else if v > BOUND_EPS {
            free.push(i);
        }
    }
    if free.len() < 2 {
        return None;
    }
    free.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    fill(&mut vertex, &free, target - ones);
    Some(vertex)
}

/// Minimizer of `fᵀA⁻¹f` over the affine hull of the smallest face that
/// contains `f`, returned with its state.
///
/// On that hull the optimality condition is `u = λ` on the free entries
/// `F`, with `f` fixed on the saturated entries `S`. Writing
/// `u_S = p - λ q` with `A_SS p = f_S`, `A_SS q = A_SF 1`, the mass
/// constraint `1ᵀ(A u)_F = m` fixes `λ`.
fn face_minimizer(op: &Operator, f: &[f64], target: f64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let a = op.matrix();
    let n = f.len();
    let (mut free, mut fixed) = (Vec::new(), Vec::new());
    for (i, &v) in f.iter().enumerate() {
        if v > BOUND_EPS && v < 1.0 - BOUND_EPS {
            free.push(i);
        } else {
            fixed.push(i);
        }
    }
    if free.len() < 2 {
        return Ok(None);
    }
    let free_mass = target - fixed.iter().map(|&i| f[i]).sum::<f64>();
    let row_free_sum = |i: usize| -> f64 { free.iter().map(|&j| a.get(i, j)).sum() };

    let (p, q) = if fixed.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let k = fixed.len();
        let mut sub_a = DenseMatrix::zeros(k);
        for (r, &i) in fixed.iter().enumerate() {
            for (c, &j) in fixed.iter().enumerate() {
                sub_a.set(r, c, a.get(i, j));
            }
        }
        let chol = Cholesky::factor(&sub_a)?;
        let f_s: Vec<f64> = fixed.iter().map(|&i| f[i]).collect();
        let b_s: Vec<f64> = fixed.iter().map(|&i| row_free_sum(i)).collect();
        (chol.solve(&f_s), chol.solve(&b_s))
    };
    // 1ᵀ A_FS x = Σ_{s} x_s (Σ_{j∈F} A_js) by symmetry
    let col_sums: Vec<f64> = fixed.iter().map(|&i| row_free_sum(i)).collect();
    let ff: f64 = free.iter().map(|&i| row_free_sum(i)).sum();
    let denom = ff - dot(&col_sums, &q);
    if !(denom > 0.0) {
        return Ok(None);
    }
    let lambda = (free_mass - dot(&col_sums, &p)) / denom;
    let mut u = vec![lambda; n];
    for (r, &i) in fixed.iter().enumerate() {
        u[i] = p[r] - lambda * q[r];
    }
    let mut g = op.matvec(&u);
    for &i in &fixed {
        g[i] = f[i];
    }
    Ok(Some((g, u)))
}

/// Largest `γ` with `0 ≤ f + γ d ≤ 1`.
fn max_feasible_step(f: &[f64], dir: &[f64]) -> f64 {
    let mut max_step = f64::INFINITY;
    for (&d, &v) in dir.iter().zip(f) {
        if d > 0.0 {
            max_step = max_step.min((1.0 - v) / d);
        } else if d < 0.0 {
            max_step = max_step.min(v / -d);
        }
    }
    if max_step.is_finite() {
        max_step
    } else {
        0.0
    }
}

fn snap_bounds(f: &mut [f64]) {
    for v in f.iter_mut() {
        if *v < BOUND_EPS {
            *v = 0.0;
        } else if *v > 1.0 - BOUND_EPS {
            *v = 1.0;
        }
    }
}

/// Spreads rounding drift in the total mass over the unsaturated entries.
fn repair_mass(f: &mut [f64], target: f64) {
    let excess: f64 = f.iter().sum::<f64>() - target;
    let free: Vec<usize> = (0..f.len()).filter(|&i| f[i] > 0.0 && f[i] < 1.0).collect();
    if free.is_empty() || excess == 0.0 {
        return;
    }
    let share = excess / free.len() as f64;
    for i in free {
        f[i] = (f[i] - share).clamp(0.0, 1.0);
    }
}

fn finish(
    op: &Operator,
    solver: &StateSolver,
    mut f: Vec<f64>,
    gap: f64,
    iterations: usize,
    beta: f64,
    log: Vec<IterationRecord>,
) -> Result<RearrangementSolution> {
    repair_mass(&mut f, beta / op.grid.cell_volume());
    let u = solver.solve_values(&f)?;
    let objective = objective(op, &f, &u);
    let alpha = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RearrangementSolution {
        f_hat: Field::new(f, 0.0),
        u_hat: Field::new(u, 0.0),
        alpha,
        gap,
        iterations,
        objective,
        beta,
        log,
    })
}

/// Frank–Wolfe gap of an arbitrary density: `4 hⁿ Σ u_f (f - f_lmo)`.
pub fn frank_wolfe_gap(op: &Operator, f: &[f64], u: &[f64], beta: f64) -> Result<f64> {
    let cellvol = op.grid.cell_volume();
    let vertex = bathtub_lmo(u, beta, cellvol)?;
    Ok(4.0 * cellvol * dot(u, &sub(f, &vertex)))
}

#[derive(Debug, Clone)]
pub struct PgOptions {
    /// Fixed step; `None` uses `1/λ_max(A⁻¹)` from 20 power iterations.
    pub step: Option<f64>,
    /// Stop once `‖f_{k+1} - f_k‖₂ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub solver: SolverKind,
    pub solver_tol: f64,
    /// Starting density; the constant `β/|D|` when absent.
    pub initial: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for PgOptions {
    fn default() -> Self {
        Self {
            step: None,
            tol: 1e-12,
            max_iter: 200_000,
            solver: SolverKind::Cholesky,
            solver_tol: 1e-12,
            initial: None,
            seed: DEFAULT_SEED,
        }
    }
}

/// Projected gradient `f ← P(f - t u_f)` with a fixed step.
pub fn solve_projected_gradient(
    op: &Operator,
    class: RearrangementClass,
    opts: &PgOptions,
) -> Result<RearrangementSolution> {
    let grid = &op.grid;
    let cellvol = grid.cell_volume();
    let class = RearrangementClass::new(class.beta, grid.measure())?;
    let solver = StateSolver::new(op, opts.solver, opts.solver_tol)?;
    let n = op.dim();
    let step = match opts.step {
        Some(t) => t,
        None => {
            let lambda = power_iteration(|v| solver.solve_values(v), n, 0.0, 20, opts.seed)?;
            1.0 / lambda
        }
    };
    let mut f = match &opts.initial {
        Some(f0) if f0.len() == n => f0.clone(),
        Some(f0) => {
            return Err(Error::Mismatch(format!(
                "initial density has {} values, expected {n}",
                f0.len()
            )))
        }
        None => vec![(class.beta / grid.measure()).min(1.0); n],
    };
    let mut log = Vec::new();
    for it in 0..opts.max_iter {
        let u = solver.solve_values(&f)?;
        let trial: Vec<f64> = f.iter().zip(&u).map(|(fi, ui)| fi - step * ui).collect();
        let next = project_capped_box(&trial, class.beta, cellvol);
        let change = norm2(&sub(&next, &f));
        log.push(IterationRecord {
            iteration: it,
            objective: objective(op, &f, &u),
            gap: f64::NAN,
            step,
            away: false,
        });
        f = next;
        if change <= opts.tol {
            let u = solver.solve_values(&f)?;
            let gap = frank_wolfe_gap(op, &f, &u, class.beta)?;
            let objective = objective(op, &f, &u);
            let alpha = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Ok(RearrangementSolution {
                f_hat: Field::new(f, 0.0),
                u_hat: Field::new(u, 0.0),
                alpha,
                gap,
                iterations: it + 1,
                objective,
                beta: class.beta,
                log,
            });
        }
    }
    Err(Error::NotConverged {
        method: "projected gradient",
        iterations: opts.max_iter,
        residual: f64::NAN,
    })
}

/// Plateau level `α = max_i û_i`.
pub fn extract_alpha(sol: &RearrangementSolution) -> f64 {
    sol.u_hat.max()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureTolerances {
    /// Level tolerance in state units; `None` means `1e-3 · α`.
    pub delta_level: Option<f64>,
    pub eps_density: f64,
    pub eta_pos: f64,
}

impl Default for StructureTolerances {
    fn default() -> Self {
        Self {
            delta_level: None,
            eps_density: 1e-3,
            eta_pos: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest slack; negative means violated, `None` when vacuous.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub alpha: f64,
    pub delta_level: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl StructureReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn min_slack(iter: impl Iterator<Item = f64>) -> Option<f64> {
    iter.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
}

/// Checks the optimal structure on a solution:
/// (a) `0 ≤ û ≤ α`, (b) `{û < α - δ} ⊆ {f̂ ≈ 1}`, (c) `{f̂ < 1} ⊆ {û ≈ α}`,
/// (d) `f̂ ≥ η` everywhere and (e) intermediate densities occupy positive
/// measure.
pub fn verify_structure(
    op: &Operator,
    sol: &RearrangementSolution,
    tols: &StructureTolerances,
) -> StructureReport {
    let alpha = extract_alpha(sol);
    let delta = tols.delta_level.unwrap_or(1e-3 * alpha);
    let eps = tols.eps_density;
    let f = &sol.f_hat.values;
    let u = &sol.u_hat.values;
    let idx = 0..f.len();

    let bounds = min_slack(u.iter().map(|&v| (v + delta).min(alpha + delta - v)));
    let low_set_full = min_slack(
        idx.clone()
            .filter(|&i| u[i] < alpha - delta)
            .map(|i| f[i] - (1.0 - eps)),
    );
    let partial_on_plateau = min_slack(
        idx.clone()
            .filter(|&i| f[i] <= 1.0 - eps)
            .map(|i| delta - (u[i] - alpha).abs()),
    );
    let positivity = min_slack(f.iter().map(|&v| v - tols.eta_pos));
    let intermediate = idx.filter(|&i| f[i] > eps && f[i] < 1.0 - eps).count() as f64
        * op.grid.cell_volume();

    let ok = |m: Option<f64>| m.is_none_or(|m| m >= 0.0);
    let checks = vec![
        Check {
            name: "state_bounds",
            passed: ok(bounds),
            margin: bounds,
        },
        Check {
            name: "low_set_saturated",
            passed: ok(low_set_full),
            margin: low_set_full,
        },
        Check {
            name: "partial_density_on_plateau",
            passed: ok(partial_on_plateau),
            margin: partial_on_plateau,
        },
        Check {
            name: "strict_positivity",
            passed: ok(positivity),
            margin: positivity,
        },
        Check {
            name: "non_characteristic",
            passed: intermediate > 0.0,
            margin: Some(intermediate),
        },
    ];
    let passed = checks.iter().all(|c| c.passed);
    StructureReport {
        alpha,
        delta_level: delta,
        checks,
        passed,
    }
}
