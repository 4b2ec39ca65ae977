//! Normalized fractional obstacle problem with constant exterior data `α`.
//!
//! Everything is computed on the shifted variable `w = U - α`, which vanishes
//! outside `D`; constants do not change the seminorm, so the operator can be
//! applied directly to `w`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{split_signs, Field};
use crate::linalg::{dot, norm2, power_iteration, sub, DEFAULT_SEED};
use crate::operator::Operator;
use crate::rearrangement::RearrangementSolution;

#[derive(Debug, Clone)]
pub struct ObstacleOptions {
    /// Stop once `‖w_{k+1} - w_k‖₂ ≤ tol · max(1, ‖w_k‖₂)`.
    pub tol: f64,
    pub max_iter: usize,
    /// FISTA momentum with gradient restart (iterates then lose monotonicity
    /// of `J`).
    pub accelerate: bool,
    /// Contact band `θ`; `None` means `1e-8 · α`.
    pub band: Option<f64>,
    /// Tolerance of the subharmonicity test.
    pub subharmonic_tol: f64,
    /// Starting shifted state `w⁰`; zero when absent.
    pub initial: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for ObstacleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 500_000,
            accelerate: false,
            band: None,
            subharmonic_tol: 1e-9,
            initial: None,
            seed: DEFAULT_SEED,
        }
    }
}

impl ObstacleOptions {
    pub fn band_for(&self, alpha: f64) -> f64 {
        self.band.unwrap_or(1e-8 * alpha)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SubharmonicReport {
    /// `max_i ((-Δ)^s U)_i`.
    pub max_state: f64,
    /// `max_i ((-Δ)^s U⁺)_i`.
    pub max_positive_part: f64,
    /// `(-Δ)^s U ≤ tol` in `D`.
    pub subharmonic: bool,
    /// Additionally `(-Δ)^s U⁺ ≤ tol`.
    pub positive_part_subharmonic: bool,
}

#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    /// `U`, with exterior value `α`.
    pub state: Field,
    pub alpha: f64,
    /// `J_h(U)`.
    pub j_value: f64,
    pub residual_lower: Field,
    pub residual_upper: Field,
    /// Absent when `U` fails the subharmonicity precondition.
    pub nonlinear_residual: Option<Field>,
    pub subharmonic: SubharmonicReport,
    pub iterations: usize,
    pub band: f64,
    /// `J_h` at every iterate.
    pub history: Vec<f64>,
}

/// `J_h(U) = ½ hⁿ wᵀAw + hⁿ Σ U_i⁺` with `w = U - α`.
pub fn j_value(op: &Operator, state: &Field) -> f64 {
    let w = state.shifted();
    let hn = op.grid.cell_volume();
    let positive: f64 = state.values.iter().map(|v| v.max(0.0)).sum();
    0.5 * hn * dot(&w.values, &op.matvec(&w.values)) + hn * positive
}

/// Proximal map of `z ↦ t (z + α)⁺`.
fn prox(z: f64, alpha: f64, t: f64) -> f64 {
    if z > -alpha + t {
        z - t
    } else if z >= -alpha {
        -alpha
    } else {
        z
    }
}

/// Minimizes `J_h` over states equal to `α` outside `D` by proximal gradient.
///
/// The quadratic part `½ wᵀAw` is scaled by ½ relative to `|w|_s²` so that
/// stationarity reads `χ_{U>0} ≤ -(A w) ≤ χ_{U≥0}` exactly.
pub fn minimize_j(op: &Operator, alpha: f64, opts: &ObstacleOptions) -> Result<ObstacleSolution> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("obstacle level must be ≥ 0, got {alpha}")));
    }
    let n = op.dim();
    let lambda_max = power_iteration(|v| Ok(op.matvec(v)), n, 1e-6, 10_000, opts.seed)?;
    let t = 1.0 / lambda_max;
    let hn = op.grid.cell_volume();
    let energy = |w: &[f64], aw: &[f64]| -> f64 {
        hn * (0.5 * dot(w, aw) + w.iter().map(|v| (v + alpha).max(0.0)).sum::<f64>())
    };

    let mut w = match &opts.initial {
        Some(w0) if w0.len() == n => w0.clone(),
        Some(w0) => {
            return Err(Error::Mismatch(format!(
                "initial state has {} values, expected {n}",
                w0.len()
            )))
        }
        None => vec![0.0; n],
    };
    let mut y = w.clone();
    let mut momentum: f64 = 1.0;
    let mut history = Vec::new();
    let mut change = f64::INFINITY;
    for it in 0..opts.max_iter {
        let ay = op.matvec(&y);
        let next: Vec<f64> = y
            .iter()
            .zip(&ay)
            .map(|(yi, gi)| prox(yi - t * gi, alpha, t))
            .collect();
        let step = sub(&next, &w);
        change = norm2(&step);
        let scale = norm2(&w).max(1.0);
        if opts.accelerate {
            // restart when the momentum direction opposes the gradient map
            let grad_map = sub(&y, &next);
            if dot(&grad_map, &step) > 0.0 {
                momentum = 1.0;
            }
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / m_next;
            momentum = m_next;
            y = next.iter().zip(&step).map(|(x, d)| x + beta * d).collect();
        } else {
            y = next.clone();
        }
        w = next;
        if !opts.accelerate || it % 50 == 0 {
            history.push(energy(&w, &op.matvec(&w)));
        }
        if change <= opts.tol * scale {
            return Ok(finish(op, alpha, w, it + 1, history, opts));
        }
    }
    Err(Error::NotConverged {
        method: "proximal gradient",
        iterations: opts.max_iter,
        residual: change,
    })
}

fn finish(
    op: &Operator,
    alpha: f64,
    w: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
    opts: &ObstacleOptions,
) -> ObstacleSolution {
    let state = Field::new(w.iter().map(|v| v + alpha).collect(), alpha);
    let band = opts.band_for(alpha);
    let (residual_lower, residual_upper) = residual_band(op, &state, band);
    let subharmonic = subharmonic_report(op, &state, opts.subharmonic_tol);
    let nonlinear_residual = residual_nonlinear(op, &state, band, opts.subharmonic_tol).ok();
    ObstacleSolution {
        j_value: j_value(op, &state),
        state,
        alpha,
        residual_lower,
        residual_upper,
        nonlinear_residual,
        subharmonic,
        iterations,
        band,
        history,
    }
}

/// `-(-Δ)^s U` at the interior nodes.
fn minus_laplacian(op: &Operator, state: &Field) -> Vec<f64> {
    op.matvec(&state.shifted().values)
        .into_iter()
        .map(|v| -v)
        .collect()
}

/// Violations of `χ_{U>θ} ≤ -(-Δ)^s U ≤ χ_{U≥-θ}`.
pub fn residual_band(op: &Operator, state: &Field, band: f64) -> (Field, Field) {
    let g = minus_laplacian(op, state);
    let mut lower = Vec::with_capacity(g.len());
    let mut upper = Vec::with_capacity(g.len());
    for (&u, &gi) in state.values.iter().zip(&g) {
        let positive = if u > band { 1.0 } else { 0.0 };
        let nonnegative = if u >= -band { 1.0 } else { 0.0 };
        lower.push((positive - gi).max(0.0));
        upper.push((gi - nonnegative).max(0.0));
    }
    (Field::new(lower, 0.0), Field::new(upper, 0.0))
}

/// Signs of `(-Δ)^s U` and `(-Δ)^s U⁺` inside `D`.
pub fn subharmonic_report(op: &Operator, state: &Field, tol: f64) -> SubharmonicReport {
    let g_state = op.matvec(&state.shifted().values);
    let (plus, _) = split_signs(state);
    let g_plus = op.matvec(&plus.shifted().values);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (max_state, max_positive_part) = (max(&g_state), max(&g_plus));
    let subharmonic = max_state <= tol;
    SubharmonicReport {
        max_state,
        max_positive_part,
        subharmonic,
        positive_part_subharmonic: subharmonic && max_positive_part <= tol,
    }
}

/// Residual of
/// `-(-Δ)^s U - χ_{U≤θ} min(-(-Δ)^s U⁺, 1) = χ_{U>θ}` at the interior nodes.
///
/// The minimum is only meaningful for s-subharmonic `U`, so that is checked
/// first.
pub fn residual_nonlinear(op: &Operator, state: &Field, band: f64, tol: f64) -> Result<Field> {
    let report = subharmonic_report(op, state, tol);
    if !report.positive_part_subharmonic {
        return Err(Error::NotSubharmonic {
            max_u: report.max_state,
            max_plus: report.max_positive_part,
        });
    }
    let g = op.matvec(&state.shifted().values);
    let (plus, _) = split_signs(state);
    let g_plus = op.matvec(&plus.shifted().values);
    let r = state
        .values
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let contact = if u <= band { (-g_plus[i]).min(1.0) } else { 0.0 };
            let rhs = if u > band { 1.0 } else { 0.0 };
            -g[i] - contact - rhs
        })
        .collect();
    Ok(Field::new(r, 0.0))
}

/// Nodes with an axis neighbor in `D` on the other side of the contact
/// classification `U > θ`.
pub fn free_boundary_cells(op: &Operator, state: &Field, band: f64) -> Vec<usize> {
    let positive = |i: usize| state.values[i] > band;
    (0..state.len())
        .filter(|&i| {
            op.grid
                .neighbors(i)
                .into_iter()
                .flatten()
                .any(|j| positive(j) != positive(i))
        })
        .collect()
}

/// Max norm of `field` over nodes outside `excluded`.
pub fn max_outside(field: &Field, excluded: &[usize]) -> f64 {
    let mut mask = vec![false; field.len()];
    for &i in excluded {
        mask[i] = true;
    }
    field
        .values
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| !m)
        .fold(0.0, |acc, (v, _)| acc.max(v.abs()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EquivalenceMetrics {
    pub alpha: f64,
    /// `‖(α - û) - U‖_∞`.
    pub sup_diff: f64,
    /// Discrete L² norm `(hⁿ Σ ((α - û) - U)²)^{1/2}`.
    pub l2_diff: f64,
    /// `J_h(U) - J_h(α - û)`.
    pub j_gap: f64,
    pub j_value: f64,
}

impl EquivalenceMetrics {
    /// `sup_diff ≤ sup_rel · α` and `|J_gap| ≤ j_rel · |J|`, with `α > 0`.
    pub fn passes(&self, sup_rel: f64, j_rel: f64) -> bool {
        self.alpha > 0.0
            && self.sup_diff <= sup_rel * self.alpha
            && self.j_gap <= j_rel * self.j_value.abs()
    }
}

/// Compares the obstacle minimizer with `α - û` built from a rearrangement
/// solution on the same operator.
pub fn equivalence_check(
    op: &Operator,
    rearr: &RearrangementSolution,
    obst: &ObstacleSolution,
) -> Result<EquivalenceMetrics> {
    if rearr.u_hat.len() != op.dim() || obst.state.len() != op.dim() {
        return Err(Error::Mismatch(format!(
            "states of length {} and {} do not match the operator ({} nodes)",
            rearr.u_hat.len(),
            obst.state.len(),
            op.dim()
        )));
    }
    let candidate = Field::new(
        rearr.u_hat.values.iter().map(|u| obst.alpha - u).collect(),
        obst.alpha,
    );
    let diff = sub(&candidate.values, &obst.state.values);
    let hn = op.grid.cell_volume();
    let j_obst = j_value(op, &obst.state);
    Ok(EquivalenceMetrics {
        alpha: rearr.alpha,
        sup_diff: diff.iter().fold(0.0, |m, v| m.max(v.abs())),
        l2_diff: (hn * dot(&diff, &diff)).sqrt(),
        j_gap: j_obst - j_value(op, &candidate),
        j_value: j_obst,
    })
}
