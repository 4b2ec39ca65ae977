//! Dense discrete fractional Laplacian with zero exterior data.
//!
//! Row `i` realizes `(Aw)_i = Σ_j w_ij (w_i - w_j) + t_i w_i`, where `w_ij` is
//! the kernel integrated over cell `j` seen from node `i` and `t_i` collects
//! every interaction with `D^c`. The resulting matrix is a symmetric M-matrix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Domain, Field, Grid};
use crate::kernel::KernelParams;
use crate::linalg::{dot, DenseMatrix};
use crate::quad::{self, GAUSS4};

/// Which operator a matrix realizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    Fractional(KernelParams),
    /// Standard finite-difference `-Δ` (the `s = 1` reference).
    Local,
}

/// Treatment of the principal-value integral over a node's own cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfCell {
    /// Drop the self cell entirely.
    Omit,
    /// Second-order Taylor term of the self cell, discretized by the axis
    /// second difference (odd reflection across `∂D`). Adds nonpositive
    /// off-diagonals only, so the M-matrix structure is kept.
    #[default]
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub self_cell: SelfCell,
    /// Refuse dense assembly above this many interior nodes.
    pub max_nodes: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            self_cell: SelfCell::SecondOrder,
            max_nodes: 8192,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Operator {
    pub kind: OperatorKind,
    pub grid: Grid,
    matrix: DenseMatrix,
    tail: Vec<f64>,
}

/// Kept for readers who know the object by its mathematical name.
pub type NonlocalOperator = Operator;

impl Operator {
    pub(crate) fn from_parts(
        kind: OperatorKind,
        grid: Grid,
        matrix: DenseMatrix,
        tail: Vec<f64>,
    ) -> Self {
        Self {
            kind,
            grid,
            matrix,
            tail,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Exterior weight `t_i` (equal to the row sum of `A`).
    pub fn tail(&self) -> &[f64] {
        &self.tail
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn params(&self) -> Option<KernelParams> {
        match self.kind {
            OperatorKind::Fractional(p) => Some(p),
            OperatorKind::Local => None,
        }
    }

    /// `A w` on raw interior values.
    pub fn matvec(&self, w: &[f64]) -> Vec<f64> {
        self.matrix.matvec(w)
    }

    fn check_field(&self, w: &Field) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::Mismatch(format!(
                "field has {} values, operator has {} nodes",
                w.len(),
                self.dim()
            )));
        }
        if w.exterior != 0.0 {
            return Err(Error::Mismatch(format!(
                "operator acts on zero-exterior fields; shift by the exterior value {} first",
                w.exterior
            )));
        }
        Ok(())
    }

    /// Discrete `(-Δ)^s w` at the interior nodes.
    pub fn apply(&self, w: &Field) -> Result<Field> {
        self.check_field(w)?;
        Ok(Field::new(self.matvec(&w.values), 0.0))
    }

    /// `|w|_s² = 2 hⁿ wᵀ A w`.
    pub fn energy(&self, w: &Field) -> Result<f64> {
        self.check_field(w)?;
        Ok(self.quadratic_energy(&w.values))
    }

    pub(crate) fn quadratic_energy(&self, w: &[f64]) -> f64 {
        2.0 * self.grid.cell_volume() * dot(w, &self.matvec(w))
    }

    /// Writes `A` as a 16-byte header (`FLAP`, u32 dimension, u64 reserved,
    /// little endian) followed by row-major little-endian f64 entries.
    pub fn write_flap(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(b"FLAP")?;
        out.write_all(&(self.dim() as u32).to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        for v in self.matrix.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a matrix written by [`Operator::write_flap`].
pub fn read_flap(path: &Path) -> Result<DenseMatrix> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    let mut input = BufReader::new(File::open(path)?);
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != b"FLAP" {
        return Err(bad("missing FLAP magic"));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != dim * dim * 8 {
        return Err(bad("payload length does not match dimension"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenseMatrix::from_rows(dim, data))
}

/// Assembles the discrete fractional Laplacian on `grid`.
pub fn assemble(grid: &Grid, params: KernelParams) -> Result<Operator> {
    assemble_with(grid, params, AssemblyOptions::default())
}

pub fn assemble_with(
    grid: &Grid,
    params: KernelParams,
    opts: AssemblyOptions,
) -> Result<Operator> {
    if params.n != grid.dim() {
        return Err(Error::Mismatch(format!(
            "kernel dimension {} does not match grid dimension {}",
            params.n,
            grid.dim()
        )));
    }
    if grid.len() > opts.max_nodes {
        return Err(Error::TooLarge {
            nodes: grid.len(),
            cap: opts.max_nodes,
        });
    }
    let c = params.constant();
    let weights = OffsetWeights::new(grid, params.s, c, opts.self_cell);
    let n = grid.len();

    let tail: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| exterior_weight(grid, &weights, params.s, c, i))
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let [ix, iy] = grid.cells[i];
            let mut diag = tail[i];
            for (j, cell) in grid.cells.iter().enumerate() {
                if j == i {
                    continue;
                }
                let w = weights.get(ix.abs_diff(cell[0]), iy.abs_diff(cell[1]));
                row[j] = -w;
                diag += w;
            }
            row[i] = diag;
            row
        })
        .collect();
    let matrix = DenseMatrix::from_rows(n, rows.concat());
    Ok(Operator::from_parts(
        OperatorKind::Fractional(params),
        grid.clone(),
        matrix,
        tail,
    ))
}

/// Couplings indexed by absolute lattice offset. Every weight depends only
/// on the offset, which makes `A` exactly symmetric.
struct OffsetWeights {
    nx: usize,
    table: Vec<f64>,
    /// Self-cell correction per axis neighbor.
    self_weight: f64,
}

impl OffsetWeights {
    fn new(grid: &Grid, s: f64, c: f64, self_cell: SelfCell) -> Self {
        let h = grid.h;
        let [nx, ny] = grid.shape;
        let self_weight = match self_cell {
            SelfCell::Omit => 0.0,
            SelfCell::SecondOrder => c * self_cell_moment(grid.dim(), s, h) / (2.0 * h * h),
        };
        let mut table = vec![0.0; nx * ny];
        for dy in 0..ny {
            for dx in 0..nx {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let mut w = c * cell_weight(grid.dim(), s, h, dx, dy);
                if dx + dy == 1 {
                    w += self_weight;
                }
                table[dy * nx + dx] = w;
            }
        }
        Self {
            nx,
            table,
            self_weight,
        }
    }

    fn get(&self, dx: usize, dy: usize) -> f64 {
        self.table[dy * self.nx + dx]
    }
}

/// `∫_{self cell} z₁² |z|^{-n-2s} dz`.
fn self_cell_moment(dim: usize, s: f64, h: f64) -> f64 {
    let half = 0.5 * h;
    if dim == 1 {
        2.0 * half.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s)
    } else {
        // ½ ∫_{[-h/2,h/2]²} |z|^{-2s} dz, with the unit square integral done in polar form
        let angular = quad::integrate(
            |t: f64| t.cos().powf(2.0 * s - 2.0),
            0.0,
            std::f64::consts::FRAC_PI_4,
            1e-15,
            1e-13,
        );
        let unit = 8.0 / (2.0 - 2.0 * s) * angular;
        0.5 * half.powf(2.0 - 2.0 * s) * unit
    }
}

/// Unscaled kernel integral over the cell at lattice offset `(dx, dy)`.
///
/// Cells closer than `2h` are integrated exactly (1D) or by 4×4 Gauss (2D);
/// farther cells use the midpoint rule.
fn cell_weight(dim: usize, s: f64, h: f64, dx: usize, dy: usize) -> f64 {
    let e = dim as f64 + 2.0 * s;
    if dim == 1 {
        let d = dx as f64 * h;
        if dx == 1 {
            ((d - 0.5 * h).powf(-2.0 * s) - (d + 0.5 * h).powf(-2.0 * s)) / (2.0 * s)
        } else {
            h / d.powf(e)
        }
    } else if dx.max(dy) == 1 {
        let (cx, cy) = (dx as f64 * h, dy as f64 * h);
        let mut acc = 0.0;
        for &(gx, wx) in GAUSS4.iter() {
            for &(gy, wy) in GAUSS4.iter() {
                let x = cx + 0.5 * h * gx;
                let y = cy + 0.5 * h * gy;
                acc += wx * wy * (x * x + y * y).powf(-0.5 * e);
            }
        }
        acc * 0.25 * h * h
    } else {
        let d2 = ((dx * dx + dy * dy) as f64) * h * h;
        h * h * d2.powf(-0.5 * e)
    }
}

/// `t_i`: exterior integral plus self-cell ghost couplings across `∂D`.
fn exterior_weight(grid: &Grid, weights: &OffsetWeights, s: f64, c: f64, i: usize) -> f64 {
    let [x, y] = grid.nodes[i];
    let outside_neighbors = grid.neighbors(i).iter().filter(|n| n.is_none()).count();
    let ghost = 2.0 * weights.self_weight * outside_neighbors as f64;
    let analytic = match grid.domain {
        Domain::Interval { a, b } => ((x - a).powf(-2.0 * s) + (b - x).powf(-2.0 * s)) / (2.0 * s),
        Domain::Rectangle { lower, upper, .. } => rectangle_exterior(s, x, y, lower, upper),
    };
    let mut masked = 0.0;
    if let Domain::Rectangle { disk: Some(_), .. } = grid.domain {
        let [ix, iy] = grid.cells[i];
        for cy in 0..grid.shape[1] {
            for cx in 0..grid.shape[0] {
                if grid.index_of(cx as isize, cy as isize).is_none() {
                    let (dx, dy) = (ix.abs_diff(cx), iy.abs_diff(cy));
                    masked += weights.get(dx, dy);
                    // axis neighbors outside D enter through `ghost` instead
                    if dx + dy == 1 {
                        masked -= weights.self_weight;
                    }
                }
            }
        }
    }
    c * analytic + masked + ghost
}

/// `∫_{R² \ R} |p - y|^{-2-2s} dy` for `p` inside the rectangle `R`.
///
/// In polar coordinates about `p` this equals `(1/2s) ∫ r(θ)^{-2s} dθ`, with
/// `r(θ)` the distance to `∂R`; each side contributes
/// `d^{-2s} ∫ cos^{2s} φ dφ` over the angles it subtends.
fn rectangle_exterior(s: f64, x: f64, y: f64, lower: [f64; 2], upper: [f64; 2]) -> f64 {
    let (left, right) = (x - lower[0], upper[0] - x);
    let (bottom, top) = (y - lower[1], upper[1] - y);
    let side = |d: f64, e1: f64, e2: f64| {
        let f = |phi: f64| phi.cos().powf(2.0 * s);
        let g1 = quad::integrate(f, 0.0, (e1 / d).atan(), 1e-15, 1e-13);
        let g2 = quad::integrate(f, 0.0, (e2 / d).atan(), 1e-15, 1e-13);
        d.powf(-2.0 * s) * (g1 + g2)
    };
    (side(right, bottom, top) + side(top, left, right) + side(left, top, bottom)
        + side(bottom, right, left))
        / (2.0 * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Domain};

    fn op1(n: usize, s: f64, normalized: bool, self_cell: SelfCell) -> Operator {
        let g = build_grid(Domain::interval(-1.0, 1.0), n).unwrap();
        let p = KernelParams::new(1, s, normalized).unwrap();
        assemble_with(
            &g,
            p,
            AssemblyOptions {
                self_cell,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn far_coupling_matches_kernel_formula() {
        let op = op1(16, 0.5, false, SelfCell::SecondOrder);
        let h = op.grid.h;
        let (i, j) = (2, 9);
        let d = op.grid.distance(i, j);
        assert!((op.matrix().get(i, j) + h / (d * d)).abs() < 1e-14);
    }

    #[test]
    fn interior_row_sum_is_closed_form_tail() {
        let op = op1(16, 0.5, false, SelfCell::SecondOrder);
        for i in 1..15 {
            let x = op.grid.nodes[i][0];
            let expect = 1.0 / (x + 1.0) + 1.0 / (1.0 - x);
            let sum: f64 = op.matrix().row(i).iter().sum();
            assert!((sum - expect).abs() < 1e-11 * expect, "{i}: {sum} vs {expect}");
            assert_eq!(op.tail()[i], expect);
        }
    }

    #[test]
    fn without_self_cell_every_row_sum_is_closed_form() {
        let op = op1(12, 0.3, true, SelfCell::Omit);
        let c = crate::kernel::normalization_constant(1, 0.3).unwrap();
        for i in 0..12 {
            let x = op.grid.nodes[i][0];
            let expect = c * ((x + 1.0).powf(-0.6) + (1.0 - x).powf(-0.6)) / 0.6;
            assert!((op.tail()[i] - expect).abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn apply_spike_is_column() {
        let op = op1(10, 0.4, false, SelfCell::SecondOrder);
        let mut e = Field::zeros(10);
        e.values[3] = 1.0;
        let col = op.apply(&e).unwrap();
        for k in 0..10 {
            assert_eq!(col.values[k], op.matrix().get(k, 3));
        }
        assert_eq!(op.apply(&Field::zeros(10)).unwrap().values, vec![0.0; 10]);
        let ei = op.energy(&e).unwrap();
        assert!((ei - 2.0 * op.grid.h * op.matrix().get(3, 3)).abs() < 1e-13 * ei);
        assert_eq!(op.energy(&Field::zeros(10)).unwrap(), 0.0);
    }

    #[test]
    fn nonzero_exterior_is_rejected() {
        let op = op1(8, 0.5, false, SelfCell::SecondOrder);
        let w = Field::zeros(8).with_exterior(1.0);
        assert!(matches!(op.apply(&w), Err(Error::Mismatch(_))));
        assert!(op.energy(&Field::zeros(7)).is_err());
    }

    #[test]
    fn node_cap() {
        let g = build_grid(Domain::interval(0.0, 1.0), 64).unwrap();
        let p = KernelParams::new(1, 0.5, false).unwrap();
        let r = assemble_with(
            &g,
            p,
            AssemblyOptions {
                max_nodes: 32,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::TooLarge { nodes: 64, cap: 32 })));
    }

    #[test]
    fn rectangle_exterior_matches_brute_force() {
        // compare against a crude sum over a big annulus plus analytic far field
        let s = 0.4;
        let (x, y) = (0.3, -0.2);
        let v = rectangle_exterior(s, x, y, [-1.0, -1.0], [1.0, 1.0]);
        let big = 40.0;
        let m = 2000;
        let step = 2.0 * big / m as f64;
        let mut acc = 0.0;
        for a in 0..m {
            for b in 0..m {
                let px = -big + (a as f64 + 0.5) * step;
                let py = -big + (b as f64 + 0.5) * step;
                if px.abs() < 1.0 && py.abs() < 1.0 {
                    continue;
                }
                let r2 = (px - x).powi(2) + (py - y).powi(2);
                if r2 < big * big {
                    acc += step * step * r2.powf(-1.0 - s);
                }
            }
        }
        acc += 2.0 * std::f64::consts::PI * big.powf(-2.0 * s) / (2.0 * s);
        assert!((acc - v).abs() < 2e-3 * v, "{acc} vs {v}");
    }

    #[test]
    fn flap_round_trip() {
        let op = op1(6, 0.5, true, SelfCell::SecondOrder);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.flap");
        op.write_flap(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FLAP");
        assert_eq!(bytes.len(), 16 + 36 * 8);
        assert_eq!(&read_flap(&path).unwrap(), op.matrix());
    }
}
