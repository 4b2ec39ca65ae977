//! Uniform cell-centered grids on intervals, rectangles and masked disks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A disk used as an inclusion mask inside a rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Bounded domain `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    /// Axis-aligned rectangle; when `disk` is set only cells whose center
    /// lies inside the disk belong to `D`.
    Rectangle {
        lower: [f64; 2],
        upper: [f64; 2],
        disk: Option<Disk>,
    },
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Self {
        Domain::Interval { a, b }
    }

    pub fn rectangle(lower: [f64; 2], upper: [f64; 2]) -> Self {
        Domain::Rectangle {
            lower,
            upper,
            disk: None,
        }
    }

    /// Disk discretized inside its bounding square.
    pub fn disk(center: [f64; 2], radius: f64) -> Self {
        Domain::Rectangle {
            lower: [center[0] - radius, center[1] - radius],
            upper: [center[0] + radius, center[1] + radius],
            disk: Some(Disk { center, radius }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }

    /// Diameter of the bounding box.
    pub fn diameter(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { lower, upper, .. } => {
                ((upper[0] - lower[0]).powi(2) + (upper[1] - lower[1]).powi(2)).sqrt()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Domain::Interval { a, b } => a.is_finite() && b.is_finite() && b > a,
            Domain::Rectangle { lower, upper, disk } => {
                lower.iter().chain(upper.iter()).all(|v| v.is_finite())
                    && upper[0] > lower[0]
                    && upper[1] > lower[1]
                    && disk.is_none_or(|d| d.radius > 0.0 && d.radius.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Grid(format!("empty or unbounded domain {self:?}")))
        }
    }
}

/// Uniform lattice of cells of side `h`; nodes are cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub domain: Domain,
    /// Cells along the first axis.
    pub n: usize,
    pub h: f64,
    /// Lattice extent `[nx, ny]` (`ny = 1` in 1D).
    pub shape: [usize; 2],
    /// Interior node coordinates in row-major order (second entry 0 in 1D).
    pub nodes: Vec<[f64; 2]>,
    /// Lattice position of every interior node.
    pub cells: Vec<[usize; 2]>,
    lookup: Vec<Option<usize>>,
}

/// Build the grid with `n` cells along the first axis.
pub fn build_grid(domain: Domain, n: usize) -> Result<Grid> {
    if n < 3 {
        return Err(Error::Grid(format!("need at least 3 cells per axis, got {n}")));
    }
    domain.validate()?;
    let (h, shape, origin) = match domain {
        Domain::Interval { a, b } => ((b - a) / n as f64, [n, 1], [a, 0.0]),
        Domain::Rectangle { lower, upper, .. } => {
            let h = (upper[0] - lower[0]) / n as f64;
            let ny_real = (upper[1] - lower[1]) / h;
            let ny = ny_real.round();
            if (ny - ny_real).abs() > 1e-9 * ny_real.max(1.0) || ny < 3.0 {
                return Err(Error::Grid(format!(
                    "rectangle height is not a whole number of cells (got {ny_real})"
                )));
            }
            (h, [n, ny as usize], lower)
        }
    };
    let mut nodes = Vec::new();
    let mut cells = Vec::new();
    let mut lookup = vec![None; shape[0] * shape[1]];
    for iy in 0..shape[1] {
        for ix in 0..shape[0] {
            let x = origin[0] + (ix as f64 + 0.5) * h;
            let y = if shape[1] == 1 {
                0.0
            } else {
                origin[1] + (iy as f64 + 0.5) * h
            };
            let inside = match domain {
                Domain::Rectangle { disk: Some(d), .. } => {
                    (x - d.center[0]).powi(2) + (y - d.center[1]).powi(2) < d.radius * d.radius
                }
                _ => true,
            };
            if inside {
                lookup[iy * shape[0] + ix] = Some(nodes.len());
                nodes.push([x, y]);
                cells.push([ix, iy]);
            }
        }
    }
    if nodes.len() < 2 {
        return Err(Error::Grid("fewer than two interior cells".into()));
    }
    Ok(Grid {
        domain,
        n,
        h,
        shape,
        nodes,
        cells,
        lookup,
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    /// Discrete measure of `D`: number of interior cells times `h^n`.
    pub fn measure(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    /// Lower corner of the lattice.
    pub fn origin(&self) -> [f64; 2] {
        match self.domain {
            Domain::Interval { a, .. } => [a, 0.0],
            Domain::Rectangle { lower, .. } => lower,
        }
    }

    /// Interior index of lattice cell `(ix, iy)`, if that cell is in `D`.
    pub fn index_of(&self, ix: isize, iy: isize) -> Option<usize> {
        if ix < 0 || iy < 0 || ix as usize >= self.shape[0] || iy as usize >= self.shape[1] {
            return None;
        }
        self.lookup[iy as usize * self.shape[0] + ix as usize]
    }

    /// Axis neighbors of node `i` (2 in 1D, 4 in 2D); `None` marks a cell outside `D`.
    pub fn neighbors(&self, i: usize) -> Vec<Option<usize>> {
        let [ix, iy] = self.cells[i];
        let (ix, iy) = (ix as isize, iy as isize);
        let mut out = vec![self.index_of(ix - 1, iy), self.index_of(ix + 1, iy)];
        if self.dim() == 2 {
            out.push(self.index_of(ix, iy - 1));
            out.push(self.index_of(ix, iy + 1));
        }
        out
    }

    /// Euclidean distance between interior nodes.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (p, q) = (self.nodes[i], self.nodes[j]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }
}

/// Grid function on interior nodes with a constant value on `D^c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub exterior: f64,
}

impl Field {
    pub fn new(values: Vec<f64>, exterior: f64) -> Self {
        Self { values, exterior }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len], 0.0)
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self::new(vec![value; len], 0.0)
    }

    /// Samples `f` at the interior nodes of `grid`.
    pub fn sample(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self::new(grid.nodes.iter().map(|&p| f(p)).collect(), 0.0)
    }

    pub fn with_exterior(mut self, exterior: f64) -> Self {
        self.exterior = exterior;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.exterior.is_finite() && self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Subtracts the exterior value so the result vanishes on `D^c`.
    pub fn shifted(&self) -> Field {
        Field::new(self.values.iter().map(|v| v - self.exterior).collect(), 0.0)
    }
}

/// Midpoint rule `h^n Σ f_i`.
pub fn integrate(grid: &Grid, f: &Field) -> f64 {
    grid.cell_volume() * f.values.iter().sum::<f64>()
}

/// Positive and negative parts, exterior value included.
pub fn split_signs(f: &Field) -> (Field, Field) {
    let plus = f.values.iter().map(|&v| v.max(0.0)).collect();
    let minus = f.values.iter().map(|&v| (-v).max(0.0)).collect();
    (
        Field::new(plus, f.exterior.max(0.0)),
        Field::new(minus, (-f.exterior).max(0.0)),
    )
}
