//! Batch front-end: configuration, dispatch and artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::dirichlet;
use crate::error::{Error, Result};
use crate::grid::{build_grid, Domain, Field, Grid};
use crate::io::{read_json, write_gnuplot, write_json, CsvTable};
use crate::kernel::{getoor_reference, KernelParams};
use crate::linalg::{norm2, sub, DEFAULT_SEED};
use crate::obstacle::{
    equivalence_check, free_boundary_cells, max_outside, minimize_j, residual_band,
    residual_nonlinear, subharmonic_report, ObstacleOptions,
};
use crate::operator::{assemble, Operator};
use crate::rearrangement::{
    solve_frank_wolfe, verify_structure, FwOptions, RearrangementClass, RearrangementSolution,
    StructureTolerances,
};
use crate::slimit::{s_sweep, SweepMetrics, SweepOptions, SweepTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Dirichlet,
    Rearrange,
    Obstacle,
    Verify,
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Dirichlet => "dirichlet",
            Command::Rearrange => "rearrange",
            Command::Obstacle => "obstacle",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { a: f64, b: f64 },
    Rectangle { lower: [f64; 2], upper: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
}

impl DomainSpec {
    pub fn to_domain(self) -> Domain {
        match self {
            DomainSpec::Interval { a, b } => Domain::interval(a, b),
            DomainSpec::Rectangle { lower, upper } => Domain::rectangle(lower, upper),
            DomainSpec::Disk { center, radius } => Domain::disk(center, radius),
        }
    }

    /// `interval:A,B`, `rectangle:X0,Y0,X1,Y1` or `disk:CX,CY,R`.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let (kind, rest) = text
            .split_once(':')
            .ok_or_else(|| format!("expected KIND:NUMBERS, got {text:?}"))?;
        let v = rest
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
            .collect::<std::result::Result<Vec<f64>, String>>()?;
        match (kind, v.as_slice()) {
            ("interval", &[a, b]) => Ok(DomainSpec::Interval { a, b }),
            ("rectangle", &[x0, y0, x1, y1]) => Ok(DomainSpec::Rectangle {
                lower: [x0, y0],
                upper: [x1, y1],
            }),
            ("disk", &[cx, cy, r]) => Ok(DomainSpec::Disk {
                center: [cx, cy],
                radius: r,
            }),
            _ => Err(format!("unknown domain {text:?}")),
        }
    }

    fn entries(self, out: &mut Map<String, Value>) {
        let mut put = |k: &str, v: Value| {
            out.insert(format!("domain_{k}"), v);
        };
        match self {
            DomainSpec::Interval { a, b } => {
                put("kind", json!("interval"));
                put("a", json!(a));
                put("b", json!(b));
            }
            DomainSpec::Rectangle { lower, upper } => {
                put("kind", json!("rectangle"));
                put("lower", json!(lower));
                put("upper", json!(upper));
            }
            DomainSpec::Disk { center, radius } => {
                put("kind", json!("disk"));
                put("center", json!(center));
                put("radius", json!(radius));
            }
        }
    }

    fn from_entries(obj: &Map<String, Value>, path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        let num = |k: &str| {
            obj.get(&format!("domain_{k}"))
                .and_then(Value::as_f64)
                .ok_or_else(|| bad(&format!("missing domain_{k}")))
        };
        let pair = |k: &str| -> Result<[f64; 2]> {
            serde_json::from_value(obj.get(&format!("domain_{k}")).cloned().unwrap_or(Value::Null))
                .map_err(|_| bad(&format!("missing domain_{k}")))
        };
        match obj.get("domain_kind").and_then(Value::as_str) {
            Some("interval") => Ok(DomainSpec::Interval {
                a: num("a")?,
                b: num("b")?,
            }),
            Some("rectangle") => Ok(DomainSpec::Rectangle {
                lower: pair("lower")?,
                upper: pair("upper")?,
            }),
            Some("disk") => Ok(DomainSpec::Disk {
                center: pair("center")?,
                radius: num("radius")?,
            }),
            _ => Err(bad("missing domain_kind")),
        }
    }
}

/// `[solver]` section.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub gap_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub cg_tol: Option<f64>,
    pub obstacle_tol: Option<f64>,
    pub obstacle_max_iter: Option<usize>,
    pub accelerate: Option<bool>,
    pub residual_tol: Option<f64>,
    pub eps_density: Option<f64>,
    pub s_cap: Option<f64>,
    pub workers: Option<usize>,
}

/// Contents of a TOML config file; every key is optional here and checked
/// per command by [`RunConfig::resolve`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<Command>,
    pub domain: Option<DomainSpec>,
    pub n: Option<usize>,
    pub s: Option<f64>,
    pub s_list: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    /// Constant right-hand side for `dirichlet`.
    pub f: Option<f64>,
    pub normalized: Option<bool>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "fracopt", version, about = "Fractional rearrangement and obstacle solvers")]
pub struct Args {
    /// Overrides `command` from the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// `interval:A,B`, `rectangle:X0,Y0,X1,Y1` or `disk:CX,CY,R`.
    #[arg(long, value_parser = DomainSpec::parse)]
    pub domain: Option<DomainSpec>,
    #[arg(short)]
    pub n: Option<usize>,
    #[arg(short)]
    pub s: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub s_list: Option<Vec<f64>>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub f: Option<f64>,
    #[arg(long)]
    pub normalized: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(short, long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub cg_tol: Option<f64>,
    #[arg(long)]
    pub obstacle_tol: Option<f64>,
    #[arg(long)]
    pub accelerate: Option<bool>,
    #[arg(long)]
    pub residual_tol: Option<f64>,
    #[arg(long)]
    pub s_cap: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Args {
    /// Flags take precedence over the file.
    pub fn merge(self, file: FileConfig) -> FileConfig {
        let sv = file.solver;
        FileConfig {
            command: self.command.or(file.command),
            domain: self.domain.or(file.domain),
            n: self.n.or(file.n),
            s: self.s.or(file.s),
            s_list: self.s_list.or(file.s_list),
            beta: self.beta.or(file.beta),
            alpha: self.alpha.or(file.alpha),
            f: self.f.or(file.f),
            normalized: self.normalized.or(file.normalized),
            seed: self.seed.or(file.seed),
            output: self.output.or(file.output),
            input: self.input.or(file.input),
            solver: SolverSection {
                gap_tol: self.gap_tol.or(sv.gap_tol),
                max_iter: self.max_iter.or(sv.max_iter),
                cg_tol: self.cg_tol.or(sv.cg_tol),
                obstacle_tol: self.obstacle_tol.or(sv.obstacle_tol),
                obstacle_max_iter: sv.obstacle_max_iter,
                accelerate: self.accelerate.or(sv.accelerate),
                residual_tol: self.residual_tol.or(sv.residual_tol),
                eps_density: sv.eps_density,
                s_cap: self.s_cap.or(sv.s_cap),
                workers: self.workers.or(sv.workers),
            },
        }
    }
}

/// Validated settings for one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub domain: DomainSpec,
    pub n: usize,
    pub s: f64,
    pub s_list: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,
    pub f: f64,
    pub normalized: bool,
    pub seed: u64,
    pub output: PathBuf,
    pub input: PathBuf,
    pub gap_tol: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
    pub obstacle_tol: f64,
    pub obstacle_max_iter: usize,
    pub accelerate: bool,
    pub residual_tol: f64,
    pub eps_density: f64,
    pub s_cap: f64,
    pub workers: Option<usize>,
}

fn missing(key: &str, cmd: Command) -> Error {
    Error::Config(format!("missing key `{key}` (required by `{}`)", cmd.name()))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn resolve(c: FileConfig) -> Result<Self> {
        let command = c
            .command
            .ok_or_else(|| Error::Config("missing key `command`".into()))?;
        let needs = |key: &str, present: bool| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(missing(key, command))
            }
        };
        use Command::*;
        if command != Verify {
            needs("n", c.n.is_some())?;
        }
        match command {
            Dirichlet | Rearrange | Obstacle => needs("s", c.s.is_some())?,
            Sweep => needs("s_list", c.s_list.is_some())?,
            Verify => needs("input", c.input.is_some())?,
        }
        if matches!(command, Rearrange | Sweep) {
            needs("beta", c.beta.is_some())?;
        }
        if command == Obstacle {
            needs("alpha", c.alpha.is_some())?;
        }
        let output = match (&c.output, &c.input) {
            (Some(o), _) => o.clone(),
            (None, Some(i)) if command == Verify => i.clone(),
            _ => return Err(missing("output", command)),
        };
        let sv = c.solver;
        let cfg = RunConfig {
            command,
            domain: c.domain.unwrap_or(DomainSpec::Interval { a: -1.0, b: 1.0 }),
            n: c.n.unwrap_or(0),
            s: c.s.unwrap_or(0.5),
            s_list: c.s_list.unwrap_or_default(),
            beta: c.beta.unwrap_or(0.0),
            alpha: c.alpha.unwrap_or(0.0),
            f: c.f.unwrap_or(1.0),
            normalized: c.normalized.unwrap_or(true),
            seed: c.seed.unwrap_or(DEFAULT_SEED),
            output,
            input: c.input.unwrap_or_default(),
            gap_tol: positive("solver.gap_tol", sv.gap_tol.unwrap_or(1e-6))?,
            max_iter: sv.max_iter.unwrap_or(5000),
            cg_tol: positive("solver.cg_tol", sv.cg_tol.unwrap_or(dirichlet::DEFAULT_TOL))?,
            obstacle_tol: positive("solver.obstacle_tol", sv.obstacle_tol.unwrap_or(1e-13))?,
            obstacle_max_iter: sv.obstacle_max_iter.unwrap_or(500_000),
            accelerate: sv.accelerate.unwrap_or(false),
            residual_tol: positive("solver.residual_tol", sv.residual_tol.unwrap_or(1e-3))?,
            eps_density: positive("solver.eps_density", sv.eps_density.unwrap_or(1e-3))?,
            s_cap: positive("solver.s_cap", sv.s_cap.unwrap_or(0.97))?,
            workers: sv.workers,
        };
        if matches!(command, Rearrange | Sweep) {
            positive("beta", cfg.beta)?;
        }
        if command == Obstacle && !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
            return Err(Error::Config(format!("`alpha` must be ≥ 0, got {}", cfg.alpha)));
        }
        if command == Sweep && !cfg.normalized {
            return Err(Error::Config("`normalized` must be true for `sweep`".into()));
        }
        Ok(cfg)
    }

    fn grid(&self) -> Result<Grid> {
        build_grid(self.domain.to_domain(), self.n).map_err(config_error)
    }

    fn operator(&self, grid: &Grid, s: f64) -> Result<Operator> {
        let p = KernelParams::new(grid.dim(), s, self.normalized).map_err(config_error)?;
        assemble(grid, p).map_err(config_error)
    }

    fn fw_options(&self) -> FwOptions {
        FwOptions {
            gap_tol: self.gap_tol,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }

    fn obstacle_options(&self) -> ObstacleOptions {
        ObstacleOptions {
            tol: self.obstacle_tol,
            max_iter: self.obstacle_max_iter,
            accelerate: self.accelerate,
            seed: self.seed,
            ..Default::default()
        }
    }

    fn summary(&self, command: &str) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("command".into(), json!(command));
        self.domain.entries(&mut m);
        m.insert("n".into(), json!(self.n));
        m.insert("normalized".into(), json!(self.normalized));
        m.insert("seed".into(), json!(self.seed));
        m
    }
}

/// Parameter problems found while building the grid or operator are
/// configuration errors.
fn config_error(e: Error) -> Error {
    match e {
        Error::Domain(m) | Error::Grid(m) => Error::Config(m),
        Error::TooLarge { nodes, cap } => {
            Error::Config(format!("`n` gives {nodes} nodes, above the cap of {cap}"))
        }
        other => other,
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } | Error::NotPositiveDefinite { .. } | Error::NotSubharmonic { .. } => 1,
        _ => 2,
    }
}

/// Outcome of a successful dispatch; `failures` lists checks that did not
/// pass (only `verify` fills it).
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.output).map_err(|e| {
        Error::Config(format!("cannot create output {}: {e}", cfg.output.display()))
    })?;
    match cfg.command {
        Command::Dirichlet => run_dirichlet(cfg),
        Command::Rearrange => run_rearrange(cfg),
        Command::Obstacle => run_obstacle(cfg),
        Command::Verify => run_verify(cfg),
        Command::Sweep => run_sweep(cfg),
    }
}

/// Relative discrete L² distance to the closed form, when the domain is
/// the unit ball and the source is 1.
fn getoor_error(cfg: &RunConfig, op: &Operator, u: &Field) -> Option<f64> {
    let unit_ball = match cfg.domain {
        DomainSpec::Interval { a, b } => a == -1.0 && b == 1.0,
        DomainSpec::Disk { center, radius } => center == [0.0, 0.0] && radius == 1.0,
        DomainSpec::Rectangle { .. } => false,
    };
    if !unit_ball || cfg.f != 1.0 {
        return None;
    }
    let p = op.params()?;
    let reference: Vec<f64> = op
        .grid
        .nodes
        .iter()
        .map(|x| getoor_reference(&p, &x[..op.grid.dim()]))
        .collect();
    Some(norm2(&sub(&u.values, &reference)) / norm2(&reference))
}

fn run_dirichlet(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let op = cfg.operator(&grid, cfg.s)?;
    let f = Field::constant(grid.len(), cfg.f);
    let u = dirichlet::solve(&op, &f, cfg.cg_tol)?;
    let phi = 2.0 * grid.cell_volume() * f.values.iter().zip(&u.values).map(|(a, b)| a * b).sum::<f64>();
    CsvTable::from_grid(&grid, &[("f", &f.values), ("u", &u.values)])
        .write(&cfg.output.join("state.csv"))?;
    let mut m = cfg.summary("dirichlet");
    m.insert("s".into(), json!(cfg.s));
    m.insert("f".into(), json!(cfg.f));
    m.insert("cg_tol".into(), json!(cfg.cg_tol));
    m.insert("objective".into(), json!(phi));
    m.insert("max_u".into(), json!(u.max()));
    let err = getoor_error(cfg, &op, &u);
    m.insert("getoor_rel_error".into(), json!(err));
    write_json(&cfg.output.join("summary.json"), &m)?;
    let mut lines = vec![format!("objective {phi:.10e}")];
    if let Some(e) = err {
        lines.push(format!("getoor relative L2 error {e:.3e}"));
    }
    Ok(Outcome {
        lines,
        failures: vec![],
    })
}

fn run_rearrange(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let op = cfg.operator(&grid, cfg.s)?;
    let class = RearrangementClass::new(cfg.beta, grid.measure()).map_err(config_error)?;
    let sol = solve_frank_wolfe(&op, class, &cfg.fw_options())?;
    let report = verify_structure(&op, &sol, &structure_tols(cfg));

    CsvTable::from_grid(&grid, &[("f_hat", &sol.f_hat.values), ("u_hat", &sol.u_hat.values)])
        .write(&cfg.output.join("solution.csv"))?;
    let mut log = CsvTable::new(&["iteration", "objective", "gap", "step", "away"]);
    for r in &sol.log {
        log.rows.push(vec![
            r.iteration as f64,
            r.objective,
            r.gap,
            r.step,
            if r.away { 1.0 } else { 0.0 },
        ]);
    }
    log.write(&cfg.output.join("log.csv"))?;

    let mut m = cfg.summary("rearrange");
    m.insert("s".into(), json!(cfg.s));
    m.insert("beta".into(), json!(cfg.beta));
    m.insert("alpha".into(), json!(sol.alpha));
    m.insert("objective".into(), json!(sol.objective));
    m.insert("gap".into(), json!(sol.gap));
    m.insert("gap_tol".into(), json!(cfg.gap_tol));
    m.insert(
        "initial_objective".into(),
        json!(sol.log.first().map_or(sol.objective, |r| r.objective)),
    );
    m.insert("iterations".into(), json!(sol.iterations));
    m.insert("structure_passed".into(), json!(report.passed));
    for c in &report.checks {
        m.insert(format!("check_{}", c.name), json!(c.passed));
        m.insert(format!("margin_{}", c.name), json!(c.margin));
    }
    write_json(&cfg.output.join("summary.json"), &m)?;
    let mut lines = vec![format!(
        "alpha {:.10e} objective {:.10e} gap {:.3e} after {} iterations",
        sol.alpha, sol.objective, sol.gap, sol.iterations
    )];
    lines.extend(report.checks.iter().map(check_line));
    Ok(Outcome {
        lines,
        failures: vec![],
    })
}

fn structure_tols(cfg: &RunConfig) -> StructureTolerances {
    StructureTolerances {
        eps_density: cfg.eps_density,
        ..Default::default()
    }
}

fn check_line(c: &crate::rearrangement::Check) -> String {
    let margin = c.margin.map_or("n/a".to_string(), |m| format!("{m:.3e}"));
    format!(
        "{} {} (margin {margin})",
        if c.passed { "PASS" } else { "FAIL" },
        c.name
    )
}

fn run_obstacle(cfg: &RunConfig) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let op = cfg.operator(&grid, cfg.s)?;
    let sol = minimize_j(&op, cfg.alpha, &cfg.obstacle_options())?;
    let collar = free_boundary_cells(&op, &sol.state, sol.band);
    let nonlinear = sol
        .nonlinear_residual
        .clone()
        .unwrap_or_else(|| Field::constant(grid.len(), f64::NAN));
    CsvTable::from_grid(
        &grid,
        &[
            ("u", &sol.state.values),
            ("residual_lower", &sol.residual_lower.values),
            ("residual_upper", &sol.residual_upper.values),
            ("residual_nonlinear", &nonlinear.values),
        ],
    )
    .write(&cfg.output.join("state.csv"))?;
    write_free_boundary(&cfg.output.join("free_boundary.csv"), &grid, &collar)?;

    let mut m = cfg.summary("obstacle");
    m.insert("s".into(), json!(cfg.s));
    m.insert("alpha".into(), json!(cfg.alpha));
    m.insert("j_value".into(), json!(sol.j_value));
    m.insert("iterations".into(), json!(sol.iterations));
    m.insert("band".into(), json!(sol.band));
    m.insert("min_u".into(), json!(sol.state.min()));
    m.insert("residual_lower_max".into(), json!(max_outside(&sol.residual_lower, &collar)));
    m.insert("residual_upper_max".into(), json!(max_outside(&sol.residual_upper, &collar)));
    m.insert(
        "residual_nonlinear_max".into(),
        json!(sol.nonlinear_residual.as_ref().map(|r| max_outside(r, &collar))),
    );
    m.insert("subharmonic".into(), json!(sol.subharmonic.subharmonic));
    m.insert(
        "positive_part_subharmonic".into(),
        json!(sol.subharmonic.positive_part_subharmonic),
    );
    m.insert("free_boundary_cells".into(), json!(collar.len()));
    write_json(&cfg.output.join("summary.json"), &m)?;
    Ok(Outcome {
        lines: vec![format!(
            "J {:.10e} after {} iterations, {} free-boundary cells",
            sol.j_value,
            sol.iterations,
            collar.len()
        )],
        failures: vec![],
    })
}

fn write_free_boundary(path: &Path, grid: &Grid, cells: &[usize]) -> Result<()> {
    let coords: &[&str] = if grid.dim() == 1 { &["x"] } else { &["x", "y"] };
    let mut header = vec!["index"];
    header.extend(coords);
    let mut t = CsvTable::new(&header);
    for &i in cells {
        let mut row = vec![i as f64];
        row.extend(&grid.nodes[i][..grid.dim()]);
        t.rows.push(row);
    }
    t.write(path)
}

/// Reads back a `rearrange` output directory.
pub fn load_rearrangement(dir: &Path) -> Result<(RunConfig, Operator, RearrangementSolution)> {
    let summary_path = dir.join("summary.json");
    let summary = read_json(&summary_path)?;
    let obj = summary.as_object().ok_or_else(|| Error::Format {
        path: summary_path.clone(),
        msg: "not a JSON object".into(),
    })?;
    let bad = |k: &str| Error::Format {
        path: summary_path.clone(),
        msg: format!("missing or invalid `{k}`"),
    };
    if obj.get("command").and_then(Value::as_str) != Some("rearrange") {
        return Err(bad("command"));
    }
    let num = |k: &str| obj.get(k).and_then(Value::as_f64).ok_or_else(|| bad(k));
    let int = |k: &str| obj.get(k).and_then(Value::as_u64).ok_or_else(|| bad(k));
    let file = FileConfig {
        command: Some(Command::Rearrange),
        domain: Some(DomainSpec::from_entries(obj, &summary_path)?),
        n: Some(int("n")? as usize),
        s: Some(num("s")?),
        beta: Some(num("beta")?),
        normalized: Some(obj.get("normalized").and_then(Value::as_bool).ok_or_else(|| bad("normalized"))?),
        seed: Some(int("seed")?),
        output: Some(dir.to_path_buf()),
        solver: SolverSection {
            gap_tol: Some(num("gap_tol")?),
            ..Default::default()
        },
        ..Default::default()
    };
    let cfg = RunConfig::resolve(file)?;
    let grid = cfg.grid()?;
    let op = cfg.operator(&grid, cfg.s)?;
    let csv_path = dir.join("solution.csv");
    let table = CsvTable::read(&csv_path)?;
    let col = |k: &str| -> Result<Vec<f64>> {
        let c = table.column(k).ok_or_else(|| Error::Format {
            path: csv_path.clone(),
            msg: format!("missing column `{k}`"),
        })?;
        if c.len() != grid.len() {
            return Err(Error::Format {
                path: csv_path.clone(),
                msg: format!("{} rows, expected {}", c.len(), grid.len()),
            });
        }
        Ok(c)
    };
    let sol = RearrangementSolution {
        f_hat: Field::new(col("f_hat")?, 0.0),
        u_hat: Field::new(col("u_hat")?, 0.0),
        alpha: num("alpha")?,
        gap: num("gap")?,
        iterations: int("iterations")? as usize,
        objective: num("objective")?,
        beta: cfg.beta,
        log: Vec::new(),
    };
    Ok((cfg, op, sol))
}

fn run_verify(cfg: &RunConfig) -> Result<Outcome> {
    let (saved, op, sol) = load_rearrangement(&cfg.input)?;
    let tol = cfg.residual_tol;
    let mut checks: Vec<(String, bool, Option<f64>)> = Vec::new();

    let report = verify_structure(&op, &sol, &structure_tols(cfg));
    for c in &report.checks {
        checks.push((c.name.to_string(), c.passed, c.margin));
    }
    let phi0 = read_json(&cfg.input.join("summary.json"))?
        .get("initial_objective")
        .and_then(Value::as_f64)
        .unwrap_or(sol.objective);
    let gap_bound = saved.gap_tol * phi0;
    checks.push(("gap_certificate".into(), sol.gap <= gap_bound, Some(gap_bound - sol.gap)));

    let opts = ObstacleOptions {
        seed: saved.seed,
        ..cfg.obstacle_options()
    };
    let obst = minimize_j(&op, sol.alpha, &opts)?;
    let collar = free_boundary_cells(&op, &obst.state, obst.band);
    let (lo, up) = residual_band(&op, &obst.state, obst.band);
    let band_max = max_outside(&lo, &collar).max(max_outside(&up, &collar));
    checks.push(("residual_band".into(), band_max <= tol, Some(tol - band_max)));
    let sub_report = subharmonic_report(&op, &obst.state, opts.subharmonic_tol);
    checks.push((
        "subharmonic".into(),
        sub_report.positive_part_subharmonic,
        Some(opts.subharmonic_tol - sub_report.max_state.max(sub_report.max_positive_part)),
    ));
    match residual_nonlinear(&op, &obst.state, obst.band, opts.subharmonic_tol) {
        Ok(r) => {
            let v = max_outside(&r, &collar);
            checks.push(("residual_nonlinear".into(), v <= tol, Some(tol - v)));
        }
        Err(_) => checks.push(("residual_nonlinear".into(), false, None)),
    }
    let lower = -1e-10 * sol.alpha;
    checks.push(("state_nonnegative".into(), obst.state.min() >= lower, Some(obst.state.min() - lower)));
    let eq = equivalence_check(&op, &sol, &obst)?;
    checks.push((
        "equivalence_sup".into(),
        eq.alpha > 0.0 && eq.sup_diff <= tol * eq.alpha,
        Some(tol * eq.alpha - eq.sup_diff),
    ));
    let j_bound = 1e-8 * eq.j_value.abs();
    checks.push(("equivalence_j_gap".into(), eq.j_gap <= j_bound, Some(j_bound - eq.j_gap)));

    let mut m = saved.summary("verify");
    m.insert("input".into(), json!(cfg.input.display().to_string()));
    m.insert("alpha".into(), json!(sol.alpha));
    m.insert("residual_tol".into(), json!(tol));
    m.insert("sup_diff".into(), json!(eq.sup_diff));
    m.insert("j_gap".into(), json!(eq.j_gap));
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (name, passed, margin) in &checks {
        m.insert(format!("check_{name}"), json!(passed));
        m.insert(format!("margin_{name}"), json!(margin));
        let margin_text = margin.map_or("n/a".to_string(), |v| format!("{v:.3e}"));
        let line = format!("{} {name} (margin {margin_text})", if *passed { "PASS" } else { "FAIL" });
        if !passed {
            failures.push(line.clone());
        }
        lines.push(line);
    }
    m.insert("passed".into(), json!(failures.is_empty()));
    write_json(&cfg.output.join("verify.json"), &m)?;
    Ok(Outcome { lines, failures })
}

fn run_sweep(cfg: &RunConfig) -> Result<Outcome> {
    let opts = SweepOptions {
        fw: cfg.fw_options(),
        normalized: cfg.normalized,
        s_cap: cfg.s_cap,
        eps: cfg.eps_density,
        workers: cfg.workers,
        ..Default::default()
    };
    let table = s_sweep(cfg.domain.to_domain(), cfg.n, cfg.beta, &cfg.s_list, &opts)
        .map_err(config_error)?;
    write_sweep(cfg, &table)?;
    let lines = table
        .rows
        .iter()
        .map(|r| match &r.metrics {
            Some(m) => format!(
                "s {:.3} state_dist {:.4e} objective_diff {:.4e} frac_measure {:.4e}",
                r.s, m.state_dist, m.objective_diff, m.frac_measure
            ),
            None => format!("s {:.3} FAILED: {}", r.s, r.error.as_deref().unwrap_or("")),
        })
        .collect();
    let failures = table
        .rows
        .iter()
        .filter(|r| r.metrics.is_none())
        .map(|r| format!("sweep row s = {} failed", r.s))
        .collect();
    Ok(Outcome { lines, failures })
}

fn write_sweep(cfg: &RunConfig, table: &SweepTable) -> Result<()> {
    let probes = crate::slimit::PROBE_COUNT;
    let mut header = vec![
        "s".to_string(),
        "alpha_s".into(),
        "objective".into(),
        "state_dist".into(),
        "objective_diff".into(),
        "frac_measure".into(),
        "iterations".into(),
        "gap".into(),
    ];
    header.extend((1..=probes).map(|k| format!("density_test_{k}")));
    let mut csv = CsvTable {
        header,
        rows: Vec::new(),
    };
    let mut rows_json = Vec::new();
    for r in &table.rows {
        let mut o = Map::new();
        o.insert("s".into(), json!(r.s));
        match &r.metrics {
            Some(m) => {
                let mut row = vec![
                    r.s,
                    m.alpha_s,
                    m.objective,
                    m.state_dist,
                    m.objective_diff,
                    m.frac_measure,
                    m.iterations as f64,
                    m.gap,
                ];
                row.extend(&m.density_tests);
                csv.rows.push(row);
                o.insert("alpha_s".into(), json!(m.alpha_s));
                o.insert("objective".into(), json!(m.objective));
                o.insert("state_dist".into(), json!(m.state_dist));
                o.insert("objective_diff".into(), json!(m.objective_diff));
                o.insert("frac_measure".into(), json!(m.frac_measure));
                o.insert("iterations".into(), json!(m.iterations));
                o.insert("gap".into(), json!(m.gap));
                for (k, v) in m.density_tests.iter().enumerate() {
                    o.insert(format!("density_test_{}", k + 1), json!(v));
                }
            }
            None => {
                o.insert("error".into(), json!(r.error));
            }
        }
        rows_json.push(Value::Object(o));
    }
    csv.write(&cfg.output.join("sweep.csv"))?;

    let mut m = cfg.summary("sweep");
    m.insert("beta".into(), json!(cfg.beta));
    m.insert("eps_density".into(), json!(table.eps));
    m.insert("s_cap".into(), json!(cfg.s_cap));
    m.insert("local_alpha".into(), json!(table.local.alpha));
    m.insert("local_objective".into(), json!(table.local.objective));
    m.insert("local_frac_measure".into(), json!(table.local.frac_measure));
    m.insert("rows".into(), Value::Array(rows_json));
    write_json(&cfg.output.join("sweep.json"), &m)?;

    let ok: Vec<_> = table.rows.iter().filter_map(|r| r.metrics.as_ref().map(|m| (r.s, m))).collect();
    let xs: Vec<f64> = ok.iter().map(|(s, _)| *s).collect();
    type Metric = fn(&SweepMetrics) -> f64;
    let series: [(&str, Metric); 5] = [
        ("alpha_s", |m| m.alpha_s),
        ("objective", |m| m.objective),
        ("state_dist", |m| m.state_dist),
        ("objective_diff", |m| m.objective_diff),
        ("frac_measure", |m| m.frac_measure),
    ];
    for (name, get) in series {
        let ys: Vec<f64> = ok.iter().map(|(_, m)| get(m)).collect();
        write_gnuplot(&cfg.output.join(format!("sweep_{name}.dat")), name, &xs, &ys)?;
    }
    Ok(())
}

/// Parses flags, merges the optional config file and runs; returns the
/// process exit code.
pub fn main_with(args: Args) -> i32 {
    let file = match &args.config {
        Some(p) => match FileConfig::load(p) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        None => FileConfig::default(),
    };
    let result = RunConfig::resolve(args.merge(file)).and_then(|cfg| run(&cfg));
    match result {
        Ok(outcome) => {
            for l in &outcome.lines {
                println!("{l}");
            }
            for f in &outcome.failures {
                eprintln!("check failed: {f}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
