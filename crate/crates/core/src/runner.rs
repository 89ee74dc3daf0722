//! Executes a resolved [`RunConfig`]: snapshots, per-step diagnostics,
//! metadata, and the invariant checks behind `chemoflow check`.

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::fluid::{self, CoupledEvent, FluidError, FluidReport, FluidSolver, FluidState};
use crate::io::{self, CsvTable, IoError, SnapshotRecord};
use crate::kinetic::{self, KineticError, StudyRow};
use crate::macro_solver::{Diagnostics, MacroError, MacroSolver, MacroState, RunEvent, StepReport};
use crate::mesh::{build_grid, FaceVelocity, Mesh, MeshError};
use crate::model;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("initial data: {0}")]
    Initial(String),
    #[error(transparent)]
    Macro(#[from] MacroError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Kinetic(#[from] KineticError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// What one accepted step looked like.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub diagnostics: Diagnostics,
    pub dt: f64,
    pub newton_converged: bool,
    /// Largest final Newton residual over the substeps.
    pub newton_residual: f64,
    /// Largest Newton iteration count over the substeps.
    pub newton_iterations: usize,
    pub halvings: usize,
    pub fluid: Option<FluidReport>,
}

impl StepRecord {
    fn new(d: &Diagnostics, r: &StepReport, fluid: Option<FluidReport>) -> Self {
        Self {
            diagnostics: *d,
            dt: r.dt,
            newton_converged: r.newton.iter().all(|s| s.converged),
            newton_residual: r.newton.iter().map(|s| s.final_residual()).fold(0.0, f64::max),
            newton_iterations: r.newton.iter().map(|s| s.iterations).max().unwrap_or(0),
            halvings: r.halvings,
            fluid,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial: Diagnostics,
    pub records: Vec<StepRecord>,
    pub state: MacroState,
    pub fluid: Option<FluidState>,
    pub snapshots: Vec<PathBuf>,
}

/// Cell-center speed from face velocities.
pub fn cell_speed(vel: &FaceVelocity) -> Vec<f64> {
    let mut out = vec![0.0; vel.nx * vel.ny];
    for j in 0..vel.ny {
        for i in 0..vel.nx {
            let u = 0.5 * (vel.u[vel.u_index(i, j)] + vel.u[vel.u_index(i + 1, j)]);
            let v = 0.5 * (vel.v[vel.v_index(i, j)] + vel.v[vel.v_index(i, j + 1)]);
            out[j * vel.nx + i] = u.hypot(v);
        }
    }
    out
}

fn snapshot_records(mesh: &Mesh, m: &MacroState, f: Option<&FluidState>) -> Result<Vec<SnapshotRecord>, IoError> {
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let mut out = Vec::new();
    for (name, vals) in [("n1", &m.n1), ("n2", &m.n2), ("w1", &m.w1), ("w2", &m.w2)] {
        out.push(SnapshotRecord::new(m.t, name, nx, ny, mesh.to_full_field(vals, 0.0))?);
    }
    if let Some(f) = f {
        out.push(SnapshotRecord::new(m.t, "speed", nx, ny, cell_speed(&f.vel))?);
        out.push(SnapshotRecord::new(m.t, "pressure", nx, ny, f.p.clone())?);
    }
    Ok(out)
}

const MACRO_COLUMNS: [&str; 11] =
    ["t", "dt", "mass1", "mass2", "min1", "min2", "max1", "max2", "newton", "gmres", "newton_residual"];
const FLUID_COLUMNS: [&str; 4] = ["max_div", "kinetic_energy", "work_bound", "vertical_momentum"];

fn diagnostics_table(records: &[StepRecord], with_fluid: bool) -> CsvTable {
    let mut cols: Vec<&str> = MACRO_COLUMNS.to_vec();
    if with_fluid {
        cols.extend(FLUID_COLUMNS);
    }
    let mut t = CsvTable::new(&cols);
    for r in records {
        let d = &r.diagnostics;
        let mut row = vec![
            d.t,
            r.dt,
            d.n1.mass,
            d.n2.mass,
            d.n1.min,
            d.n2.min,
            d.n1.max,
            d.n2.max,
            d.newton_iterations as f64,
            d.gmres_iterations as f64,
            r.newton_residual,
        ];
        if let Some(f) = &r.fluid {
            row.extend([f.projection.max_divergence, f.kinetic_energy, f.work_bound, f.vertical_momentum]);
        }
        t.push(&row);
    }
    t
}

/// Integrate `cfg`; with `write` set, snapshots, `diagnostics.csv` and
/// `metadata.json` go to `cfg.output.out_dir`.
pub fn execute(cfg: &RunConfig, write: bool) -> Result<RunOutput, RunError> {
    let mesh = build_grid(cfg.grid.clone())?;
    let init = cfg.initial.build(&mesh, &cfg.model, cfg.seed).map_err(|e| RunError::Initial(e.to_string()))?;
    let mut solver = MacroSolver::new(&mesh, cfg.model.clone(), cfg.step.clone())?;
    let schedule = cfg.schedule();
    let dir = cfg.output.out_dir.clone();
    let format = cfg.output.format;
    let mut snapshots = Vec::new();
    let mut failure: Option<IoError> = None;
    let mut records = Vec::new();
    let mut emit = |m: &MacroState, f: Option<&FluidState>, snapshots: &mut Vec<PathBuf>| {
        if !write || failure.is_some() {
            return;
        }
        let res = snapshot_records(&mesh, m, f)
            .and_then(|recs| recs.iter().map(|r| io::write_snapshot(r, format, &dir)).collect::<Result<Vec<_>, _>>());
        match res {
            Ok(paths) => snapshots.extend(paths),
            Err(e) => failure = Some(e),
        }
    };
    let (initial, state, fluid_state) = match &cfg.fluid {
        None => {
            let summary = solver.run(init, &schedule, |ev| match ev {
                RunEvent::Snapshot(m) => emit(m, None, &mut snapshots),
                RunEvent::Step { diagnostics, report, .. } => records.push(StepRecord::new(diagnostics, report, None)),
            })?;
            (summary.diagnostics[0], summary.state, None)
        }
        Some(fcfg) => {
            let fsolver = FluidSolver::new(&mesh, cfg.model.clone(), fcfg.clone())?;
            let summary = fluid::run_coupled(&fsolver, &mut solver, init, &schedule, |ev| match ev {
                CoupledEvent::Snapshot { fluid, densities } => emit(densities, Some(fluid), &mut snapshots),
                CoupledEvent::Step { diagnostics, report, .. } => {
                    records.push(StepRecord::new(diagnostics, &report.macro_step, Some(report.fluid.clone())))
                }
            })?;
            (summary.diagnostics[0], summary.densities, Some(summary.fluid))
        }
    };
    if let Some(e) = failure {
        return Err(e.into());
    }
    if write {
        diagnostics_table(&records, cfg.fluid.is_some()).write(&dir.join("diagnostics.csv"))?;
        let extra = serde_json::json!({ "steps": records.len(), "final_time": state.t });
        io::write_metadata(&dir, cfg, cfg.seed, extra)?;
    }
    Ok(RunOutput { initial, records, state, fluid: fluid_state, snapshots })
}

/// Runs the ε-study of `cfg.kinetic` and writes `kinetic_errors.csv`.
pub fn kinetic_study(cfg: &RunConfig, write: bool) -> Result<Vec<StudyRow>, RunError> {
    let study = cfg.kinetic.study();
    let rows = kinetic::convergence_study(&cfg.kinetic.eps, &study)?;
    if write {
        let dir = &cfg.output.out_dir;
        std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.clone(), source })?;
        let path = dir.join("kinetic_errors.csv");
        std::fs::write(&path, kinetic::error_table_csv(&rows)).map_err(|source| IoError::Io { path, source })?;
        io::write_metadata(dir, &cfg.kinetic, cfg.seed, serde_json::json!({ "study": "kinetic" }))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs `cfg` without output and tests the invariants every run must keep.
pub fn check(cfg: &RunConfig) -> Result<Vec<CheckResult>, RunError> {
    let out = execute(cfg, false)?;
    let mut results = Vec::new();
    let recs = &out.records;

    let finite = out.state.is_finite();
    results.push(CheckResult { name: "finite", passed: finite, detail: format!("{} steps", recs.len()) });

    let min = recs.iter().map(|r| r.diagnostics.n1.min.min(r.diagnostics.n2.min)).fold(f64::INFINITY, f64::min);
    results.push(CheckResult { name: "nonnegative", passed: min >= -1e-8, detail: format!("min density {min:.3e}") });

    let worst = recs.iter().map(|r| r.newton_residual).fold(0.0, f64::max);
    let converged = recs.iter().all(|r| r.newton_converged);
    results.push(CheckResult {
        name: "newton",
        passed: converged && worst <= cfg.step.newton.abs_tol.max(1e-10),
        detail: format!("worst final residual {worst:.3e}"),
    });

    let mut prev = out.initial;
    let mut worst_ratio: f64 = 0.0;
    for r in recs {
        let d = &r.diagnostics;
        let n_max = prev.n1.max.max(prev.n2.max).max(d.n1.max).max(d.n2.max);
        let c = model::growth_constant(&cfg.model, n_max);
        let before = prev.n1.mass + prev.n2.mass;
        let after = d.n1.mass + d.n2.mass;
        if before > 0.0 {
            worst_ratio = worst_ratio.max(after / ((1.0 + c * r.dt) * before));
        }
        prev = *d;
    }
    results.push(CheckResult {
        name: "mass_growth",
        passed: worst_ratio <= 1.05,
        detail: format!("largest mass / growth bound {worst_ratio:.6}"),
    });

    if let Some(fcfg) = &cfg.fluid {
        let div = recs.iter().filter_map(|r| r.fluid.as_ref()).map(|f| f.projection.max_divergence).fold(0.0, f64::max);
        results.push(CheckResult { name: "divergence", passed: div <= 1e-8, detail: format!("max |div| {div:.3e}") });
        let bad = recs
            .iter()
            .filter_map(|r| r.fluid.as_ref())
            .filter(|f| !f.within_work_bound(fcfg.energy_slack))
            .count();
        results.push(CheckResult {
            name: "energy",
            passed: bad == 0,
            detail: format!("{bad} steps above the work bound"),
        });
    }
    Ok(results)
}
