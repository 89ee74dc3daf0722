//! Implicit finite-volume stepper for the two-species chemotaxis system.
//!
//! One step from `t^k` to `t^{k+1}`:
//!
//! 1. the chemical signals solve the linear elliptic problems
//!    `-Δw₁ + α₁w₁ = β₁n₂ᵏ`, `-Δw₂ + α₂w₂ = β₂n₁ᵏ` (decoupled because the
//!    sources use the lagged densities);
//! 2. the densities solve the nonlinear system
//!    `|K|(nᵏ⁺¹ - nᵏ)/Δt - d Σ T (n_L - n_K) + Σ T χ(n_{K,L})(w_L - w_K) = |K| F`
//!    by Newton-GMRES, with the chemotactic coefficient evaluated at the face
//!    value `n_{K,L} = min(n_K⁺, n_L⁺)`.
//!
//! `T = |σ|/d_{K,L}` is the face transmissibility. Boundary faces carry no
//! flux except obstacle faces when the densities are clamped to zero there,
//! and advective outflow when a velocity field is supplied.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    self, gmres_with, newton, CsrMatrix, KrylovConfig, NewtonConfig, NewtonStats, NonlinearSystem,
    Preconditioner, PreconditionerKind,
};
use crate::mesh::{BoundaryTag, Dir, FaceVelocity, Mesh, Neighbor, DIRS};
use crate::model::{self, ModelParams};

#[derive(Debug, Error)]
pub enum MacroError {
    #[error("invalid step configuration: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(#[from] model::ModelError),
    #[error("chemical {species} solve did not converge: {detail}")]
    ChemicalSolve { species: usize, detail: String },
    #[error("density Newton failed at t = {t}: {detail}")]
    Newton { t: f64, detail: String },
    #[error("state is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("state length {found} does not match {expected} fluid cells")]
    Shape { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub t: f64,
}

impl MacroState {
    pub fn new(n1: Vec<f64>, n2: Vec<f64>) -> Self {
        let len = n1.len();
        Self { n1, n2, w1: vec![0.0; len], w2: vec![0.0; len], t: 0.0 }
    }

    pub fn uniform(cells: usize, n1: f64, n2: f64) -> Self {
        Self::new(vec![n1; cells], vec![n2; cells])
    }

    pub fn density(&self, species: usize) -> &[f64] {
        if species == 0 {
            &self.n1
        } else {
            &self.n2
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.n1, &self.n2, &self.w1, &self.w2].iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn check_len(&self, cells: usize) -> Result<(), MacroError> {
        for v in [&self.n1, &self.n2, &self.w1, &self.w2] {
            if v.len() != cells {
                return Err(MacroError::Shape { expected: cells, found: v.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactionMode {
    /// F evaluated at the new time level.
    #[default]
    Implicit,
    /// F evaluated at the old time level.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChemicalSign {
    /// `-Δw + αw = βn`.
    #[default]
    Elliptic,
    /// Flux sum added with a plus sign, i.e. `+Δw + αw = βn`. Debug only.
    Literal,
}

fn default_halvings() -> usize {
    4
}

fn default_chemical_krylov() -> KrylovConfig {
    KrylovConfig { rtol: 1e-10, preconditioner: PreconditionerKind::Amg, restart: 50, ..Default::default() }
}

fn default_density_krylov() -> KrylovConfig {
    KrylovConfig { rtol: 1e-10, preconditioner: PreconditionerKind::Amg, restart: 50, ..Default::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub dt: f64,
    #[serde(default)]
    pub newton: NewtonConfig,
    /// Inner solver of the density Newton iterations.
    #[serde(default = "default_density_krylov")]
    pub krylov: KrylovConfig,
    #[serde(default = "default_chemical_krylov")]
    pub chemical_krylov: KrylovConfig,
    #[serde(default)]
    pub reaction: ReactionMode,
    #[serde(default)]
    pub chemical_sign: ChemicalSign,
    /// Densities vanish on obstacle faces.
    #[serde(default)]
    pub obstacle_dirichlet: bool,
    /// Retries with halved Δt before a step is abandoned.
    #[serde(default = "default_halvings")]
    pub max_halvings: usize,
}

impl StepConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            newton: NewtonConfig::default(),
            krylov: default_density_krylov(),
            chemical_krylov: default_chemical_krylov(),
            reaction: ReactionMode::Implicit,
            chemical_sign: ChemicalSign::Elliptic,
            obstacle_dirichlet: false,
            max_halvings: default_halvings(),
        }
    }

    pub fn validate(&self) -> Result<(), MacroError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(MacroError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        self.newton.validate().map_err(|e| MacroError::Config(e.to_string()))?;
        self.krylov.validate().map_err(|e| MacroError::Config(e.to_string()))?;
        self.chemical_krylov.validate().map_err(|e| MacroError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Chemotactic face value min(max(0, a), max(0, b)).
pub fn face_value(n_k: f64, n_l: f64) -> f64 {
    n_k.max(0.0).min(n_l.max(0.0))
}

/// Partial derivatives of [`face_value`] with the left argument winning ties
/// at the kinks.
pub fn face_value_derivative(n_k: f64, n_l: f64) -> (f64, f64) {
    let (kp, lp) = (n_k.max(0.0), n_l.max(0.0));
    if kp <= lp {
        (if n_k > 0.0 { 1.0 } else { 0.0 }, 0.0)
    } else {
        (0.0, if n_l > 0.0 { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy)]
struct Link {
    dir: Dir,
    /// Fluid index across the face, `None` on boundary faces.
    other: Option<usize>,
    tag: Option<BoundaryTag>,
    measure: f64,
    trans: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FieldStats {
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub l2: f64,
}

/// Per-step monitored quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub n1: FieldStats,
    pub n2: FieldStats,
    pub newton_iterations: usize,
    pub gmres_iterations: usize,
}

fn field_stats(values: &[f64], volume: f64) -> FieldStats {
    if values.is_empty() {
        return FieldStats::default();
    }
    let mut s = FieldStats { min: f64::INFINITY, max: f64::NEG_INFINITY, ..Default::default() };
    let mut sq = 0.0;
    for &v in values {
        s.mass += volume * v;
        sq += volume * v * v;
        s.min = s.min.min(v);
        s.max = s.max.max(v);
    }
    s.l2 = sq.sqrt();
    s
}

/// Mass, extrema and L² norms of both densities.
pub fn diagnostics(mesh: &Mesh, state: &MacroState) -> Diagnostics {
    let vol = mesh.cell_volume();
    Diagnostics { t: state.t, n1: field_stats(&state.n1, vol), n2: field_stats(&state.n2, vol), ..Default::default() }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub dt: f64,
    pub substeps: usize,
    pub halvings: usize,
    pub newton: Vec<NewtonStats>,
    pub chemical_iterations: usize,
}

impl StepReport {
    pub fn newton_iterations(&self) -> usize {
        self.newton.iter().map(|s| s.iterations).sum()
    }
    pub fn gmres_iterations(&self) -> usize {
        self.chemical_iterations + self.newton.iter().map(|s| s.linear_iterations).sum::<usize>()
    }
}

struct ChemicalOperator {
    matrix: CsrMatrix,
    precond: Preconditioner,
}

/// Finite-volume discretization bound to one mesh and one parameter set.
pub struct MacroSolver<'m> {
    mesh: &'m Mesh,
    params: ModelParams,
    cfg: StepConfig,
    links: Vec<[Link; 4]>,
    /// Chemical operators for the velocity-free case; they never change.
    still_ops: [Option<ChemicalOperator>; 2],
}

const PAR_MIN_CELLS: usize = 2048;

fn parallel(cells: usize) -> bool {
    cells >= PAR_MIN_CELLS && rayon::current_num_threads() > 1
}

impl<'m> MacroSolver<'m> {
    pub fn new(mesh: &'m Mesh, params: ModelParams, cfg: StepConfig) -> Result<Self, MacroError> {
        params.validate()?;
        cfg.validate()?;
        let links = mesh
            .fluid_cells()
            .iter()
            .map(|&c| {
                DIRS.map(|dir| {
                    let f = mesh.face_towards(c, dir);
                    let (other, tag) = match f.neighbor {
                        Neighbor::Cell(l) => (mesh.fluid_index(l), None),
                        Neighbor::Boundary(t) => (None, Some(t)),
                    };
                    Link { dir, other, tag, measure: f.measure, trans: f.trans() }
                })
            })
            .collect();
        Ok(Self { mesh, params, cfg, links, still_ops: [None, None] })
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }
    pub fn params(&self) -> &ModelParams {
        &self.params
    }
    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    fn chemical_operator(&self, species: usize, vel: Option<&FaceVelocity>) -> Result<ChemicalOperator, MacroError> {
        let (alpha, _) = self.params.chemical(species);
        let vol = self.mesh.cell_volume();
        let sign = match self.cfg.chemical_sign {
            ChemicalSign::Elliptic => 1.0,
            ChemicalSign::Literal => -1.0,
        };
        let cells = self.mesh.fluid_cells();
        let row = |k: usize| {
            let mut entries = Vec::with_capacity(5);
            let mut diag = alpha * vol;
            for link in &self.links[k] {
                let Some(l) = link.other else { continue };
                diag += sign * link.trans;
                let mut off = -sign * link.trans;
                if let Some(vel) = vel {
                    // non-conservative upwind U·∇w: Σ |σ| min(u·η, 0) (w_L - w_K)
                    let un = vel.outward(cells[k], link.dir).min(0.0);
                    diag -= link.measure * un;
                    off += link.measure * un;
                }
                entries.push((l, off));
            }
            entries.push((k, diag));
            entries
        };
        let matrix = assemble(cells.len(), row);
        let precond = Preconditioner::build(self.cfg.chemical_krylov.preconditioner, &matrix)
            .map_err(|e| MacroError::ChemicalSolve { species, detail: e.to_string() })?;
        Ok(ChemicalOperator { matrix, precond })
    }

    /// Solve both chemical problems with sources from the given densities.
    /// `guess` seeds GMRES (typically the previous signals).
    pub fn solve_chemicals(
        &mut self,
        n1: &[f64],
        n2: &[f64],
        vel: Option<&FaceVelocity>,
        guess: Option<(&[f64], &[f64])>,
    ) -> Result<(Vec<f64>, Vec<f64>, usize), MacroError> {
        let cells = self.mesh.n_fluid();
        let vol = self.mesh.cell_volume();
        let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut iterations = 0;
        for species in 0..2 {
            let (_, beta) = self.params.chemical(species);
            // w₁ is produced by n₂ and w₂ by n₁
            let source = if species == 0 { n2 } else { n1 };
            let rhs: Vec<f64> = source.iter().map(|n| beta * vol * n).collect();
            let x0 = match guess {
                Some((g1, g2)) => (if species == 0 { g1 } else { g2 }).to_vec(),
                None => vec![0.0; cells],
            };
            let local;
            let op = match vel {
                None => {
                    if self.still_ops[species].is_none() {
                        self.still_ops[species] = Some(self.chemical_operator(species, None)?);
                    }
                    self.still_ops[species].as_ref().unwrap()
                }
                Some(v) => {
                    local = self.chemical_operator(species, Some(v))?;
                    &local
                }
            };
            let res = gmres_with(&op.matrix, &op.precond, &rhs, &x0, &self.cfg.chemical_krylov)
                .map_err(|e| MacroError::ChemicalSolve { species, detail: e.to_string() })?;
            if !res.stats.converged {
                return Err(MacroError::ChemicalSolve {
                    species,
                    detail: format!(
                        "residual {:.3e} after {} iterations",
                        res.stats.residual_norm, res.stats.iterations
                    ),
                });
            }
            iterations += res.stats.iterations;
            out[species] = res.x;
        }
        let [w1, w2] = out;
        Ok((w1, w2, iterations))
    }

    /// Density residual system for one step. Unknowns are `[n₁; n₂]`.
    pub fn density_system<'a>(
        &'a self,
        prev: &'a MacroState,
        w1: &'a [f64],
        w2: &'a [f64],
        dt: f64,
        vel: Option<&'a FaceVelocity>,
    ) -> DensitySystem<'a, 'm> {
        DensitySystem { solver: self, prev, w: [w1, w2], dt, vel }
    }

    /// One step of size `cfg.dt` without retries.
    pub fn step(&mut self, state: &MacroState, vel: Option<&FaceVelocity>) -> Result<(MacroState, StepReport), MacroError> {
        let dt = self.cfg.dt;
        self.step_dt(state, dt, vel)
    }

    fn step_dt(
        &mut self,
        state: &MacroState,
        dt: f64,
        vel: Option<&FaceVelocity>,
    ) -> Result<(MacroState, StepReport), MacroError> {
        let cells = self.mesh.n_fluid();
        state.check_len(cells)?;
        if !state.is_finite() {
            return Err(MacroError::NonFinite { t: state.t });
        }
        let (w1, w2, chem_iters) =
            self.solve_chemicals(&state.n1, &state.n2, vel, Some((&state.w1, &state.w2)))?;
        let system = self.density_system(state, &w1, &w2, dt, vel);
        let x0: Vec<f64> = state.n1.iter().chain(&state.n2).copied().collect();
        let t_new = state.t + dt;
        let out = newton(&system, &x0, &self.cfg.newton, &self.cfg.krylov)
            .map_err(|e| MacroError::Newton { t: t_new, detail: e.to_string() })?;
        if !out.stats.converged {
            return Err(MacroError::Newton {
                t: t_new,
                detail: format!(
                    "no convergence in {} iterations, residual {:.3e}",
                    out.stats.iterations,
                    out.stats.final_residual()
                ),
            });
        }
        let mut x = out.x;
        let n2 = x.split_off(cells);
        let next = MacroState { n1: x, n2, w1, w2, t: t_new };
        let report = StepReport {
            dt,
            substeps: 1,
            halvings: 0,
            newton: vec![out.stats],
            chemical_iterations: chem_iters,
        };
        Ok((next, report))
    }

    /// Advance by `dt`, halving the step on failure up to `max_halvings` times.
    pub fn advance(
        &mut self,
        state: &MacroState,
        dt: f64,
        vel: Option<&FaceVelocity>,
    ) -> Result<(MacroState, StepReport), MacroError> {
        self.advance_level(state, dt, vel, 0)
    }

    fn advance_level(
        &mut self,
        state: &MacroState,
        dt: f64,
        vel: Option<&FaceVelocity>,
        level: usize,
    ) -> Result<(MacroState, StepReport), MacroError> {
        match self.step_dt(state, dt, vel) {
            Ok(r) => Ok(r),
            Err(e @ (MacroError::Newton { .. } | MacroError::ChemicalSolve { .. })) => {
                if level >= self.cfg.max_halvings {
                    return Err(e);
                }
                let half = 0.5 * dt;
                let (mid, mut r1) = self.advance_level(state, half, vel, level + 1)?;
                let (end, r2) = self.advance_level(&mid, half, vel, level + 1)?;
                r1.dt = dt;
                r1.substeps += r2.substeps;
                r1.halvings = 1 + r1.halvings.max(r2.halvings);
                r1.newton.extend(r2.newton);
                r1.chemical_iterations += r2.chemical_iterations;
                Ok((end, r1))
            }
            Err(e) => Err(e),
        }
    }
}

fn assemble<F>(rows: usize, row: F) -> CsrMatrix
where
    F: Fn(usize) -> Vec<(usize, f64)> + Sync,
{
    let built: Vec<Vec<(usize, f64)>> = if parallel(rows) {
        (0..rows).into_par_iter().map(&row).collect()
    } else {
        (0..rows).map(&row).collect()
    };
    let mut b = linalg::TripletBuilder::new(rows, rows);
    for (r, entries) in built.into_iter().enumerate() {
        for (c, v) in entries {
            b.add(r, c, v);
        }
    }
    b.build()
}

/// Nonlinear density residual of one implicit step.
pub struct DensitySystem<'a, 'm> {
    solver: &'a MacroSolver<'m>,
    prev: &'a MacroState,
    w: [&'a [f64]; 2],
    dt: f64,
    vel: Option<&'a FaceVelocity>,
}

impl DensitySystem<'_, '_> {
    fn cells(&self) -> usize {
        self.solver.mesh.n_fluid()
    }

    fn cell_residual(&self, species: usize, k: usize, n: [&[f64]; 2]) -> f64 {
        let s = self.solver;
        let p = &s.params;
        let vol = s.mesh.cell_volume();
        let d = p.diffusion(species);
        let law = p.chemo(species);
        let ns = n[species];
        let w = self.w[species];
        let nk = ns[k];
        let mut r = vol * (nk - self.prev.density(species)[k]) / self.dt;
        for link in &s.links[k] {
            match (link.other, link.tag) {
                (Some(l), _) => {
                    r += d * link.trans * (nk - ns[l]);
                    r += link.trans * law.eval(face_value(nk, ns[l])) * (w[l] - w[k]);
                }
                (None, Some(tag)) if tag.is_obstacle() && s.cfg.obstacle_dirichlet => {
                    r += d * link.trans * nk;
                }
                _ => {}
            }
            if let Some(vel) = self.vel {
                let un = vel.outward(s.mesh.fluid_cells()[k], link.dir);
                let upwind = match link.other {
                    Some(l) if un < 0.0 => ns[l],
                    Some(_) => nk,
                    // inflow through boundary faces carries no population
                    None if un < 0.0 => 0.0,
                    None => nk,
                };
                r += link.measure * un * upwind;
            }
        }
        let (f1, f2) = match s.cfg.reaction {
            ReactionMode::Implicit => model::reaction(n[0][k], n[1][k], p),
            ReactionMode::Explicit => model::reaction(self.prev.n1[k], self.prev.n2[k], p),
        };
        r - vol * if species == 0 { f1 } else { f2 }
    }

    fn row_entries(&self, row: usize, n: [&[f64]; 2]) -> Vec<(usize, f64)> {
        let cells = self.cells();
        let (species, k) = (row / cells, row % cells);
        let s = self.solver;
        let p = &s.params;
        let vol = s.mesh.cell_volume();
        let d = p.diffusion(species);
        let law = p.chemo(species);
        let ns = n[species];
        let w = self.w[species];
        let offset = species * cells;
        let nk = ns[k];

        let mut entries = Vec::with_capacity(7);
        let mut diag = vol / self.dt;
        for link in &s.links[k] {
            let mut off = 0.0;
            match (link.other, link.tag) {
                (Some(l), _) => {
                    diag += d * link.trans;
                    off -= d * link.trans;
                    let (dk, dl) = face_value_derivative(nk, ns[l]);
                    let slope = link.trans * law.derivative(face_value(nk, ns[l])) * (w[l] - w[k]);
                    diag += slope * dk;
                    off += slope * dl;
                }
                (None, Some(tag)) if tag.is_obstacle() && s.cfg.obstacle_dirichlet => {
                    diag += d * link.trans;
                }
                _ => {}
            }
            if let Some(vel) = self.vel {
                let un = vel.outward(s.mesh.fluid_cells()[k], link.dir);
                match link.other {
                    Some(_) if un < 0.0 => off += link.measure * un,
                    None if un < 0.0 => {}
                    _ => diag += link.measure * un,
                }
            }
            if let Some(l) = link.other {
                entries.push((offset + l, off));
            }
        }
        if s.cfg.reaction == ReactionMode::Implicit {
            let j = model::reaction_jacobian(n[0][k], n[1][k], p);
            diag -= vol * j[species][species];
            let other = 1 - species;
            entries.push((other * cells + k, -vol * j[species][other]));
        }
        entries.push((offset + k, diag));
        entries
    }
}

impl NonlinearSystem for DensitySystem<'_, '_> {
    fn dim(&self) -> usize {
        2 * self.cells()
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let cells = self.cells();
        let n = [&x[..cells], &x[cells..]];
        let eval = |(row, r): (usize, &mut f64)| *r = self.cell_residual(row / cells, row % cells, n);
        if parallel(cells) {
            out.par_iter_mut().enumerate().for_each(eval);
        } else {
            out.iter_mut().enumerate().for_each(eval);
        }
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let cells = self.cells();
        let n = [&x[..cells], &x[cells..]];
        assemble(2 * cells, |row| self.row_entries(row, n))
    }
}

/// Snapshot schedule of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub t_end: f64,
    /// Output times; the stepper shortens the step to land on each exactly.
    pub snapshot_times: Vec<f64>,
}

impl Schedule {
    pub fn new(t_end: f64, mut snapshot_times: Vec<f64>) -> Self {
        snapshot_times.retain(|&t| t >= 0.0 && t <= t_end);
        snapshot_times.sort_by(f64::total_cmp);
        snapshot_times.dedup();
        Self { t_end, snapshot_times }
    }

    /// Regular snapshots every `interval`, plus the final time.
    pub fn every(t_end: f64, interval: f64) -> Self {
        let count = (t_end / interval + 1e-9).floor() as usize;
        let mut times: Vec<f64> = (0..=count).map(|k| k as f64 * interval).collect();
        times.push(t_end);
        Self::new(t_end, times)
    }

    /// Next time the integrator must hit after `t`.
    pub fn next_stop(&self, t: f64) -> f64 {
        let eps = 1e-12 * self.t_end.max(1.0);
        self.snapshot_times.iter().copied().find(|&s| s > t + eps).unwrap_or(self.t_end).min(self.t_end)
    }

    pub fn is_snapshot(&self, t: f64) -> bool {
        let eps = 1e-12 * self.t_end.max(1.0);
        self.snapshot_times.iter().any(|&s| (s - t).abs() <= eps)
    }
}

pub enum RunEvent<'a> {
    Snapshot(&'a MacroState),
    Step { state: &'a MacroState, diagnostics: &'a Diagnostics, report: &'a StepReport },
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub state: MacroState,
    pub diagnostics: Vec<Diagnostics>,
    pub steps: usize,
}

/// Time-step length that lands on the next stop without leaving a sliver.
pub(crate) fn clipped_dt(t: f64, dt: f64, stop: f64) -> f64 {
    let remaining = stop - t;
    if remaining <= dt * (1.0 + 1e-9) {
        remaining
    } else if remaining < 1.5 * dt {
        0.5 * remaining
    } else {
        dt
    }
}

impl MacroSolver<'_> {
    /// Integrate to `schedule.t_end`, reporting snapshots and per-step diagnostics.
    pub fn run<F>(&mut self, init: MacroState, schedule: &Schedule, mut observer: F) -> Result<RunSummary, MacroError>
    where
        F: FnMut(RunEvent<'_>),
    {
        let mut state = init;
        let (w1, w2, _) = self.solve_chemicals(&state.n1, &state.n2, None, None)?;
        state.w1 = w1;
        state.w2 = w2;
        let mut diags = vec![diagnostics(self.mesh, &state)];
        if schedule.is_snapshot(state.t) {
            observer(RunEvent::Snapshot(&state));
        }
        let mut steps = 0;
        let eps = 1e-12 * schedule.t_end.max(1.0);
        while state.t < schedule.t_end - eps {
            let stop = schedule.next_stop(state.t);
            let dt = clipped_dt(state.t, self.cfg.dt, stop);
            let (mut next, report) = self.advance(&state, dt, None)?;
            if (next.t - stop).abs() <= eps {
                next.t = stop;
            }
            state = next;
            steps += 1;
            let mut d = diagnostics(self.mesh, &state);
            d.newton_iterations = report.newton_iterations();
            d.gmres_iterations = report.gmres_iterations();
            observer(RunEvent::Step { state: &state, diagnostics: &d, report: &report });
            diags.push(d);
            if schedule.is_snapshot(state.t) {
                observer(RunEvent::Snapshot(&state));
            }
        }
        Ok(RunSummary { state, diagnostics: diags, steps })
    }
}
