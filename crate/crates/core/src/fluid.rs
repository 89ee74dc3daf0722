//! Incompressible flow on the staggered (MAC) grid of a [`Mesh`] and the
//! operator-split coupling with the density solver.
//!
//! A fluid step is: semi-Lagrangian advection, implicit viscosity with the
//! buoyancy source `Q(n₁, n₂)∇φ`, channel boundary values, then a pressure
//! projection. Boundary values are fixed before the projection so that the
//! returned field is discretely divergence free.
//!
//! Channel boundaries: inlet on the left with the parabolic profile
//! `2ŷ(1-ŷ)`, `ŷ = (y - y₀)/ly`; outlet on the right with a zero-gradient
//! normal velocity rescaled to carry the inflow; slip walls at the bottom
//! and top; no-slip on obstacles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, gmres_with, CsrMatrix, KrylovConfig, Preconditioner, PreconditionerKind, TripletBuilder};
use crate::macro_solver::{self, Diagnostics, MacroError, MacroSolver, MacroState, Schedule, StepReport};
use crate::mesh::{CellIndex, FaceVelocity, Mesh};
use crate::model::{self, ModelParams};

#[derive(Debug, Error)]
pub enum FluidError {
    #[error("invalid fluid configuration: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(#[from] model::ModelError),
    #[error("boundary data incompatible: net outflow {net:.3e} (inflow {inflow:.3e})")]
    Incompatible { net: f64, inflow: f64 },
    #[error("pressure Poisson solve failed: {0}")]
    Poisson(String),
    #[error("viscous solve failed: {0}")]
    Viscous(String),
    #[error("density length {found} does not match {expected} fluid cells")]
    Shape { expected: usize, found: usize },
    #[error("density step: {0}")]
    Macro(#[from] MacroError),
}

fn default_poisson() -> KrylovConfig {
    KrylovConfig { rtol: 1e-12, atol: 0.0, max_iters: 2_000, restart: 60, preconditioner: PreconditionerKind::Amg }
}

fn default_viscous() -> KrylovConfig {
    KrylovConfig { rtol: 1e-12, atol: 0.0, max_iters: 5_000, restart: 40, preconditioner: PreconditionerKind::Ilu0 }
}

fn one() -> f64 {
    1.0
}

fn default_slack() -> f64 {
    0.1
}

/// Viscosity and convection strength come from [`ModelParams`] (`nu`,
/// `k_conv`); this holds the discretization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidConfig {
    pub dt: f64,
    #[serde(default = "default_poisson")]
    pub poisson: KrylovConfig,
    #[serde(default = "default_viscous")]
    pub viscous: KrylovConfig,
    /// Multiplies the inlet profile 2ŷ(1-ŷ).
    #[serde(default = "one")]
    pub inflow_scale: f64,
    /// Relative allowance in the kinetic-energy work bound.
    #[serde(default = "default_slack")]
    pub energy_slack: f64,
}

impl Default for FluidConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            poisson: default_poisson(),
            viscous: default_viscous(),
            inflow_scale: 1.0,
            energy_slack: default_slack(),
        }
    }
}

impl FluidConfig {
    pub fn validate(&self) -> Result<(), FluidError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FluidError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.inflow_scale.is_finite() || !(self.energy_slack >= 0.0) {
            return Err(FluidError::Config("inflow_scale and energy_slack must be finite, slack >= 0".into()));
        }
        self.poisson.validate().map_err(|e| FluidError::Config(e.to_string()))?;
        self.viscous.validate().map_err(|e| FluidError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub vel: FaceVelocity,
    /// Cell pressures on the full `nx*ny` grid, zero in solids.
    pub p: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FaceKind {
    Unknown(usize),
    Inlet,
    Outlet,
    Wall,
    /// Touches a solid cell; `both` when the face lies inside the obstacle.
    Solid { both: bool },
}

#[derive(Debug, Clone, Copy)]
enum Coupling {
    Unknown(usize, f64),
    /// Known value at array index, with weight.
    Known(usize, f64),
}

/// One row of `(I - dt ν Δ)` for a face unknown.
#[derive(Debug, Clone)]
struct ViscousRow {
    face: usize,
    diag: f64,
    terms: Vec<Coupling>,
}

struct Operator {
    matrix: CsrMatrix,
    precond: Preconditioner,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectionStats {
    pub iterations: usize,
    /// max |div_h U| over fluid cells after the correction.
    pub max_divergence: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FluidReport {
    pub projection: ProjectionStats,
    pub viscous_iterations: usize,
    pub kinetic_energy: f64,
    pub energy_change: f64,
    /// dt times the inflow, boundary-pressure and forcing power.
    pub work_bound: f64,
    pub vertical_momentum: f64,
}

impl FluidReport {
    /// `energy_change <= (1 + slack) * work_bound`, up to roundoff.
    pub fn within_work_bound(&self, slack: f64) -> bool {
        self.energy_change <= (1.0 + slack) * self.work_bound + 1e-12 * self.kinetic_energy.max(1.0)
    }
}

pub struct FluidSolver<'m> {
    mesh: &'m Mesh,
    params: ModelParams,
    cfg: FluidConfig,
    u_kind: Vec<FaceKind>,
    v_kind: Vec<FaceKind>,
    u_rows: Vec<ViscousRow>,
    v_rows: Vec<ViscousRow>,
    viscous_ops: Option<[Operator; 2]>,
    poisson: Operator,
    /// One pinned cell per connected fluid region.
    pins: Vec<usize>,
    components: Vec<usize>,
}

const PAR_MIN: usize = 4096;

fn parallel(n: usize) -> bool {
    n >= PAR_MIN && rayon::current_num_threads() > 1
}

impl<'m> FluidSolver<'m> {
    pub fn new(mesh: &'m Mesh, params: ModelParams, cfg: FluidConfig) -> Result<Self, FluidError> {
        params.validate()?;
        cfg.validate()?;
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let solid = |i: usize, j: usize| mesh.is_solid(CellIndex::new(i, j));

        let mut u_kind = Vec::with_capacity((nx + 1) * ny);
        let mut nu = 0;
        for j in 0..ny {
            for i in 0..=nx {
                let left = i > 0 && solid(i - 1, j);
                let right = i < nx && solid(i, j);
                let kind = if left || right {
                    FaceKind::Solid { both: (i == 0 || left) && (i == nx || right) }
                } else if i == 0 {
                    FaceKind::Inlet
                } else if i == nx {
                    FaceKind::Outlet
                } else {
                    nu += 1;
                    FaceKind::Unknown(nu - 1)
                };
                u_kind.push(kind);
            }
        }
        let mut v_kind = Vec::with_capacity(nx * (ny + 1));
        let mut nv = 0;
        for j in 0..=ny {
            for i in 0..nx {
                let below = j > 0 && solid(i, j - 1);
                let above = j < ny && solid(i, j);
                let kind = if below || above {
                    FaceKind::Solid { both: (j == 0 || below) && (j == ny || above) }
                } else if j == 0 || j == ny {
                    FaceKind::Wall
                } else {
                    nv += 1;
                    FaceKind::Unknown(nv - 1)
                };
                v_kind.push(kind);
            }
        }

        let mut solver = Self {
            mesh,
            params,
            cfg,
            u_kind,
            v_kind,
            u_rows: Vec::new(),
            v_rows: Vec::new(),
            viscous_ops: None,
            poisson: Operator { matrix: CsrMatrix::identity(0), precond: Preconditioner::Identity },
            pins: Vec::new(),
            components: Vec::new(),
        };
        solver.build_viscous()?;
        solver.build_poisson()?;
        Ok(solver)
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }
    pub fn config(&self) -> &FluidConfig {
        &self.cfg
    }
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn u_at(&self, i: usize, j: usize) -> usize {
        j * (self.mesh.nx() + 1) + i
    }
    fn v_at(&self, i: usize, j: usize) -> usize {
        j * self.mesh.nx() + i
    }

    /// Laplacian couplings (per unit of 1/h²) of every face unknown.
    fn build_viscous(&mut self) -> Result<(), FluidError> {
        let (nx, ny) = (self.mesh.nx(), self.mesh.ny());
        let (cx, cy) = (1.0 / self.mesh.dx().powi(2), 1.0 / self.mesh.dy().powi(2));
        let scale = self.cfg.dt * self.params.nu;

        // (diag, terms) contribution from one neighbor face
        let couple = |kind: FaceKind, idx: usize, c: f64, row: &mut ViscousRow| match kind {
            FaceKind::Unknown(m) => {
                row.diag += c;
                row.terms.push(Coupling::Unknown(m, -c));
            }
            FaceKind::Solid { both: true } => row.diag += 2.0 * c,
            _ => {
                row.diag += c;
                row.terms.push(Coupling::Known(idx, c));
            }
        };

        let mut u_rows = Vec::new();
        for j in 0..ny {
            for i in 1..nx {
                let face = self.u_at(i, j);
                if !matches!(self.u_kind[face], FaceKind::Unknown(_)) {
                    continue;
                }
                let mut row = ViscousRow { face, diag: 0.0, terms: Vec::new() };
                for ii in [i - 1, i + 1] {
                    let f = self.u_at(ii, j);
                    couple(self.u_kind[f], f, cx, &mut row);
                }
                // beyond the top and bottom walls: slip, no contribution
                for jj in [j.checked_sub(1), (j + 1 < ny).then_some(j + 1)].into_iter().flatten() {
                    let f = self.u_at(i, jj);
                    couple(self.u_kind[f], f, cy, &mut row);
                }
                u_rows.push(row);
            }
        }
        let mut v_rows = Vec::new();
        for j in 1..ny {
            for i in 0..nx {
                let face = self.v_at(i, j);
                if !matches!(self.v_kind[face], FaceKind::Unknown(_)) {
                    continue;
                }
                let mut row = ViscousRow { face, diag: 0.0, terms: Vec::new() };
                for jj in [j - 1, j + 1] {
                    let f = self.v_at(i, jj);
                    couple(self.v_kind[f], f, cy, &mut row);
                }
                if i == 0 {
                    // inlet: v = 0 half a cell away
                    row.diag += 2.0 * cx;
                } else {
                    let f = self.v_at(i - 1, j);
                    couple(self.v_kind[f], f, cx, &mut row);
                }
                // outlet: zero normal gradient of v
                if i + 1 < nx {
                    let f = self.v_at(i + 1, j);
                    couple(self.v_kind[f], f, cx, &mut row);
                }
                v_rows.push(row);
            }
        }

        self.u_rows = u_rows;
        self.v_rows = v_rows;
        self.viscous_ops = if scale > 0.0 { Some(self.viscous_operators(scale)?) } else { None };
        Ok(())
    }

    /// Flux-form Neumann Laplacian `Σ T (φ_K - φ_L)` with one pinned cell per
    /// connected region.
    fn build_poisson(&mut self) -> Result<(), FluidError> {
        let mesh = self.mesh;
        let cells = mesh.fluid_cells();
        let n = cells.len();
        let neighbors = |k: usize| -> Vec<(usize, f64)> {
            crate::mesh::DIRS
                .iter()
                .filter_map(|&d| {
                    let f = mesh.face_towards(cells[k], d);
                    match f.neighbor {
                        crate::mesh::Neighbor::Cell(l) => Some((mesh.fluid_index(l).unwrap(), f.trans())),
                        _ => None,
                    }
                })
                .collect()
        };

        let mut component = vec![usize::MAX; n];
        let mut pins = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let id = pins.len();
            pins.push(start);
            component[start] = id;
            let mut stack = vec![start];
            while let Some(k) = stack.pop() {
                for (l, _) in neighbors(k) {
                    if component[l] == usize::MAX {
                        component[l] = id;
                        stack.push(l);
                    }
                }
            }
        }

        let mut b = TripletBuilder::new(n, n);
        for k in 0..n {
            if pins.contains(&k) {
                b.add(k, k, 1.0);
                continue;
            }
            let mut diag = 0.0;
            for (l, t) in neighbors(k) {
                diag += t;
                if !pins.contains(&l) {
                    b.add(k, l, -t);
                }
            }
            b.add(k, k, diag);
        }
        let matrix = b.build();
        let precond = Preconditioner::build(self.cfg.poisson.preconditioner, &matrix)
            .map_err(|e| FluidError::Poisson(e.to_string()))?;
        self.poisson = Operator { matrix, precond };
        self.pins = pins;
        self.components = component;
        Ok(())
    }

    /// Inlet profile value at height `y`.
    pub fn inflow(&self, y: f64) -> f64 {
        let spec = self.mesh.spec();
        let s = (y - spec.origin[1]) / spec.ly;
        self.cfg.inflow_scale * 2.0 * s * (1.0 - s)
    }

    fn net_inflow(&self, vel: &FaceVelocity) -> f64 {
        let dy = self.mesh.dy();
        (0..self.mesh.ny()).map(|j| vel.u[self.u_at(0, j)] * dy).sum()
    }

    /// Impose the boundary values of the channel on `vel`.
    pub fn apply_bcs(&self, vel: &mut FaceVelocity) {
        let (nx, ny) = (self.mesh.nx(), self.mesh.ny());
        let dy = self.mesh.dy();
        let y0 = self.mesh.spec().origin[1];
        for (f, kind) in self.u_kind.iter().enumerate() {
            match kind {
                FaceKind::Solid { .. } => vel.u[f] = 0.0,
                FaceKind::Inlet => {
                    let j = f / (nx + 1);
                    vel.u[f] = self.inflow(y0 + (j as f64 + 0.5) * dy);
                }
                _ => {}
            }
        }
        for (f, kind) in self.v_kind.iter().enumerate() {
            if matches!(kind, FaceKind::Solid { .. } | FaceKind::Wall) {
                vel.v[f] = 0.0;
            }
        }
        // zero-gradient outlet, rescaled so the outflow carries the inflow
        let inflow = self.net_inflow(vel);
        let open: Vec<usize> =
            (0..ny).filter(|&j| self.u_kind[self.u_at(nx, j)] == FaceKind::Outlet).collect();
        let raw: Vec<f64> = open.iter().map(|&j| vel.u[self.u_at(nx - 1, j)]).collect();
        let raw_flux: f64 = raw.iter().sum::<f64>() * dy;
        for (k, &j) in open.iter().enumerate() {
            let f = self.u_at(nx, j);
            vel.u[f] = if open.is_empty() {
                0.0
            } else if raw_flux.abs() > 1e-12 * (inflow.abs() + 1e-300) && raw_flux.abs() > 1e-14 {
                raw[k] * inflow / raw_flux
            } else {
                inflow / (open.len() as f64 * dy)
            };
        }
    }

    fn sample_u(&self, vel: &FaceVelocity, x: f64, y: f64) -> f64 {
        let m = self.mesh;
        let [ox, oy] = m.spec().origin;
        let fi = ((x - ox) / m.dx()).clamp(0.0, m.nx() as f64);
        let fj = ((y - oy) / m.dy() - 0.5).clamp(0.0, (m.ny() - 1) as f64);
        bilinear(&vel.u, m.nx() + 1, m.nx(), m.ny() - 1, fi, fj)
    }

    fn sample_v(&self, vel: &FaceVelocity, x: f64, y: f64) -> f64 {
        let m = self.mesh;
        let [ox, oy] = m.spec().origin;
        let fi = ((x - ox) / m.dx() - 0.5).clamp(0.0, (m.nx() - 1) as f64);
        let fj = ((y - oy) / m.dy()).clamp(0.0, m.ny() as f64);
        bilinear(&vel.v, m.nx(), m.nx() - 1, m.ny(), fi, fj)
    }

    fn u_position(&self, f: usize) -> [f64; 2] {
        let m = self.mesh;
        let (i, j) = (f % (m.nx() + 1), f / (m.nx() + 1));
        let [ox, oy] = m.spec().origin;
        [ox + i as f64 * m.dx(), oy + (j as f64 + 0.5) * m.dy()]
    }

    fn v_position(&self, f: usize) -> [f64; 2] {
        let m = self.mesh;
        let (i, j) = (f % m.nx(), f / m.nx());
        let [ox, oy] = m.spec().origin;
        [ox + (i as f64 + 0.5) * m.dx(), oy + j as f64 * m.dy()]
    }

    /// Semi-Lagrangian transport of the face unknowns: each takes the
    /// bilinearly interpolated value at `x - dt k U(x)`, with feet clamped to
    /// the domain. Fixed faces are copied.
    pub fn advect_velocity(&self, vel: &FaceVelocity, dt: f64) -> FaceVelocity {
        let k = self.params.k_conv;
        let mut out = vel.clone();
        if k == 0.0 {
            return out;
        }
        let back = |[x, y]: [f64; 2]| {
            let (u, v) = (self.sample_u(vel, x, y), self.sample_v(vel, x, y));
            (x - dt * k * u, y - dt * k * v)
        };
        let u_new = |(f, slot): (usize, &mut f64)| {
            if let FaceKind::Unknown(_) = self.u_kind[f] {
                let (x, y) = back(self.u_position(f));
                *slot = self.sample_u(vel, x, y);
            }
        };
        let v_new = |(f, slot): (usize, &mut f64)| {
            if let FaceKind::Unknown(_) = self.v_kind[f] {
                let (x, y) = back(self.v_position(f));
                *slot = self.sample_v(vel, x, y);
            }
        };
        if parallel(out.u.len()) {
            out.u.par_iter_mut().enumerate().for_each(u_new);
            out.v.par_iter_mut().enumerate().for_each(v_new);
        } else {
            out.u.iter_mut().enumerate().for_each(u_new);
            out.v.iter_mut().enumerate().for_each(v_new);
        }
        out
    }

    /// Buoyancy weight on the full grid from fluid-cell densities.
    fn q_field(&self, n1: &[f64], n2: &[f64]) -> Vec<f64> {
        let q: Vec<f64> = n1.iter().zip(n2).map(|(&a, &b)| model::buoyancy_q(a, b)).collect();
        self.mesh.to_full_field(&q, 0.0)
    }

    fn check_densities(&self, n1: &[f64], n2: &[f64]) -> Result<(), FluidError> {
        let expected = self.mesh.n_fluid();
        for n in [n1, n2] {
            if n.len() != expected {
                return Err(FluidError::Shape { expected, found: n.len() });
            }
        }
        Ok(())
    }

    /// Face values of `Q ∇φ`, zero on fixed faces. `∇φ` is read as the
    /// direction in which gravity pulls the populations, so `(0, -1)` pushes
    /// populated fluid down.
    fn forcing(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nx, _) = (self.mesh.nx(), self.mesh.ny());
        let [gx, gy] = self.params.grad_phi;
        let fu = self
            .u_kind
            .iter()
            .enumerate()
            .map(|(f, k)| match k {
                FaceKind::Unknown(_) => {
                    let (i, j) = (f % (nx + 1), f / (nx + 1));
                    0.5 * (q[j * nx + i - 1] + q[j * nx + i]) * gx
                }
                _ => 0.0,
            })
            .collect();
        let fv = self
            .v_kind
            .iter()
            .enumerate()
            .map(|(f, k)| match k {
                FaceKind::Unknown(_) => {
                    let (i, j) = (f % nx, f / nx);
                    0.5 * (q[(j - 1) * nx + i] + q[j * nx + i]) * gy
                }
                _ => 0.0,
            })
            .collect();
        (fu, fv)
    }

    /// Solve `(I - dt ν Δ) U' = U - dt Q ∇φ` on the face unknowns. Fixed faces
    /// keep their values and enter as boundary data.
    pub fn diffuse_and_force(
        &self,
        vel: &FaceVelocity,
        n1: &[f64],
        n2: &[f64],
        dt: f64,
    ) -> Result<(FaceVelocity, usize), FluidError> {
        self.check_densities(n1, n2)?;
        let q = self.q_field(n1, n2);
        let (fu, fv) = self.forcing(&q);
        let mut out = vel.clone();
        let mut iterations = 0;
        let scale = dt * self.params.nu;
        let ops = if scale > 0.0 && (dt - self.cfg.dt).abs() <= 1e-14 * self.cfg.dt { self.viscous_ops.as_ref() } else { None };
        let rebuilt;
        let ops = match ops {
            Some(o) => Some(o),
            None if scale > 0.0 => {
                rebuilt = self.viscous_operators(scale)?;
                Some(&rebuilt)
            }
            None => None,
        };
        for (comp, (rows, src, force)) in
            [(&self.u_rows, &vel.u, &fu), (&self.v_rows, &vel.v, &fv)].into_iter().enumerate()
        {
            let rhs: Vec<f64> = rows
                .iter()
                .map(|row| {
                    let mut r = src[row.face] + dt * force[row.face];
                    for t in &row.terms {
                        if let Coupling::Known(idx, c) = *t {
                            r += scale * c * src[idx];
                        }
                    }
                    r
                })
                .collect();
            let solution = match ops {
                None => rhs,
                Some(ops) => {
                    let x0: Vec<f64> = rows.iter().map(|row| src[row.face]).collect();
                    let op = &ops[comp];
                    let res = gmres_with(&op.matrix, &op.precond, &rhs, &x0, &self.cfg.viscous)
                        .map_err(|e| FluidError::Viscous(e.to_string()))?;
                    if !res.stats.converged {
                        return Err(FluidError::Viscous(format!(
                            "residual {:.3e} after {} iterations",
                            res.stats.residual_norm, res.stats.iterations
                        )));
                    }
                    iterations += res.stats.iterations;
                    res.x
                }
            };
            let dst = if comp == 0 { &mut out.u } else { &mut out.v };
            for (row, value) in rows.iter().zip(solution) {
                dst[row.face] = value;
            }
        }
        Ok((out, iterations))
    }

    fn viscous_operators(&self, scale: f64) -> Result<[Operator; 2], FluidError> {
        let build = |rows: &[ViscousRow]| -> Result<Operator, FluidError> {
            let mut b = TripletBuilder::new(rows.len(), rows.len());
            for (r, row) in rows.iter().enumerate() {
                b.add(r, r, 1.0 + scale * row.diag);
                for t in &row.terms {
                    if let Coupling::Unknown(m, c) = *t {
                        b.add(r, m, scale * c);
                    }
                }
            }
            let matrix = b.build();
            let precond = Preconditioner::build(self.cfg.viscous.preconditioner, &matrix)
                .map_err(|e| FluidError::Viscous(e.to_string()))?;
            Ok(Operator { matrix, precond })
        };
        Ok([build(&self.u_rows)?, build(&self.v_rows)?])
    }

    /// Net outflow of every fluid cell (flux form, not divided by |K|).
    fn net_outflow(&self, vel: &FaceVelocity) -> Vec<f64> {
        let (dx, dy) = (self.mesh.dx(), self.mesh.dy());
        self.mesh
            .fluid_cells()
            .iter()
            .map(|&c| {
                let east = vel.u[self.u_at(c.i + 1, c.j)] - vel.u[self.u_at(c.i, c.j)];
                let north = vel.v[self.v_at(c.i, c.j + 1)] - vel.v[self.v_at(c.i, c.j)];
                east * dy + north * dx
            })
            .collect()
    }

    /// Discrete divergence per fluid cell.
    pub fn divergence(&self, vel: &FaceVelocity) -> Vec<f64> {
        let vol = self.mesh.cell_volume();
        self.net_outflow(vel).into_iter().map(|d| d / vol).collect()
    }

    /// Remove the gradient part of `vel`, keeping every fixed face value.
    /// Returns the corrected field and the potential φ (fluid cells) with
    /// `U' = U - ∇φ`.
    pub fn project(
        &self,
        vel: &FaceVelocity,
        guess: Option<&[f64]>,
    ) -> Result<(FaceVelocity, Vec<f64>, ProjectionStats), FluidError> {
        let n = self.mesh.n_fluid();
        let mut d = self.net_outflow(vel);
        let net: f64 = d.iter().sum();
        let inflow = self.net_inflow(vel);
        let scale: f64 = d.iter().map(|v| v.abs()).sum::<f64>() + inflow.abs();
        if net.abs() > 1e-9 * scale.max(1e-300) && net.abs() > 1e-14 {
            return Err(FluidError::Incompatible { net, inflow });
        }
        // remove the roundoff-level defect of each region
        let regions = self.pins.len();
        let mut sums = vec![0.0; regions];
        let mut counts = vec![0usize; regions];
        for (k, v) in d.iter().enumerate() {
            sums[self.components[k]] += v;
            counts[self.components[k]] += 1;
        }
        for (k, v) in d.iter_mut().enumerate() {
            let c = self.components[k];
            *v -= sums[c] / counts[c] as f64;
        }
        // Σ T (φ_K - φ_L) = -D_K
        let mut rhs: Vec<f64> = d.iter().map(|v| -v).collect();
        for &p in &self.pins {
            rhs[p] = 0.0;
        }
        let x0 = match guess {
            Some(g) if g.len() == n => {
                let mut g = g.to_vec();
                for &p in &self.pins {
                    let shift = g[p];
                    for (k, v) in g.iter_mut().enumerate() {
                        if self.components[k] == self.components[p] {
                            *v -= shift;
                        }
                    }
                }
                g
            }
            _ => vec![0.0; n],
        };
        let res = gmres_with(&self.poisson.matrix, &self.poisson.precond, &rhs, &x0, &self.cfg.poisson)
            .map_err(|e| FluidError::Poisson(e.to_string()))?;
        if !res.stats.converged {
            return Err(FluidError::Poisson(format!(
                "residual {:.3e} after {} iterations",
                res.stats.residual_norm, res.stats.iterations
            )));
        }
        let phi = res.x;
        let mut out = vel.clone();
        let mesh = self.mesh;
        let nx = mesh.nx();
        let (dx, dy) = (mesh.dx(), mesh.dy());
        let at = |i: usize, j: usize| mesh.fluid_index(CellIndex::new(i, j)).map(|k| phi[k]);
        for (f, kind) in self.u_kind.iter().enumerate() {
            if let FaceKind::Unknown(_) = kind {
                let (i, j) = (f % (nx + 1), f / (nx + 1));
                out.u[f] -= (at(i, j).unwrap() - at(i - 1, j).unwrap()) / dx;
            }
        }
        for (f, kind) in self.v_kind.iter().enumerate() {
            if let FaceKind::Unknown(_) = kind {
                let (i, j) = (f % nx, f / nx);
                out.v[f] -= (at(i, j).unwrap() - at(i, j - 1).unwrap()) / dy;
            }
        }
        let max_divergence = linalg::norm_inf(&self.divergence(&out));
        Ok((out, phi, ProjectionStats { iterations: res.stats.iterations, max_divergence }))
    }

    /// ½ Σ U² over faces, each weighted by dx·dy (half on the domain boundary).
    pub fn kinetic_energy(&self, vel: &FaceVelocity) -> f64 {
        let (nx, ny) = (self.mesh.nx(), self.mesh.ny());
        let vol = self.mesh.cell_volume();
        let mut e = 0.0;
        for (f, u) in vel.u.iter().enumerate() {
            let i = f % (nx + 1);
            let w = if i == 0 || i == nx { 0.5 } else { 1.0 };
            e += w * u * u;
        }
        for (f, v) in vel.v.iter().enumerate() {
            let j = f / nx;
            let w = if j == 0 || j == ny { 0.5 } else { 1.0 };
            e += w * v * v;
        }
        0.5 * vol * e
    }

    /// Σ v·dx·dy over y-faces.
    pub fn vertical_momentum(&self, vel: &FaceVelocity) -> f64 {
        self.mesh.cell_volume() * vel.v.iter().sum::<f64>()
    }

    /// Zero interior velocity with boundary values, projected.
    pub fn initial_state(&self) -> Result<FluidState, FluidError> {
        let mut vel = FaceVelocity::zeros(self.mesh.nx(), self.mesh.ny());
        self.apply_bcs(&mut vel);
        let (vel, phi, _) = self.project(&vel, None)?;
        let p = self.mesh.to_full_field(&phi.iter().map(|v| v / self.cfg.dt).collect::<Vec<_>>(), 0.0);
        Ok(FluidState { vel, p, t: 0.0 })
    }

    /// Power bound dt·(inflow kinetic-energy flux + |boundary pressure work| + |forcing work|).
    fn work_bound(&self, vel: &FaceVelocity, p_full: &[f64], q: &[f64], dt: f64) -> f64 {
        let m = self.mesh;
        let (nx, ny) = (m.nx(), m.ny());
        let (dx, dy) = (m.dx(), m.dy());
        let mut inflow = 0.0;
        let mut pressure = 0.0;
        for j in 0..ny {
            let u_in = vel.u[self.u_at(0, j)];
            if u_in > 0.0 {
                inflow += 0.5 * u_in.powi(3) * dy;
            }
            if self.u_kind[self.u_at(0, j)] == FaceKind::Inlet {
                pressure -= u_in * p_full[j * nx] * dy;
            }
            let f = self.u_at(nx, j);
            let u_out = vel.u[f];
            if u_out < 0.0 {
                inflow += 0.5 * (-u_out).powi(3) * dy;
            }
            if self.u_kind[f] == FaceKind::Outlet {
                pressure += u_out * p_full[j * nx + nx - 1] * dy;
            }
        }
        let (fu, fv) = self.forcing(q);
        let vol = dx * dy;
        let forcing: f64 = fu.iter().zip(&vel.u).chain(fv.iter().zip(&vel.v)).map(|(f, u)| f * u * vol).sum();
        dt * (inflow + pressure.abs() + forcing.abs())
    }

    /// One fluid step with the densities held fixed.
    pub fn step(&self, state: &FluidState, n1: &[f64], n2: &[f64]) -> Result<(FluidState, FluidReport), FluidError> {
        let dt = self.cfg.dt;
        self.step_dt(state, n1, n2, dt)
    }

    pub fn step_dt(
        &self,
        state: &FluidState,
        n1: &[f64],
        n2: &[f64],
        dt: f64,
    ) -> Result<(FluidState, FluidReport), FluidError> {
        self.check_densities(n1, n2)?;
        let e0 = self.kinetic_energy(&state.vel);
        let advected = self.advect_velocity(&state.vel, dt);
        let (mut vel, viscous_iterations) = self.diffuse_and_force(&advected, n1, n2, dt)?;
        self.apply_bcs(&mut vel);
        let guess: Vec<f64> = self
            .mesh
            .fluid_cells()
            .iter()
            .map(|&c| state.p[self.mesh.flat(c)] * dt)
            .collect();
        let (vel, phi, projection) = self.project(&vel, Some(&guess))?;
        let p = self.mesh.to_full_field(&phi.iter().map(|v| v / dt).collect::<Vec<_>>(), 0.0);
        let kinetic_energy = self.kinetic_energy(&vel);
        let q = self.q_field(n1, n2);
        let work_bound = self.work_bound(&vel, &p, &q, dt);
        let report = FluidReport {
            projection,
            viscous_iterations,
            kinetic_energy,
            energy_change: kinetic_energy - e0,
            work_bound,
            vertical_momentum: self.vertical_momentum(&vel),
        };
        Ok((FluidState { vel, p, t: state.t + dt }, report))
    }
}

/// Bilinear interpolation on a `(imax+1) x (jmax+1)` node array with row
/// stride `stride`, at fractional node coordinates already clamped.
fn bilinear(a: &[f64], stride: usize, imax: usize, jmax: usize, fi: f64, fj: f64) -> f64 {
    let i0 = (fi.floor() as usize).min(imax.saturating_sub(1));
    let j0 = (fj.floor() as usize).min(jmax.saturating_sub(1));
    let (i1, j1) = ((i0 + 1).min(imax), (j0 + 1).min(jmax));
    let (sx, sy) = (fi - i0 as f64, fj - j0 as f64);
    let at = |i: usize, j: usize| a[j * stride + i];
    (1.0 - sy) * ((1.0 - sx) * at(i0, j0) + sx * at(i1, j0)) + sy * ((1.0 - sx) * at(i0, j1) + sx * at(i1, j1))
}

#[derive(Debug, Clone, Default)]
pub struct CoupledReport {
    pub fluid: FluidReport,
    pub macro_step: StepReport,
}

/// Fluid step with the current densities, then the density step advected by
/// the new velocity.
pub fn coupled_step(
    fluid: &FluidSolver<'_>,
    macro_solver: &mut MacroSolver<'_>,
    fstate: &FluidState,
    mstate: &MacroState,
    dt: f64,
) -> Result<(FluidState, MacroState, CoupledReport), FluidError> {
    let (f_next, fluid_report) = fluid.step_dt(fstate, &mstate.n1, &mstate.n2, dt)?;
    let (m_next, macro_report) = macro_solver.advance(mstate, dt, Some(&f_next.vel))?;
    Ok((f_next, m_next, CoupledReport { fluid: fluid_report, macro_step: macro_report }))
}

pub enum CoupledEvent<'a> {
    Snapshot { fluid: &'a FluidState, densities: &'a MacroState },
    Step { fluid: &'a FluidState, densities: &'a MacroState, diagnostics: &'a Diagnostics, report: &'a CoupledReport },
}

#[derive(Debug, Clone)]
pub struct CoupledSummary {
    pub fluid: FluidState,
    pub densities: MacroState,
    pub diagnostics: Vec<Diagnostics>,
    pub reports: Vec<FluidReport>,
    pub steps: usize,
}

/// Integrate the coupled system to `schedule.t_end` with the fluid step size.
pub fn run_coupled<F>(
    fluid: &FluidSolver<'_>,
    macro_solver: &mut MacroSolver<'_>,
    init: MacroState,
    schedule: &Schedule,
    mut observer: F,
) -> Result<CoupledSummary, FluidError>
where
    F: FnMut(CoupledEvent<'_>),
{
    let mesh = fluid.mesh();
    let mut fstate = fluid.initial_state()?;
    let mut mstate = init;
    let (w1, w2, _) = macro_solver.solve_chemicals(&mstate.n1, &mstate.n2, Some(&fstate.vel), None)?;
    mstate.w1 = w1;
    mstate.w2 = w2;
    let mut diags = vec![macro_solver::diagnostics(mesh, &mstate)];
    let mut reports = Vec::new();
    if schedule.is_snapshot(mstate.t) {
        observer(CoupledEvent::Snapshot { fluid: &fstate, densities: &mstate });
    }
    let eps = 1e-12 * schedule.t_end.max(1.0);
    let mut steps = 0;
    while mstate.t < schedule.t_end - eps {
        let stop = schedule.next_stop(mstate.t);
        let dt = macro_solver::clipped_dt(mstate.t, fluid.config().dt, stop);
        let (f, mut m, report) = coupled_step(fluid, macro_solver, &fstate, &mstate, dt)?;
        if (m.t - stop).abs() <= eps {
            m.t = stop;
        }
        fstate = FluidState { t: m.t, ..f };
        mstate = m;
        steps += 1;
        let mut d = macro_solver::diagnostics(mesh, &mstate);
        d.newton_iterations = report.macro_step.newton_iterations();
        d.gmres_iterations = report.macro_step.gmres_iterations();
        observer(CoupledEvent::Step { fluid: &fstate, densities: &mstate, diagnostics: &d, report: &report });
        diags.push(d);
        reports.push(report.fluid);
        if schedule.is_snapshot(mstate.t) {
            observer(CoupledEvent::Snapshot { fluid: &fstate, densities: &mstate });
        }
    }
    Ok(CoupledSummary { fluid: fstate, densities: mstate, diagnostics: diags, reports, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macro_solver::StepConfig;
    use crate::mesh::{build_grid, GridSpec, Obstacle};
    use crate::presets;

    fn channel_mesh(nx: usize, ny: usize) -> Mesh {
        let mut spec = GridSpec::rectangle(nx, ny, 10.0, 4.0);
        spec.obstacles = presets::channel_obstacles();
        build_grid(spec).unwrap()
    }

    fn params(nu: f64, k: f64, grad_phi: [f64; 2]) -> ModelParams {
        ModelParams { nu, k_conv: k, grad_phi, ..presets::example1_params() }
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn inlet_profile_and_fixed_faces() {
        let mesh = channel_mesh(40, 16);
        let s = FluidSolver::new(&mesh, params(0.05, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let mut vel = FaceVelocity::zeros(40, 16);
        vel.u.iter_mut().for_each(|u| *u = 3.0);
        vel.v.iter_mut().for_each(|v| *v = -2.0);
        s.apply_bcs(&mut vel);
        for j in 0..16 {
            let y = (j as f64 + 0.5) * 0.25;
            let s_ = y / 4.0;
            assert_eq!(vel.u[vel.u_index(0, j)], 2.0 * s_ * (1.0 - s_));
        }
        for i in 0..40 {
            assert_eq!(vel.v[vel.v_index(i, 0)], 0.0);
            assert_eq!(vel.v[vel.v_index(i, 16)], 0.0);
        }
        for (f, k) in s.u_kind.iter().enumerate() {
            if let FaceKind::Solid { .. } = k {
                assert_eq!(vel.u[f], 0.0);
            }
        }
        for (f, k) in s.v_kind.iter().enumerate() {
            if let FaceKind::Solid { .. } = k {
                assert_eq!(vel.v[f], 0.0);
            }
        }
        let inflow = s.net_inflow(&vel);
        let outflow: f64 = (0..16).map(|j| vel.u[vel.u_index(40, j)] * 0.25).sum();
        assert!((inflow - outflow).abs() < 1e-14);
    }

    #[test]
    fn advection_identities() {
        let mesh = channel_mesh(30, 12);
        let mut vel = FaceVelocity::zeros(30, 12);
        vel.u.iter_mut().for_each(|u| *u = 0.7);
        vel.v.iter_mut().for_each(|v| *v = -0.2);
        let s = FluidSolver::new(&mesh, params(0.0, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let out = s.advect_velocity(&vel, 0.1);
        assert!(out.u.iter().chain(&out.v).zip(vel.u.iter().chain(&vel.v)).all(|(a, b)| (a - b).abs() < 1e-14));
        let frozen = FluidSolver::new(&mesh, params(0.0, 0.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let mut seed = 3;
        let mut rnd = FaceVelocity::zeros(30, 12);
        rnd.u.iter_mut().chain(rnd.v.iter_mut()).for_each(|x| *x = lcg(&mut seed));
        assert_eq!(frozen.advect_velocity(&rnd, 0.1), rnd);
    }

    #[test]
    fn advection_of_rigid_rotation() {
        let n = 64;
        let mesh = build_grid(GridSpec::rectangle(n, n, 1.0, 1.0)).unwrap();
        let s = FluidSolver::new(&mesh, params(0.0, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let w = 1.0;
        let mut vel = FaceVelocity::zeros(n, n);
        for f in 0..vel.u.len() {
            let [_, y] = s.u_position(f);
            vel.u[f] = -w * (y - 0.5);
        }
        for f in 0..vel.v.len() {
            let [x, _] = s.v_position(f);
            vel.v[f] = w * (x - 0.5);
        }
        let mut errs = Vec::new();
        for dt in [0.02, 0.01] {
            let out = s.advect_velocity(&vel, dt);
            let mut err: f64 = 0.0;
            for f in 0..vel.u.len() {
                let [x, y] = s.u_position(f);
                if (x - 0.5).abs() > 0.3 || (y - 0.5).abs() > 0.3 {
                    continue;
                }
                // exact foot: rotate back by angle w dt about the center
                let (c, sn) = ((w * dt).cos(), (w * dt).sin());
                let (rx, ry) = (x - 0.5, y - 0.5);
                let yf = -sn * rx + c * ry;
                err = err.max((out.u[f] - (-w * yf)).abs());
            }
            errs.push(err);
        }
        // Euler feet are second-order accurate per step; bilinear is exact for linear fields
        assert!(errs[0] < 2.0 * 0.02f64.powi(2), "{errs:?}");
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "{errs:?}");
    }

    #[test]
    fn viscosity_and_forcing() {
        let mesh = build_grid(GridSpec::rectangle(20, 8, 10.0, 4.0)).unwrap();
        let n = vec![0.5; mesh.n_fluid()];
        // ν = 0 and no buoyancy: identity
        let s = FluidSolver::new(&mesh, params(0.0, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let mut seed = 9;
        let mut vel = FaceVelocity::zeros(20, 8);
        vel.u.iter_mut().chain(vel.v.iter_mut()).for_each(|x| *x = lcg(&mut seed));
        assert_eq!(s.diffuse_and_force(&vel, &n, &n, 0.05).unwrap().0, vel);
        // constants survive diffusion with slip walls
        let s = FluidSolver::new(&mesh, params(0.3, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let mut c = FaceVelocity::zeros(20, 8);
        c.u.iter_mut().for_each(|u| *u = 0.8);
        let out = s.diffuse_and_force(&c, &n, &n, 0.05).unwrap().0;
        assert!(out.u.iter().all(|u| (u - 0.8).abs() < 1e-10));
        assert!(out.v.iter().all(|v| v.abs() < 1e-12));
        // buoyancy: with ∇φ = (0, -1) populated fluid is pushed down
        let s = FluidSolver::new(&mesh, params(0.0, 1.0, [0.0, -1.0]), FluidConfig::default()).unwrap();
        let zero = FaceVelocity::zeros(20, 8);
        let out = s.diffuse_and_force(&zero, &n, &n, 0.05).unwrap().0;
        assert!(s.vertical_momentum(&out) < 0.0);
        assert!(out.u.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn projection_properties() {
        let mesh = channel_mesh(40, 16);
        let s = FluidSolver::new(&mesh, params(0.05, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let mut seed = 21;
        let mut vel = FaceVelocity::zeros(40, 16);
        vel.u.iter_mut().chain(vel.v.iter_mut()).for_each(|x| *x = lcg(&mut seed) - 0.5);
        s.apply_bcs(&mut vel);
        let (p1, _, st) = s.project(&vel, None).unwrap();
        assert!(st.max_divergence <= 1e-8, "{}", st.max_divergence);
        // fixed faces untouched
        for (f, k) in s.u_kind.iter().enumerate() {
            if !matches!(k, FaceKind::Unknown(_)) {
                assert_eq!(p1.u[f], vel.u[f]);
            }
        }
        // idempotent
        let (p2, _, _) = s.project(&p1, None).unwrap();
        let diff = p1.u.iter().chain(&p1.v).zip(p2.u.iter().chain(&p2.v)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        // a pure gradient in a closed box projects to zero
        let boxm = build_grid(GridSpec::rectangle(16, 16, 1.0, 1.0)).unwrap();
        let mut cfg = FluidConfig::default();
        cfg.inflow_scale = 0.0;
        let b = FluidSolver::new(&boxm, params(0.0, 1.0, [0.0, 0.0]), cfg).unwrap();
        let g = |x: f64, y: f64| (x * x - y).sin() + x * y;
        let mut grad = FaceVelocity::zeros(16, 16);
        let h = 1.0 / 16.0;
        for j in 0..16 {
            for i in 1..16 {
                let (x0, x1, y) = ((i as f64 - 0.5) * h, (i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                let f = grad.u_index(i, j);
                grad.u[f] = (g(x1, y) - g(x0, y)) / h;
            }
        }
        for j in 1..16 {
            for i in 0..16 {
                let (x, y0, y1) = ((i as f64 + 0.5) * h, (j as f64 - 0.5) * h, (j as f64 + 0.5) * h);
                let f = grad.v_index(i, j);
                grad.v[f] = (g(x, y1) - g(x, y0)) / h;
            }
        }
        let (z, _, _) = b.project(&grad, None).unwrap();
        assert!(linalg::norm_inf(&z.u) < 1e-9 && linalg::norm_inf(&z.v) < 1e-9);
    }

    #[test]
    fn incompatible_boundary_data_is_rejected() {
        let mesh = build_grid(GridSpec::rectangle(10, 4, 10.0, 4.0)).unwrap();
        let s = FluidSolver::new(&mesh, params(0.05, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let mut vel = FaceVelocity::zeros(10, 4);
        s.apply_bcs(&mut vel);
        for j in 0..4 {
            let f = vel.u_index(10, j);
            vel.u[f] = 0.0;
        }
        assert!(matches!(s.project(&vel, None), Err(FluidError::Incompatible { .. })));
    }

    #[test]
    fn energy_decays_without_driving() {
        let mesh = build_grid(GridSpec::rectangle(24, 12, 2.0, 1.0)).unwrap();
        let mut cfg = FluidConfig::default();
        cfg.inflow_scale = 0.0;
        let s = FluidSolver::new(&mesh, params(0.1, 1.0, [0.0, 0.0]), cfg).unwrap();
        let mut seed = 5;
        let mut vel = FaceVelocity::zeros(24, 12);
        vel.u.iter_mut().chain(vel.v.iter_mut()).for_each(|x| *x = lcg(&mut seed) - 0.5);
        s.apply_bcs(&mut vel);
        let (vel, _, _) = s.project(&vel, None).unwrap();
        let mut st = FluidState { vel, p: vec![0.0; mesh.n_cells()], t: 0.0 };
        let n = vec![0.0; mesh.n_fluid()];
        let mut e = s.kinetic_energy(&st.vel);
        for _ in 0..20 {
            let (next, r) = s.step(&st, &n, &n).unwrap();
            assert!(r.kinetic_energy <= e * (1.0 + 1e-12), "{} > {e}", r.kinetic_energy);
            assert!(r.projection.max_divergence <= 1e-8);
            e = r.kinetic_energy;
            st = next;
        }
    }

    #[test]
    fn zero_flow_decouples() {
        let mesh = build_grid(GridSpec::unit_square(12)).unwrap();
        let p = presets::example1_params();
        let mut cfg = FluidConfig { dt: 1e-3, ..FluidConfig::default() };
        cfg.inflow_scale = 0.0;
        let fluid = FluidSolver::new(&mesh, ModelParams { nu: 0.1, k_conv: 1.0, ..p.clone() }, cfg).unwrap();
        let init = presets::example1().initial.build(&mesh, &p, 0).unwrap();
        let mut coupled = MacroSolver::new(&mesh, p.clone(), StepConfig::with_dt(1e-3)).unwrap();
        let mut plain = MacroSolver::new(&mesh, p, StepConfig::with_dt(1e-3)).unwrap();
        let f0 = fluid.initial_state().unwrap();
        assert!(f0.vel.u.iter().chain(&f0.vel.v).all(|&x| x == 0.0));
        let (f1, m1, _) = coupled_step(&fluid, &mut coupled, &f0, &init, 1e-3).unwrap();
        assert!(f1.vel.u.iter().chain(&f1.vel.v).all(|&x| x == 0.0));
        let (m2, _) = plain.advance(&init, 1e-3, None).unwrap();
        let diff = m1.n1.iter().zip(&m2.n1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn channel_flow_settles() {
        let mesh = channel_mesh(40, 16);
        let cfg = FluidConfig { dt: 0.1, ..FluidConfig::default() };
        let s = FluidSolver::new(&mesh, params(0.05, 1.0, [0.0, 0.0]), cfg).unwrap();
        let n = vec![0.0; mesh.n_fluid()];
        let mut st = s.initial_state().unwrap();
        let mut last = None;
        for step in 0..400 {
            let (next, r) = s.step(&st, &n, &n).unwrap();
            assert!(r.projection.max_divergence <= 1e-8);
            assert!(r.within_work_bound(0.1), "step {step}: {r:?}");
            last = Some((r.energy_change / r.kinetic_energy).abs());
            st = next;
        }
        assert!(last.unwrap() < 1e-4, "{last:?}");
    }

    #[test]
    fn circular_obstacle_is_supported() {
        let mut spec = GridSpec::rectangle(40, 16, 10.0, 4.0);
        spec.obstacles = vec![Obstacle::Circle { cx: 3.0, cy: 2.0, r: 0.8 }];
        let mesh = build_grid(spec).unwrap();
        let s = FluidSolver::new(&mesh, params(0.05, 1.0, [0.0, 0.0]), FluidConfig::default()).unwrap();
        let st = s.initial_state().unwrap();
        assert!(linalg::norm_inf(&s.divergence(&st.vel)) <= 1e-8);
    }
}
