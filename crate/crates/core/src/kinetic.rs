//! One-dimensional two-velocity kinetic model in micro-macro form, used to
//! check the diffusion limit of the density equations numerically.
//!
//! Velocities are `V = {-r, +r}` with the counting measure, so `|V| = 2`,
//! `M = 1/2` and `⟨h⟩ = h(-r) + h(+r)`. With `f = M n + ε g` the system is
//!
//! ```text
//! ∂t g + (1/ε²) v M ∂x n + (1/ε)(I - P)(v ∂x g) = -(σ/ε²) g + (1/ε²) G¹
//! ∂t n + ⟨v ∂x g⟩ = ⟨G²⟩
//! ```
//!
//! on a periodic interval. `n` lives at cell centers and `g` at cell
//! interfaces; the stiff relaxation is implicit and the transport explicit
//! (upwind for `g`). As `ε → 0` the density solves
//! `∂t n = ∂x(D ∂x n - χ(n) ∂x w) + F` with `D = r²/σ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, newton, CsrMatrix, DenseLu, KrylovConfig, NewtonConfig, NonlinearSystem, TripletBuilder};
use crate::macro_solver::face_value;
use crate::model::{self, ModelParams};

#[derive(Debug, Error)]
pub enum KineticError {
    #[error("invalid kinetic parameter: {0}")]
    Invalid(String),
    #[error("time step {dt:.3e} exceeds the stability bound {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("chemical solve: {0}")]
    Chemical(String),
    #[error("macro reference step failed at t = {t}: {detail}")]
    Reference { t: f64, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub r: f64,
    pub eps: f64,
}

impl KineticParams {
    pub fn validate(&self) -> Result<(), KineticError> {
        for (name, v) in [("sigma1", self.sigma1), ("sigma2", self.sigma2), ("r", self.r), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KineticError::Invalid(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }

    pub fn sigma(&self, species: usize) -> f64 {
        if species == 0 {
            self.sigma1
        } else {
            self.sigma2
        }
    }

    pub fn velocities(&self) -> [f64; 2] {
        [-self.r, self.r]
    }
}

/// Equilibrium `M(v) = 1/|V|` on the two-point velocity set.
pub fn equilibrium_weight(velocities: &[f64]) -> Vec<f64> {
    vec![1.0 / velocities.len() as f64; velocities.len()]
}

/// `r²/(d σ)`.
pub fn limit_diffusion_coefficient(r: f64, sigma: f64, dim: usize) -> f64 {
    r * r / (dim as f64 * sigma)
}

/// Solution of `L θ = v M` for `L g = -σ g`.
pub fn theta(v: f64, m: f64, sigma: f64) -> f64 {
    -v * m / sigma
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    /// Densities at cell centers.
    pub n: [Vec<f64>; 2],
    /// `g[species][velocity][interface]`, interface `j` between cells `j` and `j+1`.
    pub g: [[Vec<f64>; 2]; 2],
    pub w: [Vec<f64>; 2],
    pub t: f64,
}

impl KineticState {
    pub fn cells(&self) -> usize {
        self.n[0].len()
    }

    /// Largest |⟨g⟩| over interfaces and species.
    pub fn moment_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for gs in &self.g {
            for (a, b) in gs[0].iter().zip(&gs[1]) {
                m = m.max((a + b).abs());
            }
        }
        m
    }

    /// Cell values of `f = M n + ε g` with `g` averaged from the two
    /// neighboring interfaces.
    pub fn reconstruct(&self, species: usize, velocity: usize, eps: f64) -> Vec<f64> {
        let n = &self.n[species];
        let g = &self.g[species][velocity];
        let len = n.len();
        (0..len).map(|j| 0.5 * n[j] + eps * 0.5 * (g[j] + g[(j + len - 1) % len])).collect()
    }
}

/// Kinetic initial data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KineticInit {
    /// `f = M ρ`, so `g = 0`.
    Equilibrium,
    /// Every particle moves right: `f(+r) = ρ`, `f(-r) = 0`.
    Beam,
}

/// Periodic 1D setup shared by the kinetic solver and its macro reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup1d {
    pub cells: usize,
    pub length: f64,
    pub kinetic: KineticParams,
    /// Chemotaxis, kinetics and chemical coefficients; `d1`, `d2` are unused
    /// (the diffusion comes from `r²/σ`).
    pub model: ModelParams,
}

impl Setup1d {
    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn validate(&self) -> Result<(), KineticError> {
        if self.cells < 3 || !(self.length > 0.0) {
            return Err(KineticError::Invalid(format!("{} cells on length {}", self.cells, self.length)));
        }
        self.kinetic.validate()?;
        self.model.validate().map_err(|e| KineticError::Invalid(e.to_string()))
    }

    pub fn diffusion(&self, species: usize) -> f64 {
        limit_diffusion_coefficient(self.kinetic.r, self.kinetic.sigma(species), 1)
    }

    /// Stable step bound `½ (dx²/(2D) + ε dx / r)`, smallest over species.
    pub fn max_dt(&self) -> f64 {
        let dx = self.dx();
        (0..2)
            .map(|s| 0.5 * (dx * dx / (2.0 * self.diffusion(s)) + self.kinetic.eps * dx / self.kinetic.r))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn centers(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.cells).map(|j| (j as f64 + 0.5) * dx).collect()
    }

    /// Initial state from a density profile `rho(x)` used for both species.
    pub fn initial_state<F: Fn(f64) -> f64>(&self, rho: F, init: KineticInit) -> KineticState {
        let dx = self.dx();
        let n: Vec<f64> = self.centers().iter().map(|&x| rho(x)).collect();
        let eps = self.kinetic.eps;
        let g_species = || -> [Vec<f64>; 2] {
            match init {
                KineticInit::Equilibrium => [vec![0.0; self.cells], vec![0.0; self.cells]],
                KineticInit::Beam => {
                    let at: Vec<f64> = (0..self.cells).map(|j| rho((j as f64 + 1.0) * dx)).collect();
                    // (f - M ρ)/ε with f(+r) = ρ, f(-r) = 0
                    [at.iter().map(|p| -0.5 * p / eps).collect(), at.iter().map(|p| 0.5 * p / eps).collect()]
                }
            }
        };
        KineticState {
            n: [n.clone(), n],
            g: [g_species(), g_species()],
            w: [vec![0.0; self.cells], vec![0.0; self.cells]],
            t: 0.0,
        }
    }
}

/// Periodic `-w'' + α w = β n` operators, factored once.
struct Chemicals {
    lu: [Option<DenseLu>; 2],
}

impl Chemicals {
    fn new(setup: &Setup1d) -> Result<Self, KineticError> {
        let n = setup.cells;
        let h2 = setup.dx().powi(2);
        let mut lu = [None, None];
        for (s, slot) in lu.iter_mut().enumerate() {
            let (alpha, beta) = setup.model.chemical(s);
            if beta == 0.0 || setup.model.chemo(s).coefficient == 0.0 {
                continue;
            }
            let mut a = vec![vec![0.0; n]; n];
            for j in 0..n {
                a[j][j] = 2.0 / h2 + alpha;
                a[j][(j + 1) % n] -= 1.0 / h2;
                a[j][(j + n - 1) % n] -= 1.0 / h2;
            }
            *slot = Some(DenseLu::factor(&a).map_err(|e| KineticError::Chemical(e.to_string()))?);
        }
        Ok(Self { lu })
    }

    fn solve(&self, setup: &Setup1d, n: &[Vec<f64>; 2]) -> Result<[Vec<f64>; 2], KineticError> {
        let mut out = [vec![0.0; setup.cells], vec![0.0; setup.cells]];
        for s in 0..2 {
            if let Some(lu) = &self.lu[s] {
                let (_, beta) = setup.model.chemical(s);
                let rhs: Vec<f64> = n[1 - s].iter().map(|v| beta * v).collect();
                out[s] = lu.solve(&rhs).map_err(|e| KineticError::Chemical(e.to_string()))?;
            }
        }
        Ok(out)
    }
}

/// Kinetic micro-macro stepper.
pub struct KineticSolver {
    setup: Setup1d,
    chemicals: Chemicals,
}

impl KineticSolver {
    pub fn new(setup: Setup1d) -> Result<Self, KineticError> {
        setup.validate()?;
        let chemicals = Chemicals::new(&setup)?;
        Ok(Self { setup, chemicals })
    }

    pub fn setup(&self) -> &Setup1d {
        &self.setup
    }

    /// One step of size `dt`.
    pub fn step(&self, state: &KineticState, dt: f64) -> Result<KineticState, KineticError> {
        let limit = self.setup.max_dt();
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(KineticError::Cfl { dt, limit });
        }
        let st = &self.setup;
        let len = st.cells;
        let dx = st.dx();
        let kp = st.kinetic;
        let eps = kp.eps;
        let vs = kp.velocities();
        let m = 0.5;
        let w = self.chemicals.solve(st, &state.n)?;

        let mut next = KineticState { n: state.n.clone(), g: state.g.clone(), w: w.clone(), t: state.t + dt };
        for s in 0..2 {
            let sigma = kp.sigma(s);
            let law = st.model.chemo(s);
            let n = &state.n[s];
            let g = &state.g[s];
            let chem = (sigma / (kp.r * kp.r * 2.0), law.coefficient != 0.0);
            // transport of g, upwind on the interface grid
            let transport: [Vec<f64>; 2] = [0, 1].map(|a| {
                let v = vs[a];
                (0..len)
                    .map(|j| {
                        if v > 0.0 {
                            v * (g[a][j] - g[a][(j + len - 1) % len]) / dx
                        } else {
                            v * (g[a][(j + 1) % len] - g[a][j]) / dx
                        }
                    })
                    .collect()
            });
            let relax = 1.0 + dt * sigma / (eps * eps);
            let mut g_new = [vec![0.0; len], vec![0.0; len]];
            for j in 0..len {
                let jp = (j + 1) % len;
                let nx = (n[jp] - n[j]) / dx;
                let mean_t = transport[0][j] + transport[1][j];
                let drift = if chem.1 { law.eval(face_value(n[j], n[jp])) * (w[s][jp] - w[s][j]) / dx } else { 0.0 };
                for a in 0..2 {
                    let v = vs[a];
                    let g1 = chem.0 * v * drift;
                    let src = -v * m * nx / (eps * eps) - (transport[a][j] - m * mean_t) / eps + g1 / (eps * eps);
                    g_new[a][j] = (g[a][j] + dt * src) / relax;
                }
                // keep ⟨g⟩ = 0 exactly
                let mean = m * (g_new[0][j] + g_new[1][j]);
                g_new[0][j] -= mean;
                g_new[1][j] -= mean;
            }
            let n_new: Vec<f64> = (0..len)
                .map(|j| {
                    let jm = (j + len - 1) % len;
                    let flux: f64 = (0..2).map(|a| vs[a] * (g_new[a][j] - g_new[a][jm])).sum::<f64>() / dx;
                    let (f1, f2) = model::reaction(state.n[0][j], state.n[1][j], &st.model);
                    n[j] - dt * flux + dt * if s == 0 { f1 } else { f2 }
                })
                .collect();
            next.n[s] = n_new;
            next.g[s] = g_new;
        }
        Ok(next)
    }

    /// Integrate to `t_end` with steps of at most `dt`.
    pub fn run(&self, mut state: KineticState, dt: f64, t_end: f64) -> Result<KineticState, KineticError> {
        while state.t < t_end - 1e-12 * t_end.max(1.0) {
            let h = dt.min(t_end - state.t);
            state = self.step(&state, h)?;
        }
        Ok(state)
    }
}

/// Zeroth moment of the chemotactic source at one interface, `Σ_v G¹(v)`.
pub fn g1_moment(kp: &KineticParams, chi: f64, wx: f64) -> f64 {
    let c = kp.sigma1 / (kp.r * kp.r * 2.0);
    kp.velocities().iter().map(|v| c * v * chi * wx).sum()
}

/// Periodic 1D implicit finite-volume solver of the limit system with
/// `D = r²/σ`: chemicals from lagged densities, then Newton on the densities.
pub struct MacroReference1d {
    setup: Setup1d,
    chemicals: Chemicals,
    newton: NewtonConfig,
    krylov: KrylovConfig,
}

struct Reference1dSystem<'a> {
    setup: &'a Setup1d,
    prev: &'a [Vec<f64>; 2],
    w: &'a [Vec<f64>; 2],
    dt: f64,
}

impl Reference1dSystem<'_> {
    fn row(&self, s: usize, j: usize, n: [&[f64]; 2]) -> (f64, Vec<(usize, f64)>) {
        let st = self.setup;
        let len = st.cells;
        let dx = st.dx();
        let t = 1.0 / dx;
        let d = st.diffusion(s);
        let law = st.model.chemo(s);
        let ns = n[s];
        let w = &self.w[s];
        let mut r = dx * (ns[j] - self.prev[s][j]) / self.dt;
        let mut diag = dx / self.dt;
        let mut entries = Vec::with_capacity(4);
        for l in [(j + len - 1) % len, (j + 1) % len] {
            r += d * t * (ns[j] - ns[l]) + t * law.eval(face_value(ns[j], ns[l])) * (w[l] - w[j]);
            diag += d * t;
            let (dk, dl) = crate::macro_solver::face_value_derivative(ns[j], ns[l]);
            let slope = t * law.derivative(face_value(ns[j], ns[l])) * (w[l] - w[j]);
            diag += slope * dk;
            entries.push((s * len + l, -d * t + slope * dl));
        }
        let (f1, f2) = model::reaction(n[0][j], n[1][j], &st.model);
        r -= dx * if s == 0 { f1 } else { f2 };
        let jac = model::reaction_jacobian(n[0][j], n[1][j], &st.model);
        diag -= dx * jac[s][s];
        entries.push(((1 - s) * len + j, -dx * jac[s][1 - s]));
        entries.push((s * len + j, diag));
        (r, entries)
    }
}

impl NonlinearSystem for Reference1dSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.setup.cells
    }

    fn residual(&self, x: &[f64], out: &mut [f64]) {
        let len = self.setup.cells;
        let n = [&x[..len], &x[len..]];
        for (row, r) in out.iter_mut().enumerate() {
            *r = self.row(row / len, row % len, n).0;
        }
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let len = self.setup.cells;
        let n = [&x[..len], &x[len..]];
        let mut b = TripletBuilder::new(2 * len, 2 * len);
        for row in 0..2 * len {
            for (c, v) in self.row(row / len, row % len, n).1 {
                b.add(row, c, v);
            }
        }
        b.build()
    }
}

impl MacroReference1d {
    pub fn new(setup: Setup1d) -> Result<Self, KineticError> {
        setup.validate()?;
        let chemicals = Chemicals::new(&setup)?;
        let krylov = KrylovConfig {
            rtol: 1e-12,
            preconditioner: linalg::PreconditionerKind::Ilu0,
            ..KrylovConfig::default()
        };
        Ok(Self { setup, chemicals, newton: NewtonConfig { abs_tol: 1e-13, ..NewtonConfig::default() }, krylov })
    }

    pub fn step(&self, n: &[Vec<f64>; 2], t: f64, dt: f64) -> Result<[Vec<f64>; 2], KineticError> {
        let w = self.chemicals.solve(&self.setup, n)?;
        let sys = Reference1dSystem { setup: &self.setup, prev: n, w: &w, dt };
        let x0: Vec<f64> = n[0].iter().chain(&n[1]).copied().collect();
        let out = newton(&sys, &x0, &self.newton, &self.krylov)
            .map_err(|e| KineticError::Reference { t, detail: e.to_string() })?;
        if !out.stats.converged {
            return Err(KineticError::Reference { t, detail: format!("residual {:.3e}", out.stats.final_residual()) });
        }
        let mut x = out.x;
        let second = x.split_off(self.setup.cells);
        Ok([x, second])
    }

    pub fn run(&self, mut n: [Vec<f64>; 2], dt: f64, t_end: f64) -> Result<[Vec<f64>; 2], KineticError> {
        let mut t = 0.0;
        while t < t_end - 1e-12 * t_end.max(1.0) {
            let h = dt.min(t_end - t);
            n = self.step(&n, t, h)?;
            t += h;
        }
        Ok(n)
    }
}

/// Settings of an ε-convergence study. `setup.kinetic.eps` is overridden
/// by each entry of the ε list.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub setup: Setup1d,
    pub init: KineticInit,
    pub t_end: f64,
    /// Kinetic step; must satisfy the bound for the largest ε in the list.
    pub dt: f64,
    /// Step of the macro reference.
    pub macro_dt: f64,
    /// Relative amplitude of the sinusoidal density profile.
    pub amplitude: f64,
}

impl StudyConfig {
    /// Density profile `1 + a sin(2πx/L)`.
    pub fn profile(&self) -> impl Fn(f64) -> f64 {
        let (a, l) = (self.amplitude, self.setup.length);
        move |x| 1.0 + a * (2.0 * std::f64::consts::PI * x / l).sin()
    }

    /// Pure diffusion limit on 200 cells.
    pub fn diffusion_default() -> Self {
        let mut model = crate::presets::example1_params();
        for c in [
            &mut model.a1,
            &mut model.a2,
            &mut model.b1,
            &mut model.b2,
            &mut model.c1,
            &mut model.c2,
            &mut model.kappa1,
            &mut model.kappa2,
        ] {
            *c = 0.0;
        }
        Self {
            setup: Setup1d {
                cells: 200,
                length: 4.0,
                kinetic: KineticParams { sigma1: 2.0, sigma2: 4.0, r: 1.0, eps: 0.1 },
                model,
            },
            init: KineticInit::Beam,
            t_end: 0.5,
            dt: 1e-4,
            macro_dt: 1e-4,
            amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyRow {
    pub eps: f64,
    /// Σ over species of ‖n_kinetic - n_macro‖_{L¹}.
    pub error: f64,
    /// E(previous ε)/E(ε); absent on the first row.
    pub ratio: Option<f64>,
}

/// L¹ distance of both densities.
pub fn l1_error(a: &[Vec<f64>; 2], b: &[Vec<f64>; 2], dx: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() * dx).sum()
}

/// Kinetic error against the macro reference for each ε. Independent runs
/// execute in parallel; each is sequential, so results do not depend on the
/// thread count.
pub fn convergence_study(eps_list: &[f64], base: &StudyConfig) -> Result<Vec<StudyRow>, KineticError> {
    if eps_list.is_empty() || eps_list.iter().any(|&e| !(e > 0.0)) || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(KineticError::Invalid(format!("ε list must be positive and decreasing, got {eps_list:?}")));
    }
    let reference = MacroReference1d::new(base.setup.clone())?;
    let init = base.setup.initial_state(base.profile(), KineticInit::Equilibrium);
    let macro_n = reference.run(init.n, base.macro_dt, base.t_end)?;
    let dx = base.setup.dx();
    let errors: Vec<Result<f64, KineticError>> = eps_list
        .par_iter()
        .map(|&eps| {
            let mut setup = base.setup.clone();
            setup.kinetic.eps = eps;
            let solver = KineticSolver::new(setup)?;
            let st = solver.setup().initial_state(base.profile(), base.init);
            let out = solver.run(st, base.dt, base.t_end)?;
            Ok(l1_error(&out.n, &macro_n, dx))
        })
        .collect();
    let mut rows: Vec<StudyRow> = Vec::with_capacity(eps_list.len());
    for (k, (&eps, e)) in eps_list.iter().zip(errors).enumerate() {
        let error = e?;
        let ratio = if k > 0 { Some(rows[k - 1].error / error) } else { None };
        rows.push(StudyRow { eps, error, ratio });
    }
    Ok(rows)
}

/// CSV table with header `eps,error,ratio`; the first ratio is empty.
pub fn error_table_csv(rows: &[StudyRow]) -> String {
    let mut s = String::from("eps,error,ratio\n");
    for r in rows {
        let ratio = r.ratio.map(|x| format!("{x:.17e}")).unwrap_or_default();
        s.push_str(&format!("{:.17e},{:.17e},{}\n", r.eps, r.error, ratio));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(eps: f64) -> Setup1d {
        let mut s = StudyConfig::diffusion_default().setup;
        s.kinetic.eps = eps;
        s
    }

    #[test]
    fn equilibrium_moments() {
        let kp = KineticParams { sigma1: 1.0, sigma2: 1.0, r: 3.0, eps: 1.0 };
        let v = kp.velocities();
        let m = equilibrium_weight(&v);
        assert_eq!(m, vec![0.5, 0.5]);
        assert_eq!(m.iter().sum::<f64>(), 1.0);
        assert_eq!(v.iter().zip(&m).map(|(v, m)| v * m).sum::<f64>(), 0.0);
    }

    #[test]
    fn diffusion_coefficient() {
        assert_eq!(limit_diffusion_coefficient(1.0, 1.0, 1), 1.0);
        assert_eq!(limit_diffusion_coefficient(2.0, 4.0, 1), 1.0);
        for (r, sigma) in [(1.0, 1.0), (2.0, 4.0), (0.7, 3.0)] {
            let by_moment: f64 = [-r, r].iter().map(|&v| -v * theta(v, 0.5, sigma)).sum();
            assert!((by_moment - limit_diffusion_coefficient(r, sigma, 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn global_equilibrium_is_steady() {
        let s = KineticSolver::new(setup(0.3)).unwrap();
        let st = s.setup().initial_state(|_| 0.8, KineticInit::Equilibrium);
        let next = s.step(&st, 1e-4).unwrap();
        assert_eq!(next.n, st.n);
        assert!(next.g.iter().flatten().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn relaxation_is_monotone() {
        let mut su = setup(1.0);
        su.kinetic.sigma1 = 50.0;
        su.kinetic.sigma2 = 50.0;
        let s = KineticSolver::new(su).unwrap();
        let mut st = s.setup().initial_state(|_| 1.0, KineticInit::Equilibrium);
        for gs in st.g.iter_mut() {
            gs[0].iter_mut().for_each(|g| *g = -0.3);
            gs[1].iter_mut().for_each(|g| *g = 0.3);
        }
        let norm = |st: &KineticState| st.g[0][1].iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut last = norm(&st);
        let dt = s.setup().max_dt();
        for _ in 0..20 {
            st = s.step(&st, dt).unwrap();
            let now = norm(&st);
            assert!(now < last);
            // uniform data: exact decay factor of the implicit relaxation
            assert!((now - last / (1.0 + dt * 50.0)).abs() < 1e-12 * last);
            last = now;
        }
    }

    #[test]
    fn mass_conservation_and_zero_mean_fluctuation() {
        let cfg = StudyConfig::diffusion_default();
        let s = KineticSolver::new(setup(0.2)).unwrap();
        let mut st = s.setup().initial_state(cfg.profile(), KineticInit::Beam);
        let dx = s.setup().dx();
        let m0: Vec<f64> = st.n.iter().map(|n| n.iter().sum::<f64>() * dx).collect();
        for _ in 0..200 {
            st = s.step(&st, 1e-4).unwrap();
            assert!(st.moment_defect() <= 1e-12);
        }
        for (n, m) in st.n.iter().zip(m0) {
            assert!((n.iter().sum::<f64>() * dx - m).abs() <= 1e-12 * m);
        }
    }

    #[test]
    fn chemotactic_source_has_zero_moment() {
        let kp = KineticParams { sigma1: 2.0, sigma2: 1.0, r: 1.5, eps: 0.1 };
        for (chi, wx) in [(1.0, 2.0), (-0.8, 5.0), (3.0, -0.1)] {
            assert!(g1_moment(&kp, chi, wx).abs() < 1e-15);
        }
    }

    #[test]
    fn cfl_violation_rejected() {
        let s = KineticSolver::new(setup(0.1)).unwrap();
        let st = s.setup().initial_state(|_| 1.0, KineticInit::Equilibrium);
        let limit = s.setup().max_dt();
        assert!(matches!(s.step(&st, 2.0 * limit), Err(KineticError::Cfl { .. })));
    }

    #[test]
    fn reference_conserves_mass_and_matches_heat_kernel() {
        let cfg = StudyConfig::diffusion_default();
        let r = MacroReference1d::new(cfg.setup.clone()).unwrap();
        let init = cfg.setup.initial_state(cfg.profile(), KineticInit::Equilibrium).n;
        let out = r.run(init.clone(), 1e-4, 0.1).unwrap();
        let dx = cfg.setup.dx();
        let k = 2.0 * std::f64::consts::PI / cfg.setup.length;
        for s in 0..2 {
            let d = cfg.setup.diffusion(s);
            let m0: f64 = init[s].iter().sum::<f64>() * dx;
            assert!((out[s].iter().sum::<f64>() * dx - m0).abs() < 1e-12);
            let decay = (-d * k * k * 0.1).exp();
            for (x, v) in cfg.setup.centers().iter().zip(&out[s]) {
                let exact = 1.0 + 0.5 * decay * (k * x).sin();
                assert!((v - exact).abs() < 1e-3, "{v} vs {exact}");
            }
        }
    }

    #[test]
    fn chemotaxis_variant_runs() {
        let mut su = setup(0.05);
        su.model.kappa1 = 0.5;
        su.model.kappa2 = -0.2;
        su.model.beta1 = 1.0;
        su.model.beta2 = 1.0;
        let s = KineticSolver::new(su.clone()).unwrap();
        let cfg = StudyConfig::diffusion_default();
        let st = s.setup().initial_state(cfg.profile(), KineticInit::Equilibrium);
        let out = s.run(st, 1e-4, 0.02).unwrap();
        let reference = MacroReference1d::new(su.clone()).unwrap();
        let init = su.initial_state(cfg.profile(), KineticInit::Equilibrium).n;
        let m = reference.run(init, 1e-4, 0.02).unwrap();
        assert!(l1_error(&out.n, &m, su.dx()) < 0.05);
        assert!(out.moment_defect() <= 1e-12);
    }

    #[test]
    fn csv_table() {
        let rows = [StudyRow { eps: 0.4, error: 0.1, ratio: None }, StudyRow { eps: 0.2, error: 0.05, ratio: Some(2.0) }];
        let csv = error_table_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "eps,error,ratio");
        assert!(lines[1].ends_with(','));
        let cols: Vec<f64> = lines[2].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols, vec![0.2, 0.05, 2.0]);
    }
}
