//! Named experiment setups: Examples 1-3 on the unit square and the two
//! channel tests with obstacles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::macro_solver::{MacroState, StepConfig};
use crate::mesh::{GridSpec, Mesh, Obstacle};
use crate::model::{self, ChemoKind, ModelParams};
use crate::rng;

pub const NAMES: [&str; 5] = ["example1", "example2", "example3", "test1", "test2"];

#[derive(Debug, Error, PartialEq)]
pub enum PresetError {
    #[error("unknown preset `{0}` (known: example1, example2, example3, test1, test2)")]
    Unknown(String),
    #[error("initial data: {0}")]
    Initial(String),
}

/// Gaussian pocket `amplitude * exp(-|x - center|² / radius²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.center[0]).powi(2) + (y - self.center[1]).powi(2);
        self.amplitude * (-r2 / (self.radius * self.radius)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Sums of Gaussian pockets, averaged over each cell.
    Pockets {
        n1: Vec<Bump>,
        n2: Vec<Bump>,
    },
    /// Homogeneous coexistence state plus `amplitude * uniform[0, 1)` noise.
    Perturbed { amplitude: f64 },
    Uniform { n1: f64, n2: f64 },
}

impl InitialData {
    /// Cell values on the fluid cells of `mesh`.
    ///
    /// Noise for cell `c` of species `s` is draw `s * n_cells + flat(c)` of the
    /// seeded stream, so the field does not depend on the obstacle layout or
    /// on the thread count.
    pub fn build(&self, mesh: &Mesh, params: &ModelParams, seed: u64) -> Result<MacroState, PresetError> {
        match self {
            InitialData::Pockets { n1, n2 } => {
                for b in n1.iter().chain(n2) {
                    if !(b.radius > 0.0) || !b.amplitude.is_finite() {
                        return Err(PresetError::Initial(format!("bad pocket {b:?}")));
                    }
                }
                let field = |bumps: &[Bump]| mesh.cell_averages(|x, y| bumps.iter().map(|b| b.eval(x, y)).sum());
                Ok(MacroState::new(field(n1), field(n2)))
            }
            InitialData::Perturbed { amplitude } => {
                let (s1, s2) = model::stationary_state(params).map_err(|e| PresetError::Initial(e.to_string()))?;
                let total = mesh.n_cells() as u64;
                let noise = |species: u64, base: f64| -> Vec<f64> {
                    mesh.fluid_cells()
                        .iter()
                        .map(|&c| base + amplitude * rng::uniform(seed, species * total + mesh.flat(c) as u64))
                        .collect()
                };
                Ok(MacroState::new(noise(0, s1), noise(1, s2)))
            }
            InitialData::Uniform { n1, n2 } => Ok(MacroState::uniform(mesh.n_fluid(), *n1, *n2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub grid: GridSpec,
    pub model: ModelParams,
    pub step: StepConfig,
    pub initial: InitialData,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub fluid: Option<crate::fluid::FluidConfig>,
}

/// Coefficients shared by the unit-square examples.
pub fn example1_params() -> ModelParams {
    ModelParams {
        a1: 10.0,
        a2: 0.1,
        b1: 2.0,
        b2: 2.0,
        c1: 0.4,
        c2: 0.01,
        d1: 1.0,
        d2: 1.0,
        kappa1: 2.0,
        kappa2: -0.8,
        chemo_kind: ChemoKind::Linear,
        alpha1: 1.0,
        alpha2: 1.0,
        beta1: 20.0,
        beta2: 100.0,
        nu: 0.0,
        k_conv: 0.0,
        grad_phi: [0.0, 0.0],
        f2_coupling_sign: 1.0,
    }
}

pub fn example2_params() -> ModelParams {
    ModelParams { kappa2: 0.0, ..example1_params() }
}

/// Pattern-formation coefficients with the competitive interaction sign.
pub fn example3_params() -> ModelParams {
    ModelParams {
        a1: 0.61,
        a2: 0.52,
        b1: 0.4575,
        b2: 0.31,
        c1: 9.5,
        c2: 8.2,
        f2_coupling_sign: -1.0,
        ..example1_params()
    }
}

/// Channel coefficients. Reaction rates are bounded over the long horizon
/// (prey capacity 1, coexistence at (0.6, 0.4)) and signal production is
/// scaled so the chemotactic drift per cell stays comparable to diffusion
/// on the 128×64 grid.
pub fn channel_params(grad_phi: [f64; 2]) -> ModelParams {
    ModelParams {
        a1: 1.0,
        b1: 1.0,
        c1: 1.0,
        a2: 0.1,
        b2: 0.5,
        c2: 1.0,
        beta1: 2.0,
        beta2: 10.0,
        nu: 0.05,
        k_conv: 1.0,
        grad_phi,
        ..example1_params()
    }
}

/// Default solids of the channel: two rectangles staggered across the flow.
pub fn channel_obstacles() -> Vec<Obstacle> {
    vec![
        Obstacle::Rect { x0: 2.5, x1: 3.5, y0: 0.8, y1: 2.0 },
        Obstacle::Rect { x0: 5.5, x1: 6.5, y0: 2.0, y1: 3.2 },
    ]
}

fn pocket(x: f64, y: f64, radius: f64) -> Bump {
    Bump { center: [x, y], radius, amplitude: 1.0 }
}

pub fn example1() -> Preset {
    Preset {
        name: "example1".into(),
        grid: GridSpec::unit_square(256),
        model: example1_params(),
        step: StepConfig::with_dt(1e-3),
        // predators on one diagonal, prey on the other
        initial: InitialData::Pockets {
            n1: vec![pocket(0.25, 0.25, 0.05), pocket(0.75, 0.75, 0.05)],
            n2: vec![pocket(0.75, 0.25, 0.05), pocket(0.25, 0.75, 0.05)],
        },
        t_end: 0.15,
        snapshot_times: vec![0.01, 0.05, 0.075, 0.15],
        fluid: None,
    }
}

pub fn example2() -> Preset {
    Preset {
        name: "example2".into(),
        grid: GridSpec::unit_square(256),
        model: example2_params(),
        step: StepConfig::with_dt(1e-3),
        initial: InitialData::Pockets { n1: vec![pocket(0.5, 0.5, 0.05)], n2: vec![pocket(0.5, 0.5, 0.05)] },
        t_end: 0.5,
        snapshot_times: vec![0.0, 0.05, 0.1, 0.5],
        fluid: None,
    }
}

pub fn example3() -> Preset {
    Preset {
        name: "example3".into(),
        grid: GridSpec::unit_square(256),
        model: example3_params(),
        step: StepConfig::with_dt(1e-4),
        initial: InitialData::Perturbed { amplitude: 1e-3 },
        t_end: 0.01,
        snapshot_times: vec![0.0, 0.001, 0.005, 0.01],
        fluid: None,
    }
}

fn channel(name: &str, grad_phi: [f64; 2], snapshot_times: Vec<f64>) -> Preset {
    let mut grid = GridSpec::rectangle(128, 64, 10.0, 4.0);
    grid.obstacles = channel_obstacles();
    let mut step = StepConfig::with_dt(0.05);
    step.obstacle_dirichlet = true;
    Preset {
        name: name.into(),
        grid,
        model: channel_params(grad_phi),
        step,
        initial: InitialData::Pockets {
            n1: vec![pocket(1.2, 2.0, 0.3)],
            n2: vec![pocket(1.2, 1.0, 0.3), pocket(1.2, 3.0, 0.3)],
        },
        t_end: 15.0,
        snapshot_times,
        fluid: Some(crate::fluid::FluidConfig::default()),
    }
}

pub fn test1() -> Preset {
    channel("test1", [0.0, 0.0], vec![0.0, 5.0, 7.0, 10.0, 15.0])
}

pub fn test2() -> Preset {
    channel("test2", [0.0, -1.0], vec![0.0, 3.0, 5.0, 7.0, 15.0])
}

pub fn by_name(name: &str) -> Result<Preset, PresetError> {
    match name {
        "example1" => Ok(example1()),
        "example2" => Ok(example2()),
        "example3" => Ok(example3()),
        "test1" => Ok(test1()),
        "test2" => Ok(test2()),
        _ => Err(PresetError::Unknown(name.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    #[test]
    fn all_presets_validate() {
        for name in NAMES {
            let p = by_name(name).unwrap();
            assert_eq!(p.name, name);
            p.model.validate().unwrap();
            p.step.validate().unwrap();
            build_grid(p.grid.clone()).unwrap();
            assert!(p.snapshot_times.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(*p.snapshot_times.last().unwrap(), p.t_end);
        }
        assert!(by_name("example4").is_err());
    }

    #[test]
    fn example_coefficients() {
        let p = example1_params();
        assert_eq!((p.a1, p.a2, p.b1, p.b2, p.c1, p.c2), (10.0, 0.1, 2.0, 2.0, 0.4, 0.01));
        assert_eq!((p.d1, p.d2, p.alpha1, p.alpha2, p.beta1, p.beta2), (1.0, 1.0, 1.0, 1.0, 20.0, 100.0));
        assert_eq!((p.kappa1, p.kappa2), (2.0, -0.8));
        assert_eq!(example2_params().kappa2, 0.0);
        let q = example3_params();
        assert_eq!((q.a1, q.a2, q.b1, q.b2, q.c1, q.c2), (0.61, 0.52, 0.4575, 0.31, 9.5, 8.2));
        assert_eq!(q.f2_coupling_sign, -1.0);
        assert_eq!(test2().model.grad_phi, [0.0, -1.0]);
        assert_eq!(test1().model.grad_phi, [0.0, 0.0]);
    }

    #[test]
    fn perturbed_data_is_seeded() {
        let mesh = build_grid(GridSpec::unit_square(8)).unwrap();
        let p = example3_params();
        let init = InitialData::Perturbed { amplitude: 1e-3 };
        let a = init.build(&mesh, &p, 5).unwrap();
        let b = init.build(&mesh, &p, 5).unwrap();
        let c = init.build(&mesh, &p, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.n1, c.n1);
        let (s1, _) = model::stationary_state(&p).unwrap();
        assert!(a.n1.iter().all(|&v| v >= s1 && v < s1 + 1e-3));
        let flat = InitialData::Perturbed { amplitude: 0.0 }.build(&mesh, &p, 5).unwrap();
        assert!(flat.n1.iter().all(|&v| v == s1));
    }

    #[test]
    fn pockets_are_cell_averages() {
        let mesh = build_grid(GridSpec::unit_square(64)).unwrap();
        let p = example1();
        let s = p.initial.build(&mesh, &p.model, 0).unwrap();
        // each pocket integrates to about π r²
        let mass: f64 = s.n1.iter().sum::<f64>() * mesh.cell_volume();
        let exact = 2.0 * std::f64::consts::PI * 0.05f64.powi(2);
        assert!((mass - exact).abs() < 1e-3 * exact, "{mass} vs {exact}");
        assert!(s.n1.iter().chain(&s.n2).all(|&v| v >= 0.0));
    }
}
