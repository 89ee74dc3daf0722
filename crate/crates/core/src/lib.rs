//! Implicit finite-volume solvers for a two-species predator-prey system with
//! chemotactic cross-diffusion through two chemical signals, its coupling to
//! incompressible channel flow, and a kinetic micro-macro validator of the
//! diffusion limit.

pub mod config;
pub mod fluid;
pub mod io;
pub mod kinetic;
pub mod linalg;
pub mod macro_solver;
pub mod mesh;
pub mod model;
pub mod presets;
pub mod rng;
pub mod runner;
