//! Closed-form model terms: Lotka-Volterra kinetics, chemotactic sensitivity,
//! buoyancy and the homogeneous coexistence state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` = {value} violates {rule}")]
    Invalid { name: &'static str, value: f64, rule: &'static str },
    #[error("coexistence state undefined: b2*c1 - b1*c2 = {denominator}")]
    DegenerateStationaryState { denominator: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChemoKind {
    /// χ(n) = κ n
    #[default]
    Linear,
    /// χ(n) = κ
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChemoLaw {
    pub kind: ChemoKind,
    pub coefficient: f64,
}

impl ChemoLaw {
    pub fn eval(&self, n: f64) -> f64 {
        chemo_sensitivity(n, *self)
    }

    /// dχ/dn
    pub fn derivative(&self, _n: f64) -> f64 {
        match self.kind {
            ChemoKind::Linear => self.coefficient,
            ChemoKind::Constant => 0.0,
        }
    }
}

pub fn chemo_sensitivity(n: f64, law: ChemoLaw) -> f64 {
    match law.kind {
        ChemoKind::Linear => law.coefficient * n,
        ChemoKind::Constant => law.coefficient,
    }
}

fn default_sign() -> f64 {
    1.0
}

/// Physical and biological coefficients of the macroscopic system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub d1: f64,
    pub d2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    #[serde(default)]
    pub chemo_kind: ChemoKind,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default)]
    pub k_conv: f64,
    #[serde(default)]
    pub grad_phi: [f64; 2],
    /// +1 for the predation form `+b2 n1` in F2, -1 for the competitive form.
    #[serde(default = "default_sign")]
    pub f2_coupling_sign: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let nonneg = [
            ("a1", self.a1),
            ("a2", self.a2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("nu", self.nu),
            ("k_conv", self.k_conv),
        ];
        for (name, value) in nonneg {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ModelError::Invalid { name, value, rule: "finite and >= 0" });
            }
        }
        for (name, value) in [("d1", self.d1), ("d2", self.d2)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::Invalid { name, value, rule: "finite and > 0" });
            }
        }
        for (name, value) in [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("grad_phi.x", self.grad_phi[0]),
            ("grad_phi.y", self.grad_phi[1]),
        ] {
            if !value.is_finite() {
                return Err(ModelError::Invalid { name, value, rule: "finite" });
            }
        }
        if self.f2_coupling_sign != 1.0 && self.f2_coupling_sign != -1.0 {
            return Err(ModelError::Invalid {
                name: "f2_coupling_sign",
                value: self.f2_coupling_sign,
                rule: "+1 or -1",
            });
        }
        Ok(())
    }

    pub fn chemo(&self, species: usize) -> ChemoLaw {
        let coefficient = if species == 0 { self.kappa1 } else { self.kappa2 };
        ChemoLaw { kind: self.chemo_kind, coefficient }
    }

    pub fn diffusion(&self, species: usize) -> f64 {
        if species == 0 {
            self.d1
        } else {
            self.d2
        }
    }

    /// (α, β) of the chemical produced by the *other* species and sensed by `species`.
    pub fn chemical(&self, species: usize) -> (f64, f64) {
        if species == 0 {
            (self.alpha1, self.beta1)
        } else {
            (self.alpha2, self.beta2)
        }
    }
}

/// (F1, F2) at (n1, n2).
pub fn reaction(n1: f64, n2: f64, p: &ModelParams) -> (f64, f64) {
    let f1 = n1 * (p.a1 - p.b1 * n1 - p.c1 * n2);
    let f2 = n2 * (p.a2 - p.c2 * n2 + p.f2_coupling_sign * p.b2 * n1);
    (f1, f2)
}

/// [[∂F1/∂n1, ∂F1/∂n2], [∂F2/∂n1, ∂F2/∂n2]]
pub fn reaction_jacobian(n1: f64, n2: f64, p: &ModelParams) -> [[f64; 2]; 2] {
    let s = p.f2_coupling_sign;
    [
        [p.a1 - 2.0 * p.b1 * n1 - p.c1 * n2, -p.c1 * n1],
        [s * p.b2 * n2, p.a2 - 2.0 * p.c2 * n2 + s * p.b2 * n1],
    ]
}

/// A constant `C` with n1 F1 + n2 F2 <= C (1 + n1² + n2²) on [0, n_max]².
pub fn growth_constant(p: &ModelParams, n_max: f64) -> f64 {
    let cubic = if p.f2_coupling_sign > 0.0 { p.b2 * n_max } else { 0.0 };
    p.a1.max(p.a2) + cubic
}

/// Buoyancy weight Q(n1, n2) = n1 + n2, so |Q| <= 1 + |n1| + |n2|.
pub fn buoyancy_q(n1: f64, n2: f64) -> f64 {
    n1 + n2
}

/// Spatially homogeneous coexistence state (n1*, n2*).
pub fn stationary_state(p: &ModelParams) -> Result<(f64, f64), ModelError> {
    let den = p.b2 * p.c1 - p.b1 * p.c2;
    let scale = (p.b2 * p.c1).abs().max((p.b1 * p.c2).abs());
    if den == 0.0 || den.abs() <= 1e-14 * scale || !den.is_finite() {
        return Err(ModelError::DegenerateStationaryState { denominator: den });
    }
    let n1 = (p.a2 * p.c1 - p.a1 * p.c2) / den;
    let n2 = (p.a2 * p.b1 - p.a1 * p.b2) / (-den);
    Ok((n1, n2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    fn ex1() -> ModelParams {
        presets::example1_params()
    }

    fn ex3() -> ModelParams {
        presets::example3_params()
    }

    #[test]
    fn reaction_values() {
        let p = ex1();
        assert_eq!(reaction(0.0, 3.0, &p).0, 0.0);
        assert_eq!(reaction(2.0, 0.0, &p).1, 0.0);
        // 1 * (10 - 2*1 - 0.4*1)
        let independent = 1.0 * (10.0 - 2.0 * 1.0 - 0.4 * 1.0);
        assert!((reaction(1.0, 1.0, &p).0 - independent).abs() < 1e-15);
        assert!((reaction(1.0, 1.0, &p).0 - 7.6).abs() < 1e-14);
    }

    #[test]
    fn chemo_laws() {
        let lin = |k| ChemoLaw { kind: ChemoKind::Linear, coefficient: k };
        assert_eq!(chemo_sensitivity(0.0, lin(2.0)), 0.0);
        assert_eq!(chemo_sensitivity(1.0, lin(-0.8)), -0.8);
        let c = ChemoLaw { kind: ChemoKind::Constant, coefficient: 2.0 };
        assert_eq!(chemo_sensitivity(5.0, c), 2.0);
    }

    #[test]
    fn buoyancy_values() {
        assert_eq!(buoyancy_q(0.0, 0.0), 0.0);
        assert_eq!(buoyancy_q(1.0, 2.0), 3.0);
        for i in 0..=20 {
            for j in 0..=20 {
                let (a, b) = (i as f64 * 0.5, j as f64 * 0.5);
                assert!(buoyancy_q(a, b).abs() <= 1.0 + a.abs() + b.abs());
            }
        }
    }

    #[test]
    fn example3_coexistence_state() {
        let p = ex3();
        let (n1, n2) = stationary_state(&p).unwrap();
        // closed form evaluated by hand with exact decimals:
        // n1* = (4.94 - 5.002) / (2.945 - 3.7515) = 0.062 / 0.8065
        // n2* = (0.2379 - 0.1891) / (3.7515 - 2.945) = 0.0488 / 0.8065
        assert!((n1 - 0.062 / 0.8065).abs() < 1e-14);
        assert!((n2 - 0.0488 / 0.8065).abs() < 1e-14);
        assert!((n1 - 0.076875).abs() < 1e-6);
        assert!((n2 - 0.060508).abs() < 1e-6);
        let (f1, f2) = reaction(n1, n2, &p);
        assert!(f1.abs() < 1e-12 && f2.abs() < 1e-12, "{f1} {f2}");
    }

    #[test]
    fn symmetric_params_are_degenerate() {
        let mut p = ex3();
        p.a2 = p.a1;
        p.b2 = p.b1;
        p.c2 = p.c1;
        assert!(matches!(stationary_state(&p), Err(ModelError::DegenerateStationaryState { .. })));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut p = ex1();
        p.d1 = 0.0;
        assert!(p.validate().is_err());
        let mut p = ex1();
        p.b2 = -1.0;
        assert!(p.validate().is_err());
        let mut p = ex1();
        p.f2_coupling_sign = 0.5;
        assert!(p.validate().is_err());
        assert!(ex1().validate().is_ok());
    }

    #[test]
    fn jacobian_matches_differences() {
        let p = ex1();
        let (n1, n2, h) = (0.7, 1.3, 1e-6);
        let j = reaction_jacobian(n1, n2, &p);
        let d1 = |f: &dyn Fn(f64, f64) -> (f64, f64)| {
            let (a, b) = f(n1 + h, n2);
            let (c, d) = f(n1 - h, n2);
            ((a - c) / (2.0 * h), (b - d) / (2.0 * h))
        };
        let (df1, df2) = d1(&|a, b| reaction(a, b, &p));
        assert!((df1 - j[0][0]).abs() < 1e-7 && (df2 - j[1][0]).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn reaction_vanishes_on_cone_boundary(n in 0.0f64..100.0) {
            for p in [ex1(), ex3()] {
                prop_assert_eq!(reaction(0.0, n, &p).0, 0.0);
                prop_assert_eq!(reaction(n, 0.0, &p).1, 0.0);
            }
        }

        #[test]
        fn energy_growth_bound(n1 in 0.0f64..100.0, n2 in 0.0f64..100.0) {
            for p in [ex1(), ex3()] {
                let (f1, f2) = reaction(n1, n2, &p);
                let c = growth_constant(&p, 100.0);
                prop_assert!(n1 * f1 + n2 * f2 <= c * (1.0 + n1 * n1 + n2 * n2));
            }
        }

        #[test]
        fn linear_chemo_is_continuous_at_zero(k in -5.0f64..5.0, n in 0.0f64..1e-9) {
            let law = ChemoLaw { kind: ChemoKind::Linear, coefficient: k };
            prop_assert!(chemo_sensitivity(n, law).abs() <= 5.0 * n);
        }
    }
}
