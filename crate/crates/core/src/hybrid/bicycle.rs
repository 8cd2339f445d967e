//! Kinematic bicycle with the two mode couplings used by the shipped
//! environments: an additive perturbation scaled by a gain, and a friction
//! envelope on longitudinal and lateral acceleration.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BicycleParams {
    pub wheelbase: f64,
    pub a_max: f64,
    pub psi_max: f64,
    pub v_max: f64,
    /// Integration step of one RK4 stage sequence.
    pub dt: f64,
    pub gravity: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            a_max: 4.0,
            psi_max: 0.4,
            v_max: 15.0,
            dt: 0.05,
            gravity: 9.81,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BicycleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

impl BicycleState {
    pub fn to_vec(self) -> [f64; 4] {
        [self.x, self.y, self.theta, self.v]
    }

    fn from_arr(a: [f64; 4]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            theta: a[2],
            v: a[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// How the active mode's latent parameter enters the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModeDynamics {
    /// Additive perturbation terms scaled by `gain`.
    Perturbed { gain: f64 },
    /// Friction coefficient bounding the acceleration envelope.
    Friction { coef: f64 },
}

/// Nominal model minus the gain-scaled perturbation:
///
/// ```text
/// θ̇ = v/L tan ψ − (0.05 e^ψ + 0.15 a tanh θ) μ
/// v̇ = a        − (0.1 a cos θ + 0.3 v sin ψ) μ
/// ```
pub fn bicycle_derivative(s: &BicycleState, a_long: f64, psi: f64, mu: f64, p: &BicycleParams) -> [f64; 4] {
    let theta_dot = s.v / p.wheelbase * psi.tan()
        - (0.05 * psi.exp() + 0.15 * a_long * s.theta.tanh()) * mu;
    let v_dot = a_long - (0.1 * a_long * s.theta.cos() + 0.3 * s.v * psi.sin()) * mu;
    [s.v * s.theta.cos(), s.v * s.theta.sin(), theta_dot, v_dot]
}

/// Nominal model inside a friction envelope: longitudinal acceleration is
/// clipped to `±coef·a_max`, and the yaw rate is scaled down whenever the
/// lateral demand `v·θ̇` exceeds `coef·g` (understeer).
pub fn friction_derivative(s: &BicycleState, a_long: f64, psi: f64, coef: f64, p: &BicycleParams) -> [f64; 4] {
    let a_lim = coef * p.a_max;
    let a = a_long.clamp(-a_lim, a_lim);
    let mut theta_dot = s.v / p.wheelbase * psi.tan();
    let lat_lim = coef * p.gravity;
    let lateral = s.v * theta_dot;
    if lateral.abs() > lat_lim {
        theta_dot *= lat_lim / lateral.abs();
    }
    [s.v * s.theta.cos(), s.v * s.theta.sin(), theta_dot, a]
}

pub fn derivative(s: &BicycleState, a_long: f64, psi: f64, mode: ModeDynamics, p: &BicycleParams) -> [f64; 4] {
    match mode {
        ModeDynamics::Perturbed { gain } => bicycle_derivative(s, a_long, psi, gain, p),
        ModeDynamics::Friction { coef } => friction_derivative(s, a_long, psi, coef, p),
    }
}

/// One classical RK4 step of length `p.dt`; speed is clamped to `[0, v_max]`
/// afterwards.
pub fn rk4_step(s: &BicycleState, a_long: f64, psi: f64, mode: ModeDynamics, p: &BicycleParams) -> BicycleState {
    let h = p.dt;
    let x0 = s.to_vec();
    let shift = |k: &[f64; 4], c: f64| {
        BicycleState::from_arr([
            x0[0] + c * k[0],
            x0[1] + c * k[1],
            x0[2] + c * k[2],
            x0[3] + c * k[3],
        ])
    };
    let k1 = derivative(s, a_long, psi, mode, p);
    let k2 = derivative(&shift(&k1, h / 2.0), a_long, psi, mode, p);
    let k3 = derivative(&shift(&k2, h / 2.0), a_long, psi, mode, p);
    let k4 = derivative(&shift(&k3, h), a_long, psi, mode, p);
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = x0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let mut next = BicycleState::from_arr(out);
    next.v = next.v.clamp(0.0, p.v_max);
    next
}

/// Map a normalized action in `[-1, 1]^2` to `(a_long, psi)`.
pub fn scale_action(action: &[f64], p: &BicycleParams) -> (f64, f64) {
    let a = action.first().copied().unwrap_or(0.0).clamp(-1.0, 1.0);
    let s = action.get(1).copied().unwrap_or(0.0).clamp(-1.0, 1.0);
    (a * p.a_max, s * p.psi_max)
}
