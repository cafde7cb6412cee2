use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Sequence;
use crate::error::{Error, Result};

/// Coordinate plane the pendulum swings in; the third axis is constant zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Xy,
    Xz,
    Yz,
}

impl std::str::FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Plane::Xy),
            "xz" => Ok(Plane::Xz),
            "yz" => Ok(Plane::Yz),
            other => Err(Error::InvalidArgument(format!("unknown plane `{other}` (xy|xz|yz)"))),
        }
    }
}

/// Planar pendulum with a massless rod pivoting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PendulumSpec {
    pub steps: usize,
    pub dt: f64,
    pub gravity: f64,
    pub length: f64,
    pub theta0: f64,
    pub omega0: f64,
    pub plane: Plane,
    /// Standard deviation of additive Gaussian observation noise.
    pub noise_std: f64,
    /// RK4 sub-steps per emitted sample.
    pub substeps: usize,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self {
            steps: 410,
            dt: 0.05,
            gravity: 9.81,
            length: 1.0,
            theta0: FRAC_PI_2,
            omega0: 0.0,
            plane: Plane::Yz,
            noise_std: 0.0,
            substeps: 20,
        }
    }
}

impl PendulumSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return bad("length must be positive");
        }
        if self.steps < 2 {
            return bad("need at least 2 timesteps");
        }
        if self.substeps == 0 {
            return bad("substeps must be positive");
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 || !self.gravity.is_finite() || !self.theta0.is_finite() || !self.omega0.is_finite() {
            return bad("gravity, angles and noise must be finite, noise non-negative");
        }
        Ok(())
    }
}

/// `0.5 L^2 w^2 - g L cos(theta)` per unit mass.
pub fn pendulum_energy(spec: &PendulumSpec, theta: f64, omega: f64) -> f64 {
    0.5 * spec.length * spec.length * omega * omega - spec.gravity * spec.length * theta.cos()
}

fn rk4(theta: f64, omega: f64, h: f64, k: f64) -> (f64, f64) {
    let f = |th: f64, om: f64| (om, -k * th.sin());
    let (a1, b1) = f(theta, omega);
    let (a2, b2) = f(theta + 0.5 * h * a1, omega + 0.5 * h * b1);
    let (a3, b3) = f(theta + 0.5 * h * a2, omega + 0.5 * h * b2);
    let (a4, b4) = f(theta + h * a3, omega + h * b3);
    (
        theta + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
        omega + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4),
    )
}

/// Integrates `theta'' = -(g / L) sin(theta)` with RK4; one `(theta, omega)`
/// per emitted sample.
pub(crate) fn simulate_states(spec: &PendulumSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let k = spec.gravity / spec.length;
    let h = spec.dt / spec.substeps as f64;
    let mut state = (spec.theta0, spec.omega0);
    let mut out = Vec::with_capacity(spec.steps);
    for _ in 0..spec.steps {
        out.push(state);
        for _ in 0..spec.substeps {
            state = rk4(state.0, state.1, h, k);
        }
    }
    Ok(out)
}

/// Simulated bob trajectory as a one-joint sequence. With the default `yz`
/// plane the bob sits at `(0, L sin(theta), -L cos(theta))`.
pub fn simulate_pendulum<R: Rng + ?Sized>(spec: &PendulumSpec, rng: &mut R) -> Result<Sequence> {
    let states = simulate_states(spec)?;
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");
    let mut values = DMatrix::zeros(spec.steps, 3);
    for (t, (theta, _)) in states.iter().enumerate() {
        let (u, v) = (spec.length * theta.sin(), -spec.length * theta.cos());
        let (iu, iv) = match spec.plane {
            Plane::Xy => (0, 1),
            Plane::Xz => (0, 2),
            Plane::Yz => (1, 2),
        };
        values[(t, iu)] = u;
        values[(t, iv)] = v;
        if spec.noise_std > 0.0 {
            for c in 0..3 {
                values[(t, c)] += noise.sample(rng);
            }
        }
    }
    Sequence::new("pendulum", spec.dt, values)
}
