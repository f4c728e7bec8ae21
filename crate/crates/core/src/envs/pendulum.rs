use std::f64::consts::PI;

use rand::Rng;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 8.0;

/// Angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Rod pendulum; `theta` is measured from upright.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // (−π, π]
        let theta = PI - rng.random::<f64>() * 2.0 * PI;
        Self {
            theta,
            theta_dot: rng.random_range(-1.0..1.0),
        }
    }

    pub fn observe(&self) -> [f64; 3] {
        [self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    pub fn cost(&self, torque: f64) -> f64 {
        let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
        wrap_angle(self.theta).powi(2) + 0.1 * self.theta_dot.powi(2) + 0.001 * u * u
    }

    /// Kinetic plus potential energy of a uniform rod about its pivot.
    pub fn energy(&self) -> f64 {
        0.5 * (MASS * LENGTH * LENGTH / 3.0) * self.theta_dot.powi(2) + MASS * GRAVITY * 0.5 * LENGTH * self.theta.cos()
    }

    /// Semi-implicit Euler step; returns the pre-step cost.
    pub fn step(&mut self, torque: f64) -> f64 {
        let cost = self.cost(torque);
        let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
        let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        cost
    }
}
