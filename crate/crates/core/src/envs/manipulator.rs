use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use rand::Rng;

pub const MASS: f64 = 1.0;
pub const LINK: f64 = 0.5;
pub const DAMPING: f64 = 0.1;
pub const DT: f64 = 0.05;
pub const MAX_TORQUE: f64 = 1.0;
pub const ACTION_COST: f64 = 0.001;

/// Gravity-free two-link arm of uniform rods plus a target on a circle about the base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManipulatorState {
    pub q: [f64; 2],
    pub q_dot: [f64; 2],
    pub target_angle: f64,
    pub target_omega: f64,
    pub target_radius: f64,
}

fn clamp_torques(tau: &[f64; 2]) -> [f64; 2] {
    [tau[0].clamp(-MAX_TORQUE, MAX_TORQUE), tau[1].clamp(-MAX_TORQUE, MAX_TORQUE)]
}

impl ManipulatorState {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            q: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
            q_dot: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
            target_angle: rng.random_range(-PI..PI),
            target_omega: rng.random_range(-0.5..0.5),
            target_radius: rng.random_range(0.4..1.0),
        }
    }

    pub fn endpoint(&self) -> [f64; 2] {
        let (q1, q12) = (self.q[0], self.q[0] + self.q[1]);
        [LINK * (q1.cos() + q12.cos()), LINK * (q1.sin() + q12.sin())]
    }

    pub fn target(&self) -> [f64; 2] {
        [self.target_radius * self.target_angle.cos(), self.target_radius * self.target_angle.sin()]
    }

    pub fn target_velocity(&self) -> [f64; 2] {
        let v = self.target_radius * self.target_omega;
        [-v * self.target_angle.sin(), v * self.target_angle.cos()]
    }

    pub fn observe(&self) -> [f64; 10] {
        let (t, v) = (self.target(), self.target_velocity());
        [
            self.q[0].cos(),
            self.q[0].sin(),
            self.q[1].cos(),
            self.q[1].sin(),
            self.q_dot[0],
            self.q_dot[1],
            t[0],
            t[1],
            v[0],
            v[1],
        ]
    }

    pub fn mass_matrix(&self) -> Matrix2<f64> {
        let (lc, inertia) = (0.5 * LINK, MASS * LINK * LINK / 12.0);
        let c2 = self.q[1].cos();
        let m22 = inertia + MASS * lc * lc;
        let m12 = m22 + MASS * LINK * lc * c2;
        let m11 = 2.0 * inertia + MASS * lc * lc + MASS * (LINK * LINK + lc * lc + 2.0 * LINK * lc * c2);
        Matrix2::new(m11, m12, m12, m22)
    }

    pub fn kinetic_energy(&self) -> f64 {
        let v = Vector2::new(self.q_dot[0], self.q_dot[1]);
        0.5 * v.dot(&(self.mass_matrix() * v))
    }

    pub fn cost(&self, torques: &[f64; 2]) -> f64 {
        let u = clamp_torques(torques);
        let (e, t) = (self.endpoint(), self.target());
        ((e[0] - t[0]).powi(2) + (e[1] - t[1]).powi(2)).sqrt() + ACTION_COST * (u[0] * u[0] + u[1] * u[1])
    }

    /// Semi-implicit Euler step of `M q̈ + C q̇ + D q̇ = τ`; returns the pre-step cost.
    pub fn step(&mut self, torques: &[f64; 2]) -> f64 {
        let cost = self.cost(torques);
        let u = clamp_torques(torques);
        let h = MASS * LINK * 0.5 * LINK * self.q[1].sin();
        let (d1, d2) = (self.q_dot[0], self.q_dot[1]);
        let coriolis = Vector2::new(-h * d2 * (2.0 * d1 + d2), h * d1 * d1);
        let rhs = Vector2::new(u[0], u[1]) - coriolis - Vector2::new(d1, d2) * DAMPING;
        let acc = self.mass_matrix().try_inverse().expect("mass matrix is positive definite") * rhs;
        self.q_dot = [d1 + acc[0] * DT, d2 + acc[1] * DT];
        self.q = [self.q[0] + self.q_dot[0] * DT, self.q[1] + self.q_dot[1] * DT];
        self.target_angle += self.target_omega * DT;
        cost
    }
}
