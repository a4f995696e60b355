use alloc::boxed::Box;
use alloc::vec;

use crate::iqc::Filter;
use crate::linalg::{self, mat, Mat, Vector};
use crate::models::{PlantDims, UncertainLtiPlant};

use super::Environment;

/// Inverted pendulum with friction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub friction: f64,
    pub gravity: f64,
    pub dt: f64,
    pub steps: usize,
    pub u_max: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { mass: 0.15, length: 0.5, friction: 0.05, gravity: 9.81, dt: 0.01, steps: 201, u_max: 2.0 }
    }
}

/// True pendulum dynamics and its design plant with `Δ_p = sin` on
/// `v = x₁`, which lies in the sector `[0, 1]` on `[−π, π]`.
pub fn pendulum_env(p: &PendulumParams) -> (Environment, UncertainLtiPlant) {
    let inertia = p.mass * p.length * p.length;
    let damp = p.friction / inertia;
    let g_l = p.gravity / p.length;
    let b_u = 1.0 / inertia;

    let mut plant = UncertainLtiPlant::zeros(PlantDims { n_p: 2, n_v: 1, n_w: 1, n_d: 0, n_e: 2, n_u: 1, n_y: 1 });
    plant.a_p = mat(2, 2, &[0.0, 1.0, 0.0, -damp]);
    plant.b_pw = mat(2, 1, &[0.0, g_l]);
    plant.b_pu = mat(2, 1, &[0.0, b_u]);
    plant.c_pv = mat(1, 2, &[1.0, 0.0]);
    plant.c_pe = linalg::eye(2);
    plant.c_py = mat(1, 2, &[1.0, 0.0]);

    let env = Environment {
        name: "pendulum",
        n_x: 2,
        n_u: 1,
        n_d: 0,
        dynamics: Box::new(move |x, u, _d| {
            Vector::from_column_slice(&[x[1], -damp * x[1] + g_l * libm::sin(x[0]) + b_u * u[0]])
        }),
        measure: Box::new(|x| Vector::from_element(1, x[0])),
        performance: Box::new(|x, _| x.clone()),
        reward: Box::new(|_, u| libm::exp(-u.norm_squared())),
        init_ranges: vec![(-0.6 * core::f64::consts::PI, 0.6 * core::f64::consts::PI), (-2.0, 2.0)],
        terminate: Box::new(|x| x[0].abs() > core::f64::consts::PI || x[1].abs() > 8.0),
        u_bounds: (-p.u_max, p.u_max),
        dt: p.dt,
        steps: p.steps,
    };
    (env, plant)
}

/// Flexible rod on a cart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexrodParams {
    pub m_base: f64,
    pub m_tip: f64,
    /// Extra rod mass in the cart entry of the mass matrix.
    pub m_rod: f64,
    pub length: f64,
    pub density: f64,
    pub radius: f64,
    /// Young's modulus in pascals.
    pub youngs_modulus: f64,
    pub damping: f64,
    /// Norm bound of the rigid-model uncertainty.
    pub delta_bound: f64,
    pub dt: f64,
    pub steps: usize,
    pub u_max: f64,
}

impl Default for FlexrodParams {
    fn default() -> Self {
        Self {
            m_base: 1.0,
            m_tip: 0.1,
            m_rod: 0.0,
            length: 1.0,
            density: 0.1,
            radius: 1e-2,
            youngs_modulus: 200e9,
            damping: 0.9,
            delta_bound: 0.1,
            dt: 1e-3,
            steps: 2000,
            u_max: 20.0,
        }
    }
}

impl FlexrodParams {
    pub fn total_rigid_mass(&self) -> f64 {
        self.m_base + self.m_rod + self.density * self.length
    }

    pub fn mass_matrix(&self) -> Mat {
        let rl = self.density * self.length;
        mat(2, 2, &[self.total_rigid_mass(), self.m_tip + rl / 3.0, self.m_tip + rl / 3.0, self.m_tip + rl / 5.0])
    }

    pub fn stiffness(&self) -> f64 {
        let inertia = core::f64::consts::FRAC_PI_4 * libm::pow(self.radius, 4.0);
        4.0 * self.youngs_modulus * inertia / libm::pow(self.length, 3.0)
    }
}

/// `(A, B)` of the 4-state flexible model with input `u` (`d` adds to `u`).
pub fn flexrod_flexible_model(p: &FlexrodParams) -> (Mat, Mat) {
    let minv = linalg::inverse(&p.mass_matrix()).expect("mass matrix is positive definite");
    let k = mat(2, 2, &[0.0, 0.0, 0.0, p.stiffness()]);
    let b = mat(2, 2, &[0.0, 0.0, 0.0, p.damping]);
    let a = linalg::block(
        &[2, 2],
        &[2, 2],
        &[&[None, Some(&linalg::eye(2))], &[Some(&(-&minv * k)), Some(&(-&minv * b))]],
    )
    .expect("conformal");
    let bu = linalg::vcat(1, &[&Mat::zeros(2, 1), &(&minv * mat(2, 1, &[1.0, 0.0]))]).expect("conformal");
    (a, bu)
}

/// Transfer function from `u + d` to the tip measurement of the flexible model.
pub fn flexrod_flexible_filter(p: &FlexrodParams) -> Filter {
    let (a, b) = flexrod_flexible_model(p);
    Filter { a, b, c: mat(1, 4, &[1.0, 1.0, 0.0, 0.0]), d: Mat::zeros(1, 1) }
}

/// Transfer function from `u + d` to `x_b` of the rigid model with `Δ = 0`.
pub fn flexrod_rigid_filter(p: &FlexrodParams) -> Filter {
    Filter {
        a: mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        b: mat(2, 1, &[0.0, 1.0 / p.total_rigid_mass()]),
        c: mat(1, 2, &[1.0, 0.0]),
        d: Mat::zeros(1, 1),
    }
}

/// Flexible-model environment and the rigid uncertain design plant with
/// `v = u + d`, `w = Δ(v)` entering the position derivative, `y = x_b`,
/// `e = x_r`.
pub fn flexrod_env(p: &FlexrodParams) -> (Environment, UncertainLtiPlant) {
    let bm = 1.0 / p.total_rigid_mass();
    let mut plant = UncertainLtiPlant::zeros(PlantDims { n_p: 2, n_v: 1, n_w: 1, n_d: 1, n_e: 2, n_u: 1, n_y: 1 });
    plant.a_p = mat(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    plant.b_pw = mat(2, 1, &[1.0, 0.0]);
    plant.b_pd = mat(2, 1, &[0.0, bm]);
    plant.b_pu = mat(2, 1, &[0.0, bm]);
    plant.d_pvd = mat(1, 1, &[1.0]);
    plant.d_pvu = mat(1, 1, &[1.0]);
    plant.c_pe = linalg::eye(2);
    plant.c_py = mat(1, 2, &[1.0, 0.0]);

    let (a, b) = flexrod_flexible_model(p);
    let b2 = b.clone();
    let env = Environment {
        name: "flexrod",
        n_x: 4,
        n_u: 1,
        n_d: 1,
        dynamics: Box::new(move |x, u, d| &a * x + &b2 * (u[0] + d[0])),
        measure: Box::new(|x| Vector::from_element(1, x[0] + x[1])),
        performance: Box::new(|x, _| Vector::from_column_slice(&[x[0], x[2]])),
        reward: Box::new(|x, u| libm::exp(-x.norm_squared()) + libm::exp(-u.norm_squared())),
        init_ranges: vec![(-1.0, 1.0), (-0.44, 0.44), (-0.25, 0.25), (-2.0, 2.0)],
        terminate: Box::new(|_| false),
        u_bounds: (-p.u_max, p.u_max),
        dt: p.dt,
        steps: p.steps,
    };
    (env, plant)
}
