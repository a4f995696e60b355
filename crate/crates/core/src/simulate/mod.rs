//! Fixed-step simulation: RK4 with inputs held over each step, benchmark
//! environments, rollouts and energy-gain estimates.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{mismatch, Error, Result};
use crate::iqc::Filter;
use crate::linalg::{Mat, Vector};
use crate::models::{eval_controller, FixedPointCfg, RinnController, UncertainLtiSystem};

mod envs;

pub use envs::{flexrod_env, flexrod_flexible_filter, flexrod_flexible_model, flexrod_rigid_filter, pendulum_env, FlexrodParams, PendulumParams};

/// One classical RK4 step of `ẋ = f(x, u)` with `u` held constant.
pub fn rk4_zoh_step(f: impl Fn(&Vector, &Vector) -> Vector, x: &Vector, u: &Vector, dt: f64) -> Result<Vector> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("time step must be positive".into()));
    }
    let k1 = f(x, u);
    let k2 = f(&(x + &k1 * (0.5 * dt)), u);
    let k3 = f(&(x + &k2 * (0.5 * dt)), u);
    let k4 = f(&(x + &k3 * dt), u);
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFiniteState { step: 0 })
    }
}

type Dyn3 = Box<dyn Fn(&Vector, &Vector, &Vector) -> Vector + Send + Sync>;
type Map1 = Box<dyn Fn(&Vector) -> Vector + Send + Sync>;
type Map2 = Box<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;

/// A simulated plant together with its reward and episode rules.
pub struct Environment {
    pub name: &'static str,
    pub n_x: usize,
    pub n_u: usize,
    pub n_d: usize,
    /// `ẋ = f(x, u, d)`.
    pub dynamics: Dyn3,
    /// `y = h(x)`.
    pub measure: Map1,
    /// Performance output `e = g(x, d)`.
    pub performance: Map2,
    pub reward: Box<dyn Fn(&Vector, &Vector) -> f64 + Send + Sync>,
    /// Uniform sampling box for the initial state.
    pub init_ranges: Vec<(f64, f64)>,
    pub terminate: Box<dyn Fn(&Vector) -> bool + Send + Sync>,
    /// Saturation applied to every input channel.
    pub u_bounds: (f64, f64),
    pub dt: f64,
    pub steps: usize,
}

impl core::fmt::Debug for Environment {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Environment")
            .field("name", &self.name)
            .field("n_x", &self.n_x)
            .field("dt", &self.dt)
            .field("steps", &self.steps)
            .finish_non_exhaustive()
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        if !(self.u_bounds.0 < self.u_bounds.1) {
            return Err(Error::InvalidArgument("saturation lower bound must be below the upper bound".into()));
        }
        if self.init_ranges.len() != self.n_x {
            return Err(mismatch("one initial range per state"));
        }
        Ok(())
    }

    pub fn sample_initial_state(&self, rng: &mut impl Rng) -> Vector {
        Vector::from_iterator(
            self.n_x,
            self.init_ranges.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }),
        )
    }

    pub fn saturate(&self, u: &Vector) -> Vector {
        u.map(|v| v.clamp(self.u_bounds.0, self.u_bounds.1))
    }

    /// Environment driven by a linear system `ẋ = Ax + B_u u + B_d d`,
    /// `y = C_y x`, `e = C_e x + D_ed d`, with no saturation, termination or
    /// reward.
    pub fn linear(a: Mat, b_u: Mat, b_d: Mat, c_y: Mat, c_e: Mat, d_ed: Mat, dt: f64, steps: usize) -> Self {
        let n = a.nrows();
        let (n_u, n_d) = (b_u.ncols(), b_d.ncols());
        Environment {
            name: "linear",
            n_x: n,
            n_u,
            n_d,
            dynamics: Box::new(move |x, u, d| &a * x + &b_u * u + &b_d * d),
            measure: Box::new(move |x| &c_y * x),
            performance: Box::new(move |x, d| &c_e * x + &d_ed * d),
            reward: Box::new(|_, _| 0.0),
            init_ranges: alloc::vec![(0.0, 0.0); n],
            terminate: Box::new(|_| false),
            u_bounds: (f64::NEG_INFINITY, f64::INFINITY),
            dt,
            steps,
        }
    }
}

/// Sampled closed-loop run. `x`, `x_k`, `y`, `d`, `e` hold one sample per
/// grid point including the final time; `u` and `reward` hold one entry per
/// completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub t: Vec<f64>,
    pub x: Vec<Vector>,
    pub x_k: Vec<Vector>,
    pub u: Vec<Vector>,
    pub y: Vec<Vector>,
    pub d: Vec<Vector>,
    pub e: Vec<Vector>,
    pub reward: Vec<f64>,
    pub terminated: bool,
}

impl Trajectory {
    /// Sum of per-step rewards; steps after termination count as zero.
    pub fn total_reward(&self) -> f64 {
        self.reward.iter().sum()
    }

    /// Closed-loop state `(x, x_k)` at each grid point.
    pub fn closed_loop_states(&self) -> Vec<Vector> {
        self.x
            .iter()
            .zip(&self.x_k)
            .map(|(x, xk)| Vector::from_iterator(x.len() + xk.len(), x.iter().chain(xk.iter()).copied()))
            .collect()
    }
}

/// Trapezoidal rule on a uniform grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

/// Runs `env` in feedback with `k` from `x0`. Each step evaluates the
/// controller at the current measurement, saturates `u`, then advances the
/// controller with `y` held and the plant with `(u, d)` held.
pub fn rollout_from(
    env: &Environment,
    k: &RinnController,
    x0: &Vector,
    disturbance: Option<&[Vector]>,
    fp: &FixedPointCfg,
) -> Result<Trajectory> {
    env.validate()?;
    if x0.len() != env.n_x {
        return Err(mismatch("initial state size"));
    }
    let zero_d = Vector::zeros(env.n_d);
    let d_at = |i: usize| -> Vector {
        match disturbance {
            Some(s) if i < s.len() => s[i].clone(),
            _ => zero_d.clone(),
        }
    };
    let cap = env.steps + 1;
    let mut tr = Trajectory {
        dt: env.dt,
        t: Vec::with_capacity(cap),
        x: Vec::with_capacity(cap),
        x_k: Vec::with_capacity(cap),
        u: Vec::with_capacity(env.steps),
        y: Vec::with_capacity(cap),
        d: Vec::with_capacity(cap),
        e: Vec::with_capacity(cap),
        reward: Vec::with_capacity(env.steps),
        terminated: false,
    };
    let mut x = x0.clone();
    let mut xk = Vector::zeros(k.a_k.nrows());
    for i in 0..=env.steps {
        let y = (env.measure)(&x);
        let d = d_at(i);
        tr.t.push(i as f64 * env.dt);
        tr.e.push((env.performance)(&x, &d));
        tr.x.push(x.clone());
        tr.x_k.push(xk.clone());
        tr.y.push(y.clone());
        tr.d.push(d.clone());
        if i == env.steps {
            break;
        }
        if (env.terminate)(&x) {
            tr.terminated = true;
            break;
        }
        let out = eval_controller(k, &xk, &y, fp)?;
        let u = env.saturate(&out.u);
        tr.reward.push((env.reward)(&x, &u));
        if k.a_k.nrows() > 0 {
            xk = rk4_zoh_step(
                |s, yh| eval_controller(k, s, yh, fp).map(|o| o.xdot_k).unwrap_or_else(|_| s.map(|_| f64::NAN)),
                &xk,
                &y,
                env.dt,
            )
            .map_err(|_| Error::NonFiniteState { step: i })?;
        }
        let ud = Vector::from_iterator(u.len() + d.len(), u.iter().chain(d.iter()).copied());
        let nu = u.len();
        x = rk4_zoh_step(
            |s, h| (env.dynamics)(s, &h.rows(0, nu).into_owned(), &h.rows(nu, h.len() - nu).into_owned()),
            &x,
            &ud,
            env.dt,
        )
        .map_err(|_| Error::NonFiniteState { step: i })?;
        tr.u.push(u);
    }
    Ok(tr)
}

/// Rollout from an initial state drawn with `seed`, no disturbance.
pub fn rollout(env: &Environment, k: &RinnController, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = env.sample_initial_state(&mut rng);
    rollout_from(env, k, &x0, None, &FixedPointCfg::default())
}

/// `∫‖e‖² / ∫‖d‖²` over a trajectory.
pub fn energy_ratio(tr: &Trajectory) -> Result<f64> {
    let ee: Vec<f64> = tr.e.iter().map(|v| v.norm_squared()).collect();
    let dd: Vec<f64> = tr.d.iter().map(|v| v.norm_squared()).collect();
    let den = trapezoid(&dd, tr.dt);
    if !(den > 0.0) {
        return Err(Error::ZeroInputEnergy);
    }
    Ok(trapezoid(&ee, tr.dt) / den)
}

/// Largest `sqrt(∫‖e‖²/∫‖d‖²)` over the given disturbances from zero
/// initial state.
pub fn empirical_l2_gain(env: &Environment, k: &RinnController, d_signals: &[Vec<Vector>]) -> Result<f64> {
    let x0 = Vector::zeros(env.n_x);
    let mut worst = 0.0_f64;
    for d in d_signals {
        let tr = rollout_from(env, k, &x0, Some(d), &FixedPointCfg::default())?;
        worst = worst.max(energy_ratio(&tr)?);
    }
    Ok(libm::sqrt(worst))
}

/// True iff `|G_f(jω) − G_r(jω)| ≤ gain/ω` on every grid point (SISO).
pub fn bode_bound_check(rigid: &Filter, flexible: &Filter, gain: f64, omegas: &[f64]) -> Result<bool> {
    if omegas.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument("frequencies must be positive".into()));
    }
    for &w in omegas {
        let (rr, ri) = rigid.freq_response(w)?;
        let (fr, fi) = flexible.freq_response(w)?;
        let re = fr[(0, 0)] - rr[(0, 0)];
        let im = fi[(0, 0)] - ri[(0, 0)];
        if libm::hypot(re, im) > gain / w {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `n` logarithmically spaced points from `lo` to `hi`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (libm::log10(lo), libm::log10(hi));
    (0..n)
        .map(|i| {
            let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            libm::pow(10.0, a + s * (b - a))
        })
        .collect()
}

/// Simulates an uncertain LTI system with the loop `w = φ(v)` closed by a
/// static map, from `x0` with sampled disturbance. The loop equation is
/// solved by `solve_w(x, d)`.
pub fn simulate_system(
    sys: &UncertainLtiSystem,
    solve_w: impl Fn(&Vector, &Vector) -> Vector,
    x0: &Vector,
    d: &[Vector],
    dt: f64,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let mut x = x0.clone();
    let mut xs = Vec::with_capacity(d.len() + 1);
    let mut es = Vec::with_capacity(d.len() + 1);
    for (i, di) in d.iter().enumerate() {
        let w = solve_w(&x, di);
        xs.push(x.clone());
        es.push(sys.e_output(&x, &w, di));
        x = rk4_zoh_step(
            |s, dh| {
                let w = solve_w(s, dh);
                sys.state_derivative(s, &w, dh)
            },
            &x,
            di,
            dt,
        )
        .map_err(|_| Error::NonFiniteState { step: i })?;
    }
    xs.push(x);
    Ok((xs, es))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat;
    use crate::models::{Activation, ControllerDims};

    #[test]
    fn rk4_constant_and_exp() {
        let x = Vector::from_element(2, 3.0);
        let u = Vector::zeros(0);
        let s = rk4_zoh_step(|x, _| x * 0.0, &x, &u, 0.1).unwrap();
        assert_eq!(s, x);
        let s = rk4_zoh_step(|x, _| -x, &Vector::from_element(1, 1.0), &u, 0.01).unwrap();
        assert!((s[0] - 0.990_049_833_75).abs() < 1e-11);
        assert!(rk4_zoh_step(|x, _| x * f64::NAN, &x, &u, 0.1).is_err());
    }

    #[test]
    fn rk4_fourth_order() {
        let a = mat(2, 2, &[0.0, 1.0, -4.0, -0.3]);
        let run = |dt: f64| {
            let mut x = Vector::from_column_slice(&[1.0, 0.0]);
            let n = libm::round(1.0 / dt) as usize;
            for _ in 0..n {
                x = rk4_zoh_step(|x, _| &a * x, &x, &Vector::zeros(0), dt).unwrap();
            }
            x
        };
        let exact = run(1e-4);
        let e1 = (run(0.02) - &exact).norm();
        let e2 = (run(0.01) - &exact).norm();
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn trapezoid_linear() {
        let v: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        assert!((trapezoid(&v, 0.1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn passthrough_gain_is_one() {
        let env = Environment::linear(
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
            mat(1, 1, &[1.0]),
            0.01,
            100,
        );
        let k = RinnController::zeros(ControllerDims { n_k: 0, n_phi: 0, n_y: 1, n_u: 1 }, Activation::Tanh);
        let d: Vec<Vector> = (0..=100).map(|i| Vector::from_element(1, libm::sin(i as f64 * 0.2))).collect();
        let g = empirical_l2_gain(&env, &k, &[d]).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
        let zero = alloc::vec![Vector::zeros(1); 101];
        assert_eq!(empirical_l2_gain(&env, &k, &[zero]), Err(Error::ZeroInputEnergy));
    }

    #[test]
    fn first_order_gain_below_one() {
        let env = Environment::linear(
            mat(1, 1, &[-1.0]),
            Mat::zeros(1, 1),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            mat(1, 1, &[1.0]),
            Mat::zeros(1, 1),
            0.01,
            4000,
        );
        let k = RinnController::zeros(ControllerDims { n_k: 0, n_phi: 0, n_y: 1, n_u: 1 }, Activation::Tanh);
        let d: Vec<Vector> = (0..=4000).map(|i| Vector::from_element(1, libm::sin(i as f64 * 0.01 * 0.05))).collect();
        let g = empirical_l2_gain(&env, &k, &[d]).unwrap();
        assert!(g < 1.0 && g > 0.9, "gain {g}");
    }

    #[test]
    fn logspace_endpoints() {
        let w = logspace(1e-2, 1e2, 100);
        assert_eq!(w.len(), 100);
        assert!((w[0] - 1e-2).abs() < 1e-15 && (w[99] - 1e2).abs() < 1e-10);
    }
}
