//! Projected policy training: a pluggable improvement step followed by a
//! dissipativity check and, when that fails, projection back into the set of
//! certified controllers.

use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::certify::{combined_matrix, lemma1_lhs, verify, Verdict, VerifyOptions};
use crate::error::{mismatch, Error, Result};
use crate::interconnect::close_loop;
use crate::iqc::IqcSpec;
use crate::linalg::{self, Mat};
use crate::models::{FixedPointCfg, StorageCertificate, Theta};
use crate::simulate::{rollout_from, Environment};
use crate::synthesize::{
    construct_theta_hat, reconstruct_theta, theta_hat_project, theta_project, SynthesisProblem, EPS_LAMBDA,
};

/// Estimates expected return by Monte Carlo rollouts. Rollout `j` under seed
/// `s` draws its initial state from a generator seeded by `(s, j)`, so equal
/// seeds give common random numbers across controllers.
pub struct RolloutOracle<'a> {
    pub env: &'a Environment,
    pub num_rollouts: usize,
    pub fp: FixedPointCfg,
}

impl RolloutOracle<'_> {
    pub fn new(env: &Environment, num_rollouts: usize) -> RolloutOracle<'_> {
        RolloutOracle { env, num_rollouts, fp: FixedPointCfg::default() }
    }

    /// Mean total reward. A rollout that fails (diverging implicit layer,
    /// non-finite state) scores zero.
    pub fn mean_reward(&self, k: &Theta, seed: u64) -> f64 {
        if self.num_rollouts == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..self.num_rollouts {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(j as u64));
            let x0 = self.env.sample_initial_state(&mut rng);
            total += rollout_from(self.env, k, &x0, None, &self.fp).map(|t| t.total_reward()).unwrap_or(0.0);
        }
        total / self.num_rollouts as f64
    }
}

/// One policy-improvement step. Implementations only propose; the trainer
/// enforces the constraints.
pub trait PolicyImprover {
    fn step(&mut self, theta: &Theta, oracle: &RolloutOracle<'_>, rng: &mut ChaCha8Rng) -> Result<Theta>;
}

/// Leaves the controller unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityImprover;

impl PolicyImprover for IdentityImprover {
    fn step(&mut self, theta: &Theta, _: &RolloutOracle<'_>, _: &mut ChaCha8Rng) -> Result<Theta> {
        Ok(theta.clone())
    }
}

/// Adds independent Gaussian noise of scale `sigma` to every parameter.
#[derive(Debug, Clone, Copy)]
pub struct PerturbImprover {
    pub sigma: f64,
}

impl PolicyImprover for PerturbImprover {
    fn step(&mut self, theta: &Theta, _: &RolloutOracle<'_>, rng: &mut ChaCha8Rng) -> Result<Theta> {
        let p: Vec<f64> = theta.to_vec().iter().map(|v| v + self.sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        theta.with_params(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsConfig {
    /// Number of perturbations per step; must be even.
    pub population: usize,
    pub sigma: f64,
    pub lr: f64,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self { population: 8, sigma: 0.05, lr: 1e-3 }
    }
}

/// Antithetic evolution-strategies update
/// `θ′ = θ + lr/(population·σ) Σ rᵢ εᵢ` with `ε_{2j+1} = −ε_{2j}`.
/// `reward` is called once per perturbed parameter vector with the index of
/// its antithetic pair.
pub fn es_step(theta: &Theta, reward: &mut dyn FnMut(&Theta, usize) -> f64, cfg: &EsConfig, rng: &mut impl Rng) -> Result<Theta> {
    if cfg.population == 0 || cfg.population % 2 != 0 {
        return Err(Error::InvalidArgument("population must be even and positive".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let base = theta.to_vec();
    let n = base.len();
    let mut grad = alloc::vec![0.0; n];
    for pair in 0..cfg.population / 2 {
        let eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let plus: Vec<f64> = base.iter().zip(&eps).map(|(b, e)| b + cfg.sigma * e).collect();
        let minus: Vec<f64> = base.iter().zip(&eps).map(|(b, e)| b - cfg.sigma * e).collect();
        let r_plus = reward(&theta.with_params(&plus)?, pair);
        let r_minus = reward(&theta.with_params(&minus)?, pair);
        for (g, e) in grad.iter_mut().zip(&eps) {
            *g += (r_plus - r_minus) * e;
        }
    }
    let scale = cfg.lr / (cfg.population as f64 * cfg.sigma);
    let next: Vec<f64> = base.iter().zip(&grad).map(|(b, g)| b + scale * g).collect();
    theta.with_params(&next)
}

/// [`es_step`] against a rollout oracle; both members of an antithetic pair
/// see the same initial states.
#[derive(Debug, Clone, Copy)]
pub struct EsImprover {
    pub cfg: EsConfig,
}

impl PolicyImprover for EsImprover {
    fn step(&mut self, theta: &Theta, oracle: &RolloutOracle<'_>, rng: &mut ChaCha8Rng) -> Result<Theta> {
        let seed = rng.next_u64();
        let mut reward = |k: &Theta, pair: usize| oracle.mean_reward(k, seed.wrapping_add(pair as u64));
        es_step(theta, &mut reward, &self.cfg, rng)
    }
}

fn verify_options(base: &VerifyOptions) -> VerifyOptions {
    VerifyOptions { fixed_lambda_p: Some(1.0), ..*base }
}

/// Searches for `(P, Λ)` certifying `θ` against the problem's plant
/// multiplier (scale fixed at one) and supply rate.
pub fn check_dissipative(prob: &SynthesisProblem, theta: &Theta, opts: &VerifyOptions) -> Result<Verdict> {
    let sys = close_loop(&prob.plant, theta)?;
    verify(&sys, &IqcSpec::Static { m: prob.m_dp.clone() }, prob.n_phi, &prob.supply, &verify_options(opts))
}

/// `λ_max` of the storage inequality for `θ` with fixed `(P, Λ)`.
pub fn certificate_residual(prob: &SynthesisProblem, theta: &Theta, p: &Mat, lambda: &[f64]) -> Result<f64> {
    let sys = close_loop(&prob.plant, theta)?;
    let m = combined_matrix(&prob.m_dp, prob.dims().n_v, 1.0, lambda)?;
    Ok(linalg::max_eigenvalue(&lemma1_lhs(&sys, &m, &prob.supply, p, 1.0)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Backoff factor of the `θ̂` projection.
    pub beta: f64,
    /// Rollouts per reward estimate.
    pub num_rollouts: usize,
    pub seed: u64,
    pub verify: VerifyOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 10, beta: 1.05, num_rollouts: 4, seed: 0, verify: VerifyOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Mean reward of the accepted controller.
    pub mean_reward: f64,
    pub was_projected: bool,
    /// `‖θ − θ′‖_F` of the projection, zero when none was needed.
    pub projection_distance: f64,
    /// `λ_max` of the storage inequality at the accepted `(θ, P, Λ)`.
    pub cert_residual: f64,
    /// The proposal could not be projected and the previous controller was kept.
    pub reverted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: Theta,
    pub p: Mat,
    pub lambda: Vec<f64>,
    pub iteration: usize,
    pub history: Vec<HistoryEntry>,
}

impl TrainState {
    pub fn certificate(&self) -> StorageCertificate {
        StorageCertificate { p: self.p.clone(), lambda: self.lambda.clone(), lambda_p: 1.0, feasibility_residual: f64::NAN }
    }
}

struct Projected {
    theta: Theta,
    p: Mat,
    lambda: Vec<f64>,
    distance: f64,
}

fn project(prob: &SynthesisProblem, target: &Theta, p: &Mat, lambda: &[f64], beta: f64) -> Result<Projected> {
    let lam: Vec<f64> = lambda.iter().map(|l| l.max(EPS_LAMBDA)).collect();
    let th = construct_theta_hat(&prob.plant, target, p, &lam)?;
    let proj = theta_hat_project(prob, &th, beta, false)?;
    let rec = reconstruct_theta(&proj.theta_hat, &prob.plant, prob.activation)?;
    let (theta, distance) = theta_project(prob, target, &rec.p, &rec.lambda, false)?;
    Ok(Projected { theta, p: rec.p, lambda: rec.lambda, distance })
}

/// Alternates `improver` with the dissipativity-enforcing step, starting
/// from a certified `(θ₀, P₀, Λ₀)`.
///
/// A proposal the check accepts replaces the controller and certificate. A
/// rejected one is projected: `θ̂′` is built from the proposal and the
/// current `(P, Λ)` (or the last reconstructed pair if that partition is
/// singular), projected, reconstructed, and the proposal is then projected
/// onto the controllers the reconstructed `(P, Λ)` certifies. If any of
/// these fails the previous controller is kept.
pub fn train(
    prob: &SynthesisProblem,
    env: &Environment,
    improver: &mut dyn PolicyImprover,
    theta0: &Theta,
    p0: &Mat,
    lambda0: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainState> {
    if theta0.dims() != prob.controller_dims() {
        return Err(mismatch("initial controller shape differs from the synthesis problem"));
    }
    let tol = cfg.verify.feas_tol;
    let r0 = certificate_residual(prob, theta0, p0, lambda0)?;
    if !(r0 <= tol) {
        return Err(Error::InvalidArgument("initial controller is not certified by the given (P, Λ)".into()));
    }
    let oracle = RolloutOracle::new(env, cfg.num_rollouts);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState { theta: theta0.clone(), p: p0.clone(), lambda: lambda0.to_vec(), iteration: 0, history: Vec::new() };
    let mut anchor = (p0.clone(), lambda0.to_vec());

    for it in 1..=cfg.iterations {
        let proposal = improver.step(&state.theta, &oracle, &mut rng)?;
        let mut entry =
            HistoryEntry { iteration: it, mean_reward: 0.0, was_projected: false, projection_distance: 0.0, cert_residual: 0.0, reverted: false };
        let verdict = match check_dissipative(prob, &proposal, &cfg.verify) {
            Ok(v) => v,
            Err(Error::SolverNumericalFailure(_)) => Verdict::Infeasible { t_star: f64::NAN },
            Err(e) => return Err(e),
        };
        match verdict {
            Verdict::Feasible(c) => {
                state.theta = proposal;
                state.p = c.p;
                state.lambda = c.lambda;
            }
            Verdict::Infeasible { .. } => {
                entry.was_projected = true;
                let attempt = match project(prob, &proposal, &state.p, &state.lambda, cfg.beta) {
                    Err(Error::SingularPartition { .. }) => project(prob, &proposal, &anchor.0, &anchor.1, cfg.beta),
                    other => other,
                };
                match attempt {
                    Ok(pr) if certificate_residual(prob, &pr.theta, &pr.p, &pr.lambda).is_ok_and(|r| r <= tol) => {
                        entry.projection_distance = pr.distance;
                        anchor = (pr.p.clone(), pr.lambda.clone());
                        state.theta = pr.theta;
                        state.p = pr.p;
                        state.lambda = pr.lambda;
                    }
                    _ => entry.reverted = true,
                }
            }
        }
        entry.cert_residual = certificate_residual(prob, &state.theta, &state.p, &state.lambda)?;
        entry.mean_reward = oracle.mean_reward(&state.theta, rng.next_u64());
        state.iteration = it;
        state.history.push(entry);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mat;
    use crate::models::{RinnController, SupplyRate};
    use crate::simulate::{pendulum_env, PendulumParams};
    use crate::synthesize::init_lti;

    fn pendulum(n_phi: usize) -> (Environment, SynthesisProblem) {
        let (env, plant) = pendulum_env(&PendulumParams::default());
        let prob = SynthesisProblem::new(plant, mat(2, 2, &[0.0, 1.0, 1.0, -2.0]), SupplyRate::stability(0, 2), n_phi, 1.5).unwrap();
        (env, prob)
    }

    #[test]
    fn equal_rewards_leave_theta_unchanged() {
        let (_, prob) = pendulum(2);
        let k = RinnController::zeros(prob.controller_dims(), prob.activation);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = es_step(&k, &mut |_, _| 3.0, &EsConfig::default(), &mut rng).unwrap();
        assert_eq!(out, k);
    }

    #[test]
    fn odd_population_rejected() {
        let (_, prob) = pendulum(1);
        let k = RinnController::zeros(prob.controller_dims(), prob.activation);
        let cfg = EsConfig { population: 3, ..EsConfig::default() };
        assert!(es_step(&k, &mut |_, _| 0.0, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn identity_improver_keeps_certificate() {
        let (env, prob) = pendulum(2);
        let init = init_lti(&prob, 1.05).unwrap();
        let cfg = TrainConfig { iterations: 3, num_rollouts: 1, ..TrainConfig::default() };
        let st = train(&prob, &env, &mut IdentityImprover, &init.theta, &init.p, &init.lambda, &cfg).unwrap();
        assert_eq!(st.history.len(), 3);
        assert_eq!(st.theta, init.theta);
        assert!(st.history.iter().all(|h| !h.was_projected && h.cert_residual <= 1e-6));
    }

    #[test]
    fn destabilizing_gain_is_rejected() {
        let (_, prob) = pendulum(0);
        let mut k = RinnController::zeros(prob.controller_dims(), prob.activation);
        k.d_kuy = mat(1, 1, &[50.0]);
        let sys = close_loop(&prob.plant, &k).unwrap();
        assert!(sys.a.clone().complex_eigenvalues().iter().any(|z| z.re > 0.0));
        assert!(!check_dissipative(&prob, &k, &VerifyOptions::default()).unwrap().is_feasible());
    }
}
