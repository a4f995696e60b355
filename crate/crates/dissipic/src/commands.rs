//! The four subcommands. Each returns the process exit code or a [`Failure`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dissipic_core::certify::{verify, Verdict, VerifyOptions};
use dissipic_core::interconnect::close_loop;
use dissipic_core::iqc::{DynamicIqc, Filter, IqcSpec};
use dissipic_core::iqc_transform::transform_plant;
use dissipic_core::linalg::{self, Mat, Vector};
use dissipic_core::models::{Activation, FixedPointCfg, RinnController, StorageCertificate, SupplyRate, UncertainLtiPlant};
use dissipic_core::simulate::{
    bode_bound_check, flexrod_env, flexrod_flexible_filter, flexrod_rigid_filter, logspace, pendulum_env, rollout,
    rollout_from, Environment, FlexrodParams, PendulumParams, Trajectory,
};
use dissipic_core::synthesize::{init_lti, init_seed, reconstruct_theta, theta_hat_project, SynthesisProblem, ThetaHat};
use dissipic_core::trainer::{
    certificate_residual, check_dissipative, train, EsConfig, EsImprover, HistoryEntry, IdentityImprover, PerturbImprover,
    PolicyImprover, TrainConfig,
};
use dissipic_core::Error;
use serde_json::{json, Value};

use crate::config::{self, ControllerSource, EnvName, ImproverName, IqcConfig, Loaded, SimulationKind, SupplyConfig};
use crate::format;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Non-success outcome with its exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input or a numerical error. Exit 1.
    Error(String),
    /// No certificate or controller exists. Exit 2.
    Infeasible(String),
    /// Training could not project. Exit 3.
    Projection(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Error(_) => 1,
            Failure::Infeasible(_) => 2,
            Failure::Projection(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Error(m) | Failure::Infeasible(m) | Failure::Projection(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InfeasibleConstraintSet | Error::InfeasibleForCertificate => Failure::Infeasible(e.to_string()),
            Error::ProjectionInfeasible(_) => Failure::Projection(e.to_string()),
            _ => Failure::Error(e.to_string()),
        }
    }
}

impl From<String> for Failure {
    fn from(e: String) -> Self {
        Failure::Error(e)
    }
}

type Outcome = Result<(), Failure>;

/// Command-line overrides shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub lti: bool,
    pub t_rs: Option<f64>,
    pub backoff: Option<f64>,
}

/// Everything a command needs, resolved from the config.
struct Setup {
    loaded: Loaded,
    ov: Overrides,
    env_name: Option<EnvName>,
    flexrod: FlexrodParams,
    plant: Option<UncertainLtiPlant>,
    env: Option<Environment>,
    iqc: Option<IqcSpec>,
}

impl Setup {
    fn new(config_path: &Path, ov: Overrides) -> Result<Self, Failure> {
        let loaded = config::load(config_path)?;
        let c = &loaded.config;
        let mut flexrod = FlexrodParams::default();
        let (env_name, env, mut plant) = match &c.environment {
            Some(e) => {
                let (env, plant) = match e.name {
                    EnvName::Pendulum => {
                        let mut p = PendulumParams::default();
                        p.dt = e.dt.unwrap_or(p.dt);
                        p.steps = e.steps.unwrap_or(p.steps);
                        pendulum_env(&p)
                    }
                    EnvName::Flexrod => {
                        flexrod.dt = e.dt.unwrap_or(flexrod.dt);
                        flexrod.steps = e.steps.unwrap_or(flexrod.steps);
                        flexrod_env(&flexrod)
                    }
                };
                (Some(e.name), Some(env), Some(plant))
            }
            None => (None, None, None),
        };
        if let Some(p) = &c.plant {
            if plant.is_some() {
                return Err(Failure::Error("give either an environment or a plant, not both".into()));
            }
            plant = Some(format::plant_from_json(p)?);
        }
        let env = env.or_else(|| plant.as_ref().map(linear_env));
        let iqc = match (&c.iqc, env_name) {
            (Some(q), _) => Some(iqc_from_config(q)?),
            (None, Some(EnvName::Pendulum)) => Some(IqcSpec::Static { m: linalg::mat(2, 2, &[0.0, 1.0, 1.0, -2.0]) }),
            (None, Some(EnvName::Flexrod)) => Some(IqcSpec::Static { m: linalg::diag(&[0.05, -5.0]) }),
            (None, None) => None,
        };
        Ok(Self { loaded, ov, env_name, flexrod, plant, env, iqc })
    }

    fn config(&self) -> &config::Config {
        &self.loaded.config
    }

    fn meta(&self, seed: u64) -> Value {
        json!({ "tool": "dissipic", "version": VERSION, "config_sha256": self.loaded.sha256, "seed": seed })
    }

    fn csv_header(&self, seed: u64) -> String {
        format!("# dissipic {VERSION} config_sha256={} seed={seed}\n", self.loaded.sha256)
    }

    fn plant(&self) -> Result<&UncertainLtiPlant, Failure> {
        self.plant.as_ref().ok_or_else(|| Failure::Error("config needs an environment or a plant".into()))
    }

    fn iqc(&self) -> Result<&IqcSpec, Failure> {
        self.iqc.as_ref().ok_or_else(|| Failure::Error("config needs an iqc section".into()))
    }

    fn supply(&self, n_d: usize, n_e: usize) -> Result<SupplyRate, Failure> {
        let s = match (&self.config().supply, self.env_name) {
            (Some(SupplyConfig::Stability), _) | (None, Some(EnvName::Pendulum)) => SupplyRate::stability(n_d, n_e),
            (Some(SupplyConfig::L2Gain { gamma_sq }), _) => SupplyRate::l2_gain(*gamma_sq, n_d, n_e),
            (Some(SupplyConfig::Passivity), _) => {
                if n_d != n_e {
                    return Err(Failure::Error("passivity needs as many performance outputs as disturbances".into()));
                }
                SupplyRate::passivity(n_d)
            }
            (Some(SupplyConfig::Custom { x_dd, x_de, x_ee }), _) => SupplyRate::new(x_dd.to_mat()?, x_de.to_mat()?, x_ee.to_mat()?)?,
            (None, Some(EnvName::Flexrod)) => {
                SupplyRate::new(linalg::mat(1, 1, &[0.495]), Mat::zeros(1, n_e), linalg::eye(n_e) * -0.5)?
            }
            (None, None) => return Err(Failure::Error("config needs a supply section".into())),
        };
        if s.n_d() != n_d || s.n_e() != n_e {
            return Err(Failure::Error(format!("supply rate must be over {n_d} disturbances and {n_e} outputs")));
        }
        Ok(s)
    }

    /// Synthesis plant and multiplier. A dynamic IQC is absorbed into the
    /// plant, which then carries the filter states.
    fn problem(&self) -> Result<SynthesisProblem, Failure> {
        let plant = self.plant()?;
        let (plant, m) = match self.iqc()? {
            IqcSpec::Dynamic(q) => (transform_plant(plant, q)?.0, q.multiplier()),
            other => (plant.clone(), other.multiplier()),
        };
        let pd = plant.dims();
        let supply = self.supply(pd.n_d, pd.n_e)?;
        let s = &self.config().synthesis;
        let default_t_rs = if self.env_name == Some(EnvName::Pendulum) { 1.5 } else { 1.0 };
        let t_rs = self.ov.t_rs.or(s.t_rs).unwrap_or(default_t_rs);
        let mut prob = SynthesisProblem::new(plant, m, supply, s.n_phi, t_rs)?;
        prob.activation = Activation::from_name(&s.activation)?;
        Ok(prob)
    }

    fn backoff(&self) -> f64 {
        self.ov.backoff.unwrap_or(self.config().synthesis.backoff)
    }

    fn verify_options(&self) -> VerifyOptions {
        VerifyOptions { fixed_lambda_p: self.config().synthesis.fixed_lambda_p, ..VerifyOptions::default() }
    }

    fn controller(&self) -> Result<RinnController, Failure> {
        match &self.config().controller {
            None => Ok(init_lti(&self.problem()?, self.backoff())?.theta),
            Some(ControllerSource::Named(n)) if n == "lti_init" => Ok(init_lti(&self.problem()?, self.backoff())?.theta),
            Some(ControllerSource::Named(n)) => Err(Failure::Error(format!("unknown controller source \"{n}\""))),
            Some(ControllerSource::File { path }) => {
                let path = self.loaded.dir.join(path);
                let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
                Ok(format::controller_from_json(&v)?)
            }
            Some(ControllerSource::Inline(v)) => Ok(format::controller_from_json(v)?),
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.ov.out).map_err(|e| format!("cannot create {}: {e}", self.ov.out.display()))?;
        let path = self.ov.out.join(name);
        std::fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        Ok(path)
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<PathBuf, Failure> {
        self.write(name, &(serde_json::to_string_pretty(v).expect("json serializes") + "\n"))
    }
}

/// Simulator for a custom plant with `Δ = 0`: the `D_pyd` feedthrough is
/// dropped since the generic linear environment measures the state only.
fn linear_env(p: &UncertainLtiPlant) -> Environment {
    Environment::linear(p.a_p.clone(), p.b_pu.clone(), p.b_pd.clone(), p.c_py.clone(), p.c_pe.clone(), p.d_ped.clone(), 0.01, 100)
}

fn iqc_from_config(q: &IqcConfig) -> Result<IqcSpec, Failure> {
    let filter = |f: &config::FilterConfig| -> Result<Filter, Failure> {
        Ok(Filter { a: f.a.to_mat()?, b: f.b.to_mat()?, c: f.c.to_mat()?, d: f.d.to_mat()? })
    };
    let spec = match q {
        IqcConfig::Qc { m } => IqcSpec::Qc { m: m.to_mat()? },
        IqcConfig::Static { m } => IqcSpec::Static { m: m.to_mat()? },
        IqcConfig::Dynamic { psi1, psi2 } => IqcSpec::Dynamic(DynamicIqc::new(filter(psi1)?, filter(psi2)?)?),
    };
    spec.validate()?;
    Ok(spec)
}

fn certificate_of(prob: &SynthesisProblem, theta: &RinnController, p: &Mat, lambda: &[f64]) -> Result<StorageCertificate, Failure> {
    let r = certificate_residual(prob, theta, p, lambda)?;
    Ok(StorageCertificate { p: p.clone(), lambda: lambda.to_vec(), lambda_p: 1.0, feasibility_residual: r })
}

pub fn cmd_verify(config_path: &Path, ov: Overrides) -> Outcome {
    let s = Setup::new(config_path, ov)?;
    let seed = s.ov.seed.unwrap_or(0);
    let opts = s.verify_options();
    let verdict = match &s.config().system {
        Some(v) => {
            let sys = format::system_from_json(v)?;
            let d = sys.dims();
            let iqc = match &s.iqc {
                Some(q) => q.clone(),
                None if d.n_v == 0 && d.n_w == 0 => IqcSpec::Static { m: Mat::zeros(0, 0) },
                None => return Err(Failure::Error("config needs an iqc section for a system with uncertainty channels".into())),
            };
            verify(&sys, &iqc, 0, &s.supply(d.n_d, d.n_e)?, &opts)?
        }
        None => {
            let k = s.controller()?;
            let (plant, iqc) = match s.iqc()? {
                IqcSpec::Dynamic(q) => (transform_plant(s.plant()?, q)?.0, IqcSpec::Static { m: q.multiplier() }),
                other => (s.plant()?.clone(), other.clone()),
            };
            let sys = close_loop(&plant, &k)?;
            let d = sys.dims();
            verify(&sys, &iqc, k.dims().n_phi, &s.supply(d.n_d, d.n_e)?, &opts)?
        }
    };
    match verdict {
        Verdict::Feasible(c) => {
            let path = s.write_json("certificate.json", &format::certificate_to_json(&c, &s.meta(seed)))?;
            println!("feasible: residual {:.3e}, certificate written to {}", c.feasibility_residual, path.display());
            Ok(())
        }
        Verdict::Infeasible { t_star } => {
            let report = json!({ "meta": s.meta(seed), "status": "infeasible", "t_star": t_star });
            s.write_json("verify.json", &report)?;
            Err(Failure::Infeasible(format!("infeasible: smallest LMI bound {t_star:.3e}")))
        }
    }
}

pub fn cmd_synthesize(config_path: &Path, ov: Overrides) -> Outcome {
    let s = Setup::new(config_path, ov)?;
    let seed = s.ov.seed.unwrap_or(0);
    let prob = s.problem()?;
    let lti = s.ov.lti || s.config().synthesis.lti;
    let beta = s.backoff();
    let proj = theta_hat_project(&prob, &init_seed(&prob), beta, lti)?;
    let rec = reconstruct_theta(&proj.theta_hat, &prob.plant, prob.activation)?;
    let cert = certificate_of(&prob, &rec.theta, &rec.p, &rec.lambda)?;
    let meta = s.meta(seed);
    s.write_json("controller.json", &format::controller_to_json(&rec.theta, &meta))?;
    s.write_json("certificate.json", &format::certificate_to_json(&cert, &meta))?;
    s.write_json("theta_hat.json", &theta_hat_report(&proj.theta_hat, proj.distance, proj.eps_rs, &meta))?;
    println!(
        "synthesized {} controller: distance {:.4}, coupling margin {:.4}, residual {:.3e}",
        if lti { "LTI" } else { "implicit" },
        proj.distance,
        proj.eps_rs,
        cert.feasibility_residual
    );
    if cert.feasibility_residual > VerifyOptions::default().feas_tol {
        return Err(Failure::Error("reconstructed controller fails its certificate".into()));
    }
    Ok(())
}

fn theta_hat_report(th: &ThetaHat, distance: f64, eps_rs: f64, meta: &Value) -> Value {
    let mut v = format::theta_hat_to_json(th, meta);
    v["distance"] = json!(distance);
    v["eps_rs"] = json!(eps_rs);
    v
}

pub fn history_csv(header: &str, history: &[HistoryEntry]) -> String {
    let mut out = String::from(header);
    out.push_str("iteration,mean_reward,was_projected,projection_distance,cert_residual,reverted\n");
    for h in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            h.iteration, h.mean_reward, h.was_projected as u8, h.projection_distance, h.cert_residual, h.reverted as u8
        )
        .unwrap();
    }
    out
}

pub fn cmd_train(config_path: &Path, ov: Overrides) -> Outcome {
    let s = Setup::new(config_path, ov)?;
    let t = s.config().training.clone();
    let seed = s.ov.seed.unwrap_or(t.seed);
    let prob = s.problem()?;
    let env = s.env.as_ref().ok_or_else(|| Failure::Error("training needs an environment or a plant".into()))?;
    let (theta0, p0, lambda0) = match &s.config().controller {
        None => {
            let init = init_lti(&prob, s.backoff())?;
            (init.theta, init.p, init.lambda)
        }
        Some(ControllerSource::Named(n)) if n == "lti_init" => {
            let init = init_lti(&prob, s.backoff())?;
            (init.theta, init.p, init.lambda)
        }
        Some(_) => {
            let k = s.controller()?;
            let opts = VerifyOptions { fixed_lambda_p: Some(1.0), ..VerifyOptions::default() };
            match check_dissipative(&prob, &k, &opts)? {
                Verdict::Feasible(c) => (k, c.p, c.lambda),
                Verdict::Infeasible { t_star } => {
                    return Err(Failure::Infeasible(format!("initial controller is not certified (bound {t_star:.3e})")))
                }
            }
        }
    };
    let mut improver: Box<dyn PolicyImprover> = match t.improver {
        ImproverName::Es => Box::new(EsImprover { cfg: EsConfig { population: t.population, sigma: t.sigma, lr: t.lr } }),
        ImproverName::Identity => Box::new(IdentityImprover),
        ImproverName::Perturb => Box::new(PerturbImprover { sigma: t.sigma }),
    };
    let cfg = TrainConfig { iterations: t.iterations, beta: s.backoff(), num_rollouts: t.num_rollouts, seed, ..TrainConfig::default() };
    let meta = s.meta(seed);
    match train(&prob, env, improver.as_mut(), &theta0, &p0, &lambda0, &cfg) {
        Ok(st) => {
            s.write("history.csv", &history_csv(&s.csv_header(seed), &st.history))?;
            s.write_json("controller.json", &format::controller_to_json(&st.theta, &meta))?;
            s.write_json("certificate.json", &format::certificate_to_json(&certificate_of(&prob, &st.theta, &st.p, &st.lambda)?, &meta))?;
            let projected = st.history.iter().filter(|h| h.was_projected).count();
            let worst = st.history.iter().map(|h| h.cert_residual).fold(f64::NEG_INFINITY, f64::max);
            println!("trained {} iterations: {projected} projections, worst certificate residual {worst:.3e}", st.history.len());
            Ok(())
        }
        Err(e @ Error::ProjectionInfeasible(_)) => {
            s.write_json("controller.json", &format::controller_to_json(&theta0, &meta))?;
            s.write_json("certificate.json", &format::certificate_to_json(&certificate_of(&prob, &theta0, &p0, &lambda0)?, &meta))?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn vec_columns(prefix: &str, n: usize) -> String {
    (1..=n).map(|i| format!(",{prefix}{i}")).collect()
}

fn vec_cells(v: &Vector) -> String {
    v.iter().map(|x| format!(",{x}")).collect()
}

pub fn trajectory_csv(header: &str, env: &Environment, tr: &Trajectory) -> String {
    let n_y = tr.y.first().map_or(0, |y| y.len());
    let n_e = tr.e.first().map_or(0, |e| e.len());
    let mut out = String::from(header);
    out.push('t');
    for (p, n) in [("x", env.n_x), ("u", env.n_u), ("y", n_y), ("d", env.n_d), ("e", n_e)] {
        out.push_str(&vec_columns(p, n));
    }
    out.push_str(",reward\n");
    for k in 0..tr.u.len() {
        out.push_str(&tr.t[k].to_string());
        for v in [&tr.x[k], &tr.u[k], &tr.y[k], &tr.d[k], &tr.e[k]] {
            out.push_str(&vec_cells(v));
        }
        writeln!(out, ",{}", tr.reward[k]).unwrap();
    }
    out
}

fn magnitude(f: &Filter, w: f64) -> Result<f64, Failure> {
    let (re, im) = f.freq_response(w)?;
    Ok(re[(0, 0)].hypot(im[(0, 0)]))
}

fn complex_diff(a: &Filter, b: &Filter, w: f64) -> Result<f64, Failure> {
    let (ar, ai) = a.freq_response(w)?;
    let (br, bi) = b.freq_response(w)?;
    Ok((ar[(0, 0)] - br[(0, 0)]).hypot(ai[(0, 0)] - bi[(0, 0)]))
}

pub fn cmd_simulate(config_path: &Path, ov: Overrides) -> Outcome {
    let mut s = Setup::new(config_path, ov)?;
    let sim = s.config().simulation.clone();
    let seed = s.ov.seed.unwrap_or(sim.seed);
    let header = s.csv_header(seed);
    match sim.kind {
        SimulationKind::Bode => {
            if s.env_name != Some(EnvName::Flexrod) {
                return Err(Failure::Error("bode data is only defined for the flexrod environment".into()));
            }
            let (rigid, flex) = (flexrod_rigid_filter(&s.flexrod), flexrod_flexible_filter(&s.flexrod));
            let omegas = if sim.points == 0 { Vec::new() } else { logspace(sim.omega_min, sim.omega_max, sim.points) };
            let mut out = header;
            out.push_str("omega,mag_rigid,mag_flexible,abs_difference,bound\n");
            for &w in &omegas {
                let (mr, mf, d) = (magnitude(&rigid, w)?, magnitude(&flex, w)?, complex_diff(&flex, &rigid, w)?);
                writeln!(out, "{w},{mr},{mf},{d},{}", sim.gain_bound / w).unwrap();
            }
            let path = s.write("bode.csv", &out)?;
            let ok = bode_bound_check(&rigid, &flex, sim.gain_bound, &omegas)?;
            println!("bode data written to {}; bound {} on all {} points", path.display(), if ok { "holds" } else { "fails" }, omegas.len());
            Ok(())
        }
        SimulationKind::Rollout => {
            let k = s.controller()?;
            let mut env = s.env.take().ok_or_else(|| Failure::Error("simulation needs an environment or a plant".into()))?;
            if let Some(n) = sim.steps {
                env.steps = n;
            }
            for i in 0..sim.num_rollouts {
                let tr = match &sim.initial_state {
                    Some(x0) => rollout_from(&env, &k, &Vector::from_vec(x0.clone()), None, &FixedPointCfg::default())?,
                    None => rollout(&env, &k, seed.wrapping_add(i as u64))?,
                };
                let path = s.write(&format!("rollout_{i}.csv"), &trajectory_csv(&header, &env, &tr))?;
                println!(
                    "rollout {i}: {} steps{}, reward {:.3}, written to {}",
                    tr.u.len(),
                    if tr.terminated { " (terminated)" } else { "" },
                    tr.total_reward() + 0.0,
                    path.display()
                );
            }
            Ok(())
        }
    }
}
