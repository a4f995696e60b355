//! Run configuration: one JSON file per experiment.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::format::MatJson;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Built-in environment. Supplies the plant, the default plant IQC and
    /// the simulator.
    pub environment: Option<EnvConfig>,
    /// Custom plant; simulated with the uncertainty set to zero.
    pub plant: Option<Value>,
    /// Closed-loop system for `verify` with no controller.
    pub system: Option<Value>,
    pub controller: Option<ControllerSource>,
    pub iqc: Option<IqcConfig>,
    pub supply: Option<SupplyConfig>,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Pendulum,
    Flexrod,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ControllerSource {
    /// `"lti_init"`: synthesize the LTI initial controller.
    Named(String),
    /// `{"path": "controller.json"}`, relative to the config file.
    File { path: PathBuf },
    Inline(Value),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IqcConfig {
    Qc {
        #[serde(rename = "M")]
        m: MatJson,
    },
    Static {
        #[serde(rename = "M")]
        m: MatJson,
    },
    Dynamic { psi1: FilterConfig, psi2: FilterConfig },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(rename = "A")]
    pub a: MatJson,
    #[serde(rename = "B")]
    pub b: MatJson,
    #[serde(rename = "C")]
    pub c: MatJson,
    #[serde(rename = "D")]
    pub d: MatJson,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SupplyConfig {
    Stability,
    L2Gain { gamma_sq: f64 },
    Passivity,
    Custom {
        #[serde(rename = "X_dd")]
        x_dd: MatJson,
        #[serde(rename = "X_de")]
        x_de: MatJson,
        #[serde(rename = "X_ee")]
        x_ee: MatJson,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub n_phi: usize,
    /// Defaults to 1.5 for the pendulum and 1.0 otherwise.
    pub t_rs: Option<f64>,
    pub backoff: f64,
    pub lti: bool,
    pub activation: String,
    /// Fix the plant multiplier scaling during `verify`.
    pub fixed_lambda_p: Option<f64>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { n_phi: 0, t_rs: None, backoff: 1.05, lti: false, activation: "tanh".into(), fixed_lambda_p: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImproverName {
    Es,
    Identity,
    Perturb,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub num_rollouts: usize,
    pub seed: u64,
    pub improver: ImproverName,
    pub population: usize,
    pub sigma: f64,
    pub lr: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { iterations: 10, num_rollouts: 4, seed: 0, improver: ImproverName::Es, population: 8, sigma: 0.05, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationKind {
    Rollout,
    Bode,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub kind: SimulationKind,
    /// Number of steps; defaults to the environment horizon.
    pub steps: Option<usize>,
    pub num_rollouts: usize,
    pub seed: u64,
    pub initial_state: Option<Vec<f64>>,
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    pub gain_bound: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            kind: SimulationKind::Rollout,
            steps: None,
            num_rollouts: 1,
            seed: 0,
            initial_state: None,
            omega_min: 1e-2,
            omega_max: 1e2,
            points: 100,
            gain_bound: 0.1,
        }
    }
}

/// A parsed config together with what the output headers record.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub dir: PathBuf,
    pub sha256: String,
}

pub fn load(path: &Path) -> Result<Loaded, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let config: Config = serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, dir, sha256: sha256_hex(&bytes) })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let c: Config = serde_json::from_str(r#"{"environment": {"name": "pendulum"}}"#).unwrap();
        assert_eq!(c.training.population, 8);
        assert_eq!(c.synthesis.backoff, 1.05);
        assert_eq!(c.simulation.kind, SimulationKind::Rollout);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = serde_json::from_str::<Config>("{\n  \"environment\": {\"name\": \"pendulum\"},\n  \"synthesis\": {\"n_phi\": -1}\n}").unwrap_err();
        assert_eq!(e.line(), 3);
        let e = serde_json::from_str::<Config>("{\n  \"bogus\": 1\n}").unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }

    #[test]
    fn supply_kinds() {
        let s: SupplyConfig = serde_json::from_str(r#"{"kind": "l2_gain", "gamma_sq": 2.0}"#).unwrap();
        assert!(matches!(s, SupplyConfig::L2Gain { gamma_sq } if gamma_sq == 2.0));
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
