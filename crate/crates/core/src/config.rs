//! Problem description: the YAML schema and its validated form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{CertificateKind, Role, SetAssignment};
use crate::domains::Domain;
use crate::learner::TrainConfig;
use crate::models::{DynamicalModel, TimeDomain};
use crate::nnet::{Activation, NetworkShape};
use crate::verifier::{SolverBackend, SolverKind};

/// Samples used for the set-relation guardrail.
const RELATION_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{key}: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    fn new(key: &str, reason: impl ToString) -> Self {
        ConfigError {
            key: key.to_string(),
            reason: reason.to_string(),
        }
    }
}

/// The file format, key for key.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YamlConfig {
    #[serde(rename = "N_VARS", default, skip_serializing_if = "Option::is_none")]
    pub n_vars: Option<usize>,
    /// Strings, but bare numbers such as `0` are accepted too.
    #[serde(rename = "SYSTEM")]
    pub system: Vec<serde_yaml::Value>,
    #[serde(rename = "CERTIFICATE")]
    pub certificate: String,
    #[serde(rename = "TIME_DOMAIN", default, skip_serializing_if = "Option::is_none")]
    pub time_domain: Option<String>,
    #[serde(rename = "DOMAINS")]
    pub domains: BTreeMap<String, String>,
    #[serde(rename = "N_DATA", default, skip_serializing_if = "BTreeMap::is_empty")]
    pub n_data: BTreeMap<String, usize>,
    #[serde(rename = "N_HIDDEN_NEURONS")]
    pub n_hidden_neurons: Vec<usize>,
    #[serde(rename = "ACTIVATION")]
    pub activation: Vec<String>,
    #[serde(rename = "N_HIDDEN_NEURONS_ALT", default, skip_serializing_if = "Option::is_none")]
    pub n_hidden_neurons_alt: Option<Vec<usize>>,
    #[serde(rename = "ACTIVATION_ALT", default, skip_serializing_if = "Option::is_none")]
    pub activation_alt: Option<Vec<String>>,
    #[serde(rename = "CTRLAYER", default, skip_serializing_if = "Option::is_none")]
    pub ctrlayer: Option<Vec<usize>>,
    #[serde(rename = "CTRLACTIVATION", default, skip_serializing_if = "Option::is_none")]
    pub ctrlactivation: Option<Vec<String>>,
    #[serde(rename = "VERIFIER")]
    pub verifier: String,
    #[serde(rename = "CEGIS_MAX_ITERS", default, skip_serializing_if = "Option::is_none")]
    pub cegis_max_iters: Option<usize>,
    #[serde(rename = "SEED", default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "LEARNING_RATE", default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(rename = "MAX_EPOCHS", default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(rename = "CONTROL_PENALTY", default, skip_serializing_if = "Option::is_none")]
    pub control_penalty: Option<f64>,
    /// Per-query solver timeout in seconds.
    #[serde(rename = "SOLVER_TIMEOUT", default, skip_serializing_if = "Option::is_none")]
    pub solver_timeout: Option<f64>,
    #[serde(rename = "VERIFIER_PATH", default, skip_serializing_if = "Option::is_none")]
    pub verifier_path: Option<PathBuf>,
    #[serde(rename = "DREAL_PRECISION", default, skip_serializing_if = "Option::is_none")]
    pub dreal_precision: Option<f64>,
}

/// Hidden layers of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl NetSpec {
    pub fn new(hidden: Vec<usize>, activations: Vec<Activation>) -> Self {
        NetSpec { hidden, activations }
    }

    pub fn shape(&self, input_dim: usize, output_dim: usize, bias: bool) -> NetworkShape {
        NetworkShape {
            input_dim,
            hidden: self.hidden.clone(),
            activations: self.activations.clone(),
            output_dim,
            bias,
        }
    }

    pub fn neurons(&self) -> usize {
        self.hidden.iter().sum()
    }

    fn is_polynomial(&self) -> bool {
        self.activations
            .iter()
            .all(|a| matches!(a, Activation::Linear | Activation::Poly(_)))
    }
}

/// A complete, validated synthesis problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CegisConfig {
    pub model: DynamicalModel,
    pub kind: CertificateKind,
    pub sets: SetAssignment,
    /// Initial sample count per role; roles without an entry use XD's.
    pub n_data: BTreeMap<Role, usize>,
    pub certificate: NetSpec,
    /// Network of the second function (SWA, RAR).
    pub secondary: Option<NetSpec>,
    /// Hidden layers of the controller; its output width is the input count.
    pub controller: Option<NetSpec>,
    pub backend: SolverBackend,
    pub max_iterations: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl CegisConfig {
    pub const DEFAULT_MAX_ITERATIONS: usize = 10;

    pub fn load(path: impl AsRef<Path>) -> Result<CegisConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("file", format!("{}: {e}", path.display())))?;
        text.parse()
    }

    pub fn from_yaml(raw: &YamlConfig) -> Result<CegisConfig, ConfigError> {
        let system = raw
            .system
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                serde_yaml::Value::String(s) => Ok(s.clone()),
                serde_yaml::Value::Number(n) => Ok(n.to_string()),
                _ => Err(ConfigError::new("SYSTEM", format!("entry {i} is not an expression"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if system.is_empty() {
            return Err(ConfigError::new("SYSTEM", "no equations"));
        }
        let n_vars = raw.n_vars.unwrap_or(system.len());
        if system.len() != n_vars {
            return Err(ConfigError::new(
                "SYSTEM",
                format!("{} equations for N_VARS = {n_vars}", system.len()),
            ));
        }
        let time = match &raw.time_domain {
            Some(t) => t.parse::<TimeDomain>().map_err(|e| ConfigError::new("TIME_DOMAIN", e))?,
            None => TimeDomain::Continuous,
        };
        let model = DynamicalModel::parse(&system, n_vars, time).map_err(|e| ConfigError::new("SYSTEM", e))?;
        let kind: CertificateKind = raw.certificate.parse().map_err(|e| ConfigError::new("CERTIFICATE", e))?;

        let mut sets = BTreeMap::new();
        for (role, text) in &raw.domains {
            let r: Role = role.parse().map_err(|e| ConfigError::new("DOMAINS", e))?;
            let d: Domain = text.parse().map_err(|e| ConfigError::new("DOMAINS", format!("{role}: {e}")))?;
            sets.insert(r, d);
        }
        let mut n_data = BTreeMap::new();
        for (role, count) in &raw.n_data {
            let r: Role = role.parse().map_err(|e| ConfigError::new("N_DATA", e))?;
            n_data.insert(r, *count);
        }

        let certificate = net_spec("N_HIDDEN_NEURONS", "ACTIVATION", &raw.n_hidden_neurons, &raw.activation)?;
        let secondary = match (&raw.n_hidden_neurons_alt, &raw.activation_alt) {
            (Some(h), Some(a)) => Some(net_spec("N_HIDDEN_NEURONS_ALT", "ACTIVATION_ALT", h, a)?),
            (None, None) => None,
            (Some(_), None) => return Err(ConfigError::new("ACTIVATION_ALT", "missing while N_HIDDEN_NEURONS_ALT is set")),
            (None, Some(_)) => return Err(ConfigError::new("N_HIDDEN_NEURONS_ALT", "missing while ACTIVATION_ALT is set")),
        };
        let controller = match (&raw.ctrlayer, &raw.ctrlactivation) {
            (Some(layers), Some(acts)) => {
                let (out, hidden) = layers
                    .split_last()
                    .ok_or_else(|| ConfigError::new("CTRLAYER", "empty"))?;
                if *out != model.n_inputs() {
                    return Err(ConfigError::new(
                        "CTRLAYER",
                        format!("last entry is {out} but SYSTEM has {} inputs", model.n_inputs()),
                    ));
                }
                if hidden.is_empty() {
                    return Err(ConfigError::new("CTRLAYER", "needs at least one hidden layer before the output width"));
                }
                Some(net_spec("CTRLAYER", "CTRLACTIVATION", hidden, acts)?)
            }
            (None, None) => None,
            (Some(_), None) => return Err(ConfigError::new("CTRLACTIVATION", "missing while CTRLAYER is set")),
            (None, Some(_)) => return Err(ConfigError::new("CTRLAYER", "missing while CTRLACTIVATION is set")),
        };

        let solver: SolverKind = raw.verifier.parse().map_err(|e| ConfigError::new("VERIFIER", e))?;
        let mut backend = SolverBackend::new(solver);
        if let Some(p) = &raw.verifier_path {
            backend.executable = p.clone();
        }
        if let Some(t) = raw.solver_timeout {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::new("SOLVER_TIMEOUT", "must be a positive number of seconds"));
            }
            backend.timeout = Duration::from_secs_f64(t);
        }
        if let Some(d) = raw.dreal_precision {
            if !(d > 0.0 && d.is_finite()) {
                return Err(ConfigError::new("DREAL_PRECISION", "must be positive"));
            }
            backend.delta = d;
        }

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: raw.learning_rate.unwrap_or(defaults.learning_rate),
            max_epochs: raw.max_epochs.unwrap_or(defaults.max_epochs),
            control_penalty: raw.control_penalty.unwrap_or(defaults.control_penalty),
            ..defaults
        };
        train.validate().map_err(|e| ConfigError::new("LEARNING_RATE", e))?;

        let cfg = CegisConfig {
            model,
            kind,
            sets: SetAssignment { sets },
            n_data,
            certificate,
            secondary,
            controller,
            backend,
            max_iterations: raw.cegis_max_iters.unwrap_or(Self::DEFAULT_MAX_ITERATIONS),
            train,
            seed: raw.seed.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every cross-field invariant, reported against the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let kind = self.kind;
        let time = self.model.time_domain();
        if !kind.supports(time) {
            return Err(ConfigError::new(
                "TIME_DOMAIN",
                format!("{kind} certificates are not defined for {time} time"),
            ));
        }
        self.sets
            .validate(kind, self.model.n_vars())
            .map_err(|e| ConfigError::new("DOMAINS", e))?;
        self.sets
            .check_relations(RELATION_SAMPLES, 0)
            .map_err(|e| ConfigError::new("DOMAINS", e))?;
        for role in self.n_data.keys() {
            if !kind.required_roles().contains(role) {
                return Err(ConfigError::new("N_DATA", format!("{kind} certificates do not use the set {role}")));
            }
        }

        let nets = [
            ("ACTIVATION", Some(&self.certificate)),
            ("ACTIVATION_ALT", self.secondary.as_ref()),
            ("CTRLACTIVATION", self.controller.as_ref()),
        ];
        for (key, spec) in nets {
            let Some(spec) = spec else { continue };
            spec.shape(self.model.n_vars(), 1, false)
                .validate()
                .map_err(|e| ConfigError::new(key, e))?;
            if let Some(a) = spec.activations.iter().find(|a| !a.is_verifiable()) {
                return Err(ConfigError::new(key, format!("{a} networks cannot be verified")));
            }
            if self.backend.kind.is_polynomial_only() && !spec.is_polynomial() {
                return Err(ConfigError::new(
                    key,
                    format!("{} only decides polynomial arithmetic; use LINEAR/SQUARE/POLY_k or VERIFIER: DREAL", self.backend.kind),
                ));
            }
        }
        if self.backend.kind.is_polynomial_only() && !self.model.is_polynomial() {
            return Err(ConfigError::new(
                "SYSTEM",
                format!("{} only decides polynomial arithmetic; use VERIFIER: DREAL", self.backend.kind),
            ));
        }

        match (kind.two_functions(), self.secondary.is_some()) {
            (true, false) => {
                return Err(ConfigError::new("N_HIDDEN_NEURONS_ALT", format!("{kind} certificates need a second network")))
            }
            (false, true) => {
                return Err(ConfigError::new("N_HIDDEN_NEURONS_ALT", format!("{kind} certificates have a single function")))
            }
            _ => {}
        }
        match (self.model.is_autonomous(), self.controller.is_some()) {
            (false, false) => return Err(ConfigError::new("CTRLAYER", "SYSTEM has inputs, a controller is required")),
            (true, true) => return Err(ConfigError::new("CTRLAYER", "SYSTEM has no inputs to control")),
            _ => {}
        }

        if self.backend.kind == SolverKind::DReal && kind.primary_is_stability() {
            match self.sets.get(Role::XD) {
                Some(Domain::Torus { .. }) => {}
                _ => {
                    return Err(ConfigError::new(
                        "DOMAINS",
                        format!("{kind} with DREAL needs XD to be a Torus that excludes the origin"),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Canonical file form; `from_yaml(&cfg.to_yaml())` reproduces `cfg`.
    pub fn to_yaml(&self) -> YamlConfig {
        let defaults = TrainConfig::default();
        let default_backend = SolverBackend::new(self.backend.kind);
        let names = |spec: &NetSpec| spec.activations.iter().map(Activation::to_string).collect::<Vec<_>>();
        YamlConfig {
            n_vars: Some(self.model.n_vars()),
            system: self
                .model
                .field()
                .components
                .iter()
                .map(|c| serde_yaml::Value::String(c.print_infix()))
                .collect(),
            certificate: self.kind.name().to_string(),
            time_domain: Some(self.model.time_domain().to_string()),
            domains: self.sets.sets.iter().map(|(r, d)| (r.to_string(), d.to_string())).collect(),
            n_data: self.n_data.iter().map(|(r, n)| (r.to_string(), *n)).collect(),
            n_hidden_neurons: self.certificate.hidden.clone(),
            activation: names(&self.certificate),
            n_hidden_neurons_alt: self.secondary.as_ref().map(|s| s.hidden.clone()),
            activation_alt: self.secondary.as_ref().map(names),
            ctrlayer: self.controller.as_ref().map(|c| {
                let mut layers = c.hidden.clone();
                layers.push(self.model.n_inputs());
                layers
            }),
            ctrlactivation: self.controller.as_ref().map(names),
            verifier: self.backend.kind.name().to_string(),
            cegis_max_iters: Some(self.max_iterations),
            seed: Some(self.seed),
            learning_rate: (self.train.learning_rate != defaults.learning_rate).then_some(self.train.learning_rate),
            max_epochs: (self.train.max_epochs != defaults.max_epochs).then_some(self.train.max_epochs),
            control_penalty: (self.train.control_penalty != defaults.control_penalty).then_some(self.train.control_penalty),
            solver_timeout: (self.backend.timeout != default_backend.timeout).then_some(self.backend.timeout.as_secs_f64()),
            verifier_path: (self.backend.executable != default_backend.executable).then(|| self.backend.executable.clone()),
            dreal_precision: (self.backend.delta != default_backend.delta).then_some(self.backend.delta),
        }
    }

    pub fn to_yaml_string(&self) -> String {
        serde_yaml::to_string(&self.to_yaml()).expect("config serialises")
    }
}

impl FromStr for CegisConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let raw: YamlConfig = serde_yaml::from_str(text).map_err(|e| ConfigError::new("yaml", e))?;
        CegisConfig::from_yaml(&raw)
    }
}

/// One width list and its activations. A single width with several
/// activations is repeated once per activation (`[6]` with two activations
/// means two layers of 6).
fn net_spec(width_key: &str, act_key: &str, widths: &[usize], acts: &[String]) -> Result<NetSpec, ConfigError> {
    let activations = acts
        .iter()
        .map(|a| a.parse::<Activation>().map_err(|e| ConfigError::new(act_key, e)))
        .collect::<Result<Vec<_>, _>>()?;
    if activations.is_empty() {
        return Err(ConfigError::new(act_key, "no activations"));
    }
    let hidden = match widths {
        [w] if activations.len() > 1 => vec![*w; activations.len()],
        _ => widths.to_vec(),
    };
    if hidden.len() != activations.len() {
        return Err(ConfigError::new(
            act_key,
            format!("{} activations for {} hidden layers", activations.len(), hidden.len()),
        ));
    }
    if hidden.iter().any(|w| *w == 0) {
        return Err(ConfigError::new(width_key, "hidden layers must have at least one neuron"));
    }
    Ok(NetSpec { hidden, activations })
}
