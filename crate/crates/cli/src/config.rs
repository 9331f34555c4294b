//! Strict TOML configuration.
//!
//! A user file only needs the keys it changes: it is merged over the built-in
//! defaults and the result is deserialized with unknown keys rejected, so a
//! typo anywhere fails with the path of the offending key.

use std::f64::consts::FRAC_PI_3;
use std::path::Path;

use dlcz::ensemble::EnsembleParams;
use dlcz::montecarlo::{Policy, TrialConfig};
use dlcz::repeater::RepeaterParams;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;
use crate::output::Format;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub ensemble: EnsembleParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_space: Option<FreeSpaceConfig>,
    pub dynamics: DynamicsConfig,
    pub repeater: RepeaterParams,
    pub scaling: ScalingConfig,
    pub optimize: OptimizeConfig,
    pub applications: ApplicationsConfig,
    pub trials: TrialConfig,
    pub output: OutputConfig,
}

/// Dilute free-space sample for the optical-depth estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeSpaceConfig {
    /// Atoms per m³.
    pub density: f64,
    /// Sample length in m.
    pub length: f64,
    /// Optical wavenumber in m⁻¹.
    pub wavenumber: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub noise_modes: usize,
    pub cutoff: usize,
    pub steps: usize,
    /// Final time in units of `1/(κ′ + γ′)`.
    pub gain_time_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub delta_f_target: f64,
    /// Total distances in units of `L_att`.
    pub distances: Vec<f64>,
    pub max_levels: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Compositional,
    ClosedFormGeneral,
    ClosedFormHighEta,
    PowerLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    /// Total distance in units of `L_att`.
    pub distance: f64,
    pub objective: ObjectiveKind,
    /// Exponent of the power-law surrogate.
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationsConfig {
    /// Vacuum coefficient of the final link.
    pub c_n: f64,
    pub phi: f64,
    pub eta_a: f64,
    pub dark_prob: f64,
    pub rounds: u64,
    /// Input qubit `cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩`.
    pub qubit_theta: f64,
    pub qubit_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Significant digits of every printed number.
    pub precision: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            ensemble: EnsembleParams {
                atom_count: 1_000_000,
                rabi: 1e7,
                detuning: 1e9,
                coupling: 1e5,
                cavity_decay: 1e9,
                spont_rate: 1e6,
                interaction_time: 1.25e-6,
            },
            free_space: None,
            dynamics: DynamicsConfig {
                noise_modes: 3,
                cutoff: 2,
                steps: 100,
                gain_time_end: 0.05,
            },
            repeater: RepeaterParams {
                excitation_prob: 0.01,
                pulse_time: 1e-6,
                local_efficiency: 1.0,
                swap_efficiency: 2.0 / 3.0,
                app_efficiency: 1.0,
                dark_prob: 1e-6,
                attenuation_length: 1.0,
                segment_length: 1.0,
                levels: 3,
                channel_phase: 0.0,
            },
            scaling: ScalingConfig {
                delta_f_target: 0.1,
                distances: vec![100.0],
                max_levels: 8,
            },
            optimize: OptimizeConfig {
                distance: 100.0,
                objective: ObjectiveKind::Compositional,
                m: 2.0,
            },
            applications: ApplicationsConfig {
                c_n: 0.0,
                phi: 0.0,
                eta_a: 1.0,
                dark_prob: 0.0,
                rounds: 100_000,
                qubit_theta: FRAC_PI_3,
                qubit_phase: 0.5,
            },
            trials: TrialConfig {
                seed: 1,
                n_trials: 10_000,
                policy: Policy::ParallelMax,
            },
            output: OutputConfig {
                format: None,
                path: None,
                precision: 9,
            },
        }
    }
}

/// Defaults as TOML text.
pub fn default_toml() -> String {
    toml::to_string(&Config::default()).expect("defaults serialize")
}

/// Reads `path` over the defaults, applies `overrides` (dotted key, value)
/// and validates every section.
pub fn load(path: Option<&Path>, overrides: &[(String, Override)]) -> Result<Config, CliError> {
    let mut root = Value::try_from(Config::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let user: Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut root, Value::Table(user));
    }
    for (key, v) in overrides {
        set_number(&mut root, key, *v)?;
    }
    let cfg: Config = serde_path_to_error::deserialize(root)
        .map_err(|e| {
            let inner = e.inner().to_string();
            let first = inner.lines().next().unwrap_or_default().to_string();
            CliError::Config(format!("{}: {first}", e.path()))
        })?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Table(b), Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Command-line replacement for a numeric key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Override {
    Integer(u64),
    Real(f64),
}

/// Overwrites an existing numeric key, keeping integers integral.
pub fn set_number(root: &mut Value, key: &str, v: Override) -> Result<(), CliError> {
    let mut slot = &mut *root;
    for part in key.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| CliError::Config(format!("{key}: no such key")))?;
    }
    let not_integer = |v: &dyn std::fmt::Display| {
        CliError::Config(format!("{key}: {v} is not a non-negative integer below 2^63"))
    };
    *slot = match (&slot, v) {
        (Value::Integer(_), Override::Integer(n)) => {
            Value::Integer(i64::try_from(n).map_err(|_| not_integer(&n))?)
        }
        (Value::Integer(_), Override::Real(x)) => {
            if x.fract() != 0.0 || !(0.0..9.2e18).contains(&x) {
                return Err(not_integer(&x));
            }
            Value::Integer(x as i64)
        }
        (Value::Float(_), Override::Integer(n)) => Value::Float(n as f64),
        (Value::Float(_), Override::Real(x)) => Value::Float(x),
        _ => return Err(CliError::Config(format!("{key}: not a numeric key"))),
    };
    Ok(())
}

impl Config {
    pub fn validate(&self) -> Result<(), CliError> {
        let scoped = |section: &str, r: dlcz::Result<()>| {
            r.map_err(|e| match e {
                dlcz::Error::InvalidArgument { field, reason } => {
                    CliError::Config(format!("{section}.{field}: {reason}"))
                }
                other => CliError::Config(format!("{section}: {other}")),
            })
        };
        scoped("ensemble", self.ensemble.validate())?;
        scoped("repeater", self.repeater.validate())?;
        scoped("trials", self.trials.validate())?;
        if let Some(fs) = &self.free_space {
            for (field, v) in [
                ("density", fs.density),
                ("length", fs.length),
                ("wavenumber", fs.wavenumber),
            ] {
                positive("free_space", field, v)?;
            }
        }

        let d = &self.dynamics;
        if d.noise_modes == 0 {
            return Err(field_error("dynamics", "noise_modes", "need at least one"));
        }
        if d.cutoff == 0 {
            return Err(field_error("dynamics", "cutoff", "must be at least 1"));
        }
        if d.steps == 0 {
            return Err(field_error("dynamics", "steps", "must be at least 1"));
        }
        positive("dynamics", "gain_time_end", d.gain_time_end)?;

        let s = &self.scaling;
        unit_interval("scaling", "delta_f_target", s.delta_f_target)?;
        if s.distances.is_empty() {
            return Err(field_error("scaling", "distances", "need at least one distance"));
        }
        for &l in &s.distances {
            positive("scaling", "distances", l)?;
        }
        if !(1..=40).contains(&s.max_levels) {
            return Err(field_error("scaling", "max_levels", "must be in 1..=40"));
        }

        positive("optimize", "distance", self.optimize.distance)?;
        positive("optimize", "m", self.optimize.m)?;

        let a = &self.applications;
        if !(a.c_n >= 0.0 && a.c_n.is_finite()) {
            return Err(field_error("applications", "c_n", "must be non-negative"));
        }
        unit_interval("applications", "eta_a", a.eta_a)?;
        if !(0.0..1.0).contains(&a.dark_prob) {
            return Err(field_error("applications", "dark_prob", "must be in [0, 1)"));
        }
        if a.rounds == 0 {
            return Err(field_error("applications", "rounds", "must be positive"));
        }
        for (field, v) in [
            ("phi", a.phi),
            ("qubit_theta", a.qubit_theta),
            ("qubit_phase", a.qubit_phase),
        ] {
            if !v.is_finite() {
                return Err(field_error("applications", field, "must be finite"));
            }
        }

        if !(1..=17).contains(&self.output.precision) {
            return Err(field_error("output", "precision", "must be in 1..=17"));
        }
        Ok(())
    }
}

fn field_error(section: &str, field: &str, reason: &str) -> CliError {
    CliError::Config(format!("{section}.{field}: {reason}"))
}

fn positive(section: &str, field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_error(section, field, &format!("{v} must be positive and finite")))
    }
}

fn unit_interval(section: &str, field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(field_error(section, field, &format!("{v} not in (0, 1]")))
    }
}

/// `key=a:b:steps`, evenly spaced and inclusive of both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<f64>,
}

impl Sweep {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("--sweep {spec}: expected key=a:b:steps"));
        let (key, range) = spec.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        let [a, b, steps] = parts.as_slice() else {
            return Err(bad());
        };
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        let steps: usize = steps.trim().parse().map_err(|_| bad())?;
        if steps == 0 || !a.is_finite() || !b.is_finite() || key.trim().is_empty() {
            return Err(bad());
        }
        let values = (0..steps)
            .map(|k| {
                if steps == 1 {
                    a
                } else {
                    a + (b - a) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }
}
