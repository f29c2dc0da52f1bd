//! Experiment configuration and the shipped figure recipes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batch::Method;
use crate::error::{Error, Result};
use crate::recursive::Gate;
use crate::signals::{gen_constant_profile, gen_pulse_profile, load_profile_csv, CurrentProfile, SnrConvention};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SnrSweep,
    RecursiveCompare,
    DynamicSnr,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    #[default]
    Constant,
    Pulse,
    File,
}

/// Whether the current channel is noisy in an SNR sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Current known exactly (σ_i = 0).
    Ideal,
    #[default]
    Noisy,
}

/// How σ_i follows σ_v in a noisy SNR sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaICoupling {
    /// σ_i = σ_v: equal noise variance on both columns of `[z_i z_v]`.
    Equal,
    /// σ_i = σ_v/R: equal contribution in volts.
    #[default]
    VoltageEquivalent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRule {
    Off,
    Absolute,
    #[default]
    Relative,
}

fn d_r_true() -> f64 {
    0.25
}
fn d_current() -> f64 {
    2.0
}
fn d_dt() -> f64 {
    0.1
}
fn d_m() -> usize {
    100
}
fn d_one() -> usize {
    1
}
fn d_runs() -> usize {
    1000
}
fn d_lambda() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    1e-8
}
fn d_p0() -> f64 {
    1e6
}
fn d_gate_value() -> f64 {
    0.05
}
fn d_seed() -> u64 {
    0x5EED_2019
}

/// Flat experiment description; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub experiment: ExperimentKind,
    #[serde(default = "d_r_true")]
    pub r_true: f64,
    #[serde(default)]
    pub profile: ProfileKind,
    /// Constant-profile current, also the reference current for SNR conversion.
    #[serde(default = "d_current")]
    pub current_a: f64,
    #[serde(default)]
    pub pulse_segments: Vec<(f64, f64)>,
    #[serde(default = "d_one")]
    pub pulse_repeat: usize,
    #[serde(default)]
    pub profile_path: Option<PathBuf>,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_m")]
    pub m: usize,
    /// Block lengths for an SNR sweep; empty means `[m]`.
    #[serde(default)]
    pub m_grid: Vec<usize>,
    #[serde(default = "d_one")]
    pub n_blocks: usize,
    #[serde(default = "d_runs")]
    pub runs: usize,
    #[serde(default)]
    pub snr_grid_db: Vec<f64>,
    #[serde(default)]
    pub sigma_v: Option<f64>,
    #[serde(default)]
    pub sigma_i: Option<f64>,
    #[serde(default)]
    pub noise_model: NoiseModel,
    #[serde(default)]
    pub sigma_i_coupling: SigmaICoupling,
    pub estimators: Vec<Method>,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_p0")]
    pub p0: f64,
    #[serde(default)]
    pub gate_rule: GateRule,
    #[serde(default = "d_gate_value")]
    pub gate_value: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub snr_convention: SnrConvention,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or a shipped recipe when `path` names one and no such file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            if let Some(text) = path.to_str().and_then(recipe) {
                return Self::from_json(text);
            }
            return Err(cfg_err(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.profile_path, path.parent()) {
            if p.is_relative() {
                cfg.profile_path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn gate(&self) -> Gate {
        match self.gate_rule {
            GateRule::Off => Gate::Off,
            GateRule::Absolute => Gate::Absolute(self.gate_value),
            GateRule::Relative => Gate::Relative(self.gate_value),
        }
    }

    pub fn block_lengths(&self) -> Vec<usize> {
        if self.m_grid.is_empty() {
            vec![self.m]
        } else {
            self.m_grid.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_true > 0.0) || !self.r_true.is_finite() {
            return Err(cfg_err(format!("r_true must be positive, got {}", self.r_true)));
        }
        if self.runs == 0 {
            return Err(cfg_err("runs must be at least 1"));
        }
        if self.m < 2 || self.m_grid.iter().any(|&m| m < 2) {
            return Err(cfg_err("block length m must be at least 2"));
        }
        if !(self.dt > 0.0) {
            return Err(cfg_err("dt must be positive"));
        }
        if self.estimators.is_empty() {
            return Err(cfg_err("estimator list is empty"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(cfg_err(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0) || !(self.p0 > 0.0) {
            return Err(cfg_err("gamma must be non-negative and p0 positive"));
        }
        if !(self.gate_value >= 0.0) {
            return Err(cfg_err("gate_value must be non-negative"));
        }
        for s in [self.sigma_v, self.sigma_i].into_iter().flatten() {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(cfg_err(format!("noise standard deviations must be finite and non-negative, got {s}")));
            }
        }
        match self.experiment {
            ExperimentKind::SnrSweep => {
                if self.snr_grid_db.is_empty() {
                    return Err(cfg_err("snr_grid_db must not be empty for an SNR sweep"));
                }
                if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
                    return Err(cfg_err("SNR values must be finite"));
                }
                if !(self.current_a > 0.0) {
                    return Err(cfg_err("current_a must be positive for an SNR sweep"));
                }
                if let Some(bad) = self.estimators.iter().find(|e| !e.is_batch()) {
                    return Err(cfg_err(format!("{bad} is not a batch estimator")));
                }
            }
            ExperimentKind::RecursiveCompare | ExperimentKind::DynamicSnr => {
                if let Some(bad) = self.estimators.iter().find(|e| e.is_batch()) {
                    return Err(cfg_err(format!("{bad} is not a recursive estimator")));
                }
                match self.sigma_v {
                    Some(s) if s > 0.0 => {}
                    _ => return Err(cfg_err("recursive experiments need sigma_v > 0")),
                }
                if self.sigma_i.is_none() {
                    return Err(cfg_err("recursive experiments need sigma_i"));
                }
                if self.experiment == ExperimentKind::DynamicSnr && self.profile == ProfileKind::Constant {
                    return Err(cfg_err("dynamic_snr needs a pulse or file profile"));
                }
            }
        }
        match self.profile {
            ProfileKind::Pulse if self.pulse_segments.is_empty() => Err(cfg_err("pulse profile needs pulse_segments")),
            ProfileKind::File if self.profile_path.is_none() => Err(cfg_err("file profile needs profile_path")),
            _ => Ok(()),
        }
    }

    /// True current for recursive and dynamic experiments.
    pub fn build_profile(&self) -> Result<CurrentProfile> {
        let profile = match self.profile {
            ProfileKind::Constant => gen_constant_profile(self.current_a, self.m, self.n_blocks, self.dt),
            ProfileKind::Pulse => gen_pulse_profile(&self.pulse_segments, self.dt, self.pulse_repeat),
            ProfileKind::File => {
                let path = self.profile_path.as_ref().ok_or_else(|| cfg_err("missing profile_path"))?;
                load_profile_csv(path, self.dt)
            }
        };
        let profile = profile.map_err(|e| match e {
            Error::InvalidArgument(msg) => cfg_err(msg),
            other => other,
        })?;
        if profile.len() % self.m != 0 {
            return Err(cfg_err(format!(
                "profile length {} is not divisible by block length {}",
                profile.len(),
                self.m
            )));
        }
        Ok(profile)
    }
}

pub const RECIPE_NAMES: [&str; 10] =
    ["fig2", "fig3", "fig4", "fig5", "fig6a", "fig6b", "fig7", "fig8", "fig8b", "fig9"];

/// JSON text of a shipped recipe.
pub fn recipe(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig2" => include_str!("../recipes/fig2.json"),
        "fig3" => include_str!("../recipes/fig3.json"),
        "fig4" => include_str!("../recipes/fig4.json"),
        "fig5" => include_str!("../recipes/fig5.json"),
        "fig6a" => include_str!("../recipes/fig6a.json"),
        "fig6b" => include_str!("../recipes/fig6b.json"),
        "fig7" => include_str!("../recipes/fig7.json"),
        "fig8" => include_str!("../recipes/fig8.json"),
        "fig8b" => include_str!("../recipes/fig8b.json"),
        "fig9" => include_str!("../recipes/fig9.json"),
        _ => return None,
    })
}

pub fn load_recipe(name: &str) -> Result<ExperimentConfig> {
    let text = recipe(name).ok_or_else(|| cfg_err(format!("unknown recipe `{name}`")))?;
    ExperimentConfig::from_json(text)
}
