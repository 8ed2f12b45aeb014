//! Scenario runner behind the `gravlab` binary.
//!
//! Each mode reads a [`ScenarioConfig`], runs its scan points on the rayon
//! pool and returns a [`ResultRecord`]. Scan points and trials draw their
//! randomness from [`crate::seeding::trial_rng`], so a record depends only
//! on the config and the master seed.

mod inference;
mod record;
mod scans;

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use inference::cmd_echo_infer;
pub use record::{attachment_path, sidecar_path, Attachment, Cell, Check, ResultRecord};
pub use scans::{cmd_haar_validate, cmd_mode_scan, cmd_pulse_fmin, cmd_scaling_scan, log_log_slope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ScalingScan,
    ModeScan,
    PulseFmin,
    EchoInfer,
    HaarValidate,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::ScalingScan,
        Mode::ModeScan,
        Mode::PulseFmin,
        Mode::EchoInfer,
        Mode::HaarValidate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::ScalingScan => "scaling-scan",
            Mode::ModeScan => "mode-scan",
            Mode::PulseFmin => "pulse-fmin",
            Mode::EchoInfer => "echo-infer",
            Mode::HaarValidate => "haar-validate",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown mode `{s}`")))
    }
}

/// JSON scenario description. Missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Option<Mode>,
    /// Atom numbers `N`.
    #[serde(alias = "N")]
    pub atoms: Vec<usize>,
    /// Site counts `L`.
    #[serde(alias = "L")]
    pub modes: Vec<usize>,
    /// Error channel counts `ℓ`.
    #[serde(alias = "ell")]
    pub channels: Vec<usize>,
    pub sigma_phi: f64,
    pub sigma_err: f64,
    /// Pulse pairs `n` of the preparation sequence.
    pub pulse_pairs: usize,
    /// Preparation time `T`; each pulse lasts `T / 2n`.
    pub total_time: f64,
    /// Trials per scan point: coupling draws, schedules or inference runs.
    pub trials: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// Phase acquisition time applied to the error generators.
    pub tau: f64,
    /// Datapoints `ν` per inference run.
    pub datapoints: usize,
    /// Haar samples per point.
    pub samples: usize,
    pub grid_points: usize,
    pub quadrature_nodes: usize,
    /// Fixed true signal; by default each run draws it from the prior.
    pub phi_true: Option<f64>,
    /// Prior mean of `φ` in echo inference.
    pub prior_center: f64,
    /// CSV of error profiles (one row per channel) used instead of random draws.
    pub profiles: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: None,
            atoms: Vec::new(),
            modes: Vec::new(),
            channels: vec![0],
            sigma_phi: 0.01,
            sigma_err: 0.01,
            pulse_pairs: 10,
            total_time: 40.0,
            trials: 20,
            seed: 0,
            output: None,
            tau: 1.0,
            datapoints: 100,
            samples: 2000,
            grid_points: crate::bayes::DEFAULT_GRID_POINTS,
            quadrature_nodes: crate::bayes::DEFAULT_QUADRATURE_NODES,
            phi_true: None,
            prior_center: 0.1,
            profiles: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() || self.modes.is_empty() || self.channels.is_empty() {
            return Err(invalid("atoms, modes and channels must be nonempty"));
        }
        if self.atoms.contains(&0) {
            return Err(invalid("atom numbers must be positive"));
        }
        if self.modes.iter().any(|&l| l < 2) {
            return Err(invalid("site counts must be at least 2"));
        }
        if !(self.sigma_phi > 0.0 && self.sigma_phi.is_finite()) {
            return Err(invalid("sigma_phi must be positive"));
        }
        if !(self.sigma_err >= 0.0 && self.sigma_err.is_finite()) {
            return Err(invalid("sigma_err must be non-negative"));
        }
        if self.pulse_pairs == 0 || !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Err(invalid("need pulse_pairs ≥ 1 and total_time > 0"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be positive"));
        }
        if !self.tau.is_finite() || !self.prior_center.is_finite() {
            return Err(invalid("tau and prior_center must be finite"));
        }
        Ok(())
    }
}

/// Runs `mode`, filling in the elapsed time. A mode stored in the config
/// must agree with `mode`.
pub fn run(mode: Mode, config: &ScenarioConfig) -> Result<ResultRecord> {
    if let Some(m) = config.mode {
        if m != mode {
            return Err(invalid(format!("config is for `{m}`, not `{mode}`")));
        }
    }
    config.validate()?;
    let mut config = config.clone();
    config.mode = Some(mode);
    let start = Instant::now();
    let mut record = match mode {
        Mode::ScalingScan => cmd_scaling_scan(&config),
        Mode::ModeScan => cmd_mode_scan(&config),
        Mode::PulseFmin => cmd_pulse_fmin(&config),
        Mode::EchoInfer => cmd_echo_infer(&config),
        Mode::HaarValidate => cmd_haar_validate(&config),
    }?;
    record.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(record)
}
