//! `RunConfig`: the JSON form of every flag, for reproducibility bundles.

use std::path::{Path, PathBuf};

use crowdseg_assist::PredictorConfig;
use crowdseg_core::dataset::{QualityGate, Recipe};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENV_ASSIST_REMOTE_URL: &str = "ASSIST_REMOTE_URL";
pub const ENV_GENERATOR_URL: &str = "GENERATOR_URL";

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_ADDR: &str = "127.0.0.1:9090";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Option<String>,
    pub campaign: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub variant: Option<String>,
    pub threshold: Option<u16>,
    pub min_dsc: Option<f64>,
    pub min_iou: Option<f64>,
    pub seed: Option<u64>,
    pub confidence: Option<f64>,
    pub recipe: Option<Recipe>,
    pub predictor: Option<PredictorConfig>,
    pub addr: Option<String>,
    pub audit_log: Option<PathBuf>,
    pub generator: Option<String>,
    pub generator_url: Option<String>,
    pub generator_timeout_ms: Option<u64>,
    pub generator_retries: Option<u32>,
    pub classes: Option<Vec<String>>,
    pub verbosity: Option<u8>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::validation("InvalidConfig", format!("{}: {e}", path.display())))
    }

    /// Rejects a config written for a different subcommand.
    pub fn check_subcommand(&self, name: &str) -> Result<(), CliError> {
        match &self.subcommand {
            Some(s) if s != name => Err(CliError::validation(
                "InvalidConfig",
                format!("config is for `{s}`, not `{name}`"),
            )),
            _ => Ok(()),
        }
    }

    pub fn gate(&self, threshold_flags: &crate::args::GateFlags) -> QualityGate {
        let d = QualityGate::default();
        QualityGate {
            min_dsc: threshold_flags.min_dsc.or(self.min_dsc).unwrap_or(d.min_dsc),
            min_iou: threshold_flags.min_iou.or(self.min_iou).unwrap_or(d.min_iou),
            require_ground_truth: true,
        }
    }
}

/// Flag, then environment, then config file.
pub fn endpoint(flag: Option<String>, env_var: &str, config: Option<&String>) -> Option<String> {
    flag.or_else(|| std::env::var(env_var).ok().filter(|s| !s.is_empty()))
        .or_else(|| config.cloned())
}

pub fn require_path(what: &str, flag: Option<PathBuf>, config: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::validation("InvalidArguments", format!("--{what} is required")))
}

pub fn require_existing(what: &str, flag: Option<PathBuf>, config: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let p = require_path(what, flag, config)?;
    if !p.exists() {
        return Err(CliError::validation("InvalidPath", format!("--{what} {} does not exist", p.display())));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg: RunConfig = serde_json::from_str(r#"{"subcommand":"merge","threshold":3,"seed":7}"#).unwrap();
        assert_eq!(cfg.threshold, Some(3));
        assert!(cfg.check_subcommand("merge").is_ok());
        assert!(cfg.check_subcommand("build").is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"thresh":3}"#).is_err());
    }

    #[test]
    fn flag_beats_config() {
        assert_eq!(endpoint(Some("a".into()), "CROWDSEG_UNSET_VAR", Some(&"b".to_string())).as_deref(), Some("a"));
        assert_eq!(endpoint(None, "CROWDSEG_UNSET_VAR", Some(&"b".to_string())).as_deref(), Some("b"));
    }
}
