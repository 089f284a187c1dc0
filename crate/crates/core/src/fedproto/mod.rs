//! The two-round protocol: message schema, site and coordinator logic, and
//! transports.
//!
//! Round one: every site uploads covariate means (and, in nonparametric mode,
//! its fitted outcome model); the coordinator rebroadcasts all of them. Round
//! two: every site calibrates toward every other site and uploads aggregated
//! data, from which the coordinator assembles every estimate.

mod coordinator;
mod report;
mod site;
pub mod transport;
mod wire;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coordinator::{
    coordinator_run, run_directory, run_local, run_tcp, run_threaded, Coordinator, Direction, LogEntry, Progress, SessionOutcome, TransportLog,
};
pub use report::{format_significant, parse_report_csv, parse_subset, render_table, write_report_csv};
pub use site::{run_site, site_round1, site_round2};
pub use wire::{
    decode, encode, AbortNotice, Envelope, Message, Round1Broadcast, Round1Upload, Round2Payload, Round2Upload,
    SCHEMA_VERSION,
};

use crate::data::{SiteId, MAX_SITES};
use crate::outcome::BasisSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtoError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unsupported schema version {found:?}")]
    VersionMismatch { found: String },
    #[error("message belongs to session {found:?}, expected {expected:?}")]
    SessionMismatch { expected: String, found: String },
    #[error("session aborted: {0}")]
    SessionAborted(String),
    #[error("site {site} failed: {reason}")]
    SiteFailure { site: SiteId, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
}

impl From<std::io::Error> for ProtoError {
    fn from(e: std::io::Error) -> Self {
        ProtoError::Transport(e.to_string())
    }
}

/// Which estimator family a session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Locally fitted outcome models are shipped in round one.
    DacNonparametric,
    /// Bias-reduced: shared linear basis, subset-specific weighted fits.
    DacBr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Round {
    One,
    Two,
}

impl Round {
    pub fn dir_name(self) -> &'static str {
        match self {
            Round::One => "round1",
            Round::Two => "round2",
        }
    }
}

fn default_timeout() -> f64 {
    60.0
}

/// Parameters every participant must agree on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub session: String,
    pub sites: usize,
    pub mode: Mode,
    /// Outcome-model basis. Bias-reduced mode requires `linear`.
    pub basis: BasisSpec,
    /// Covariate columns (0-based) to balance; all columns when absent.
    /// In bias-reduced mode these are also the outcome-model covariates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_columns: Option<Vec<usize>>,
    /// Per-round deadline in seconds.
    #[serde(default = "default_timeout")]
    pub round_timeout_secs: f64,
}

impl SessionConfig {
    pub fn new(session: impl Into<String>, sites: usize, mode: Mode, basis: BasisSpec) -> Self {
        SessionConfig {
            session: session.into(),
            sites,
            mode,
            basis,
            calibration_columns: None,
            round_timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtoError> {
        if !(2..=MAX_SITES).contains(&self.sites) {
            return Err(ProtoError::Config(format!("site count {} outside 2..={MAX_SITES}", self.sites)));
        }
        if self.session.is_empty() || !self.session.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(ProtoError::Config("session id must be nonempty and use [A-Za-z0-9._-]".into()));
        }
        if self.mode == Mode::DacBr && self.basis != BasisSpec::Linear {
            return Err(ProtoError::Config("bias-reduced mode requires the linear basis".into()));
        }
        if !(self.round_timeout_secs > 0.0 && self.round_timeout_secs.is_finite()) {
            return Err(ProtoError::Config("round timeout must be positive".into()));
        }
        if let Some(cols) = &self.calibration_columns {
            if cols.is_empty() || cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(ProtoError::Config("calibration columns must be nonempty and strictly ascending".into()));
            }
        }
        Ok(())
    }

    pub fn round_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.round_timeout_secs)
    }

    /// Calibrated covariate columns for data with `covariates` columns.
    pub fn columns(&self, covariates: usize) -> Result<Vec<usize>, ProtoError> {
        match &self.calibration_columns {
            None => Ok((0..covariates).collect()),
            Some(cols) => match cols.iter().find(|&&c| c >= covariates) {
                Some(bad) => Err(ProtoError::Config(format!("calibration column {bad} but data has {covariates} covariates"))),
                None => Ok(cols.clone()),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = SessionConfig::new("s1", 2, Mode::DacBr, BasisSpec::Linear);
        assert!(cfg.validate().is_ok());
        cfg.sites = 13;
        assert!(cfg.validate().is_err());
        cfg.sites = 1;
        assert!(cfg.validate().is_err());
        let cfg = SessionConfig::new("s1", 3, Mode::DacBr, BasisSpec::cubic_spline(2));
        assert!(cfg.validate().is_err());
        let cfg = SessionConfig::new("../x", 3, Mode::DacNonparametric, BasisSpec::Linear);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SessionConfig =
            serde_json::from_str(r#"{"session":"a","sites":2,"mode":"dac-nonparametric","basis":{"kind":"linear"}}"#).unwrap();
        assert_eq!(cfg.round_timeout_secs, 60.0);
        assert_eq!(cfg.columns(3).unwrap(), vec![0, 1, 2]);
    }
}
