use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiveRating {
    Elo,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_addr: String,
    /// Item catalog (JSONL). Must exist at startup.
    pub items_path: PathBuf,
    /// Append-only response log (JSONL). Created on first write.
    pub log_path: PathBuf,
    pub live_rating: LiveRating,
    pub model_checkpoint: Option<PathBuf>,
    /// Static survey client served at `/`.
    pub ui_dir: Option<PathBuf>,
    /// Scheduler snapshot after this many new responses; 0 disables.
    pub snapshot_every: usize,
    pub pair_ttl_secs: u64,
    /// Maximum responses per respondent; unlimited when absent.
    pub respondent_quota: Option<usize>,
    /// Scheduler seed; generated when absent.
    pub seed: Option<u64>,
    pub n_match_attributes: usize,
    pub match_tolerance: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:8080".into(),
            items_path: PathBuf::from("items.jsonl"),
            log_path: PathBuf::from("responses.jsonl"),
            live_rating: LiveRating::Elo,
            model_checkpoint: None,
            ui_dir: None,
            snapshot_every: 100,
            pair_ttl_secs: 24 * 60 * 60,
            respondent_quota: None,
            seed: None,
            n_match_attributes: 8,
            match_tolerance: 0.1,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read(path)?;
        serde_json::from_slice(&text)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `PCS_LISTEN_ADDR`, `PCS_ITEMS_PATH`, `PCS_LOG_PATH` and
    /// `PCS_MODEL_CHECKPOINT` from the process environment.
    pub fn with_env(self) -> Self {
        self.with_overrides(|key| std::env::var(key).ok())
    }

    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Self {
        if let Some(v) = lookup("PCS_LISTEN_ADDR") {
            self.listen_addr = v;
        }
        if let Some(v) = lookup("PCS_ITEMS_PATH") {
            self.items_path = v.into();
        }
        if let Some(v) = lookup("PCS_LOG_PATH") {
            self.log_path = v.into();
        }
        if let Some(v) = lookup("PCS_MODEL_CHECKPOINT") {
            self.model_checkpoint = Some(v.into());
        }
        self
    }

    pub fn snapshot_path(&self) -> PathBuf {
        let mut name = self.log_path.clone().into_os_string();
        name.push(".snapshot.json");
        name.into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_match_attributes == 0 {
            return Err(ServiceError::Config("n_match_attributes must be at least 1".into()));
        }
        if !(self.match_tolerance.is_finite() && self.match_tolerance >= 0.0) {
            return Err(ServiceError::Config("match_tolerance must be >= 0".into()));
        }
        if self.respondent_quota == Some(0) {
            return Err(ServiceError::Config("respondent_quota must be positive".into()));
        }
        Ok(())
    }
}
