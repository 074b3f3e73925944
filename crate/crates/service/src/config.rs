use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use hilc_core::teaching::TeachingConfig;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const ENV_STORE: &str = "HILC_STORE";
pub const ENV_PORT: &str = "HILC_PORT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Session store root.
    pub store: PathBuf,
    pub bind: IpAddr,
    pub port: u16,
    /// Action model archive.
    pub model: PathBuf,
    pub teaching: TeachingConfig,
    /// Standby polls per run when the request names none.
    pub max_polls: u64,
    pub max_upload_bytes: usize,
    /// Built teaching UI, served under `/ui`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            store: PathBuf::from("hilc-store"),
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            model: PathBuf::from("model.hilc"),
            teaching: TeachingConfig::default(),
            max_polls: 1000,
            max_upload_bytes: 512 << 20,
            ui_dir: None,
        }
    }
}

impl ServiceConfig {
    /// Reads a JSON config file (all fields optional), then applies
    /// environment overrides.
    pub fn load(file: Option<&Path>) -> Result<Self, ServiceError> {
        let base = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        base.with_env(|k| std::env::var(k).ok())
    }

    pub fn with_env(mut self, var: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceError> {
        if let Some(s) = var(ENV_STORE) {
            self.store = PathBuf::from(s);
        }
        if let Some(p) = var(ENV_PORT) {
            self.port = p
                .parse()
                .map_err(|_| ServiceError::Config(format!("{ENV_PORT}={p:?} is not a port number")))?;
        }
        Ok(self)
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }
}
