use std::io;

use homesec_core::auth::AuthError;
use homesec_core::config::ConfigError;
use homesec_core::gateway::GatewayError;
use homesec_core::nids::SchemaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Schema {
        path: String,
        #[source]
        source: SchemaError,
    },
    #[error("{0}")]
    Input(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("{0}")]
    Environment(String),
}

impl CliError {
    /// 2 for bad input, 3 for a broken environment.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Schema { .. } | CliError::Input(_) => 2,
            CliError::Bind { .. } | CliError::Unreachable(_) | CliError::Environment(_) => 3,
        }
    }

    pub fn input(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }

    pub fn output(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Environment(format!("{}: {e}", path.display()))
    }
}

impl From<AuthError> for CliError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::UsernameTaken | AuthError::WeakPassword(_) => CliError::Input(e.to_string()),
            other => CliError::Environment(other.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(c) => CliError::Config(c),
            GatewayError::Auth(a) => a.into(),
            GatewayError::Sensor(s) => CliError::Input(s.to_string()),
            other => CliError::Environment(other.to_string()),
        }
    }
}
