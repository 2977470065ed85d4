use std::net::SocketAddr;
use std::path::PathBuf;

use protbox::identity::IdentityError;
use protbox::EngineError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_WRONG_PASSWORD: i32 = 3;
pub const EXIT_PORT_BUSY: i32 = 4;

/// Error body of every failed API call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    #[serde(rename = "error")]
    pub code: String,
    pub message: String,
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    /// An error reported by a running daemon.
    #[error("{0}")]
    Remote(ApiError),
    #[error("cannot listen on {0}: address in use")]
    PortBusy(SocketAddr),
    #[error("{0} is held by another protbox process")]
    Locked(PathBuf),
    #[error("no configuration at {0}; run `protbox init` first")]
    NotInitialized(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("cannot reach the daemon: {0}")]
    Unreachable(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl DaemonError {
    pub fn code(&self) -> String {
        match self {
            Self::Engine(e) => e.code().to_owned(),
            Self::Identity(IdentityError::SigningRefused(_)) => "SigningRefused".into(),
            Self::Identity(_) => "IdentityError".into(),
            Self::Remote(e) => e.code.clone(),
            Self::PortBusy(_) => "PortBusy".into(),
            Self::Locked(_) => "Locked".into(),
            Self::NotInitialized(_) => "NotInitialized".into(),
            Self::Config(_) => "InvalidConfig".into(),
            Self::UnknownPair(_) => "UnknownPair".into(),
            Self::BadRequest(_) => "BadRequest".into(),
            Self::Unreachable(_) => "Unreachable".into(),
            Self::Io(_) => "Io".into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.code().as_str() {
            "WrongPassword" => EXIT_WRONG_PASSWORD,
            "PortBusy" => EXIT_PORT_BUSY,
            _ => EXIT_FAILURE,
        }
    }

    pub fn status(&self) -> u16 {
        if let Self::Remote(e) = self {
            return e.status;
        }
        match self.code().as_str() {
            "UnknownPair" | "UnknownEntry" | "UnknownRequest" | "UnknownDecision" | "NoSuchVersion" => 404,
            "BadRequest" | "InvalidPolicy" | "NotADirectory" | "NestedPaths" => 400,
            "NothingToRestore" | "SharedFolderAlreadyPaired" | "FolderReadOnly" | "AlreadyInitialized" => 409,
            "SigningRefused" => 503,
            _ => 500,
        }
    }

    pub fn to_api(&self) -> ApiError {
        ApiError {
            status: self.status(),
            code: self.code(),
            message: match self {
                Self::Remote(e) => e.message.clone(),
                other => other.to_string(),
            },
        }
    }
}
