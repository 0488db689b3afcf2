//! Key-value configuration files.
//!
//! Every config struct in the crate is a flat TOML table with defaults for all
//! keys, so a file only needs to name the fields it overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text).map_err(|message| ConfigError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ConfigError> {
    match path {
        Some(p) => load(p),
        None => Ok(T::default()),
    }
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

pub fn to_text<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("config structs always serialize")
}

pub fn save<T: Serialize>(value: &T, path: &Path) -> Result<(), ConfigError> {
    fs::write(path, to_text(value)).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// SHA-256 over the canonical serialized form, hex encoded.
pub fn hash<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(to_text(value).as_bytes()))
}
