//! Host configuration files.
//!
//! ```text
//! # comment
//! bind = 127.0.0.1:1576
//! catalog_dir = catalogs
//! connection = User Id=csharp;password=csharp;Data Source=XE;
//!
//! [folder "/OracleWebService"]
//! read = true
//! execute = true
//! service = Service.asmx employee
//! ```
//!
//! A relative `catalog_dir` is resolved against the directory holding the
//! config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use soapbridge::employee::DEFAULT_CONNECTION;
use soapbridge::host::DEFAULT_MAX_BODY_BYTES;
use thiserror::Error;

pub const DEFAULT_BIND: &str = "127.0.0.1:1576";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceKind {
    Employee,
}

impl ServiceKind {
    pub fn parse(s: &str) -> Option<ServiceKind> {
        match s {
            "employee" => Some(ServiceKind::Employee),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub name: String,
    pub kind: ServiceKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FolderConfig {
    pub path: String,
    pub read: bool,
    pub execute: bool,
    pub services: Vec<ServiceConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostConfig {
    pub bind: String,
    pub catalog_dir: PathBuf,
    pub connection: String,
    pub max_body_bytes: usize,
    pub folders: Vec<FolderConfig>,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            bind: DEFAULT_BIND.into(),
            catalog_dir: PathBuf::from("."),
            connection: DEFAULT_CONNECTION.into(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            folders: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("config: {0}")]
    Invalid(String),
}

fn syntax(line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError::Syntax {
        line,
        reason: reason.into(),
    }
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(syntax(line, format!("`{key}` must be true or false, got `{v}`"))),
    }
}

fn section_path(line: usize, header: &str) -> Result<String, ConfigError> {
    let inner = header
        .strip_prefix('[')
        .and_then(|h| h.strip_suffix(']'))
        .ok_or_else(|| syntax(line, "unterminated section header"))?
        .trim();
    let quoted = inner
        .strip_prefix("folder")
        .map(str::trim_start)
        .ok_or_else(|| syntax(line, format!("unknown section `{inner}`")))?;
    quoted
        .strip_prefix('"')
        .and_then(|q| q.strip_suffix('"'))
        .filter(|p| !p.contains('"'))
        .map(str::to_owned)
        .ok_or_else(|| syntax(line, "folder path must be double-quoted"))
}

impl HostConfig {
    /// Parses config text. Relative paths stay relative.
    pub fn parse(text: &str) -> Result<HostConfig, ConfigError> {
        let mut cfg = HostConfig::default();
        let mut current: Option<FolderConfig> = None;
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed.starts_with('[') {
                let path = section_path(line, trimmed)?;
                if !path.starts_with('/') {
                    return Err(syntax(line, format!("folder path `{path}` must start with `/`")));
                }
                if !seen.insert(path.clone()) {
                    return Err(syntax(line, format!("duplicate folder `{path}`")));
                }
                cfg.folders.extend(current.take());
                current = Some(FolderConfig {
                    path,
                    read: true,
                    execute: true,
                    services: Vec::new(),
                });
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| syntax(line, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            match (&mut current, key) {
                (None, "bind") => cfg.bind = value.to_owned(),
                (None, "catalog_dir") => cfg.catalog_dir = PathBuf::from(value),
                (None, "connection") => cfg.connection = value.to_owned(),
                (None, "max_body_bytes") => {
                    cfg.max_body_bytes = value
                        .parse()
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| syntax(line, format!("bad max_body_bytes `{value}`")))?
                }
                (Some(f), "read") => f.read = parse_bool(line, key, value)?,
                (Some(f), "execute") => f.execute = parse_bool(line, key, value)?,
                (Some(f), "service") => {
                    let mut parts = value.split_whitespace();
                    let (Some(name), Some(kind), None) = (parts.next(), parts.next(), parts.next()) else {
                        return Err(syntax(line, "expected `service = <name> <kind>`"));
                    };
                    let kind = ServiceKind::parse(kind)
                        .ok_or_else(|| syntax(line, format!("unknown service kind `{kind}`")))?;
                    if f.services.iter().any(|s| s.name == name) {
                        return Err(syntax(line, format!("duplicate service `{name}`")));
                    }
                    f.services.push(ServiceConfig {
                        name: name.to_owned(),
                        kind,
                    });
                }
                (None, _) => return Err(syntax(line, format!("unknown key `{key}`"))),
                (Some(_), _) => return Err(syntax(line, format!("unknown folder key `{key}`"))),
            }
        }
        cfg.folders.extend(current);
        Ok(cfg)
    }

    /// Reads and parses a config file, resolving `catalog_dir` against it.
    pub fn load(path: &Path) -> Result<HostConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = HostConfig::parse(&text)?;
        if cfg.catalog_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.catalog_dir = base.join(&cfg.catalog_dir);
        }
        Ok(cfg)
    }

    /// Checks what serving needs beyond syntax.
    pub fn check_servable(&self) -> Result<(), ConfigError> {
        if self.folders.iter().all(|f| f.services.is_empty()) {
            return Err(ConfigError::Invalid("no services configured".into()));
        }
        Ok(())
    }
}
