//! Install-time mode presets, on-disk layout and component versions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedders::{Builtin, EmbedderSpec};
use crate::genhub::Resolution;

pub const BACKEND_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version of the web client bundle this backend ships with.
pub const UI_VERSION: &str = "0.3.1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown mode {0:?} (expected fast, balanced or accurate)")]
    UnknownMode(String),
    #[error("no home directory; set NEEDLE_HOME")]
    NoHome,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Accuracy/latency preset chosen at install time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Fast,
    Balanced,
    Accurate,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Fast, Mode::Balanced, Mode::Accurate];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fast => "fast",
            Mode::Balanced => "balanced",
            Mode::Accurate => "accurate",
        }
    }

    /// Embedders written to a fresh registry.
    pub fn embedders(self) -> Vec<EmbedderSpec> {
        let kinds: &[Builtin] = match self {
            Mode::Fast => &[Builtin::ColorHist64, Builtin::Grid64],
            Mode::Balanced | Mode::Accurate => &Builtin::ALL,
        };
        kinds.iter().map(|&k| EmbedderSpec::builtin(k, 1.0)).collect()
    }

    pub fn guides(self) -> usize {
        match self {
            Mode::Fast => 1,
            Mode::Balanced | Mode::Accurate => 2,
        }
    }

    pub fn resolution(self) -> Resolution {
        Resolution::Medium
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ConfigError::UnknownMode(s.to_string()))
    }
}

/// Files under the home directory (NEEDLE_HOME, default `~/.needle`). The
/// data root defaults to `<home>/data` and can be moved with NEEDLE_DATA_DIR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paths {
    pub home: PathBuf,
    pub data: PathBuf,
}

impl Paths {
    pub fn new(home: impl Into<PathBuf>, data: Option<PathBuf>) -> Self {
        let home = home.into();
        let data = data.unwrap_or_else(|| home.join("data"));
        Self { home, data }
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        let home = match std::env::var_os("NEEDLE_HOME") {
            Some(h) => PathBuf::from(h),
            None => std::env::var_os("HOME")
                .map(|h| Path::new(&h).join(".needle"))
                .ok_or(ConfigError::NoHome)?,
        };
        Ok(Self::new(home, std::env::var_os("NEEDLE_DATA_DIR").map(PathBuf::from)))
    }

    pub fn catalog(&self) -> PathBuf {
        self.data.join("catalog.db")
    }

    pub fn vectors(&self) -> PathBuf {
        self.data.join("vectors")
    }

    pub fn embedders(&self) -> PathBuf {
        self.home.join("embedders.json")
    }

    pub fn generators(&self) -> PathBuf {
        self.home.join("generators.json")
    }

    pub fn mode_file(&self) -> PathBuf {
        self.home.join("mode")
    }

    pub fn cli_config(&self) -> PathBuf {
        self.home.join("cli.conf")
    }

    pub fn log_file(&self) -> PathBuf {
        self.home.join("logs").join("backend.log")
    }

    pub fn pid_file(&self) -> PathBuf {
        self.home.join("backend.pid")
    }

    pub fn ui_pid_file(&self) -> PathBuf {
        self.home.join("ui.pid")
    }

    /// The recorded install mode, writing `fallback` if none is recorded.
    pub fn mode_or_init(&self, fallback: Mode) -> Result<Mode, ConfigError> {
        match std::fs::read_to_string(self.mode_file()) {
            Ok(text) => text.parse(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                std::fs::create_dir_all(&self.home)?;
                std::fs::write(self.mode_file(), format!("{fallback}\n"))?;
                Ok(fallback)
            }
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Cli,
    Backend,
    Ui,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Cli => "cli",
            Component::Backend => "backend",
            Component::Ui => "ui",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentVersion {
    pub component: Component,
    pub version: String,
}

impl ComponentVersion {
    pub fn new(component: Component, version: &str) -> Result<Self, semver::Error> {
        semver::Version::parse(version)?;
        Ok(Self {
            component,
            version: version.to_string(),
        })
    }
}

/// Versions the backend reports for itself and its UI bundle.
pub fn backend_versions() -> Vec<ComponentVersion> {
    [(Component::Backend, BACKEND_VERSION), (Component::Ui, UI_VERSION)]
        .into_iter()
        .map(|(c, v)| ComponentVersion::new(c, v).expect("crate versions are semver"))
        .collect()
}
