//! `cli.conf`: `key=value` lines, `#` comments.

use std::net::SocketAddr;
use std::path::Path;

use anyhow::{bail, Context};
use needle_api::DEFAULT_API_ADDR;

use crate::cli::OutputFormat;

pub const DEFAULT_UI_ADDR: &str = "127.0.0.1:8462";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliConfig {
    pub api_addr: String,
    pub ui_addr: String,
    pub output: OutputFormat,
    pub verbose: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            api_addr: DEFAULT_API_ADDR.into(),
            ui_addr: DEFAULT_UI_ADDR.into(),
            output: OutputFormat::Table,
            verbose: false,
        }
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("cli.conf line {}: expected key=value", i + 1);
            };
            let value = value.trim();
            match key.trim() {
                "api_addr" => config.api_addr = value.into(),
                "ui_addr" => config.ui_addr = value.into(),
                "output" => {
                    config.output = match value {
                        "table" => OutputFormat::Table,
                        "plain" => OutputFormat::Plain,
                        "structured" => OutputFormat::Structured,
                        other => bail!("cli.conf line {}: unknown output `{other}`", i + 1),
                    }
                }
                "verbose" => {
                    config.verbose = value
                        .parse()
                        .with_context(|| format!("cli.conf line {}: verbose", i + 1))?
                }
                other => bail!("cli.conf line {}: unknown key `{other}`", i + 1),
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` if present, then applies NEEDLE_API_ADDR and NEEDLE_UI_ADDR.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let mut config = match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text).with_context(|| path.display().to_string())?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Self::default(),
            Err(e) => return Err(e).with_context(|| path.display().to_string()),
        };
        if let Ok(addr) = std::env::var("NEEDLE_API_ADDR") {
            config.api_addr = addr;
        }
        if let Ok(addr) = std::env::var("NEEDLE_UI_ADDR") {
            config.ui_addr = addr;
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> anyhow::Result<()> {
        for (key, addr) in [("api_addr", &self.api_addr), ("ui_addr", &self.ui_addr)] {
            addr.parse::<SocketAddr>()
                .with_context(|| format!("{key} `{addr}` is not host:port"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_rejects_junk() {
        let c = CliConfig::parse("# comment\napi_addr = 127.0.0.1:9000\noutput=plain\nverbose=true\n").unwrap();
        assert_eq!(c.api_addr, "127.0.0.1:9000");
        assert_eq!(c.output, OutputFormat::Plain);
        assert!(c.verbose);
        assert!(CliConfig::parse("api_addr=nohost").is_err());
        assert!(CliConfig::parse("color=blue").is_err());
        assert!(CliConfig::parse("justtext").is_err());
        assert_eq!(CliConfig::parse("").unwrap(), CliConfig::default());
    }
}
