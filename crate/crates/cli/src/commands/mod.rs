mod bench;
mod directory;
mod generator;
mod query;
mod service;
mod ui;

use std::io::{BufRead, IsTerminal, Write};

use anyhow::Context;
use needle_core::config::{Component, Paths};
use serde::Serialize;

use crate::cli::{Cli, Command, OutputFormat};
use crate::client::Client;
use crate::config::CliConfig;

/// A malformed invocation; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Ctx {
    pub paths: Paths,
    pub config: CliConfig,
    pub format: OutputFormat,
    pub client: Client,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let paths = Paths::from_env()?;
    let config = CliConfig::load(&paths.cli_config())?;
    let ctx = Ctx {
        format: cli.output.unwrap_or(config.output),
        client: Client::new(&config.api_addr),
        paths,
        config,
    };
    if cli.version {
        return versions(&ctx);
    }
    match cli.command {
        Some(Command::Service(c)) => service::run(&ctx, c),
        Some(Command::Directory(c)) => directory::run(&ctx, c),
        Some(Command::Query(c)) => query::run(&ctx, c),
        Some(Command::Generator(c)) => generator::run(&ctx, c),
        Some(Command::Ui(c)) => ui::run(&ctx, c),
        Some(Command::Bench(c)) => bench::run(&ctx, c),
        None => Err(usage("a command is required; see --help")),
    }
}

#[derive(Serialize)]
struct VersionLine {
    component: Component,
    version: Option<String>,
}

/// `component: semver` per line; the backend's are `unreachable` when it is down.
fn versions(ctx: &Ctx) -> anyhow::Result<()> {
    let mut lines = vec![VersionLine {
        component: Component::Cli,
        version: Some(env!("CARGO_PKG_VERSION").to_string()),
    }];
    let remote = ctx.client.version().ok();
    for component in [Component::Backend, Component::Ui] {
        let version = remote.as_ref().and_then(|v| {
            v.components
                .iter()
                .find(|c| c.component == component)
                .map(|c| c.version.clone())
        });
        lines.push(VersionLine { component, version });
    }
    crate::output::emit(ctx.format, &lines, || {
        lines
            .iter()
            .map(|l| {
                format!(
                    "{}: {}\n",
                    l.component.as_str(),
                    l.version.as_deref().unwrap_or("unreachable")
                )
            })
            .collect()
    });
    Ok(())
}

/// Asks for a value on the terminal, keeping `current` on an empty answer.
pub fn prompt_line(question: &str, current: &str) -> anyhow::Result<String> {
    let mut stderr = std::io::stderr();
    write!(stderr, "{question} [{current}]: ")?;
    stderr.flush()?;
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line).context("read answer")?;
    let answer = line.trim();
    Ok(if answer.is_empty() { current.to_string() } else { answer.to_string() })
}

/// Interactive editing happens only with a terminal on both ends.
pub fn interactive() -> bool {
    std::io::stdin().is_terminal() && std::io::stdout().is_terminal()
}

pub fn parse_bool(key: &str, value: &str) -> anyhow::Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(usage(format!("{key}: expected true or false, got `{value}`"))),
    }
}
