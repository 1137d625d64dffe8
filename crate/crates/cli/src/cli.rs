use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use needle_core::genhub::Resolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Table,
    Plain,
    Structured,
}

#[derive(Debug, Parser)]
#[command(name = "needlectl", about = "Manage and query a needle retrieval service", disable_version_flag = true)]
pub struct Cli {
    /// Print the cli, backend and ui versions.
    #[arg(short = 'V', long)]
    pub version: bool,

    /// Output format; overrides `output` in cli.conf.
    #[arg(long, global = true, value_enum)]
    pub output: Option<OutputFormat>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start, stop and inspect the backend.
    #[command(subcommand)]
    Service(ServiceCmd),
    /// Manage indexed directories.
    #[command(subcommand)]
    Directory(DirectoryCmd),
    /// Search the index.
    #[command(subcommand)]
    Query(QueryCmd),
    /// Inspect and configure generation engines.
    #[command(subcommand)]
    Generator(GeneratorCmd),
    /// Serve the web UI.
    #[command(subcommand)]
    Ui(UiCmd),
    /// Run the synthetic retrieval benchmark in-process.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Debug, Subcommand)]
pub enum ServiceCmd {
    /// Launch the backend in the background and wait until it is healthy.
    Start,
    /// Ask the backend to shut down.
    Stop,
    Restart,
    /// Show service, directory and generator state.
    Status,
    /// Print the backend log.
    Log {
        #[arg(long, short)]
        follow: bool,
        /// Lines to show from the end of the log.
        #[arg(long, short = 'n', default_value_t = 50)]
        lines: usize,
    },
    /// Show how to update the installed components.
    Update,
    /// Run the backend in the foreground.
    Run,
}

#[derive(Debug, Subcommand)]
pub enum DirectoryCmd {
    /// Register a directory and index it.
    Add {
        path: PathBuf,
        /// Wait for indexing to finish, drawing a progress bar.
        #[arg(long)]
        progress: bool,
    },
    List,
    Describe {
        id: i64,
    },
    /// Change a directory's settings; interactive on a terminal.
    Modify {
        id: i64,
        /// `key=value`, e.g. `enabled=false`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    Remove {
        id: i64,
    },
}

#[derive(Debug, Subcommand)]
pub enum QueryCmd {
    Run(QueryArgs),
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub prompt: String,
    /// Results to return.
    #[arg(short = 'n', default_value_t = 10, value_parser = positive)]
    pub n: u64,
    /// Also print every (guide, embedder) ranked list.
    #[arg(long, short)]
    pub verbose: bool,
    /// Guide images to generate.
    #[arg(long, value_parser = positive)]
    pub m: Option<u64>,
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<Resolution>,
    /// Restrict generation to these engines.
    #[arg(long = "engine")]
    pub engines: Vec<String>,
    /// Fix the guide seeds.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn positive(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_resolution(s: &str) -> Result<Resolution, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum GeneratorCmd {
    List,
    /// Reorder or enable engines; interactive on a terminal.
    Config {
        /// `<engine>.enabled=<bool>`.
        #[arg(long = "set", value_name = "ENGINE.enabled=BOOL")]
        set: Vec<String>,
        /// New priority order, highest first.
        #[arg(long, value_delimiter = ',')]
        order: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum UiCmd {
    /// Serve the web UI in the background and print its URL.
    Start {
        /// Directory holding the built UI bundle.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    Stop,
    /// Serve the web UI in the foreground.
    #[command(hide = true)]
    Serve {
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Compare the guide ensemble against single-guide, single-embedder runs.
    Run {
        #[arg(long, default_value_t = 2000)]
        corpus: usize,
        #[arg(long, default_value_t = 42)]
        corpus_seed: u64,
        /// Per-source depth and ranking length.
        #[arg(long, default_value_t = 100)]
        depth: usize,
        #[arg(long, value_parser = parse_resolution, default_value = "SMALL")]
        resolution: Resolution,
        /// Also write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
