use std::fs::OpenOptions;
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use needle_api::wire::{ServiceState, StatusReport};
use needle_api::{Backend, BackendOptions};

use crate::cli::ServiceCmd;
use crate::client::ClientError;
use crate::commands::Ctx;
use crate::output::{emit, Table};

const START_TIMEOUT: Duration = Duration::from_secs(60);
const STOP_TIMEOUT: Duration = Duration::from_secs(30);
const POLL: Duration = Duration::from_millis(100);

pub fn run(ctx: &Ctx, cmd: ServiceCmd) -> anyhow::Result<()> {
    match cmd {
        ServiceCmd::Start => start(ctx),
        ServiceCmd::Stop => stop(ctx),
        ServiceCmd::Restart => {
            stop(ctx)?;
            start(ctx)
        }
        ServiceCmd::Status => {
            let report = ctx.client.status()?;
            emit(ctx.format, &report, || render_status(&report, ctx));
            Ok(())
        }
        ServiceCmd::Log { follow, lines } => log(&ctx.paths.log_file(), follow, lines),
        ServiceCmd::Update => {
            println!("needlectl {} cannot update itself.", env!("CARGO_PKG_VERSION"));
            println!("Install a newer release, then run `needlectl service restart`.");
            Ok(())
        }
        ServiceCmd::Run => run_foreground(ctx),
    }
}

fn start(ctx: &Ctx) -> anyhow::Result<()> {
    if ctx.client.health().is_ok() {
        println!("already running at {}", ctx.client.base_url());
        return Ok(());
    }
    let log_path = ctx.paths.log_file();
    std::fs::create_dir_all(log_path.parent().expect("log file has a parent"))?;
    let log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| log_path.display().to_string())?;
    let exe = std::env::current_exe().context("locate needlectl")?;
    let mut child = Command::new(exe)
        .args(["service", "run"])
        .env("NEEDLE_API_ADDR", &ctx.config.api_addr)
        .env("NEEDLE_HOME", &ctx.paths.home)
        .env("NEEDLE_DATA_DIR", &ctx.paths.data)
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        // outlive the terminal that started it
        .process_group(0)
        .spawn()
        .context("spawn backend")?;
    let deadline = Instant::now() + START_TIMEOUT;
    loop {
        if ctx.client.health().is_ok() {
            break;
        }
        if let Some(status) = child.try_wait()? {
            bail!("backend exited with {status}; see {}", log_path.display());
        }
        if Instant::now() > deadline {
            bail!("backend did not become healthy within {START_TIMEOUT:?}; see {}", log_path.display());
        }
        std::thread::sleep(POLL);
    }
    println!("started backend (pid {}) at {}", child.id(), ctx.client.base_url());
    Ok(())
}

fn stop(ctx: &Ctx) -> anyhow::Result<()> {
    match ctx.client.shutdown() {
        Err(ClientError::Unreachable { .. }) => {
            println!("not running");
            return Ok(());
        }
        other => other?,
    }
    let pid_file = ctx.paths.pid_file();
    let deadline = Instant::now() + STOP_TIMEOUT;
    // the backend removes its pid file once the stores are flushed
    while ctx.client.health().is_ok() || pid_file.exists() {
        if Instant::now() > deadline {
            bail!("backend still running after {STOP_TIMEOUT:?}");
        }
        std::thread::sleep(POLL);
    }
    println!("stopped");
    Ok(())
}

fn run_foreground(ctx: &Ctx) -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let backend = Arc::new(Backend::open(ctx.paths.clone(), BackendOptions::from_env()?).context("open backend")?);
    let report = backend.start_indexing()?;
    log::info!(
        "reconciled: {} added, {} removed, {} reembedded, {} repaired",
        report.added,
        report.removed,
        report.reembedded,
        report.repaired
    );
    let pid_file = ctx.paths.pid_file();
    std::fs::write(&pid_file, std::process::id().to_string())?;
    let result = needle_api::run_blocking(backend, &ctx.config.api_addr);
    let _ = std::fs::remove_file(&pid_file);
    log::info!("backend stopped");
    result
}

fn render_status(r: &StatusReport, ctx: &Ctx) -> String {
    let mut out = format!("mode: {}\n\n", r.mode);
    let mut services = Table::new(&["service", "state"]);
    for (name, state) in &r.services {
        let state = match state {
            ServiceState::Up => "up",
            ServiceState::Down => "down",
        };
        services.row(vec![name.clone(), state.into()]);
    }
    out.push_str(&services.render(ctx.format));
    out.push('\n');
    let mut dirs = Table::new(&["directory", "path", "images", "progress"]);
    for d in &r.directories {
        dirs.row(vec![
            d.id.to_string(),
            d.path.clone(),
            d.image_count.to_string(),
            format!("{:.0}%", d.progress * 100.0),
        ]);
    }
    out.push_str(&dirs.render(ctx.format));
    out.push('\n');
    let mut gens = Table::new(&["generator", "priority", "enabled", "healthy"]);
    for g in &r.generators {
        gens.row(vec![
            g.name.clone(),
            g.priority.to_string(),
            g.enabled.to_string(),
            g.healthy.to_string(),
        ]);
    }
    out.push_str(&gens.render(ctx.format));
    out
}

fn tail(text: &str, lines: usize) -> &str {
    if lines == 0 {
        return "";
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    match body.rmatch_indices('\n').nth(lines - 1) {
        Some((i, _)) => &text[i + 1..],
        None => text,
    }
}

fn log(path: &Path, follow: bool, lines: usize) -> anyhow::Result<()> {
    let mut file = std::fs::File::open(path).with_context(|| format!("no log at {}", path.display()))?;
    let mut text = String::new();
    file.read_to_string(&mut text)?;
    print!("{}", tail(&text, lines));
    if !follow {
        return Ok(());
    }
    let mut pos = file.stream_position()?;
    loop {
        std::thread::sleep(Duration::from_millis(250));
        let len = std::fs::metadata(path)?.len();
        if len < pos {
            // truncated or rotated
            pos = 0;
        }
        if len > pos {
            file.seek(SeekFrom::Start(pos))?;
            let mut chunk = String::new();
            file.read_to_string(&mut chunk)?;
            print!("{chunk}");
            pos = file.stream_position()?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::tail;

    #[test]
    fn tail_keeps_the_last_lines() {
        assert_eq!(tail("a\nb\nc\n", 2), "b\nc\n");
        assert_eq!(tail("a\nb\nc", 1), "c");
        assert_eq!(tail("a\nb\n", 5), "a\nb\n");
        assert_eq!(tail("", 3), "");
    }
}
