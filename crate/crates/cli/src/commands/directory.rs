use std::io::{IsTerminal, Write};
use std::time::Duration;

use anyhow::Context;
use needle_api::wire::{DirectoryView, PatchDirectory};

use crate::cli::{DirectoryCmd, OutputFormat};
use crate::commands::{interactive, parse_bool, prompt_line, usage, Ctx};
use crate::output::{emit, progress_bar, Table};

const POLL: Duration = Duration::from_millis(250);

pub fn run(ctx: &Ctx, cmd: DirectoryCmd) -> anyhow::Result<()> {
    match cmd {
        DirectoryCmd::Add { path, progress } => {
            let absolute = std::path::absolute(&path).with_context(|| path.display().to_string())?;
            let mut view = ctx.client.add_directory(&absolute.to_string_lossy())?;
            if progress {
                view = follow_progress(ctx, view)?;
            }
            emit(ctx.format, &view, || table(&[view.clone()], ctx.format));
        }
        DirectoryCmd::List => {
            let dirs = ctx.client.directories()?;
            emit(ctx.format, &dirs, || table(&dirs, ctx.format));
        }
        DirectoryCmd::Describe { id } => {
            let view = ctx.client.directory(id)?;
            emit(ctx.format, &view, || describe(&view));
        }
        DirectoryCmd::Modify { id, set } => {
            let current = ctx.client.directory(id)?;
            let patch = if set.is_empty() && interactive() {
                let answer = prompt_line("enabled", &current.enabled.to_string())?;
                PatchDirectory {
                    enabled: parse_bool("enabled", &answer)?,
                }
            } else if set.is_empty() {
                return Err(usage("nothing to change; pass --set enabled=<bool>"));
            } else {
                let mut enabled = current.enabled;
                for kv in &set {
                    match kv.split_once('=') {
                        Some(("enabled", v)) => enabled = parse_bool("enabled", v)?,
                        _ => return Err(usage(format!("--set {kv}: only enabled=<bool> is supported"))),
                    }
                }
                PatchDirectory { enabled }
            };
            let view = ctx.client.patch_directory(id, &patch)?;
            emit(ctx.format, &view, || describe(&view));
        }
        DirectoryCmd::Remove { id } => {
            ctx.client.remove_directory(id)?;
            emit(ctx.format, &serde_json::json!({ "removed": id }), || format!("removed directory {id}\n"));
        }
    }
    Ok(())
}

/// Polls until every image is done, drawing the bar on stderr.
fn follow_progress(ctx: &Ctx, mut view: DirectoryView) -> anyhow::Result<DirectoryView> {
    let draw = ctx.format != OutputFormat::Structured;
    let tty = std::io::stderr().is_terminal();
    let mut last = None;
    loop {
        if draw && last != Some(view.done) {
            let bar = progress_bar(view.done, view.total, 30);
            let mut err = std::io::stderr();
            if tty {
                write!(err, "\r{bar}")?;
            } else {
                writeln!(err, "{bar}")?;
            }
            err.flush()?;
            last = Some(view.done);
        }
        if view.progress >= 1.0 {
            if draw && tty {
                eprintln!();
            }
            return Ok(view);
        }
        std::thread::sleep(POLL);
        view = ctx.client.directory(view.id)?;
    }
}

fn table(dirs: &[DirectoryView], format: OutputFormat) -> String {
    let mut t = Table::new(&["id", "path", "enabled", "images", "progress"]);
    for d in dirs {
        t.row(vec![
            d.id.to_string(),
            d.path.clone(),
            d.enabled.to_string(),
            d.image_count.to_string(),
            format!("{:.0}%", d.progress * 100.0),
        ]);
    }
    t.render(format)
}

fn describe(d: &DirectoryView) -> String {
    format!(
        "id: {}\npath: {}\nenabled: {}\nimages: {}\nindexed: {}/{}\nprogress: {:.0}%\ncreated: {}\n",
        d.id,
        d.path,
        d.enabled,
        d.image_count,
        d.done,
        d.total,
        d.progress * 100.0,
        d.created_at_ms
    )
}
