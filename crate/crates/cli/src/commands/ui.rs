use std::fs::OpenOptions;
use std::os::unix::process::CommandExt;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};

use crate::cli::UiCmd;
use crate::commands::Ctx;

const PLACEHOLDER: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>needle</title></head>
<body><h1>needle</h1>
<p>The web UI bundle is not built. Build it and pass its directory with
<code>needlectl ui start --assets DIR</code>.</p>
<p>API: <a href=\"{api}/v1/status\">{api}/v1/status</a></p>
</body></html>
";

pub fn run(ctx: &Ctx, cmd: UiCmd) -> anyhow::Result<()> {
    match cmd {
        UiCmd::Start { assets } => start(ctx, assets),
        UiCmd::Stop => stop(ctx),
        UiCmd::Serve { assets } => serve(ctx, assets),
    }
}

fn ui_url(ctx: &Ctx) -> String {
    format!("http://{}/", ctx.config.ui_addr)
}

fn responds(url: &str) -> bool {
    ureq::get(url).timeout(Duration::from_secs(2)).call().is_ok()
}

fn start(ctx: &Ctx, assets: Option<PathBuf>) -> anyhow::Result<()> {
    let url = ui_url(ctx);
    if responds(&url) {
        println!("already running at {url}");
        return Ok(());
    }
    let log_path = ctx.paths.home.join("logs").join("ui.log");
    std::fs::create_dir_all(log_path.parent().expect("log file has a parent"))?;
    let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
    let mut command = Command::new(std::env::current_exe().context("locate needlectl")?);
    command.args(["ui", "serve"]);
    if let Some(dir) = assets {
        command.arg("--assets").arg(std::path::absolute(dir)?);
    }
    let mut child = command
        .env("NEEDLE_UI_ADDR", &ctx.config.ui_addr)
        .env("NEEDLE_API_ADDR", &ctx.config.api_addr)
        .env("NEEDLE_HOME", &ctx.paths.home)
        .stdin(Stdio::null())
        .stdout(log.try_clone()?)
        .stderr(log)
        .process_group(0)
        .spawn()
        .context("spawn ui server")?;
    let deadline = Instant::now() + Duration::from_secs(15);
    while !responds(&url) {
        if let Some(status) = child.try_wait()? {
            bail!("ui server exited with {status}; see {}", log_path.display());
        }
        if Instant::now() > deadline {
            bail!("ui server did not answer at {url}");
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    std::fs::write(ctx.paths.ui_pid_file(), child.id().to_string())?;
    println!("{url}");
    Ok(())
}

fn stop(ctx: &Ctx) -> anyhow::Result<()> {
    let pid_file = ctx.paths.ui_pid_file();
    let pid = match std::fs::read_to_string(&pid_file) {
        Ok(p) => p.trim().to_string(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            println!("not running");
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    pid.parse::<u32>().with_context(|| format!("bad pid in {}", pid_file.display()))?;
    let status = Command::new("kill").arg(&pid).status().context("run kill")?;
    std::fs::remove_file(&pid_file)?;
    if status.success() {
        println!("stopped");
    } else {
        println!("not running");
    }
    Ok(())
}

/// Maps a request path onto a file under `root`, refusing to leave it.
fn resolve(root: &Path, url_path: &str) -> Option<PathBuf> {
    let path = url_path.split(['?', '#']).next().unwrap_or("/");
    let mut out = root.to_path_buf();
    for part in Path::new(path.trim_start_matches('/')).components() {
        match part {
            Component::Normal(p) => out.push(p),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if out.is_dir() {
        out.push("index.html");
    }
    Some(out)
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        _ => "application/octet-stream",
    }
}

fn serve(ctx: &Ctx, assets: Option<PathBuf>) -> anyhow::Result<()> {
    let root = assets
        .or_else(|| std::env::var_os("NEEDLE_UI_DIR").map(PathBuf::from))
        .unwrap_or_else(|| ctx.paths.home.join("ui"));
    let api = format!("http://{}", ctx.config.api_addr);
    let server = tiny_http::Server::http(&ctx.config.ui_addr)
        .map_err(|e| anyhow::anyhow!("bind {}: {e}", ctx.config.ui_addr))?;
    eprintln!("serving {} at http://{}/", root.display(), ctx.config.ui_addr);
    let header = |v: &str| tiny_http::Header::from_bytes("Content-Type", v).expect("valid header");
    for request in server.incoming_requests() {
        let url = request.url().to_string();
        let response = if url == "/config.json" {
            let body = serde_json::json!({ "apiBase": api }).to_string();
            tiny_http::Response::from_data(body).with_header(header("application/json"))
        } else {
            match resolve(&root, &url).filter(|p| p.is_file()) {
                Some(file) => {
                    let bytes = std::fs::read(&file)?;
                    tiny_http::Response::from_data(bytes).with_header(header(content_type(&file)))
                }
                // client-side routes fall back to the app shell
                None if root.join("index.html").is_file() => {
                    tiny_http::Response::from_data(std::fs::read(root.join("index.html"))?)
                        .with_header(header("text/html; charset=utf-8"))
                }
                None => tiny_http::Response::from_data(PLACEHOLDER.replace("{api}", &api))
                    .with_header(header("text/html; charset=utf-8")),
            }
        };
        if let Err(e) = request.respond(response) {
            eprintln!("respond to {url}: {e}");
        }
    }
    Ok(())
}
