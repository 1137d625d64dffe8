use std::fmt::Write as _;

use needle_api::wire::{QueryOverrides, QueryRequest, QueryResponse};

use crate::cli::{QueryArgs, QueryCmd};
use crate::commands::Ctx;
use crate::output::emit;

pub fn run(ctx: &Ctx, cmd: QueryCmd) -> anyhow::Result<()> {
    let QueryCmd::Run(args) = cmd;
    let overrides = QueryOverrides {
        m: args.m.map(|m| m as usize),
        resolution: args.resolution,
        engines: (!args.engines.is_empty()).then(|| args.engines.clone()),
    };
    let req = QueryRequest {
        prompt: args.prompt.clone(),
        n: args.n as usize,
        overrides: (overrides != QueryOverrides::default()).then_some(overrides),
        seed: args.seed,
    };
    let response = ctx.client.query(&req)?;
    let verbose = args.verbose || ctx.config.verbose;
    emit(ctx.format, &response, || render(&response, &args, verbose, &ctx.config.ui_addr));
    Ok(())
}

fn preview_url(ui_addr: &str, prompt: &str, n: u64) -> String {
    let q: String = url::form_urlencoded::byte_serialize(prompt.as_bytes()).collect();
    format!("http://{ui_addr}/?q={q}&n={n}")
}

pub fn render(r: &QueryResponse, args: &QueryArgs, verbose: bool, ui_addr: &str) -> String {
    let mut out = String::new();
    if r.results.is_empty() {
        out.push_str("no results\n");
    }
    for item in &r.results {
        writeln!(out, "{}. {} {}", item.rank, item.path, item.score).unwrap();
    }
    if verbose {
        writeln!(out, "\nguides:").unwrap();
        for (i, g) in r.guides.iter().enumerate() {
            let lof = g.mean_lof.map_or(String::new(), |v| format!(" meanLOF={v}"));
            let flag = if g.kept { "kept" } else { "dropped" };
            writeln!(out, "  guide {}: engine={} seed={} {flag}{lof}", i + 1, g.engine_name, g.seed).unwrap();
        }
        for s in &r.sources {
            let flag = if s.dropped { " (dropped)" } else { "" };
            writeln!(out, "\nsource guide={} embedder={}{flag}", s.guide_index + 1, s.embedder).unwrap();
            for h in s.hits.iter().take(args.n as usize) {
                let path = h.path.as_deref().unwrap_or("(removed)");
                writeln!(out, "  {}. {} {}", h.rank, path, h.distance).unwrap();
            }
        }
        let t = &r.timings;
        writeln!(
            out,
            "\ntimings: generate={:.1}ms search={:.1}ms fuse={:.1}ms total={:.1}ms",
            t.generate_ms, t.search_ms, t.fuse_ms, t.total_ms
        )
        .unwrap();
    }
    writeln!(out, "preview: {}", preview_url(ui_addr, &args.prompt, args.n)).unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_url_encodes_the_prompt() {
        assert_eq!(
            preview_url("127.0.0.1:8462", "a red circle & more", 10),
            "http://127.0.0.1:8462/?q=a+red+circle+%26+more&n=10"
        );
    }
}
