use anyhow::Context;
use needle_core::embedders::Builtin;
use needle_core::synthbench::{evaluate, render_per_query, render_table, Bench, OracleRetriever, RandomRetriever};

use crate::cli::{BenchCmd, OutputFormat};
use crate::commands::Ctx;

pub fn run(ctx: &Ctx, cmd: BenchCmd) -> anyhow::Result<()> {
    let BenchCmd::Run {
        corpus,
        corpus_seed,
        depth,
        resolution,
        out,
    } = cmd;
    let depth = depth.min(corpus);
    let bench = Bench::build(corpus, corpus_seed)?;
    let embedders = [Builtin::ColorHist64, Builtin::Grid64];
    let mut reports = vec![evaluate(
        &bench.queries,
        &bench.pipeline_at_depth(&embedders, 2, resolution, depth),
    )?];
    for e in embedders {
        reports.push(evaluate(
            &bench.queries,
            &bench.pipeline_at_depth(&[e], 1, resolution, depth),
        )?);
    }
    reports.push(evaluate(&bench.queries, &OracleRetriever)?);
    reports.push(evaluate(
        &bench.queries,
        &RandomRetriever {
            corpus_ids: bench.corpus.iter().map(|i| i.id).collect(),
            seed: 99,
        },
    )?);
    if let Some(path) = &out {
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)
            .with_context(|| path.display().to_string())?;
    }
    if ctx.format == OutputFormat::Structured {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        println!(
            "corpus {corpus} (seed {corpus_seed}), {} queries, depth {depth}, {resolution} guides\n",
            bench.queries.len()
        );
        print!("{}", render_table(&reports));
        if ctx.config.verbose {
            print!("\n{}", render_per_query(&reports));
        }
    }
    Ok(())
}
