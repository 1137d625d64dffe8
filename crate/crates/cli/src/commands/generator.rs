use std::collections::BTreeMap;

use needle_api::wire::{EngineFlags, Generators, PatchGenerators};

use crate::cli::GeneratorCmd;
use crate::commands::{interactive, parse_bool, prompt_line, usage, Ctx};
use crate::output::{emit, Table};

pub fn run(ctx: &Ctx, cmd: GeneratorCmd) -> anyhow::Result<()> {
    match cmd {
        GeneratorCmd::List => {
            let gens = ctx.client.generators()?;
            emit(ctx.format, &gens, || render(&gens, ctx));
        }
        GeneratorCmd::Config { set, order } => {
            let current = ctx.client.generators()?;
            let mut patch = if set.is_empty() && order.is_empty() && interactive() {
                edit(&current)?
            } else {
                flags_patch(&set, order)?
            };
            if patch.ordered_names.is_none() && patch.per_engine.is_none() {
                return Err(usage("nothing to change; pass --set <engine>.enabled=<bool> or --order a,b"));
            }
            patch.revision = Some(current.revision);
            let gens = ctx.client.patch_generators(&patch)?;
            emit(ctx.format, &gens, || render(&gens, ctx));
        }
    }
    Ok(())
}

fn flags_patch(set: &[String], order: Vec<String>) -> anyhow::Result<PatchGenerators> {
    let mut per_engine = BTreeMap::new();
    for kv in set {
        let parsed = kv
            .split_once('=')
            .and_then(|(k, v)| k.strip_suffix(".enabled").map(|name| (name, v)));
        let Some((name, value)) = parsed else {
            return Err(usage(format!("--set {kv}: expected <engine>.enabled=<bool>")));
        };
        per_engine.insert(
            name.to_string(),
            EngineFlags {
                enabled: parse_bool(kv, value)?,
            },
        );
    }
    Ok(PatchGenerators {
        revision: None,
        ordered_names: (!order.is_empty()).then_some(order),
        per_engine: (!per_engine.is_empty()).then_some(per_engine),
    })
}

fn edit(current: &Generators) -> anyhow::Result<PatchGenerators> {
    let names: Vec<String> = current.engines.iter().map(|e| e.name.clone()).collect();
    let order = prompt_line("priority order (comma separated)", &names.join(","))?;
    let ordered: Vec<String> = order.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    let mut per_engine = BTreeMap::new();
    for e in &current.engines {
        let answer = prompt_line(&format!("{} enabled", e.name), &e.enabled.to_string())?;
        per_engine.insert(
            e.name.clone(),
            EngineFlags {
                enabled: parse_bool("enabled", &answer)?,
            },
        );
    }
    Ok(PatchGenerators {
        revision: None,
        ordered_names: Some(ordered),
        per_engine: Some(per_engine),
    })
}

fn render(gens: &Generators, ctx: &Ctx) -> String {
    let mut t = Table::new(&["priority", "name", "kind", "enabled", "healthy"]);
    for e in &gens.engines {
        t.row(vec![
            e.priority.to_string(),
            e.name.clone(),
            e.kind.clone(),
            e.enabled.to_string(),
            e.healthy.to_string(),
        ]);
    }
    t.render(ctx.format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_flags_parse() {
        let p = flags_patch(&["mock.enabled=false".into()], vec![]).unwrap();
        assert!(!p.per_engine.unwrap()["mock"].enabled);
        assert!(flags_patch(&["mock=false".into()], vec![]).is_err());
        assert!(flags_patch(&["mock.enabled=maybe".into()], vec![]).is_err());
        let p = flags_patch(&[], vec!["b".into(), "a".into()]).unwrap();
        assert_eq!(p.ordered_names.unwrap(), ["b", "a"]);
    }
}
