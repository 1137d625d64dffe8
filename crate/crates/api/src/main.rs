use std::sync::Arc;

use anyhow::Context;
use needle_api::backend::api_addr_from_env;
use needle_api::{Backend, BackendOptions};
use needle_core::config::Paths;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let paths = Paths::from_env()?;
    let options = BackendOptions::from_env()?;
    let backend = Arc::new(Backend::open(paths, options).context("open backend")?);
    let report = backend.start_indexing()?;
    log::info!(
        "reconciled: {} added, {} removed, {} reembedded",
        report.added,
        report.removed,
        report.reembedded
    );
    needle_api::run_blocking(backend, &api_addr_from_env())
}
