use std::path::{Path, PathBuf};
use std::time::Instant;

use adko::lm::ExternalLm;
use adko::metrics::{save_run, RunLog};
use adko::runtime::{run_with_lm, Method, RunConfig};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::config_hash;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: &'static str,
    pub seed: u64,
    pub method: Method,
    pub wall_time_secs: f64,
    pub completed: bool,
    pub files: Vec<PathBuf>,
}

/// External model from the environment, only for the method that uses one.
fn external_for(cfg: &RunConfig) -> Result<Option<ExternalLm>> {
    if cfg.method != Method::AdkoLm {
        return Ok(None);
    }
    ExternalLm::from_env().transpose().context("starting external language model")
}

/// Run once and write `{method}_{seed}.csv/.json` plus `manifest.json` under `out`.
/// `hashed` is the config as written by the user, before path resolution.
pub fn run_one(hashed: &RunConfig, resolved: &RunConfig, out: &Path) -> Result<(RunLog, Manifest)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let start = Instant::now();
    let log = run_with_lm(resolved, external_for(resolved)?)?;
    let wall = start.elapsed().as_secs_f64();
    let csv = save_run(&log, out)?;
    let stem = log.file_stem();
    let manifest = Manifest {
        config_hash: config_hash(hashed),
        version: env!("CARGO_PKG_VERSION"),
        seed: resolved.seed,
        method: resolved.method,
        wall_time_secs: wall,
        completed: log.completed,
        files: vec![csv, out.join(format!("{stem}.json"))],
    };
    let path = out.join(format!("{stem}.manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok((log, manifest))
}
