use std::path::{Path, PathBuf};

use adko::graph::GraphKind;
use adko::runtime::{ObjectiveSpec, RunConfig};
use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

/// Strict parse with the offending JSON path in the error.
pub fn parse_strict<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("{origin}: at `{path}`: {}", e.into_inner())
    })
}

pub fn from_value(v: serde_json::Value, origin: &str) -> Result<RunConfig> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("{origin}: at `{path}`: {}", e.into_inner())
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_strict(&text, &path.display().to_string())
}

/// Make relative table and edge-list paths relative to `base`.
pub fn resolve_paths(cfg: &mut RunConfig, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let ObjectiveSpec::Table { path, .. } = &mut cfg.objective {
        fix(path);
    }
    if let GraphKind::EdgeList { path } = &mut cfg.graph {
        fix(path);
    }
}

pub fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// SHA-256 of the re-serialized config, so formatting and key order in the
/// source file do not matter and defaults hash the same as explicit values.
pub fn config_hash(cfg: &RunConfig) -> String {
    let canon = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(canon.as_bytes()))
}
