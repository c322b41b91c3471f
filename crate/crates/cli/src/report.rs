use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adko::metrics::{load_run_json, regret_decomposition_report, write_report_csv, SweepPoint};
use anyhow::{bail, Context, Result};
use walkdir::WalkDir;

use crate::sweep::PointLabel;

/// Group every run log under `input` by directory and write the summary table.
/// A `point.json` in a directory supplies its factor and value.
pub fn cmd_report(input: &Path, out: &Path) -> Result<()> {
    let mut groups: BTreeMap<PathBuf, Vec<adko::metrics::RunLog>> = BTreeMap::new();
    for entry in WalkDir::new(input).sort_by_file_name() {
        let entry = entry?;
        let p = entry.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !name.ends_with(".json") || name.ends_with(".manifest.json") || name == "point.json" {
            continue;
        }
        let log = load_run_json(p).with_context(|| format!("reading run log {}", p.display()))?;
        groups.entry(p.parent().map(Path::to_path_buf).unwrap_or_default()).or_default().push(log);
    }
    if groups.is_empty() {
        bail!("no run logs found under {}", input.display());
    }
    let mut points = Vec::new();
    for (dir, logs) in groups {
        let label = match std::fs::read_to_string(dir.join("point.json")) {
            Ok(t) => serde_json::from_str::<PointLabel>(&t).with_context(|| format!("{}/point.json", dir.display()))?,
            Err(_) => PointLabel { factor: "dir".into(), value: dir.display().to_string() },
        };
        points.push(SweepPoint { factor: label.factor, value: label.value, logs });
    }
    let rows = regret_decomposition_report(&points)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_report_csv(&rows, std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?)?;
    Ok(())
}
