use std::path::{Path, PathBuf};

use adko::metrics::{regret_decomposition_report, write_report_csv, SweepPoint};
use adko::runtime::RunConfig;
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{base_dir, from_value, parse_strict, resolve_paths};
use crate::exec::run_one;

pub const DEFAULT_CAP: usize = 512;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dot-separated path into the run config, e.g. `lm.d_tv`.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub template: Value,
    #[serde(default)]
    pub axes: Vec<Axis>,
    /// Run seeds shared by every sweep point. Empty means the template seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

/// Label of one sweep point, written next to its runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointLabel {
    pub factor: String,
    pub value: String,
}

#[derive(Debug)]
pub struct Planned {
    pub label: PointLabel,
    pub dir: PathBuf,
    /// (config as hashed, config with resolved paths)
    pub runs: Vec<(RunConfig, RunConfig)>,
}

fn slot<'a>(v: &'a mut Value, path: &str) -> Result<&'a mut Value> {
    let mut cur = v;
    for key in path.split('.') {
        cur = match cur {
            Value::Object(m) => m.get_mut(key),
            _ => None,
        }
        .with_context(|| format!("sweep axis `{path}`: no config field `{key}`"))?;
    }
    Ok(cur)
}

fn label(axes: &[Axis], combo: &[usize]) -> PointLabel {
    if axes.is_empty() {
        return PointLabel { factor: "none".into(), value: "-".into() };
    }
    let factor = axes.iter().map(|a| a.path.as_str()).collect::<Vec<_>>().join(",");
    let value = axes.iter().zip(combo).map(|(a, i)| a.values[*i].to_string()).collect::<Vec<_>>().join(",");
    PointLabel { factor, value }
}

/// Expand and validate every run before anything executes.
pub fn plan(spec: &ExperimentSpec, spec_dir: &Path, out: &Path) -> Result<Vec<Planned>> {
    for a in &spec.axes {
        if a.values.is_empty() {
            bail!("sweep axis `{}` has no values", a.path);
        }
    }
    let points: usize = spec.axes.iter().map(|a| a.values.len()).product();
    let seeds = spec.seeds.len().max(1);
    let total = points.saturating_mul(seeds);
    if total > spec.cap {
        bail!("sweep has {total} runs ({points} points x {seeds} seeds), over the cap of {}", spec.cap);
    }
    // Round-trip the template so every defaulted field is addressable.
    let template: RunConfig = from_value(spec.template.clone(), "template")?;
    let full = serde_json::to_value(&template)?;
    for a in &spec.axes {
        slot(&mut full.clone(), &a.path)?;
    }
    let mut planned = Vec::with_capacity(points);
    for k in 0..points {
        let mut combo = Vec::with_capacity(spec.axes.len());
        let mut rest = k;
        for a in spec.axes.iter().rev() {
            combo.push(rest % a.values.len());
            rest /= a.values.len();
        }
        combo.reverse();
        let mut v = full.clone();
        for (a, i) in spec.axes.iter().zip(&combo) {
            *slot(&mut v, &a.path)? = a.values[*i].clone();
        }
        let lab = label(&spec.axes, &combo);
        let origin = format!("sweep point {} = {}", lab.factor, lab.value);
        let point_cfg = from_value(v, &origin)?;
        let seed_list = if spec.seeds.is_empty() { vec![point_cfg.seed] } else { spec.seeds.clone() };
        let mut runs = Vec::with_capacity(seed_list.len());
        for s in seed_list {
            let mut hashed = point_cfg.clone();
            hashed.seed = s;
            hashed.validate().with_context(|| origin.clone())?;
            let mut resolved = hashed.clone();
            resolve_paths(&mut resolved, spec_dir);
            runs.push((hashed, resolved));
        }
        planned.push(Planned { label: lab, dir: out.join(format!("point_{k:03}")), runs });
    }
    Ok(planned)
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_strict(&text, &path.display().to_string())
}

pub fn cmd_sweep(spec_path: &Path, out: &Path, jobs: usize) -> Result<()> {
    let spec = load_spec(spec_path)?;
    let planned = plan(&spec, &base_dir(spec_path), out)?;
    std::fs::create_dir_all(out)?;
    for p in &planned {
        std::fs::create_dir_all(&p.dir)?;
        std::fs::write(p.dir.join("point.json"), serde_json::to_string_pretty(&p.label)?)?;
    }
    let tasks: Vec<(usize, &RunConfig, &RunConfig)> =
        planned.iter().enumerate().flat_map(|(k, p)| p.runs.iter().map(move |(h, r)| (k, h, r))).collect();
    eprintln!("sweep: {} points, {} runs", planned.len(), tasks.len());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let results: Vec<Result<(usize, adko::metrics::RunLog)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(k, h, r)| {
                run_one(h, r, &planned[*k].dir).map(|(log, _)| (*k, log)).with_context(|| {
                    format!("{} = {}, seed {}", planned[*k].label.factor, planned[*k].label.value, r.seed)
                })
            })
            .collect()
    });
    let mut points: Vec<SweepPoint> = planned
        .iter()
        .map(|p| SweepPoint { factor: p.label.factor.clone(), value: p.label.value.clone(), logs: Vec::new() })
        .collect();
    for r in results {
        let (k, log) = r?;
        points[k].logs.push(log);
    }
    let rows = regret_decomposition_report(&points)?;
    let summary = out.join("summary.csv");
    write_report_csv(&rows, std::fs::File::create(&summary)?)?;
    eprintln!("wrote {}", summary.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn template() -> Value {
        json!({"method":"ADKO","n_agents":2,"rounds":4,"warmup_rounds":1,"seed":0,
            "objective":{"kind":"synthetic_gp","dim":1,"steps":8,"lengthscale":0.3,"correlation":0.5}})
    }

    #[test]
    fn counts_and_labels() {
        let spec = ExperimentSpec {
            template: template(),
            axes: vec![Axis { path: "lm.d_tv".into(), values: vec![json!(0.0), json!(0.5)] }],
            seeds: vec![1, 2, 3],
            cap: DEFAULT_CAP,
        };
        let p = plan(&spec, Path::new("."), Path::new("out")).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.iter().map(|x| x.runs.len()).sum::<usize>(), 6);
        assert_eq!(p[1].label, PointLabel { factor: "lm.d_tv".into(), value: "0.5".into() });
        assert_eq!(p[1].runs[0].0.lm.d_tv, 0.5);
    }

    #[test]
    fn empty_axes_run_once_per_seed() {
        let spec = ExperimentSpec { template: template(), axes: vec![], seeds: vec![4, 5], cap: DEFAULT_CAP };
        let p = plan(&spec, Path::new("."), Path::new("out")).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].runs.len(), 2);
    }

    #[test]
    fn cap_and_unknown_paths() {
        let spec = ExperimentSpec {
            template: template(),
            axes: vec![Axis { path: "budget".into(), values: (1..=30).map(|b| json!(b)).collect() }],
            seeds: (0..20).collect(),
            cap: DEFAULT_CAP,
        };
        let e = plan(&spec, Path::new("."), Path::new("out")).unwrap_err().to_string();
        assert!(e.contains("cap"), "{e}");
        let spec = ExperimentSpec {
            template: template(),
            axes: vec![Axis { path: "lm.dtv".into(), values: vec![json!(0.1)] }],
            seeds: vec![],
            cap: DEFAULT_CAP,
        };
        let e = plan(&spec, Path::new("."), Path::new("out")).unwrap_err().to_string();
        assert!(e.contains("lm.dtv"), "{e}");
    }

    #[test]
    fn out_of_range_axis_value_fails_before_running() {
        let spec = ExperimentSpec {
            template: template(),
            axes: vec![Axis { path: "budget".into(), values: vec![json!(4), json!(0)] }],
            seeds: vec![],
            cap: DEFAULT_CAP,
        };
        assert!(plan(&spec, Path::new("."), Path::new("out")).is_err());
    }
}
