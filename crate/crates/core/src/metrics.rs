//! Per-round telemetry, regret and hit-fraction analysis, communication
//! accounting, sweep summaries and CSV/JSON persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::GlobalObjective;
use crate::error::{AdkoError, Result};
use crate::lm::LmEvent;
use crate::runtime::{Method, RunConfig};
use crate::space::DesignPoint;
use crate::token::Signal;

/// NaN is written as null (JSON) or an empty field (CSV) and read back as NaN.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
const BOOTSTRAP_SEED: u64 = 0x5EED;

/// One agent's step in one round. Warm-up rounds leave the token and score
/// columns empty (NaN); runs without a model leave `lm_noise_var` empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub run_id: String,
    pub method: Method,
    pub seed: u64,
    pub agent: usize,
    pub round: usize,
    pub theta: usize,
    pub y: f64,
    pub simple_regret: f64,
    pub tokens_sent: usize,
    pub bytes_sent: usize,
    pub memory_size: usize,
    #[serde(with = "nan_as_null")]
    pub memory_mean_fidelity: f64,
    pub signal: Option<Signal>,
    #[serde(with = "nan_as_null")]
    pub advantage: f64,
    #[serde(with = "nan_as_null")]
    pub mean_term: f64,
    #[serde(with = "nan_as_null")]
    pub explore_term: f64,
    #[serde(with = "nan_as_null")]
    pub attract_term: f64,
    #[serde(with = "nan_as_null")]
    pub avoid_term: f64,
    #[serde(with = "nan_as_null")]
    pub lm_noise_var: f64,
    pub lm_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: RunConfig,
    pub records: Vec<RoundRecord>,
    pub cumulative_regret: f64,
    /// First round at which each agent evaluated one of its top-k points.
    pub hit_rounds: Vec<Option<usize>>,
    /// False when some agent ran out of feasible points before `rounds`.
    pub completed: bool,
    /// Every emitted token in wire form, in emission order.
    pub messages: Vec<String>,
    pub lm_events: Vec<LmEvent>,
    pub degrees: Vec<usize>,
    #[serde(with = "nan_as_null")]
    pub fiedler: f64,
}

impl RunLog {
    pub fn recompute_cumulative_regret(&self) -> f64 {
        cumulative_regret(&self.records)
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.config.method, self.config.seed)
    }

    /// Mean of `memory_mean_fidelity` over post-warm-up records.
    pub fn mean_memory_fidelity(&self) -> f64 {
        let v: Vec<f64> = self.records.iter().map(|r| r.memory_mean_fidelity).filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}

pub fn cumulative_regret(records: &[RoundRecord]) -> f64 {
    records.iter().map(|r| r.simple_regret).sum()
}

/// `F(θ*) − F(θ)` on the noiseless objective.
pub fn simple_regret(global: &GlobalObjective, theta: DesignPoint) -> f64 {
    (global.optimum_value - global.values[theta.0]).max(0.0)
}

/// Fraction of (seed, agent) pairs that have hit by evaluation `e`, for
/// `e = 1..=horizon`. `first_hits[s][i]` is the 1-based evaluation at which
/// agent `i` of seed `s` first evaluated a top-k point.
pub fn hit_fraction(first_hits: &[Vec<Option<usize>>], horizon: usize) -> Vec<f64> {
    let total: usize = first_hits.iter().map(Vec::len).sum();
    (1..=horizon)
        .map(|e| {
            if total == 0 {
                return 0.0;
            }
            let hit = first_hits.iter().flatten().filter(|h| matches!(h, Some(r) if *r <= e)).count();
            hit as f64 / total as f64
        })
        .collect()
}

/// First 1-based round at which an agent's record lands in `top`.
pub fn first_hits(records: &[RoundRecord], tops: &[Vec<DesignPoint>]) -> Vec<Option<usize>> {
    let mut out = vec![None; tops.len()];
    for r in records {
        if r.agent < tops.len() && out[r.agent].is_none() && tops[r.agent].contains(&DesignPoint(r.theta)) {
            out[r.agent] = Some(r.round);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommCost {
    pub bytes_total: usize,
    pub bytes_per_round_per_agent: f64,
    /// Bytes received across all links, `Σ s · deg(sender)`.
    pub bytes_delivered: usize,
}

pub fn comm_cost(log: &RunLog) -> CommCost {
    let bytes_total: usize = log.records.iter().map(|r| r.bytes_sent).sum();
    let bytes_delivered =
        log.records.iter().map(|r| r.bytes_sent * log.degrees.get(r.agent).copied().unwrap_or(0)).sum();
    let n = log.records.len();
    CommCost {
        bytes_total,
        bytes_per_round_per_agent: if n == 0 { 0.0 } else { bytes_total as f64 / n as f64 },
        bytes_delivered,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos - pos.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// 95% percentile bootstrap interval of the mean.
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize) -> Interval {
    if xs.is_empty() {
        return Interval { lo: f64::NAN, hi: f64::NAN };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let n = xs.len();
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    Interval { lo: percentile(&means, 0.025), hi: percentile(&means, 0.975) }
}

/// Paired bootstrap interval of `mean(a − b)` over matched seeds.
pub fn bootstrap_diff_ci(a: &[f64], b: &[f64], resamples: usize) -> Result<Interval> {
    if a.len() != b.len() {
        return Err(AdkoError::UnmatchedSeeds(format!("{} vs {} samples", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(bootstrap_mean_ci(&d, resamples))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Flat,
    None,
}

fn trend(v: &[f64]) -> Trend {
    if v.len() < 2 {
        return Trend::Flat;
    }
    let up = v.windows(2).all(|w| w[1] >= w[0]);
    let down = v.windows(2).all(|w| w[1] <= w[0]);
    match (up, down) {
        (true, true) => Trend::Flat,
        (true, false) => Trend::Increasing,
        (false, true) => Trend::Decreasing,
        _ => Trend::None,
    }
}

/// Runs sharing one value of one swept factor.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub factor: String,
    pub value: String,
    pub logs: Vec<RunLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub factor: String,
    pub value: String,
    pub n_seeds: usize,
    pub mean_final_regret: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_memory_fidelity: f64,
    pub regret_trend: Trend,
    pub fidelity_trend: Trend,
}

/// One row per sweep point with the mean final cumulative regret and its
/// bootstrap interval; trend flags are computed per factor in input order.
pub fn regret_decomposition_report(sweep: &[SweepPoint]) -> Result<Vec<ReportRow>> {
    let mut seeds_by_factor: BTreeMap<&str, BTreeSet<u64>> = BTreeMap::new();
    for p in sweep {
        let seeds: BTreeSet<u64> = p.logs.iter().map(|l| l.config.seed).collect();
        if seeds.len() != p.logs.len() {
            return Err(AdkoError::UnmatchedSeeds(format!("{} = {} repeats a seed", p.factor, p.value)));
        }
        match seeds_by_factor.get(p.factor.as_str()) {
            Some(prev) if *prev != seeds => {
                return Err(AdkoError::UnmatchedSeeds(format!(
                    "{} = {} uses seeds {:?}, expected {:?}",
                    p.factor, p.value, seeds, prev
                )))
            }
            Some(_) => {}
            None => {
                seeds_by_factor.insert(&p.factor, seeds);
            }
        }
    }
    let mut rows: Vec<ReportRow> = sweep
        .iter()
        .map(|p| {
            let mut logs: Vec<&RunLog> = p.logs.iter().collect();
            logs.sort_by_key(|l| l.config.seed);
            let finals: Vec<f64> = logs.iter().map(|l| l.final_regret()).collect();
            let fid: Vec<f64> = logs.iter().map(|l| l.mean_memory_fidelity()).filter(|x| x.is_finite()).collect();
            let ci = bootstrap_mean_ci(&finals, BOOTSTRAP_RESAMPLES);
            ReportRow {
                factor: p.factor.clone(),
                value: p.value.clone(),
                n_seeds: finals.len(),
                mean_final_regret: mean(&finals),
                ci_lo: ci.lo,
                ci_hi: ci.hi,
                mean_memory_fidelity: if fid.is_empty() { f64::NAN } else { mean(&fid) },
                regret_trend: Trend::None,
                fidelity_trend: Trend::None,
            }
        })
        .collect();
    for factor in seeds_by_factor.keys() {
        let idx: Vec<usize> = (0..rows.len()).filter(|i| rows[*i].factor == *factor).collect();
        let r = trend(&idx.iter().map(|i| rows[*i].mean_final_regret).collect::<Vec<_>>());
        let f = trend(&idx.iter().map(|i| rows[*i].mean_memory_fidelity).collect::<Vec<_>>());
        for i in idx {
            rows[i].regret_trend = r;
            rows[i].fidelity_trend = f;
        }
    }
    Ok(rows)
}

pub fn write_records_csv<W: Write>(records: &[RoundRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `{method}_{seed}.csv` and `.json` under `dir`; returns the CSV path.
pub fn save_run(log: &RunLog, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = log.file_stem();
    let csv_path = dir.join(format!("{stem}.csv"));
    write_records_csv(&log.records, std::fs::File::create(&csv_path)?)?;
    let json = serde_json::to_vec_pretty(log)?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(csv_path)
}

pub fn load_run_json(path: &Path) -> Result<RunLog> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Aggregator;
    use crate::runtime::ObjectiveSpec;
    use proptest::prelude::*;

    fn record(agent: usize, round: usize, regret: f64) -> RoundRecord {
        RoundRecord {
            run_id: "r".into(),
            method: Method::Adko,
            seed: 1,
            agent,
            round,
            theta: round,
            y: 0.1 * round as f64,
            simple_regret: regret,
            tokens_sent: 1,
            bytes_sent: 100,
            memory_size: 2,
            memory_mean_fidelity: 0.5,
            signal: Some(Signal::Fail),
            advantage: 0.25,
            mean_term: 0.1,
            explore_term: 0.2,
            attract_term: 0.0,
            avoid_term: 0.3,
            lm_noise_var: f64::NAN,
            lm_fallback: false,
        }
    }

    fn log_with(seed: u64, regret: f64) -> RunLog {
        let spec = ObjectiveSpec::SyntheticGp {
            dim: 1,
            steps: 4,
            lengthscale: 0.3,
            signal_variance: 1.0,
            correlation: 1.0,
            noise_std: 0.0,
        };
        let records = vec![record(0, 1, regret)];
        RunLog {
            config: RunConfig::new(Method::Adko, 1, 1, 1, seed, spec),
            cumulative_regret: cumulative_regret(&records),
            records,
            hit_rounds: vec![None],
            completed: true,
            messages: vec![],
            lm_events: vec![],
            degrees: vec![0],
            fiedler: 0.0,
        }
    }

    #[test]
    fn regret_examples() {
        let g = GlobalObjective {
            aggregator: Aggregator::Mean,
            optimum_value: 3.0,
            optimum_point: DesignPoint(1),
            values: vec![1.0, 3.0],
        };
        assert_eq!(simple_regret(&g, DesignPoint(1)), 0.0);
        assert_eq!(simple_regret(&g, DesignPoint(0)), 2.0);
        let shifted = GlobalObjective { optimum_value: 8.0, values: vec![6.0, 8.0], ..g.clone() };
        assert_eq!(simple_regret(&shifted, DesignPoint(0)), simple_regret(&g, DesignPoint(0)));
    }

    #[test]
    fn hit_fraction_fixture() {
        assert_eq!(hit_fraction(&[vec![Some(7)]], 8), vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let curve = hit_fraction(&[vec![Some(3)], vec![Some(5)]], 6);
        assert_eq!(curve, vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(hit_fraction(&[vec![Some(1), Some(1)]], 3), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn first_hits_from_records() {
        let recs = vec![record(0, 1, 0.0), record(1, 1, 0.0), record(0, 2, 0.0), record(1, 3, 0.0)];
        let tops = vec![vec![DesignPoint(2)], vec![DesignPoint(3), DesignPoint(9)]];
        assert_eq!(first_hits(&recs, &tops), vec![Some(2), Some(3)]);
    }

    proptest! {
        #[test]
        fn hit_curves_are_monotone(hits in prop::collection::vec(prop::collection::vec(prop::option::of(1usize..40), 1..5), 1..6)) {
            let c = hit_fraction(&hits, 40);
            prop_assert!(c.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn csv_round_trip_is_lossless(ys in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..20)) {
            let recs: Vec<RoundRecord> = ys
                .iter()
                .enumerate()
                .map(|(i, y)| RoundRecord { y: *y, advantage: y.abs().fract(), ..record(i % 3, i + 1, y.abs()) })
                .collect();
            let mut buf = Vec::new();
            write_records_csv(&recs, &mut buf).unwrap();
            let back = read_records_csv(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), recs.len());
            for (a, b) in recs.iter().zip(&back) {
                prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
                prop_assert_eq!(a.simple_regret.to_bits(), b.simple_regret.to_bits());
                prop_assert!(b.lm_noise_var.is_nan());
                prop_assert_eq!(a.signal, b.signal);
            }
        }
    }

    #[test]
    fn csv_handles_warmup_rows() {
        let mut r = record(0, 1, 0.5);
        r.signal = None;
        r.advantage = f64::NAN;
        let mut buf = Vec::new();
        write_records_csv(&[r], &mut buf).unwrap();
        let back = read_records_csv(&buf[..]).unwrap();
        assert_eq!(back[0].signal, None);
        assert!(back[0].advantage.is_nan());
    }

    #[test]
    fn json_round_trip_keeps_nan_fields() {
        let mut log = log_with(3, 12.5);
        log.records[0].advantage = f64::NAN;
        log.fiedler = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        save_run(&log, dir.path()).unwrap();
        let back = load_run_json(&dir.path().join(format!("{}.json", log.file_stem()))).unwrap();
        assert!(back.records[0].advantage.is_nan());
        assert!(back.fiedler.is_nan());
        assert_eq!(back.cumulative_regret, 12.5);
        assert_eq!(back.records.len(), log.records.len());
    }

    #[test]
    fn comm_cost_accounting() {
        let mut log = log_with(1, 0.0);
        log.records = (0..3).map(|a| record(a, 1, 0.0)).collect();
        log.degrees = vec![2, 2, 2];
        let c = comm_cost(&log);
        assert_eq!(c.bytes_total, 300);
        assert_eq!(c.bytes_delivered, 600);
        assert_eq!(c.bytes_per_round_per_agent, 100.0);
        for r in &mut log.records {
            r.bytes_sent = 0;
            r.tokens_sent = 0;
        }
        assert_eq!(comm_cost(&log).bytes_total, 0);
    }

    #[test]
    fn bootstrap_intervals() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ci = bootstrap_mean_ci(&xs, BOOTSTRAP_RESAMPLES);
        assert!(ci.lo < 3.0 && ci.hi > 3.0);
        assert!(ci.lo >= 1.0 && ci.hi <= 5.0);
        let flat = bootstrap_mean_ci(&[2.0; 10], BOOTSTRAP_RESAMPLES);
        assert_eq!((flat.lo, flat.hi), (2.0, 2.0));
        assert!(bootstrap_diff_ci(&[1.0], &[1.0, 2.0], 10).is_err());
    }

    #[test]
    fn report_rows_and_trends() {
        let point = |v: &str, base: f64| SweepPoint {
            factor: "d_tv".into(),
            value: v.into(),
            logs: (0..3).map(|s| log_with(s, base + s as f64)).collect(),
        };
        let rows = regret_decomposition_report(&[point("0", 1.0), point("0.25", 2.0), point("0.5", 4.0)]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.regret_trend == Trend::Increasing));
        assert_eq!(rows[0].mean_final_regret, 2.0);

        let same = regret_decomposition_report(&[point("0", 1.0), point("0", 1.0)]).unwrap();
        assert_eq!(same[0], same[1]);

        let mut odd = point("0.5", 1.0);
        odd.logs[0] = log_with(99, 1.0);
        assert!(matches!(regret_decomposition_report(&[point("0", 1.0), odd]), Err(AdkoError::UnmatchedSeeds(_))));
    }

    #[test]
    fn cumulative_regret_is_recomputable() {
        let recs: Vec<RoundRecord> = (1..=10).map(|t| record(t % 2, t, 0.1 * t as f64)).collect();
        let log = RunLog { cumulative_regret: cumulative_regret(&recs), records: recs, ..log_with(0, 0.0) };
        assert_eq!(log.recompute_cumulative_regret(), log.cumulative_regret);
    }
}
