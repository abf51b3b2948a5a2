//! Experiment runs: seeded query streams evaluated by both engines, with
//! per-interval statistics written as CSV.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{
    evaluate_full, evaluate_linked, feedback, EngineError, EvalOptions, EvalResult, FeedbackScope,
    LeafOrder,
};
use crate::linkstore::{Direction, LinkStore, StoreConfig};
use crate::model::{Network, Query};
use crate::querygen::{
    generate_network, generate_query, stream_rng, GenError, NetworkConfig, QueryConfig, SimRng,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const NETWORK_STREAM: u64 = 0;
const QUERY_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed stats file: {0}")]
    Format(String),
    #[error("series is empty")]
    EmptySeries,
}

fn default_total() -> usize {
    40_000
}

fn default_interval() -> usize {
    2_500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub network: NetworkConfig,
    #[serde(default)]
    pub query: QueryConfig,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default = "default_total")]
    pub total_queries: usize,
    #[serde(default = "default_interval")]
    pub interval_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub store: StoreConfig,
    #[serde(default)]
    pub leaf_order: LeafOrder,
    #[serde(default)]
    pub feedback_scope: FeedbackScope,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.interval_size == 0 {
            return Err(HarnessError::Config(
                "interval_size must be positive".into(),
            ));
        }
        if self.total_queries < self.interval_size {
            return Err(HarnessError::Config(format!(
                "total_queries {} is smaller than interval_size {}",
                self.total_queries, self.interval_size
            )));
        }
        if !self.total_queries.is_multiple_of(self.interval_size) {
            return Err(HarnessError::Config(format!(
                "interval_size {} does not divide total_queries {}",
                self.interval_size, self.total_queries
            )));
        }
        self.network.validate()?;
        self.query.validate()?;
        self.store.validate().map_err(HarnessError::Config)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            direction: self.direction,
            leaf_order: self.leaf_order,
        }
    }
}

const PRESETS: [(&str, &str); 4] = [
    ("5x10_70-30", include_str!("../presets/5x10_70-30.json")),
    ("10x15_70-30", include_str!("../presets/10x15_70-30.json")),
    ("10x30_70-30", include_str!("../presets/10x30_70-30.json")),
    ("10x30_90-10", include_str!("../presets/10x30_90-10.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ExperimentConfig::from_json(text).expect("embedded preset parses"))
}

/// Loads a config from a JSON file, or by preset name when no such file exists.
pub fn load_config(name_or_path: &str) -> Result<ExperimentConfig, HarnessError> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        return ExperimentConfig::from_json(&fs::read_to_string(path)?);
    }
    preset(name_or_path).ok_or_else(|| {
        HarnessError::Config(format!(
            "{name_or_path:?} is neither a file nor a preset ({})",
            preset_names().join(", ")
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalStats {
    pub interval_index: usize,
    pub linked_answered: u64,
    pub nodes_linked: u64,
    pub nodes_full_baseline: u64,
    pub search_reduction_pct: f64,
    pub qos_loss_pct: f64,
    pub optimal_match_count: u64,
    pub worse_count: u64,
    pub mean_worse_gap_pct: f64,
    pub linked_only_nodes: u64,
    /// Baseline nodes for the queries counted in `linked_only_nodes`.
    pub linked_only_full_nodes: u64,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "interval_index",
    "linked_answered",
    "nodes_linked",
    "nodes_full_baseline",
    "search_reduction_pct",
    "qos_loss_pct",
    "optimal_match_count",
    "worse_count",
    "mean_worse_gap_pct",
    "linked_only_nodes",
    "linked_only_full_nodes",
];

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn reduction_pct(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * (1.0 - part as f64 / whole as f64)
    }
}

#[derive(Debug, Default)]
struct IntervalAcc {
    stats: IntervalStats,
    queries: usize,
    qos_sum: f64,
    qos_n: u64,
    gap_sum: f64,
    gap_n: u64,
}

impl IntervalAcc {
    fn add(&mut self, optimal: &EvalResult, linked: &EvalResult) {
        let s = &mut self.stats;
        self.queries += 1;
        s.nodes_linked += linked.nodes_searched;
        s.nodes_full_baseline += optimal.nodes_searched;
        if linked.used_links {
            s.linked_answered += 1;
            if !linked.fell_back_to_full {
                s.linked_only_nodes += linked.nodes_searched;
                s.linked_only_full_nodes += optimal.nodes_searched;
            }
        }
        let opt = &optimal.answer;
        let got = if linked.answer.satisfied {
            linked.answer.value
        } else {
            0
        };
        if opt.satisfied == linked.answer.satisfied && opt.value == linked.answer.value {
            s.optimal_match_count += 1;
        } else if opt.satisfied && got < opt.value {
            s.worse_count += 1;
            if opt.value > 0 {
                self.gap_sum += 100.0 * (opt.value - got) as f64 / opt.value as f64;
                self.gap_n += 1;
            }
        }
        if opt.satisfied && opt.value > 0 {
            self.qos_sum += 100.0 * (opt.value - got) as f64 / opt.value as f64;
            self.qos_n += 1;
        }
    }

    fn finish(self, index: usize) -> IntervalStats {
        let mut s = self.stats;
        s.interval_index = index;
        s.search_reduction_pct = round2(reduction_pct(s.nodes_linked, s.nodes_full_baseline));
        s.qos_loss_pct = if self.qos_n == 0 {
            0.0
        } else {
            round2(self.qos_sum / self.qos_n as f64)
        };
        s.mean_worse_gap_pct = if self.gap_n == 0 {
            0.0
        } else {
            round2(self.gap_sum / self.gap_n as f64)
        };
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsSeries {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub intervals: Vec<IntervalStats>,
}

/// One evaluated query of a run.
#[derive(Debug, Clone)]
pub struct QueryRecord {
    pub index: usize,
    pub query: Query,
    pub optimal: EvalResult,
    pub linked: EvalResult,
}

/// A run in progress. Each [`Experiment::step`] evaluates one query.
pub struct Experiment {
    cfg: ExperimentConfig,
    net: Network,
    store: LinkStore,
    rng: SimRng,
    done: usize,
    acc: IntervalAcc,
    intervals: Vec<IntervalStats>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let net = generate_network(&cfg.network, &mut stream_rng(cfg.seed, NETWORK_STREAM))?;
        Ok(Self {
            store: LinkStore::new(cfg.store),
            rng: stream_rng(cfg.seed, QUERY_STREAM),
            net,
            cfg,
            done: 0,
            acc: IntervalAcc::default(),
            intervals: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn store(&self) -> &LinkStore {
        &self.store
    }

    pub fn queries_done(&self) -> usize {
        self.done
    }

    pub fn is_finished(&self) -> bool {
        self.done >= self.cfg.total_queries
    }

    pub fn intervals(&self) -> &[IntervalStats] {
        &self.intervals
    }

    pub fn step(&mut self) -> Result<QueryRecord, HarnessError> {
        let query = generate_query(&self.cfg.query, &self.cfg.network, &mut self.rng)?;
        let opts = self.cfg.eval_options();
        let optimal = evaluate_full(&self.net, &query, opts)?;
        let linked = evaluate_linked(&self.net, &self.store, &query, opts)?;
        feedback(
            &mut self.store,
            &self.net,
            &linked,
            &query,
            self.cfg.direction,
            self.cfg.feedback_scope,
        );
        self.acc.add(&optimal, &linked);
        let index = self.done;
        self.done += 1;
        if self.acc.queries == self.cfg.interval_size {
            let acc = std::mem::take(&mut self.acc);
            self.intervals.push(acc.finish(self.intervals.len()));
        }
        Ok(QueryRecord {
            index,
            query,
            optimal,
            linked,
        })
    }

    pub fn finish(self) -> StatsSeries {
        StatsSeries {
            name: self.cfg.name.clone(),
            seed: self.cfg.seed,
            config_hash: self.cfg.hash(),
            version: VERSION.to_string(),
            intervals: self.intervals,
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<StatsSeries, HarnessError> {
    run_experiment_with(cfg, |_, _| Ok(()))
}

/// Runs to completion, calling `observe` after every query.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    mut observe: impl FnMut(&Experiment, &QueryRecord) -> Result<(), HarnessError>,
) -> Result<StatsSeries, HarnessError> {
    let mut exp = Experiment::new(cfg.clone())?;
    while !exp.is_finished() {
        let rec = exp.step()?;
        observe(&exp, &rec)?;
    }
    Ok(exp.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub final_search_reduction_pct: f64,
    pub final_qos_loss_pct: f64,
    /// Reduction over queries answered from links without fallback,
    /// against the baseline for those same queries, across the whole run.
    pub linked_only_reduction_pct: f64,
}

pub fn summarize(series: &StatsSeries) -> Result<Summary, HarnessError> {
    let last = series.intervals.last().ok_or(HarnessError::EmptySeries)?;
    let linked: u64 = series.intervals.iter().map(|s| s.linked_only_nodes).sum();
    let full: u64 = series
        .intervals
        .iter()
        .map(|s| s.linked_only_full_nodes)
        .sum();
    Ok(Summary {
        final_search_reduction_pct: last.search_reduction_pct,
        final_qos_loss_pct: last.qos_loss_pct,
        linked_only_reduction_pct: round2(reduction_pct(linked, full)),
    })
}

fn header_line(series: &StatsSeries) -> String {
    format!(
        "# name={} seed={} config_hash={} version={}",
        series.name, series.seed, series.config_hash, series.version
    )
}

pub fn write_csv_to(series: &StatsSeries, mut out: impl Write) -> Result<(), HarnessError> {
    writeln!(out, "{}", header_line(series))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for s in &series.intervals {
        w.write_record([
            s.interval_index.to_string(),
            s.linked_answered.to_string(),
            s.nodes_linked.to_string(),
            s.nodes_full_baseline.to_string(),
            format!("{:.2}", s.search_reduction_pct),
            format!("{:.2}", s.qos_loss_pct),
            s.optimal_match_count.to_string(),
            s.worse_count.to_string(),
            format!("{:.2}", s.mean_worse_gap_pct),
            s.linked_only_nodes.to_string(),
            s.linked_only_full_nodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(series: &StatsSeries, path: &Path) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    write_csv_to(series, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_csv_from(text: &str) -> Result<StatsSeries, HarnessError> {
    let first = text.lines().next().unwrap_or_default();
    let meta = first
        .strip_prefix("# ")
        .ok_or_else(|| HarnessError::Format("missing metadata comment line".into()))?;
    let field = |key: &str| -> Result<String, HarnessError> {
        meta.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .map(str::to_string)
            .ok_or_else(|| HarnessError::Format(format!("metadata lacks {key}")))
    };
    let seed = field("seed")?
        .parse()
        .map_err(|_| HarnessError::Format("bad seed".into()))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    if r.headers()?.iter().ne(CSV_COLUMNS) {
        return Err(HarnessError::Format("unexpected column set".into()));
    }
    let intervals = r.deserialize().collect::<Result<Vec<IntervalStats>, _>>()?;
    Ok(StatsSeries {
        name: field("name")?,
        seed,
        config_hash: field("config_hash")?,
        version: field("version")?,
        intervals,
    })
}

pub fn read_csv(path: &Path) -> Result<StatsSeries, HarnessError> {
    read_csv_from(&fs::read_to_string(path)?)
}

pub fn csv_file_name(series: &StatsSeries) -> String {
    format!("{}_s{}.csv", series.name, series.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: String,
    pub seed: u64,
    pub summary: Summary,
    pub first_optimal_match: u64,
    pub last_optimal_match: u64,
    pub csv: PathBuf,
}

/// Runs every config under every seed in parallel, writing one CSV per run
/// and `sweep_summary.csv` with per-seed rows and per-config mean/stddev.
pub fn sweep(
    configs: &[ExperimentConfig],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SweepRow>, HarnessError> {
    for c in configs {
        c.validate()?;
    }
    fs::create_dir_all(out_dir)?;
    let jobs: Vec<ExperimentConfig> = configs
        .iter()
        .flat_map(|c| {
            seeds
                .iter()
                .map(move |&seed| ExperimentConfig { seed, ..c.clone() })
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|cfg| {
            let series = run_experiment(cfg)?;
            let path = out_dir.join(csv_file_name(&series));
            write_csv(&series, &path)?;
            Ok(SweepRow {
                config: cfg.name.clone(),
                seed: cfg.seed,
                summary: summarize(&series)?,
                first_optimal_match: series.intervals[0].optimal_match_count,
                last_optimal_match: series.intervals[series.intervals.len() - 1]
                    .optimal_match_count,
                csv: path,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    write_sweep_summary(&rows, &out_dir.join("sweep_summary.csv"))?;
    Ok(rows)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn write_sweep_summary(rows: &[SweepRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "config",
        "seed",
        "final_search_reduction_pct",
        "final_qos_loss_pct",
        "linked_only_reduction_pct",
        "first_optimal_match",
        "last_optimal_match",
    ])?;
    let cols = |r: &SweepRow| {
        [
            r.summary.final_search_reduction_pct,
            r.summary.final_qos_loss_pct,
            r.summary.linked_only_reduction_pct,
            r.first_optimal_match as f64,
            r.last_optimal_match as f64,
        ]
    };
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.config.as_str()) {
            names.push(&r.config);
        }
        let mut rec = vec![r.config.clone(), r.seed.to_string()];
        rec.extend(cols(r).iter().map(|v| format!("{v:.2}")));
        w.write_record(&rec)?;
    }
    for name in names {
        let group: Vec<[f64; 5]> = rows.iter().filter(|r| r.config == name).map(cols).collect();
        let stats: Vec<(f64, f64)> = (0..5)
            .map(|i| mean_std(&group.iter().map(|g| g[i]).collect::<Vec<_>>()))
            .collect();
        for (label, pick) in [("mean", 0usize), ("stddev", 1)] {
            let mut rec = vec![name.to_string(), label.to_string()];
            rec.extend(
                stats
                    .iter()
                    .map(|s| format!("{:.2}", if pick == 0 { s.0 } else { s.1 })),
            );
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleMismatch {
    pub index: usize,
    pub query: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleReport {
    pub count: usize,
    pub matched: usize,
    pub mismatches: Vec<OracleMismatch>,
}

/// Checks that link evaluation against an empty store reproduces the full
/// evaluation exactly, over `count` queries on a 5x5 network.
pub fn oracle_check(seed: u64, count: usize) -> Result<OracleReport, HarnessError> {
    let ncfg = NetworkConfig::split(5, 5, 5, 2, 2, 70);
    let qcfg = QueryConfig::default();
    let net = generate_network(&ncfg, &mut stream_rng(seed, NETWORK_STREAM))?;
    let mut rng = stream_rng(seed, QUERY_STREAM);
    let store = LinkStore::default();
    let mut report = OracleReport {
        count,
        matched: 0,
        mismatches: Vec::new(),
    };
    for index in 0..count {
        let q = generate_query(&qcfg, &ncfg, &mut rng)?;
        let full = evaluate_full(&net, &q, EvalOptions::default())?;
        let linked = evaluate_linked(&net, &store, &q, EvalOptions::default())?;
        if full.answer == linked.answer && full.nodes_searched == linked.nodes_searched {
            report.matched += 1;
        } else {
            report.mismatches.push(OracleMismatch {
                index,
                query: q.render(),
                detail: format!(
                    "full {:?} in {} nodes, linked {:?} in {} nodes",
                    full.answer, full.nodes_searched, linked.answer, linked.nodes_searched
                ),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(total: usize, interval: usize) -> ExperimentConfig {
        ExperimentConfig {
            total_queries: total,
            interval_size: interval,
            ..preset("5x10_70-30").unwrap()
        }
    }

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name, name);
            cfg.validate().unwrap();
            assert_eq!((cfg.total_queries, cfg.interval_size), (40_000, 2_500));
        }
    }

    #[test]
    fn interval_must_divide_total() {
        let err = small(1000, 300).validate().unwrap_err();
        assert!(err.to_string().contains("does not divide"));
        assert!(small(100, 200).validate().is_err());
    }

    #[test]
    fn single_interval_run() {
        let s = run_experiment(&small(250, 250)).unwrap();
        assert_eq!(s.intervals.len(), 1);
        let i = s.intervals[0];
        assert!(i.linked_answered <= 250);
        assert!(i.search_reduction_pct <= 100.0);
        assert!(i.optimal_match_count + i.worse_count <= 250);
    }

    #[test]
    fn interval_count() {
        assert_eq!(run_experiment(&small(400, 100)).unwrap().intervals.len(), 4);
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let s = run_experiment(&small(400, 25)).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 17);
        assert!(text.starts_with(&format!(
            "# name=5x10_70-30 seed=0 config_hash={}",
            s.config_hash
        )));
        assert_eq!(read_csv_from(&text).unwrap(), s);
    }

    #[test]
    fn summarize_empty_series_errors() {
        let s = StatsSeries {
            name: "x".into(),
            seed: 0,
            config_hash: String::new(),
            version: String::new(),
            intervals: vec![],
        };
        assert!(matches!(summarize(&s), Err(HarnessError::EmptySeries)));
    }

    #[test]
    fn perfect_series_has_no_loss() {
        let i = IntervalStats {
            linked_answered: 10,
            nodes_linked: 50,
            nodes_full_baseline: 100,
            search_reduction_pct: 50.0,
            optimal_match_count: 10,
            linked_only_nodes: 50,
            linked_only_full_nodes: 100,
            ..Default::default()
        };
        let s = StatsSeries {
            name: "x".into(),
            seed: 0,
            config_hash: String::new(),
            version: String::new(),
            intervals: vec![i],
        };
        let sum = summarize(&s).unwrap();
        assert_eq!(sum.final_qos_loss_pct, 0.0);
        assert_eq!(sum.linked_only_reduction_pct, 50.0);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = small(400, 100);
        let b = ExperimentConfig {
            seed: 9,
            ..a.clone()
        };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn config_json_round_trip() {
        let a = preset("10x30_90-10").unwrap();
        assert_eq!(ExperimentConfig::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn oracle_small() {
        let r = oracle_check(3, 50).unwrap();
        assert_eq!(r.matched, 50, "{:?}", r.mismatches);
    }
}
