//! The simulation study: one simulated series per (condition, repeat), every
//! method fitted to the same series, results written to a sorted CSV and
//! summarized in a JSON report.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{draw_p_stay, draw_rho, Generator, GridConfig, Method};
use crate::continuous::{fit_gaussian_mle, Ridge};
use crate::data::{median_binarize, Seed, TimeSeriesMatrix};
use crate::discrete::{assign_basins, fit_ising_ple};
use crate::error::{Error, Result};
use crate::eval::{
    benjamini_hochberg, bootstrap_ci, default_kappa, score_labels, wilcoxon_signed_rank,
    MetricReport,
};
use crate::gcn::{node_features, train};
use crate::graph::FunctionalGraph;
use crate::mixture::{fit_gmm, map_labels};
use crate::simulate::{
    calibrate_kuramoto, simulate_kuramoto, simulate_slds, KuramotoConfig, SimOutput, SldsConfig,
};

/// Recovered labels of one method on one series.
pub fn recover_labels(
    method: Method,
    x: &TimeSeriesMatrix,
    k: usize,
    grid: &GridConfig,
    seed: Seed,
) -> Result<Vec<usize>> {
    match method {
        Method::Del => {
            let q = median_binarize(x);
            let fit = fit_ising_ple(&q, grid.lambda)?;
            Ok(assign_basins(&q, &fit.model).labels)
        }
        Method::Cel => {
            fit_gaussian_mle(x, Ridge::default())?;
            Ok(vec![0; x.n_time()])
        }
        Method::CelMix => {
            let fit = fit_gmm(x, k, seed)?;
            map_labels(x, &fit.model)
        }
        Method::GcnCel => {
            let graph = FunctionalGraph::build(x, grid.delta)?;
            let features = node_features(x, &graph)?;
            let rank = grid.rank.unwrap_or(8).min(x.n_vars());
            train(x, &graph, &features, rank, &grid.gcn, seed)?;
            Ok(vec![0; x.n_time()])
        }
    }
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub generator: Generator,
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub snr_index: usize,
}

impl Condition {
    pub fn tag(&self, grid: &GridConfig) -> String {
        format!(
            "{}/N{}/K{}/T{}/snr={}",
            self.generator, self.n, self.k, self.t, grid.snr_levels[self.snr_index]
        )
    }
}

pub fn conditions(grid: &GridConfig) -> Vec<Condition> {
    let mut out = Vec::new();
    for &generator in &grid.generators {
        for &n in &grid.ns {
            for &k in &grid.ks {
                for &t in &grid.ts {
                    for snr_index in 0..grid.snr_levels.len() {
                        out.push(Condition {
                            generator,
                            n,
                            k,
                            t,
                            snr_index,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Seed of one simulation unit, derived from the base seed and a label of
/// the condition and repeat.
pub fn unit_seed(grid: &GridConfig, cond: &Condition, repeat: usize) -> Seed {
    Seed(grid.base_seed).derive(&format!("{}/rep{repeat}", cond.tag(grid)))
}

pub fn simulate_unit(grid: &GridConfig, cond: &Condition, seed: Seed) -> Result<SimOutput> {
    let snr = grid.snr_levels[cond.snr_index].target();
    let p_stay = grid.p_stay.unwrap_or_else(|| draw_p_stay(seed));
    match cond.generator {
        Generator::Slds => {
            let rho = grid.rho.unwrap_or_else(|| draw_rho(seed));
            let cfg = SldsConfig::generate(
                cond.n,
                cond.k,
                cond.t,
                rho,
                p_stay,
                snr,
                seed.derive("config"),
            )?;
            simulate_slds(&cfg, seed.derive("run"))
        }
        Generator::Kuramoto => {
            let base = KuramotoConfig::from_params(
                cond.n,
                cond.k,
                cond.t,
                p_stay,
                &grid.kuramoto,
                seed.derive("config"),
            )?;
            let cfg = match grid.kuramoto.alpha {
                Some(_) => base,
                None => calibrate_kuramoto(&base, snr, seed.derive("run"))?,
            };
            simulate_kuramoto(&cfg, seed.derive("run"))
        }
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub generator: Generator,
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr: String,
    pub repeat: usize,
    pub seed: u64,
    #[serde(rename = "BR")]
    pub br: Option<f64>,
    #[serde(rename = "TMA")]
    pub tma: Option<f64>,
    #[serde(rename = "SDA")]
    pub sda: Option<f64>,
    pub kappa: Option<f64>,
    pub n_basins: Option<usize>,
    /// Count of true states whose transition row was never observed.
    pub unvisited_rows: Option<usize>,
    /// Empty on success, otherwise the failure.
    pub error: String,
}

pub type RowKey = (Generator, usize, usize, usize, String, usize, Method);

impl ResultRow {
    pub fn key(&self) -> RowKey {
        (
            self.generator,
            self.n,
            self.k,
            self.t,
            self.snr.clone(),
            self.repeat,
            self.method,
        )
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Br => self.br,
            Metric::Tma => self.tma,
            Metric::Sda => self.sda,
        }
    }
}

/// All method rows of one simulation unit. Failures become error rows.
pub fn run_unit(
    grid: &GridConfig,
    cond: &Condition,
    repeat: usize,
    methods: &[Method],
) -> Vec<ResultRow> {
    let seed = unit_seed(grid, cond, repeat);
    let blank = |method: Method, error: String| ResultRow {
        generator: cond.generator,
        method,
        n: cond.n,
        k: cond.k,
        t: cond.t,
        snr: grid.snr_levels[cond.snr_index].to_string(),
        repeat,
        seed: seed.0,
        br: None,
        tma: None,
        sda: None,
        kappa: None,
        n_basins: None,
        unvisited_rows: None,
        error,
    };
    let sim = simulate_unit(grid, cond, seed).and_then(|sim| {
        let kappa = match grid.kappa {
            Some(k) => k,
            None => default_kappa(&sim.centers)?,
        };
        Ok((sim, kappa))
    });
    let (sim, kappa) = match sim {
        Ok(v) => v,
        Err(e) => {
            log::warn!("{} rep {repeat}: simulation failed: {e}", cond.tag(grid));
            return methods
                .iter()
                .map(|&m| blank(m, format!("simulate: {e}")))
                .collect();
        }
    };
    methods
        .iter()
        .map(|&method| {
            let scored: Result<MetricReport> =
                recover_labels(method, &sim.x, cond.k, grid, seed.derive(method.as_str()))
                    .and_then(|labels| {
                        score_labels(
                            sim.x.matrix(),
                            &labels,
                            &sim.z,
                            &sim.centers,
                            &sim.p_star,
                            kappa,
                        )
                    });
            match scored {
                Ok(r) => ResultRow {
                    br: Some(r.br),
                    tma: Some(r.tma),
                    sda: Some(r.sda),
                    kappa: Some(r.kappa),
                    n_basins: Some(r.n_recovered),
                    unvisited_rows: Some(r.unvisited_rows.len()),
                    ..blank(method, String::new())
                },
                Err(e) => {
                    log::warn!("{} rep {repeat} {method}: {e}", cond.tag(grid));
                    blank(method, e.to_string())
                }
            }
        })
        .collect()
}

/// Rows of an existing results file. A truncated final line from an
/// interrupted run is ignored.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    let mut records = rdr.deserialize::<ResultRow>().peekable();
    while let Some(rec) = records.next() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) if records.peek().is_none() => {
                log::warn!("ignoring unreadable last row of {}: {e}", path.display())
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(rows)
}

pub fn parse_results<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by_key(|r| r.key());
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    let mut w = csv::Writer::from_path(&tmp)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    drop(w);
    fs::rename(tmp, path)?;
    Ok(())
}

pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.json";

/// Runs every missing (condition, repeat) unit, appending rows to
/// `out_dir/results.csv` as they finish, then rewrites it in canonical order
/// and writes `report.json`. Rows already present are kept.
pub fn run_grid(
    grid: &GridConfig,
    out_dir: &Path,
    parallelism: usize,
) -> Result<(Vec<ResultRow>, Report)> {
    grid.validate()?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(RESULTS_FILE);
    let mut rows = if path.exists() {
        read_results(&path)?
    } else {
        Vec::new()
    };
    let done: HashSet<RowKey> = rows.iter().map(ResultRow::key).collect();
    // rewrite so that any truncated tail is gone before appending
    write_results(&path, &rows)?;

    let mut work = Vec::new();
    for cond in conditions(grid) {
        for repeat in 0..grid.repeats {
            let snr = grid.snr_levels[cond.snr_index].to_string();
            let missing: Vec<Method> = grid
                .methods
                .iter()
                .copied()
                .filter(|&m| {
                    !done.contains(&(
                        cond.generator,
                        cond.n,
                        cond.k,
                        cond.t,
                        snr.clone(),
                        repeat,
                        m,
                    ))
                })
                .collect();
            if !missing.is_empty() {
                work.push((cond, repeat, missing));
            }
        }
    }
    log::info!(
        "{} units to run, {} rows already present",
        work.len(),
        rows.len()
    );

    let file = OpenOptions::new().append(true).open(&path)?;
    let writer = Mutex::new(
        csv::WriterBuilder::new()
            .has_headers(rows.is_empty())
            .from_writer(file),
    );
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let fresh: Vec<ResultRow> = pool.install(|| {
        work.par_iter()
            .flat_map_iter(|(cond, repeat, methods)| {
                let unit = run_unit(grid, cond, *repeat, methods);
                let mut w = writer.lock().expect("results writer");
                for r in &unit {
                    if let Err(e) = w.serialize(r) {
                        log::error!("could not append result row: {e}");
                    }
                }
                let _ = w.flush();
                unit
            })
            .collect()
    });
    drop(writer);
    rows.extend(fresh);
    sort_rows(&mut rows);
    write_results(&path, &rows)?;
    let report = build_report(&rows, grid);
    fs::write(
        out_dir.join(REPORT_FILE),
        serde_json::to_vec_pretty(&report)?,
    )?;
    Ok((rows, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "BR")]
    Br,
    #[serde(rename = "TMA")]
    Tma,
    #[serde(rename = "SDA")]
    Sda,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Br, Metric::Tma, Metric::Sda];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Br => "BR",
            Metric::Tma => "TMA",
            Metric::Sda => "SDA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_error: usize,
    pub metrics: BTreeMap<Metric, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub generator: Generator,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr: String,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestFlag {
    Ok,
    NoNonzeroDiffs,
    TooFewPairs,
}

/// Paired comparison `a - b` on one metric within one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub generator: Generator,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr: String,
    pub a: Method,
    pub b: Method,
    pub metric: Metric,
    pub n_pairs: usize,
    pub median_diff: Option<f64>,
    pub mean_diff: Option<f64>,
    pub p_value: Option<f64>,
    pub exact: Option<bool>,
    pub p_adjusted: Option<f64>,
    pub rejected: bool,
    pub flag: TestFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub q: f64,
    pub ci_level: f64,
    pub n_boot: usize,
    pub conditions: Vec<ConditionSummary>,
    /// One BH family covering every test with a p-value.
    pub comparisons: Vec<Comparison>,
}

fn median(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| crate::data::median(v))
}

/// Aggregates result rows per condition: means with percentile bootstrap
/// intervals, then paired signed-rank tests of each comparison with
/// Benjamini-Hochberg control across all of them.
pub fn build_report(rows: &[ResultRow], grid: &GridConfig) -> Report {
    type CondKey = (Generator, usize, usize, usize, String);
    let mut by_cond: BTreeMap<CondKey, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_cond
            .entry((r.generator, r.n, r.k, r.t, r.snr.clone()))
            .or_default()
            .push(r);
    }
    let base = Seed(grid.base_seed);
    let mut conditions = Vec::new();
    let mut comparisons = Vec::new();
    for ((generator, n, k, t, snr), cond_rows) in &by_cond {
        let tag = format!("{generator}/N{n}/K{k}/T{t}/snr={snr}");
        let mut methods: Vec<Method> = cond_rows.iter().map(|r| r.method).collect();
        methods.sort();
        methods.dedup();
        let summaries = methods
            .iter()
            .map(|&method| {
                let mine: Vec<&&ResultRow> =
                    cond_rows.iter().filter(|r| r.method == method).collect();
                let n_ok = mine.iter().filter(|r| r.error.is_empty()).count();
                let metrics = Metric::ALL
                    .iter()
                    .map(|&m| {
                        let vals: Vec<f64> = mine.iter().filter_map(|r| r.metric(m)).collect();
                        let mean = (!vals.is_empty())
                            .then(|| vals.iter().sum::<f64>() / vals.len() as f64);
                        let ci = bootstrap_ci(
                            &vals,
                            grid.ci_level,
                            grid.n_boot,
                            base.derive(&format!("boot/{tag}/{method}/{}", m.as_str())),
                        )
                        .ok();
                        (m, MetricSummary { mean, ci })
                    })
                    .collect();
                MethodSummary {
                    method,
                    n_ok,
                    n_error: mine.len() - n_ok,
                    metrics,
                }
            })
            .collect();
        conditions.push(ConditionSummary {
            generator: *generator,
            n: *n,
            k: *k,
            t: *t,
            snr: snr.clone(),
            methods: summaries,
        });

        for [a, b] in grid.active_comparisons() {
            for metric in Metric::ALL {
                let value = |m: Method, rep: usize| {
                    cond_rows
                        .iter()
                        .find(|r| r.method == m && r.repeat == rep)
                        .and_then(|r| r.metric(metric))
                };
                let mut reps: Vec<usize> = cond_rows.iter().map(|r| r.repeat).collect();
                reps.sort_unstable();
                reps.dedup();
                let diffs: Vec<f64> = reps
                    .iter()
                    .filter_map(|&rep| Some(value(a, rep)? - value(b, rep)?))
                    .collect();
                let mut cmp = Comparison {
                    generator: *generator,
                    n: *n,
                    k: *k,
                    t: *t,
                    snr: snr.clone(),
                    a,
                    b,
                    metric,
                    n_pairs: diffs.len(),
                    median_diff: median(&diffs),
                    mean_diff: (!diffs.is_empty())
                        .then(|| diffs.iter().sum::<f64>() / diffs.len() as f64),
                    p_value: None,
                    exact: None,
                    p_adjusted: None,
                    rejected: false,
                    flag: TestFlag::Ok,
                };
                if diffs.iter().all(|d| *d == 0.0) {
                    cmp.flag = TestFlag::NoNonzeroDiffs;
                    cmp.p_value = Some(1.0);
                } else {
                    match wilcoxon_signed_rank(&diffs) {
                        Ok(w) => {
                            cmp.p_value = Some(w.p_value);
                            cmp.exact = Some(w.exact);
                        }
                        Err(_) => cmp.flag = TestFlag::TooFewPairs,
                    }
                }
                comparisons.push(cmp);
            }
        }
    }
    let tested: Vec<usize> = (0..comparisons.len())
        .filter(|&i| comparisons[i].flag == TestFlag::Ok)
        .collect();
    let ps: Vec<f64> = tested
        .iter()
        .map(|&i| comparisons[i].p_value.expect("tested"))
        .collect();
    if let Ok(bh) = benjamini_hochberg(&ps, grid.q) {
        for (j, &i) in tested.iter().enumerate() {
            comparisons[i].p_adjusted = Some(bh.adjusted[j]);
            comparisons[i].rejected = bh.rejected[j];
        }
    }
    Report {
        schema_version: crate::config::SCHEMA_VERSION,
        q: grid.q,
        ci_level: grid.ci_level,
        n_boot: grid.n_boot,
        conditions,
        comparisons,
    }
}
