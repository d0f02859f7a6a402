//! `elscape`: simulate, fit, score and export energy landscapes.
//!
//! Every flag can also be set through an `ELSCAPE_<FLAG>` environment
//! variable (for example `ELSCAPE_SEED`, `ELSCAPE_PARALLELISM`). Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use elscape::config::{GridConfig, Method, SimConfig};
use elscape::continuous::{fit_gaussian_mle, GaussianModelRecord, Ridge};
use elscape::data::{median_binarize, Seed};
use elscape::discrete::{assign_basins, fit_ising_ple, IsingModelRecord, DEFAULT_LAMBDA};
use elscape::experiment::{build_report, read_results, run_grid, ResultRow};
use elscape::features::{energy_features, write_features_csv, EnergyModel};
use elscape::gcn::{
    node_features, save_checkpoint, select_rank, to_energy_model, train, write_trace_csv,
    CheckpointMeta, TrainConfig, CHECKPOINT_SCHEMA_VERSION, DEFAULT_RANK_CANDIDATES, FEATURE_DIM,
};
use elscape::graph::{FunctionalGraph, DEFAULT_DENSITY};
use elscape::io::read_timeseries;
use elscape::mixture::{
    fit_gmm, label_with_confidence, select_components_bic, write_labels_csv, MixtureModelRecord,
};
use elscape::simulate::write_bundle;
use elscape::{Error, Result};

#[derive(Parser)]
#[command(
    name = "elscape",
    version,
    about = "Energy landscape analysis of multivariate time series"
)]
struct Cli {
    /// Log filter, e.g. `info` or `elscape=debug`.
    #[arg(long, global = true, env = "ELSCAPE_LOG", default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Del,
    Cel,
    CelMix,
    GcnCel,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a series with known latent states and write a bundle.
    Simulate {
        #[arg(long, env = "ELSCAPE_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "ELSCAPE_OUT")]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long, env = "ELSCAPE_SEED")]
        seed: Option<u64>,
    },
    /// Fit one model to a CSV or `.elts` series.
    Fit {
        #[arg(long, value_enum, env = "ELSCAPE_METHOD")]
        method: FitMethod,
        #[arg(long, env = "ELSCAPE_DATA")]
        data: PathBuf,
        /// Model JSON path; diagnostics are written next to it.
        #[arg(long, env = "ELSCAPE_OUT")]
        out: PathBuf,
        #[arg(long, env = "ELSCAPE_SEED", default_value_t = 0)]
        seed: u64,
        /// Pseudolikelihood penalty for `del`.
        #[arg(long, env = "ELSCAPE_LAMBDA", default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// GCN rank, or `auto` for cross-validation over 8, 12 and 16.
        #[arg(long, env = "ELSCAPE_RANK", default_value = "auto")]
        rank: String,
        /// Mixture components, or `auto` for BIC over 1..=max-components.
        #[arg(long, env = "ELSCAPE_COMPONENTS", default_value = "auto")]
        components: String,
        #[arg(long, env = "ELSCAPE_MAX_COMPONENTS", default_value_t = 6)]
        max_components: usize,
        /// Graph density for `gcn-cel`.
        #[arg(long, env = "ELSCAPE_DELTA", default_value_t = DEFAULT_DENSITY)]
        delta: f64,
        /// Training settings JSON for `gcn-cel`.
        #[arg(long, env = "ELSCAPE_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Run the simulation study.
    Grid {
        #[arg(long, env = "ELSCAPE_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "ELSCAPE_OUT")]
        out: PathBuf,
        #[arg(long, env = "ELSCAPE_PARALLELISM", default_value_t = 1)]
        parallelism: usize,
        /// Overrides `base_seed`.
        #[arg(long, env = "ELSCAPE_SEED")]
        seed: Option<u64>,
        /// Overrides `kappa`.
        #[arg(long, env = "ELSCAPE_KAPPA")]
        kappa: Option<f64>,
    },
    /// Per-time-point energies of a series under a fitted continuous model.
    ExportFeatures {
        #[arg(long, env = "ELSCAPE_DATA")]
        data: PathBuf,
        #[arg(long, env = "ELSCAPE_MODEL")]
        model: PathBuf,
        #[arg(long, env = "ELSCAPE_OUT")]
        out: PathBuf,
    },
    /// Rebuild the summary report from a results CSV.
    Report {
        #[arg(long, env = "ELSCAPE_RESULTS")]
        results: PathBuf,
        /// Grid config supplying q, ci_level, n_boot and base_seed.
        #[arg(long, env = "ELSCAPE_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "ELSCAPE_OUT")]
        out: PathBuf,
        #[arg(long, env = "ELSCAPE_SEED")]
        seed: Option<u64>,
    },
}

/// Config files that cannot be read count as configuration errors.
fn config_error(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn parse_auto(value: &str, what: &str) -> Result<Option<usize>> {
    if value.eq_ignore_ascii_case("auto") {
        return Ok(None);
    }
    value
        .parse::<usize>()
        .ok()
        .filter(|v| *v > 0)
        .map(Some)
        .ok_or_else(|| {
            Error::Config(format!(
                "{what} must be a positive integer or `auto`, got {value:?}"
            ))
        })
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = SimConfig::load(config).map_err(|e| config_error(config, e))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (sim, resolved) = cfg.run()?;
    write_bundle(out, &sim, &resolved)?;
    log::info!(
        "wrote {} x {} series to {}",
        sim.x.n_time(),
        sim.x.n_vars(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    method: FitMethod,
    data: &Path,
    out: &Path,
    seed: Seed,
    lambda: f64,
    rank: &str,
    components: &str,
    max_components: usize,
    delta: f64,
    config: Option<&Path>,
) -> Result<()> {
    let x = read_timeseries(data)?;
    let diag_path = sidecar(out, "diagnostics.json");
    match method {
        FitMethod::Del => {
            let q = median_binarize(&x);
            let fit = fit_ising_ple(&q, lambda)?;
            let basins = assign_basins(&q, &fit.model);
            write_json(out, &IsingModelRecord::from(&fit))?;
            write_json(
                &diag_path,
                &json!({
                    "method": Method::Del,
                    "converged": fit.converged,
                    "iterations": fit.iterations,
                    "grad_norm": fit.grad_norm,
                    "n_basins": basins.modes.len(),
                    "modes": basins.modes,
                }),
            )?;
        }
        FitMethod::Cel => {
            let m = fit_gaussian_mle(&x, Ridge::default())?;
            write_json(out, &GaussianModelRecord::from(&m))?;
            write_json(
                &diag_path,
                &json!({"method": Method::Cel, "converged": true, "T": x.n_time(), "logdet_S": m.logdet_precision()}),
            )?;
        }
        FitMethod::CelMix => {
            let (fit, bics) = match parse_auto(components, "--components")? {
                Some(m) => (fit_gmm(&x, m, seed)?, None),
                None => {
                    let sel = select_components_bic(&x, max_components, seed)?;
                    (sel.fit, Some(sel.bics))
                }
            };
            write_json(out, &MixtureModelRecord::from_fit(&fit, x.n_time()))?;
            write_labels_csv(
                &sidecar(out, "labels.csv"),
                &label_with_confidence(&x, &fit.model)?,
            )?;
            write_json(
                &diag_path,
                &json!({
                    "method": Method::CelMix,
                    "M": fit.model.n_components(),
                    "selected_by": if bics.is_some() { "BIC" } else { "fixed" },
                    "bics": bics,
                    "converged": fit.converged,
                    "iterations": fit.iterations,
                    "loglik_trace": fit.trace,
                }),
            )?;
        }
        FitMethod::GcnCel => {
            let train_cfg = match config {
                Some(p) => {
                    let cfg: TrainConfig = serde_json::from_slice(
                        &fs::read(p).map_err(|e| config_error(p, e.into()))?,
                    )?;
                    cfg.validate()?;
                    cfg
                }
                None => TrainConfig::default(),
            };
            let graph = FunctionalGraph::build(&x, delta)?;
            let features = node_features(&x, &graph)?;
            let n = x.n_vars();
            let (r, scores) = match parse_auto(rank, "--rank")? {
                Some(r) => (r, Vec::new()),
                None => {
                    let mut cands: Vec<usize> = DEFAULT_RANK_CANDIDATES
                        .iter()
                        .copied()
                        .filter(|&r| r <= n)
                        .collect();
                    if cands.is_empty() {
                        log::warn!("no rank candidate fits N = {n}; using rank {n}");
                        cands.push(n);
                    }
                    let sel = select_rank(
                        &x,
                        &graph,
                        &features,
                        &cands,
                        &train_cfg,
                        seed.derive("rank"),
                    )?;
                    (sel.rank, sel.scores)
                }
            };
            let result = train(&x, &graph, &features, r, &train_cfg, seed)?;
            let model = to_energy_model(&x, &graph.bnorm, &features, &result.params)?;
            write_json(out, &GaussianModelRecord::from(&model))?;
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            let meta = CheckpointMeta {
                schema_version: CHECKPOINT_SCHEMA_VERSION,
                n_vars: n,
                rank: r,
                epsilon: result.params.epsilon,
                hidden_width: train_cfg.hidden_width,
                feature_dim: FEATURE_DIM,
                lambda_frob: train_cfg.lambda_frob,
                loss: result.loss,
                converged: result.converged,
                epochs: result.epochs,
                weights: format!("{stem}.gcn.bin"),
            };
            let dir = out
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            save_checkpoint(dir, &format!("{stem}.gcn"), &meta, &result.params)?;
            write_trace_csv(&sidecar(out, "trace.csv"), &result.trace)?;
            write_json(
                &diag_path,
                &json!({
                    "method": Method::GcnCel,
                    "rank": r,
                    "rank_selected_by": if scores.is_empty() { "fixed" } else { "cv" },
                    "rank_scores": scores,
                    "converged": result.converged,
                    "epochs": result.epochs,
                    "loss": result.loss,
                    "initial_loss": result.initial_loss,
                    "graph_density": graph.density(),
                }),
            )?;
        }
    }
    log::info!("wrote {}", out.display());
    Ok(())
}

fn cmd_grid(
    config: &Path,
    out: &Path,
    parallelism: usize,
    seed: Option<u64>,
    kappa: Option<f64>,
) -> Result<()> {
    let mut grid = GridConfig::load(config).map_err(|e| config_error(config, e))?;
    if let Some(s) = seed {
        grid.base_seed = s;
    }
    if kappa.is_some() {
        grid.kappa = kappa;
    }
    let (rows, _) = run_grid(&grid, out, parallelism)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        log::warn!("{failed} of {} rows recorded an error", rows.len());
    }
    Ok(())
}

fn cmd_export(data: &Path, model: &Path, out: &Path) -> Result<()> {
    let x = read_timeseries(data)?;
    let m = EnergyModel::load(model)?;
    let rows = energy_features(&x, &m)?;
    write_features_csv(out, &rows)
}

fn cmd_report(results: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut grid = match config {
        Some(p) => GridConfig::load(p).map_err(|e| config_error(p, e))?,
        None => GridConfig::default(),
    };
    if let Some(s) = seed {
        grid.base_seed = s;
    }
    let mut rows: Vec<ResultRow> = read_results(results)?;
    elscape::experiment::sort_rows(&mut rows);
    write_json(out, &build_report(&rows, &grid))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Fit {
            method,
            data,
            out,
            seed,
            lambda,
            rank,
            components,
            max_components,
            delta,
            config,
        } => cmd_fit(
            method,
            &data,
            &out,
            Seed(seed),
            lambda,
            &rank,
            &components,
            max_components,
            delta,
            config.as_deref(),
        ),
        Command::Grid {
            config,
            out,
            parallelism,
            seed,
            kappa,
        } => cmd_grid(&config, &out, parallelism, seed, kappa),
        Command::ExportFeatures { data, model, out } => cmd_export(&data, &model, &out),
        Command::Report {
            results,
            config,
            out,
            seed,
        } => cmd_report(&results, config.as_deref(), &out, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
