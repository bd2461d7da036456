//! Strategy x seed experiment matrix: parallel runs, ordered CSV output, summary table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::StrategyKind;
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{decisions_csv, run, MetricsReport, SimOutput};

pub const METRICS_HEADER: &str = "scenario,strategy,seed,accesses,hit_ratio,mean_latency_ms,p95_latency_ms,\
bytes_transferred,replica_seconds,wasted_replications,sla_violation_ratio,replicate_count,evict_count,\
hold_count,restriction_denials";

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{failed} of {total} runs failed; first: {strategy} seed {seed}: {message}")]
    Runs {
        failed: usize,
        total: usize,
        strategy: StrategyKind,
        seed: u64,
        message: String,
    },
}

/// Command-line overrides of scenario fields.
#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    pub out_dir: Option<PathBuf>,
    pub strategies: Option<Vec<StrategyKind>>,
    pub seeds: Option<Vec<u64>>,
    /// Also write each run's final predictor state under `predictors/`.
    pub dump_predictors: bool,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub output: SimOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub runs: usize,
    pub hit_ratio_mean: f64,
    pub hit_ratio_std: f64,
    pub latency_mean: f64,
    pub latency_std: f64,
}

#[derive(Debug, Clone)]
pub struct MatrixReport {
    pub out_dir: PathBuf,
    pub runs: Vec<RunRecord>,
    pub csv: String,
    pub summary: Vec<StrategySummary>,
}

pub fn metrics_row(scenario: &str, strategy: StrategyKind, seed: u64, m: &MetricsReport) -> String {
    format!(
        "{scenario},{strategy},{seed},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.accesses,
        m.hit_ratio,
        m.mean_latency_ms,
        m.p95_latency_ms,
        m.bytes_transferred,
        m.replica_seconds,
        m.wasted_replications,
        m.sla_violation_ratio,
        m.replicate_count,
        m.evict_count,
        m.hold_count,
        m.restriction_denials
    )
}

/// Mean and sample standard deviation; a single value has zero spread.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(runs: &[RunRecord], order: &[StrategyKind]) -> Vec<StrategySummary> {
    order
        .iter()
        .map(|&strategy| {
            let mine: Vec<&MetricsReport> = runs
                .iter()
                .filter(|r| r.strategy == strategy)
                .map(|r| &r.output.metrics)
                .collect();
            let hits: Vec<f64> = mine.iter().map(|m| m.hit_ratio).collect();
            let lat: Vec<f64> = mine.iter().map(|m| m.mean_latency_ms).collect();
            let (hit_ratio_mean, hit_ratio_std) = mean_std(&hits);
            let (latency_mean, latency_std) = mean_std(&lat);
            StrategySummary {
                strategy,
                runs: mine.len(),
                hit_ratio_mean,
                hit_ratio_std,
                latency_mean,
                latency_std,
            }
        })
        .collect()
}

pub fn summary_table(summary: &[StrategySummary]) -> String {
    let mut out = format!(
        "{:<18} {:>4}  {:>19}  {:>21}\n",
        "strategy", "runs", "hit_ratio", "mean_latency_ms"
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{:<18} {:>4}  {:>8.4} ± {:<8.4}  {:>9.3} ± {:<9.3}",
            s.strategy.name(),
            s.runs,
            s.hit_ratio_mean,
            s.hit_ratio_std,
            s.latency_mean,
            s.latency_std
        );
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<(), MatrixError> {
    fs::write(path, contents).map_err(|source| MatrixError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs every (strategy, seed) cell. Output files in the output directory:
/// `metrics.csv`, `metrics.csv.status` (completed-runs marker), `summary.txt` and one
/// decisions log per cell under `decisions/`. Successful cells are written even when
/// others fail.
pub fn run_matrix(scenario: &Scenario, opts: &MatrixOptions) -> Result<MatrixReport, MatrixError> {
    let strategies = opts
        .strategies
        .clone()
        .unwrap_or_else(|| scenario.strategies.clone());
    let seeds = opts.seeds.clone().unwrap_or_else(|| scenario.seeds.clone());
    let out_dir = opts
        .out_dir
        .clone()
        .unwrap_or_else(|| scenario.out_dir.clone());
    let cells: Vec<(StrategyKind, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();

    let traces: Vec<_> = seeds
        .par_iter()
        .map(|&seed| scenario.trace_for(seed))
        .collect();
    let results: Vec<Result<SimOutput, String>> = cells
        .par_iter()
        .map(|&(strategy, seed)| {
            let i = seeds.iter().position(|&s| s == seed).expect("seed listed");
            let trace = traces[i].as_ref().map_err(|e| e.to_string())?;
            log::debug!("running {strategy} seed {seed}");
            let mut setup = scenario.setup(strategy, trace);
            setup.dump_predictors = opts.dump_predictors;
            run(setup).map_err(|e| e.to_string())
        })
        .collect();

    let decisions_dir = out_dir.join("decisions");
    fs::create_dir_all(&decisions_dir).map_err(|source| MatrixError::Io {
        path: decisions_dir.clone(),
        source,
    })?;

    let dump_dir = out_dir.join("predictors");
    if opts.dump_predictors {
        fs::create_dir_all(&dump_dir).map_err(|source| MatrixError::Io {
            path: dump_dir.clone(),
            source,
        })?;
    }

    let mut csv = String::new();
    csv.push_str(METRICS_HEADER);
    csv.push('\n');
    let mut status = String::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (&(strategy, seed), result) in cells.iter().zip(results) {
        match result {
            Ok(output) => {
                csv.push_str(&metrics_row(
                    &scenario.name,
                    strategy,
                    seed,
                    &output.metrics,
                ));
                csv.push('\n');
                let log_path = decisions_dir.join(format!("{strategy}-seed{seed}.csv"));
                write(&log_path, &decisions_csv(&output.decisions))?;
                if let Some(dump) = &output.predictor_dump {
                    write(&dump_dir.join(format!("{strategy}-seed{seed}.json")), dump)?;
                }
                let _ = writeln!(status, "{strategy},{seed},ok");
                runs.push(RunRecord {
                    strategy,
                    seed,
                    output,
                });
            }
            Err(message) => {
                log::error!("{strategy} seed {seed}: {message}");
                let _ = writeln!(status, "{strategy},{seed},failed: {message}");
                failures.push((strategy, seed, message));
            }
        }
    }
    let marker = format!("completed {} of {} runs\n{status}", runs.len(), cells.len());
    write(&out_dir.join("metrics.csv"), &csv)?;
    write(&out_dir.join("metrics.csv.status"), &marker)?;

    let summary = summarize(&runs, &strategies);
    write(&out_dir.join("summary.txt"), &summary_table(&summary))?;

    if let Some((strategy, seed, message)) = failures.first().cloned() {
        return Err(MatrixError::Runs {
            failed: failures.len(),
            total: cells.len(),
            strategy,
            seed,
            message,
        });
    }
    Ok(MatrixReport {
        out_dir,
        runs,
        csv,
        summary,
    })
}
