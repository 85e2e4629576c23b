//! Experiment runner: config, data generation, training of the debiasing
//! grid, per-client causal analysis and report assembly.
//!
//! Stages communicate through files in one output directory:
//! `data/` (CSV shards + manifest), `params/`, `train.json`, `analysis.json`
//! and finally `report.json` or the CSV tables.

mod config;
mod pipeline;
mod report;

use std::path::{Path, PathBuf};

pub use config::{
    AnalysisSection, DataSection, ExperimentConfig, FederationSection, ModelSection, PartitionSection, Seeds,
    SweepSection, Variant, BASELINE,
};
pub use pipeline::{
    analyze, analyze_to, build_data, generate, load_data, read_manifest, replicate, report_metrics, run_sweep, train,
    train_variants, AnalysisOutput, AttributeEffects, AverageEffects, ClientAnalysis, ClientData, ClientManifest,
    ExperimentData, Manifest, MetricSummary, RefuteSummary, ReplicateSummary, SweepPair, SweepPoint, SweepResult,
    TrainOutput, VariantResult, VariantSummary, ANALYSIS_FILE, MANIFEST_FILE, SCHEMA_VERSION, TRAIN_FILE,
};
pub use report::{
    load_report, table1_csv, table2_csv, trend_csv, write_report, DataSummary, ReportFormat, RunReport, REPORT_FILE,
    TABLE1_FILE, TABLE2_FILE, TREND_FILE,
};

use crate::error::Result;

/// Default data directory inside an output directory.
pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

/// Builds the report from finished stages, adding `--seeds` replicates when `seeds > 1`.
pub fn report(cfg: &ExperimentConfig, data: &Path, out: &Path, format: ReportFormat, seeds: usize) -> Result<RunReport> {
    let manifest = read_manifest(cfg, data)?;
    let replicates = if seeds > 1 { Some(replicate(cfg, seeds)?) } else { None };
    let report = load_report(cfg, &manifest, out, replicates)?;
    write_report(&report, out, format)?;
    Ok(report)
}

/// All four stages into `out`, with the data under `out/data`.
pub fn run(cfg: &ExperimentConfig, out: &Path, format: ReportFormat, seeds: usize) -> Result<RunReport> {
    let dir = data_dir(out);
    generate(cfg, &dir)?;
    let (data, _) = load_data(cfg, &dir)?;
    train(cfg, &data, out)?;
    analyze_to(cfg, &data, out)?;
    report(cfg, &dir, out, format, seeds)
}
