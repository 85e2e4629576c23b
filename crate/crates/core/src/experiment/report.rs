use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Seeds, BASELINE};
use super::pipeline::{
    read_json, report_metrics, write_json, AnalysisOutput, ClientManifest, Manifest, ReplicateSummary, SweepResult,
    TrainOutput, VariantResult, ANALYSIS_FILE, SCHEMA_VERSION, TRAIN_FILE,
};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const TABLE1_FILE: &str = "table1.csv";
pub const TABLE2_FILE: &str = "table2.csv";
pub const TREND_FILE: &str = "trend.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown format `{other}` (json or csv)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub rows: usize,
    pub test_rows: usize,
    pub clients: Vec<ClientManifest>,
    pub skew: Vec<Vec<f64>>,
}

/// Everything one experiment produced, plus the config that re-creates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub seeds: Seeds,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub variants: Vec<VariantResult>,
    pub analysis: AnalysisOutput,
    pub trend: Option<SweepResult>,
    pub replicates: Option<ReplicateSummary>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn assemble(
        cfg: &ExperimentConfig,
        manifest: &Manifest,
        train: TrainOutput,
        analysis: AnalysisOutput,
        replicates: Option<ReplicateSummary>,
    ) -> Result<Self> {
        if train.config != *cfg {
            return Err(Error::Stale(format!("{TRAIN_FILE} was produced by a different config or seed; rerun train")));
        }
        if analysis.config != *cfg {
            return Err(Error::Stale(format!(
                "{ANALYSIS_FILE} was produced by a different config or seed; rerun analyze"
            )));
        }
        if !train.variants.iter().any(|v| v.name == BASELINE) {
            return Err(Error::Config("no baseline variant: ΔΦ is undefined".into()));
        }
        let mut warnings = Vec::new();
        if train.variants.len() == 1 {
            warnings.push("only the baseline variant was trained; ΔΦ columns are empty".to_string());
        }
        if train.sweep.is_none() {
            warnings.push("no [sweep] section; trend analysis skipped".to_string());
        }
        warnings.extend(analysis.warnings.iter().cloned());
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            seeds: cfg.seeds(),
            config: cfg.clone(),
            data: DataSummary {
                source: manifest.source.clone(),
                rows: manifest.rows,
                test_rows: manifest.test_rows,
                clients: manifest.clients.clone(),
                skew: manifest.skew.clone(),
            },
            variants: train.variants,
            analysis,
            trend: train.sweep,
            replicates,
            warnings,
        })
    }

    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Loads the train and analysis stage outputs from `out` and assembles the report.
pub fn load_report(
    cfg: &ExperimentConfig,
    manifest: &Manifest,
    out: &Path,
    replicates: Option<ReplicateSummary>,
) -> Result<RunReport> {
    let train: TrainOutput = read_json(&out.join(TRAIN_FILE))?;
    let analysis: AnalysisOutput = read_json(&out.join(ANALYSIS_FILE))?;
    RunReport::assemble(cfg, manifest, train, analysis, replicates)
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn render(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

/// Accuracy and fairness per variant; ΔΦ against the baseline; mean/sd columns with `--seeds`.
pub fn table1_csv(report: &RunReport) -> Result<String> {
    let first = report.variants.first().ok_or_else(|| Error::Config("no variants".into()))?;
    let names: Vec<String> = report_metrics(&first.report).into_iter().map(|(n, _)| n).collect();
    let mut header = vec!["variant".to_string()];
    header.extend(names.iter().cloned());
    if let Some(rep) = &report.replicates {
        for n in &names {
            if rep.variants.iter().any(|v| v.metrics.iter().any(|m| &m.metric == n)) {
                header.push(format!("{n}_mean"));
                header.push(format!("{n}_sd"));
            }
        }
    }
    let mut rows = vec![header.clone()];
    for v in &report.variants {
        let mut row = vec![v.name.clone()];
        row.extend(report_metrics(&v.report).into_iter().map(|(_, x)| num(x)));
        if let Some(rep) = &report.replicates {
            let summary = rep.variants.iter().find(|s| s.name == v.name);
            for col in &header[names.len() + 1..] {
                let (metric, stat) = col.rsplit_once('_').expect("suffixed column");
                let m = summary.and_then(|s| s.metrics.iter().find(|m| m.metric == metric));
                row.push(num(m.map(|m| if stat == "mean" { m.mean } else { m.sd })));
            }
        }
        rows.push(row);
    }
    render(rows)
}

/// Effects per client and their average; refutation Old/New/p rows.
pub fn table2_csv(report: &RunReport) -> Result<String> {
    let a = &report.analysis;
    let mut header = vec!["quantity".to_string()];
    header.extend(a.clients.iter().map(|c| format!("client_{}", c.client)));
    header.push("average".into());
    let mut rows = vec![header];
    for (k, avg) in a.average.iter().enumerate() {
        let name = &avg.attribute;
        type Pick = fn(&super::pipeline::AttributeEffects) -> Option<f64>;
        let per: [(&str, Pick, Option<f64>); 6] = [
            ("te", |e| e.te, avg.te),
            ("nde", |e| e.nde, avg.nde),
            ("nie", |e| e.nie, avg.nie),
            ("refute_old", |e| e.refute.as_ref().map(|r| r.old), avg.refute_old),
            ("refute_new", |e| e.refute.as_ref().map(|r| r.new), avg.refute_new),
            ("refute_p", |e| e.refute.as_ref().map(|r| r.p_value), avg.refute_p),
        ];
        for (label, pick, mean) in per {
            let mut row = vec![format!("{label}_{name}")];
            row.extend(a.clients.iter().map(|c| num(pick(&c.effects[k]))));
            row.push(num(mean));
            rows.push(row);
        }
    }
    render(rows)
}

/// The sweep's trend pairs plus ρ in a trailing row.
pub fn trend_csv(sweep: &SweepResult) -> Result<String> {
    let mut rows = vec![vec!["effect".to_string(), "te_abs".into(), "delta_dp_abs".into()]];
    for p in &sweep.pairs {
        rows.push(vec![format!("{}", p.effect), format!("{}", p.te_abs), format!("{}", p.delta_dp_abs)]);
    }
    rows.push(vec!["spearman_rho".into(), format!("{}", sweep.trend.rho), String::new()]);
    render(rows)
}

/// Writes `report.json`, or the CSV tables.
pub fn write_report(report: &RunReport, out: &Path, format: ReportFormat) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            let p = out.join(REPORT_FILE);
            write_json(&p, report)?;
            written.push(p);
        }
        ReportFormat::Csv => {
            for (file, body) in [(TABLE1_FILE, table1_csv(report)?), (TABLE2_FILE, table2_csv(report)?)] {
                let p = out.join(file);
                crate::io::write_atomic(&p, body.as_bytes())?;
                written.push(p);
            }
            if let Some(s) = &report.trend {
                let p = out.join(TREND_FILE);
                crate::io::write_atomic(&p, trend_csv(s)?.as_bytes())?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
