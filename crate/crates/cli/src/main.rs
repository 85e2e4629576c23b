//! `ffc`: generate data, train the debiasing grid, analyze, report.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ffc_core::experiment::{self, ExperimentConfig, ReportFormat, RunReport};
use ffc_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "ffc", version, about = "Federated fairness experiments with causal analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample (or load) data and write the client shards and manifest.
    Generate(Common),
    /// Train every variant of the config on generated data.
    Train(Common),
    /// Per-client causal discovery, effects and refutation.
    Analyze(Common),
    /// Assemble the report from finished train and analyze stages.
    Report(ReportArgs),
    /// generate, train, analyze and report in one go.
    Run(ReportArgs),
    /// Print the built-in default config.
    DefaultConfig,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the built-in four-variant grid.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the config seed. FFC_SEED is used when neither is given.
    #[arg(long, env = "FFC_SEED")]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Data directory; defaults to <out>/data.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Repeat training over N consecutive seeds and add mean/sd columns.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
}

impl Common {
    fn config(&self) -> ffc_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default_experiment(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| experiment::data_dir(&self.out))
    }
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

fn summarize(report: &RunReport, out: &Path, format: ReportFormat) {
    for v in &report.variants {
        let dp: Vec<String> = v.report.attributes.iter().map(|a| format!("dp_{}={:.4}", a.name, a.dp)).collect();
        println!("{:<14} acc={:.4} ap={:.4} {}", v.name, v.report.acc, v.report.ap, dp.join(" "));
    }
    if let Some(t) = &report.trend {
        println!("trend: spearman rho = {:.4} over {} strengths", t.trend.rho, t.pairs.len());
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let file = match format {
        ReportFormat::Json => experiment::REPORT_FILE,
        ReportFormat::Csv => experiment::TABLE1_FILE,
    };
    println!("wrote {}", out.join(file).display());
}

fn execute(cli: Cli) -> ffc_core::Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.config()?;
            let dir = c.data_dir();
            let m = experiment::generate(&cfg, &dir)?;
            let sizes: Vec<String> = m.clients.iter().map(|c| format!("{}+{}", c.train_rows, c.val_rows)).collect();
            println!(
                "generated {} rows: test {}, clients (train+val) {}",
                m.rows,
                m.test_rows,
                sizes.join(" ")
            );
            println!("wrote {}", dir.display());
        }
        Command::Train(c) => {
            let cfg = c.config()?;
            let (data, _) = experiment::load_data(&cfg, &c.data_dir())?;
            let out = experiment::train(&cfg, &data, &c.out)?;
            for v in &out.variants {
                println!("{:<14} acc={:.4} ap={:.4}", v.name, v.report.acc, v.report.ap);
            }
            println!("wrote {}", c.out.join(experiment::TRAIN_FILE).display());
        }
        Command::Analyze(c) => {
            let cfg = c.config()?;
            let (data, _) = experiment::load_data(&cfg, &c.data_dir())?;
            let out = experiment::analyze_to(&cfg, &data, &c.out)?;
            for a in &out.average {
                println!(
                    "{}: average te={} nde={} nie={}",
                    a.attribute,
                    fmt(a.te),
                    fmt(a.nde),
                    fmt(a.nie)
                );
            }
            println!("wrote {}", c.out.join(experiment::ANALYSIS_FILE).display());
        }
        Command::Report(r) => {
            let cfg = r.common.config()?;
            let format = r.format.into();
            let report = experiment::report(&cfg, &r.common.data_dir(), &r.common.out, format, r.seeds)?;
            summarize(&report, &r.common.out, format);
        }
        Command::Run(r) => {
            let cfg = r.common.config()?;
            let format = r.format.into();
            if r.common.data.is_some() {
                return Err(Error::Config("run always writes its data to <out>/data; drop --data".into()));
            }
            let report = experiment::run(&cfg, &r.common.out, format, r.seeds)?;
            summarize(&report, &r.common.out, format);
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default_toml()),
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
