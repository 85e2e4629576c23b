use std::path::Path;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::{DataSection, ExperimentConfig, PartitionSection, Seeds, BASELINE};
use crate::causal::{
    adjustment_set, direct_indirect_effects, estimate_joint, orient_by_tiers, pc_from_table, refute_random_common_cause,
    total_effect, trend_analysis, GraphEdges, PcOptions, TrendResult,
};
use crate::error::{Error, Result};
use crate::fairness::FairnessReport;
use crate::federation::{run_federation, ClientState, FLConfig, RoundLog};
use crate::model::{predict, write_params, EncoderBank, FairnessNotion, LossWeights, ModelParams, ParamShape};
use crate::numkit::splitmix64;
use crate::scmdata::{load_csv, partition_clients, presets, sample_scm, save_csv, Dataset, LABEL_COLUMN};

pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.json";
pub const ANALYSIS_FILE: &str = "analysis.json";

#[derive(Debug, Clone)]
pub struct ClientData {
    pub train: Dataset,
    pub val: Dataset,
}

/// Server test split plus each client's private shards.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub test: Dataset,
    pub clients: Vec<ClientData>,
}

impl ExperimentData {
    pub fn num_attributes(&self) -> usize {
        self.test.num_attributes()
    }

    pub fn columns(&self) -> Vec<String> {
        self.test.discrete_names()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientManifest {
    pub train_rows: usize,
    pub val_rows: usize,
}

/// Record of a generated data directory; later stages refuse data whose
/// manifest does not match their config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub seeds: Seeds,
    pub data: DataSection,
    pub partition: PartitionSection,
    pub source: String,
    pub rows: usize,
    pub columns: Vec<String>,
    pub test_rows: usize,
    pub clients: Vec<ClientManifest>,
    /// Realized Dirichlet proportions, `[stratum][client]`.
    pub skew: Vec<Vec<f64>>,
}

impl Manifest {
    fn check(&self, cfg: &ExperimentConfig) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Stale(format!(
                "manifest schema {} but this build writes {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.seed != cfg.seed {
            return Err(Error::Stale(format!(
                "data was generated with seed {} but the config asks for seed {}; regenerate",
                self.seed, cfg.seed
            )));
        }
        if self.data != cfg.data || self.partition != cfg.partition {
            return Err(Error::Stale(
                "data was generated from a different [data] or [partition] section; regenerate".into(),
            ));
        }
        Ok(())
    }
}

/// Samples (or loads) the pooled data and partitions it.
pub fn build_data(cfg: &ExperimentConfig) -> Result<(ExperimentData, Manifest)> {
    let seeds = cfg.seeds();
    let pooled = match (cfg.scm()?, &cfg.data.csv) {
        (Some(decl), _) => sample_scm(&decl.build()?, cfg.data.n, seeds.data)?,
        (None, Some(path)) => load_csv(path)?,
        (None, None) => return Err(Error::Config("[data] has no source".into())),
    };
    let columns = pooled.discrete_names();
    cfg.validate_against(pooled.num_attributes(), &columns)?;
    let part = partition_clients(&pooled, &cfg.partition.plan(seeds.partition))?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        seeds,
        data: cfg.data.clone(),
        partition: cfg.partition.clone(),
        source: pooled.provenance.clone(),
        rows: pooled.len(),
        columns,
        test_rows: part.test.len(),
        clients: part
            .clients
            .iter()
            .map(|c| ClientManifest {
                train_rows: c.train.len(),
                val_rows: c.val.len(),
            })
            .collect(),
        skew: part.skew.clone(),
    };
    let data = ExperimentData {
        test: part.test,
        clients: part
            .clients
            .into_iter()
            .map(|c| ClientData { train: c.train, val: c.val })
            .collect(),
    };
    Ok((data, manifest))
}

fn client_dir(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join(format!("client_{}", i + 1))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    crate::io::write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Writes `test.csv`, `client_i/{train,val}.csv` and the manifest (last).
pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    let (data, manifest) = build_data(cfg)?;
    create_dir(dir)?;
    save_csv(&data.test, dir.join("test.csv"))?;
    for (i, c) in data.clients.iter().enumerate() {
        let cd = client_dir(dir, i);
        create_dir(&cd)?;
        save_csv(&c.train, cd.join("train.csv"))?;
        save_csv(&c.val, cd.join("val.csv"))?;
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Reads a data directory's manifest and checks it against `cfg`.
pub fn read_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    manifest.check(cfg)?;
    Ok(manifest)
}

/// Reads a generated data directory after checking its manifest against `cfg`.
pub fn load_data(cfg: &ExperimentConfig, dir: &Path) -> Result<(ExperimentData, Manifest)> {
    let manifest = read_manifest(cfg, dir)?;
    let test = load_csv(dir.join("test.csv"))?;
    let mut clients = Vec::with_capacity(manifest.clients.len());
    for (i, m) in manifest.clients.iter().enumerate() {
        let cd = client_dir(dir, i);
        let train = load_csv(cd.join("train.csv"))?;
        let val = load_csv(cd.join("val.csv"))?;
        if train.len() != m.train_rows || val.len() != m.val_rows {
            return Err(Error::Stale(format!("client_{} files do not match the manifest row counts", i + 1)));
        }
        clients.push(ClientData { train, val });
    }
    if test.len() != manifest.test_rows {
        return Err(Error::Stale("test.csv does not match the manifest row count".into()));
    }
    cfg.validate_against(test.num_attributes(), &test.discrete_names())?;
    Ok((ExperimentData { test, clients }, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub weights: LossWeights,
    /// Final server-side evaluation; ΔΦ fields are filled against the baseline
    /// for every other variant.
    pub report: FairnessReport,
    pub rounds: Vec<RoundLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub variants: Vec<VariantResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepResult>,
}

struct TrainSetup {
    bank: EncoderBank,
    init: ModelParams,
    base: FLConfig,
}

fn setup(cfg: &ExperimentConfig, data: &ExperimentData, seeds: &Seeds) -> Result<TrainSetup> {
    let m = &cfg.model;
    Ok(TrainSetup {
        bank: EncoderBank::new(data.test.feature_dim(), m.d_e, data.num_attributes(), m.tau, seeds.bank)?,
        init: ModelParams::init(
            ParamShape {
                d_e: m.d_e,
                hidden: m.hidden,
            },
            seeds.init,
        ),
        base: FLConfig {
            rounds: cfg.federation.rounds,
            local_epochs: cfg.federation.local_epochs,
            batch_size: cfg.federation.batch_size,
            seed: seeds.federation,
            optimizer: cfg.federation.optimizer,
            adapter_lr: cfg.federation.adapter_lr,
            weights: LossWeights::uniform(data.num_attributes()),
            parallel: cfg.federation.parallel,
        },
    })
}

fn train_one(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    setup: &TrainSetup,
    name: &str,
    weights: &LossWeights,
) -> Result<(VariantResult, ModelParams)> {
    let fl = FLConfig {
        weights: weights.clone(),
        ..setup.base.clone()
    };
    let mut clients: Vec<ClientState> = data
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| ClientState::new(i, c.train.clone(), c.val.clone(), setup.init.clone(), &fl))
        .collect();
    let out = run_federation(&mut clients, &setup.bank, &fl, &data.test, setup.init.clone())?;
    let report = if cfg.model.cosine_prediction {
        FairnessReport::evaluate(&predict(&out.global, &setup.bank, &data.test, true)?)?
    } else {
        out.report
    };
    Ok((
        VariantResult {
            name: name.to_string(),
            weights: weights.clone(),
            report,
            rounds: out.rounds,
        },
        out.global,
    ))
}

/// Trains every variant from the same initial parameters, bank and shards.
pub fn train_variants(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<Vec<(VariantResult, ModelParams)>> {
    cfg.validate_against(data.num_attributes(), &data.columns())?;
    let setup = setup(cfg, data, &cfg.seeds())?;
    let mut results: Vec<(VariantResult, ModelParams)> = cfg
        .variants
        .par_iter()
        .map(|v| train_one(cfg, data, &setup, &v.name, &v.weights))
        .collect::<Result<_>>()?;
    let baseline = results
        .iter()
        .find(|(r, _)| r.name == BASELINE)
        .map(|(r, _)| r.report.clone())
        .ok_or_else(|| Error::Config("no baseline variant".into()))?;
    for (r, _) in results.iter_mut().filter(|(r, _)| r.name != BASELINE) {
        r.report = r.report.with_deltas(&baseline)?;
    }
    Ok(results)
}

/// Train stage: variants plus the optional sweep; parameters go to `out/params`.
pub fn train(cfg: &ExperimentConfig, data: &ExperimentData, out: &Path) -> Result<TrainOutput> {
    let results = train_variants(cfg, data)?;
    let pdir = out.join("params");
    create_dir(&pdir)?;
    for (r, params) in &results {
        write_params(pdir.join(format!("{}.ffcp", r.name)), params, cfg.seeds().init)?;
    }
    let output = TrainOutput {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        variants: results.into_iter().map(|(r, _)| r).collect(),
        sweep: run_sweep(cfg)?,
    };
    write_json(&out.join(TRAIN_FILE), &output)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefuteSummary {
    pub old: f64,
    pub new: f64,
    pub p_value: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEffects {
    pub attribute: String,
    pub adjustment: Vec<String>,
    pub te: Option<f64>,
    pub coverage: Option<f64>,
    pub nde: Option<f64>,
    pub nie: Option<f64>,
    pub cde_at_m: Option<[f64; 2]>,
    pub refute: Option<RefuteSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientAnalysis {
    /// 1-based, matching the `client_i` directories.
    pub client: usize,
    pub rows: usize,
    pub graph: GraphEdges,
    pub effects: Vec<AttributeEffects>,
}

/// Unweighted mean over the clients that produced each estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageEffects {
    pub attribute: String,
    pub te: Option<f64>,
    pub nde: Option<f64>,
    pub nie: Option<f64>,
    pub refute_old: Option<f64>,
    pub refute_new: Option<f64>,
    pub refute_p: Option<f64>,
    pub clients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub clients: Vec<ClientAnalysis>,
    pub average: Vec<AverageEffects>,
    pub warnings: Vec<String>,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut s = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    splitmix64(&mut s)
}

/// Discovery, tier orientation, adjustment, effects and refutation on one dataset.
fn analyze_dataset(
    data: &Dataset,
    cfg: &ExperimentConfig,
    tiers: &[usize],
    seed: u64,
    label: &str,
    warnings: &mut Vec<String>,
) -> Result<(GraphEdges, Vec<AttributeEffects>)> {
    let columns = data.discrete_names();
    let names: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let table = estimate_joint(data, &names)?;
    let opts = PcOptions {
        alpha: cfg.analysis.alpha_ci,
        max_cond: cfg.analysis.max_cond,
    };
    let graph = orient_by_tiers(&pc_from_table(&table, &opts)?, tiers)?;
    let mut effects = Vec::with_capacity(data.num_attributes());
    for k in 0..data.num_attributes() {
        let a = &columns[k];
        let adjustment = adjustment_set(&graph, a, LABEL_COLUMN)?;
        let adj: Vec<&str> = adjustment.iter().map(|s| s.as_str()).collect();
        let mut row = AttributeEffects {
            attribute: a.clone(),
            adjustment: adjustment.clone(),
            te: None,
            coverage: None,
            nde: None,
            nie: None,
            cde_at_m: None,
            refute: None,
        };
        match total_effect(&table, a, LABEL_COLUMN, &adj) {
            Ok(te) => {
                if te.coverage < 1.0 {
                    warnings.push(format!(
                        "{label}: TE of {a} covers {:.4} of the probability mass ({} strata dropped)",
                        te.coverage, te.dropped_strata
                    ));
                }
                row.te = Some(te.te);
                row.coverage = Some(te.coverage);
            }
            Err(Error::Unsupported(msg)) => warnings.push(format!("{label}: TE of {a} unsupported: {msg}")),
            Err(e) => return Err(e),
        }
        if let Some(m) = &cfg.analysis.mediator {
            if adjustment.contains(m) {
                warnings.push(format!("{label}: {m} is in the adjustment set of {a}; mediation skipped"));
            } else {
                match direct_indirect_effects(&table, a, LABEL_COLUMN, m, &adj) {
                    Ok(med) => {
                        row.nde = Some(med.nde);
                        row.nie = Some(med.nie);
                        row.cde_at_m = Some(med.cde_at_m);
                    }
                    Err(Error::Unsupported(msg)) => {
                        warnings.push(format!("{label}: mediation of {a} through {m} unsupported: {msg}"))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if row.te.is_some() {
            match refute_random_common_cause(
                data,
                a,
                LABEL_COLUMN,
                &adj,
                cfg.analysis.refutation_reps,
                mix(seed, k as u64, 1),
            ) {
                Ok(r) => {
                    row.refute = Some(RefuteSummary {
                        old: r.old,
                        new: r.new,
                        p_value: r.p_value,
                        repetitions: r.repetitions,
                    })
                }
                Err(Error::Unsupported(msg)) => warnings.push(format!("{label}: refutation of {a} unsupported: {msg}")),
                Err(e) => return Err(e),
            }
        }
        effects.push(row);
    }
    Ok((graph.edges(), effects))
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Per-client causal analysis on each client's local rows (train ∪ val), then the unweighted average.
pub fn analyze(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<AnalysisOutput> {
    let columns = data.columns();
    cfg.validate_against(data.num_attributes(), &columns)?;
    let tiers = cfg.tiers_for(&columns);
    let seed = cfg.seeds().refutation;
    let per_client: Vec<(ClientAnalysis, Vec<String>)> = data
        .clients
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let local = Dataset::concat(&[&c.train, &c.val], format!("client_{}", i + 1))?;
            let mut warnings = Vec::new();
            let label = format!("client_{}", i + 1);
            let (graph, effects) = analyze_dataset(&local, cfg, &tiers, mix(seed, i as u64, 0), &label, &mut warnings)?;
            Ok((
                ClientAnalysis {
                    client: i + 1,
                    rows: local.len(),
                    graph,
                    effects,
                },
                warnings,
            ))
        })
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let mut clients = Vec::with_capacity(per_client.len());
    for (c, w) in per_client {
        warnings.extend(w);
        clients.push(c);
    }
    let average = (0..data.num_attributes())
        .map(|k| {
            let rows: Vec<&AttributeEffects> = clients.iter().map(|c| &c.effects[k]).collect();
            AverageEffects {
                attribute: columns[k].clone(),
                te: mean_of(rows.iter().map(|r| r.te)),
                nde: mean_of(rows.iter().map(|r| r.nde)),
                nie: mean_of(rows.iter().map(|r| r.nie)),
                refute_old: mean_of(rows.iter().map(|r| r.refute.as_ref().map(|x| x.old))),
                refute_new: mean_of(rows.iter().map(|r| r.refute.as_ref().map(|x| x.new))),
                refute_p: mean_of(rows.iter().map(|r| r.refute.as_ref().map(|x| x.p_value))),
                clients: rows.iter().filter(|r| r.te.is_some()).count(),
            }
        })
        .collect();
    Ok(AnalysisOutput {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        clients,
        average,
        warnings,
    })
}

/// Analyze stage: writes `out/analysis.json`.
pub fn analyze_to(cfg: &ExperimentConfig, data: &ExperimentData, out: &Path) -> Result<AnalysisOutput> {
    let output = analyze(cfg, data)?;
    create_dir(out)?;
    write_json(&out.join(ANALYSIS_FILE), &output)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub effect: f64,
    pub replicate: usize,
    /// Estimated total effect of `a1` on the pooled sample.
    pub te: f64,
    pub dp_baseline: f64,
    pub dp_debiased: f64,
    pub delta_dp: f64,
}

/// One trend pair per effect strength, averaged over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPair {
    pub effect: f64,
    pub te_abs: f64,
    pub delta_dp_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub attribute: String,
    pub lambda: f64,
    pub points: Vec<SweepPoint>,
    pub pairs: Vec<SweepPair>,
    pub trend: TrendResult,
}

const SWEEP_PARTITION_ATTEMPTS: u64 = 8;

fn sweep_point(cfg: &ExperimentConfig, effect: f64, replicate: usize, seeds: Seeds) -> Result<SweepPoint> {
    let sweep = cfg.sweep.as_ref().expect("sweep configured");
    let pooled = sample_scm(&presets::effect_sweep(effect).build()?, sweep.n, seeds.data)?;
    let mut plan = cfg.partition.plan(seeds.partition);
    plan.skew_variable = "a1".into();
    // A Dirichlet draw can starve a client; redraw deterministically rather
    // than lose the whole sweep to one replicate.
    let mut attempt = 0;
    let part = loop {
        match partition_clients(&pooled, &plan) {
            Err(Error::PartitionInfeasible(_)) if attempt < SWEEP_PARTITION_ATTEMPTS => {
                attempt += 1;
                plan.seed = mix(seeds.partition, attempt, 2);
            }
            other => break other?,
        }
    };
    let data = ExperimentData {
        test: part.test,
        clients: part
            .clients
            .into_iter()
            .map(|c| ClientData { train: c.train, val: c.val })
            .collect(),
    };

    let columns = pooled.discrete_names();
    let names: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let tiers: Vec<usize> = columns.iter().map(|c| usize::from(c == LABEL_COLUMN)).collect();
    let table = estimate_joint(&pooled, &names)?;
    let opts = PcOptions {
        alpha: cfg.analysis.alpha_ci,
        max_cond: cfg.analysis.max_cond,
    };
    let graph = orient_by_tiers(&pc_from_table(&table, &opts)?, &tiers)?;
    let adjustment = adjustment_set(&graph, "a1", LABEL_COLUMN)?;
    let adj: Vec<&str> = adjustment.iter().map(|s| s.as_str()).collect();
    let te = total_effect(&table, "a1", LABEL_COLUMN, &adj)?.te;

    let lambda_con = cfg.baseline().map_or(0.5, |b| b.weights.lambda_con);
    let baseline = LossWeights {
        lambda_con,
        lambda_lf: 0.0,
        lambda_gf: 0.0,
        ..LossWeights::uniform(2)
    };
    let debiased = LossWeights {
        alpha: vec![1.0, 0.0],
        beta: vec![1.0, 0.0],
        lambda_con,
        lambda_lf: sweep.lambda,
        lambda_gf: sweep.lambda,
        notion: FairnessNotion::Dp,
    };
    let setup = setup(cfg, &data, &seeds)?;
    let (b, _) = train_one(cfg, &data, &setup, BASELINE, &baseline)?;
    let (d, _) = train_one(cfg, &data, &setup, "debias-A1", &debiased)?;
    let (dp_baseline, dp_debiased) = (b.report.attributes[0].dp, d.report.attributes[0].dp);
    Ok(SweepPoint {
        effect,
        replicate,
        te,
        dp_baseline,
        dp_debiased,
        delta_dp: dp_debiased - dp_baseline,
    })
}

/// Runs the configured effect-strength sweep, if any.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Option<SweepResult>> {
    let Some(sweep) = &cfg.sweep else {
        return Ok(None);
    };
    let base = cfg.seeds().sweep;
    let jobs: Vec<(usize, f64, usize)> = sweep
        .effects
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| (0..sweep.replicates).map(move |r| (i, e, r)))
        .collect();
    let points: Vec<SweepPoint> = jobs
        .par_iter()
        .map(|&(i, e, r)| sweep_point(cfg, e, r, Seeds::derive(mix(base, i as u64, r as u64))))
        .collect::<Result<_>>()?;
    let pairs: Vec<SweepPair> = sweep
        .effects
        .iter()
        .map(|&effect| {
            let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.effect == effect).collect();
            let n = pts.len() as f64;
            SweepPair {
                effect,
                te_abs: pts.iter().map(|p| p.te.abs()).sum::<f64>() / n,
                delta_dp_abs: pts.iter().map(|p| p.delta_dp.abs()).sum::<f64>() / n,
            }
        })
        .collect();
    let trend = trend_analysis(&pairs.iter().map(|p| (p.te_abs, p.delta_dp_abs)).collect::<Vec<_>>())?;
    Ok(Some(SweepResult {
        attribute: "a1".into(),
        lambda: sweep.lambda,
        points,
        pairs,
        trend,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single seed.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
}

/// `(metric name, value)` pairs in table column order.
pub fn report_metrics(report: &FairnessReport) -> Vec<(String, Option<f64>)> {
    let mut out = vec![("acc".to_string(), Some(report.acc)), ("ap".to_string(), Some(report.ap))];
    for a in &report.attributes {
        out.push((format!("dp_{}", a.name), Some(a.dp)));
        out.push((format!("eo_{}", a.name), Some(a.eo)));
    }
    for a in &report.attributes {
        out.push((format!("delta_dp_{}", a.name), a.delta_dp));
        out.push((format!("delta_eo_{}", a.name), a.delta_eo));
    }
    out
}

/// Re-runs data generation and training for seeds `seed, seed+1, …, seed+count−1`.
pub fn replicate(cfg: &ExperimentConfig, count: usize) -> Result<ReplicateSummary> {
    if count == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..count as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let runs: Vec<Vec<VariantResult>> = seeds
        .iter()
        .map(|&s| {
            let c = ExperimentConfig {
                seed: s,
                sweep: None,
                ..cfg.clone()
            };
            let (data, _) = build_data(&c)?;
            Ok(train_variants(&c, &data)?.into_iter().map(|(r, _)| r).collect())
        })
        .collect::<Result<_>>()?;
    let variants = cfg
        .variants
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let per_seed: Vec<Vec<(String, Option<f64>)>> =
                runs.iter().map(|r| report_metrics(&r[vi].report)).collect();
            let metrics = per_seed[0]
                .iter()
                .enumerate()
                .filter_map(|(j, (name, _))| {
                    let vals: Vec<f64> = per_seed.iter().filter_map(|m| m[j].1).collect();
                    if vals.is_empty() {
                        return None;
                    }
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let sd = if vals.len() > 1 {
                        (vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                    } else {
                        0.0
                    };
                    Some(MetricSummary {
                        metric: name.clone(),
                        mean,
                        sd,
                    })
                })
                .collect();
            VariantSummary {
                name: v.name.clone(),
                metrics,
            }
        })
        .collect();
    Ok(ReplicateSummary { seeds, variants })
}
