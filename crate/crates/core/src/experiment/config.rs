use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LossWeights, DEFAULT_TAU};
use crate::numkit::{splitmix64, AdamWConfig};
use crate::scmdata::{presets, PartitionPlan, ScmDecl, LABEL_COLUMN};

/// Name of the variant every ΔΦ is measured against.
pub const BASELINE: &str = "baseline";

const DEFAULT_TOML: &str = include_str!("../../configs/default.toml");

/// Full description of one experiment, as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    pub variants: Vec<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Exactly one of `preset`, `scm` or `csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scm: Option<ScmDecl>,
    /// Pooled dataset in the scmdata CSV schema; `n` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

fn default_n() -> usize {
    8000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub clients: usize,
    pub gamma: f64,
    pub skew_variable: String,
    pub test_fraction: f64,
    pub train_parts: u32,
    pub val_parts: u32,
}

impl Default for PartitionSection {
    fn default() -> Self {
        let p = PartitionPlan::default();
        Self {
            clients: p.clients,
            gamma: p.gamma,
            skew_variable: p.skew_variable,
            test_fraction: p.test_fraction,
            train_parts: p.train_parts,
            val_parts: p.val_parts,
        }
    }
}

impl PartitionSection {
    pub fn plan(&self, seed: u64) -> PartitionPlan {
        PartitionPlan {
            clients: self.clients,
            gamma: self.gamma,
            skew_variable: self.skew_variable.clone(),
            test_fraction: self.test_fraction,
            train_parts: self.train_parts,
            val_parts: self.val_parts,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_e: usize,
    pub hidden: usize,
    pub tau: f64,
    /// Predict by cosine similarity to the class prompts instead of the classifier head.
    pub cosine_prediction: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_e: 16,
            hidden: 16,
            tau: DEFAULT_TAU,
            cosine_prediction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adapter_lr: Option<f64>,
    pub parallel: bool,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self {
            rounds: 4,
            local_epochs: 2,
            batch_size: 64,
            optimizer: AdamWConfig::default(),
            adapter_lr: None,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub alpha_ci: f64,
    pub max_cond: usize,
    pub refutation_reps: usize,
    /// Column used for the direct/indirect split, e.g. `m1`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mediator: Option<String>,
    /// Causal ordering of columns; defaults to attributes, then auxiliaries, then `y`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tiers: Option<Vec<Vec<String>>>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            alpha_ci: 0.05,
            max_cond: 3,
            refutation_reps: 100,
            mediator: None,
            tiers: None,
        }
    }
}

/// One row of the debiasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(flatten)]
    pub weights: LossWeights,
}

/// Effect-strength sweep: for each strength, train the baseline and an
/// A1-debiased model on the `effect_sweep` SCM and relate |TE| to |ΔΦ_DP|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub effects: Vec<f64>,
    pub replicates: usize,
    pub n: usize,
    /// λ_lf = λ_gf of the debiased run.
    pub lambda: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            effects: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            replicates: 8,
            n: 8000,
            lambda: 0.05,
        }
    }
}

/// Independent sub-seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub partition: u64,
    pub bank: u64,
    pub init: u64,
    pub federation: u64,
    pub refutation: u64,
    pub sweep: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let mut s = master;
        Self {
            data: splitmix64(&mut s),
            partition: splitmix64(&mut s),
            bank: splitmix64(&mut s),
            init: splitmix64(&mut s),
            federation: splitmix64(&mut s),
            refutation: splitmix64(&mut s),
            sweep: splitmix64(&mut s),
        }
    }
}

impl ExperimentConfig {
    /// The shipped four-variant configuration.
    pub fn default_experiment() -> Self {
        Self::from_toml(DEFAULT_TOML).expect("shipped default config parses")
    }

    pub fn default_toml() -> &'static str {
        DEFAULT_TOML
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    pub fn baseline(&self) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == BASELINE)
    }

    /// Resolves the data section to an SCM, or `None` for CSV input.
    pub fn scm(&self) -> Result<Option<ScmDecl>> {
        if let Some(decl) = &self.data.scm {
            return Ok(Some(decl.clone()));
        }
        match &self.data.preset {
            Some(name) => presets::by_name(name)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("unknown preset `{name}`; known: {}", presets::NAMES.join(", ")))),
            None => Ok(None),
        }
    }

    /// Checks everything that does not depend on the data itself.
    pub fn validate(&self) -> Result<()> {
        let sources = [self.data.preset.is_some(), self.data.scm.is_some(), self.data.csv.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config("[data] needs exactly one of `preset`, `scm` or `csv`".into()));
        }
        if let Some(decl) = self.scm()? {
            decl.build()?;
            if self.data.n == 0 {
                return Err(Error::Config("[data] n must be at least 1".into()));
            }
        }
        self.partition.plan(0).validate()?;
        if self.model.d_e == 0 || self.model.hidden == 0 {
            return Err(Error::Config("[model] d_e and hidden must be at least 1".into()));
        }
        if !(self.model.tau > 0.0 && self.model.tau.is_finite()) {
            return Err(Error::Config(format!("[model] tau must be positive, got {}", self.model.tau)));
        }
        let a = &self.analysis;
        if !(a.alpha_ci > 0.0 && a.alpha_ci < 1.0) {
            return Err(Error::Config(format!("[analysis] alpha_ci must lie in (0, 1), got {}", a.alpha_ci)));
        }
        if a.refutation_reps < crate::causal::MIN_REFUTATION_REPS {
            return Err(Error::Config(format!(
                "[analysis] refutation_reps must be at least {}",
                crate::causal::MIN_REFUTATION_REPS
            )));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one [[variants]] entry is required".into()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::Config(format!("duplicate variant `{}`", v.name)));
            }
            if v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::Config(format!(
                    "variant name `{}` must be non-empty and use only letters, digits, `-` or `_`",
                    v.name
                )));
            }
            v.weights
                .validate(v.weights.alpha.len())
                .map_err(|e| Error::Config(format!("variant `{}`: {e}", v.name)))?;
        }
        match self.baseline() {
            Some(b) if b.weights.lambda_lf != 0.0 || b.weights.lambda_gf != 0.0 => {
                return Err(Error::Config("the `baseline` variant must have lambda_lf = lambda_gf = 0".into()));
            }
            None => {
                return Err(Error::Config("a variant named `baseline` is required: every ΔΦ is measured against it".into()));
            }
            _ => {}
        }
        if let Some(s) = &self.sweep {
            if s.effects.len() < 3 {
                return Err(Error::Config("[sweep] needs at least 3 effect strengths".into()));
            }
            if s.effects.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(Error::Config("[sweep] effects must lie in [0, 1]".into()));
            }
            if s.replicates == 0 || s.n == 0 {
                return Err(Error::Config("[sweep] replicates and n must be at least 1".into()));
            }
            if !(s.lambda >= 0.0 && s.lambda.is_finite()) {
                return Err(Error::Config("[sweep] lambda must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Checks that do need the data: attribute count and column names.
    pub fn validate_against(&self, attributes: usize, columns: &[String]) -> Result<()> {
        for v in &self.variants {
            v.weights
                .validate(attributes)
                .map_err(|e| Error::Config(format!("variant `{}`: {e}", v.name)))?;
        }
        let known = |c: &str| columns.iter().any(|k| k == c);
        if !known(&self.partition.skew_variable) {
            return Err(Error::Config(format!(
                "[partition] skew_variable `{}` is not a data column",
                self.partition.skew_variable
            )));
        }
        if let Some(m) = &self.analysis.mediator {
            if !known(m) || m == LABEL_COLUMN || m.starts_with('a') {
                return Err(Error::Config(format!("[analysis] mediator `{m}` must be an auxiliary column (m1, m2, …)")));
            }
        }
        if let Some(tiers) = &self.analysis.tiers {
            let flat: Vec<&String> = tiers.iter().flatten().collect();
            for c in columns {
                if flat.iter().filter(|t| **t == c).count() != 1 {
                    return Err(Error::Config(format!("[analysis] tiers must list column `{c}` exactly once")));
                }
            }
            if flat.len() != columns.len() {
                return Err(Error::Config("[analysis] tiers name columns that are not in the data".into()));
            }
        }
        Ok(())
    }

    /// Tier index per column of `columns`.
    pub fn tiers_for(&self, columns: &[String]) -> Vec<usize> {
        match &self.analysis.tiers {
            Some(tiers) => columns
                .iter()
                .map(|c| tiers.iter().position(|t| t.contains(c)).unwrap_or(usize::MAX))
                .collect(),
            None => columns
                .iter()
                .map(|c| {
                    if c == LABEL_COLUMN {
                        2
                    } else if c.starts_with('a') {
                        0
                    } else {
                        1
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_is_the_four_row_grid() {
        let cfg = ExperimentConfig::default_experiment();
        let names: Vec<&str> = cfg.variants.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["baseline", "debias-A1", "debias-A2", "debias-both"]);
        assert_eq!(cfg.partition.clients, 5);
        assert!(cfg.sweep.is_none());
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn baseline_must_be_unregularized() {
        let text = ExperimentConfig::default_toml().replacen("lambda_lf = 0.0", "lambda_lf = 0.1", 1);
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
        let text = ExperimentConfig::default_toml().replace("name = \"baseline\"", "name = \"plain\"");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_sections() {
        let base = ExperimentConfig::default_toml();
        for (from, to) in [
            ("preset = \"two_attribute\"", "preset = \"nope\""),
            ("preset = \"two_attribute\"", "csv = \"x.csv\"\npreset = \"direct\""),
            ("alpha_ci = 0.05", "alpha_ci = 1.5"),
            ("refutation_reps = 100", "refutation_reps = 5"),
            ("alpha = [1.0, 0.0]", "alpha = [1.0, 1.0]"),
            ("d_e = 16", "d_e = 16\nwidth = 3"),
            ("name = \"debias-A2\"", "name = \"debias-A1\""),
        ] {
            let text = base.replacen(from, to, 1);
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))), "{to}");
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s = Seeds::derive(0);
        let all = [s.data, s.partition, s.bank, s.init, s.federation, s.refutation, s.sweep];
        for i in 0..all.len() {
            for j in 0..i {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_eq!(Seeds::derive(0), s);
        assert_ne!(Seeds::derive(1), s);
    }

    #[test]
    fn default_tiers() {
        let cfg = ExperimentConfig {
            analysis: AnalysisSection::default(),
            ..ExperimentConfig::default_experiment()
        };
        let cols: Vec<String> = ["a1", "a2", "y", "m1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(cfg.tiers_for(&cols), [0, 0, 2, 1]);
        let shipped = ExperimentConfig::default_experiment();
        assert_eq!(shipped.tiers_for(&cols), [0, 0, 2, 1]);
        shipped.validate_against(2, &cols).unwrap();
        assert!(shipped.validate_against(3, &cols).is_err());
    }
}
