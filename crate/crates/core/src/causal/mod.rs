//! Causal analysis over binary variables: contingency tables, the G² conditional
//! independence test, PC discovery, backdoor-adjusted total/direct/indirect
//! effects, random-common-cause refutation and the effect/fairness trend.

mod effects;
mod graph;

pub use effects::{
    direct_indirect_effects, refute_random_common_cause, total_effect, trend_analysis, MediationEstimate, MIN_REFUTATION_REPS,
    RefutationResult, TotalEffect, TrendResult,
};
pub use graph::{adjustment_set, backdoor_set, orient_by_tiers, pc_discover, pc_from_table, CausalGraph, GraphEdges, PcOptions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::chi2_sf;
use crate::scmdata::Dataset;

/// Joint counts over binary variables. Cell index is `Σ_j v_j << j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    names: Vec<String>,
    counts: Vec<u64>,
    n: u64,
}

/// Hard limit on variables in one table (2^20 cells).
pub const MAX_TABLE_VARS: usize = 20;

impl ContingencyTable {
    pub fn from_columns(names: Vec<String>, columns: &[&[u8]]) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                expected: names.len(),
                actual: columns.len(),
                context: "table columns",
            });
        }
        if names.len() > MAX_TABLE_VARS {
            return Err(Error::StateSpaceTooLarge {
                vars: names.len(),
                limit: MAX_TABLE_VARS,
            });
        }
        let n = columns.first().map_or(0, |c| c.len());
        if n == 0 {
            return Err(Error::InvalidArgument("contingency table needs at least one row".into()));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch("table columns differ in length".into()));
        }
        let mut counts = vec![0u64; 1 << names.len()];
        for i in 0..n {
            let mut idx = 0usize;
            for (j, col) in columns.iter().enumerate() {
                if col[i] > 1 {
                    return Err(Error::Validation {
                        row: i,
                        column: names[j].clone(),
                        detail: format!("value {} is not binary", col[i]),
                    });
                }
                idx |= (col[i] as usize) << j;
            }
            counts[idx] += 1;
        }
        Ok(Self {
            names,
            counts,
            n: n as u64,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Counts of the marginal over `vars` (by position); result index is `Σ_j v_j << j`.
    pub fn marginal(&self, vars: &[usize]) -> Vec<u64> {
        let mut out = vec![0u64; 1 << vars.len()];
        for (cell, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let mut idx = 0;
            for (j, &v) in vars.iter().enumerate() {
                idx |= ((cell >> v) & 1) << j;
            }
            out[idx] += c;
        }
        out
    }

    /// Marginal probability `P(var = 1)`, unsmoothed.
    pub fn probability(&self, var: &str) -> Result<f64> {
        let m = self.marginal(&[self.index_of(var)?]);
        Ok(m[1] as f64 / self.n as f64)
    }

    /// `P(var = 1 | given)`. An empty conditioning stratum is an error; an empty
    /// cell in a nonempty stratum is answered with add-0.5 smoothing.
    pub fn conditional(&self, var: &str, given: &[(&str, u8)]) -> Result<f64> {
        let mut vars = vec![self.index_of(var)?];
        for (name, _) in given {
            vars.push(self.index_of(name)?);
        }
        let m = self.marginal(&vars);
        let mut base = 0;
        for (j, (_, v)) in given.iter().enumerate() {
            base |= (*v as usize & 1) << (j + 1);
        }
        let (c0, c1) = (m[base], m[base | 1]);
        let total = c0 + c1;
        if total == 0 {
            return Err(Error::Unsupported(format!("no rows with {given:?}")));
        }
        if given.is_empty() || (c0 > 0 && c1 > 0) {
            Ok(c1 as f64 / total as f64)
        } else {
            Ok((c1 as f64 + 0.5) / (total as f64 + 1.0))
        }
    }
}

/// Joint table over the named discrete columns of a dataset.
pub fn estimate_joint(data: &Dataset, variables: &[&str]) -> Result<ContingencyTable> {
    let cols: Vec<&[u8]> = variables.iter().map(|v| data.column(v)).collect::<Result<_>>()?;
    ContingencyTable::from_columns(variables.iter().map(|s| s.to_string()).collect(), &cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub g2: f64,
    pub df: u32,
    pub p_value: f64,
    pub independent: bool,
}

pub(crate) fn ci_test_idx(table: &ContingencyTable, a: usize, y: usize, z: &[usize], alpha: f64) -> Result<CiResult> {
    if a == y || z.contains(&a) || z.contains(&y) {
        return Err(Error::InvalidArgument("CI test variables must be distinct".into()));
    }
    let mut vars = vec![a, y];
    vars.extend_from_slice(z);
    let m = table.marginal(&vars);
    let mut g2 = 0.0;
    let mut strata = 0u32;
    for s in 0..(1usize << z.len()) {
        let cell = |av: usize, yv: usize| m[av | (yv << 1) | (s << 2)] as f64;
        let nz: f64 = (0..4).map(|c| cell(c & 1, c >> 1)).sum();
        if nz == 0.0 {
            continue;
        }
        strata += 1;
        for av in 0..2 {
            for yv in 0..2 {
                let o = cell(av, yv);
                if o == 0.0 {
                    continue;
                }
                let na = cell(av, 0) + cell(av, 1);
                let ny = cell(0, yv) + cell(1, yv);
                g2 += o * (o * nz / (na * ny)).ln();
            }
        }
    }
    if strata == 0 {
        return Err(Error::Unsupported("every conditioning stratum is empty".into()));
    }
    let g2 = (2.0 * g2).max(0.0);
    let df = strata.max(1);
    let p_value = chi2_sf(g2, df)?;
    Ok(CiResult {
        g2,
        df,
        p_value,
        independent: p_value > alpha,
    })
}

/// G² test of `A ⊥ Y | Z` with one degree of freedom per nonempty Z stratum.
pub fn ci_test_g2(table: &ContingencyTable, a: &str, y: &str, z: &[&str], alpha: f64) -> Result<CiResult> {
    let zi: Vec<usize> = z.iter().map(|v| table.index_of(v)).collect::<Result<_>>()?;
    ci_test_idx(table, table.index_of(a)?, table.index_of(y)?, &zi, alpha)
}
