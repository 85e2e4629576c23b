use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Rng stream reserved for partitioning.
const PARTITION_STREAM: u64 = 0x7061_7274;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionPlan {
    pub clients: usize,
    /// Dirichlet concentration γ; small values give strongly skewed clients.
    pub gamma: f64,
    /// Column whose strata are skewed across clients.
    pub skew_variable: String,
    pub test_fraction: f64,
    pub train_parts: u32,
    pub val_parts: u32,
    pub seed: u64,
}

impl Default for PartitionPlan {
    fn default() -> Self {
        Self {
            clients: 5,
            gamma: 0.5,
            skew_variable: "a1".into(),
            test_fraction: 0.2,
            train_parts: 4,
            val_parts: 1,
            seed: 0,
        }
    }
}

impl PartitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::Config("partition needs at least one client".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.train_parts == 0 || self.val_parts == 0 {
            return Err(Error::Config("train:val ratio parts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSplit {
    pub train: Dataset,
    pub val: Dataset,
    /// Source row indices, ascending.
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub test: Dataset,
    pub test_rows: Vec<usize>,
    pub clients: Vec<ClientSplit>,
    /// Realized Dirichlet proportions, `[stratum][client]`.
    pub skew: Vec<Vec<f64>>,
}

/// Largest-remainder rounding of `props · total`; ties go to the lower index.
fn apportion(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (raw[i] - raw[i].floor(), raw[j] - raw[j].floor());
        rj.partial_cmp(&ri).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Server test split, then Dirichlet-skewed client shards split train:val.
pub fn partition_clients(data: &Dataset, plan: &PartitionPlan) -> Result<Partition> {
    plan.validate()?;
    let n = data.len();
    let s = plan.clients;
    if n < 10 * s {
        return Err(Error::PartitionInfeasible(format!(
            "{n} rows are too few for {s} clients (need at least {})",
            10 * s
        )));
    }
    let skew_col = data.column(&plan.skew_variable)?;
    let mut rng = Rng::new(plan.seed, PARTITION_STREAM);

    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_test = ((plan.test_fraction * n as f64).round() as usize).clamp(1, n - 2 * s);
    let mut test_rows = order[..n_test].to_vec();
    let rest = &order[n_test..];

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); s];
    let mut skew = Vec::with_capacity(2);
    for stratum in 0..2u8 {
        let rows: Vec<usize> = rest.iter().copied().filter(|&i| skew_col[i] == stratum).collect();
        let props = rng.dirichlet(plan.gamma, s);
        let counts = apportion(&props, rows.len());
        let mut offset = 0;
        for (client, &c) in counts.iter().enumerate() {
            shards[client].extend_from_slice(&rows[offset..offset + c]);
            offset += c;
        }
        skew.push(props);
    }

    let total_parts = (plan.train_parts + plan.val_parts) as f64;
    let mut clients = Vec::with_capacity(s);
    for (id, shard) in shards.into_iter().enumerate() {
        if shard.len() < 2 {
            return Err(Error::PartitionInfeasible(format!(
                "client {id} would receive {} sample(s); raise gamma or n, or change the seed",
                shard.len()
            )));
        }
        let n_val = (shard.len() as f64 * plan.val_parts as f64 / total_parts).round() as usize;
        let mut val_rows = shard[..n_val].to_vec();
        let mut train_rows = shard[n_val..].to_vec();
        val_rows.sort_unstable();
        train_rows.sort_unstable();
        clients.push(ClientSplit {
            train: data.subset(&train_rows, format!("client {id} train")),
            val: data.subset(&val_rows, format!("client {id} val")),
            train_rows,
            val_rows,
        });
    }
    test_rows.sort_unstable();
    Ok(Partition {
        test: data.subset(&test_rows, "server test"),
        test_rows,
        clients,
        skew,
    })
}
