//! Federated training: every round the server broadcasts the global
//! parameters, each client runs local AdamW epochs on its own shard, and the
//! server takes the size-weighted FedAvg and evaluates on its held-out test split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::FairnessReport;
use crate::model::{predict, total_loss_and_grads, EncoderBank, LossBreakdown, LossWeights, ModelParams};
use crate::numkit::{adamw_step, AdamWConfig, LrGroup, OptimizerState, Rng};
use crate::scmdata::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FLConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Separate learning rate for the adapter block; `None` uses `optimizer.lr` everywhere.
    pub adapter_lr: Option<f64>,
    pub weights: LossWeights,
    /// Train clients on the rayon pool. Results do not depend on this.
    pub parallel: bool,
}

impl Default for FLConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            local_epochs: 2,
            batch_size: 64,
            seed: 0,
            optimizer: AdamWConfig::default(),
            adapter_lr: None,
            weights: LossWeights::uniform(2),
            parallel: true,
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("rounds, local epochs and batch size must all be at least 1".into()));
        }
        let lrs = std::iter::once(self.optimizer.lr).chain(self.adapter_lr);
        for lr in lrs {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// One client's private state. Only its own data ever reaches `local_train`.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub train: Dataset,
    pub val: Dataset,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub rng: Rng,
}

impl ClientState {
    pub fn new(id: usize, train: Dataset, val: Dataset, params: ModelParams, config: &FLConfig) -> Self {
        let shape = params.shape();
        let mut optimizer = OptimizerState::new(shape.len(), config.optimizer);
        if let Some(lr) = config.adapter_lr {
            let r = shape.adapter_range();
            optimizer = optimizer.with_lr_groups(vec![LrGroup {
                start: r.start,
                end: r.end,
                lr,
            }]);
        }
        Self {
            id,
            train,
            val,
            params,
            optimizer,
            rng: Rng::new(config.seed, id as u64),
        }
    }
}

/// Size-weighted mean of loss breakdowns.
fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> Option<LossBreakdown> {
    let total: usize = parts.iter().map(|(_, n)| n).sum();
    let (first, _) = parts.first()?;
    let mut acc = LossBreakdown {
        total: 0.0,
        supervised: 0.0,
        contrastive: 0.0,
        local_fairness: 0.0,
        global_fairness: 0.0,
        local_per_attribute: vec![0.0; first.local_per_attribute.len()],
        global_per_attribute: vec![0.0; first.global_per_attribute.len()],
    };
    for (b, n) in parts {
        let w = *n as f64 / total as f64;
        acc.total += w * b.total;
        acc.supervised += w * b.supervised;
        acc.contrastive += w * b.contrastive;
        acc.local_fairness += w * b.local_fairness;
        acc.global_fairness += w * b.global_fairness;
        for (a, v) in acc.local_per_attribute.iter_mut().zip(&b.local_per_attribute) {
            *a += w * v;
        }
        for (a, v) in acc.global_per_attribute.iter_mut().zip(&b.global_per_attribute) {
            *a += w * v;
        }
    }
    Some(acc)
}

/// Runs `config.local_epochs` epochs of shuffled mini-batch AdamW on the client's
/// training shard. Returns the mean loss breakdown of each epoch.
pub fn local_train(client: &mut ClientState, bank: &EncoderBank, config: &FLConfig) -> Result<Vec<LossBreakdown>> {
    if client.train.is_empty() {
        return Err(Error::InvalidArgument(format!("client {} has no training rows", client.id)));
    }
    let n = client.train.len();
    let mut trace = Vec::with_capacity(config.local_epochs);
    let mut flat = client.params.to_flat();
    let shape = client.params.shape();
    for _ in 0..config.local_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        client.rng.shuffle(&mut order);
        let mut parts = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let batch = client.train.subset(chunk, "batch");
            let params = ModelParams::from_flat(shape, &flat)?;
            let (loss, grad) = total_loss_and_grads(&params, bank, &batch, &config.weights)?;
            adamw_step(&mut flat, &grad, &mut client.optimizer)?;
            parts.push((loss, chunk.len()));
        }
        trace.extend(weighted_mean(&parts));
    }
    client.params = ModelParams::from_flat(shape, &flat)?;
    Ok(trace)
}

/// `W = Σ_s (|D_s| / Σ|D_s|) · W_s`, accumulated in client order.
pub fn aggregate(params: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let first = params
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate of zero clients".into()))?;
    if params.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: sizes.len(),
            context: "aggregate sizes",
        });
    }
    let shape = first.shape();
    if params.iter().any(|p| p.shape() != shape) {
        return Err(Error::DimensionMismatch("client parameter shapes differ".into()));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("aggregate weights sum to zero".into()));
    }
    let weight = |s: usize| s as f64 / total as f64;
    let mut acc: Vec<f64> = first.to_flat().iter().map(|v| weight(sizes[0]) * v).collect();
    for (p, &s) in params.iter().zip(sizes).skip(1) {
        for (a, v) in acc.iter_mut().zip(p.to_flat()) {
            *a += weight(s) * v;
        }
    }
    ModelParams::from_flat(shape, &acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundLoss {
    pub client: usize,
    pub train_rows: usize,
    /// Mean breakdown over the client's final local epoch.
    pub train: LossBreakdown,
    /// Loss of the client's updated model on its validation shard.
    pub val: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub clients: Vec<ClientRoundLoss>,
    pub report: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationOutcome {
    pub global: ModelParams,
    pub rounds: Vec<RoundLog>,
    pub report: FairnessReport,
}

pub fn evaluate(params: &ModelParams, bank: &EncoderBank, test: &Dataset) -> Result<FairnessReport> {
    FairnessReport::evaluate(&predict(params, bank, test, false)?)
}

fn client_round(client: &mut ClientState, bank: &EncoderBank, config: &FLConfig) -> Result<ClientRoundLoss> {
    let trace = local_train(client, bank, config)?;
    let val = if client.val.is_empty() {
        None
    } else {
        Some(total_loss_and_grads(&client.params, bank, &client.val, &config.weights)?.0)
    };
    Ok(ClientRoundLoss {
        client: client.id,
        train_rows: client.train.len(),
        train: trace.last().cloned().expect("at least one epoch"),
        val,
    })
}

/// `T` rounds of broadcast, local training, FedAvg and server-side evaluation.
///
/// Clients keep their optimizer moments and Rng streams across rounds; only
/// parameters are overwritten by the broadcast.
pub fn run_federation(
    clients: &mut [ClientState],
    bank: &EncoderBank,
    config: &FLConfig,
    test: &Dataset,
    initial: ModelParams,
) -> Result<FederationOutcome> {
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::InvalidArgument("federation needs at least one client".into()));
    }
    config.weights.validate(bank.num_attributes())?;
    let mut global = initial;
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        for c in clients.iter_mut() {
            c.params = global.clone();
        }
        let losses: Vec<ClientRoundLoss> = if config.parallel {
            clients
                .par_iter_mut()
                .map(|c| client_round(c, bank, config))
                .collect::<Result<_>>()?
        } else {
            clients
                .iter_mut()
                .map(|c| client_round(c, bank, config))
                .collect::<Result<_>>()?
        };
        let params: Vec<ModelParams> = clients.iter().map(|c| c.params.clone()).collect();
        let sizes: Vec<usize> = clients.iter().map(|c| c.train.len()).collect();
        global = aggregate(&params, &sizes)?;
        rounds.push(RoundLog {
            round,
            clients: losses,
            report: evaluate(&global, bank, test)?,
        });
    }
    let report = rounds.last().expect("rounds >= 1").report.clone();
    Ok(FederationOutcome { global, rounds, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamShape;
    use crate::numkit::Matrix;

    fn scalar_params(v: f64) -> ModelParams {
        ModelParams::from_flat(ParamShape { d_e: 1, hidden: 1 }, &[v; 7]).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let agg = aggregate(&[scalar_params(0.0), scalar_params(4.0)], &[1, 3]).unwrap();
        assert!(agg.to_flat().iter().all(|&v| v == 3.0));
        let p = ModelParams::init(ParamShape { d_e: 3, hidden: 2 }, 4);
        assert_eq!(aggregate(&[p.clone()], &[17]).unwrap(), p);
        let same = aggregate(&[p.clone(), p.clone(), p.clone()], &[1, 2, 3]).unwrap();
        for (a, b) in same.to_flat().iter().zip(p.to_flat()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(aggregate(&[], &[]).is_err());
        assert!(aggregate(&[p.clone()], &[0]).is_err());
        assert!(aggregate(&[p, scalar_params(1.0)], &[1, 1]).is_err());
    }

    fn toy_separable(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed, 5);
        let mut labels = Vec::with_capacity(n);
        let feats = Matrix::from_fn(n, 3, |r, c| {
            if c == 0 {
                let y = (r % 2) as u8;
                labels.push(y);
                if y == 1 {
                    1.5 + rng.normal(0.0, 0.3)
                } else {
                    -1.5 + rng.normal(0.0, 0.3)
                }
            } else {
                rng.normal(0.0, 1.0)
            }
        });
        let attrs = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        Dataset::new(feats, vec![attrs], labels, vec![], "toy").unwrap()
    }

    fn supervised_only() -> FLConfig {
        let mut w = LossWeights::uniform(1);
        w.lambda_con = 0.0;
        w.lambda_lf = 0.0;
        w.lambda_gf = 0.0;
        FLConfig {
            rounds: 1,
            local_epochs: 50,
            batch_size: 16,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..AdamWConfig::default()
            },
            weights: w,
            ..FLConfig::default()
        }
    }

    #[test]
    fn separable_sanity_run() {
        let data = toy_separable(200, 1);
        let bank = EncoderBank::new(3, 6, 1, 0.07, 2).unwrap();
        let cfg = supervised_only();
        let init = ModelParams::init(ParamShape { d_e: 6, hidden: 8 }, 2);
        let mut c = ClientState::new(0, data.clone(), data.subset(&[0, 1], "v"), init, &cfg);
        local_train(&mut c, &bank, &cfg).unwrap();
        let preds = predict(&c.params, &bank, &data, false).unwrap();
        let acc = preds.y_true.iter().zip(&preds.y_pred).filter(|(a, b)| a == b).count() as f64 / 200.0;
        assert!(acc >= 0.95, "train accuracy {acc}");
    }

    #[test]
    fn zero_epochs_leaves_params() {
        let data = toy_separable(20, 3);
        let bank = EncoderBank::new(3, 4, 1, 0.07, 2).unwrap();
        let cfg = FLConfig {
            local_epochs: 0,
            ..supervised_only()
        };
        let init = ModelParams::init(ParamShape { d_e: 4, hidden: 3 }, 2);
        let mut c = ClientState::new(0, data.clone(), data.clone(), init.clone(), &cfg);
        assert!(local_train(&mut c, &bank, &cfg).unwrap().is_empty());
        assert_eq!(c.params, init);
    }

    #[test]
    fn local_train_is_deterministic() {
        let data = toy_separable(60, 4);
        let bank = EncoderBank::new(3, 4, 1, 0.07, 2).unwrap();
        let cfg = FLConfig {
            local_epochs: 3,
            ..supervised_only()
        };
        let init = ModelParams::init(ParamShape { d_e: 4, hidden: 3 }, 2);
        let run = || {
            let mut c = ClientState::new(1, data.clone(), data.clone(), init.clone(), &cfg);
            local_train(&mut c, &bank, &cfg).unwrap();
            c.params.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }
}
