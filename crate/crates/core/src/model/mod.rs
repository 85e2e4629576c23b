//! Desk-scale vision-language fairness model.
//!
//! A frozen random linear encoder `E` followed by a trainable affine adapter
//! produces the visual representation `z̃ = W_a·(E·x) + b_a`. Frozen unit
//! embeddings stand in for demographic-only text prompts (`t^k_g`, one per
//! attribute and group) and for class prompts (`t_y`). A two-layer classifier
//! scores each class from `[z̃ ; t_y]`.
//!
//! Trainable parameters (shared with the server) are exactly [`ModelParams`];
//! everything in [`EncoderBank`] is fixed.

mod loss;
mod params_io;

pub use loss::{
    contrastive_loss, kink_margin, local_fairness_reg, soft_global_fairness_reg, total_loss_and_grads, LossBreakdown,
    LocalFairness,
};
pub use params_io::{params_from_bytes, params_to_bytes, read_params, write_params, ParamsHeader, TensorEntry, PARAMS_LAYOUT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::PredictionSet;
use crate::numkit::{cosine, dot, norm, softmax_unchecked, Matrix, ProbVector, Rng};
use crate::scmdata::{attribute_column, Dataset};

/// Rng streams used to build frozen and trainable state.
const BANK_STREAM: u64 = 0xB0_0001;
const INIT_STREAM: u64 = 0xB0_0002;

/// Default softmax temperature for group relevance.
pub const DEFAULT_TAU: f64 = 0.07;

fn random_unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal(0.0, 1.0)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBank {
    /// `d_e × d_x` frozen encoder.
    pub encoder: Matrix,
    /// `group_embeddings[k][g]`: unit vector for group `g` of attribute `k`.
    pub group_embeddings: Vec<[Vec<f64>; 2]>,
    /// `class_embeddings[y]`: unit vector for class `y`.
    pub class_embeddings: [Vec<f64>; 2],
    pub tau: f64,
}

impl EncoderBank {
    /// Deterministic in `seed`; every client building from the same seed gets the same bank.
    pub fn new(d_x: usize, d_e: usize, num_attributes: usize, tau: f64, seed: u64) -> Result<Self> {
        if d_x == 0 || d_e == 0 {
            return Err(Error::InvalidArgument("encoder dimensions must be positive".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let mut rng = Rng::new(seed, BANK_STREAM);
        let scale = 1.0 / (d_x as f64).sqrt();
        let encoder = Matrix::from_fn(d_e, d_x, |_, _| rng.normal(0.0, scale));
        let class_embeddings = [random_unit(&mut rng, d_e), random_unit(&mut rng, d_e)];
        let group_embeddings = (0..num_attributes)
            .map(|_| [random_unit(&mut rng, d_e), random_unit(&mut rng, d_e)])
            .collect();
        Ok(Self {
            encoder,
            group_embeddings,
            class_embeddings,
            tau,
        })
    }

    pub fn d_x(&self) -> usize {
        self.encoder.cols()
    }

    pub fn d_e(&self) -> usize {
        self.encoder.rows()
    }

    pub fn num_attributes(&self) -> usize {
        self.group_embeddings.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub d_e: usize,
    pub hidden: usize,
}

impl ParamShape {
    /// `(name, rows, cols)` in flattening order.
    pub fn layout(&self) -> [(&'static str, usize, usize); 6] {
        let (e, h) = (self.d_e, self.hidden);
        [
            ("adapter.weight", e, e),
            ("adapter.bias", e, 1),
            ("classifier.fc1.weight", h, 2 * e),
            ("classifier.fc1.bias", h, 1),
            ("classifier.fc2.weight", 1, h),
            ("classifier.fc2.bias", 1, 1),
        ]
    }

    pub fn len(&self) -> usize {
        self.layout().iter().map(|(_, r, c)| r * c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat range occupied by the adapter (weight and bias).
    pub fn adapter_range(&self) -> std::ops::Range<usize> {
        0..self.d_e * self.d_e + self.d_e
    }
}

/// Trainable adapter and classifier weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub adapter_w: Matrix,
    pub adapter_b: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ModelParams {
    pub fn zeros(shape: ParamShape) -> Self {
        Self {
            adapter_w: Matrix::zeros(shape.d_e, shape.d_e),
            adapter_b: vec![0.0; shape.d_e],
            w1: Matrix::zeros(shape.hidden, 2 * shape.d_e),
            b1: vec![0.0; shape.hidden],
            w2: vec![0.0; shape.hidden],
            b2: 0.0,
        }
    }

    /// Adapter at identity plus N(0, 0.01²); classifier uniform in ±1/√fan_in.
    pub fn init(shape: ParamShape, seed: u64) -> Self {
        let mut rng = Rng::new(seed, INIT_STREAM);
        let mut p = Self::zeros(shape);
        p.adapter_w = Matrix::from_fn(shape.d_e, shape.d_e, |r, c| {
            (r == c) as u8 as f64 + rng.normal(0.0, 0.01)
        });
        let b1_bound = 1.0 / ((2 * shape.d_e) as f64).sqrt();
        p.w1 = Matrix::from_fn(shape.hidden, 2 * shape.d_e, |_, _| rng.uniform(-b1_bound, b1_bound));
        p.b1 = (0..shape.hidden).map(|_| rng.uniform(-b1_bound, b1_bound)).collect();
        let b2_bound = 1.0 / (shape.hidden as f64).sqrt();
        p.w2 = (0..shape.hidden).map(|_| rng.uniform(-b2_bound, b2_bound)).collect();
        p.b2 = rng.uniform(-b2_bound, b2_bound);
        p
    }

    pub fn shape(&self) -> ParamShape {
        ParamShape {
            d_e: self.adapter_w.rows(),
            hidden: self.w1.rows(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.shape().len());
        v.extend_from_slice(self.adapter_w.as_slice());
        v.extend_from_slice(&self.adapter_b);
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(shape: ParamShape, flat: &[f64]) -> Result<Self> {
        if flat.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                actual: flat.len(),
                context: "flat parameter vector",
            });
        }
        let mut it = flat.iter().copied();
        let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<f64>>();
        let (e, h) = (shape.d_e, shape.hidden);
        Ok(Self {
            adapter_w: Matrix::from_vec(e, e, take(e * e))?,
            adapter_b: take(e),
            w1: Matrix::from_vec(h, 2 * e, take(2 * e * h))?,
            b1: take(h),
            w2: take(h),
            b2: take(1)[0],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Which hard-metric relaxation the global regularizer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessNotion {
    Dp,
    Eo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Per-attribute weights of the local (representation) regularizer; sum to 1.
    pub alpha: Vec<f64>,
    /// Per-attribute weights of the global (prediction) regularizer; sum to 1.
    pub beta: Vec<f64>,
    pub lambda_con: f64,
    pub lambda_lf: f64,
    pub lambda_gf: f64,
    pub notion: FairnessNotion,
}

impl LossWeights {
    /// Even attribute weights with the default multipliers.
    pub fn uniform(k: usize) -> Self {
        Self {
            alpha: vec![1.0 / k as f64; k],
            beta: vec![1.0 / k as f64; k],
            lambda_con: 0.5,
            lambda_lf: 1.0,
            lambda_gf: 1.0,
            notion: FairnessNotion::Dp,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (name, w) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if w.len() != k {
                return Err(Error::Config(format!("{name} needs {k} entries, got {}", w.len())));
            }
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config(format!("{name} entries must be non-negative")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{name} must sum to 1, sums to {s}")));
            }
        }
        for (name, l) in [
            ("lambda_con", self.lambda_con),
            ("lambda_lf", self.lambda_lf),
            ("lambda_gf", self.lambda_gf),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number")));
            }
        }
        Ok(())
    }
}

fn check_input(bank: &EncoderBank, params: &ModelParams) -> Result<()> {
    let shape = params.shape();
    if shape.d_e != bank.d_e() || params.w1.cols() != 2 * bank.d_e() {
        return Err(Error::DimensionMismatch(format!(
            "params built for d_e={} but the encoder bank has d_e={}",
            shape.d_e,
            bank.d_e()
        )));
    }
    Ok(())
}

/// `z̃ = W_a·(E·x) + b_a`.
pub fn encode_visual(params: &ModelParams, bank: &EncoderBank, x: &[f64]) -> Result<Vec<f64>> {
    check_input(bank, params)?;
    let u = bank.encoder.matvec(x)?;
    let mut z = params.adapter_w.matvec(&u)?;
    for (zi, bi) in z.iter_mut().zip(&params.adapter_b) {
        *zi += bi;
    }
    Ok(z)
}

/// `Pr(Aᵏ) = softmax_g(cos(z̃, tᵏ_g) / τ)`.
pub fn group_relevance(z: &[f64], bank: &EncoderBank, k: usize) -> Result<ProbVector> {
    let groups = bank.group_embeddings.get(k).ok_or_else(|| {
        Error::InvalidArgument(format!("attribute {k} out of range ({})", bank.num_attributes()))
    })?;
    let cos = [cosine(z, &groups[0])?, cosine(z, &groups[1])?];
    ProbVector::new(softmax_unchecked(&cos, bank.tau))
}

/// Per-class logits, positive-class probability and predicted class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub logits: [f64; 2],
    pub score: f64,
    pub prediction: u8,
}

/// `logit_y = W2·relu(W1·[z̃ ; t_y] + b1) + b2`; ties predict class 0.
pub fn classify(params: &ModelParams, bank: &EncoderBank, z: &[f64]) -> Result<Classification> {
    check_input(bank, params)?;
    if z.len() != bank.d_e() {
        return Err(Error::DimensionMismatch(format!(
            "z has length {}, expected {}",
            z.len(),
            bank.d_e()
        )));
    }
    let mut logits = [0.0; 2];
    let mut input = vec![0.0; 2 * bank.d_e()];
    input[..bank.d_e()].copy_from_slice(z);
    for (y, logit) in logits.iter_mut().enumerate() {
        input[bank.d_e()..].copy_from_slice(&bank.class_embeddings[y]);
        let mut acc = params.b2;
        for h in 0..params.w1.rows() {
            let pre = dot(params.w1.row(h), &input) + params.b1[h];
            if pre > 0.0 {
                acc += params.w2[h] * pre;
            }
        }
        *logit = acc;
    }
    let score = softmax_unchecked(&logits, 1.0)[1];
    Ok(Classification {
        logits,
        score,
        prediction: (logits[1] > logits[0]) as u8,
    })
}

/// Diagnostic path: predict the class whose embedding is most cosine-similar to `z̃`.
pub fn predict_by_cosine(z: &[f64], bank: &EncoderBank) -> Result<u8> {
    let c0 = cosine(z, &bank.class_embeddings[0])?;
    let c1 = cosine(z, &bank.class_embeddings[1])?;
    Ok((c1 > c0) as u8)
}

/// Runs the classifier on every row and packages the result for the fairness metrics.
pub fn predict(params: &ModelParams, bank: &EncoderBank, data: &Dataset, cosine_only: bool) -> Result<PredictionSet> {
    let mut y_pred = Vec::with_capacity(data.len());
    let mut y_score = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let z = encode_visual(params, bank, data.features.row(i))?;
        let c = classify(params, bank, &z)?;
        y_pred.push(if cosine_only { predict_by_cosine(&z, bank)? } else { c.prediction });
        y_score.push(c.score);
    }
    PredictionSet::new(
        data.labels.clone(),
        y_pred,
        y_score,
        (0..data.num_attributes()).map(attribute_column).collect(),
        data.attributes.clone(),
    )
}
