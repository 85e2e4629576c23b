use serde::{Deserialize, Serialize};

use super::{check_input, EncoderBank, FairnessNotion, LossWeights, ModelParams};
use crate::error::{Error, Result};
use crate::numkit::{cosine, cosine_grad_acc, cross_entropy_with_grad, dot, kl_div, softmax_unchecked, ProbVector};
use crate::scmdata::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub supervised: f64,
    pub contrastive: f64,
    pub local_fairness: f64,
    pub global_fairness: f64,
    pub local_per_attribute: Vec<f64>,
    pub global_per_attribute: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFairness {
    pub total: f64,
    pub per_attribute: Vec<f64>,
}

fn nonempty(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `L_lf = Σ_k α^k · mean_i KL(Pr(Aᵏ | z̃_i) ‖ 𝒰)`.
pub fn local_fairness_reg(zs: &[Vec<f64>], bank: &EncoderBank, weights: &LossWeights) -> Result<LocalFairness> {
    nonempty(zs.len(), "local fairness")?;
    let k_count = bank.num_attributes();
    if weights.alpha.len() != k_count {
        return Err(Error::LengthMismatch {
            expected: k_count,
            actual: weights.alpha.len(),
            context: "alpha weights",
        });
    }
    let uniform = ProbVector::uniform(2);
    let mut per_attribute = vec![0.0; k_count];
    for z in zs {
        for (k, acc) in per_attribute.iter_mut().enumerate() {
            *acc += kl_div(&super::group_relevance(z, bank, k)?, &uniform)?;
        }
    }
    per_attribute.iter_mut().for_each(|v| *v /= zs.len() as f64);
    let total = per_attribute.iter().zip(&weights.alpha).map(|(l, a)| l * a).sum();
    Ok(LocalFairness { total, per_attribute })
}

/// Batch mean of `1 − cos(z̃_i, t_{y_i})`.
pub fn contrastive_loss(zs: &[Vec<f64>], bank: &EncoderBank, y_true: &[u8]) -> Result<f64> {
    nonempty(zs.len(), "contrastive loss")?;
    if zs.len() != y_true.len() {
        return Err(Error::LengthMismatch {
            expected: zs.len(),
            actual: y_true.len(),
            context: "contrastive labels",
        });
    }
    let mut acc = 0.0;
    for (z, &y) in zs.iter().zip(y_true) {
        acc += 1.0 - cosine(z, &bank.class_embeddings[y as usize])?;
    }
    Ok(acc / zs.len() as f64)
}

/// Gap between mean scores of `a = 0` and `a = 1` within the rows selected by `keep`.
/// Returns the signed gap and the per-row derivative of the gap; empty groups give gap 0.
fn score_gap(scores: &[f64], attr: &[u8], keep: impl Fn(usize) -> bool) -> (f64, Vec<f64>) {
    let mut sum = [0.0; 2];
    let mut cnt = [0usize; 2];
    for i in 0..scores.len() {
        if keep(i) {
            sum[attr[i] as usize] += scores[i];
            cnt[attr[i] as usize] += 1;
        }
    }
    let mut d = vec![0.0; scores.len()];
    if cnt[0] == 0 || cnt[1] == 0 {
        return (0.0, d);
    }
    for i in 0..scores.len() {
        if keep(i) {
            d[i] = if attr[i] == 0 { 1.0 / cnt[0] as f64 } else { -1.0 / cnt[1] as f64 };
        }
    }
    (sum[0] / cnt[0] as f64 - sum[1] / cnt[1] as f64, d)
}

/// `Φᵏ_soft` and its subgradient with respect to each score.
fn soft_phi(scores: &[f64], y_true: &[u8], attr: &[u8], notion: FairnessNotion) -> (f64, Vec<f64>) {
    let signed = |(g, d): (f64, Vec<f64>)| -> (f64, Vec<f64>) {
        let s = if g > 0.0 {
            1.0
        } else if g < 0.0 {
            -1.0
        } else {
            0.0
        };
        (g.abs(), d.into_iter().map(|v| v * s).collect())
    };
    match notion {
        FairnessNotion::Dp => signed(score_gap(scores, attr, |_| true)),
        FairnessNotion::Eo => {
            let g0 = signed(score_gap(scores, attr, |i| y_true[i] == 0));
            let g1 = signed(score_gap(scores, attr, |i| y_true[i] == 1));
            if g1.0 > g0.0 {
                g1
            } else {
                g0
            }
        }
    }
}

fn check_global_inputs(scores: &[f64], y_true: &[u8], attributes: &[Vec<u8>], weights: &LossWeights) -> Result<()> {
    nonempty(scores.len(), "global fairness")?;
    if y_true.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: y_true.len(),
            context: "global fairness labels",
        });
    }
    if weights.beta.len() != attributes.len() {
        return Err(Error::LengthMismatch {
            expected: attributes.len(),
            actual: weights.beta.len(),
            context: "beta weights",
        });
    }
    for col in attributes {
        if col.len() != scores.len() {
            return Err(Error::LengthMismatch {
                expected: scores.len(),
                actual: col.len(),
                context: "global fairness attribute column",
            });
        }
    }
    Ok(())
}

/// `L_gf = Σ_k β^k Φᵏ_soft` on positive-class scores.
pub fn soft_global_fairness_reg(
    scores: &[f64],
    y_true: &[u8],
    attributes: &[Vec<u8>],
    weights: &LossWeights,
) -> Result<f64> {
    check_global_inputs(scores, y_true, attributes, weights)?;
    Ok(attributes
        .iter()
        .zip(&weights.beta)
        .map(|(a, b)| b * soft_phi(scores, y_true, a, weights.notion).0)
        .sum())
}

struct Forward {
    u: Vec<f64>,
    z: Vec<f64>,
    /// `[class][hidden]` pre-activations.
    pre: [Vec<f64>; 2],
    logits: [f64; 2],
}

fn forward(params: &ModelParams, bank: &EncoderBank, x: &[f64]) -> Result<Forward> {
    let u = bank.encoder.matvec(x)?;
    let mut z = params.adapter_w.matvec(&u)?;
    for (zi, bi) in z.iter_mut().zip(&params.adapter_b) {
        *zi += bi;
    }
    let d_e = z.len();
    let mut input = vec![0.0; 2 * d_e];
    input[..d_e].copy_from_slice(&z);
    let mut pre = [Vec::new(), Vec::new()];
    let mut logits = [0.0; 2];
    for y in 0..2 {
        input[d_e..].copy_from_slice(&bank.class_embeddings[y]);
        let p: Vec<f64> = (0..params.w1.rows())
            .map(|h| dot(params.w1.row(h), &input) + params.b1[h])
            .collect();
        logits[y] = params.b2 + p.iter().zip(&params.w2).map(|(v, w)| v.max(0.0) * w).sum::<f64>();
        pre[y] = p;
    }
    Ok(Forward { u, z, pre, logits })
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericFailure {
            term,
            detail: format!("loss evaluated to {v}"),
        })
    }
}

fn check_batch(params: &ModelParams, bank: &EncoderBank, batch: &Dataset, weights: &LossWeights) -> Result<()> {
    check_input(bank, params)?;
    nonempty(batch.len(), "total loss")?;
    if batch.feature_dim() != bank.d_x() {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} features, encoder expects {}",
            batch.feature_dim(),
            bank.d_x()
        )));
    }
    if batch.num_attributes() != bank.num_attributes() {
        return Err(Error::DimensionMismatch(format!(
            "batch has {} attributes, encoder bank has {}",
            batch.num_attributes(),
            bank.num_attributes()
        )));
    }
    weights.validate(bank.num_attributes())
}

/// Smallest distance of any non-smooth node (relu input, signed group gap,
/// EO max contest) from its kink. Finite-difference checks are only
/// meaningful when this is comfortably positive.
pub fn kink_margin(params: &ModelParams, bank: &EncoderBank, batch: &Dataset, weights: &LossWeights) -> Result<f64> {
    check_batch(params, bank, batch, weights)?;
    let mut margin = f64::INFINITY;
    let mut scores = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let f = forward(params, bank, batch.features.row(i))?;
        for p in f.pre.iter().flatten() {
            margin = margin.min(p.abs());
        }
        scores.push(softmax_unchecked(&f.logits, 1.0)[1]);
    }
    if weights.lambda_gf > 0.0 {
        for a in &batch.attributes {
            let gaps: Vec<f64> = match weights.notion {
                FairnessNotion::Dp => vec![score_gap(&scores, a, |_| true).0],
                FairnessNotion::Eo => {
                    let g0 = score_gap(&scores, a, |i| batch.labels[i] == 0).0;
                    let g1 = score_gap(&scores, a, |i| batch.labels[i] == 1).0;
                    margin = margin.min((g0.abs() - g1.abs()).abs());
                    vec![g0, g1]
                }
            };
            for g in gaps {
                margin = margin.min(g.abs());
            }
        }
    }
    Ok(margin)
}

/// Full objective and its gradient in the flat [`ModelParams`] layout.
pub fn total_loss_and_grads(
    params: &ModelParams,
    bank: &EncoderBank,
    batch: &Dataset,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_batch(params, bank, batch, weights)?;
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let d_e = bank.d_e();
    let k_count = bank.num_attributes();

    let fwd: Vec<Forward> = (0..n)
        .map(|i| forward(params, bank, batch.features.row(i)))
        .collect::<Result<_>>()?;

    // Per-sample gradient with respect to z̃ and to the two logits.
    let mut dz: Vec<Vec<f64>> = vec![vec![0.0; d_e]; n];
    let mut dlogits: Vec<[f64; 2]> = vec![[0.0; 2]; n];
    let mut scores = Vec::with_capacity(n);

    let mut sup = 0.0;
    for (i, f) in fwd.iter().enumerate() {
        let (l, g) = cross_entropy_with_grad(&f.logits, batch.labels[i] as usize)?;
        sup += l;
        dlogits[i] = [g[0] * inv_n, g[1] * inv_n];
        scores.push(softmax_unchecked(&f.logits, 1.0)[1]);
    }
    let sup = finite("supervised", sup * inv_n)?;

    let mut con = 0.0;
    for (i, f) in fwd.iter().enumerate() {
        let t = &bank.class_embeddings[batch.labels[i] as usize];
        cosine(&f.z, t)?;
        let c = cosine_grad_acc(&f.z, t, -weights.lambda_con * inv_n, &mut dz[i]);
        con += 1.0 - c.clamp(-1.0, 1.0);
    }
    let con = finite("contrastive", con * inv_n)?;

    let uniform = ProbVector::uniform(2);
    let mut lf_k = vec![0.0; k_count];
    for (i, f) in fwd.iter().enumerate() {
        for (k, acc) in lf_k.iter_mut().enumerate() {
            let groups = &bank.group_embeddings[k];
            let cos = [cosine(&f.z, &groups[0])?, cosine(&f.z, &groups[1])?];
            let p = softmax_unchecked(&cos, bank.tau);
            *acc += kl_div(&ProbVector::new(p.clone())?, &uniform)?;
            let scale = weights.lambda_lf * weights.alpha[k] * inv_n;
            if scale == 0.0 {
                continue;
            }
            // ∂KL/∂c_g = p_g (ln p_g − Σ_h p_h ln p_h) / τ
            let plogp = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
            let ent: f64 = p.iter().map(|&v| plogp(v)).sum();
            for g in 0..2 {
                let lnp = if p[g] > 0.0 { p[g].ln() } else { 0.0 };
                let dc = p[g] * (lnp - ent) / bank.tau;
                cosine_grad_acc(&f.z, &groups[g], scale * dc, &mut dz[i]);
            }
        }
    }
    lf_k.iter_mut().for_each(|v| *v *= inv_n);
    let lf = finite("local_fairness", lf_k.iter().zip(&weights.alpha).map(|(l, a)| l * a).sum())?;

    let mut gf_k = Vec::with_capacity(k_count);
    for (k, attr) in batch.attributes.iter().enumerate() {
        let (phi, dphi) = soft_phi(&scores, &batch.labels, attr, weights.notion);
        gf_k.push(phi);
        let scale = weights.lambda_gf * weights.beta[k];
        if scale == 0.0 {
            continue;
        }
        for i in 0..n {
            let ds = scale * dphi[i] * scores[i] * (1.0 - scores[i]);
            dlogits[i][1] += ds;
            dlogits[i][0] -= ds;
        }
    }
    let gf = finite("global_fairness", gf_k.iter().zip(&weights.beta).map(|(l, b)| l * b).sum())?;

    let mut grad = super::ModelParams::zeros(params.shape());
    let mut input = vec![0.0; 2 * d_e];
    let mut dpre = vec![0.0; params.w1.rows()];
    let mut din = vec![0.0; 2 * d_e];
    for (i, f) in fwd.iter().enumerate() {
        input[..d_e].copy_from_slice(&f.z);
        for y in 0..2 {
            let g = dlogits[i][y];
            if g == 0.0 {
                continue;
            }
            input[d_e..].copy_from_slice(&bank.class_embeddings[y]);
            grad.b2 += g;
            for (h, &p) in f.pre[y].iter().enumerate() {
                let active = p > 0.0;
                grad.w2[h] += g * if active { p } else { 0.0 };
                dpre[h] = if active { g * params.w2[h] } else { 0.0 };
            }
            grad.w1.add_outer(1.0, &dpre, &input);
            for (b, d) in grad.b1.iter_mut().zip(&dpre) {
                *b += d;
            }
            din.iter_mut().for_each(|v| *v = 0.0);
            params.w1.matvec_transpose_acc(&dpre, &mut din);
            for (a, b) in dz[i].iter_mut().zip(&din[..d_e]) {
                *a += b;
            }
        }
        grad.adapter_w.add_outer(1.0, &dz[i], &f.u);
        for (b, d) in grad.adapter_b.iter_mut().zip(&dz[i]) {
            *b += d;
        }
    }

    let total = finite(
        "total",
        sup + weights.lambda_con * con + weights.lambda_lf * lf + weights.lambda_gf * gf,
    )?;
    let flat = grad.to_flat();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure {
            term: "gradient",
            detail: "non-finite gradient entry".into(),
        });
    }
    Ok((
        LossBreakdown {
            total,
            supervised: sup,
            contrastive: con,
            local_fairness: lf,
            global_fairness: gf,
            local_per_attribute: lf_k,
            global_per_attribute: gf_k,
        },
        flat,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::{ParamShape, ModelParams};
    use super::*;
    use crate::numkit::{Matrix, Rng};

    fn bank() -> EncoderBank {
        EncoderBank::new(4, 6, 2, 0.5, 11).unwrap()
    }

    fn random_batch(seed: u64, n: usize) -> Dataset {
        let mut rng = Rng::new(seed, 99);
        let feats = Matrix::from_fn(n, 4, |_, _| rng.normal(0.0, 1.0));
        let mut col = || (0..n).map(|i| if i < 2 { i as u8 } else { rng.bernoulli(0.5) as u8 }).collect::<Vec<u8>>();
        let a1 = col();
        let a2 = col();
        let y = col();
        Dataset::new(feats, vec![a1, a2], y, vec![], "random").unwrap()
    }

    fn weights(notion: FairnessNotion) -> LossWeights {
        LossWeights {
            alpha: vec![0.3, 0.7],
            beta: vec![0.6, 0.4],
            lambda_con: 0.5,
            lambda_lf: 1.0,
            lambda_gf: 1.0,
            notion,
        }
    }

    fn finite_diff_ok(seed: u64, notion: FairnessNotion) -> Option<bool> {
        let b = bank();
        let p = ModelParams::init(ParamShape { d_e: 6, hidden: 5 }, seed);
        let batch = random_batch(seed, 8);
        let w = weights(notion);
        if kink_margin(&p, &b, &batch, &w).unwrap() < 1e-4 {
            return None;
        }
        let (_, grad) = total_loss_and_grads(&p, &b, &batch, &w).unwrap();
        let flat = p.to_flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..flat.len() {
            let mut plus = flat.clone();
            plus[j] += h;
            let mut minus = flat.clone();
            minus[j] -= h;
            let lp = total_loss_and_grads(&ModelParams::from_flat(p.shape(), &plus).unwrap(), &b, &batch, &w)
                .unwrap()
                .0
                .total;
            let lm = total_loss_and_grads(&ModelParams::from_flat(p.shape(), &minus).unwrap(), &b, &batch, &w)
                .unwrap()
                .0
                .total;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - grad[j]).abs() / (fd.abs().max(grad[j].abs()).max(1e-3));
            worst = worst.max(err);
        }
        Some(worst < 1e-4)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for notion in [FairnessNotion::Dp, FairnessNotion::Eo] {
            let (mut ok, mut tried) = (0, 0);
            for seed in 0..30 {
                if let Some(pass) = finite_diff_ok(seed, notion) {
                    tried += 1;
                    ok += pass as usize;
                }
            }
            assert!(tried >= 10, "too many kink-adjacent cases ({tried})");
            assert_eq!(ok, tried, "{notion:?}");
        }
    }

    #[test]
    fn ablation_reduces_to_cross_entropy() {
        let b = bank();
        let p = ModelParams::init(ParamShape { d_e: 6, hidden: 5 }, 1);
        let batch = random_batch(1, 8);
        let mut w = weights(FairnessNotion::Dp);
        w.lambda_con = 0.0;
        w.lambda_lf = 0.0;
        w.lambda_gf = 0.0;
        let (l, g) = total_loss_and_grads(&p, &b, &batch, &w).unwrap();
        assert_eq!(l.total, l.supervised);
        let mut w2 = w.clone();
        w2.alpha = vec![1.0, 0.0];
        let (_, g2) = total_loss_and_grads(&p, &b, &batch, &w2).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn local_reg_examples() {
        let mut b = EncoderBank::new(2, 3, 2, 1.0, 0).unwrap();
        b.group_embeddings[0] = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        b.group_embeddings[1] = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let mut w = LossWeights::uniform(2);
        let orth = vec![vec![0.0, 0.0, 1.0]];
        assert_eq!(local_fairness_reg(&orth, &b, &w).unwrap().total, 0.0);

        // Pr(A^1) = [0.9, 0.1] needs cos gap τ·ln 9; attribute 2 stays uniform.
        b.tau = 1.0 / 9f64.ln();
        b.group_embeddings[1] = [vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]];
        let z = vec![vec![1.0, 0.0, 0.0]];
        let lf = local_fairness_reg(&z, &b, &w).unwrap();
        assert!((lf.per_attribute[0] - 0.3681).abs() < 1e-4);
        assert!(lf.per_attribute[1].abs() < 1e-12);
        assert!((lf.total - 0.1840).abs() < 1e-4);
        w.alpha = vec![1.0, 0.0];
        assert_eq!(local_fairness_reg(&z, &b, &w).unwrap().total, lf.per_attribute[0]);
    }

    #[test]
    fn uniform_relevance_contributes_no_gradient() {
        let mut b = EncoderBank::new(2, 3, 1, 0.07, 0).unwrap();
        b.group_embeddings[0] = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let mut p = ModelParams::init(ParamShape { d_e: 3, hidden: 2 }, 0);
        p.adapter_w = Matrix::zeros(3, 3);
        p.adapter_b = vec![0.0, 0.0, 1.0];
        let batch = Dataset::new(Matrix::zeros(2, 2), vec![vec![0, 1]], vec![0, 1], vec![], "u").unwrap();
        let mut w = LossWeights::uniform(1);
        w.lambda_con = 0.0;
        w.lambda_gf = 0.0;
        let (l, g) = total_loss_and_grads(&p, &b, &batch, &w).unwrap();
        w.lambda_lf = 0.0;
        let (_, g0) = total_loss_and_grads(&p, &b, &batch, &w).unwrap();
        assert_eq!(l.local_fairness, 0.0);
        for (a, c) in g.iter().zip(&g0) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_examples() {
        let b = bank();
        let y = [0u8, 1];
        let same: Vec<Vec<f64>> = y.iter().map(|&c| b.class_embeddings[c as usize].clone()).collect();
        assert!(contrastive_loss(&same, &b, &y).unwrap().abs() < 1e-12);
        let neg: Vec<Vec<f64>> = same.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
        assert!((contrastive_loss(&neg, &b, &y).unwrap() - 2.0).abs() < 1e-12);
        assert!(contrastive_loss(&[vec![0.0; 6]], &b, &[0]).is_err());
    }

    #[test]
    fn global_reg_examples() {
        let w = LossWeights {
            alpha: vec![1.0],
            beta: vec![1.0],
            ..LossWeights::uniform(1)
        };
        let attrs = vec![vec![0, 0, 1, 1]];
        let y = [1, 0, 1, 0];
        let v = soft_global_fairness_reg(&[0.8, 0.6, 0.4, 0.2], &y, &attrs, &w).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
        assert_eq!(soft_global_fairness_reg(&[0.3; 4], &y, &attrs, &w).unwrap(), 0.0);
        let one_group = vec![vec![0, 0, 0, 0]];
        assert_eq!(soft_global_fairness_reg(&[0.9, 0.1, 0.5, 0.2], &y, &one_group, &w).unwrap(), 0.0);
        let eo = LossWeights {
            notion: FairnessNotion::Eo,
            ..w.clone()
        };
        // y=1 cell: 0.8 vs 0.4; y=0 cell: 0.6 vs 0.2
        let v = soft_global_fairness_reg(&[0.8, 0.6, 0.4, 0.2], &y, &attrs, &eo).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn non_finite_names_term() {
        let b = bank();
        let mut p = ModelParams::init(ParamShape { d_e: 6, hidden: 5 }, 2);
        p.b2 = f64::NAN;
        let batch = random_batch(2, 4);
        match total_loss_and_grads(&p, &b, &batch, &weights(FairnessNotion::Dp)) {
            Err(Error::NumericFailure { term, .. }) => assert_eq!(term, "supervised"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
