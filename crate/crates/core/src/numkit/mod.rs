//! Deterministic numerical core: dense matrices, softmax/KL/cosine and
//! cross-entropy primitives, AdamW, the chi-square tail and a seeded PRNG.

mod matrix;
mod optim;
mod rng;
mod special;

pub use matrix::{dot, norm, Matrix};
pub use optim::{adamw_step, AdamWConfig, LrGroup, OptimizerState};
pub use rng::{splitmix64, Rng};
pub use special::{chi2_sf, gamma_q, ln_gamma};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A discrete probability distribution: non-negative entries summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("empty probability vector".into()));
        }
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "probability entries must be finite and non-negative".into(),
            ));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {s}, not 1"
            )));
        }
        Ok(Self(p))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `softmax(scores / temperature)` with max subtraction.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(
            "softmax scores must be finite and nonempty".into(),
        ));
    }
    Ok(ProbVector(softmax_unchecked(scores, temperature)))
}

pub(crate) fn softmax_unchecked(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// `KL(p ‖ q) = Σ pᵢ ln(pᵢ/qᵢ)` with `0·ln 0 = 0`.
pub fn kl_div(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: q.len(),
            context: "kl_div",
        });
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::InvalidArgument(
                "kl_div: q has a zero where p is positive".into(),
            ));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc.max(0.0))
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            expected: u.len(),
            actual: v.len(),
            context: "cosine",
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Gradient of `cos(u, v)` with respect to `u`, accumulated as `out += scale · ∂cos/∂u`.
pub(crate) fn cosine_grad_acc(u: &[f64], v: &[f64], scale: f64, out: &mut [f64]) -> f64 {
    let nu = norm(u);
    let nv = norm(v);
    let c = dot(u, v) / (nu * nv);
    let a = scale / (nu * nv);
    let b = scale * c / (nu * nu);
    for i in 0..u.len() {
        out[i] += a * v[i] - b * u[i];
    }
    c
}

/// Softmax cross-entropy for one sample and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[2.0, 2.0, 2.0], 0.3).unwrap();
        for v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let p = softmax(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        let p = softmax(&[1.0, 0.0], 1e6).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn softmax_is_stable_for_large_scores() {
        let p = softmax(&[1000.0, -1000.0, 999.0], 1.0).unwrap();
        assert!(ProbVector::new(p.as_slice().to_vec()).is_ok());
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[1.0], 0.0).is_err());
        assert!(softmax(&[1.0], -1.0).is_err());
        assert!(softmax(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl_div(&p, &p).unwrap(), 0.0);
        let u = ProbVector::uniform(2);
        let one = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert!((kl_div(&one, &u).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = ProbVector::new(vec![0.9, 0.1]).unwrap();
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        assert!((kl_div(&p, &u).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.3681).abs() < 1e-4);
    }

    #[test]
    fn kl_errors() {
        let p = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let q = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert!(kl_div(&p, &q).is_err());
        assert!(kl_div(&p, &ProbVector::uniform(3)).is_err());
    }

    #[test]
    fn cosine_examples() {
        let u = [0.3, -1.0, 2.0];
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = cross_entropy_with_grad(&[0.0, 0.0], 0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        let (l, g) = cross_entropy_with_grad(&[10.0, -10.0], 0).unwrap();
        assert!(l < 1e-8 && g.iter().all(|v| v.abs() < 1e-8));
        assert!(cross_entropy_with_grad(&[0.0, 0.0], 2).is_err());
    }

    fn ce_fd_case(rng: &mut Rng) -> f64 {
        let logits: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 2.0)).collect();
        let label = rng.below(4) as usize;
        let (_, grad) = cross_entropy_with_grad(&logits, label).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..4 {
            let mut up = logits.clone();
            let mut dn = logits.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (cross_entropy_with_grad(&up, label).unwrap().0
                - cross_entropy_with_grad(&dn, label).unwrap().0)
                / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let mut rng = Rng::new(2024, 0);
        let first = ce_fd_case(&mut rng);
        assert!(first < 1e-6, "rel err {first}");
        for _ in 0..100 {
            assert!(ce_fd_case(&mut rng) < 1e-5);
        }
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3, 3);
        for _ in 0..20 {
            let u: Vec<f64> = (0..5).map(|_| rng.normal(0.0, 1.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.normal(0.0, 1.0)).collect();
            let mut g = vec![0.0; 5];
            cosine_grad_acc(&u, &v, 1.0, &mut g);
            for i in 0..5 {
                let h = 1e-6;
                let mut up = u.clone();
                let mut dn = u.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (cosine(&up, &v).unwrap() - cosine(&dn, &v).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-7);
            }
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_output_is_distribution(scores in proptest::collection::vec(-1e3f64..1e3, 1..8), tau in 1e-3f64..10.0) {
                let p = softmax(&scores, tau).unwrap();
                prop_assert!(ProbVector::new(p.as_slice().to_vec()).is_ok());
            }

            #[test]
            fn kl_nonnegative(raw in proptest::collection::vec(0.0f64..1.0, 2..6)) {
                let s: f64 = raw.iter().sum();
                prop_assume!(s > 1e-6);
                let p = ProbVector::new(raw.iter().map(|v| v / s).collect()).unwrap();
                let q = ProbVector::uniform(p.len());
                let d = kl_div(&p, &q).unwrap();
                prop_assert!(d >= 0.0);
                let max_dev = p.as_slice().iter().map(|v| (v - 1.0 / p.len() as f64).abs()).fold(0.0, f64::max);
                if max_dev > 1e-3 {
                    prop_assert!(d > 1e-12);
                }
            }
        }
    }
}
