//! Evaluation-time group fairness and accuracy metrics over hard predictions.
//!
//! All metrics are computed from empirical frequencies of `y_true`, `y_pred`
//! and binary sensitive-attribute columns. Scores never enter a metric; they
//! are only used for the soft (score-based) gaps reported alongside.
//! An empty group or cell is an error: returning 0 would report a fairness
//! that was never measured.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub y_true: Vec<u8>,
    pub y_pred: Vec<u8>,
    pub y_score: Vec<f64>,
    pub attribute_names: Vec<String>,
    /// One column per attribute, each of length `len()`.
    pub attributes: Vec<Vec<u8>>,
}

impl PredictionSet {
    pub fn new(
        y_true: Vec<u8>,
        y_pred: Vec<u8>,
        y_score: Vec<f64>,
        attribute_names: Vec<String>,
        attributes: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let n = y_true.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty prediction set".into()));
        }
        for (len, ctx) in [(y_pred.len(), "y_pred"), (y_score.len(), "y_score")] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: len,
                    context: ctx,
                });
            }
        }
        if attribute_names.len() != attributes.len() {
            return Err(Error::LengthMismatch {
                expected: attributes.len(),
                actual: attribute_names.len(),
                context: "attribute names",
            });
        }
        for col in &attributes {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: col.len(),
                    context: "attribute column",
                });
            }
        }
        let binary = |v: &[u8]| v.iter().all(|&b| b <= 1);
        if !binary(&y_true) || !binary(&y_pred) || !attributes.iter().all(|c| binary(c)) {
            return Err(Error::InvalidArgument(
                "labels and attributes must be 0/1".into(),
            ));
        }
        if y_score.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument("scores must lie in [0, 1]".into()));
        }
        Ok(Self {
            y_true,
            y_pred,
            y_score,
            attribute_names,
            attributes,
        })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    fn column(&self, k: usize) -> Result<&[u8]> {
        self.attributes.get(k).map(Vec::as_slice).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "attribute index {k} out of range ({} attributes)",
                self.attributes.len()
            ))
        })
    }
}

/// Positive-prediction rate over rows selected by `keep`.
fn rate(preds: &PredictionSet, keep: impl Fn(usize) -> bool, what: impl FnOnce() -> String) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for i in 0..preds.len() {
        if keep(i) {
            total += 1;
            hits += preds.y_pred[i] as usize;
        }
    }
    if total == 0 {
        return Err(Error::DegenerateGroup(what()));
    }
    Ok(hits as f64 / total as f64)
}

fn attr_name(preds: &PredictionSet, k: usize) -> &str {
    &preds.attribute_names[k]
}

/// `|P(Ŷ=1 | A=0) − P(Ŷ=1 | A=1)|`.
pub fn demographic_parity(preds: &PredictionSet, k: usize) -> Result<f64> {
    let col = preds.column(k)?;
    let r0 = rate(preds, |i| col[i] == 0, || format!("{}=0 is empty", attr_name(preds, k)))?;
    let r1 = rate(preds, |i| col[i] == 1, || format!("{}=1 is empty", attr_name(preds, k)))?;
    Ok((r0 - r1).abs())
}

/// Per-label gaps `|P(Ŷ=1 | Y=y, A=0) − P(Ŷ=1 | Y=y, A=1)|` for y = 0, 1.
pub fn equalized_odds_gaps(preds: &PredictionSet, k: usize) -> Result<[f64; 2]> {
    let col = preds.column(k)?;
    let mut gaps = [0.0; 2];
    for (y, gap) in gaps.iter_mut().enumerate() {
        let y = y as u8;
        let cell = |a: u8| {
            rate(
                preds,
                |i| preds.y_true[i] == y && col[i] == a,
                || format!("cell (y={y}, {}={a}) is empty", attr_name(preds, k)),
            )
        };
        *gap = (cell(0)? - cell(1)?).abs();
    }
    Ok(gaps)
}

/// Worst-case gap over y of the true/false positive rates between groups.
pub fn equalized_odds(preds: &PredictionSet, k: usize) -> Result<f64> {
    let [g0, g1] = equalized_odds_gaps(preds, k)?;
    Ok(g0.max(g1))
}

/// Per-group accuracy `P(Ŷ=Y | A=a)` for a = 0, 1.
fn group_accuracies(preds: &PredictionSet, k: usize) -> Result<[f64; 2]> {
    let col = preds.column(k)?;
    let mut out = [0.0; 2];
    for (a, acc) in out.iter_mut().enumerate() {
        let (mut hit, mut tot) = (0usize, 0usize);
        for i in 0..preds.len() {
            if col[i] as usize == a {
                tot += 1;
                hit += (preds.y_pred[i] == preds.y_true[i]) as usize;
            }
        }
        if tot == 0 {
            return Err(Error::DegenerateGroup(format!(
                "{}={a} is empty",
                attr_name(preds, k)
            )));
        }
        *acc = hit as f64 / tot as f64;
    }
    Ok(out)
}

/// Mean over attributes and group values of `P(Ŷ=Y | A=a)`.
///
/// The averaging over y in the usual form multiplies and divides by |𝒴|
/// because the summand does not depend on y, so it cancels.
pub fn balanced_accuracy(preds: &PredictionSet) -> Result<f64> {
    if preds.num_attributes() == 0 {
        return Err(Error::InvalidArgument("no sensitive attributes".into()));
    }
    let mut acc = 0.0;
    for k in 0..preds.num_attributes() {
        let [a0, a1] = group_accuracies(preds, k)?;
        acc += a0 + a1;
    }
    Ok(acc / (2 * preds.num_attributes()) as f64)
}

/// `(1/K) Σ_k Σ_{(a,y)≠(a',y')} |P(Ŷ=y | A=a) − P(Ŷ=y' | A=a')|` over ordered pairs.
pub fn accuracy_parity(preds: &PredictionSet) -> Result<f64> {
    if preds.num_attributes() == 0 {
        return Err(Error::InvalidArgument("no sensitive attributes".into()));
    }
    let mut total = 0.0;
    for k in 0..preds.num_attributes() {
        let col = preds.column(k)?;
        let mut cells = [0.0; 4]; // index = 2a + y
        for a in 0..2u8 {
            let p1 = rate(preds, |i| col[i] == a, || format!("{}={a} is empty", attr_name(preds, k)))?;
            cells[2 * a as usize] = 1.0 - p1;
            cells[2 * a as usize + 1] = p1;
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    total += (cells[i] - cells[j]).abs();
                }
            }
        }
    }
    Ok(total / preds.num_attributes() as f64)
}

/// Score-based demographic-parity gap (same relaxation as training).
pub fn soft_demographic_parity(preds: &PredictionSet, k: usize) -> Result<f64> {
    let col = preds.column(k)?;
    let mean = |a: u8| {
        let (s, c) = (0..preds.len())
            .filter(|&i| col[i] == a)
            .fold((0.0, 0usize), |(s, c), i| (s + preds.y_score[i], c + 1));
        if c == 0 {
            Err(Error::DegenerateGroup(format!("{}={a} is empty", attr_name(preds, k))))
        } else {
            Ok(s / c as f64)
        }
    };
    Ok((mean(0)? - mean(1)?).abs())
}

/// Score-based equalized-odds gap, worst case over y.
pub fn soft_equalized_odds(preds: &PredictionSet, k: usize) -> Result<f64> {
    let col = preds.column(k)?;
    let mut worst: f64 = 0.0;
    for y in 0..2u8 {
        let mean = |a: u8| {
            let (s, c) = (0..preds.len())
                .filter(|&i| col[i] == a && preds.y_true[i] == y)
                .fold((0.0, 0usize), |(s, c), i| (s + preds.y_score[i], c + 1));
            if c == 0 {
                Err(Error::DegenerateGroup(format!(
                    "cell (y={y}, {}={a}) is empty",
                    attr_name(preds, k)
                )))
            } else {
                Ok(s / c as f64)
            }
        };
        worst = worst.max((mean(0)? - mean(1)?).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFairness {
    pub name: String,
    pub dp: f64,
    pub eo: f64,
    /// Per-label gaps behind `eo` (y = 0, y = 1).
    pub eo_gaps: [f64; 2],
    pub soft_dp: f64,
    pub soft_eo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_dp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_eo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub acc: f64,
    pub ap: f64,
    pub attributes: Vec<AttributeFairness>,
}

impl FairnessReport {
    pub fn evaluate(preds: &PredictionSet) -> Result<Self> {
        let mut attributes = Vec::with_capacity(preds.num_attributes());
        for k in 0..preds.num_attributes() {
            let eo_gaps = equalized_odds_gaps(preds, k)?;
            attributes.push(AttributeFairness {
                name: preds.attribute_names[k].clone(),
                dp: demographic_parity(preds, k)?,
                eo: eo_gaps[0].max(eo_gaps[1]),
                eo_gaps,
                soft_dp: soft_demographic_parity(preds, k)?,
                soft_eo: soft_equalized_odds(preds, k)?,
                delta_dp: None,
                delta_eo: None,
            });
        }
        Ok(Self {
            acc: balanced_accuracy(preds)?,
            ap: accuracy_parity(preds)?,
            attributes,
        })
    }

    /// Returns a copy with ΔΦ fields filled in against `baseline`.
    pub fn with_deltas(&self, baseline: &FairnessReport) -> Result<Self> {
        let deltas = fairness_delta(baseline, self)?;
        let mut out = self.clone();
        for (attr, d) in out.attributes.iter_mut().zip(deltas) {
            attr.delta_dp = Some(d.dp);
            attr.delta_eo = Some(d.eo);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessDelta {
    pub dp: f64,
    pub eo: f64,
}

/// `ΔΦᵏ = Φᵏ(debiased) − Φᵏ(biased)`; negative means the debiased run is fairer.
pub fn fairness_delta(biased: &FairnessReport, debiased: &FairnessReport) -> Result<Vec<FairnessDelta>> {
    let names = |r: &FairnessReport| r.attributes.iter().map(|a| a.name.clone()).collect::<Vec<_>>();
    if names(biased) != names(debiased) {
        return Err(Error::InvalidArgument(format!(
            "attribute mismatch: {:?} vs {:?}",
            names(biased),
            names(debiased)
        )));
    }
    Ok(biased
        .attributes
        .iter()
        .zip(&debiased.attributes)
        .map(|(b, d)| FairnessDelta {
            dp: d.dp - b.dp,
            eo: d.eo - b.eo,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(y: &[u8], p: &[u8], attrs: &[&[u8]]) -> PredictionSet {
        PredictionSet::new(
            y.to_vec(),
            p.to_vec(),
            p.iter().map(|&v| v as f64).collect(),
            (1..=attrs.len()).map(|k| format!("a{k}")).collect(),
            attrs.iter().map(|c| c.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn dp_examples() {
        let s = set(&[0, 1, 0, 1], &[1, 1, 1, 1], &[&[0, 0, 1, 1]]);
        assert_eq!(demographic_parity(&s, 0).unwrap(), 0.0);
        let s = set(
            &[0; 8],
            &[1, 1, 0, 0, 1, 0, 0, 0],
            &[&[0, 0, 0, 0, 1, 1, 1, 1]],
        );
        assert_eq!(demographic_parity(&s, 0).unwrap(), 0.25);
        let s = set(&[0; 4], &[1, 0, 0, 1], &[&[0, 0, 1, 1]]);
        assert_eq!(demographic_parity(&s, 0).unwrap(), 0.0);
    }

    #[test]
    fn eo_examples() {
        let y = [1, 0, 1, 0, 1, 1];
        let s = set(&y, &y, &[&[0, 0, 1, 1, 0, 1]]);
        assert_eq!(equalized_odds(&s, 0).unwrap(), 0.0);
        // y=1: group0 [1,1], group1 [1,0]; y=0: group0 [0,0], group1 [0,0].
        let s = set(
            &[1, 1, 1, 1, 0, 0, 0, 0],
            &[1, 1, 1, 0, 0, 0, 0, 0],
            &[&[0, 0, 1, 1, 0, 0, 1, 1]],
        );
        assert_eq!(equalized_odds(&s, 0).unwrap(), 0.5);
        assert_eq!(equalized_odds_gaps(&s, 0).unwrap(), [0.0, 0.5]);
    }

    #[test]
    fn balanced_accuracy_examples() {
        let y = [1, 0, 1, 0];
        assert_eq!(balanced_accuracy(&set(&y, &y, &[&[0, 0, 1, 1]])).unwrap(), 1.0);
        assert_eq!(
            balanced_accuracy(&set(&y, &[1, 1, 1, 1], &[&[0, 0, 1, 1]])).unwrap(),
            0.5
        );
        // group0 accuracy 4/5, group1 accuracy 3/5.
        let y = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        let p = [1, 1, 1, 1, 0, 1, 1, 1, 0, 0];
        let a = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        assert!((balanced_accuracy(&set(&y, &p, &[&a])).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn accuracy_parity_examples() {
        // Uniform predictions everywhere → all compared quantities equal.
        let s = set(&[0; 4], &[1, 0, 1, 0], &[&[0, 0, 1, 1]]);
        assert_eq!(accuracy_parity(&s).unwrap(), 0.0);

        // P(Ŷ=1|a=0)=0.6, P(Ŷ=1|a=1)=0.4; brute force over (a,y,a',y').
        let p = [1, 1, 1, 0, 0, 1, 1, 0, 0, 0];
        let a = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let s = set(&[0; 10], &p, &[&a]);
        let prob = |a: usize, y: usize| {
            let p1: f64 = [0.6, 0.4][a];
            if y == 1 { p1 } else { 1.0 - p1 }
        };
        let mut oracle: f64 = 0.0;
        for a in 0..2 {
            for y in 0..2 {
                for a2 in 0..2 {
                    for y2 in 0..2 {
                        if (a, y) != (a2, y2) {
                            oracle += (prob(a, y) - prob(a2, y2)).abs();
                        }
                    }
                }
            }
        }
        assert!((accuracy_parity(&s).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 1.6).abs() < 1e-12);
    }

    #[test]
    fn degenerate_groups_are_errors() {
        let s = set(&[0, 1], &[0, 1], &[&[0, 0]]);
        assert!(matches!(demographic_parity(&s, 0), Err(Error::DegenerateGroup(_))));
        assert!(matches!(balanced_accuracy(&s), Err(Error::DegenerateGroup(_))));
        assert!(matches!(accuracy_parity(&s), Err(Error::DegenerateGroup(_))));
        let s = set(&[1, 1], &[0, 1], &[&[0, 1]]);
        assert!(matches!(equalized_odds(&s, 0), Err(Error::DegenerateGroup(_))));
    }

    #[test]
    fn constructor_validates() {
        assert!(PredictionSet::new(vec![], vec![], vec![], vec![], vec![]).is_err());
        assert!(PredictionSet::new(vec![2], vec![0], vec![0.0], vec![], vec![]).is_err());
        assert!(PredictionSet::new(vec![1], vec![0], vec![1.5], vec![], vec![]).is_err());
        assert!(PredictionSet::new(vec![1], vec![0, 1], vec![0.5], vec![], vec![]).is_err());
    }

    fn report(dp: &[f64]) -> FairnessReport {
        FairnessReport {
            acc: 0.8,
            ap: 0.1,
            attributes: dp
                .iter()
                .enumerate()
                .map(|(k, &d)| AttributeFairness {
                    name: format!("a{}", k + 1),
                    dp: d,
                    eo: 2.0 * d,
                    eo_gaps: [d, 2.0 * d],
                    soft_dp: d,
                    soft_eo: d,
                    delta_dp: None,
                    delta_eo: None,
                })
                .collect(),
        }
    }

    #[test]
    fn delta_examples() {
        let r = report(&[0.193, 0.072]);
        assert!(fairness_delta(&r, &r).unwrap().iter().all(|d| d.dp == 0.0 && d.eo == 0.0));
        let d = fairness_delta(&report(&[0.193, 0.072]), &report(&[0.004, 0.105])).unwrap();
        assert!((d[0].dp + 0.189).abs() < 1e-12);
        assert!((d[1].dp - 0.033).abs() < 1e-12);
        assert!(fairness_delta(&report(&[0.1]), &report(&[0.1, 0.2])).is_err());
    }
}
