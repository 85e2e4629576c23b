use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ContingencyTable;
use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::scmdata::Dataset;

/// Backdoor-adjusted `E[Y | do(A=0)] − E[Y | do(A=1)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalEffect {
    pub te: f64,
    /// Probability mass of the adjustment strata that had both treatment arms.
    pub coverage: f64,
    pub dropped_strata: usize,
}

fn positions(table: &ContingencyTable, names: &[&str]) -> Result<Vec<usize>> {
    names.iter().map(|v| table.index_of(v)).collect()
}

fn check_distinct(vars: &[usize]) -> Result<()> {
    for (i, v) in vars.iter().enumerate() {
        if vars[i + 1..].contains(v) {
            return Err(Error::InvalidArgument("treatment, outcome, mediator and adjustment set must be disjoint".into()));
        }
    }
    Ok(())
}

pub fn total_effect(table: &ContingencyTable, treatment: &str, outcome: &str, adjustment: &[&str]) -> Result<TotalEffect> {
    let mut vars = positions(table, &[treatment, outcome])?;
    vars.extend(positions(table, adjustment)?);
    check_distinct(&vars)?;
    let m = table.marginal(&vars);
    let n = table.n() as f64;
    let (mut te, mut mass, mut dropped) = (0.0, 0.0, 0);
    for s in 0..(1usize << adjustment.len()) {
        let c = |a: usize, y: usize| m[a | (y << 1) | (s << 2)] as f64;
        let (n0, n1) = (c(0, 0) + c(0, 1), c(1, 0) + c(1, 1));
        if n0 + n1 == 0.0 {
            continue;
        }
        if n0 == 0.0 || n1 == 0.0 {
            dropped += 1;
            continue;
        }
        let w = (n0 + n1) / n;
        mass += w;
        te += w * (c(0, 1) / n0 - c(1, 1) / n1);
    }
    if mass == 0.0 {
        return Err(Error::Unsupported(format!(
            "no adjustment stratum contains both arms of {treatment}"
        )));
    }
    Ok(TotalEffect {
        te: te / mass,
        coverage: mass,
        dropped_strata: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationEstimate {
    pub te: f64,
    pub nde: f64,
    pub nie: f64,
    /// Controlled direct effect with the mediator held at 0 and at 1.
    pub cde_at_m: [f64; 2],
    pub coverage: f64,
    pub dropped_strata: usize,
}

/// Mediation formula within each adjustment stratum:
///
/// `NDE = Σ_z P(z) Σ_m P(m | 0, z)·(E[Y | 0, m, z] − E[Y | 1, m, z])`
/// `NIE = Σ_z P(z) Σ_m E[Y | 1, m, z]·(P(m | 0, z) − P(m | 1, z))`
///
/// so `te = nde + nie` holds identically. Strata lacking any `(a, m)` cell are dropped.
pub fn direct_indirect_effects(
    table: &ContingencyTable,
    treatment: &str,
    outcome: &str,
    mediator: &str,
    adjustment: &[&str],
) -> Result<MediationEstimate> {
    let mut vars = positions(table, &[treatment, outcome, mediator])?;
    vars.extend(positions(table, adjustment)?);
    check_distinct(&vars)?;
    let cnt = table.marginal(&vars);
    let n = table.n() as f64;
    let (mut nde, mut nie, mut mass, mut dropped) = (0.0, 0.0, 0.0, 0);
    let mut cde = [0.0; 2];
    for s in 0..(1usize << adjustment.len()) {
        let c = |a: usize, y: usize, m: usize| cnt[a | (y << 1) | (m << 2) | (s << 3)] as f64;
        let nam = |a: usize, m: usize| c(a, 0, m) + c(a, 1, m);
        let total: f64 = (0..4).map(|i| nam(i & 1, i >> 1)).sum();
        if total == 0.0 {
            continue;
        }
        if (0..4).any(|i| nam(i & 1, i >> 1) == 0.0) {
            dropped += 1;
            continue;
        }
        let w = total / n;
        mass += w;
        let ey = |a: usize, m: usize| c(a, 1, m) / nam(a, m);
        let pm = |m: usize, a: usize| nam(a, m) / (nam(a, 0) + nam(a, 1));
        for m in 0..2 {
            nde += w * pm(m, 0) * (ey(0, m) - ey(1, m));
            nie += w * ey(1, m) * (pm(m, 0) - pm(m, 1));
            cde[m] += w * (ey(0, m) - ey(1, m));
        }
    }
    if mass == 0.0 {
        return Err(Error::Unsupported(format!(
            "no adjustment stratum contains every ({treatment}, {mediator}) cell"
        )));
    }
    let (nde, nie) = (nde / mass, nie / mass);
    Ok(MediationEstimate {
        te: nde + nie,
        nde,
        nie,
        cde_at_m: [cde[0] / mass, cde[1] / mass],
        coverage: mass,
        dropped_strata: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefutationResult {
    pub old: f64,
    pub new: f64,
    pub estimates: Vec<f64>,
    pub p_value: f64,
    pub repetitions: usize,
}

pub const MIN_REFUTATION_REPS: usize = 20;

/// Re-estimates the total effect after adding an independent Bernoulli(0.5)
/// common cause `U` to the adjustment set, `R` times.
///
/// The p-value places `old` among the repetition estimates: with
/// `r = #{est < old} + (#{est = old} + 1)/2`, `p = 2·min(r, R+1−r)/(R+1)`.
pub fn refute_random_common_cause(
    data: &Dataset,
    treatment: &str,
    outcome: &str,
    adjustment: &[&str],
    repetitions: usize,
    seed: u64,
) -> Result<RefutationResult> {
    if repetitions < MIN_REFUTATION_REPS {
        return Err(Error::InvalidArgument(format!(
            "refutation needs at least {MIN_REFUTATION_REPS} repetitions, got {repetitions}"
        )));
    }
    let mut names: Vec<String> = [treatment, outcome].iter().map(|s| s.to_string()).collect();
    names.extend(adjustment.iter().map(|s| s.to_string()));
    let mut cols: Vec<&[u8]> = names.iter().map(|v| data.column(v)).collect::<Result<_>>()?;
    let old = total_effect(
        &ContingencyTable::from_columns(names.clone(), &cols)?,
        treatment,
        outcome,
        adjustment,
    )?
    .te;

    const U: &str = "__random_common_cause";
    names.push(U.to_string());
    let mut adj_u: Vec<&str> = adjustment.to_vec();
    adj_u.push(U);
    let n = data.len();
    let estimates: Vec<f64> = (0..repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = Rng::new(seed, rep as u64);
            let u: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.5) as u8).collect();
            let mut c = cols.clone();
            c.push(&u);
            let t = ContingencyTable::from_columns(names.clone(), &c)?;
            Ok(total_effect(&t, treatment, outcome, &adj_u)?.te)
        })
        .collect::<Result<_>>()?;
    cols.clear();

    let below = estimates.iter().filter(|&&e| e < old).count() as f64;
    let tied = estimates.iter().filter(|&&e| e == old).count() as f64;
    let r = below + (tied + 1.0) / 2.0;
    let big_r = repetitions as f64;
    let p_value = (2.0 * r.min(big_r + 1.0 - r) / (big_r + 1.0)).clamp(0.0, 1.0);
    Ok(RefutationResult {
        old,
        new: estimates.iter().sum::<f64>() / big_r,
        estimates,
        p_value,
        repetitions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub rho: f64,
    /// `(|TE|, |ΔΦ|)` pairs in input order.
    pub pairs: Vec<(f64, f64)>,
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation between `|TE|` and `|ΔΦ|` with average ranks for ties.
pub fn trend_analysis(pairs: &[(f64, f64)]) -> Result<TrendResult> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!("trend needs at least 3 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidArgument("trend pairs must be finite".into()));
    }
    let abs: Vec<(f64, f64)> = pairs.iter().map(|(a, b)| (a.abs(), b.abs())).collect();
    let rx = average_ranks(&abs.iter().map(|p| p.0).collect::<Vec<_>>());
    let ry = average_ranks(&abs.iter().map(|p| p.1).collect::<Vec<_>>());
    let mean = (pairs.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in rx.iter().zip(&ry) {
        sxy += (x - mean) * (y - mean);
        sxx += (x - mean) * (x - mean);
        syy += (y - mean) * (y - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateGroup("all |TE| or all |ΔΦ| values are tied".into()));
    }
    Ok(TrendResult {
        rho: sxy / (sxx * syy).sqrt(),
        pairs: abs,
    })
}

#[cfg(test)]
mod tests {
    use super::super::estimate_joint;
    use super::*;
    use crate::scmdata::{closed_form_effects, presets, sample_scm};

    #[test]
    fn direct_scm_effect() {
        let d = sample_scm(&presets::direct().build().unwrap(), 50_000, 1).unwrap();
        let t = estimate_joint(&d, &["a1", "y"]).unwrap();
        let te = total_effect(&t, "a1", "y", &[]).unwrap();
        assert!((te.te - 0.6).abs() < 0.02);
        assert_eq!(te.coverage, 1.0);
    }

    #[test]
    fn confounded_needs_adjustment() {
        let spec = presets::confounded().build().unwrap();
        let truth = closed_form_effects(&spec, "A", "Y", None).unwrap().te;
        let d = sample_scm(&spec, 50_000, 2).unwrap();
        let t = estimate_joint(&d, &["a1", "y", "m1"]).unwrap();
        let adj = total_effect(&t, "a1", "y", &["m1"]).unwrap().te;
        let naive = total_effect(&t, "a1", "y", &[]).unwrap().te;
        assert!((adj - truth).abs() < 0.02, "{adj} vs {truth}");
        assert!((naive - truth).abs() > 0.1);
    }

    #[test]
    fn antisymmetric_in_arm_labels() {
        let d = sample_scm(&presets::confounded().build().unwrap(), 5_000, 3).unwrap();
        let flipped: Vec<u8> = d.attributes[0].iter().map(|v| 1 - v).collect();
        let y = d.labels.clone();
        let z = d.aux[0].clone();
        let names = vec!["a".to_string(), "y".into(), "z".into()];
        let t1 = ContingencyTable::from_columns(names.clone(), &[&d.attributes[0], &y, &z]).unwrap();
        let t2 = ContingencyTable::from_columns(names, &[&flipped, &y, &z]).unwrap();
        let e1 = total_effect(&t1, "a", "y", &["z"]).unwrap().te;
        let e2 = total_effect(&t2, "a", "y", &["z"]).unwrap().te;
        assert!((e1 + e2).abs() < 1e-12);
    }

    #[test]
    fn mediation_scm_decomposes() {
        let d = sample_scm(&presets::mediation().build().unwrap(), 50_000, 4).unwrap();
        let t = estimate_joint(&d, &["a1", "y", "m1"]).unwrap();
        let e = direct_indirect_effects(&t, "a1", "y", "m1", &[]).unwrap();
        assert!((e.te + 0.5).abs() < 0.02);
        assert!((e.nde + 0.3).abs() < 0.02);
        assert!((e.nie + 0.2).abs() < 0.02);
        for c in e.cde_at_m {
            assert!((c + 0.3).abs() < 0.02);
        }
        assert!((e.te - (e.nde + e.nie)).abs() < 1e-9);
        let te = total_effect(&t, "a1", "y", &[]).unwrap().te;
        assert!((te - e.te).abs() < 1e-12);
    }

    #[test]
    fn unsupported_stratum_is_dropped_with_coverage() {
        let a = [0u8, 1, 0, 1, 1, 1];
        let y = [0u8, 1, 1, 1, 0, 1];
        let z = [0u8, 0, 0, 0, 1, 1];
        let t = ContingencyTable::from_columns(vec!["a".into(), "y".into(), "z".into()], &[&a, &y, &z]).unwrap();
        let e = total_effect(&t, "a", "y", &["z"]).unwrap();
        assert_eq!(e.dropped_strata, 1);
        assert!((e.coverage - 4.0 / 6.0).abs() < 1e-15);
        assert!((e.te - (0.5 - 1.0)).abs() < 1e-15);
        let a = [1u8, 1];
        let t = ContingencyTable::from_columns(vec!["a".into(), "y".into()], &[&a, &[0, 1]]).unwrap();
        assert!(matches!(total_effect(&t, "a", "y", &[]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn refutation_on_exact_effect() {
        let d = sample_scm(&presets::direct().build().unwrap(), 20_000, 5).unwrap();
        let r = refute_random_common_cause(&d, "a1", "y", &[], 100, 9).unwrap();
        assert!((r.new - r.old).abs() < 0.02);
        assert!(r.p_value > 0.05, "{}", r.p_value);
        assert_eq!(r.estimates.len(), 100);
        assert!(refute_random_common_cause(&d, "a1", "y", &[], 10, 9).is_err());
    }

    #[test]
    fn refutation_constant_outcome() {
        let mut d = sample_scm(&presets::direct().build().unwrap(), 500, 6).unwrap();
        d.labels = vec![1; 500];
        let r = refute_random_common_cause(&d, "a1", "y", &[], 20, 1).unwrap();
        assert_eq!(r.old, 0.0);
        assert_eq!(r.new, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn spearman_examples() {
        assert!((trend_analysis(&[(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)]).unwrap().rho + 1.0).abs() < 1e-12);
        assert!((trend_analysis(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap().rho - 1.0).abs() < 1e-12);
        assert!(trend_analysis(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        // Signs are dropped: improvements are negative deltas.
        let r = trend_analysis(&[(0.055, -0.089), (0.393, -0.028), (0.2, -0.05)]).unwrap();
        assert!(r.rho < 0.0);
        // Ties take the average rank.
        let r = trend_analysis(&[(1.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 3.0)]).unwrap();
        let rx = [1.5, 1.5, 3.0, 4.0];
        let ry = [1.0, 2.0, 3.5, 3.5];
        let m = 2.5;
        let num: f64 = rx.iter().zip(&ry).map(|(x, y)| (x - m) * (y - m)).sum();
        let den = (rx.iter().map(|x| (x - m) * (x - m)).sum::<f64>() * ry.iter().map(|y| (y - m) * (y - m)).sum::<f64>()).sqrt();
        assert!((r.rho - num / den).abs() < 1e-12);
    }
}
