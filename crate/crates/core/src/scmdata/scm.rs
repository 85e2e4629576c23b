use serde::{Deserialize, Serialize};

use super::{attribute_column, aux_column, Dataset, LABEL_COLUMN};
use crate::error::{Error, Result};
use crate::numkit::{norm, Matrix, Rng};

/// Limit for exhaustive enumeration in [`closed_form_effects`].
pub const MAX_ENUMERATION_VARS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Sensitive attribute, stored as `a1..aK` in declaration order.
    Attribute,
    /// The label `y`; exactly one per SCM.
    Label,
    /// Any other discrete variable (mediator or confounder), stored as `m1..mJ`.
    Covariate,
}

/// Declarative SCM as written in experiment configs.
///
/// CPT layout: entry `i` is `P(v = 1 | parents)` where bit `j` of `i` is the
/// value of the `j`-th listed parent (first parent = least significant bit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmDecl {
    #[serde(default = "default_dx")]
    pub d_x: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub mixing_seed: u64,
    pub variables: Vec<VariableDecl>,
}

fn default_dx() -> usize {
    16
}

fn default_sigma() -> f64 {
    0.5
}

fn default_signal() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub parents: Vec<String>,
    pub cpt: Vec<f64>,
    /// Norm of this variable's column in the feature mixing matrix.
    #[serde(default = "default_signal")]
    pub signal: f64,
}

impl VariableDecl {
    pub fn new(name: &str, role: Role, parents: &[&str], cpt: &[f64], signal: f64) -> Self {
        Self {
            name: name.to_string(),
            role,
            parents: parents.iter().map(|s| s.to_string()).collect(),
            cpt: cpt.to_vec(),
            signal,
        }
    }
}

impl ScmDecl {
    /// Resolves names and draws the mixing matrix: column `v` is `signal_v`
    /// times a random unit direction from `Rng(mixing_seed, 0)`.
    pub fn build(&self) -> Result<ScmSpec> {
        let v = self.variables.len();
        let mut rng = Rng::new(self.mixing_seed, 0);
        let mut mixing = Matrix::zeros(self.d_x, v);
        for (c, var) in self.variables.iter().enumerate() {
            if !var.signal.is_finite() || var.signal < 0.0 {
                return Err(Error::InvalidScm(format!(
                    "signal of `{}` must be finite and non-negative",
                    var.name
                )));
            }
            let dir: Vec<f64> = (0..self.d_x).map(|_| rng.normal(0.0, 1.0)).collect();
            let len = norm(&dir);
            for (r, x) in dir.iter().enumerate() {
                mixing.set(r, c, var.signal * x / len);
            }
        }
        let mut variables = Vec::with_capacity(v);
        for (i, var) in self.variables.iter().enumerate() {
            let mut parents = Vec::with_capacity(var.parents.len());
            for p in &var.parents {
                let j = self
                    .variables
                    .iter()
                    .position(|w| &w.name == p)
                    .ok_or_else(|| Error::InvalidScm(format!("`{}` has unknown parent `{p}`", var.name)))?;
                if j >= i {
                    return Err(Error::InvalidScm(format!(
                        "variables must be listed in topological order: `{}` precedes its parent `{p}` (or the graph has a cycle)",
                        var.name
                    )));
                }
                parents.push(j);
            }
            variables.push(ScmVariable {
                name: var.name.clone(),
                role: var.role,
                parents,
                cpt: var.cpt.clone(),
            });
        }
        ScmSpec::new(variables, self.d_x, mixing, self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmVariable {
    pub name: String,
    pub role: Role,
    /// Indices of earlier variables.
    pub parents: Vec<usize>,
    pub cpt: Vec<f64>,
}

/// A validated binary SCM with its feature-synthesis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    variables: Vec<ScmVariable>,
    d_x: usize,
    mixing: Matrix,
    sigma: f64,
}

impl ScmSpec {
    pub fn new(variables: Vec<ScmVariable>, d_x: usize, mixing: Matrix, sigma: f64) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::InvalidScm("no variables".into()));
        }
        for (i, v) in variables.iter().enumerate() {
            if variables[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::InvalidScm(format!("duplicate variable `{}`", v.name)));
            }
            if v.parents.iter().any(|&p| p >= i) {
                return Err(Error::InvalidScm(format!(
                    "`{}` has a parent that is not earlier in topological order",
                    v.name
                )));
            }
            let rows = 1usize << v.parents.len();
            if v.cpt.len() != rows {
                return Err(Error::InvalidScm(format!(
                    "`{}` has {} parents so its CPT needs {rows} rows, got {}",
                    v.name,
                    v.parents.len(),
                    v.cpt.len()
                )));
            }
            if let Some(p) = v.cpt.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidScm(format!("`{}` has CPT entry {p} outside [0, 1]", v.name)));
            }
        }
        let labels = variables.iter().filter(|v| v.role == Role::Label).count();
        if labels != 1 {
            return Err(Error::InvalidScm(format!("need exactly one label variable, found {labels}")));
        }
        if !variables.iter().any(|v| v.role == Role::Attribute) {
            return Err(Error::InvalidScm("need at least one sensitive attribute".into()));
        }
        if mixing.rows() != d_x || mixing.cols() != variables.len() {
            return Err(Error::InvalidScm(format!(
                "mixing matrix must be {d_x}x{}, got {}x{}",
                variables.len(),
                mixing.rows(),
                mixing.cols()
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidScm(format!("feature noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self {
            variables,
            d_x,
            mixing,
            sigma,
        })
    }

    pub fn variables(&self) -> &[ScmVariable] {
        &self.variables
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mixing(&self) -> &Matrix {
        &self.mixing
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.variables.iter().position(|v| v.name == name) {
            return Ok(i);
        }
        // Canonical dataset column names are accepted too.
        (0..self.variables.len())
            .find(|&i| self.column_name(i) == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Dataset column that stores variable `i`.
    pub fn column_name(&self, i: usize) -> String {
        let role = self.variables[i].role;
        let rank = self.variables[..i].iter().filter(|v| v.role == role).count();
        match role {
            Role::Attribute => attribute_column(rank),
            Role::Label => LABEL_COLUMN.to_string(),
            Role::Covariate => aux_column(rank),
        }
    }

    /// `(variable name, column name)` pairs.
    pub fn column_map(&self) -> Vec<(String, String)> {
        (0..self.variables.len())
            .map(|i| (self.variables[i].name.clone(), self.column_name(i)))
            .collect()
    }

    fn p_one(&self, i: usize, values: &[u8]) -> f64 {
        let v = &self.variables[i];
        let idx = v
            .parents
            .iter()
            .enumerate()
            .fold(0usize, |acc, (j, &p)| acc | ((values[p] as usize) << j));
        v.cpt[idx]
    }

    fn descendants(&self, root: usize) -> Vec<bool> {
        let mut desc = vec![false; self.variables.len()];
        desc[root] = true;
        for i in root + 1..self.variables.len() {
            if self.variables[i].parents.iter().any(|&p| desc[p]) {
                desc[i] = true;
            }
        }
        desc
    }

    /// Joint probability of a full assignment with `fixed` variables clamped (do-operator).
    fn interventional_prob(&self, values: &[u8], fixed: &[(usize, u8)]) -> f64 {
        let mut p = 1.0;
        for i in 0..self.variables.len() {
            if let Some(&(_, val)) = fixed.iter().find(|(v, _)| *v == i) {
                if values[i] != val {
                    return 0.0;
                }
                continue;
            }
            let p1 = self.p_one(i, values);
            p *= if values[i] == 1 { p1 } else { 1.0 - p1 };
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }
}

/// Ancestral sampling of `n` rows; features are `B·v + N(0, σ²)` with `v` the 0/1 variable vector.
pub fn sample_scm(spec: &ScmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample_scm needs n >= 1".into()));
    }
    let nv = spec.variables.len();
    let mut rng = Rng::new(seed, 0);
    let mut cols = vec![vec![0u8; n]; nv];
    let mut feats = Vec::with_capacity(n * spec.d_x);
    let mut values = vec![0u8; nv];
    let vf: &mut Vec<f64> = &mut vec![0.0; nv];
    for row in 0..n {
        for i in 0..nv {
            let p = spec.p_one(i, &values);
            values[i] = rng.bernoulli(p) as u8;
            cols[i][row] = values[i];
            vf[i] = values[i] as f64;
        }
        for r in 0..spec.d_x {
            let signal: f64 = spec.mixing.row(r).iter().zip(vf.iter()).map(|(b, v)| b * v).sum();
            feats.push(signal + rng.normal(0.0, spec.sigma));
        }
    }
    let mut attributes = Vec::new();
    let mut aux = Vec::new();
    let mut labels = Vec::new();
    for (i, col) in cols.into_iter().enumerate() {
        match spec.variables[i].role {
            Role::Attribute => attributes.push(col),
            Role::Label => labels = col,
            Role::Covariate => aux.push(col),
        }
    }
    Dataset::new(
        Matrix::from_vec(n, spec.d_x, feats)?,
        attributes,
        labels,
        aux,
        format!("scm seed={seed} n={n}"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormEffects {
    /// `E[Y | do(A=0)] − E[Y | do(A=1)]`.
    pub te: f64,
    pub nde: Option<f64>,
    pub nie: Option<f64>,
}

/// Exact effects by enumerating every assignment under the mutilated distributions.
///
/// With a mediator, natural effects use the mediator law at A = 0 and are
/// stratified on the treatment's non-descendants:
/// `NDE = E[Y(0, M(0))] − E[Y(1, M(0))]`, `NIE = E[Y(1, M(0))] − E[Y(1, M(1))]`.
/// If a mediator–outcome confounder is itself affected by the treatment the
/// natural effects are not identified; that case is detected through
/// `TE ≠ NDE + NIE` and reported as an error.
pub fn closed_form_effects(
    spec: &ScmSpec,
    treatment: &str,
    outcome: &str,
    mediator: Option<&str>,
) -> Result<ClosedFormEffects> {
    let nv = spec.variables.len();
    if nv > MAX_ENUMERATION_VARS {
        return Err(Error::StateSpaceTooLarge {
            vars: nv,
            limit: MAX_ENUMERATION_VARS,
        });
    }
    let a = spec.index_of(treatment)?;
    let y = spec.index_of(outcome)?;
    if a == y {
        return Err(Error::InvalidArgument("treatment and outcome coincide".into()));
    }
    let total = 1usize << nv;
    let mut values = vec![0u8; nv];
    let decode = |bits: usize, values: &mut [u8]| {
        for (i, v) in values.iter_mut().enumerate() {
            *v = ((bits >> i) & 1) as u8;
        }
    };
    let mean_y = |fixed: &[(usize, u8)], values: &mut Vec<u8>| {
        let mut acc = 0.0;
        for bits in 0..total {
            decode(bits, values);
            if values[y] == 1 {
                acc += spec.interventional_prob(values, fixed);
            }
        }
        acc
    };
    let te = mean_y(&[(a, 0)], &mut values) - mean_y(&[(a, 1)], &mut values);

    let Some(m_name) = mediator else {
        return Ok(ClosedFormEffects { te, nde: None, nie: None });
    };
    let m = spec.index_of(m_name)?;
    if m == a || m == y {
        return Err(Error::InvalidArgument("mediator must differ from treatment and outcome".into()));
    }
    let desc = spec.descendants(a);
    let strat: Vec<usize> = (0..nv).filter(|&i| !desc[i] && i != m && i != y).collect();
    let n_strata = 1usize << strat.len();
    let key = |values: &[u8]| {
        strat
            .iter()
            .enumerate()
            .fold(0usize, |k, (j, &v)| k | ((values[v] as usize) << j))
    };
    // P(w), P(M=1, w | do(A=a)), P(Y=1, w | do(A=a, M=m)).
    let mut p_w = vec![0.0; n_strata];
    let mut p_m1 = [vec![0.0; n_strata], vec![0.0; n_strata]];
    let mut p_y1 = [[vec![0.0; n_strata], vec![0.0; n_strata]], [vec![0.0; n_strata], vec![0.0; n_strata]]];
    for bits in 0..total {
        decode(bits, &mut values);
        let w = key(&values);
        for av in 0..2u8 {
            let p = spec.interventional_prob(&values, &[(a, av)]);
            if av == 0 {
                p_w[w] += p;
            }
            if values[m] == 1 {
                p_m1[av as usize][w] += p;
            }
            if values[y] == 1 {
                for mv in 0..2u8 {
                    p_y1[av as usize][mv as usize][w] += spec.interventional_prob(&values, &[(a, av), (m, mv)]);
                }
            }
        }
    }
    // E[Y(a, M(a'))].
    let nested = |av: usize, am: usize| {
        let mut acc = 0.0;
        for w in 0..n_strata {
            if p_w[w] == 0.0 {
                continue;
            }
            let pm1 = p_m1[am][w] / p_w[w];
            let ey0 = p_y1[av][0][w] / p_w[w];
            let ey1 = p_y1[av][1][w] / p_w[w];
            acc += p_w[w] * ((1.0 - pm1) * ey0 + pm1 * ey1);
        }
        acc
    };
    let nde = nested(0, 0) - nested(1, 0);
    let nie = nested(1, 0) - nested(1, 1);
    if (te - (nde + nie)).abs() > 1e-12 {
        return Err(Error::Identification(format!(
            "natural effects of `{treatment}` via `{m_name}` are not identified: a treatment-affected variable confounds mediator and outcome"
        )));
    }
    Ok(ClosedFormEffects {
        te,
        nde: Some(nde),
        nie: Some(nie),
    })
}

/// Shipped SCMs with known ground truth.
pub mod presets {
    use super::*;

    fn decl(d_x: usize, sigma: f64, mixing_seed: u64, variables: Vec<VariableDecl>) -> ScmDecl {
        ScmDecl {
            d_x,
            sigma,
            mixing_seed,
            variables,
        }
    }

    /// `A → Y` with `P(Y=1|A=0) = 0.8`, `P(Y=1|A=1) = 0.2` (TE = +0.6).
    pub fn direct() -> ScmDecl {
        decl(
            4,
            0.5,
            1,
            vec![
                VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0),
                VariableDecl::new("Y", Role::Label, &["A"], &[0.8, 0.2], 1.0),
            ],
        )
    }

    /// `A → M → Y` plus `A → Y`: `P(M=1|A) = 0.2 + 0.5A`,
    /// `P(Y=1|A,M) = 0.1 + 0.3A + 0.4M` (TE −0.5, NDE −0.3, NIE −0.2).
    pub fn mediation() -> ScmDecl {
        decl(
            4,
            0.5,
            2,
            vec![
                VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0),
                VariableDecl::new("M", Role::Covariate, &["A"], &[0.2, 0.7], 1.0),
                VariableDecl::new("Y", Role::Label, &["A", "M"], &[0.1, 0.4, 0.5, 0.8], 1.0),
            ],
        )
    }

    /// `Z → A`, `Z → Y`, `A → Y`: `P(A=1|Z) = 0.2 + 0.6Z`,
    /// `P(Y=1|Z,A) = 0.2 + 0.4Z + 0.3A` (TE −0.3; the naive contrast is −0.54).
    pub fn confounded() -> ScmDecl {
        decl(
            4,
            0.5,
            3,
            vec![
                VariableDecl::new("Z", Role::Covariate, &[], &[0.5], 1.0),
                VariableDecl::new("A", Role::Attribute, &["Z"], &[0.2, 0.8], 1.0),
                VariableDecl::new("Y", Role::Label, &["Z", "A"], &[0.2, 0.6, 0.5, 0.9], 1.0),
            ],
        )
    }

    /// `A → M → Y` with no direct edge.
    pub fn chain() -> ScmDecl {
        decl(
            4,
            0.5,
            4,
            vec![
                VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0),
                VariableDecl::new("M", Role::Covariate, &["A"], &[0.2, 0.8], 1.0),
                VariableDecl::new("Y", Role::Label, &["M"], &[0.2, 0.8], 1.0),
            ],
        )
    }

    /// `A → Y ← M` with `A ⊥ M`.
    pub fn collider() -> ScmDecl {
        decl(
            4,
            0.5,
            5,
            vec![
                VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0),
                VariableDecl::new("M", Role::Covariate, &[], &[0.5], 1.0),
                VariableDecl::new("Y", Role::Label, &["A", "M"], &[0.1, 0.5, 0.5, 0.9], 1.0),
            ],
        )
    }

    /// Two independent fair coins: attribute and label share no path.
    pub fn null_pair() -> ScmDecl {
        decl(
            4,
            0.5,
            6,
            vec![
                VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0),
                VariableDecl::new("Y", Role::Label, &[], &[0.5], 1.0),
            ],
        )
    }

    /// Default experiment SCM. Two attributes strongly encoded in the features,
    /// `A1 → M → Y` and direct `A1 → Y`, `A2 → Y`:
    /// `P(M=1|A1) = 0.3 + 0.3A1`, `P(Y=1|A1,A2,M) = 0.15 + 0.3A1 + 0.2A2 + 0.3M`.
    pub fn two_attribute() -> ScmDecl {
        let y: Vec<f64> = (0..8)
            .map(|i| 0.15 + 0.3 * (i & 1) as f64 + 0.2 * ((i >> 1) & 1) as f64 + 0.3 * ((i >> 2) & 1) as f64)
            .collect();
        decl(
            16,
            0.5,
            3,
            vec![
                VariableDecl::new("A1", Role::Attribute, &[], &[0.5], 1.5),
                VariableDecl::new("A2", Role::Attribute, &[], &[0.4], 1.5),
                VariableDecl::new("M", Role::Covariate, &["A1"], &[0.3, 0.6], 1.0),
                VariableDecl::new("Y", Role::Label, &["A1", "A2", "M"], &y, 0.6),
            ],
        )
    }

    /// Effect-strength family: `P(Y=1|A1) = 0.5 + effect·(A1 − 1/2)`, `A2` inert.
    /// The label has no feature signal of its own, so a classifier can only
    /// reach it through the attributes.
    pub fn effect_sweep(effect: f64) -> ScmDecl {
        decl(
            16,
            0.5,
            3,
            vec![
                VariableDecl::new("A1", Role::Attribute, &[], &[0.5], 1.5),
                VariableDecl::new("A2", Role::Attribute, &[], &[0.5], 1.5),
                VariableDecl::new("Y", Role::Label, &["A1"], &[0.5 - effect / 2.0, 0.5 + effect / 2.0], 0.0),
            ],
        )
    }

    /// Looks up a shipped SCM by name.
    pub fn by_name(name: &str) -> Option<ScmDecl> {
        Some(match name {
            "direct" => direct(),
            "mediation" => mediation(),
            "confounded" => confounded(),
            "chain" => chain(),
            "collider" => collider(),
            "null_pair" => null_pair(),
            "two_attribute" => two_attribute(),
            _ => return None,
        })
    }

    pub const NAMES: [&str; 7] = [
        "direct",
        "mediation",
        "confounded",
        "chain",
        "collider",
        "null_pair",
        "two_attribute",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_cpt_gives_constant_column() {
        let decl = ScmDecl {
            d_x: 3,
            sigma: 0.1,
            mixing_seed: 0,
            variables: vec![
                VariableDecl::new("A", Role::Attribute, &[], &[1.0], 1.0),
                VariableDecl::new("Y", Role::Label, &["A"], &[0.5, 0.5], 1.0),
            ],
        };
        let d = sample_scm(&decl.build().unwrap(), 500, 3).unwrap();
        assert!(d.attributes[0].iter().all(|&v| v == 1));
    }

    #[test]
    fn independent_label_has_small_correlation() {
        let spec = presets::null_pair().build().unwrap();
        let d = sample_scm(&spec, 100_000, 17).unwrap();
        let a: Vec<f64> = d.attributes[0].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = d.labels.iter().map(|&v| v as f64).collect();
        let n = a.len() as f64;
        let (ma, my) = (a.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov = a.iter().zip(&y).map(|(x, z)| (x - ma) * (z - my)).sum::<f64>() / n;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
        let sy = (y.iter().map(|x| (x - my).powi(2)).sum::<f64>() / n).sqrt();
        assert!((cov / (sa * sy)).abs() < 0.02);
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = presets::mediation().build().unwrap();
        assert_eq!(sample_scm(&spec, 300, 5).unwrap(), sample_scm(&spec, 300, 5).unwrap());
        assert_ne!(sample_scm(&spec, 300, 5).unwrap(), sample_scm(&spec, 300, 6).unwrap());
    }

    #[test]
    fn closed_form_direct_effect() {
        let spec = presets::direct().build().unwrap();
        let e = closed_form_effects(&spec, "A", "Y", None).unwrap();
        assert!((e.te - 0.6).abs() < 1e-12);
    }

    #[test]
    fn closed_form_mediation() {
        let spec = presets::mediation().build().unwrap();
        let e = closed_form_effects(&spec, "A", "Y", Some("M")).unwrap();
        assert!((e.te + 0.5).abs() < 1e-12);
        assert!((e.nde.unwrap() + 0.3).abs() < 1e-12);
        assert!((e.nie.unwrap() + 0.2).abs() < 1e-12);
        // Canonical column names resolve to the same variables.
        let c = closed_form_effects(&spec, "a1", "y", Some("m1")).unwrap();
        assert_eq!(c, e);
    }

    #[test]
    fn closed_form_no_path_is_zero() {
        let spec = presets::null_pair().build().unwrap();
        let e = closed_form_effects(&spec, "A", "Y", None).unwrap();
        assert_eq!(e.te, 0.0);
        let spec = presets::collider().build().unwrap();
        let e = closed_form_effects(&spec, "A", "Y", Some("M")).unwrap();
        assert!(e.nie.unwrap().abs() < 1e-15);
        assert!((e.te - e.nde.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn confounded_preset_effect() {
        let spec = presets::confounded().build().unwrap();
        let e = closed_form_effects(&spec, "A", "Y", None).unwrap();
        assert!((e.te + 0.3).abs() < 1e-12);
    }

    #[test]
    fn treatment_affected_confounder_is_not_identified() {
        let decl = ScmDecl {
            d_x: 2,
            sigma: 0.5,
            mixing_seed: 0,
            variables: vec![
                VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0),
                VariableDecl::new("L", Role::Covariate, &["A"], &[0.2, 0.8], 1.0),
                VariableDecl::new("M", Role::Covariate, &["A", "L"], &[0.1, 0.5, 0.6, 0.9], 1.0),
                VariableDecl::new("Y", Role::Label, &["M", "L"], &[0.1, 0.6, 0.3, 0.95], 1.0),
            ],
        };
        let spec = decl.build().unwrap();
        assert!(matches!(
            closed_form_effects(&spec, "A", "Y", Some("M")),
            Err(Error::Identification(_))
        ));
    }

    #[test]
    fn state_space_limit() {
        let mut vars = vec![VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0)];
        for i in 0..20 {
            vars.push(VariableDecl::new(&format!("C{i}"), Role::Covariate, &[], &[0.5], 0.0));
        }
        vars.push(VariableDecl::new("Y", Role::Label, &[], &[0.5], 1.0));
        let spec = ScmDecl { d_x: 2, sigma: 0.1, mixing_seed: 0, variables: vars }.build().unwrap();
        assert!(matches!(
            closed_form_effects(&spec, "A", "Y", None),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_cpt = ScmDecl {
            d_x: 2,
            sigma: 0.5,
            mixing_seed: 0,
            variables: vec![
                VariableDecl::new("A", Role::Attribute, &[], &[1.5], 1.0),
                VariableDecl::new("Y", Role::Label, &[], &[0.5], 1.0),
            ],
        };
        assert!(matches!(bad_cpt.build(), Err(Error::InvalidScm(_))));
        let wrong_rows = ScmDecl {
            variables: vec![
                VariableDecl::new("A", Role::Attribute, &[], &[0.5], 1.0),
                VariableDecl::new("Y", Role::Label, &["A"], &[0.5], 1.0),
            ],
            ..bad_cpt.clone()
        };
        assert!(wrong_rows.build().is_err());
        let cyclic = ScmDecl {
            variables: vec![
                VariableDecl::new("Y", Role::Label, &["A"], &[0.5, 0.5], 1.0),
                VariableDecl::new("A", Role::Attribute, &["Y"], &[0.5, 0.5], 1.0),
            ],
            ..bad_cpt
        };
        assert!(cyclic.build().is_err());
    }

    #[test]
    fn marginals_converge() {
        // |p̂ − p| < 4·√(p(1−p)/n) for every variable, over many seeds.
        let spec = presets::mediation().build().unwrap();
        let exact = [0.5, 0.45, 0.43];
        let n = 4000;
        let mut misses = 0;
        let runs = 100;
        for seed in 0..runs {
            let d = sample_scm(&spec, n, seed).unwrap();
            for (col, p) in ["a1", "m1", "y"].iter().zip(exact) {
                let c = d.column(col).unwrap();
                let phat = c.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                if (phat - p).abs() >= 4.0 * (p * (1.0 - p) / n as f64).sqrt() {
                    misses += 1;
                }
            }
        }
        assert!(misses <= runs as usize * 3 / 100, "misses {misses}");
    }

    #[test]
    fn experiment_presets() {
        // TE(A1) = −(0.3 + 0.3·0.3): direct part plus the path through M.
        let spec = presets::two_attribute().build().unwrap();
        let e = closed_form_effects(&spec, "A1", "Y", Some("M")).unwrap();
        assert!((e.te + 0.39).abs() < 1e-12);
        assert!((e.nde.unwrap() + 0.3).abs() < 1e-12);
        assert!((closed_form_effects(&spec, "A2", "Y", None).unwrap().te + 0.2).abs() < 1e-12);
        for eff in [0.0, 0.25, 0.6] {
            let spec = presets::effect_sweep(eff).build().unwrap();
            assert!((closed_form_effects(&spec, "A1", "Y", None).unwrap().te + eff).abs() < 1e-12);
        }
        for name in presets::NAMES {
            assert!(presets::by_name(name).unwrap().build().is_ok(), "{name}");
        }
        assert!(presets::by_name("nope").is_none());
    }
}
