//! Ground-truth data factory: binary structural causal models with exact
//! effects, feature synthesis, skewed client partitioning and CSV I/O.
//!
//! Column naming is fixed: sensitive attributes are `a1..aK`, the label is
//! `y`, and any other discrete variables are auxiliary columns `m1..mJ`.

mod csvio;
mod partition;
mod scm;

pub use csvio::{load_csv, save_csv};
pub use partition::{partition_clients, ClientSplit, Partition, PartitionPlan};
pub use scm::{closed_form_effects, presets, sample_scm, ClosedFormEffects, Role, ScmDecl, ScmSpec, ScmVariable, VariableDecl};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const LABEL_COLUMN: &str = "y";

pub fn attribute_column(k: usize) -> String {
    format!("a{}", k + 1)
}

pub fn aux_column(j: usize) -> String {
    format!("m{}", j + 1)
}

/// Feature matrix plus binary attribute, label and auxiliary columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub attributes: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    pub aux: Vec<Vec<u8>>,
    /// Where the rows came from (SCM seed, file path, split name).
    pub provenance: String,
}

impl PartialEq for Dataset {
    /// Data equality; provenance is metadata and is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.attributes == other.attributes
            && self.labels == other.labels
            && self.aux == other.aux
    }
}

impl Dataset {
    pub fn new(
        features: Matrix,
        attributes: Vec<Vec<u8>>,
        labels: Vec<u8>,
        aux: Vec<Vec<u8>>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = features.rows();
        let check = |col: &[u8], name: String| -> Result<()> {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: col.len(),
                    context: "dataset column",
                });
            }
            if let Some(row) = col.iter().position(|&v| v > 1) {
                return Err(Error::Validation {
                    row,
                    column: name,
                    detail: format!("value {} is not binary", col[row]),
                });
            }
            Ok(())
        };
        for (k, col) in attributes.iter().enumerate() {
            check(col, attribute_column(k))?;
        }
        check(&labels, LABEL_COLUMN.to_string())?;
        for (j, col) in aux.iter().enumerate() {
            check(col, aux_column(j))?;
        }
        Ok(Self {
            features,
            attributes,
            labels,
            aux,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Names of every discrete column in canonical order: attributes, label, auxiliaries.
    pub fn discrete_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.attributes.len()).map(attribute_column).collect();
        names.push(LABEL_COLUMN.to_string());
        names.extend((0..self.aux.len()).map(aux_column));
        names
    }

    pub fn column(&self, name: &str) -> Result<&[u8]> {
        if name == LABEL_COLUMN {
            return Ok(&self.labels);
        }
        let parse = |prefix: char| -> Option<usize> {
            name.strip_prefix(prefix)?.parse::<usize>().ok().filter(|&i| i >= 1)
        };
        if let Some(k) = parse('a') {
            if let Some(col) = self.attributes.get(k - 1) {
                return Ok(col);
            }
        }
        if let Some(j) = parse('m') {
            if let Some(col) = self.aux.get(j - 1) {
                return Ok(col);
            }
        }
        Err(Error::UnknownVariable(name.to_string()))
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Dataset {
        let d = self.feature_dim();
        let mut feats = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            feats.extend_from_slice(self.features.row(i));
        }
        let pick = |col: &Vec<u8>| indices.iter().map(|&i| col[i]).collect::<Vec<u8>>();
        Dataset {
            features: Matrix::from_vec(indices.len(), d, feats).expect("subset of a valid matrix"),
            attributes: self.attributes.iter().map(pick).collect(),
            labels: pick(&self.labels),
            aux: self.aux.iter().map(pick).collect(),
            provenance: provenance.into(),
        }
    }

    /// Row-wise concatenation; column layouts must agree.
    pub fn concat(parts: &[&Dataset], provenance: impl Into<String>) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero datasets".into()))?;
        let d = first.feature_dim();
        let mut feats = Vec::new();
        let mut attributes = vec![Vec::new(); first.num_attributes()];
        let mut labels = Vec::new();
        let mut aux = vec![Vec::new(); first.aux.len()];
        for p in parts {
            if p.feature_dim() != d || p.num_attributes() != attributes.len() || p.aux.len() != aux.len() {
                return Err(Error::DimensionMismatch("concat: column layouts differ".into()));
            }
            feats.extend_from_slice(p.features.as_slice());
            for (dst, src) in attributes.iter_mut().zip(&p.attributes) {
                dst.extend_from_slice(src);
            }
            labels.extend_from_slice(&p.labels);
            for (dst, src) in aux.iter_mut().zip(&p.aux) {
                dst.extend_from_slice(src);
            }
        }
        let n = labels.len();
        Dataset::new(Matrix::from_vec(n, d, feats)?, attributes, labels, aux, provenance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            vec![vec![0, 1, 1]],
            vec![1, 0, 1],
            vec![vec![0, 0, 1]],
            "test",
        )
        .unwrap()
    }

    #[test]
    fn columns_by_name() {
        let d = tiny();
        assert_eq!(d.column("a1").unwrap(), &[0, 1, 1]);
        assert_eq!(d.column("y").unwrap(), &[1, 0, 1]);
        assert_eq!(d.column("m1").unwrap(), &[0, 0, 1]);
        assert!(d.column("a2").is_err());
        assert!(d.column("a0").is_err());
        assert_eq!(d.discrete_names(), vec!["a1", "y", "m1"]);
    }

    #[test]
    fn non_binary_rejected() {
        let r = Dataset::new(Matrix::zeros(1, 1), vec![vec![2]], vec![0], vec![], "x");
        assert!(matches!(r, Err(Error::Validation { .. })));
    }

    #[test]
    fn subset_and_concat() {
        let d = tiny();
        let a = d.subset(&[2, 0], "a");
        assert_eq!(a.features.row(0), &[5.0, 6.0]);
        assert_eq!(a.labels, vec![1, 1]);
        let b = d.subset(&[1], "b");
        let c = Dataset::concat(&[&a, &b], "c").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.attributes[0], vec![1, 0, 1]);
    }
}
