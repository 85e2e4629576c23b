//! CSV schema: `x0,…,x{d-1},a1,…,aK,y[,m1,…]`, comma separated, no quoting.
//! Features are written in shortest round-trip decimal form; binary columns as `0`/`1`.

use std::path::Path;

use super::{attribute_column, aux_column, Dataset, LABEL_COLUMN};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

struct Layout {
    d_x: usize,
    k: usize,
    j: usize,
}

fn parse_header(fields: &[&str]) -> Result<Layout> {
    if fields.is_empty() || (fields.len() == 1 && fields[0].is_empty()) {
        return Err(Error::Schema("empty header".into()));
    }
    let mut pos = 0;
    while pos < fields.len() && fields[pos] == format!("x{pos}") {
        pos += 1;
    }
    let d_x = pos;
    let mut k = 0;
    while pos < fields.len() && fields[pos] == attribute_column(k) {
        k += 1;
        pos += 1;
    }
    if pos >= fields.len() || fields[pos] != LABEL_COLUMN {
        return Err(Error::Schema(format!(
            "expected x0..x{{d-1}}, a1..aK, y[, m1..]; column {} is `{}`",
            pos + 1,
            fields.get(pos).copied().unwrap_or("<missing>")
        )));
    }
    pos += 1;
    let mut j = 0;
    while pos < fields.len() {
        if fields[pos] != aux_column(j) {
            return Err(Error::Schema(format!(
                "unexpected column `{}` at position {} (expected `{}`)",
                fields[pos],
                pos + 1,
                aux_column(j)
            )));
        }
        j += 1;
        pos += 1;
    }
    if k == 0 {
        return Err(Error::Schema("no attribute columns a1..aK".into()));
    }
    Ok(Layout { d_x, k, j })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::Schema(format!("{}: empty file", path.display()))),
        Some(r) => r.map_err(|e| csv_error(path, e))?,
    };
    let names: Vec<&str> = header.iter().collect();
    let layout = parse_header(&names)?;
    let width = names.len();
    let mut feats = Vec::new();
    let mut attributes = vec![Vec::new(); layout.k];
    let mut labels = Vec::new();
    let mut aux = vec![Vec::new(); layout.j];
    for (row, rec) in records.enumerate() {
        let row = row + 1;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != width {
            return Err(Error::Validation {
                row,
                column: "*".into(),
                detail: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            let name = names[c];
            if c < layout.d_x {
                let v: f64 = field.trim().parse().map_err(|_| Error::Validation {
                    row,
                    column: name.into(),
                    detail: format!("`{field}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Validation {
                        row,
                        column: name.into(),
                        detail: "non-finite feature".into(),
                    });
                }
                feats.push(v);
            } else {
                let b = match field.trim() {
                    "0" => 0u8,
                    "1" => 1u8,
                    other => {
                        return Err(Error::Validation {
                            row,
                            column: name.into(),
                            detail: format!("`{other}` is not 0 or 1"),
                        })
                    }
                };
                let off = c - layout.d_x;
                if off < layout.k {
                    attributes[off].push(b);
                } else if off == layout.k {
                    labels.push(b);
                } else {
                    aux[off - layout.k - 1].push(b);
                }
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Schema(format!("{}: header but no rows", path.display())));
    }
    let n = labels.len();
    Dataset::new(
        Matrix::from_vec(n, layout.d_x, feats)?,
        attributes,
        labels,
        aux,
        format!("csv {}", path.display()),
    )
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

/// Renders the dataset in the CSV schema.
pub fn to_csv_string(data: &Dataset) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = (0..data.feature_dim()).map(|i| format!("x{i}")).collect();
    header.extend(data.discrete_names());
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..data.len() {
        let mut fields: Vec<String> = data.features.row(r).iter().map(|v| format!("{v}")).collect();
        fields.extend(data.attributes.iter().map(|c| c[r].to_string()));
        fields.push(data.labels[r].to_string());
        fields.extend(data.aux.iter().map(|c| c[r].to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes atomically (temporary sibling file, then rename).
pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), to_csv_string(data).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scmdata::{presets, sample_scm};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = sample_scm(&presets::mediation().build().unwrap(), 200, 4).unwrap();
        save_csv(&d, &path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back, d);
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn non_binary_attribute_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.csv", "x0,a1,y\n0.5,1,0\n0.1,2,1\n");
        match load_csv(&p) {
            Err(Error::Validation { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "a1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "empty.csv", "");
        assert!(matches!(load_csv(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_header_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "h.csv", "x0,y,a1\n0.5,1,0\n");
        assert!(matches!(load_csv(&p), Err(Error::Schema(_))));
        let p = write(&dir, "r.csv", "x0,a1,y\n0.5,1,0\n0.5,1\n");
        assert!(matches!(load_csv(&p), Err(Error::Validation { row: 2, .. })));
        let p = write(&dir, "n.csv", "x0,a1,y\nabc,1,0\n");
        assert!(matches!(load_csv(&p), Err(Error::Validation { row: 1, .. })));
    }
}
