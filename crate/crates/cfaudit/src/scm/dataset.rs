//! Labelled datasets and their on-disk CSV form.
//!
//! The format is strict by design: a header `x_0,...,x_{k-1},a,y`, one row
//! per individual, features as 17-significant-digit decimal floats (which
//! round-trip `f64` exactly), attribute and label as `0`/`1`. The parser
//! rejects anything else with a line-numbered error; it never panics on
//! malformed input.

use crate::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Hard cap on the feature dimension accepted from external files, to keep
/// adversarial headers from driving huge allocations.
pub const MAX_FEATURE_DIM: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    feature_dim: usize,
    features: Vec<Vec<f64>>,
    attrs: Vec<u8>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(
        feature_dim: usize,
        features: Vec<Vec<f64>>,
        attrs: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if features.len() != attrs.len() || features.len() != labels.len() {
            return Err(Error::Shape {
                context: "LabeledDataset column lengths",
                expected: features.len(),
                got: attrs.len().min(labels.len()),
            });
        }
        if features.is_empty() {
            return Err(Error::InsufficientData("dataset has no rows".into()));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != feature_dim {
                return Err(Error::Shape {
                    context: "LabeledDataset row width",
                    expected: feature_dim,
                    got: row.len(),
                });
            }
            if !crate::numerics::linalg::all_finite(row) {
                return Err(Error::NonFinite(format!("dataset row {i}")));
            }
        }
        if attrs.iter().chain(labels.iter()).any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "attributes and labels must be 0 or 1".into(),
            ));
        }
        Ok(LabeledDataset {
            feature_dim,
            features,
            attrs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn attr(&self, i: usize) -> u8 {
        self.attrs[i]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn attrs(&self) -> &[u8] {
        &self.attrs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Row indices with the given attribute value.
    pub fn indices_with_attr(&self, a: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.attrs[i] == a).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for j in 0..self.feature_dim {
            out.push_str(&format!("x_{j},"));
        }
        out.push_str("a,y\n");
        for i in 0..self.len() {
            for v in &self.features[i] {
                // 17 significant digits: lossless f64 round-trip.
                out.push_str(&format!("{v:.16e},"));
            }
            out.push_str(&format!("{},{}\n", self.attrs[i], self.labels[i]));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 {
            return Err(parse_err(1, "header needs x_0..x_{k-1},a,y"));
        }
        let feature_dim = cols.len() - 2;
        if feature_dim > MAX_FEATURE_DIM {
            return Err(parse_err(
                1,
                &format!("feature dimension {feature_dim} exceeds cap {MAX_FEATURE_DIM}"),
            ));
        }
        for (j, col) in cols[..feature_dim].iter().enumerate() {
            let expect = format!("x_{j}");
            if *col != expect {
                return Err(parse_err(1, &format!("column {j} is `{col}`, expected `{expect}`")));
            }
        }
        if cols[feature_dim] != "a" || cols[feature_dim + 1] != "y" {
            return Err(parse_err(1, "last two columns must be `a,y`"));
        }

        let mut features = Vec::new();
        let mut attrs = Vec::new();
        let mut labels = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                return Err(parse_err(lineno, "empty line"));
            }
            let mut row = Vec::with_capacity(feature_dim);
            let mut fields = line.split(',');
            for j in 0..feature_dim {
                let field = fields
                    .next()
                    .ok_or_else(|| parse_err(lineno, &format!("missing feature x_{j}")))?;
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(lineno, &format!("bad float `{field}` in x_{j}")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, &format!("non-finite value in x_{j}")));
                }
                row.push(v);
            }
            let a = parse_bit(fields.next(), lineno, "a")?;
            let y = parse_bit(fields.next(), lineno, "y")?;
            if fields.next().is_some() {
                return Err(parse_err(lineno, "too many columns"));
            }
            features.push(row);
            attrs.push(a);
            labels.push(y);
        }
        LabeledDataset::new(feature_dim, features, attrs, labels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(Error::io_at(path))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io_at(path))?;
        Self::from_csv_str(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse {
                path: path.display().to_string(),
                msg,
            },
            other => other,
        })
    }

    /// Content hash of the canonical CSV encoding (hex SHA-256).
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_csv_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_bit(field: Option<&str>, lineno: usize, name: &str) -> Result<u8> {
    match field {
        Some("0") => Ok(0),
        Some("1") => Ok(1),
        Some(other) => Err(parse_err(
            lineno,
            &format!("column {name} must be 0 or 1, got `{other}`"),
        )),
        None => Err(parse_err(lineno, &format!("missing column {name}"))),
    }
}

fn parse_err(lineno: usize, msg: &str) -> Error {
    Error::Parse {
        path: "dataset csv".into(),
        msg: format!("line {lineno}: {msg}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{ScmSpec, Variant};

    fn sample() -> LabeledDataset {
        let spec = ScmSpec::generate(Variant::Linear, 2, 3, 0.01, 0.3, false, 21).unwrap();
        spec.sample_dataset(40, 4, "train").unwrap()
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let ds = sample();
        let text = ds.to_csv_string();
        let back = LabeledDataset::from_csv_str(&text).unwrap();
        assert_eq!(ds, back);
        // And the re-serialization is byte-identical.
        assert_eq!(text, back.to_csv_string());
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = ScmSpec::generate(Variant::Sin, 2, 3, 0.01, 0.3, false, 8).unwrap();
        let a = spec.sample_dataset(25, 99, "test").unwrap().to_csv_string();
        let b = spec.sample_dataset(25, 99, "test").unwrap().to_csv_string();
        assert_eq!(a, b);
        let c = spec.sample_dataset(25, 100, "test").unwrap().to_csv_string();
        assert_ne!(a, c);
        // Splits draw from independent streams.
        let d = spec.sample_dataset(25, 99, "train").unwrap().to_csv_string();
        assert_ne!(a, d);
    }

    #[test]
    fn header_is_validated() {
        assert!(LabeledDataset::from_csv_str("").is_err());
        assert!(LabeledDataset::from_csv_str("x_0,a\n").is_err());
        assert!(LabeledDataset::from_csv_str("x_0,x_2,a,y\n").is_err());
        assert!(LabeledDataset::from_csv_str("x_0,y,a\n").is_err());
    }

    #[test]
    fn row_errors_carry_line_numbers() {
        let text = "x_0,a,y\n1.0,0,1\nnope,0,1\n";
        let err = LabeledDataset::from_csv_str(text).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");

        let text = "x_0,a,y\n1.0,2,1\n";
        let err = LabeledDataset::from_csv_str(text).unwrap_err();
        assert!(err.to_string().contains("must be 0 or 1"), "{err}");

        let text = "x_0,a,y\n1.0,0,1,7\n";
        assert!(LabeledDataset::from_csv_str(text).is_err());

        let text = "x_0,a,y\ninf,0,1\n";
        assert!(LabeledDataset::from_csv_str(text).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let ds = sample();
        let fp1 = ds.fingerprint();
        let fp2 = sample().fingerprint();
        assert_eq!(fp1, fp2);
        assert_eq!(fp1.len(), 64);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = sample();
        ds.write_csv(&path).unwrap();
        let back = LabeledDataset::read_csv(&path).unwrap();
        assert_eq!(ds, back);
    }
}
