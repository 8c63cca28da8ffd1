//! JSON-lines report sink: one serialized report object per line, grouped
//! on disk as `reports/<dataset>/<method>.jsonl`. Batch runs append; each
//! line is flushed so an interrupted run leaves only whole records behind.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{Error, Result};

/// Location of the report stream for one (dataset, method) pair.
pub fn report_path(out_root: &Path, dataset: &str, method: &str) -> PathBuf {
    out_root
        .join("reports")
        .join(dataset)
        .join(format!("{method}.jsonl"))
}

/// Append one record as a single JSON line, creating parent directories on
/// first use.
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::io_at(parent))?;
    }
    let mut line = serde_json::to_string(record)
        .map_err(|e| Error::InvalidArgument(format!("report does not serialize: {e}")))?;
    line.push('\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(Error::io_at(path))?;
    file.write_all(line.as_bytes()).map_err(Error::io_at(path))?;
    file.flush().map_err(Error::io_at(path))?;
    Ok(())
}

/// Read every record back. Blank lines are skipped; a malformed line is a
/// parse error naming its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    struct Rec {
        name: String,
        p: f64,
    }

    #[test]
    fn appends_accumulate_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = report_path(dir.path(), "linear", "dp");
        assert!(path.ends_with("reports/linear/dp.jsonl"));
        let a = Rec {
            name: "one".into(),
            p: 0.25,
        };
        let b = Rec {
            name: "two".into(),
            p: 1.0,
        };
        append_jsonl(&path, &a).unwrap();
        append_jsonl(&path, &b).unwrap();
        let back: Vec<Rec> = read_jsonl(&path).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn malformed_line_is_a_parse_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"name\":\"ok\",\"p\":1.0}\nnot json\n").unwrap();
        let err = read_jsonl::<Rec>(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }
}
