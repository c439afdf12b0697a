use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WadgError};

/// Per-epoch summary. Loss terms are epoch means over mini-batches; `None`
/// (JSON `null`) marks a term inactive in the run's ablation mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub l_c: f64,
    pub l_d: Option<f64>,
    pub l_ms: Option<f64>,
    pub gp: Option<f64>,
    pub source_val_acc: f64,
    pub target_acc: Option<f64>,
    pub lambda_d: f64,
    pub wall_clock_s: f64,
}

impl MetricsRecord {
    /// Copy with the timing field cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_metrics_jsonl(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| WadgError::io(path, e))
}

pub fn read_metrics_jsonl(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    read_jsonl(path.as_ref())
}

/// Reads one JSON value per nonempty line.
pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| WadgError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| WadgError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            log::error!("{}:{}: {e}", path.display(), n + 1);
            e
        })?;
        out.push(value);
    }
    Ok(out)
}

pub(crate) fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| WadgError::io(path, e))?;
    let line = serde_json::to_string(value)? + "\n";
    f.write_all(line.as_bytes())
        .map_err(|e| WadgError::io(path, e))?;
    f.flush().map_err(|e| WadgError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let recs = vec![
            MetricsRecord {
                epoch: 0,
                l_c: 0.69,
                l_d: None,
                l_ms: Some(0.1),
                gp: None,
                source_val_acc: 0.5,
                target_acc: Some(0.25),
                lambda_d: 0.0,
                wall_clock_s: 0.01,
            },
            MetricsRecord {
                epoch: 1,
                l_c: 0.1 + 0.2,
                l_d: Some(-1e-300),
                l_ms: None,
                gp: Some(3.0),
                source_val_acc: 1.0,
                target_acc: None,
                lambda_d: 0.46211715726000974,
                wall_clock_s: 0.02,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_metrics_jsonl(&p, &recs).unwrap();
        assert_eq!(read_metrics_jsonl(&p).unwrap(), recs);
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().contains("\"l_d\":null"));
    }
}
