//! Dataset files: one CSV per domain (`f0,…,f{n-1},label`) plus a JSON
//! manifest.
//!
//! ```json
//! {
//!   "benchmark": "rotated-moons",
//!   "domains": ["dom0", "dom15", "dom30", "dom45"],
//!   "n": 2,
//!   "K": 2,
//!   "seed": 7,
//!   "generator": { "name": "rotated-moons", "angles": [0.0, 15.0, 30.0, 45.0], ... },
//!   "files": { "dom0": { "path": "dom0.csv", "rows": 600 }, ... }
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. Floats use Rust's
//! shortest round-trip formatting, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DomainDataset, GeneratorParams};
use crate::diffmath::Tensor;
use crate::error::{Result, WadgError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub benchmark: String,
    pub domains: Vec<String>,
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub generator: GeneratorParams,
    pub files: BTreeMap<String, FileEntry>,
}

fn write_csv(path: &Path, d: &DomainDataset) -> Result<()> {
    if !d.features.is_finite() {
        return Err(WadgError::Dataset {
            domain: d.domain_id.clone(),
            detail: "features contain non-finite values".into(),
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    let n = d.num_features();
    let mut header: Vec<String> = (0..n).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for r in 0..d.len() {
        let mut rec: Vec<String> = d.features.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(d.labels[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| WadgError::io(path, e))?;
    Ok(())
}

/// Writes every domain as `<domain_id>.csv` next to `manifest.json` in `dir`
/// and returns the manifest path.
pub fn save_dataset(
    dir: impl AsRef<Path>,
    generator: &GeneratorParams,
    seed: u64,
    datasets: &[DomainDataset],
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| WadgError::io(dir, e))?;
    let n = datasets.first().map_or(0, DomainDataset::num_features);
    let mut files = BTreeMap::new();
    for d in datasets {
        if d.num_features() != n {
            return Err(WadgError::Dataset {
                domain: d.domain_id.clone(),
                detail: format!("{} features, expected {n}", d.num_features()),
            });
        }
        let name = format!("{}.csv", d.domain_id);
        write_csv(&dir.join(&name), d)?;
        files.insert(
            d.domain_id.clone(),
            FileEntry {
                path: name,
                rows: d.len(),
            },
        );
    }
    let manifest = DatasetManifest {
        benchmark: generator.benchmark_name().to_string(),
        domains: datasets.iter().map(|d| d.domain_id.clone()).collect(),
        n,
        k: generator.num_classes(),
        seed,
        generator: generator.clone(),
        files,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| WadgError::io(&path, e))?;
    Ok(path)
}

fn read_csv(path: &Path, domain: &str, n: usize, k: usize) -> Result<DomainDataset> {
    let bad = |detail: String| WadgError::Dataset {
        domain: domain.to_string(),
        detail,
    };
    let mut r =
        csv::Reader::from_path(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let header = r.headers()?.clone();
    let expected: Vec<String> = (0..n)
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(format!(
            "malformed header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(bad(format!("row {line} has {} fields", rec.len())));
        }
        for field in rec.iter().take(n) {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("row {line}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(bad(format!("row {line}: non-finite value")));
            }
            data.push(v);
        }
        let y: usize = rec[n]
            .parse()
            .map_err(|_| bad(format!("row {line}: bad label `{}`", &rec[n])))?;
        if y >= k {
            return Err(bad(format!("row {line}: label {y} outside 0..{k}")));
        }
        labels.push(y);
    }
    let rows = labels.len();
    DomainDataset::new(domain, Tensor::matrix(rows, n, data)?, labels)
}

/// Reads a manifest and every domain file it lists, validating row counts,
/// widths and labels.
pub fn load_dataset(
    manifest_path: impl AsRef<Path>,
) -> Result<(DatasetManifest, Vec<DomainDataset>)> {
    let path = manifest_path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| WadgError::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::with_capacity(manifest.domains.len());
    for dom in &manifest.domains {
        let entry = manifest.files.get(dom).ok_or_else(|| WadgError::Dataset {
            domain: dom.clone(),
            detail: "no file entry in manifest".into(),
        })?;
        let d = read_csv(&base.join(&entry.path), dom, manifest.n, manifest.k)?;
        if d.len() != entry.rows {
            return Err(WadgError::Dataset {
                domain: dom.clone(),
                detail: format!("manifest lists {} rows, file has {}", entry.rows, d.len()),
            });
        }
        out.push(d);
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moons() -> (GeneratorParams, Vec<DomainDataset>) {
        let g = GeneratorParams::RotatedMoons {
            angles: vec![0.0, 15.0, 30.0],
            samples_per_domain: 40,
            noise_sd: 0.1,
        };
        let d = g.generate(5).unwrap();
        (g, d)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (g, d) = moons();
        let dir = tempfile::tempdir().unwrap();
        let m = save_dataset(dir.path(), &g, 5, &d).unwrap();
        let (manifest, back) = load_dataset(&m).unwrap();
        assert_eq!(back, d);
        assert_eq!(manifest.k, 2);
        assert_eq!(manifest.domains, ["dom0", "dom15", "dom30"]);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
        for k in [
            "benchmark",
            "domains",
            "n",
            "K",
            "seed",
            "generator",
            "files",
        ] {
            assert!(keys.iter().any(|x| x == k), "missing {k}");
        }
    }

    #[test]
    fn row_count_mismatch_names_the_domain() {
        let (g, d) = moons();
        let dir = tempfile::tempdir().unwrap();
        let m = save_dataset(dir.path(), &g, 5, &d).unwrap();
        let text = std::fs::read_to_string(&m).unwrap();
        let mut manifest: DatasetManifest = serde_json::from_str(&text).unwrap();
        manifest.files.get_mut("dom15").unwrap().rows += 1;
        std::fs::write(&m, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_dataset(&m).unwrap_err().to_string();
        assert!(err.contains("dom15"), "{err}");
    }

    #[test]
    fn malformed_header_is_rejected() {
        let (g, d) = moons();
        let dir = tempfile::tempdir().unwrap();
        let m = save_dataset(dir.path(), &g, 5, &d).unwrap();
        let csv = dir.path().join("dom0.csv");
        let text = std::fs::read_to_string(&csv)
            .unwrap()
            .replacen("f1", "x1", 1);
        std::fs::write(&csv, text).unwrap();
        assert!(load_dataset(&m).unwrap_err().to_string().contains("header"));
    }

    #[test]
    fn nan_features_are_refused() {
        let (g, mut d) = moons();
        d[1].features.data_mut()[3] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let err = save_dataset(dir.path(), &g, 5, &d).unwrap_err().to_string();
        assert!(err.contains("dom15"), "{err}");
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path().join("nope.json")),
            Err(WadgError::Io { .. })
        ));
    }
}
