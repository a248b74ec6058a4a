//! Result persistence: long-format CSV, the JSON run manifest, and the
//! on-disk cache for reference solutions.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

use super::{ExperimentConfig, ReferenceSolution, StudyRow};

/// Header shared by every results file.
pub const CSV_HEADER: &str = "experiment,mode,epsilon,level,rep,metric,value";

fn optional<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Renders study rows as CSV text, header included.
pub fn rows_to_csv(rows: &[StudyRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.experiment,
            row.mode,
            optional(&row.epsilon),
            optional(&row.level),
            optional(&row.rep),
            row.metric,
            row.value,
        ));
    }
    out
}

/// Writes study rows as `experiment,mode,epsilon,level,rep,metric,value`,
/// with empty cells for absent fields.
pub fn write_csv(path: &Path, rows: &[StudyRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(rows_to_csv(rows).as_bytes())?;
    Ok(())
}

/// Hex SHA-256 of a value's canonical (sorted-key) JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&canonical);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes the run manifest: the full configuration plus its hash, so a
/// results directory is self-describing and reproducible.
pub fn write_manifest(path: &Path, config: &ExperimentConfig) -> Result<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        config: &'a ExperimentConfig,
        config_hash: String,
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let manifest = Manifest {
        config,
        config_hash: config_hash(config)?,
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn reference_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("reference-{hash}.json"))
}

/// Loads a cached reference whose hash matches, if one exists and parses.
pub fn load_reference(dir: &Path, hash: &str) -> Option<ReferenceSolution> {
    let text = fs::read_to_string(reference_path(dir, hash)).ok()?;
    let reference: ReferenceSolution = serde_json::from_str(&text).ok()?;
    (reference.config_hash == hash).then_some(reference)
}

/// Persists a reference solution keyed by its configuration hash.
pub fn save_reference(dir: &Path, reference: &ReferenceSolution) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = reference_path(dir, &reference.config_hash);
    fs::write(&path, serde_json::to_string(reference)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_formats_optionals_as_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![
            StudyRow {
                experiment: "variance-decay".into(),
                mode: "seamless".into(),
                epsilon: None,
                level: Some(2),
                rep: Some(0),
                metric: "trace_v".into(),
                value: 0.5,
            },
            StudyRow {
                experiment: "variance-decay".into(),
                mode: "seamless".into(),
                epsilon: None,
                level: None,
                rep: None,
                metric: "slope_beta".into(),
                value: 2.25,
            },
        ];
        write_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "variance-decay,seamless,,2,0,trace_v,0.5");
        assert_eq!(lines[2], "variance-decay,seamless,,,,slope_beta,2.25");
    }

    #[test]
    fn hash_is_stable_and_field_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seed += 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn reference_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let reference = ReferenceSolution {
            config_hash: "abc123".into(),
            model: "lorenz63".into(),
            level: 5,
            samples: 64,
            seed: 7,
            dt: 0.125,
            estimates: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
        };
        save_reference(dir.path(), &reference).unwrap();
        let loaded = load_reference(dir.path(), "abc123").unwrap();
        assert_eq!(loaded.samples, 64);
        assert_eq!(loaded.estimates_array()[[1, 2]], 6.0);
        assert!(load_reference(dir.path(), "other").is_none());
    }
}
