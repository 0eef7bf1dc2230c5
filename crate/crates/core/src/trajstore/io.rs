//! Line-delimited dataset files.
//!
//! Line 1 is a JSON header carrying the format tag, version, metadata, record counts and a
//! SHA-256 over the body. Every following line is one trajectory as JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Trajectory};
use crate::error::{Error, FormatErrorKind, Result};
use crate::minidevice::EnvConfig;
use crate::util::sha256_hex;

pub const DATASET_FORMAT: &str = "digiq-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    meta: DatasetMeta,
    n_trajectories: usize,
    n_transitions: usize,
    /// SHA-256 of the body lines, each terminated by `\n`.
    checksum: String,
}

pub fn to_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut body = String::new();
    for traj in &dataset.trajectories {
        body.push_str(&serde_json::to_string(traj)?);
        body.push('\n');
    }
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        meta: dataset.meta.clone(),
        n_trajectories: dataset.trajectories.len(),
        n_transitions: dataset.n_transitions(),
        checksum: sha256_hex(body.as_bytes()),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    out.push_str(&body);
    Ok(out.into_bytes())
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    fs::write(path, to_bytes(dataset)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads and additionally checks that the file was produced under `env`.
pub fn load_checked(path: &Path, env: &EnvConfig) -> Result<Dataset> {
    let ds = load(path)?;
    if ds.meta.env_hash != env.hash() {
        return Err(Error::format(
            FormatErrorKind::Integrity,
            format!("environment hash {} != expected {}", ds.meta.env_hash, env.hash()),
        ));
    }
    Ok(ds)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(FormatErrorKind::Parse, format!("not UTF-8: {e}")))?;
    let (header_line, body) = match text.find('\n') {
        Some(i) => (&text[..i], &text[i + 1..]),
        None => return Err(Error::format(FormatErrorKind::Truncated, "missing header terminator")),
    };
    let probe: serde_json::Value = serde_json::from_str(header_line)
        .map_err(|e| Error::format(FormatErrorKind::Parse, format!("header: {e}")))?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(DATASET_FORMAT) {
        return Err(Error::format(FormatErrorKind::Validation, "not a dataset file"));
    }
    let version = probe.get("version").and_then(|v| v.as_u64());
    if version != Some(DATASET_VERSION as u64) {
        return Err(Error::format(
            FormatErrorKind::Version,
            format!("file version {version:?}, supported {DATASET_VERSION}"),
        ));
    }
    let header: Header = serde_json::from_value(probe)
        .map_err(|e| Error::format(FormatErrorKind::Parse, format!("header: {e}")))?;

    let lines: Vec<&str> = body.split_terminator('\n').collect();
    if lines.len() < header.n_trajectories || (!body.is_empty() && !body.ends_with('\n')) {
        return Err(Error::format(
            FormatErrorKind::Truncated,
            format!("expected {} trajectory lines, found {}", header.n_trajectories, lines.len()),
        ));
    }
    if lines.len() > header.n_trajectories {
        return Err(Error::format(
            FormatErrorKind::Validation,
            format!("{} trajectory lines but header declares {}", lines.len(), header.n_trajectories),
        ));
    }
    if sha256_hex(body.as_bytes()) != header.checksum {
        return Err(Error::format(FormatErrorKind::Integrity, "body checksum mismatch"));
    }
    if header.meta.env_hash != header.meta.env.hash() {
        return Err(Error::format(
            FormatErrorKind::Integrity,
            "environment hash does not match the recorded environment",
        ));
    }
    let trajectories = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<Trajectory>(l)
                .map_err(|e| Error::format(FormatErrorKind::Parse, format!("line {}: {e}", i + 2)))
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        meta: header.meta,
        trajectories,
    };
    if ds.n_transitions() != header.n_transitions {
        return Err(Error::format(
            FormatErrorKind::Validation,
            format!("{} transitions but header declares {}", ds.n_transitions(), header.n_transitions),
        ));
    }
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minidevice::{default_task_pool, FlawedExpert};
    use crate::trajstore::{collect_dataset, presample_candidates, FeatureCache};

    fn fixture() -> Dataset {
        let pool = default_task_pool(10);
        let ds = collect_dataset(&EnvConfig::default(), &pool, &FlawedExpert::default(), 10, 5).unwrap();
        let mut ds = presample_candidates(&ds, &pool, &FlawedExpert::default(), 4, 6).unwrap();
        // attach a few feature caches with awkward floats
        for (i, t) in ds.trajectories[0].transitions.iter_mut().enumerate() {
            t.features = Some(FeatureCache {
                sa: Some(vec![0.1 + i as f64, -1e-300, 1.0 / 3.0]),
                s: Some(vec![std::f64::consts::PI]),
                s_next: Some(vec![f64::MIN_POSITIVE]),
                candidates: vec![vec![0.7, 0.2, 1e10]; 4],
            });
        }
        ds
    }

    fn write(bytes: &[u8]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, bytes).unwrap();
        (dir, p)
    }

    #[test]
    fn save_load_identity() {
        let ds = fixture();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save(&ds, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back, ds);
        assert_eq!(to_bytes(&back).unwrap(), fs::read(&p).unwrap());
    }

    #[test]
    fn tampered_body_is_integrity_error() {
        let bytes = to_bytes(&fixture()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let tampered = text.replacen("\"r\":0", "\"r\":1", 1);
        assert_ne!(tampered, text);
        let (_d, p) = write(tampered.as_bytes());
        assert_eq!(load(&p).unwrap_err().format_kind(), Some(FormatErrorKind::Integrity));
    }

    #[test]
    fn truncated_file_detected() {
        let bytes = to_bytes(&fixture()).unwrap();
        let (_d, p) = write(&bytes[..bytes.len() / 2]);
        assert_eq!(load(&p).unwrap_err().format_kind(), Some(FormatErrorKind::Truncated));
    }

    #[test]
    fn version_mismatch_detected() {
        let text = String::from_utf8(to_bytes(&fixture()).unwrap()).unwrap();
        let (_d, p) = write(text.replacen("\"version\":1", "\"version\":7", 1).as_bytes());
        assert_eq!(load(&p).unwrap_err().format_kind(), Some(FormatErrorKind::Version));
    }

    #[test]
    fn k_mismatch_is_validation_error() {
        let text = String::from_utf8(to_bytes(&fixture()).unwrap()).unwrap();
        let (_d, p) = write(text.replacen("\"k\":4", "\"k\":5", 1).as_bytes());
        assert_eq!(load(&p).unwrap_err().format_kind(), Some(FormatErrorKind::Validation));
    }

    #[test]
    fn env_hash_checked() {
        let ds = fixture();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        save(&ds, &p).unwrap();
        load_checked(&p, &EnvConfig::default()).unwrap();
        let other = EnvConfig {
            p_popup: 0.0,
            ..EnvConfig::default()
        };
        assert_eq!(
            load_checked(&p, &other).unwrap_err().format_kind(),
            Some(FormatErrorKind::Integrity)
        );
    }

    #[test]
    fn distinct_error_codes() {
        let codes: std::collections::HashSet<u8> = [
            FormatErrorKind::Version,
            FormatErrorKind::Truncated,
            FormatErrorKind::Integrity,
            FormatErrorKind::Validation,
            FormatErrorKind::Parse,
        ]
        .iter()
        .map(|k| k.code())
        .collect();
        assert_eq!(codes.len(), 5);
    }
}
