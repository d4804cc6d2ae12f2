//! JSON-lines clip manifests and a CSV importer.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One audio-visual clip. Paths are relative to the manifest root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub audio_path: String,
    pub frame_paths: Vec<String>,
    #[serde(default)]
    pub identity_id: Option<String>,
    /// Optional binary speaker attribute used for controlled comparisons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
}

impl ClipRecord {
    /// Identity key: the identity when known, otherwise the clip itself.
    pub fn identity_key(&self) -> &str {
        self.identity_id.as_deref().unwrap_or(&self.clip_id)
    }
}

pub fn validate_records(records: &[ClipRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if r.frame_paths.is_empty() {
            return Err(Error::Format(format!("clip `{}` has no frames", r.clip_id)));
        }
        if !seen.insert(r.clip_id.as_str()) {
            return Err(Error::Format(format!("duplicate clip_id `{}`", r.clip_id)));
        }
    }
    Ok(())
}

pub fn to_jsonl(records: &[ClipRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str) -> Result<Vec<ClipRecord>> {
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1))))
        .collect::<Result<Vec<ClipRecord>>>()?;
    validate_records(&records)?;
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    fs::write(path, to_jsonl(records)).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct CsvRow {
    clip_id: String,
    audio_path: String,
    frame_paths: String,
    #[serde(default)]
    identity_id: Option<String>,
    #[serde(default)]
    attribute: Option<String>,
}

/// Reads a CSV with columns `clip_id,audio_path,frame_paths,identity_id`
/// (and optionally `attribute`); frame paths are `;`-separated.
pub fn import_csv(path: &Path) -> Result<Vec<ClipRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let nonempty = |s: Option<String>| s.filter(|v| !v.trim().is_empty());
        records.push(ClipRecord {
            clip_id: row.clip_id,
            audio_path: row.audio_path,
            frame_paths: row
                .frame_paths
                .split(';')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(String::from)
                .collect(),
            identity_id: nonempty(row.identity_id),
            attribute: nonempty(row.attribute),
        });
    }
    validate_records(&records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, identity: Option<&str>) -> ClipRecord {
        ClipRecord {
            clip_id: id.into(),
            audio_path: format!("{id}.wav"),
            frame_paths: vec![format!("{id}_0.png"), format!("{id}_1.png")],
            identity_id: identity.map(String::from),
            attribute: None,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let rs = vec![rec("a", Some("p1")), rec("b", None)];
        assert_eq!(parse_jsonl(&to_jsonl(&rs)).unwrap(), rs);
    }

    #[test]
    fn missing_identity_falls_back_to_clip() {
        let r: ClipRecord =
            serde_json::from_str(r#"{"clip_id":"c9","audio_path":"a.wav","frame_paths":["f.png"]}"#).unwrap();
        assert_eq!(r.identity_key(), "c9");
        assert_eq!(rec("x", Some("p")).identity_key(), "p");
    }

    #[test]
    fn rejects_empty_frames_and_duplicates() {
        let mut bad = rec("a", None);
        bad.frame_paths.clear();
        assert!(parse_jsonl(&to_jsonl(&[bad])).is_err());
        assert!(parse_jsonl(&to_jsonl(&[rec("a", None), rec("a", None)])).is_err());
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(
            &p,
            "clip_id,audio_path,frame_paths,identity_id\nc1,a.wav,f1.png;f2.png,spk\nc2,b.wav,g.png,\n",
        )
        .unwrap();
        let rs = import_csv(&p).unwrap();
        assert_eq!(rs[0].frame_paths, vec!["f1.png", "f2.png"]);
        assert_eq!(rs[0].identity_id.as_deref(), Some("spk"));
        assert_eq!(rs[1].identity_id, None);
    }
}
