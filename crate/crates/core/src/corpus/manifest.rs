//! JSON-lines manifests.
//!
//! Paths are stored relative to the manifest's directory when possible.
//! In-memory matrices are written next to the manifest on save.

use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phoneset::PhoneLabel;

use super::{AnnotationSegment, FeatureSource, MatrixRef, UtteranceRecord};

pub const FEATURE_DIR: &str = "features";
pub const EMBEDDING_DIR: &str = "embeddings";

type SegmentRow = (f64, f64, String, String, String);

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_path: Option<String>,
    canonical: Vec<String>,
    perceived: Vec<String>,
    #[serde(default)]
    segments: Vec<SegmentRow>,
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn relative_text(base: &Path, path: &Path) -> String {
    let Ok(rel) = path.strip_prefix(base) else {
        return path.to_string_lossy().into_owned();
    };
    rel.components()
        .filter(|c| !matches!(c, Component::CurDir))
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn file_stem(id: &str) -> Result<&str> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::Data(format!("utterance id `{id}` cannot name a file")));
    }
    Ok(id)
}

fn store(base: &Path, dir: &str, id: &str, m: &MatrixRef) -> Result<String> {
    match m {
        MatrixRef::Path(p) => Ok(relative_text(base, p)),
        MatrixRef::Inline(t) => {
            let rel = format!("{dir}/{}.aplmat", file_stem(id)?);
            let full = base.join(&rel);
            if let Some(parent) = full.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            crate::matfile::save(&full, t)?;
            Ok(rel)
        }
    }
}

/// Writes `records` to `path`, one JSON object per line.
pub fn save_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let base = base_dir(path);
    let mut text = String::new();
    for r in records {
        let (audio_path, feature_path) = match &r.source {
            FeatureSource::Audio(p) => (Some(relative_text(&base, p)), None),
            FeatureSource::Features(m) => (None, Some(store(&base, FEATURE_DIR, &r.id, m)?)),
        };
        let embedding_path = r
            .phonetic_embedding
            .as_ref()
            .map(|m| store(&base, EMBEDDING_DIR, &r.id, m))
            .transpose()?;
        let line = Line {
            id: r.id.clone(),
            speaker: r.speaker.clone(),
            audio_path,
            feature_path,
            embedding_path,
            canonical: r.canonical.iter().map(|l| l.as_str().to_string()).collect(),
            perceived: r.perceived.iter().map(|l| l.as_str().to_string()).collect(),
            segments: r
                .segments
                .iter()
                .map(|s| {
                    (
                        s.start_s,
                        s.end_s,
                        s.canonical.as_str().to_string(),
                        s.perceived.as_str().to_string(),
                        s.error.as_str().to_string(),
                    )
                })
                .collect(),
        };
        text.push_str(&serde_json::to_string(&line).map_err(|e| Error::Data(e.to_string()))?);
        text.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, rel: &str) -> Result<PathBuf> {
    let p = base.join(rel);
    if !p.is_file() {
        return Err(Error::MissingFile(p));
    }
    Ok(p)
}

fn parse_labels(line_no: usize, items: &[String]) -> Result<Vec<PhoneLabel>> {
    items
        .iter()
        .map(|s| PhoneLabel::new(s).map_err(|e| Error::parse(line_no, e.to_string())))
        .collect()
}

/// Reads a manifest written by [`save_manifest`] or by hand.
pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = base_dir(path);
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let source = match (&line.audio_path, &line.feature_path) {
            (Some(a), None) => FeatureSource::Audio(resolve(&base, a)?),
            (None, Some(f)) => FeatureSource::Features(MatrixRef::Path(resolve(&base, f)?)),
            _ => {
                return Err(Error::parse(
                    line_no,
                    "exactly one of audio_path and feature_path is required",
                ))
            }
        };
        let phonetic_embedding = line
            .embedding_path
            .as_deref()
            .map(|e| resolve(&base, e).map(MatrixRef::Path))
            .transpose()?;
        let segments = line
            .segments
            .iter()
            .map(|(s, e, c, p, t)| {
                AnnotationSegment::new(*s, *e, PhoneLabel::new(c)?, PhoneLabel::new(p)?, t.parse()?)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        let record = UtteranceRecord {
            id: line.id,
            speaker: line.speaker,
            source,
            phonetic_embedding,
            canonical: parse_labels(line_no, &line.canonical)?,
            perceived: parse_labels(line_no, &line.perceived)?,
            segments,
        };
        record.validate().map_err(|e| Error::parse(line_no, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}
