//! Weakly labeled corpus: one image per line, tagged with the search topic
//! it was collected under.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::topics::TopicTable;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLine {
    image: PathBuf,
    topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusImage {
    /// Resolved against the manifest directory.
    pub path: PathBuf,
    /// Canonical spelling from the topic table.
    pub topic: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub images: Vec<CorpusImage>,
    pub skipped: Vec<SkippedImage>,
}

impl CorpusManifest {
    pub fn topic_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for img in &self.images {
            *counts.entry(img.topic.clone()).or_insert(0) += 1;
        }
        counts
    }
}

/// Resolves `p` against `base` unless it is already absolute.
pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = std::fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line)
            .map_err(|e| ForgeError::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        out.push((i + 1, v));
    }
    Ok(out)
}

/// Loads and validates a JSON-lines manifest.
///
/// Unknown topics fail the whole load. Images whose header cannot be read
/// are skipped and listed in [`CorpusManifest::skipped`].
pub fn load_corpus(path: impl AsRef<Path>, table: &TopicTable) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let lines: Vec<(usize, ManifestLine)> = parse_jsonl(path)?;
    let mut entries = Vec::with_capacity(lines.len());
    for (_, l) in lines {
        let spec = table.require(&l.topic)?;
        entries.push((resolve(base, &l.image), spec.topic.clone()));
    }
    let probed: Vec<_> = entries.into_par_iter().map(|(p, topic)| (image::image_dimensions(&p), p, topic)).collect();
    let mut corpus = CorpusManifest::default();
    for (dims, path, topic) in probed {
        match dims {
            Ok((w, h)) => corpus.images.push(CorpusImage { path, topic, width: w as usize, height: h as usize }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                corpus.skipped.push(SkippedImage { path, reason: e.to_string() });
            }
        }
    }
    for (topic, n) in corpus.topic_counts() {
        log::info!("corpus topic {topic}: {n} images");
    }
    Ok(corpus)
}

/// Writes a manifest, storing paths relative to its own directory where possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[(PathBuf, String)]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut text = String::new();
    for (p, topic) in entries {
        let rel = p.strip_prefix(base).unwrap_or(p).to_path_buf();
        text.push_str(&serde_json::to_string(&ManifestLine { image: rel, topic: topic.clone() }).expect("serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| ForgeError::io(path, e))
}
