//! Region proposals from an external detector.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use cedg_core::rng::{fnv1a, stream};

use crate::corpus::{parse_jsonl, resolve};
use crate::error::{ForgeError, Result};

/// Box `[x, x+w) × [y, y+h)` in pixels, top-left origin. The corner may lie
/// outside the image; filtering clips it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
    pub category: String,
    pub score: f32,
}

impl RegionProposal {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.w == 0 || self.h == 0 {
            return Err(format!("empty box {}x{}", self.w, self.h));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        Ok(())
    }
}

pub trait Detector: Sync {
    fn propose(&self, image: &Path, width: usize, height: usize) -> Result<Vec<RegionProposal>>;
}

#[derive(Debug, Serialize, Deserialize)]
struct ProposalLine {
    image: PathBuf,
    regions: Vec<RegionProposal>,
}

/// Proposals read from a JSON-lines file. Images without a line get none.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedProposals {
    by_image: HashMap<PathBuf, Vec<RegionProposal>>,
}

impl PrecomputedProposals {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut by_image = HashMap::new();
        for (line, l) in parse_jsonl::<ProposalLine>(path)? {
            for r in &l.regions {
                r.validate().map_err(|msg| ForgeError::Parse { path: path.to_path_buf(), line, msg })?;
            }
            by_image.entry(resolve(base, &l.image)).or_insert_with(Vec::new).extend(l.regions);
        }
        Ok(Self { by_image })
    }

    pub fn insert(&mut self, image: PathBuf, regions: Vec<RegionProposal>) {
        self.by_image.insert(image, regions);
    }

    pub fn len(&self) -> usize {
        self.by_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }

    /// Writes one line per image, paths relative to the file's directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut keys: Vec<&PathBuf> = self.by_image.keys().collect();
        keys.sort();
        let mut text = String::new();
        for k in keys {
            let line = ProposalLine {
                image: k.strip_prefix(base).unwrap_or(k).to_path_buf(),
                regions: self.by_image[k].clone(),
            };
            text.push_str(&serde_json::to_string(&line).expect("serializes"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| ForgeError::io(path, e))
    }
}

impl Detector for PrecomputedProposals {
    fn propose(&self, image: &Path, _width: usize, _height: usize) -> Result<Vec<RegionProposal>> {
        Ok(self.by_image.get(image).cloned().unwrap_or_default())
    }
}

/// Pseudo-random proposals keyed by the image file name, for tests.
/// Boxes may hang off the image edge.
#[derive(Debug, Clone)]
pub struct MockDetector {
    pub seed: u64,
    pub per_image: usize,
    pub categories: Vec<String>,
}

impl Detector for MockDetector {
    fn propose(&self, image: &Path, width: usize, height: usize) -> Result<Vec<RegionProposal>> {
        if self.categories.is_empty() {
            return Err(ForgeError::Config("mock detector needs categories".into()));
        }
        let name = image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut rng = stream(self.seed, "mock-detector", 0, fnv1a(name.as_bytes()));
        let (wi, hi) = (width as i64, height as i64);
        Ok((0..self.per_image)
            .map(|_| RegionProposal {
                x: rng.gen_range(-wi / 4..wi),
                y: rng.gen_range(-hi / 4..hi),
                w: rng.gen_range(1..=width.max(1) as u32),
                h: rng.gen_range(1..=height.max(1) as u32),
                category: self.categories[rng.gen_range(0..self.categories.len())].clone(),
                score: rng.gen(),
            })
            .collect())
    }
}
