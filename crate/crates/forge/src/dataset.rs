//! CIFAR-style labeled image files.
//!
//! Each record is one label byte followed by 3072 pixel bytes: the red,
//! green and blue 32×32 planes, each row-major. A JSON sidecar next to the
//! data file (`train.bin` → `train.meta.json`) stores the category table,
//! per-category counts and free-form provenance.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cedg_augment::ImageU8;

use crate::error::{ForgeError, Result};

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;
pub const RECORD_BYTES: usize = 1 + PIXELS;

pub const CIFAR10_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub label: u8,
    pub image: ImageU8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub categories: Vec<String>,
    pub records: Vec<Record>,
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub categories: Vec<String>,
    pub counts: Vec<usize>,
    pub records: usize,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

impl LabeledDataset {
    pub fn new(categories: Vec<String>) -> Self {
        Self { categories, records: Vec::new(), provenance: serde_json::Value::Null }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.categories.len()];
        for r in &self.records {
            c[r.label as usize] += 1;
        }
        c
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label as usize).collect()
    }

    pub fn images(&self) -> Vec<&ImageU8> {
        self.records.iter().map(|r| &r.image).collect()
    }

    pub fn push(&mut self, label: usize, image: ImageU8) -> Result<()> {
        if label >= self.categories.len() {
            return Err(ForgeError::Config(format!("label {label} outside {} categories", self.categories.len())));
        }
        if (image.width(), image.height()) != (SIDE, SIDE) {
            return Err(ForgeError::Config(format!("records must be 32x32, got {}x{}", image.width(), image.height())));
        }
        self.records.push(Record { label: label as u8, image });
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            categories: self.categories.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            categories: self.categories.clone(),
            counts: self.counts(),
            records: self.records.len(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * RECORD_BYTES);
        for r in &self.records {
            out.push(r.label);
            out.extend_from_slice(r.image.data());
        }
        out
    }
}

/// Writes the record file and its sidecar.
pub fn write_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| ForgeError::io(path, e))?);
    f.write_all(&ds.to_bytes()).map_err(|e| ForgeError::io(path, e))?;
    f.flush().map_err(|e| ForgeError::io(path, e))?;
    let meta_path = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&ds.meta()).expect("meta serializes");
    std::fs::write(&meta_path, json).map_err(|e| ForgeError::io(meta_path, e))
}

/// Parses raw records, checking length and label range.
pub fn parse_records(bytes: &[u8], categories: usize, path: &Path) -> Result<Vec<Record>> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(ForgeError::dataset(
            path,
            format!("truncated: {} bytes is not a multiple of {RECORD_BYTES}", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[0];
            if label as usize >= categories {
                return Err(ForgeError::dataset(
                    path,
                    format!("record {i}: label {label} outside {categories} categories"),
                ));
            }
            let image = ImageU8::new(SIDE, SIDE, rec[1..].to_vec()).expect("fixed record size");
            Ok(Record { label, image })
        })
        .collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ForgeError::io(path, e))
}

/// Reads a record file together with its sidecar, cross-checking counts.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let meta_path = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_slice(&read_bytes(&meta_path)?)
        .map_err(|e| ForgeError::dataset(&meta_path, format!("bad sidecar: {e}")))?;
    if meta.categories.is_empty() || meta.categories.len() > 256 {
        return Err(ForgeError::dataset(&meta_path, "category table must hold 1..=256 entries"));
    }
    let records = parse_records(&read_bytes(path)?, meta.categories.len(), path)?;
    let ds = LabeledDataset { categories: meta.categories.clone(), records, provenance: meta.provenance.clone() };
    if ds.records.len() != meta.records || ds.counts() != meta.counts {
        return Err(ForgeError::dataset(
            path,
            format!(
                "sidecar declares {} records {:?}, file holds {} {:?}",
                meta.records,
                meta.counts,
                ds.records.len(),
                ds.counts()
            ),
        ));
    }
    Ok(ds)
}

/// Reads one or more CIFAR-10 binary batches (no sidecar).
pub fn read_cifar10(paths: &[impl AsRef<Path>]) -> Result<LabeledDataset> {
    let mut ds = LabeledDataset::new(CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect());
    for p in paths {
        let p = p.as_ref();
        ds.records.extend(parse_records(&read_bytes(p)?, CIFAR10_CLASSES.len(), p)?);
    }
    ds.provenance = serde_json::json!({
        "source": "cifar10-binary",
        "files": paths.iter().map(|p| p.as_ref().display().to_string()).collect::<Vec<_>>(),
    });
    Ok(ds)
}
