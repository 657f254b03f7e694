//! End-to-end forging: propose, filter, merge, crop.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cedg_augment::{bilinear_resize, hist_equalize, ImageU8};

use crate::corpus::CorpusManifest;
use crate::dataset::LabeledDataset;
use crate::error::{ForgeError, Result};
use crate::filter::{filter_regions, merge_hierarchy, ForgeConfig, Region};
use crate::proposals::Detector;
use crate::topics::{HierarchyMap, TopicTable};

/// A kept region and the corpus image it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRef {
    pub image: usize,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRegions {
    pub image: usize,
    pub proposals: usize,
    pub kept: Vec<Region>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForgeReport {
    pub lambda: f32,
    pub images: usize,
    pub skipped_images: usize,
    pub proposals: usize,
    pub kept: usize,
    pub kept_per_topic: BTreeMap<String, usize>,
    pub per_category: Vec<usize>,
    pub skipped_regions: usize,
}

/// Runs the detector and filter on every corpus image, in parallel, keeping
/// corpus order.
pub fn propose_and_filter(
    corpus: &CorpusManifest,
    detector: &dyn Detector,
    table: &TopicTable,
    cfg: &ForgeConfig,
) -> Result<Vec<ImageRegions>> {
    cfg.validate()?;
    corpus
        .images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let spec = table.require(&img.topic)?;
            let proposals = detector.propose(&img.path, img.width, img.height)?;
            let kept = filter_regions(img.width, img.height, spec, &proposals, cfg);
            Ok(ImageRegions { image: i, proposals: proposals.len(), kept })
        })
        .collect()
}

/// Groups kept regions by the topic of their source image.
pub fn group_by_topic(corpus: &CorpusManifest, filtered: &[ImageRegions]) -> Vec<(String, Vec<RegionRef>)> {
    let mut groups: BTreeMap<String, Vec<RegionRef>> = BTreeMap::new();
    for f in filtered {
        let entry = groups.entry(corpus.images[f.image].topic.clone()).or_default();
        entry.extend(f.kept.iter().map(|r| RegionRef { image: f.image, region: r.clone() }));
    }
    groups.into_iter().collect()
}

/// Crop, bilinear resize and equalize one region.
pub fn region_patch(img: &ImageU8, r: &Region, side: usize) -> Result<ImageU8> {
    let crop = img.crop(r.x, r.y, r.w, r.h)?;
    Ok(hist_equalize(&bilinear_resize(&crop, side, side)?))
}

/// Materializes merged groups into a dataset. Each source image is decoded
/// once; regions of images that fail to decode are skipped and counted.
/// Records are ordered by category, then by group order.
pub fn build_dataset(
    corpus: &CorpusManifest,
    merged: &[Vec<RegionRef>],
    categories: &[String],
    cfg: &ForgeConfig,
) -> Result<(LabeledDataset, usize)> {
    if merged.len() != categories.len() {
        return Err(ForgeError::Config(format!("{} groups for {} categories", merged.len(), categories.len())));
    }
    let mut needed: Vec<usize> = merged.iter().flatten().map(|r| r.image).collect();
    needed.sort_unstable();
    needed.dedup();
    let decoded: BTreeMap<usize, ImageU8> = needed
        .par_iter()
        .filter_map(|&i| match ImageU8::load(&corpus.images[i].path) {
            Ok(img) => Some((i, img)),
            Err(e) => {
                log::warn!("skipping regions of {}: {e}", corpus.images[i].path.display());
                None
            }
        })
        .collect();
    let flat: Vec<(usize, &RegionRef)> =
        merged.iter().enumerate().flat_map(|(label, g)| g.iter().map(move |r| (label, r))).collect();
    let patches: Vec<Option<(usize, ImageU8)>> = flat
        .par_iter()
        .map(|&(label, r)| match decoded.get(&r.image) {
            Some(img) => region_patch(img, &r.region, cfg.output_side).map(|p| Some((label, p))),
            None => Ok(None),
        })
        .collect::<Result<_>>()?;
    let mut ds = LabeledDataset::new(categories.to_vec());
    let mut skipped = 0;
    for p in patches {
        match p {
            Some((label, img)) => ds.push(label, img)?,
            None => skipped += 1,
        }
    }
    Ok((ds, skipped))
}

/// The whole forging stage.
pub fn forge(
    corpus: &CorpusManifest,
    detector: &dyn Detector,
    table: &TopicTable,
    map: &HierarchyMap,
    cfg: &ForgeConfig,
) -> Result<(LabeledDataset, ForgeReport)> {
    table.validate()?;
    map.validate(table)?;
    let filtered = propose_and_filter(corpus, detector, table, cfg)?;
    let groups = group_by_topic(corpus, &filtered);
    let merged = merge_hierarchy(&groups, map)?;
    let (mut ds, skipped_regions) = build_dataset(corpus, &merged, &map.categories, cfg)?;
    let report = ForgeReport {
        lambda: cfg.lambda,
        images: corpus.images.len(),
        skipped_images: corpus.skipped.len(),
        proposals: filtered.iter().map(|f| f.proposals).sum(),
        kept: filtered.iter().map(|f| f.kept.len()).sum(),
        kept_per_topic: groups.iter().map(|(t, g)| (t.clone(), g.len())).collect(),
        per_category: ds.counts(),
        skipped_regions,
    };
    ds.provenance = serde_json::json!({ "stage": "forge", "report": report });
    Ok((ds, report))
}
