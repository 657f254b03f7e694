//! Topic-consistent region selection and topic → category merging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::proposals::RegionProposal;
use crate::topics::{HierarchyMap, TopicSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    /// Minimum detector score, inclusive.
    pub lambda: f32,
    /// Regions narrower or shorter than this after clipping are dropped.
    pub min_side: usize,
    pub output_side: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self { lambda: 0.7, min_side: 2, output_side: 32 }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(ForgeError::Config(format!("lambda {} outside (0, 1]", self.lambda)));
        }
        if self.min_side == 0 || self.output_side == 0 {
            return Err(ForgeError::Config("sides must be positive".into()));
        }
        Ok(())
    }
}

/// A proposal clipped to its image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub category: String,
    pub score: f32,
}

/// Intersection of `[start, start+len)` with `[0, limit)`.
fn clip_span(start: i64, len: u32, limit: usize) -> Option<(usize, usize)> {
    let lo = start.max(0);
    let hi = (start + len as i64).min(limit as i64);
    (hi > lo).then(|| (lo as usize, (hi - lo) as usize))
}

/// Keeps proposals whose category is allowed for the topic and whose score
/// reaches `cfg.lambda`, clipped to a `width`×`height` image.
pub fn filter_regions(
    width: usize,
    height: usize,
    topic: &TopicSpec,
    proposals: &[RegionProposal],
    cfg: &ForgeConfig,
) -> Vec<Region> {
    proposals
        .iter()
        .filter(|p| p.score >= cfg.lambda && topic.categories.contains(&p.category))
        .filter_map(|p| {
            let (x, w) = clip_span(p.x, p.w, width)?;
            let (y, h) = clip_span(p.y, p.h, height)?;
            (w >= cfg.min_side && h >= cfg.min_side).then(|| Region {
                x,
                y,
                w,
                h,
                category: p.category.clone(),
                score: p.score,
            })
        })
        .collect()
}

/// Relabels per-topic groups to target categories.
///
/// Topics are matched case-insensitively and visited in sorted order, so the
/// result does not depend on the order of `groups`. Groups naming the same
/// topic are concatenated in input order.
pub fn merge_hierarchy<T: Clone>(groups: &[(String, Vec<T>)], map: &HierarchyMap) -> Result<Vec<Vec<T>>> {
    let mut by_topic: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (topic, items) in groups {
        by_topic.entry(topic.to_ascii_lowercase()).or_default().extend(items.iter().cloned());
    }
    let mut out = vec![Vec::new(); map.categories.len()];
    for (topic, items) in by_topic {
        out[map.target(&topic)?].extend(items);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topics::TopicTable;

    fn prop(x: i64, y: i64, w: u32, h: u32, cat: &str, score: f32) -> RegionProposal {
        RegionProposal { x, y, w, h, category: cat.into(), score }
    }

    #[test]
    fn topic_and_threshold() {
        let table = TopicTable::default();
        let cfg = ForgeConfig::default();
        let soldier = table.require("Soldier").unwrap();
        let tank = table.require("Tank").unwrap();
        assert_eq!(filter_regions(64, 64, soldier, &[prop(0, 0, 10, 10, "person", 0.71)], &cfg).len(), 1);
        assert_eq!(filter_regions(64, 64, soldier, &[prop(0, 0, 10, 10, "person", 0.7)], &cfg).len(), 1);
        assert!(filter_regions(64, 64, soldier, &[prop(0, 0, 10, 10, "person", 0.69)], &cfg).is_empty());
        assert!(filter_regions(64, 64, tank, &[prop(0, 0, 10, 10, "person", 0.99)], &cfg).is_empty());
    }

    #[test]
    fn clipping() {
        let spec = TopicTable::default().require("Soldier").unwrap().clone();
        let cfg = ForgeConfig::default();
        let r = filter_regions(20, 10, &spec, &[prop(-5, 8, 10, 10, "person", 0.9)], &cfg);
        assert_eq!((r[0].x, r[0].y, r[0].w, r[0].h), (0, 8, 5, 2));
        // One pixel left after clipping.
        assert!(filter_regions(20, 10, &spec, &[prop(19, 0, 4, 4, "person", 0.9)], &cfg).is_empty());
        // Entirely outside.
        assert!(filter_regions(20, 10, &spec, &[prop(30, 0, 4, 4, "person", 0.9)], &cfg).is_empty());
    }

    #[test]
    fn merge_examples() {
        let map = HierarchyMap::default();
        let groups = vec![
            ("Pedestrian".to_string(), vec![1, 2]),
            ("soldier".to_string(), vec![3]),
            ("Mixer car".to_string(), vec![4]),
        ];
        let merged = merge_hierarchy(&groups, &map).unwrap();
        assert_eq!(merged[0], vec![1, 2, 3]);
        assert_eq!(merged[1], vec![4]);
        assert!(merge_hierarchy(&[("Dragon".to_string(), vec![0])], &map).is_err());
    }
}
