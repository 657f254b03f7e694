//! Topic → detector category table and topic → target category hierarchy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Target categories, in label order.
pub const TARGET_CATEGORIES: [&str; 4] = ["Person", "Wheeled Vehicle", "Tracked Vehicle", "Other"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub topic: String,
    /// Detector categories accepted as evidence for this topic.
    pub categories: BTreeSet<String>,
}

/// Closed set of corpus topics; lookups ignore ASCII case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTable {
    pub topics: Vec<TopicSpec>,
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

const VEHICLE_LIKE: &[&str] = &["airplane", "train", "boat"];

impl Default for TopicTable {
    fn default() -> Self {
        let rows: [(&str, &[&str]); 15] = [
            ("Pet", &["cat", "dog", "bird"]),
            ("Pedestrian", &["person"]),
            ("Mixer car", &["car"]),
            ("Car", &["car"]),
            ("Military truck", &["truck", "bus"]),
            ("Military off-road vehicle", &["car"]),
            ("Truck", &["truck", "bus"]),
            ("Amphibious armored vehicle", VEHICLE_LIKE),
            ("Wheeled armored vehicle", VEHICLE_LIKE),
            ("Goat", &["sheep"]),
            ("Cattle", &["cow"]),
            ("Off-road vehicle", &["car"]),
            ("Tank", VEHICLE_LIKE),
            ("Armored personnel carrier", VEHICLE_LIKE),
            ("Soldier", &["person"]),
        ];
        Self { topics: rows.iter().map(|(t, c)| TopicSpec { topic: t.to_string(), categories: set(c) }).collect() }
    }
}

impl TopicTable {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.topics {
            if t.categories.is_empty() {
                return Err(ForgeError::Config(format!("topic {:?} has no detector categories", t.topic)));
            }
            if !seen.insert(t.topic.to_ascii_lowercase()) {
                return Err(ForgeError::Config(format!("topic {:?} listed twice", t.topic)));
            }
        }
        Ok(())
    }

    pub fn get(&self, topic: &str) -> Option<&TopicSpec> {
        self.topics.iter().find(|t| t.topic.eq_ignore_ascii_case(topic))
    }

    pub fn require(&self, topic: &str) -> Result<&TopicSpec> {
        self.get(topic).ok_or_else(|| ForgeError::UnknownTopic(topic.to_string()))
    }
}

/// Topic → target category index into `categories`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyMap {
    pub categories: Vec<String>,
    /// Keys are lower-case topic names.
    pub topics: BTreeMap<String, usize>,
}

impl Default for HierarchyMap {
    fn default() -> Self {
        let groups: [&[&str]; 4] = [
            &["pedestrian", "soldier"],
            &["car", "military off-road vehicle", "off-road vehicle", "truck", "military truck", "mixer car"],
            &["armored personnel carrier", "amphibious armored vehicle", "tank", "wheeled armored vehicle"],
            &["pet", "cattle", "goat"],
        ];
        let mut topics = BTreeMap::new();
        for (label, group) in groups.iter().enumerate() {
            for t in *group {
                topics.insert(t.to_string(), label);
            }
        }
        Self { categories: TARGET_CATEGORIES.iter().map(|s| s.to_string()).collect(), topics }
    }
}

impl HierarchyMap {
    pub fn target(&self, topic: &str) -> Result<usize> {
        self.topics.get(&topic.to_ascii_lowercase()).copied().ok_or_else(|| ForgeError::UnmappedTopic(topic.to_string()))
    }

    /// Every topic in `table` must map to a valid category.
    pub fn validate(&self, table: &TopicTable) -> Result<()> {
        if self.categories.is_empty() || self.categories.len() > 256 {
            return Err(ForgeError::Config(format!("{} target categories", self.categories.len())));
        }
        for &label in self.topics.values() {
            if label >= self.categories.len() {
                return Err(ForgeError::Config(format!("target index {label} out of range")));
            }
        }
        for t in &table.topics {
            self.target(&t.topic)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let table = TopicTable::default();
        table.validate().unwrap();
        assert_eq!(table.topics.len(), 15);
        HierarchyMap::default().validate(&table).unwrap();
        assert_eq!(table.require("TANK").unwrap().categories, set(&["airplane", "boat", "train"]));
        assert!(matches!(table.require("Dragon"), Err(ForgeError::UnknownTopic(t)) if t == "Dragon"));
    }

    #[test]
    fn hierarchy_examples() {
        let m = HierarchyMap::default();
        assert_eq!(m.target("Soldier").unwrap(), 0);
        assert_eq!(m.target("pedestrian").unwrap(), 0);
        assert_eq!(m.target("Mixer car").unwrap(), 1);
        assert_eq!(m.target("Tank").unwrap(), 2);
        assert_eq!(m.target("Goat").unwrap(), 3);
    }
}
