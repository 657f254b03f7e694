//! Turns a weakly labeled image corpus plus detector region proposals into
//! a small labeled dataset in the target categories.
//!
//! Pipeline: [`load_corpus`] → [`propose_and_filter`] → [`merge_hierarchy`]
//! → [`build_dataset`], or all at once with [`forge`].

pub mod build;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod filter;
pub mod proposals;
pub mod topics;

pub use build::{build_dataset, forge, group_by_topic, propose_and_filter, ForgeReport, ImageRegions, RegionRef};
pub use corpus::{load_corpus, write_manifest, CorpusImage, CorpusManifest};
pub use dataset::{read_cifar10, read_dataset, write_dataset, LabeledDataset, Record};
pub use error::{ForgeError, Result};
pub use filter::{filter_regions, merge_hierarchy, ForgeConfig, Region};
pub use proposals::{Detector, MockDetector, PrecomputedProposals, RegionProposal};
pub use topics::{HierarchyMap, TopicSpec, TopicTable, TARGET_CATEGORIES};
