use std::path::{Path, PathBuf};

use cedg_augment::ImageU8;
use cedg_forge::dataset::{sidecar_path, RECORD_BYTES};
use cedg_forge::{
    build_dataset, filter_regions, forge, group_by_topic, load_corpus, merge_hierarchy, propose_and_filter,
    read_cifar10, read_dataset, write_dataset, write_manifest, Detector, ForgeConfig, ForgeError, HierarchyMap,
    LabeledDataset, MockDetector, PrecomputedProposals, RegionProposal, RegionRef, TopicTable,
};
use proptest::prelude::*;

fn noise(seed: u64, w: usize, h: usize) -> ImageU8 {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    ImageU8::from_fn(w, h, |_, _, _| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        (s >> 24) as u8
    })
}

/// Writes `n` images cycling through all topics; returns the manifest path.
fn fixture_corpus(dir: &Path, n: usize) -> PathBuf {
    let table = TopicTable::default();
    let mut entries = Vec::new();
    for i in 0..n {
        let p = dir.join(format!("img{i:03}.ppm"));
        noise(i as u64, 40 + i % 7, 30 + i % 5).save(&p).unwrap();
        entries.push((p, table.topics[i % table.topics.len()].topic.clone()));
    }
    let manifest = dir.join("corpus.jsonl");
    write_manifest(&manifest, &entries).unwrap();
    manifest
}

fn all_categories() -> Vec<String> {
    let mut c: Vec<String> = TopicTable::default().topics.iter().flat_map(|t| t.categories.iter().cloned()).collect();
    c.sort();
    c.dedup();
    c
}

/// Independent restatement of the keep rule: count the in-image pixels of
/// each axis span by enumeration.
fn brute_keep(p: &RegionProposal, allowed: &[String], w: usize, h: usize, lambda: f32) -> Option<(usize, usize, usize, usize)> {
    if !(p.score >= lambda) || !allowed.contains(&p.category) {
        return None;
    }
    let xs: Vec<i64> = (p.x..p.x + p.w as i64).filter(|&v| v >= 0 && v < w as i64).collect();
    let ys: Vec<i64> = (p.y..p.y + p.h as i64).filter(|&v| v >= 0 && v < h as i64).collect();
    if xs.len() < 2 || ys.len() < 2 {
        return None;
    }
    Some((xs[0] as usize, ys[0] as usize, xs.len(), ys.len()))
}

#[test]
fn fifteen_topic_manifest_loads_with_counts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(fixture_corpus(dir.path(), 45), &TopicTable::default()).unwrap();
    let counts = corpus.topic_counts();
    assert_eq!(counts.len(), 15);
    assert!(counts.values().all(|&n| n == 3));
    assert!(corpus.skipped.is_empty());
}

#[test]
fn empty_manifest_and_unknown_topic() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert!(load_corpus(&empty, &TopicTable::default()).unwrap().images.is_empty());

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"image\":\"a.ppm\",\"topic\":\"Dragon\"}\n").unwrap();
    let err = load_corpus(&bad, &TopicTable::default()).unwrap_err();
    assert!(matches!(&err, ForgeError::UnknownTopic(t) if t == "Dragon"));
    assert!(err.to_string().contains("Dragon"));

    let garbled = dir.path().join("garbled.jsonl");
    std::fs::write(&garbled, "{\"image\":\"a.ppm\",\"topic\":\"Tank\"}\nnot json\n").unwrap();
    assert!(matches!(load_corpus(&garbled, &TopicTable::default()), Err(ForgeError::Parse { line: 2, .. })));
}

#[test]
fn unreadable_image_is_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    noise(1, 20, 20).save(dir.path().join("ok.ppm")).unwrap();
    std::fs::write(dir.path().join("broken.ppm"), b"P6 garbage").unwrap();
    let m = dir.path().join("m.jsonl");
    std::fs::write(
        &m,
        "{\"image\":\"ok.ppm\",\"topic\":\"tank\"}\n{\"image\":\"broken.ppm\",\"topic\":\"Tank\"}\n{\"image\":\"missing.ppm\",\"topic\":\"Car\"}\n",
    )
    .unwrap();
    let corpus = load_corpus(&m, &TopicTable::default()).unwrap();
    assert_eq!(corpus.images.len(), 1);
    assert_eq!(corpus.images[0].topic, "Tank");
    assert_eq!((corpus.images[0].width, corpus.images[0].height), (20, 20));
    assert_eq!(corpus.skipped.len(), 2);
}

#[test]
fn filter_matches_brute_force_on_fixture() {
    let table = TopicTable::default();
    let det = MockDetector { seed: 3, per_image: 50, categories: all_categories() };
    let cfg = ForgeConfig::default();
    let mut total_kept = 0;
    for (i, spec) in table.topics.iter().enumerate() {
        let (w, h) = (30 + i, 24 + 2 * i);
        let props = det.propose(Path::new(&format!("x{i}.ppm")), w, h).unwrap();
        assert_eq!(props.len(), 50);
        let allowed: Vec<String> = spec.categories.iter().cloned().collect();
        let expected: Vec<_> = props.iter().filter_map(|p| brute_keep(p, &allowed, w, h, cfg.lambda)).collect();
        let got: Vec<_> = filter_regions(w, h, spec, &props, &cfg).iter().map(|r| (r.x, r.y, r.w, r.h)).collect();
        assert_eq!(got, expected, "topic {}", spec.topic);
        total_kept += got.len();
    }
    assert!(total_kept > 0, "fixture should exercise the keep branch");
}

#[test]
fn forge_end_to_end_counts_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let table = TopicTable::default();
    let map = HierarchyMap::default();
    let corpus = load_corpus(fixture_corpus(dir.path(), 30), &table).unwrap();
    let det = MockDetector { seed: 11, per_image: 40, categories: all_categories() };
    let cfg = ForgeConfig::default();
    let (ds, report) = forge(&corpus, &det, &table, &map, &cfg).unwrap();

    // Bookkeeping oracle: per-category counts from the topic-level kept counts.
    let mut expected = vec![0usize; 4];
    for (topic, n) in &report.kept_per_topic {
        expected[map.target(topic).unwrap()] += n;
    }
    assert_eq!(ds.counts(), expected);
    assert_eq!(report.per_category, expected);
    assert_eq!(expected.iter().sum::<usize>(), report.kept);
    assert!(report.kept > 0 && report.kept < report.proposals);
    assert!(ds.records.iter().all(|r| (r.image.width(), r.image.height()) == (32, 32)));

    let path = dir.path().join("ds.bin");
    write_dataset(&ds, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, ds.len() * RECORD_BYTES);
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(meta["counts"], serde_json::json!(expected));
}

#[test]
fn single_region_gives_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("one.ppm");
    noise(5, 50, 40).save(&img_path).unwrap();
    let m = dir.path().join("m.jsonl");
    write_manifest(&m, &[(img_path.clone(), "Tank".into())]).unwrap();
    let corpus = load_corpus(&m, &TopicTable::default()).unwrap();
    let mut pre = PrecomputedProposals::default();
    pre.insert(
        img_path,
        vec![
            RegionProposal { x: 5, y: 5, w: 20, h: 10, category: "boat".into(), score: 0.8 },
            RegionProposal { x: 5, y: 5, w: 20, h: 10, category: "person".into(), score: 0.95 },
        ],
    );
    let (ds, _) = forge(&corpus, &pre, &TopicTable::default(), &HierarchyMap::default(), &ForgeConfig::default()).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.records[0].label, 2);
}

#[test]
fn undecodable_source_skips_its_regions() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load_corpus(fixture_corpus(dir.path(), 15), &TopicTable::default()).unwrap();
    let table = TopicTable::default();
    let det = MockDetector { seed: 2, per_image: 30, categories: all_categories() };
    let filtered = propose_and_filter(&corpus, &det, &table, &ForgeConfig::default()).unwrap();
    let merged = merge_hierarchy(&group_by_topic(&corpus, &filtered), &HierarchyMap::default()).unwrap();
    let victim = merged.iter().flatten().next().unwrap().image;
    let lost = merged.iter().flatten().filter(|r| r.image == victim).count();
    std::fs::write(&corpus.images[victim].path, b"not an image").unwrap();
    let cats: Vec<String> = HierarchyMap::default().categories;
    let (ds, skipped) = build_dataset(&corpus, &merged, &cats, &ForgeConfig::default()).unwrap();
    assert_eq!(skipped, lost);
    assert_eq!(ds.len() + lost, merged.iter().map(Vec::len).sum::<usize>());
}

#[test]
fn proposals_file_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut pre = PrecomputedProposals::default();
    let regions = vec![RegionProposal { x: -3, y: 2, w: 9, h: 4, category: "car".into(), score: 0.5 }];
    pre.insert(dir.path().join("a.ppm"), regions.clone());
    let path = dir.path().join("p.jsonl");
    pre.save(&path).unwrap();
    let back = PrecomputedProposals::load(&path).unwrap();
    assert_eq!(back.propose(&dir.path().join("a.ppm"), 10, 10).unwrap(), regions);
    assert!(back.propose(&dir.path().join("b.ppm"), 10, 10).unwrap().is_empty());

    std::fs::write(&path, "{\"image\":\"a.ppm\",\"regions\":[{\"x\":0,\"y\":0,\"w\":3,\"h\":3,\"category\":\"car\",\"score\":1.5}]}\n").unwrap();
    assert!(matches!(PrecomputedProposals::load(&path), Err(ForgeError::Parse { line: 1, .. })));
}

fn tiny_dataset(n: usize) -> LabeledDataset {
    let mut ds = LabeledDataset::new(cedg_forge::TARGET_CATEGORIES.iter().map(|s| s.to_string()).collect());
    for i in 0..n {
        ds.push(i % 4, noise(i as u64, 32, 32)).unwrap();
    }
    ds
}

#[test]
fn dataset_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    write_dataset(&tiny_dataset(6), &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    std::fs::write(&path, &good[..good.len() - 1]).unwrap();
    assert!(read_dataset(&path).unwrap_err().to_string().contains("truncated"));

    let mut bad = good.clone();
    bad[RECORD_BYTES] = 9;
    std::fs::write(&path, &bad).unwrap();
    assert!(read_dataset(&path).unwrap_err().to_string().contains("label 9"));

    let mut relabeled = good.clone();
    relabeled[0] = 3;
    std::fs::write(&path, &relabeled).unwrap();
    assert!(read_dataset(&path).unwrap_err().to_string().contains("sidecar declares"));

    std::fs::write(&path, &good).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), tiny_dataset(6));
    assert!(tiny_dataset(1).push(4, noise(0, 32, 32)).is_err());
    assert!(tiny_dataset(1).push(0, noise(0, 31, 32)).is_err());
}

#[test]
fn cifar10_batch_with_ten_thousand_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test_batch.bin");
    let mut bytes = vec![0u8; 10_000 * RECORD_BYTES];
    for i in 0..10_000 {
        bytes[i * RECORD_BYTES] = (i % 10) as u8;
        bytes[i * RECORD_BYTES + 1] = (i % 251) as u8;
    }
    std::fs::write(&path, &bytes).unwrap();
    let ds = read_cifar10(&[&path]).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.counts(), vec![1000; 10]);
    assert_eq!(ds.records[257].image.get(0, 0, 0), 6);
    assert_eq!(ds.records[257].label, 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_lambda_never_adds_regions(seed in any::<u64>(), topic in 0usize..15, w in 4usize..80, h in 4usize..80) {
        let spec = &TopicTable::default().topics[topic];
        let props = MockDetector { seed, per_image: 50, categories: all_categories() }
            .propose(Path::new("m.ppm"), w, h).unwrap();
        let mut prev: Option<Vec<_>> = None;
        for step in 1..=9 {
            let cfg = ForgeConfig { lambda: step as f32 / 10.0, ..ForgeConfig::default() };
            let kept = filter_regions(w, h, spec, &props, &cfg);
            if let Some(p) = &prev {
                prop_assert!(kept.iter().all(|r| p.contains(r)));
            }
            prev = Some(kept);
        }
    }

    #[test]
    fn merge_preserves_count_and_ignores_order(sizes in proptest::collection::vec(0usize..6, 15), rot in 0usize..15) {
        let table = TopicTable::default();
        let region = |i: usize| RegionRef {
            image: i,
            region: cedg_forge::Region { x: 0, y: 0, w: 2, h: 2, category: "c".into(), score: 1.0 },
        };
        let mut groups: Vec<(String, Vec<RegionRef>)> = table.topics.iter().zip(&sizes).enumerate()
            .map(|(t, (spec, &n))| (spec.topic.clone(), (0..n).map(|k| region(t * 10 + k)).collect()))
            .collect();
        let map = HierarchyMap::default();
        let a = merge_hierarchy(&groups, &map).unwrap();
        prop_assert_eq!(a.iter().map(Vec::len).sum::<usize>(), sizes.iter().sum::<usize>());
        groups.rotate_left(rot);
        groups.reverse();
        prop_assert_eq!(merge_hierarchy(&groups, &map).unwrap(), a);
    }
}
