//! Build, persist, reload and score through files only.

mod support;

use hiertree_core::data::{
    load_embeddings, read_tree, write_embedding_map, write_tree, DatasetManifest,
    EmbeddingProvider, FileEmbeddingProvider, SyntheticProvider,
};
use hiertree_core::eval::{self, confusion_diff, write_confusion_csv};
use hiertree_core::gateway::ResponseCache;
use hiertree_core::scoring::FusionConfig;
use hiertree_core::tree::{BuildConfig, LevelAggregation};
use support::{build, corpus, keyword_spec, names, record, replay_gateway, scripted_gateway};

#[test]
fn files_in_files_out() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let classes = names("obj", 8);
    let embedder = SyntheticProvider::new(1, keyword_spec(&classes, 16, 0.1, 1.0)).unwrap();
    let cfg = BuildConfig {
        group_ratio: 0.25,
        ..BuildConfig::default()
    };

    std::fs::create_dir(p("fixtures")).unwrap();
    record(&p("fixtures"), &classes, &cfg, &embedder);
    let tree = build(&classes, &cfg, &replay_gateway(&p("fixtures")), &embedder);
    write_tree(&p("tree.json"), &tree).unwrap();

    let c = corpus(&classes, 5, &embedder);
    write_embedding_map(&p("images.bin"), 16, &c.images).unwrap();
    write_embedding_map(&p("labels.bin"), 16, &c.labels).unwrap();
    c.manifest.save(&p("manifest.json")).unwrap();

    let tree = read_tree(&p("tree.json")).unwrap();
    let manifest = DatasetManifest::load(&p("manifest.json")).unwrap();
    let images = load_embeddings(&p("images.bin")).unwrap();
    let labels = load_embeddings(&p("labels.bin")).unwrap();
    assert_eq!(images, c.images);

    let fusion = FusionConfig::default();
    let base = eval::evaluate(&manifest, &images, &labels, None, &fusion).unwrap();
    let hier = eval::evaluate(&manifest, &images, &labels, Some(&tree), &fusion).unwrap();
    assert_eq!(base.total, 40);
    assert_eq!(hier.total, 40);
    assert_eq!(hier.accuracy, hier.accuracy_from_confusion());
    let diff = confusion_diff(&base, &hier, 5).unwrap();
    let net: i64 = diff.delta.iter().flatten().sum();
    assert_eq!(net, 0, "every item stays in exactly one cell");

    write_confusion_csv(&p("confusion.csv"), &hier).unwrap();
    let csv = std::fs::read_to_string(p("confusion.csv")).unwrap();
    assert_eq!(csv.lines().count(), classes.len() + 1);
}

#[test]
fn flattened_levels_embed_each_line() {
    let classes = names("obj", 4);
    let embedder = SyntheticProvider::new(2, keyword_spec(&classes, 8, 0.1, 0.5)).unwrap();
    let cfg = BuildConfig {
        group_ratio: 0.5,
        ..BuildConfig::default()
    };
    let tree = build(
        &classes,
        &cfg,
        &scripted_gateway(ResponseCache::in_memory()),
        &embedder,
    );
    let c = corpus(&classes, 2, &embedder);

    // a file-backed embedder serving the description lines
    let lines: Vec<String> = tree
        .nodes()
        .iter()
        .flat_map(|n| n.descriptions.values().flat_map(|d| d.lines().to_vec()))
        .collect();
    let vectors = embedder.embed_text(&lines).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let texts: std::collections::BTreeMap<String, _> = lines.iter().cloned().zip(vectors).collect();
    write_embedding_map(&dir.path().join("text.bin"), 8, &texts).unwrap();
    let file_embedder = FileEmbeddingProvider::new(
        8,
        load_embeddings(&dir.path().join("text.bin")).unwrap(),
        Default::default(),
    )
    .unwrap();

    let models = eval::class_models(
        &c.manifest,
        &c.labels,
        &tree,
        LevelAggregation::Flatten,
        Some(&file_embedder),
    )
    .unwrap();
    for m in &models {
        let levels = tree.path_levels(m.class_id()).unwrap();
        // a singleton's fallback stays one stored row
        let n: usize = if levels[0].node_id == "init" {
            1
        } else {
            levels.iter().map(|l| l.lines.len()).sum()
        };
        assert_eq!(m.matrix.levels(), n);
    }
    let mean =
        eval::class_models(&c.manifest, &c.labels, &tree, LevelAggregation::Mean, None).unwrap();
    for m in &mean {
        assert_eq!(
            m.matrix.levels(),
            tree.path_levels(m.class_id()).unwrap().len()
        );
    }
}
