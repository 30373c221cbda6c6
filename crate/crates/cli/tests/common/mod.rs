//! Corpus and fixture setup shared by the CLI tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use hiertree_core::clustering::KMeansConfig;
use hiertree_core::data::{
    write_canonical_json, write_embeddings, CenterSpec, DatasetManifest, EmbeddingProvider,
    ManifestItem, SyntheticProvider, SyntheticSpec,
};
use hiertree_core::gateway::{
    Gateway, GatewaySettings, ProviderRequest, ResponseCache, ScriptedProvider, TemplateSet,
};
use hiertree_core::tree::{self, BuildConfig};

pub const CLASSES: [&str; 6] = ["cat", "lion", "tiger", "car", "truck", "bus"];
pub const GROUP_RATIO: f64 = 0.34;
pub const SEED: u64 = 3;

pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub labels: PathBuf,
    pub spec: PathBuf,
    pub fixtures: PathBuf,
    pub images: PathBuf,
    pub label_embeddings: PathBuf,
    pub manifest: PathBuf,
}

impl Corpus {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn listed(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .map(|s| s.trim().to_string())
        .collect()
}

/// A stand-in chat model that answers every template in the expected format.
pub fn scripted_model() -> ScriptedProvider {
    ScriptedProvider::new("scripted", |req: &ProviderRequest| {
        Ok(match req.template.as_str() {
            "initial" => {
                let class = req
                    .prompt
                    .split("distinguishing a ")
                    .nth(1)
                    .and_then(|r| r.split(" in a photo").next())
                    .unwrap_or("thing")
                    .to_string();
                format!("- {class} overall shape\n- {class} typical colors\n")
            }
            "summary" => "They share a common silhouette.".to_string(),
            _ => listed(&req.prompt)
                .iter()
                .map(|c| format!("### {c}\n- {c} distinctive detail\n- {c} telltale texture\n"))
                .collect(),
        })
    })
}

pub fn synthetic_spec() -> SyntheticSpec {
    SyntheticSpec {
        dim: 12,
        epsilon: 0.2,
        image_epsilon: Some(1.1),
        layout: Default::default(),
        centers: CLASSES
            .iter()
            .map(|c| CenterSpec {
                name: c.to_string(),
                keywords: vec![c.to_string()],
                direction: None,
            })
            .collect(),
    }
}

pub fn build_config() -> BuildConfig {
    BuildConfig {
        group_ratio: GROUP_RATIO,
        kmeans: KMeansConfig {
            seed: SEED,
            ..KMeansConfig::default()
        },
        ..BuildConfig::default()
    }
}

/// Records fixtures by building the tree once through the library, exactly
/// as the CLI will request it.
fn record_fixtures(dir: &Path, labels: &[String], embedder: &dyn EmbeddingProvider) {
    let gateway = Gateway::new(
        Arc::new(scripted_model()),
        ResponseCache::open(dir).unwrap(),
        TemplateSet::default(),
        GatewaySettings::default(),
    )
    .unwrap();
    let initial = tree::initial_descriptions(labels, &gateway, embedder).unwrap();
    tree::build_tree_with_report(labels, initial, &build_config(), &gateway, embedder).unwrap();
}

pub fn corpus() -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let labels: Vec<String> = CLASSES.iter().map(|c| c.to_string()).collect();
    write_canonical_json(&p("labels.json"), &labels).unwrap();
    write_canonical_json(&p("spec.json"), &synthetic_spec()).unwrap();

    let embedder = SyntheticProvider::new(SEED, synthetic_spec()).unwrap();
    std::fs::create_dir_all(p("fixtures")).unwrap();
    record_fixtures(&p("fixtures"), &labels, &embedder);

    let mut images = Vec::new();
    let mut items = Vec::new();
    for c in CLASSES {
        for k in 0..8 {
            let id = format!("{c}_{k}");
            images.push((id.clone(), embedder.embed_image_ref(&id).unwrap()));
            items.push(ManifestItem {
                image_id: id,
                true_class: c.to_string(),
            });
        }
    }
    write_embeddings(&p("images.bin"), 12, &images).unwrap();
    let prompts: Vec<String> = labels
        .iter()
        .map(|c| format!("a photo of a {c}."))
        .collect();
    let label_vecs: Vec<_> = labels
        .iter()
        .cloned()
        .zip(embedder.embed_text(&prompts).unwrap())
        .collect();
    write_embeddings(&p("labels.bin"), 12, &label_vecs).unwrap();
    DatasetManifest {
        name: "toy".into(),
        class_ids: labels.clone(),
        items,
    }
    .save(&p("manifest.json"))
    .unwrap();

    Corpus {
        labels: p("labels.json"),
        spec: p("spec.json"),
        fixtures: p("fixtures"),
        images: p("images.bin"),
        label_embeddings: p("labels.bin"),
        manifest: p("manifest.json"),
        dir,
    }
}

pub fn hiertree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiertree"))
        .args(args)
        .env_remove("HIERTREE_CACHE_DIR")
        .env_remove("HIERTREE_API_URL")
        .env_remove("HIERTREE_API_KEY")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs build-tree against the corpus fixtures, writing `out`.
pub fn build_tree(c: &Corpus, out: &Path) -> Output {
    let ratio = GROUP_RATIO.to_string();
    let seed = SEED.to_string();
    hiertree(&[
        "build-tree",
        "--labels",
        s(&c.labels),
        "--out",
        s(out),
        "--provider",
        "replay",
        "--fixtures",
        s(&c.fixtures),
        "--embedder",
        "synthetic",
        "--embedder-spec",
        s(&c.spec),
        "--group-ratio",
        &ratio,
        "--seed",
        &seed,
    ])
}

pub fn label_map(c: &Corpus) -> BTreeMap<String, hiertree_core::embedding::UnitVector> {
    hiertree_core::data::load_embeddings(&c.label_embeddings).unwrap()
}
