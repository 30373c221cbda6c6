//! Fixture helpers shared by the core integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use hiertree_core::data::{
    CenterSpec, DatasetManifest, EmbeddingProvider, ManifestItem, SyntheticSpec,
};
use hiertree_core::embedding::UnitVector;
use hiertree_core::gateway::{
    Gateway, GatewaySettings, ProviderRequest, ReplayProvider, ResponseCache, ScriptedProvider,
    TemplateSet,
};
use hiertree_core::tree::{self, BuildConfig, KnowledgeTree};

fn listed(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .map(|s| s.trim().to_string())
        .collect()
}

/// Stand-in chat model. Every descriptor names its class, so a keyword-routed
/// synthetic embedder places it next to that class.
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

pub fn scripted_gateway(cache: ResponseCache) -> Gateway {
    Gateway::new(
        Arc::new(scripted_model()),
        cache,
        TemplateSet::default(),
        GatewaySettings::default(),
    )
    .unwrap()
}

pub fn replay_gateway(fixtures: &Path) -> Gateway {
    Gateway::new(
        Arc::new(ReplayProvider::open(fixtures).unwrap()),
        ResponseCache::in_memory(),
        TemplateSet::default(),
        GatewaySettings::default(),
    )
    .unwrap()
}

/// Initial descriptions followed by the tree build.
pub fn build(
    classes: &[String],
    cfg: &BuildConfig,
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
) -> KnowledgeTree {
    let initial = tree::initial_descriptions(classes, gateway, embedder).unwrap();
    tree::build_tree_with_report(classes, initial, cfg, gateway, embedder)
        .unwrap()
        .0
}

/// Runs the scripted model once through a disk cache so the directory can
/// later back a replay provider.
pub fn record(dir: &Path, classes: &[String], cfg: &BuildConfig, embedder: &dyn EmbeddingProvider) {
    let gateway = scripted_gateway(ResponseCache::open(dir).unwrap());
    build(classes, cfg, &gateway, embedder);
}

/// One synthetic center per class, routed by the class name.
pub fn keyword_spec(
    classes: &[String],
    dim: usize,
    epsilon: f64,
    image_epsilon: f64,
) -> SyntheticSpec {
    SyntheticSpec {
        dim,
        epsilon,
        image_epsilon: Some(image_epsilon),
        layout: Default::default(),
        centers: classes
            .iter()
            .map(|c| CenterSpec {
                name: c.clone(),
                keywords: vec![c.clone()],
                direction: None,
            })
            .collect(),
    }
}

pub struct Corpus {
    pub manifest: DatasetManifest,
    pub images: BTreeMap<String, UnitVector>,
    pub labels: BTreeMap<String, UnitVector>,
}

/// `per_class` images per class with ids `<class>_<k>`, and label embeddings
/// of "a photo of a <class>.".
pub fn corpus(classes: &[String], per_class: usize, embedder: &dyn EmbeddingProvider) -> Corpus {
    let mut images = BTreeMap::new();
    let mut items = Vec::new();
    for c in classes {
        for k in 0..per_class {
            let id = format!("{c}_{k}");
            images.insert(id.clone(), embedder.embed_image_ref(&id).unwrap());
            items.push(ManifestItem {
                image_id: id,
                true_class: c.clone(),
            });
        }
    }
    let prompts: Vec<String> = classes
        .iter()
        .map(|c| format!("a photo of a {c}."))
        .collect();
    let labels = classes
        .iter()
        .cloned()
        .zip(embedder.embed_text(&prompts).unwrap())
        .collect();
    Corpus {
        manifest: DatasetManifest {
            name: "synthetic".into(),
            class_ids: classes.to_vec(),
            items,
        },
        images,
        labels,
    }
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:02}")).collect()
}
