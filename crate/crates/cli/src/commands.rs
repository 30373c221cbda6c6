use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use hiertree_core::data::{
    http_embedding_provider, load_embeddings, load_embeddings_with_dim, load_labels, read_json,
    read_tree, to_canonical_json, write_canonical_json, write_embeddings, write_tree,
    DatasetManifest, EmbeddingProvider, FileEmbeddingProvider, SyntheticProvider, SyntheticSpec,
};
use hiertree_core::embedding::UnitVector;
use hiertree_core::eval::{
    class_models, confusion_diff, evaluate as eval_baseline, evaluate_with_models,
    render_sweep_text, sweep as run_sweep, write_confusion_csv, write_eval_json, write_sweep_csv,
    ConfusionDiff, EvalResult, SweepParam, SweepSpec,
};
use hiertree_core::gateway::{
    clear_dir, dir_stats, Gateway, GatewaySettings, HttpChatProvider, ReplayProvider,
    ResponseCache, TemplateSet, API_KEY_ENV,
};
use hiertree_core::scoring::{
    classify as fused_classify, classify_baseline, explain as explain_trace, ClassModel,
    ExplanationReport,
};
use hiertree_core::tree::{
    self, KnowledgeTree, LevelAggregation, Provenance as TreeProvenance, TreeError,
};

use crate::config::{EmbedderKind, ProviderKind, Settings};
use crate::error::CliError;

const TOOL: &str = "hiertree";

fn label_prompt(class: &str) -> String {
    format!("a photo of a {class}.")
}

/// Echoed into every report.
#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    settings: &'a Settings,
    tree: Option<&'a TreeProvenance>,
    inputs: BTreeMap<&'static str, String>,
}

impl<'a> Provenance<'a> {
    fn new(
        settings: &'a Settings,
        tree: Option<&'a KnowledgeTree>,
        inputs: &[(&'static str, &Path)],
    ) -> Self {
        Self {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            settings,
            tree: tree.map(|t| &t.provenance),
            inputs: inputs
                .iter()
                .map(|(k, p)| (*k, p.display().to_string()))
                .collect(),
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// `.json` as JSON, anything else as TOML.
fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::config(format!("invalid {}: {e}", path.display())))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn make_gateway(s: &Settings) -> Result<Gateway, CliError> {
    let templates = match &s.templates {
        Some(p) => read_structured::<TemplateSet>(p)?,
        None => TemplateSet::default(),
    };
    let settings = GatewaySettings {
        temperature: s.temperature,
        max_tokens: s.max_tokens,
        max_in_flight: s.gateway_jobs,
        ..GatewaySettings::default()
    };
    let gateway = match s.provider {
        ProviderKind::Replay => {
            let dir = s
                .fixtures
                .as_ref()
                .ok_or_else(|| CliError::config("--provider replay needs --fixtures <DIR>"))?;
            let provider = ReplayProvider::open(dir)
                .map_err(|e| CliError::config(format!("fixtures {}: {e}", dir.display())))?;
            Gateway::new(
                Arc::new(provider),
                ResponseCache::in_memory(),
                templates,
                settings,
            )?
        }
        ProviderKind::Http => {
            let url = s.api_url.clone().ok_or_else(|| {
                CliError::config("--provider http needs --api-url or HIERTREE_API_URL")
            })?;
            let provider = HttpChatProvider::new(
                url,
                std::env::var(API_KEY_ENV).ok(),
                &s.model,
                Duration::from_secs(120),
            )
            .map_err(|e| CliError::config(e.to_string()))?;
            let cache = match &s.cache_dir {
                Some(dir) => ResponseCache::open(dir)
                    .map_err(|e| CliError::config(format!("cache dir {}: {e}", dir.display())))?,
                None => ResponseCache::in_memory(),
            };
            Gateway::new(Arc::new(provider), cache, templates, settings)?
        }
    };
    Ok(gateway)
}

fn make_embedder(s: &Settings) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    let kind = s
        .embedder
        .ok_or_else(|| CliError::config("a text encoder is required: pass --embedder"))?;
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| {
            CliError::config(format!("--embedder {kind:?} needs {flag}").to_lowercase())
        })
    };
    Ok(match kind {
        EmbedderKind::Synthetic => {
            let spec: SyntheticSpec = read_json(&need(&s.embedder_spec, "--embedder-spec")?)?;
            Box::new(SyntheticProvider::new(s.seed, spec)?)
        }
        EmbedderKind::File => {
            let (dim, texts) =
                load_embeddings_with_dim(&need(&s.text_embeddings, "--text-embeddings")?)?;
            Box::new(FileEmbeddingProvider::new(dim, texts, BTreeMap::new())?)
        }
        EmbedderKind::Http => {
            let url = s
                .embed_url
                .clone()
                .ok_or_else(|| CliError::config("--embedder http needs --embed-url"))?;
            let dim = s
                .embed_dim
                .ok_or_else(|| CliError::config("--embedder http needs --embed-dim"))?;
            let cache = s.cache_dir.as_ref().map(|d| d.join("embeddings"));
            Box::new(http_embedding_provider(url, dim, cache)?)
        }
    })
}

fn optional_embedder(s: &Settings) -> Result<Option<Box<dyn EmbeddingProvider>>, CliError> {
    match (s.embedder, LevelAggregation::from(s.aggregation)) {
        (Some(_), _) => make_embedder(s).map(Some),
        (None, LevelAggregation::Flatten) => {
            Err(CliError::config("--aggregation flatten needs --embedder"))
        }
        (None, LevelAggregation::Mean) => Ok(None),
    }
}

#[derive(Serialize)]
struct BuildLog<'a> {
    provenance: Provenance<'a>,
    report: &'a tree::BuildReport,
    provider_calls: usize,
    cache_hits: usize,
    finished_at: u64,
}

pub fn build_tree(
    s: &Settings,
    labels_path: &Path,
    out: &Path,
    label_out: Option<&Path>,
) -> Result<(), CliError> {
    let labels = load_labels(labels_path)?;
    if labels.len() < 2 {
        return Err(TreeError::DegenerateClustering(format!(
            "{} lists {} class(es); at least 2 are needed to compare anything",
            labels_path.display(),
            labels.len()
        ))
        .into());
    }
    let gateway = make_gateway(s)?;
    let embedder = make_embedder(s)?;
    let initial = tree::initial_descriptions(&labels, &gateway, embedder.as_ref())?;
    let (tree, report) =
        tree::build_tree_with_report(&labels, initial, &s.build, &gateway, embedder.as_ref())?;
    write_tree(out, &tree)?;

    let mut per_node: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for call in &report.calls {
        let e = per_node.entry(call.node_id.as_str()).or_default();
        match call.kind {
            tree::CallKind::Summarize => e.0 += 1,
            tree::CallKind::Compare => e.1 += 1,
        }
    }
    for (node, (summ, comp)) in &per_node {
        log::info!("node {node}: {summ} summarize, {comp} compare");
    }
    let stats = gateway.stats();
    log::info!(
        "tree with {} leaves written to {}; {} provider calls, {} cache hits",
        tree.leaves().len(),
        out.display(),
        stats.provider_calls,
        stats.cache_hits
    );
    let log = BuildLog {
        provenance: Provenance::new(s, Some(&tree), &[("labels", labels_path)]),
        report: &report,
        provider_calls: stats.provider_calls,
        cache_hits: stats.cache_hits,
        finished_at: unix_now(),
    };
    write_canonical_json(&sidecar(out, ".build.json"), &log)?;

    if let Some(path) = label_out {
        let prompts: Vec<String> = labels.iter().map(|c| label_prompt(c)).collect();
        let vectors = embedder.embed_text(&prompts)?;
        let entries: Vec<(String, UnitVector)> = labels.iter().cloned().zip(vectors).collect();
        write_embeddings(path, embedder.dim(), &entries)?;
    }
    Ok(())
}

fn load_tree(path: &Path) -> Result<KnowledgeTree, CliError> {
    read_tree(path).map_err(|e| CliError::config(format!("tree {}: {e}", path.display())))
}

fn label_list(
    labels: &BTreeMap<String, UnitVector>,
    classes: &[String],
) -> Result<Vec<(String, UnitVector)>, CliError> {
    classes
        .iter()
        .map(|c| {
            labels
                .get(c)
                .map(|v| (c.clone(), v.clone()))
                .ok_or_else(|| CliError::mismatch(format!("no label embedding for class {c:?}")))
        })
        .collect()
}

fn models_for(
    s: &Settings,
    tree: &KnowledgeTree,
    labels: &BTreeMap<String, UnitVector>,
    embedder: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<ClassModel>, CliError> {
    label_list(labels, &tree.class_ids)?
        .into_iter()
        .map(|(c, label)| {
            let (matrix, _) = tree.class_matrix(&c, s.aggregation.into(), embedder)?;
            Ok(ClassModel { label, matrix })
        })
        .collect()
}

#[derive(Serialize)]
struct PredictionRow {
    image_id: String,
    predicted: String,
}

pub fn classify(
    s: &Settings,
    images_path: &Path,
    labels_path: &Path,
    tree_path: Option<&Path>,
    baseline: bool,
    out: &Path,
) -> Result<(), CliError> {
    let images = load_embeddings(images_path)?;
    let labels = load_embeddings(labels_path)?;
    let tree = tree_path.map(load_tree).transpose()?;
    let rows: Vec<PredictionRow> = if baseline {
        let classes: Vec<String> = match &tree {
            Some(t) => t.class_ids.clone(),
            None => labels.keys().cloned().collect(),
        };
        let list = label_list(&labels, &classes)?;
        images
            .par_iter()
            .map(|(id, x)| {
                Ok(PredictionRow {
                    image_id: id.clone(),
                    predicted: classify_baseline(x, &list)?.0,
                })
            })
            .collect::<Result<_, CliError>>()?
    } else {
        let tree = tree
            .as_ref()
            .ok_or_else(|| CliError::config("classify needs --tree unless --baseline is given"))?;
        let embedder = optional_embedder(s)?;
        let models = models_for(s, tree, &labels, embedder.as_deref())?;
        images
            .par_iter()
            .map(|(id, x)| {
                Ok(PredictionRow {
                    image_id: id.clone(),
                    predicted: fused_classify(x, &models, &s.fusion)?.0,
                })
            })
            .collect::<Result<_, CliError>>()?
    };
    write_canonical_json(out, &rows)?;

    #[derive(Serialize)]
    struct ClassifyProvenance<'a> {
        method: &'static str,
        provenance: Provenance<'a>,
    }
    let mut inputs = vec![("images", images_path), ("label_embeddings", labels_path)];
    if let Some(p) = tree_path {
        inputs.push(("tree", p));
    }
    write_canonical_json(
        &sidecar(out, ".provenance.json"),
        &ClassifyProvenance {
            method: if baseline { "baseline" } else { "hierarchical" },
            provenance: Provenance::new(s, tree.as_ref(), &inputs),
        },
    )?;
    log::info!("{} predictions written to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    provenance: Provenance<'a>,
    baseline: &'a EvalResult,
    hierarchical: Option<&'a EvalResult>,
    diff: Option<&'a ConfusionDiff>,
}

pub fn evaluate(
    s: &Settings,
    manifest_path: &Path,
    images_path: &Path,
    labels_path: &Path,
    tree_path: Option<&Path>,
    out_dir: &Path,
    top_k: usize,
) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let images = load_embeddings(images_path)?;
    let labels = load_embeddings(labels_path)?;
    let tree = tree_path.map(load_tree).transpose()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", out_dir.display())))?;

    let baseline = eval_baseline(&manifest, &images, &labels, None, &s.fusion)?;
    let (hier, diff) = match &tree {
        None => (None, None),
        Some(tree) => {
            let embedder = optional_embedder(s)?;
            let aggregation = s.aggregation.into();
            let models = class_models(&manifest, &labels, tree, aggregation, embedder.as_deref())?;
            let mut r =
                evaluate_with_models(&manifest, &images, &labels, Some(&models), &s.fusion)?;
            r.config.build_config = Some(tree.build_config);
            r.config.aggregation = Some(aggregation);
            let d = confusion_diff(&baseline, &r, top_k)?;
            (Some(r), Some(d))
        }
    };

    let mut inputs = vec![
        ("manifest", manifest_path),
        ("images", images_path),
        ("label_embeddings", labels_path),
    ];
    if let Some(p) = tree_path {
        inputs.push(("tree", p));
    }
    let report = EvalReport {
        provenance: Provenance::new(s, tree.as_ref(), &inputs),
        baseline: &baseline,
        hierarchical: hier.as_ref(),
        diff: diff.as_ref(),
    };
    write_eval_json(&out_dir.join("eval.json"), &report)?;
    match &hier {
        Some(h) => {
            write_confusion_csv(&out_dir.join("confusion.csv"), h)?;
            write_confusion_csv(&out_dir.join("confusion_baseline.csv"), &baseline)?;
        }
        None => write_confusion_csv(&out_dir.join("confusion.csv"), &baseline)?,
    }

    print!("{}", baseline.render_text());
    if let (Some(h), Some(d)) = (&hier, &diff) {
        print!("{}", h.render_text());
        println!("accuracy change {:+.4}", h.accuracy - baseline.accuracy);
        for cell in &d.top {
            println!(
                "  {} -> {}: {} -> {} ({:+})",
                cell.true_class, cell.predicted, cell.before, cell.after, cell.delta
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn explain(
    s: &Settings,
    images_path: &Path,
    labels_path: &Path,
    tree_path: &Path,
    image_id: &str,
    top: usize,
    json: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let tree = load_tree(tree_path)?;
    let images = load_embeddings(images_path)?;
    let labels = load_embeddings(labels_path)?;
    let x = images.get(image_id).ok_or_else(|| {
        CliError::config(format!(
            "image {image_id:?} is not in {}",
            images_path.display()
        ))
    })?;
    let embedder = optional_embedder(s)?;
    let models = models_for(s, &tree, &labels, embedder.as_deref())?;
    let (predicted, traces) = fused_classify(x, &models, &s.fusion)?;

    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.sort_by(|&a, &b| {
        traces[b]
            .s
            .total_cmp(&traces[a].s)
            .then_with(|| traces[a].class_id.cmp(&traces[b].class_id))
    });
    let mut shown: Vec<usize> = order.iter().copied().take(top.max(1)).collect();
    if let Some(p) = order.iter().position(|&i| traces[i].class_id == predicted) {
        if !shown.contains(&order[p]) {
            shown.insert(0, order[p]);
        }
    }

    let mut explained = Vec::new();
    for i in shown {
        let trace = &traces[i];
        let (_, levels) =
            tree.class_matrix(&trace.class_id, s.aggregation.into(), embedder.as_deref())?;
        explained.push(explain_trace(trace, &levels[..trace.q.len()])?);
    }
    let report = ExplanationReport {
        image_id: image_id.to_string(),
        predicted,
        traces: explained,
    };
    let text = if json {
        to_canonical_json(&report)?
    } else {
        report.render_text()
    };
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::other(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(
    s: &Settings,
    param: SweepParam,
    values: Vec<f64>,
    manifest_path: &Path,
    images_path: &Path,
    labels_path: &Path,
    tree_path: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let images = load_embeddings(images_path)?;
    let labels = load_embeddings(labels_path)?;
    let tree = load_tree(tree_path)?;
    let spec = SweepSpec {
        parameter: param,
        values,
        fusion: s.fusion,
        build: s.build,
    };
    spec.validate()?;

    let rows = if param == SweepParam::GroupRatio {
        let gateway = make_gateway(s)?;
        let embedder = make_embedder(s)?;
        let rebuild = |cfg: &hiertree_core::tree::BuildConfig| {
            tree::build_tree_with_report(
                &tree.class_ids,
                tree.initial.clone(),
                cfg,
                &gateway,
                embedder.as_ref(),
            )
            .map(|(t, _)| t)
            .map_err(|e| e.to_string())
        };
        run_sweep(&spec, &manifest, &images, &labels, &tree, Some(&rebuild))?
    } else {
        run_sweep(&spec, &manifest, &images, &labels, &tree, None)?
    };
    write_sweep_csv(out, param, &rows)?;
    print!("{}", render_sweep_text(param, &rows));
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} sweep rows failed", rows.len());
    }
    Ok(())
}

fn cache_dir(s: &Settings) -> Result<&Path, CliError> {
    s.cache_dir.as_deref().ok_or_else(|| {
        CliError::config("no cache directory: pass --cache-dir or set HIERTREE_CACHE_DIR")
    })
}

pub fn cache_stats(s: &Settings) -> Result<(), CliError> {
    let dir = cache_dir(s)?;
    let stats = dir_stats(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    println!(
        "{}",
        serde_json::json!({"dir": dir.display().to_string(), "entries": stats.entries, "bytes": stats.bytes})
    );
    Ok(())
}

pub fn cache_clear(s: &Settings) -> Result<(), CliError> {
    let dir = cache_dir(s)?;
    let removed =
        clear_dir(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
    println!("removed {removed} cached responses from {}", dir.display());
    Ok(())
}
