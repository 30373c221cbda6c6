//! Settings layered as flags > environment > config file > defaults.
//!
//! Environment variables are attached to their flags through clap, so by the
//! time a value reaches [`resolve`] it is either from the command line/env or
//! absent, and the file fills the gaps.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hiertree_core::clustering::KMeansConfig;
use hiertree_core::scoring::FusionConfig;
use hiertree_core::tree::{BuildConfig, LevelAggregation};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Pre-recorded responses only; never touches the network.
    Replay,
    /// Chat-completion endpoint at HIERTREE_API_URL.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// Keyword-routed synthetic encoder described by a JSON spec.
    Synthetic,
    /// Lookup table: an embedding file keyed by the exact text.
    File,
    /// Encoder service speaking the `{texts}` / `{vectors}` protocol.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Flatten,
}

impl From<Aggregation> for LevelAggregation {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::Mean => LevelAggregation::Mean,
            Aggregation::Flatten => LevelAggregation::Flatten,
        }
    }
}

/// One source of settings (config file, or flags plus env). Every key is
/// optional; unknown keys in a file are errors.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub gateway_jobs: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub api_url: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub provider: Option<ProviderKind>,
    pub fixtures: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub embedder: Option<EmbedderKind>,
    pub embedder_spec: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub embed_url: Option<String>,
    pub embed_dim: Option<usize>,
    pub group_ratio: Option<f64>,
    pub leaf_threshold: Option<usize>,
    pub direct_threshold: Option<usize>,
    pub max_depth: Option<usize>,
    pub kmeans_max_iters: Option<usize>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub max_depth_used: Option<usize>,
    pub aggregation: Option<Aggregation>,
}

impl Layer {
    /// `.json` files parse as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }
}

/// Fully resolved settings; echoed into output provenance. Holds no secrets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub gateway_jobs: usize,
    pub cache_dir: Option<PathBuf>,
    pub api_url: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub provider: ProviderKind,
    pub fixtures: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub embedder: Option<EmbedderKind>,
    pub embedder_spec: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    pub embed_url: Option<String>,
    pub embed_dim: Option<usize>,
    pub build: BuildConfig,
    pub fusion: FusionConfig,
    pub aggregation: Aggregation,
}

pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

pub fn resolve(flags: Layer, file: Layer) -> Result<Settings, CliError> {
    let build_defaults = BuildConfig::default();
    let fusion_defaults = FusionConfig::default();
    let seed = flags.seed.or(file.seed).unwrap_or(0);
    let build = BuildConfig {
        group_ratio: flags
            .group_ratio
            .or(file.group_ratio)
            .unwrap_or(build_defaults.group_ratio),
        leaf_threshold: flags
            .leaf_threshold
            .or(file.leaf_threshold)
            .unwrap_or(build_defaults.leaf_threshold),
        direct_threshold: flags
            .direct_threshold
            .or(file.direct_threshold)
            .unwrap_or(build_defaults.direct_threshold),
        max_depth: flags
            .max_depth
            .or(file.max_depth)
            .unwrap_or(build_defaults.max_depth),
        kmeans: KMeansConfig {
            seed,
            max_iters: flags
                .kmeans_max_iters
                .or(file.kmeans_max_iters)
                .unwrap_or(build_defaults.kmeans.max_iters),
            ..build_defaults.kmeans
        },
    };
    build
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    let fusion = FusionConfig {
        lambda: flags
            .lambda
            .or(file.lambda)
            .unwrap_or(fusion_defaults.lambda),
        tau: flags.tau.or(file.tau).unwrap_or(fusion_defaults.tau),
        max_depth_used: flags.max_depth_used.or(file.max_depth_used),
    };
    fusion
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    let jobs = flags.jobs.or(file.jobs);
    if jobs == Some(0) {
        return Err(CliError::config("--jobs must be at least 1"));
    }
    let gateway_jobs = flags
        .gateway_jobs
        .or(file.gateway_jobs)
        .or(jobs)
        .unwrap_or(4);
    if gateway_jobs == 0 {
        return Err(CliError::config("gateway_jobs must be at least 1"));
    }
    Ok(Settings {
        seed,
        jobs,
        gateway_jobs,
        cache_dir: flags.cache_dir.or(file.cache_dir),
        api_url: flags.api_url.or(file.api_url),
        model: flags
            .model
            .or(file.model)
            .unwrap_or_else(|| DEFAULT_MODEL.to_string()),
        temperature: flags.temperature.or(file.temperature).unwrap_or(0.0),
        max_tokens: flags.max_tokens.or(file.max_tokens).unwrap_or(1024),
        provider: flags
            .provider
            .or(file.provider)
            .unwrap_or(ProviderKind::Replay),
        fixtures: flags.fixtures.or(file.fixtures),
        templates: flags.templates.or(file.templates),
        embedder: flags.embedder.or(file.embedder),
        embedder_spec: flags.embedder_spec.or(file.embedder_spec),
        text_embeddings: flags.text_embeddings.or(file.text_embeddings),
        embed_url: flags.embed_url.or(file.embed_url),
        embed_dim: flags.embed_dim.or(file.embed_dim),
        build,
        fusion,
        aggregation: flags
            .aggregation
            .or(file.aggregation)
            .unwrap_or(Aggregation::Mean),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = Layer {
            lambda: Some(0.5),
            tau: Some(0.02),
            seed: Some(9),
            ..Default::default()
        };
        let flags = Layer {
            lambda: Some(0.3),
            ..Default::default()
        };
        let s = resolve(flags, file).unwrap();
        assert_eq!(s.fusion.lambda, 0.3);
        assert_eq!(s.fusion.tau, 0.02);
        assert_eq!(s.seed, 9);
        assert_eq!(s.build.kmeans.seed, 9);
        assert_eq!(s.build.leaf_threshold, 2);
        assert_eq!(s.gateway_jobs, 4);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let flags = Layer {
            lambda: Some(2.0),
            ..Default::default()
        };
        assert_eq!(resolve(flags, Layer::default()).unwrap_err().code, 2);
    }

    #[test]
    fn toml_and_json_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "lambda = 0.7\nprovider = \"http\"\n").unwrap();
        let f = Layer::load(&t).unwrap();
        assert_eq!(f.lambda, Some(0.7));
        assert_eq!(f.provider, Some(ProviderKind::Http));
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"tau": 0.1}"#).unwrap();
        assert_eq!(Layer::load(&j).unwrap().tau, Some(0.1));
        std::fs::write(&j, r#"{"bogus": 1}"#).unwrap();
        assert_eq!(Layer::load(&j).unwrap_err().code, 2);
    }
}
