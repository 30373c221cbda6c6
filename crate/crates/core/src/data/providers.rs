//! Text and image encoders behind a common interface.
//!
//! Concrete neural encoders live outside this crate; what is here is a
//! seeded synthetic encoder for planted-structure experiments, a lookup over
//! precomputed embedding files, and a JSON-over-HTTP bridge to an encoder
//! service.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::digest::{framed_sha256_hex, framed_sha256_u64};
use crate::embedding::{RawVector, UnitVector, VectorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("response does not match the expected schema: {0}")]
    SchemaMismatch(String),
    #[error("expected {expected}-dimensional vectors, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("no embedding for {0:?}")]
    UnknownInput(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("embedding cache error: {0}")]
    Cache(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, texts: &[String]) -> Result<Vec<UnitVector>, EmbedError>;
    fn embed_image_ref(&self, image_id: &str) -> Result<UnitVector, EmbedError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterLayout {
    /// Center `i` is the basis vector `e_i`; centers are mutually orthogonal.
    #[default]
    Basis,
    /// Seeded random unit directions.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterSpec {
    pub name: String,
    /// Whole-word phrases that route an input to this center.
    pub keywords: Vec<String>,
    #[serde(default)]
    pub direction: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    /// Maximum angle (radians) between a text embedding and its center.
    pub epsilon: f64,
    /// Angular radius for image embeddings; defaults to `epsilon`.
    #[serde(default)]
    pub image_epsilon: Option<f64>,
    #[serde(default)]
    pub layout: CenterLayout,
    pub centers: Vec<CenterSpec>,
}

/// Deterministic encoder: inputs matching a center's keywords land within
/// `epsilon` radians of that center; everything else gets a seeded random
/// direction.
pub struct SyntheticProvider {
    seed: u64,
    spec: SyntheticSpec,
    directions: Vec<Vec<f64>>,
    keywords: Vec<Vec<String>>,
    id: String,
}

fn words(text: &str) -> String {
    let joined = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    format!(" {joined} ")
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn synthetic_provider(seed: u64, spec: SyntheticSpec) -> Result<SyntheticProvider, EmbedError> {
    SyntheticProvider::new(seed, spec)
}

impl SyntheticProvider {
    pub fn new(seed: u64, spec: SyntheticSpec) -> Result<Self, EmbedError> {
        if spec.dim < 2 {
            return Err(EmbedError::InvalidSpec("dim must be at least 2".into()));
        }
        for eps in [Some(spec.epsilon), spec.image_epsilon]
            .into_iter()
            .flatten()
        {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(EmbedError::InvalidSpec(format!(
                    "epsilon must be >= 0, got {eps}"
                )));
            }
        }
        let mut directions = Vec::with_capacity(spec.centers.len());
        for (i, c) in spec.centers.iter().enumerate() {
            let dir = match (&c.direction, spec.layout) {
                (Some(d), _) => {
                    if d.len() != spec.dim {
                        return Err(EmbedError::InvalidSpec(format!(
                            "center {:?} has {} components, expected {}",
                            c.name,
                            d.len(),
                            spec.dim
                        )));
                    }
                    let u = RawVector::new(d.clone())
                        .and_then(|r| r.normalize())
                        .map_err(|e| {
                            EmbedError::InvalidSpec(format!("center {:?}: {e}", c.name))
                        })?;
                    u.as_slice().iter().map(|&x| f64::from(x)).collect()
                }
                (None, CenterLayout::Basis) => {
                    if i >= spec.dim {
                        return Err(EmbedError::InvalidSpec(format!(
                            "basis layout supports at most {} centers",
                            spec.dim
                        )));
                    }
                    let mut v = vec![0.0; spec.dim];
                    v[i] = 1.0;
                    v
                }
                (None, CenterLayout::Random) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(framed_sha256_u64([
                        &seed.to_le_bytes()[..],
                        b"center",
                        c.name.as_bytes(),
                    ]));
                    gaussian_unit(&mut rng, spec.dim)
                }
            };
            directions.push(dir);
        }
        let keywords = spec
            .centers
            .iter()
            .map(|c| {
                c.keywords
                    .iter()
                    .map(|k| words(k))
                    .filter(|k| k.trim() != "")
                    .collect()
            })
            .collect();
        Ok(Self {
            seed,
            id: format!("synthetic:{seed}"),
            spec,
            directions,
            keywords,
        })
    }

    /// Index of the center whose keywords occur most often in `text`; ties go
    /// to the earlier center.
    pub fn center_of(&self, text: &str) -> Option<usize> {
        let haystack = words(text);
        let mut best: Option<(usize, usize)> = None;
        for (i, kws) in self.keywords.iter().enumerate() {
            let hits: usize = kws
                .iter()
                .map(|k| haystack.matches(k.as_str()).count())
                .sum();
            if hits > 0 && best.is_none_or(|(_, h)| hits > h) {
                best = Some((i, hits));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn center_direction(&self, index: usize) -> UnitVector {
        let raw = RawVector::new(self.directions[index].iter().map(|&x| x as f32).collect())
            .expect("finite center");
        raw.normalize().expect("unit center")
    }

    fn embed(&self, domain: &str, input: &str, epsilon: f64) -> Result<UnitVector, EmbedError> {
        let mut rng = ChaCha8Rng::seed_from_u64(framed_sha256_u64([
            &self.seed.to_le_bytes()[..],
            domain.as_bytes(),
            input.as_bytes(),
        ]));
        let values: Vec<f64> = match self.center_of(input) {
            None => gaussian_unit(&mut rng, self.spec.dim),
            Some(ci) => {
                let c = &self.directions[ci];
                let theta = epsilon * rng.random::<f64>();
                // random direction orthogonal to the center
                let mut w = gaussian_unit(&mut rng, self.spec.dim);
                let proj: f64 = w.iter().zip(c).map(|(a, b)| a * b).sum();
                for (x, &ci) in w.iter_mut().zip(c) {
                    *x -= proj * ci;
                }
                let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if wn < 1e-12 || theta == 0.0 {
                    c.clone()
                } else {
                    c.iter()
                        .zip(&w)
                        .map(|(&a, &b)| theta.cos() * a + theta.sin() * b / wn)
                        .collect()
                }
            }
        };
        let raw = RawVector::new(values.into_iter().map(|x| x as f32).collect())?;
        Ok(raw.normalize()?)
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<UnitVector>, EmbedError> {
        texts
            .iter()
            .map(|t| self.embed("text", t, self.spec.epsilon))
            .collect()
    }

    fn embed_image_ref(&self, image_id: &str) -> Result<UnitVector, EmbedError> {
        self.embed(
            "image",
            image_id,
            self.spec.image_epsilon.unwrap_or(self.spec.epsilon),
        )
    }
}

/// Serves vectors from precomputed tables.
pub struct FileEmbeddingProvider {
    dim: usize,
    texts: BTreeMap<String, UnitVector>,
    images: BTreeMap<String, UnitVector>,
}

impl FileEmbeddingProvider {
    pub fn new(
        dim: usize,
        texts: BTreeMap<String, UnitVector>,
        images: BTreeMap<String, UnitVector>,
    ) -> Result<Self, EmbedError> {
        for v in texts.values().chain(images.values()) {
            if v.dim() != dim {
                return Err(EmbedError::DimMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
        }
        Ok(Self { dim, texts, images })
    }
}

impl EmbeddingProvider for FileEmbeddingProvider {
    fn provider_id(&self) -> &str {
        "file"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<UnitVector>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                self.texts
                    .get(t)
                    .cloned()
                    .ok_or_else(|| EmbedError::UnknownInput(t.clone()))
            })
            .collect()
    }

    fn embed_image_ref(&self, image_id: &str) -> Result<UnitVector, EmbedError> {
        self.images
            .get(image_id)
            .cloned()
            .ok_or_else(|| EmbedError::UnknownInput(image_id.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct CachedVector {
    kind: String,
    input: String,
    vector: Vec<f32>,
}

#[derive(Deserialize)]
struct VectorsResponse {
    vectors: Vec<Vec<f32>>,
}

/// Bridge to an encoder service.
///
/// Wire format: `POST {"texts": [...]}` or `POST {"image_id": "..."}`, answered
/// with `{"vectors": [[...], ...]}`. Vectors are normalized and cached on disk
/// keyed by a hash of the input.
pub struct HttpEmbeddingProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    dim: usize,
    cache_dir: Option<PathBuf>,
    network_calls: AtomicUsize,
}

pub fn http_embedding_provider(
    endpoint: impl Into<String>,
    dim: usize,
    cache_dir: Option<PathBuf>,
) -> Result<HttpEmbeddingProvider, EmbedError> {
    HttpEmbeddingProvider::new(endpoint, dim, cache_dir, Duration::from_secs(60))
}

impl HttpEmbeddingProvider {
    pub fn new(
        endpoint: impl Into<String>,
        dim: usize,
        cache_dir: Option<PathBuf>,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        if let Some(dir) = &cache_dir {
            fs::create_dir_all(dir).map_err(|e| EmbedError::Cache(e.to_string()))?;
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            dim,
            cache_dir,
            network_calls: AtomicUsize::new(0),
        })
    }

    /// Requests actually sent over the network.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn cache_path(&self, kind: &str, input: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(framed_sha256_hex([kind, input])))
    }

    fn cached(&self, kind: &str, input: &str) -> Option<UnitVector> {
        let path = self.cache_path(kind, input)?;
        let bytes = fs::read(path).ok()?;
        let entry: CachedVector = serde_json::from_slice(&bytes).ok()?;
        if entry.kind != kind || entry.input != input || entry.vector.len() != self.dim {
            return None;
        }
        UnitVector::from_unit_values(entry.vector, 1e-4).ok()
    }

    fn store(&self, kind: &str, input: &str, v: &UnitVector) -> Result<(), EmbedError> {
        let Some(path) = self.cache_path(kind, input) else {
            return Ok(());
        };
        let body = serde_json::to_vec(&CachedVector {
            kind: kind.into(),
            input: input.into(),
            vector: v.as_slice().to_vec(),
        })
        .map_err(|e| EmbedError::Cache(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| EmbedError::Cache(e.to_string()))
    }

    fn post(
        &self,
        body: serde_json::Value,
        expected: usize,
    ) -> Result<Vec<UnitVector>, EmbedError> {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let response = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(EmbedError::Transport(format!("HTTP {status}")));
        }
        let text = response
            .text()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let parsed: VectorsResponse =
            serde_json::from_str(&text).map_err(|e| EmbedError::SchemaMismatch(e.to_string()))?;
        if parsed.vectors.len() != expected {
            return Err(EmbedError::SchemaMismatch(format!(
                "expected {expected} vectors, got {}",
                parsed.vectors.len()
            )));
        }
        parsed
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimMismatch {
                        expected: self.dim,
                        found: v.len(),
                    });
                }
                Ok(RawVector::new(v)?.normalize()?)
            })
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn provider_id(&self) -> &str {
        &self.endpoint
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<UnitVector>, EmbedError> {
        let mut out: Vec<Option<UnitVector>> =
            texts.iter().map(|t| self.cached("text", t)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<&String> = missing.iter().map(|&i| &texts[i]).collect();
            let vectors = self.post(json!({ "texts": batch }), batch.len())?;
            for (&i, v) in missing.iter().zip(vectors) {
                self.store("text", &texts[i], &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn embed_image_ref(&self, image_id: &str) -> Result<UnitVector, EmbedError> {
        if let Some(v) = self.cached("image", image_id) {
            return Ok(v);
        }
        let v = self
            .post(json!({ "image_id": image_id }), 1)?
            .pop()
            .expect("one vector");
        self.store("image", image_id, &v)?;
        Ok(v)
    }
}
