//! Knowledge-tree construction.
//!
//! Classes are clustered on their current embeddings. Each group is then
//! handled by size:
//!
//! - one class: kept as a leaf, no new descriptions;
//! - more than `direct_threshold`: summarize the group, compare its members
//!   against the summary, embed the new descriptions and cluster again;
//! - otherwise: compare the members directly. Groups larger than
//!   `leaf_threshold` get one more split into `ceil(size / l)` subgroups,
//!   each compared directly, and stop there.
//!
//! A class whose every group was a singleton keeps its initial-description
//! embedding as its only description row.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{choose_k, kmeans, ClusterError, KMeansConfig};
use crate::data::{EmbedError, EmbeddingProvider};
use crate::digest::framed_sha256_u64;
use crate::embedding::{mean, UnitVector, VectorError};
use crate::gateway::{DescriptionSet, Gateway, GatewayError, INITIAL_NODE_ID};
use crate::scoring::{ClassDescriptionMatrix, LevelDescriptions};

pub const ROOT_ID: &str = "root";
/// Stand-in text for a fallback level when no initial lines were recorded.
pub const NO_INITIAL_LINES: &str = "(initial embedding)";

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),
    #[error("duplicate or empty class id {0:?}")]
    BadClassId(String),
    #[error("no initial embedding for class {0:?}")]
    MissingEmbedding(String),
    #[error("class {class:?} has dim {found}, expected {expected}")]
    DimensionMismatch {
        class: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("node {0}: no descriptions to embed")]
    NoDescriptions(String),
    #[error("node {node_id}: {source}")]
    Gateway {
        node_id: String,
        source: GatewayError,
    },
    #[error("node {node_id}: {source}")]
    Embedding { node_id: String, source: EmbedError },
    #[error("node {node_id}: {source}")]
    Cluster {
        node_id: String,
        source: ClusterError,
    },
    #[error("node {node_id}: {source}")]
    Vector {
        node_id: String,
        source: VectorError,
    },
    #[error("malformed tree: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    /// Clusters per class when choosing k.
    pub group_ratio: f64,
    /// `l`: largest group compared directly without a further split.
    pub leaf_threshold: usize,
    /// `thres`: groups above this size are summarized and split again.
    pub direct_threshold: usize,
    pub max_depth: usize,
    /// Template for every split; `k` is overwritten and the seed mixed with the node id.
    pub kmeans: KMeansConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            group_ratio: 0.05,
            leaf_threshold: 2,
            direct_threshold: 10,
            max_depth: 6,
            kmeans: KMeansConfig::default(),
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::InvalidConfig(m));
        if !(self.group_ratio > 0.0 && self.group_ratio <= 1.0) {
            return bad(format!(
                "group_ratio must be in (0, 1], got {}",
                self.group_ratio
            ));
        }
        if self.leaf_threshold < 1 {
            return bad("leaf_threshold must be >= 1".into());
        }
        if self.direct_threshold < self.leaf_threshold {
            return bad(format!(
                "direct_threshold ({}) must be >= leaf_threshold ({})",
                self.direct_threshold, self.leaf_threshold
            ));
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1".into());
        }
        if self.kmeans.max_iters < 1 || self.kmeans.tol.is_nan() || self.kmeans.tol < 0.0 {
            return bad("kmeans needs max_iters >= 1 and tol >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub node_id: String,
    pub members: Vec<String>,
    /// Empty at nodes where no comparison ran.
    pub descriptions: BTreeMap<String, DescriptionSet>,
    pub level_embedding: BTreeMap<String, UnitVector>,
    pub summary: Option<String>,
    pub children: Vec<TreeNode>,
    pub depth: usize,
}

impl TreeNode {
    fn bare(node_id: String, members: Vec<String>, depth: usize) -> Self {
        Self {
            node_id,
            members,
            descriptions: BTreeMap::new(),
            level_embedding: BTreeMap::new(),
            summary: None,
            children: Vec::new(),
            depth,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a TreeNode>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider_id: String,
    pub cache_digest: String,
}

/// Generic per-class descriptions and their mean embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDescriptions {
    pub lines: Vec<String>,
    pub embedding: UnitVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeTree {
    pub root: TreeNode,
    pub class_ids: Vec<String>,
    pub dim: usize,
    pub build_config: BuildConfig,
    pub provenance: Provenance,
    pub initial: BTreeMap<String, InitialDescriptions>,
}

/// How a node's description lines become matrix rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelAggregation {
    /// One row per node: the stored mean of the lines.
    #[default]
    Mean,
    /// One row per description line.
    Flatten,
}

impl KnowledgeTree {
    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        self.nodes().into_iter().filter(|n| n.is_leaf()).collect()
    }

    /// Leaf member lists, in tree order.
    pub fn leaf_partition(&self) -> Vec<Vec<String>> {
        self.leaves()
            .into_iter()
            .map(|n| n.members.clone())
            .collect()
    }

    /// Nodes from the root down to the leaf holding `class_id`.
    pub fn path(&self, class_id: &str) -> Result<Vec<&TreeNode>, TreeError> {
        if !self.root.members.iter().any(|m| m == class_id) {
            return Err(TreeError::UnknownClass(class_id.to_string()));
        }
        let mut out = vec![&self.root];
        let mut node = &self.root;
        while let Some(child) = node
            .children
            .iter()
            .find(|c| c.members.iter().any(|m| m == class_id))
        {
            out.push(child);
            node = child;
        }
        Ok(out)
    }

    fn fallback(&self, class_id: &str) -> Result<&InitialDescriptions, TreeError> {
        self.initial
            .get(class_id)
            .ok_or_else(|| TreeError::MissingEmbedding(class_id.to_string()))
    }

    /// Description lines per level, root to leaf, matching `path_descriptions`.
    pub fn path_levels(&self, class_id: &str) -> Result<Vec<LevelDescriptions>, TreeError> {
        let levels: Vec<LevelDescriptions> = self
            .path(class_id)?
            .into_iter()
            .filter_map(|n| {
                n.descriptions.get(class_id).map(|d| LevelDescriptions {
                    node_id: n.node_id.clone(),
                    lines: d.lines().to_vec(),
                })
            })
            .collect();
        if !levels.is_empty() {
            return Ok(levels);
        }
        let init = self.fallback(class_id)?;
        let lines = if init.lines.is_empty() {
            vec![NO_INITIAL_LINES.to_string()]
        } else {
            init.lines.clone()
        };
        Ok(vec![LevelDescriptions {
            node_id: INITIAL_NODE_ID.to_string(),
            lines,
        }])
    }

    /// Per-level embeddings of `class_id`, root to leaf.
    pub fn path_descriptions(&self, class_id: &str) -> Result<ClassDescriptionMatrix, TreeError> {
        let rows: Vec<UnitVector> = self
            .path(class_id)?
            .into_iter()
            .filter_map(|n| n.level_embedding.get(class_id).cloned())
            .collect();
        let rows = if rows.is_empty() {
            vec![self.fallback(class_id)?.embedding.clone()]
        } else {
            rows
        };
        ClassDescriptionMatrix::new(class_id, rows).map_err(|e| TreeError::Invalid(e.to_string()))
    }

    /// Matrix plus the lines behind each row. `Flatten` embeds every line on
    /// its own and needs an embedder; singleton fallbacks stay a single row.
    pub fn class_matrix(
        &self,
        class_id: &str,
        aggregation: LevelAggregation,
        embedder: Option<&dyn EmbeddingProvider>,
    ) -> Result<(ClassDescriptionMatrix, Vec<LevelDescriptions>), TreeError> {
        let levels = self.path_levels(class_id)?;
        let matrix = self.path_descriptions(class_id)?;
        let fallback = levels.len() == 1 && levels[0].node_id == INITIAL_NODE_ID;
        if aggregation == LevelAggregation::Mean || fallback {
            return Ok((matrix, levels));
        }
        let embedder = embedder.ok_or_else(|| {
            TreeError::InvalidConfig("flattened levels need an embedding provider".into())
        })?;
        let mut rows = Vec::new();
        let mut flat = Vec::new();
        for level in levels {
            let vs = embedder
                .embed_text(&level.lines)
                .map_err(|source| TreeError::Embedding {
                    node_id: level.node_id.clone(),
                    source,
                })?;
            for (line, v) in level.lines.into_iter().zip(vs) {
                rows.push(v);
                flat.push(LevelDescriptions {
                    node_id: level.node_id.clone(),
                    lines: vec![line],
                });
            }
        }
        let matrix = ClassDescriptionMatrix::new(class_id, rows)
            .map_err(|e| TreeError::Invalid(e.to_string()))?;
        Ok((matrix, flat))
    }

    /// Largest number of description rows over all classes.
    pub fn height(&self) -> usize {
        self.class_ids
            .iter()
            .map(|c| self.path_levels(c).map(|l| l.len()).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Checks every structural invariant; run after loading.
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::Invalid(m));
        let mut seen = BTreeSet::new();
        for c in &self.class_ids {
            if c.trim().is_empty() || !seen.insert(c.as_str()) {
                return Err(TreeError::BadClassId(c.clone()));
            }
        }
        if self.class_ids.len() < 2 {
            return bad("a tree needs at least 2 classes".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        self.build_config.validate()?;
        if self.root.node_id != ROOT_ID || self.root.depth != 0 {
            return bad("root must be named \"root\" at depth 0".into());
        }
        if self.root.members != self.class_ids {
            return bad("root members differ from class_ids".into());
        }
        for c in &self.class_ids {
            match self.initial.get(c) {
                None => return Err(TreeError::MissingEmbedding(c.clone())),
                Some(i) if i.embedding.dim() != self.dim => {
                    return Err(TreeError::DimensionMismatch {
                        class: c.clone(),
                        expected: self.dim,
                        found: i.embedding.dim(),
                    })
                }
                _ => {}
            }
        }
        if self.initial.len() != self.class_ids.len() {
            return bad("initial descriptions for classes outside the tree".into());
        }
        self.validate_node(&self.root)
    }

    fn validate_node(&self, node: &TreeNode) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::Invalid(format!("node {}: {m}", node.node_id)));
        if node.members.is_empty() {
            return bad("no members".into());
        }
        if !node.descriptions.is_empty() {
            let keys: Vec<&String> = node.descriptions.keys().collect();
            let mut members: Vec<&String> = node.members.iter().collect();
            members.sort();
            if keys != members {
                return bad("descriptions are not keyed by the members".into());
            }
            if node
                .descriptions
                .iter()
                .any(|(c, d)| &d.class_id != c || d.node_id != node.node_id)
            {
                return bad("description set labelled with the wrong class or node".into());
            }
        }
        if !node.level_embedding.keys().eq(node.descriptions.keys()) {
            return bad("level embeddings do not match descriptions".into());
        }
        if let Some(v) = node.level_embedding.values().find(|v| v.dim() != self.dim) {
            return bad(format!("level embedding of dim {}", v.dim()));
        }
        if node.children.is_empty() {
            return Ok(());
        }
        if node.children.len() == 1 {
            return bad("single child holding every member".into());
        }
        let mut covered: Vec<&String> = Vec::new();
        for (i, child) in node.children.iter().enumerate() {
            if child.node_id != format!("{}/{i}", node.node_id) {
                return bad(format!("child {i} is named {:?}", child.node_id));
            }
            if child.depth != node.depth + 1 {
                return bad(format!("child {i} at depth {}", child.depth));
            }
            if child.depth > self.build_config.max_depth {
                return bad("exceeds max_depth".into());
            }
            covered.extend(&child.members);
            self.validate_node(child)?;
        }
        let mut expected: Vec<&String> = node.members.iter().collect();
        expected.sort();
        covered.sort();
        if covered != expected {
            return bad("children do not partition the members".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Summarize,
    Compare,
}

/// One gateway operation issued while building.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CallRecord {
    pub node_id: String,
    pub kind: CallKind,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    /// Sorted by node id, so independent of sibling completion order.
    pub calls: Vec<CallRecord>,
}

impl BuildReport {
    pub fn count(&self, kind: CallKind) -> usize {
        self.calls.iter().filter(|c| c.kind == kind).count()
    }
}

/// Mean of each line's embedding, for every description set on `node`.
pub fn embed_node_descriptions(
    mut node: TreeNode,
    embedder: &dyn EmbeddingProvider,
) -> Result<TreeNode, TreeError> {
    if node.descriptions.is_empty() {
        return Err(TreeError::NoDescriptions(node.node_id));
    }
    let mut out = BTreeMap::new();
    for (class, set) in &node.descriptions {
        let vs = embedder
            .embed_text(set.lines())
            .map_err(|source| TreeError::Embedding {
                node_id: node.node_id.clone(),
                source,
            })?;
        let m = mean(&vs).map_err(|source| TreeError::Vector {
            node_id: node.node_id.clone(),
            source,
        })?;
        out.insert(class.clone(), m);
    }
    node.level_embedding = out;
    Ok(node)
}

/// Asks the gateway for generic descriptions of every class and embeds them.
pub fn initial_descriptions(
    class_ids: &[String],
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, InitialDescriptions>, TreeError> {
    class_ids
        .par_iter()
        .map(|c| {
            let node_id = format!("{INITIAL_NODE_ID}:{c}");
            let set = gateway
                .initial_descriptions(c)
                .map_err(|source| TreeError::Gateway {
                    node_id: node_id.clone(),
                    source,
                })?;
            let vs = embedder
                .embed_text(set.lines())
                .map_err(|source| TreeError::Embedding {
                    node_id: node_id.clone(),
                    source,
                })?;
            let embedding = mean(&vs).map_err(|source| TreeError::Vector { node_id, source })?;
            Ok((
                c.clone(),
                InitialDescriptions {
                    lines: set.lines().to_vec(),
                    embedding,
                },
            ))
        })
        .collect()
}

/// Builds from bare initial embeddings; singleton fallbacks carry no lines.
pub fn build_tree(
    class_ids: &[String],
    initial_embeddings: &BTreeMap<String, UnitVector>,
    cfg: &BuildConfig,
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
) -> Result<KnowledgeTree, TreeError> {
    let initial = class_ids
        .iter()
        .map(|c| {
            let embedding = initial_embeddings
                .get(c)
                .cloned()
                .ok_or_else(|| TreeError::MissingEmbedding(c.clone()))?;
            Ok((
                c.clone(),
                InitialDescriptions {
                    lines: Vec::new(),
                    embedding,
                },
            ))
        })
        .collect::<Result<_, TreeError>>()?;
    build_tree_with_report(class_ids, initial, cfg, gateway, embedder).map(|(t, _)| t)
}

pub fn build_tree_with_report(
    class_ids: &[String],
    initial: BTreeMap<String, InitialDescriptions>,
    cfg: &BuildConfig,
    gateway: &Gateway,
    embedder: &dyn EmbeddingProvider,
) -> Result<(KnowledgeTree, BuildReport), TreeError> {
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    for c in class_ids {
        if c.trim().is_empty() || !seen.insert(c.as_str()) {
            return Err(TreeError::BadClassId(c.clone()));
        }
    }
    if class_ids.len() < 2 {
        return Err(TreeError::DegenerateClustering(format!(
            "need at least 2 classes, got {}",
            class_ids.len()
        )));
    }
    let mut dim = None;
    for c in class_ids {
        let v = &initial
            .get(c)
            .ok_or_else(|| TreeError::MissingEmbedding(c.clone()))?
            .embedding;
        let expected = *dim.get_or_insert(v.dim());
        if v.dim() != expected {
            return Err(TreeError::DimensionMismatch {
                class: c.clone(),
                expected,
                found: v.dim(),
            });
        }
    }
    let dim = dim.expect("at least two classes");
    if embedder.dim() != dim {
        return Err(TreeError::DimensionMismatch {
            class: format!("<embedder {}>", embedder.provider_id()),
            expected: dim,
            found: embedder.dim(),
        });
    }
    if initial.len() != class_ids.len() {
        return Err(TreeError::InvalidConfig(
            "initial descriptions given for classes outside the class list".into(),
        ));
    }

    let builder = Builder {
        cfg,
        gateway,
        embedder,
        calls: Mutex::new(Vec::new()),
    };
    let embeddings: BTreeMap<String, UnitVector> = initial
        .iter()
        .map(|(c, i)| (c.clone(), i.embedding.clone()))
        .collect();
    let members = class_ids.to_vec();
    let k = choose_k(members.len(), cfg.group_ratio);
    let root = if k == 1 {
        // The whole class set is a single group.
        builder.grow(ROOT_ID.to_string(), 0, members, Mode::Full)?
    } else {
        let mut root = TreeNode::bare(ROOT_ID.to_string(), members, 0);
        root.children = builder.split(&root, &embeddings, k, Mode::Full)?;
        root
    };

    let mut calls = builder.calls.into_inner().expect("calls lock");
    calls.sort();
    let tree = KnowledgeTree {
        root,
        class_ids: class_ids.to_vec(),
        dim,
        build_config: *cfg,
        provenance: Provenance {
            provider_id: gateway.provider_id().to_string(),
            cache_digest: gateway.cache_digest(),
        },
        initial,
    };
    debug_assert!(tree.validate().is_ok(), "{:?}", tree.validate());
    Ok((tree, BuildReport { calls }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    /// Compare directly and never split again.
    Final,
}

struct Builder<'a> {
    cfg: &'a BuildConfig,
    gateway: &'a Gateway,
    embedder: &'a dyn EmbeddingProvider,
    calls: Mutex<Vec<CallRecord>>,
}

impl Builder<'_> {
    fn record(&self, node: &TreeNode, kind: CallKind) {
        self.calls.lock().expect("calls lock").push(CallRecord {
            node_id: node.node_id.clone(),
            kind,
            members: node.members.clone(),
        });
    }

    fn gateway_err(node: &TreeNode) -> impl FnOnce(GatewayError) -> TreeError + '_ {
        move |source| TreeError::Gateway {
            node_id: node.node_id.clone(),
            source,
        }
    }

    /// Clusters `parent`'s members into `k` groups and grows each one.
    fn split(
        &self,
        parent: &TreeNode,
        embeddings: &BTreeMap<String, UnitVector>,
        k: usize,
        mode: Mode,
    ) -> Result<Vec<TreeNode>, TreeError> {
        let cluster_err = |source| TreeError::Cluster {
            node_id: parent.node_id.clone(),
            source,
        };
        let points: Vec<UnitVector> = parent
            .members
            .iter()
            .map(|m| {
                embeddings
                    .get(m)
                    .cloned()
                    .ok_or_else(|| TreeError::MissingEmbedding(m.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut km = self.cfg.kmeans;
        km.k = k;
        km.seed = framed_sha256_u64([&km.seed.to_le_bytes()[..], parent.node_id.as_bytes()]);
        let clustering = kmeans(&points, &km).map_err(cluster_err)?;
        let groups = clustering.partition();
        if groups.len() < 2 {
            return Err(TreeError::DegenerateClustering(format!(
                "node {}: k-means produced {} group(s)",
                parent.node_id,
                groups.len()
            )));
        }
        groups
            .into_par_iter()
            .enumerate()
            .map(|(i, group)| {
                let members = group.iter().map(|&j| parent.members[j].clone()).collect();
                self.grow(
                    format!("{}/{i}", parent.node_id),
                    parent.depth + 1,
                    members,
                    mode,
                )
            })
            .collect()
    }

    fn grow(
        &self,
        node_id: String,
        depth: usize,
        members: Vec<String>,
        mode: Mode,
    ) -> Result<TreeNode, TreeError> {
        let mut node = TreeNode::bare(node_id, members, depth);
        let size = node.members.len();
        if size == 1 {
            return Ok(node);
        }
        let large = size > self.cfg.direct_threshold && mode == Mode::Full;
        if large {
            self.record(&node, CallKind::Summarize);
            let summary = self
                .gateway
                .summarize_group(&node.members)
                .map_err(Self::gateway_err(&node))?;
            node.summary = Some(summary);
        }
        self.record(&node, CallKind::Compare);
        node.descriptions = self
            .gateway
            .compare_group(&node.members, node.summary.as_deref(), &node.node_id)
            .map_err(Self::gateway_err(&node))?;
        let mut node = embed_node_descriptions(node, self.embedder)?;

        if mode == Mode::Final || depth >= self.cfg.max_depth {
            return Ok(node);
        }
        let (k, child_mode) = if large {
            let k = choose_k(size, self.cfg.group_ratio).max(2).min(size);
            (k, Mode::Full)
        } else if size > self.cfg.leaf_threshold {
            (size.div_ceil(self.cfg.leaf_threshold), Mode::Final)
        } else {
            return Ok(node);
        };
        node.children = self.split(&node, &node.level_embedding, k, child_mode)?;
        Ok(node)
    }
}
