//! Canonical tree JSON: sorted keys, embeddings as base64 little-endian f32.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{to_canonical_json, DataError, UNIT_TOLERANCE};
use crate::embedding::UnitVector;
use crate::gateway::DescriptionSet;
use crate::tree::{BuildConfig, InitialDescriptions, KnowledgeTree, Provenance, TreeNode};

pub const TREE_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    schema_version: u32,
    class_ids: Vec<String>,
    dim: usize,
    build_config: BuildConfig,
    provenance: Provenance,
    initial: BTreeMap<String, InitialDoc>,
    root: NodeDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialDoc {
    lines: Vec<String>,
    embedding: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    node_id: String,
    members: Vec<String>,
    summary: Option<String>,
    descriptions: BTreeMap<String, Vec<String>>,
    level_embedding: BTreeMap<String, String>,
    children: Vec<NodeDoc>,
}

fn encode_vector(v: &UnitVector) -> String {
    let bytes: Vec<u8> = v.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_vector(text: &str, what: &str) -> Result<UnitVector, DataError> {
    let bytes = B64
        .decode(text)
        .map_err(|e| DataError::Tree(format!("{what}: bad base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(DataError::Tree(format!(
            "{what}: {} bytes is not a whole f32 array",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    UnitVector::from_unit_values(values, UNIT_TOLERANCE).map_err(|source| DataError::Vector {
        id: what.to_string(),
        source,
    })
}

fn node_to_doc(node: &TreeNode) -> NodeDoc {
    NodeDoc {
        node_id: node.node_id.clone(),
        members: node.members.clone(),
        summary: node.summary.clone(),
        descriptions: node
            .descriptions
            .iter()
            .map(|(c, d)| (c.clone(), d.lines().to_vec()))
            .collect(),
        level_embedding: node
            .level_embedding
            .iter()
            .map(|(c, v)| (c.clone(), encode_vector(v)))
            .collect(),
        children: node.children.iter().map(node_to_doc).collect(),
    }
}

fn node_from_doc(doc: NodeDoc, depth: usize) -> Result<TreeNode, DataError> {
    let descriptions = doc
        .descriptions
        .into_iter()
        .map(|(c, lines)| {
            let set = DescriptionSet::new(c.clone(), doc.node_id.clone(), &lines)
                .map_err(|e| DataError::Tree(format!("node {}: {e}", doc.node_id)))?;
            if set.lines() != lines.as_slice() {
                return Err(DataError::Tree(format!(
                    "node {}: description lines for {c:?} are not normalized",
                    doc.node_id
                )));
            }
            Ok((c, set))
        })
        .collect::<Result<_, DataError>>()?;
    let level_embedding = doc
        .level_embedding
        .iter()
        .map(|(c, text)| {
            Ok((
                c.clone(),
                decode_vector(text, &format!("{}:{c}", doc.node_id))?,
            ))
        })
        .collect::<Result<_, DataError>>()?;
    let children = doc
        .children
        .into_iter()
        .map(|c| node_from_doc(c, depth + 1))
        .collect::<Result<_, _>>()?;
    Ok(TreeNode {
        node_id: doc.node_id,
        members: doc.members,
        descriptions,
        level_embedding,
        summary: doc.summary,
        children,
        depth,
    })
}

pub fn tree_to_json(tree: &KnowledgeTree) -> Result<String, DataError> {
    let doc = TreeDoc {
        schema_version: TREE_SCHEMA_VERSION,
        class_ids: tree.class_ids.clone(),
        dim: tree.dim,
        build_config: tree.build_config,
        provenance: tree.provenance.clone(),
        initial: tree
            .initial
            .iter()
            .map(|(c, i)| {
                (
                    c.clone(),
                    InitialDoc {
                        lines: i.lines.clone(),
                        embedding: encode_vector(&i.embedding),
                    },
                )
            })
            .collect(),
        root: node_to_doc(&tree.root),
    };
    to_canonical_json(&doc)
}

/// Parses and validates every tree invariant.
pub fn tree_from_json(text: &str) -> Result<KnowledgeTree, DataError> {
    let doc: TreeDoc = serde_json::from_str(text).map_err(|e| DataError::Json(e.to_string()))?;
    if doc.schema_version != TREE_SCHEMA_VERSION {
        return Err(DataError::Tree(format!(
            "schema_version {} is not supported (expected {TREE_SCHEMA_VERSION})",
            doc.schema_version
        )));
    }
    let initial = doc
        .initial
        .into_iter()
        .map(|(c, i)| {
            let embedding = decode_vector(&i.embedding, &format!("initial:{c}"))?;
            Ok((
                c,
                InitialDescriptions {
                    lines: i.lines,
                    embedding,
                },
            ))
        })
        .collect::<Result<_, DataError>>()?;
    let tree = KnowledgeTree {
        root: node_from_doc(doc.root, 0)?,
        class_ids: doc.class_ids,
        dim: doc.dim,
        build_config: doc.build_config,
        provenance: doc.provenance,
        initial,
    };
    tree.validate()
        .map_err(|e| DataError::Tree(e.to_string()))?;
    Ok(tree)
}

pub fn write_tree(path: &Path, tree: &KnowledgeTree) -> Result<(), DataError> {
    let text = tree_to_json(tree)?;
    fs::write(path, text).map_err(|e| DataError::io_at(path, e))
}

pub fn read_tree(path: &Path) -> Result<KnowledgeTree, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io_at(path, e))?;
    tree_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::RawVector;

    fn unit(values: &[f32]) -> UnitVector {
        RawVector::new(values.to_vec())
            .unwrap()
            .normalize()
            .unwrap()
    }

    fn sample_tree() -> KnowledgeTree {
        let set = |c: &str, node: &str, lines: &[&str]| {
            DescriptionSet::new(c, node, lines.iter().copied()).unwrap()
        };
        let leaf = TreeNode {
            node_id: "root/0".into(),
            members: vec!["b".into(), "a".into()],
            descriptions: [
                ("a".to_string(), set("a", "root/0", &["round", "red"])),
                ("b".to_string(), set("b", "root/0", &["long"])),
            ]
            .into(),
            level_embedding: [
                ("a".to_string(), unit(&[1.0, 2.0, 3.0])),
                ("b".to_string(), unit(&[0.3, -0.1, 0.7])),
            ]
            .into(),
            summary: None,
            children: vec![],
            depth: 1,
        };
        let single = TreeNode {
            node_id: "root/1".into(),
            members: vec!["c".into()],
            descriptions: BTreeMap::new(),
            level_embedding: BTreeMap::new(),
            summary: None,
            children: vec![],
            depth: 1,
        };
        let root = TreeNode {
            node_id: "root".into(),
            members: vec!["b".into(), "a".into(), "c".into()],
            descriptions: BTreeMap::new(),
            level_embedding: BTreeMap::new(),
            summary: None,
            children: vec![leaf, single],
            depth: 0,
        };
        let initial = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                (
                    c.to_string(),
                    InitialDescriptions {
                        lines: vec![format!("{c} thing")],
                        embedding: UnitVector::basis(3, i),
                    },
                )
            })
            .collect();
        KnowledgeTree {
            root,
            class_ids: vec!["b".into(), "a".into(), "c".into()],
            dim: 3,
            build_config: BuildConfig::default(),
            provenance: Provenance {
                provider_id: "test".into(),
                cache_digest: "abc".into(),
            },
            initial,
        }
    }

    #[test]
    fn serialize_is_a_fixed_point() {
        let tree = sample_tree();
        let once = tree_to_json(&tree).unwrap();
        let back = tree_from_json(&once).unwrap();
        assert_eq!(back, tree);
        assert_eq!(tree_to_json(&back).unwrap(), once);
    }

    #[test]
    fn keys_are_sorted() {
        let text = tree_to_json(&sample_tree()).unwrap();
        let pos = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("build_config") < pos("class_ids"));
        assert!(pos("class_ids") < pos("dim"));
        assert!(pos("provenance") < pos("root"));
        assert!(pos("root") < pos("schema_version"));
    }

    #[test]
    fn rejects_broken_partition() {
        let mut tree = sample_tree();
        tree.root.children[1].members = vec!["a".into()];
        let text = tree_to_json(&tree).unwrap();
        assert!(matches!(tree_from_json(&text), Err(DataError::Tree(_))));
    }

    #[test]
    fn rejects_other_schema_version() {
        let text = tree_to_json(&sample_tree())
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(tree_from_json(&text), Err(DataError::Tree(_))));
    }

    #[test]
    fn embedding_encoding_is_little_endian() {
        let v = UnitVector::basis(2, 0);
        let decoded = B64.decode(encode_vector(&v)).unwrap();
        assert_eq!(
            decoded,
            [1.0f32.to_le_bytes(), 0.0f32.to_le_bytes()].concat()
        );
    }
}
