//! Hierarchical score fusion.
//!
//! For an image embedding `x` and class `i` with label embedding `t_i` and
//! root-to-leaf description embeddings `D_i`:
//!
//! - `q(j) = x · D_i[j]` for each level `j`;
//! - `r` is the mean of the longest prefix `q(1..=p)` in which every step
//!   rises by more than `tau` (`q(k+1) > q(k) + tau`);
//! - `s = (1 - lambda) · (x · t_i) + lambda · r`.
//!
//! Classification takes the argmax of `s`; equal scores resolve to the
//! lexicographically smallest class id.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, UnitVector, VectorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("dimension mismatch for class {class:?}: {source}")]
    DimensionMismatch { class: String, source: VectorError },
    #[error("class {0:?} has no description rows")]
    EmptyMatrix(String),
    #[error("no classes to score")]
    EmptyClassSet,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("class {class:?}: {levels} description levels for {scores} scores")]
    LengthMismatch {
        class: String,
        levels: usize,
        scores: usize,
    },
}

/// Per-level description embeddings of one class, ordered root to leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDescriptionMatrix {
    class_id: String,
    rows: Vec<UnitVector>,
}

impl ClassDescriptionMatrix {
    pub fn new(class_id: impl Into<String>, rows: Vec<UnitVector>) -> Result<Self, ScoreError> {
        let class_id = class_id.into();
        let Some(first) = rows.first() else {
            return Err(ScoreError::EmptyMatrix(class_id));
        };
        let dim = first.dim();
        if let Some(bad) = rows.iter().find(|r| r.dim() != dim) {
            return Err(ScoreError::DimensionMismatch {
                class: class_id,
                source: VectorError::DimensionMismatch {
                    expected: dim,
                    found: bad.dim(),
                },
            });
        }
        Ok(Self { class_id, rows })
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    pub fn rows(&self) -> &[UnitVector] {
        &self.rows
    }

    /// Number of levels, `M`.
    pub fn levels(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Weight of the fused description score against the label score.
    pub lambda: f64,
    /// Minimum rise between consecutive level scores to keep extending the prefix.
    pub tau: f64,
    /// Keep only the first `d` levels of every class before fusing.
    #[serde(default)]
    pub max_depth_used: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            tau: 0.0,
            max_depth_used: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ScoreError::InvalidConfig(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(ScoreError::InvalidConfig(format!(
                "tau must be finite and >= 0, got {}",
                self.tau
            )));
        }
        if self.max_depth_used == Some(0) {
            return Err(ScoreError::InvalidConfig(
                "max_depth_used must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Scoring record for one (image, class) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub class_id: String,
    pub q: Vec<f64>,
    /// Which levels entered `r`; always a prefix starting at level 1.
    pub included: Vec<bool>,
    pub r: f64,
    pub baseline: f64,
    pub s: f64,
}

fn dims(class: &str, e: VectorError) -> ScoreError {
    ScoreError::DimensionMismatch {
        class: class.to_string(),
        source: e,
    }
}

/// Cosine of `x` against every row of `d`.
pub fn level_scores(x: &UnitVector, d: &ClassDescriptionMatrix) -> Result<Vec<f64>, ScoreError> {
    d.rows
        .iter()
        .map(|row| cosine(x, row).map_err(|e| dims(&d.class_id, e)))
        .collect()
}

/// Mean of the longest strictly rising (by more than `tau`) prefix of `q`.
///
/// # Panics
/// If `q` is empty.
pub fn fused_running_average(q: &[f64], tau: f64) -> (f64, Vec<bool>) {
    assert!(!q.is_empty(), "level scores must be non-empty");
    let mut p = 1;
    while p < q.len() && q[p] > q[p - 1] + tau {
        p += 1;
    }
    let r = q[..p].iter().sum::<f64>() / p as f64;
    let included = (0..q.len()).map(|j| j < p).collect();
    (r, included)
}

pub fn final_score(
    x: &UnitVector,
    t: &UnitVector,
    d: &ClassDescriptionMatrix,
    cfg: &FusionConfig,
) -> Result<ScoreTrace, ScoreError> {
    let baseline = cosine(x, t).map_err(|e| dims(&d.class_id, e))?;
    let mut q = level_scores(x, d)?;
    if let Some(depth) = cfg.max_depth_used {
        q.truncate(depth.max(1));
    }
    let (r, included) = fused_running_average(&q, cfg.tau);
    let s = (1.0 - cfg.lambda) * baseline + cfg.lambda * r;
    Ok(ScoreTrace {
        class_id: d.class_id.clone(),
        q,
        included,
        r,
        baseline,
        s,
    })
}

/// A candidate class: label embedding plus its description matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub label: UnitVector,
    pub matrix: ClassDescriptionMatrix,
}

impl ClassModel {
    pub fn class_id(&self) -> &str {
        self.matrix.class_id()
    }
}

fn argmax<'a>(scored: impl IntoIterator<Item = (&'a str, f64)>) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for (id, s) in scored {
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid <= id) => Some((bid, bs)),
            _ => Some((id, s)),
        };
    }
    best.map(|(id, _)| id)
}

/// Fused-score argmax over `classes`. Traces come back in input order.
pub fn classify(
    x: &UnitVector,
    classes: &[ClassModel],
    cfg: &FusionConfig,
) -> Result<(String, Vec<ScoreTrace>), ScoreError> {
    cfg.validate()?;
    let traces = classes
        .iter()
        .map(|c| final_score(x, &c.label, &c.matrix, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let pred = argmax(traces.iter().map(|t| (t.class_id.as_str(), t.s)))
        .ok_or(ScoreError::EmptyClassSet)?
        .to_string();
    Ok((pred, traces))
}

/// Plain label-embedding argmax, no descriptions involved.
pub fn classify_baseline(
    x: &UnitVector,
    labels: &[(String, UnitVector)],
) -> Result<(String, Vec<f64>), ScoreError> {
    let scores = labels
        .iter()
        .map(|(id, t)| cosine(x, t).map_err(|e| dims(id, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let pred = argmax(
        labels
            .iter()
            .zip(&scores)
            .map(|((id, _), &s)| (id.as_str(), s)),
    )
    .ok_or(ScoreError::EmptyClassSet)?
    .to_string();
    Ok((pred, scores))
}

/// Description lines behind one row of a class matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDescriptions {
    pub node_id: String,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub class_id: String,
    pub baseline: f64,
    pub q: Vec<f64>,
    pub included: Vec<bool>,
    pub r: f64,
    pub s: f64,
    pub levels: Vec<LevelDescriptions>,
}

/// Pairs a trace with the descriptions that produced each level score.
pub fn explain(
    trace: &ScoreTrace,
    levels: &[LevelDescriptions],
) -> Result<ClassExplanation, ScoreError> {
    let mismatch = || ScoreError::LengthMismatch {
        class: trace.class_id.clone(),
        levels: levels.len(),
        scores: trace.q.len(),
    };
    if levels.len() != trace.q.len() || trace.included.len() != trace.q.len() {
        return Err(mismatch());
    }
    if levels.iter().any(|l| l.lines.is_empty()) {
        return Err(mismatch());
    }
    Ok(ClassExplanation {
        class_id: trace.class_id.clone(),
        baseline: trace.baseline,
        q: trace.q.clone(),
        included: trace.included.clone(),
        r: trace.r,
        s: trace.s,
        levels: levels.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub image_id: String,
    pub predicted: String,
    pub traces: Vec<ClassExplanation>,
}

impl ExplanationReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "image {}  predicted {}", self.image_id, self.predicted);
        for t in &self.traces {
            let _ = writeln!(
                out,
                "\n{}  s={:.4}  baseline={:.4}  r={:.4}",
                t.class_id, t.s, t.baseline, t.r
            );
            for (j, level) in t.levels.iter().enumerate() {
                let status = if t.included[j] {
                    "included"
                } else {
                    "dropped (score reduction)"
                };
                let _ = writeln!(
                    out,
                    "  level {}  [{}]  q={:.4}  {}",
                    j + 1,
                    level.node_id,
                    t.q[j],
                    status
                );
                for line in &level.lines {
                    let _ = writeln!(out, "      - {line}");
                }
            }
        }
        out
    }
}
