//! Accuracy, confusion matrices and hyperparameter sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_canonical_json, DatasetManifest, EmbeddingProvider};
use crate::embedding::UnitVector;
use crate::scoring::{classify, classify_baseline, ClassModel, FusionConfig, ScoreError};
use crate::tree::{BuildConfig, KnowledgeTree, LevelAggregation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no {kind} embedding for {id:?}")]
    MissingEmbedding { kind: &'static str, id: String },
    #[error("class sets differ: {0}")]
    ClassSetMismatch(String),
    #[error("results are not comparable: {0}")]
    ShapeMismatch(String),
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("tree: {0}")]
    Tree(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Hierarchical,
}

/// Settings that produced a result, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub fusion: Option<FusionConfig>,
    pub build_config: Option<BuildConfig>,
    pub aggregation: Option<LevelAggregation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: Method,
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    /// Classes without any manifest item are left out.
    pub per_class_accuracy: BTreeMap<String, f64>,
    /// Row and column order of `confusion`.
    pub class_ids: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub config: EvalSnapshot,
}

impl EvalResult {
    pub fn accuracy_from_confusion(&self) -> f64 {
        let trace: u64 = (0..self.class_ids.len())
            .map(|i| self.confusion[i][i])
            .sum();
        let total: u64 = self.confusion.iter().flatten().sum();
        if total == 0 {
            0.0
        } else {
            trace as f64 / total as f64
        }
    }

    pub fn render_text(&self) -> String {
        let width = self
            .class_ids
            .iter()
            .map(|c| c.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "method {:?}  accuracy {:.4}  ({}/{})",
            self.method, self.accuracy, self.correct, self.total
        );
        for (class, acc) in &self.per_class_accuracy {
            let _ = writeln!(out, "  {class:<width$}  {acc:.4}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub true_class: String,
    pub predicted: String,
}

fn check_labels(
    manifest: &DatasetManifest,
    labels: &BTreeMap<String, UnitVector>,
) -> Result<Vec<(String, UnitVector)>, EvalError> {
    manifest
        .class_ids
        .iter()
        .map(|c| {
            labels
                .get(c)
                .map(|v| (c.clone(), v.clone()))
                .ok_or_else(|| EvalError::MissingEmbedding {
                    kind: "label",
                    id: c.clone(),
                })
        })
        .collect()
}

fn check_tree(manifest: &DatasetManifest, tree: &KnowledgeTree) -> Result<(), EvalError> {
    let want: BTreeSet<&String> = manifest.class_ids.iter().collect();
    let have: BTreeSet<&String> = tree.class_ids.iter().collect();
    if want != have {
        let missing: Vec<&&String> = want.difference(&have).collect();
        let extra: Vec<&&String> = have.difference(&want).collect();
        return Err(EvalError::ClassSetMismatch(format!(
            "tree lacks {missing:?}, tree has extra {extra:?}"
        )));
    }
    Ok(())
}

/// Label embedding plus description matrix for every manifest class.
pub fn class_models(
    manifest: &DatasetManifest,
    labels: &BTreeMap<String, UnitVector>,
    tree: &KnowledgeTree,
    aggregation: LevelAggregation,
    embedder: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<ClassModel>, EvalError> {
    check_tree(manifest, tree)?;
    check_labels(manifest, labels)?
        .into_iter()
        .map(|(c, label)| {
            let (matrix, _) = tree
                .class_matrix(&c, aggregation, embedder)
                .map_err(|e| EvalError::Tree(e.to_string()))?;
            Ok(ClassModel { label, matrix })
        })
        .collect()
}

/// Per-item predictions in manifest order. Without `models`, plain label argmax.
pub fn predictions(
    manifest: &DatasetManifest,
    images: &BTreeMap<String, UnitVector>,
    labels: &BTreeMap<String, UnitVector>,
    models: Option<&[ClassModel]>,
    fusion: &FusionConfig,
) -> Result<Vec<Prediction>, EvalError> {
    let label_list = check_labels(manifest, labels)?;
    if let Some(models) = models {
        fusion.validate()?;
        let have: BTreeSet<&str> = models.iter().map(|m| m.class_id()).collect();
        let want: BTreeSet<&str> = manifest.class_ids.iter().map(String::as_str).collect();
        if have != want {
            return Err(EvalError::ClassSetMismatch(
                "class models do not cover the manifest classes".into(),
            ));
        }
    }
    manifest
        .items
        .par_iter()
        .map(|item| {
            let x = images
                .get(&item.image_id)
                .ok_or_else(|| EvalError::MissingEmbedding {
                    kind: "image",
                    id: item.image_id.clone(),
                })?;
            let predicted = match models {
                Some(models) => classify(x, models, fusion)?.0,
                None => classify_baseline(x, &label_list)?.0,
            };
            Ok(Prediction {
                image_id: item.image_id.clone(),
                true_class: item.true_class.clone(),
                predicted,
            })
        })
        .collect()
}

fn tally(
    manifest: &DatasetManifest,
    preds: &[Prediction],
    method: Method,
    config: EvalSnapshot,
) -> EvalResult {
    let index: BTreeMap<&str, usize> = manifest
        .class_ids
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let n = manifest.class_ids.len();
    let mut confusion = vec![vec![0u64; n]; n];
    let mut correct = 0u64;
    for p in preds {
        confusion[index[p.true_class.as_str()]][index[p.predicted.as_str()]] += 1;
        if p.true_class == p.predicted {
            correct += 1;
        }
    }
    let total = preds.len() as u64;
    let per_class_accuracy = manifest
        .class_ids
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let row: u64 = confusion[i].iter().sum();
            (row > 0).then(|| (c.clone(), confusion[i][i] as f64 / row as f64))
        })
        .collect();
    EvalResult {
        method,
        accuracy: if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        },
        correct,
        total,
        per_class_accuracy,
        class_ids: manifest.class_ids.clone(),
        confusion,
        config,
    }
}

/// Baseline when `tree` is `None`, fused scoring otherwise (mean per level).
pub fn evaluate(
    manifest: &DatasetManifest,
    images: &BTreeMap<String, UnitVector>,
    labels: &BTreeMap<String, UnitVector>,
    tree: Option<&KnowledgeTree>,
    fusion: &FusionConfig,
) -> Result<EvalResult, EvalError> {
    match tree {
        None => evaluate_with_models(manifest, images, labels, None, fusion),
        Some(tree) => {
            let models = class_models(manifest, labels, tree, LevelAggregation::Mean, None)?;
            let mut result = evaluate_with_models(manifest, images, labels, Some(&models), fusion)?;
            result.config.build_config = Some(tree.build_config);
            Ok(result)
        }
    }
}

pub fn evaluate_with_models(
    manifest: &DatasetManifest,
    images: &BTreeMap<String, UnitVector>,
    labels: &BTreeMap<String, UnitVector>,
    models: Option<&[ClassModel]>,
    fusion: &FusionConfig,
) -> Result<EvalResult, EvalError> {
    let preds = predictions(manifest, images, labels, models, fusion)?;
    let (method, config) = match models {
        None => (
            Method::Baseline,
            EvalSnapshot {
                fusion: None,
                build_config: None,
                aggregation: None,
            },
        ),
        Some(_) => (
            Method::Hierarchical,
            EvalSnapshot {
                fusion: Some(*fusion),
                build_config: None,
                aggregation: Some(LevelAggregation::Mean),
            },
        ),
    };
    Ok(tally(manifest, &preds, method, config))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellChange {
    pub true_class: String,
    pub predicted: String,
    pub before: u64,
    pub after: u64,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionDiff {
    pub class_ids: Vec<String>,
    /// `b - a` per cell.
    pub delta: Vec<Vec<i64>>,
    /// Largest absolute off-diagonal changes first.
    pub top: Vec<CellChange>,
}

#[allow(clippy::needless_range_loop)]
pub fn confusion_diff(
    a: &EvalResult,
    b: &EvalResult,
    top_k: usize,
) -> Result<ConfusionDiff, EvalError> {
    if a.class_ids != b.class_ids {
        return Err(EvalError::ShapeMismatch("class sets differ".into()));
    }
    let rows = |r: &EvalResult| {
        r.confusion
            .iter()
            .map(|row| row.iter().sum::<u64>())
            .collect::<Vec<_>>()
    };
    if rows(a) != rows(b) {
        return Err(EvalError::ShapeMismatch(
            "per-class item counts differ".into(),
        ));
    }
    let n = a.class_ids.len();
    let mut delta = vec![vec![0i64; n]; n];
    let mut cells = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (before, after) = (a.confusion[i][j], b.confusion[i][j]);
            delta[i][j] = after as i64 - before as i64;
            if i != j && delta[i][j] != 0 {
                cells.push(CellChange {
                    true_class: a.class_ids[i].clone(),
                    predicted: a.class_ids[j].clone(),
                    before,
                    after,
                    delta: delta[i][j],
                });
            }
        }
    }
    cells.sort_by(|x, y| {
        y.delta
            .abs()
            .cmp(&x.delta.abs())
            .then_with(|| x.true_class.cmp(&y.true_class))
            .then_with(|| x.predicted.cmp(&y.predicted))
    });
    cells.truncate(top_k);
    Ok(ConfusionDiff {
        class_ids: a.class_ids.clone(),
        delta,
        top: cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Tau,
    GroupRatio,
    Depth,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Tau => "tau",
            SweepParam::GroupRatio => "group_ratio",
            SweepParam::Depth => "depth",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "tau" => Ok(SweepParam::Tau),
            "group_ratio" | "n" => Ok(SweepParam::GroupRatio),
            "depth" => Ok(SweepParam::Depth),
            other => Err(EvalError::InvalidSpec(format!(
                "unknown sweep parameter {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    pub fusion: FusionConfig,
    pub build: BuildConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.values.is_empty() {
            return Err(EvalError::InvalidSpec("no values".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::InvalidSpec("values must be finite".into()));
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(EvalError::InvalidSpec(
                "values must be sorted ascending".into(),
            ));
        }
        if self.parameter == SweepParam::Depth
            && self.values.iter().any(|&v| v < 1.0 || v.fract() != 0.0)
        {
            return Err(EvalError::InvalidSpec(
                "depth values must be integers >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Tree factory for group-ratio sweeps.
pub type Rebuild<'a> = dyn Fn(&BuildConfig) -> Result<KnowledgeTree, String> + Sync + 'a;

/// One evaluation per value, in spec order. A failing row records its error
/// and the sweep carries on.
pub fn sweep(
    spec: &SweepSpec,
    manifest: &DatasetManifest,
    images: &BTreeMap<String, UnitVector>,
    labels: &BTreeMap<String, UnitVector>,
    tree: &KnowledgeTree,
    rebuild: Option<&Rebuild<'_>>,
) -> Result<Vec<SweepRow>, EvalError> {
    spec.validate()?;
    if spec.parameter == SweepParam::GroupRatio && rebuild.is_none() {
        return Err(EvalError::InvalidSpec(
            "group_ratio sweeps need a tree builder".into(),
        ));
    }
    let rows = spec
        .values
        .iter()
        .map(|&value| {
            let mut fusion = spec.fusion;
            let outcome = match spec.parameter {
                SweepParam::Lambda => {
                    fusion.lambda = value;
                    evaluate(manifest, images, labels, Some(tree), &fusion)
                }
                SweepParam::Tau => {
                    fusion.tau = value;
                    evaluate(manifest, images, labels, Some(tree), &fusion)
                }
                SweepParam::Depth => {
                    fusion.max_depth_used = Some(value as usize);
                    evaluate(manifest, images, labels, Some(tree), &fusion)
                }
                SweepParam::GroupRatio => {
                    let build = BuildConfig {
                        group_ratio: value,
                        ..spec.build
                    };
                    let rebuild = rebuild.expect("checked above");
                    rebuild(&build)
                        .map_err(EvalError::Tree)
                        .and_then(|t| evaluate(manifest, images, labels, Some(&t), &fusion))
                }
            };
            match outcome {
                Ok(r) => SweepRow {
                    value,
                    accuracy: Some(r.accuracy),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{} = {value}: {e}", spec.parameter.name());
                    SweepRow {
                        value,
                        accuracy: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(rows)
}

pub fn render_sweep_text(parameter: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = format!("{:>12}  {:>10}\n", parameter.name(), "accuracy");
    for r in rows {
        match (r.accuracy, &r.error) {
            (Some(a), _) => {
                let _ = writeln!(out, "{:>12}  {a:>10.4}", r.value);
            }
            (None, e) => {
                let _ = writeln!(
                    out,
                    "{:>12}  {:>10}  {}",
                    r.value,
                    "failed",
                    e.as_deref().unwrap_or("")
                );
            }
        }
    }
    out
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> EvalError + '_ {
    move |e| EvalError::Io(format!("{}: {e}", path.display()))
}

pub fn write_eval_json<T: Serialize + ?Sized>(path: &Path, report: &T) -> Result<(), EvalError> {
    write_canonical_json(path, report).map_err(|e| EvalError::Io(e.to_string()))
}

/// Header `true\predicted,<class>...`; one row per true class.
pub fn write_confusion_csv(path: &Path, result: &EvalResult) -> Result<(), EvalError> {
    let err = io_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(result.class_ids.iter().cloned());
    w.write_record(&header).map_err(&err)?;
    for (class, row) in result.class_ids.iter().zip(&result.confusion) {
        let mut rec = vec![class.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

/// Header `parameter,value,accuracy,status,error`.
pub fn write_sweep_csv(
    path: &Path,
    parameter: SweepParam,
    rows: &[SweepRow],
) -> Result<(), EvalError> {
    let err = io_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["parameter", "value", "accuracy", "status", "error"])
        .map_err(&err)?;
    for r in rows {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let status = if r.error.is_some() { "failed" } else { "ok" };
        w.write_record([
            parameter.name(),
            &r.value.to_string(),
            &acc,
            status,
            r.error.as_deref().unwrap_or(""),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ManifestItem;
    use crate::embedding::RawVector;
    use proptest::prelude::*;

    fn unit(values: &[f32]) -> UnitVector {
        RawVector::new(values.to_vec())
            .unwrap()
            .normalize()
            .unwrap()
    }

    fn corpus() -> (
        DatasetManifest,
        BTreeMap<String, UnitVector>,
        BTreeMap<String, UnitVector>,
    ) {
        let classes = ["a", "b", "c"];
        let labels = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), UnitVector::basis(3, i)))
            .collect();
        let mut items = Vec::new();
        let mut images = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            for k in 0..4 {
                let id = format!("{c}{k}");
                let mut v = vec![0.1 * k as f32; 3];
                v[i] = 1.0;
                // one "a" image leans toward "b"
                if *c == "a" && k == 3 {
                    v = vec![0.5, 0.6, 0.0];
                }
                images.insert(id.clone(), unit(&v));
                items.push(ManifestItem {
                    image_id: id,
                    true_class: c.to_string(),
                });
            }
        }
        let manifest = DatasetManifest {
            name: "toy".into(),
            class_ids: classes.iter().map(|c| c.to_string()).collect(),
            items,
        };
        (manifest, images, labels)
    }

    #[test]
    fn perfect_separability() {
        let (m, _, labels) = corpus();
        let images: BTreeMap<String, UnitVector> = m
            .items
            .iter()
            .map(|it| (it.image_id.clone(), labels[&it.true_class].clone()))
            .collect();
        m.validate().unwrap();
        let r = evaluate(&m, &images, &labels, None, &FusionConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.method, Method::Baseline);
    }

    #[test]
    fn confusion_rows_and_accuracy_agree() {
        let (m, images, labels) = corpus();
        let r = evaluate(&m, &images, &labels, None, &FusionConfig::default()).unwrap();
        assert_eq!(r.correct, 11);
        assert_eq!(r.confusion[0][1], 1);
        for row in &r.confusion {
            assert_eq!(row.iter().sum::<u64>(), 4);
        }
        assert!((r.accuracy - r.accuracy_from_confusion()).abs() <= 1e-12);
        assert_eq!(r.per_class_accuracy["a"], 0.75);
    }

    #[test]
    fn missing_image_embedding() {
        let (m, mut images, labels) = corpus();
        images.remove("b2");
        assert_eq!(
            evaluate(&m, &images, &labels, None, &FusionConfig::default()),
            Err(EvalError::MissingEmbedding {
                kind: "image",
                id: "b2".into()
            })
        );
    }

    fn result_with(confusion: Vec<Vec<u64>>) -> EvalResult {
        let (m, _, _) = corpus();
        EvalResult {
            method: Method::Baseline,
            accuracy: 0.0,
            correct: 0,
            total: 0,
            per_class_accuracy: BTreeMap::new(),
            class_ids: m.class_ids,
            confusion,
            config: EvalSnapshot {
                fusion: None,
                build_config: None,
                aggregation: None,
            },
        }
    }

    #[test]
    fn diff_examples() {
        let a = result_with(vec![vec![10, 54, 0], vec![0, 64, 0], vec![0, 0, 64]]);
        let same = confusion_diff(&a, &a, 5).unwrap();
        assert!(same.delta.iter().flatten().all(|&d| d == 0));
        assert!(same.top.is_empty());

        let b = result_with(vec![vec![27, 37, 0], vec![0, 64, 0], vec![0, 0, 64]]);
        let d = confusion_diff(&a, &b, 5).unwrap();
        assert_eq!(d.delta[0][1], -17);
        assert_eq!(d.delta[0][0], 17);
        assert_eq!(d.top[0].delta, -17);
        assert_eq!((d.top[0].before, d.top[0].after), (54, 37));

        let mut other = b.clone();
        other.class_ids[2] = "z".into();
        assert!(matches!(
            confusion_diff(&a, &other, 5),
            Err(EvalError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn sweep_spec_validation() {
        let spec = |values: Vec<f64>, parameter| SweepSpec {
            parameter,
            values,
            fusion: FusionConfig::default(),
            build: BuildConfig::default(),
        };
        assert!(spec(vec![], SweepParam::Lambda).validate().is_err());
        assert!(spec(vec![0.5, 0.1], SweepParam::Lambda).validate().is_err());
        assert!(spec(vec![1.5], SweepParam::Depth).validate().is_err());
        assert!(spec(vec![0.0, 0.5], SweepParam::Lambda).validate().is_ok());
        assert_eq!(
            "group_ratio".parse::<SweepParam>().unwrap(),
            SweepParam::GroupRatio
        );
    }

    #[test]
    fn csv_writers() {
        let (m, images, labels) = corpus();
        let r = evaluate(&m, &images, &labels, None, &FusionConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("confusion.csv");
        write_confusion_csv(&conf, &r).unwrap();
        let text = std::fs::read_to_string(&conf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "true\\predicted,a,b,c");
        assert_eq!(text.lines().nth(1).unwrap(), "a,3,1,0");

        let rows = vec![
            SweepRow {
                value: 0.0,
                accuracy: Some(0.5),
                error: None,
            },
            SweepRow {
                value: 1.0,
                accuracy: None,
                error: Some("boom, bad".into()),
            },
        ];
        let sw = dir.path().join("sweep.csv");
        write_sweep_csv(&sw, SweepParam::Lambda, &rows).unwrap();
        let text = std::fs::read_to_string(&sw).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "parameter,value,accuracy,status,error");
        assert_eq!(lines[1], "lambda,0,0.5,ok,");
        assert_eq!(lines[2], "lambda,1,,failed,\"boom, bad\"");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn evaluate_ignores_item_order(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (m, images, labels) = corpus();
            let mut shuffled = m.clone();
            shuffled.items.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = evaluate(&m, &images, &labels, None, &FusionConfig::default()).unwrap();
            let b = evaluate(&shuffled, &images, &labels, None, &FusionConfig::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
