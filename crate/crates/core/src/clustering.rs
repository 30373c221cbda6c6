//! Deterministic k-means over unit embeddings.
//!
//! Seeding is k-means++ driven by a ChaCha generator keyed on the config
//! seed, so a given `(points, config)` always yields the same clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{RawVector, UnitVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("need at least k={k} points, got {points}")]
    TooFewPoints { k: usize, points: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dimension mismatch at point {index}: expected {expected}, found {found}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("tolerance must be finite and non-negative, got {0}")]
    BadTolerance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            max_iters: 100,
            seed: 0,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub centroids: Vec<RawVector>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Inertia after every assignment pass, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Groups of point indices, ordered by their smallest member.
    ///
    /// Independent of cluster labels, so two clusterings that induce the same
    /// partition produce equal output.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        partition_from_labels(&self.assignments)
    }
}

/// Turns a label vector into canonical groups: members ascending, groups
/// ordered by first member, empty labels dropped.
pub fn partition_from_labels(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, g)) => g.push(i),
            None => groups.push((label, vec![i])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Number of groups for `n_classes` at a fixed cluster-to-class ratio.
pub fn choose_k(n_classes: usize, ratio: f64) -> usize {
    let k = (ratio * n_classes as f64).round();
    let k = if k.is_finite() && k >= 1.0 {
        k as usize
    } else {
        1
    };
    k.min(n_classes.max(1))
}

fn sq_dist(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&c, &p)| {
            let d = c - f64::from(p);
            d * d
        })
        .sum()
}

fn nearest(point: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, point);
        // strict: ties stay with the lower index
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let to_f64 = |p: &[f32]| p.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![to_f64(points[first])];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(&centroids[0], p)).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point coincides with a centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = to_f64(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(&c, p));
        }
        centroids.push(c);
    }
    centroids
}

/// Assigns every point to its nearest centroid, then fills empty clusters by
/// moving in the point farthest from its centroid. Returns the inertia.
fn assign(points: &[&[f32]], centroids: &mut [Vec<f64>], labels: &mut [usize]) -> f64 {
    let k = centroids.len();
    let mut dists = vec![0.0; points.len()];
    for (i, p) in points.iter().enumerate() {
        let (j, d) = nearest(p, centroids);
        labels[i] = j;
        dists[i] = d;
    }
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor =
            (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                });
        let Some(i) = donor else { break };
        counts[labels[i]] -= 1;
        counts[empty] += 1;
        labels[i] = empty;
        dists[i] = 0.0;
        centroids[empty] = points[i].iter().map(|&v| f64::from(v)).collect();
    }
    dists.iter().sum()
}

fn update(points: &[&[f32]], labels: &[usize], centroids: &mut [Vec<f64>]) -> f64 {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0f64; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(p.iter()) {
            *s += f64::from(v);
        }
    }
    let mut max_shift: f64 = 0.0;
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n == 0 {
            continue;
        }
        let next: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
        let shift = c
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        max_shift = max_shift.max(shift);
        *c = next;
    }
    max_shift
}

/// Lloyd iteration from k-means++ seeding.
pub fn kmeans(points: &[UnitVector], cfg: &KMeansConfig) -> Result<Clustering, ClusterError> {
    if cfg.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if points.len() < cfg.k {
        return Err(ClusterError::TooFewPoints {
            k: cfg.k,
            points: points.len(),
        });
    }
    if !(cfg.tol >= 0.0 && cfg.tol.is_finite()) {
        return Err(ClusterError::BadTolerance(cfg.tol));
    }
    let dim = points[0].dim();
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| p.dim() != dim) {
        return Err(ClusterError::DimensionMismatch {
            index,
            expected: dim,
            found: p.dim(),
        });
    }

    let views: Vec<&[f32]> = points.iter().map(|p| p.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = seed_plus_plus(&views, cfg.k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iters.max(1) {
        let inertia = assign(&views, &mut centroids, &mut labels);
        push_inertia(&mut history, inertia);
        iterations += 1;
        if update(&views, &labels, &mut centroids) <= cfg.tol {
            break;
        }
    }
    let inertia = assign(&views, &mut centroids, &mut labels);
    push_inertia(&mut history, inertia);

    let centroids = centroids
        .into_iter()
        .map(|c| RawVector::new(c.into_iter().map(|v| v as f32).collect()))
        .collect::<Result<Vec<_>, _>>()
        .expect("centroids of finite points are finite");

    Ok(Clustering {
        assignments: labels,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    })
}

fn push_inertia(history: &mut Vec<f64>, inertia: f64) {
    if let Some(&prev) = history.last() {
        debug_assert!(
            inertia <= prev + 1e-9 * prev.max(1.0),
            "k-means inertia increased: {prev} -> {inertia}"
        );
    }
    history.push(inertia);
}

/// Adjusted Rand index between two labelings of the same points.
///
/// Returns 1.0 for identical partitions, including the degenerate cases
/// where the expected index equals the maximum.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same points");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let pa = partition_from_labels(a);
    let pb = partition_from_labels(b);
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;

    let mut index = 0.0;
    for ga in &pa {
        for gb in &pb {
            let overlap = ga.iter().filter(|i| gb.contains(i)).count();
            index += choose2(overlap);
        }
    }
    let sum_a: f64 = pa.iter().map(|g| choose2(g.len())).sum();
    let sum_b: f64 = pb.iter().map(|g| choose2(g.len())).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return if pa == pb { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(values: &[f32]) -> UnitVector {
        RawVector::new(values.to_vec())
            .unwrap()
            .normalize()
            .unwrap()
    }

    fn square_points() -> Vec<UnitVector> {
        [
            [1.0, 0.05, 0.0],
            [1.0, -0.05, 0.0],
            [0.0, 1.0, 0.05],
            [0.0, 1.0, -0.05],
        ]
        .iter()
        .map(|p| unit(p))
        .collect()
    }

    fn inertia_of(points: &[UnitVector], groups: &[Vec<usize>]) -> f64 {
        groups
            .iter()
            .map(|g| {
                let dim = points[0].dim();
                let mut c = vec![0.0f64; dim];
                for &i in g {
                    for (a, &v) in c.iter_mut().zip(points[i].as_slice()) {
                        *a += f64::from(v) / g.len() as f64;
                    }
                }
                g.iter()
                    .map(|&i| sq_dist(&c, points[i].as_slice()))
                    .sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts: Vec<UnitVector> = (0..4).map(|i| UnitVector::basis(4, i)).collect();
        let cfg = KMeansConfig {
            k: 4,
            ..Default::default()
        };
        let c = kmeans(&pts, &cfg).unwrap();
        assert_eq!(c.partition(), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(c.inertia, 0.0);
    }

    #[test]
    fn two_clusters_match_exhaustive_optimum() {
        let pts = square_points();
        // brute force over every 2-partition with both sides nonempty
        let mut best: Option<(f64, Vec<Vec<usize>>)> = None;
        for mask in 1u32..(1 << 4) - 1 {
            let labels: Vec<usize> = (0..4).map(|i| ((mask >> i) & 1) as usize).collect();
            let groups = partition_from_labels(&labels);
            let inertia = inertia_of(&pts, &groups);
            if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
                best = Some((inertia, groups));
            }
        }
        let (_, optimum) = best.unwrap();
        assert_eq!(optimum, vec![vec![0, 1], vec![2, 3]]);

        let c = kmeans(
            &pts,
            &KMeansConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.partition(), optimum);
    }

    #[test]
    fn deterministic_for_same_seed() {
        let pts = square_points();
        let cfg = KMeansConfig {
            k: 2,
            seed: 42,
            ..Default::default()
        };
        let a = kmeans(&pts, &cfg).unwrap();
        let b = kmeans(&pts, &cfg).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let bits = |c: &Clustering| -> Vec<u32> {
            c.centroids
                .iter()
                .flat_map(|v| v.as_slice().iter().map(|x| x.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn errors() {
        let pts = square_points();
        assert_eq!(
            kmeans(
                &pts[..1],
                &KMeansConfig {
                    k: 2,
                    ..Default::default()
                }
            ),
            Err(ClusterError::TooFewPoints { k: 2, points: 1 })
        );
        let mixed = vec![unit(&[1.0, 0.0]), unit(&[1.0, 0.0, 0.0])];
        assert!(matches!(
            kmeans(
                &mixed,
                &KMeansConfig {
                    k: 1,
                    ..Default::default()
                }
            ),
            Err(ClusterError::DimensionMismatch { index: 1, .. })
        ));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![unit(&[1.0, 0.0]); 5];
        let c = kmeans(
            &pts,
            &KMeansConfig {
                k: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.partition().len(), 3);
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k(100, 0.05), 5);
        assert_eq!(choose_k(1, 0.5), 1);
        assert_eq!(choose_k(10, 1.0), 10);
        assert_eq!(choose_k(3, 0.01), 1);
    }

    #[test]
    fn ari_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 2, 2]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[0, 1, 2]), 1.0);
    }
}
