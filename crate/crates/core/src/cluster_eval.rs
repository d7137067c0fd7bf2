//! Open-set clustering evaluation.
//!
//! Test embeddings are clustered once with k-means; clusters are matched to
//! ground-truth classes by a single global Hungarian assignment maximizing
//! matched items; accuracy, NMI, and ARI are then reported for the full test
//! set and for the subsets of seen-class and novel-class items. Subset
//! accuracy reuses the global cluster-to-class mapping; subset NMI and ARI
//! are recomputed on the subset's label pairs.

use crate::error::{Error, Result};
use crate::kmeans::{kmeans_with, EmptyClusterPolicy, KMeansConfig};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// Minimum-cost perfect matching on a square integer matrix; returns the
/// column matched to each row. Costs must be small enough that sums of n of
/// them stay within i64.
fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    debug_assert!(cost.iter().all(|row| row.len() == n));
    // Potentials-based shortest augmenting path method, O(n^3).
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // matched_row[col] = row, 1-based, 0 = free
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] != 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    row_to_col
}

fn compact_ids(labels: &[u32]) -> (Vec<u32>, Vec<usize>) {
    let distinct: Vec<u32> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<u32, usize> = distinct.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let compact = labels.iter().map(|l| index[l]).collect();
    (distinct, compact)
}

fn contingency(pred: &[u32], truth: &[u32]) -> (Vec<u32>, Vec<u32>, Vec<Vec<u64>>) {
    let (pred_ids, pred_c) = compact_ids(pred);
    let (truth_ids, truth_c) = compact_ids(truth);
    let mut counts = vec![vec![0u64; truth_ids.len()]; pred_ids.len()];
    for (&p, &t) in pred_c.iter().zip(truth_c.iter()) {
        counts[p][t] += 1;
    }
    (pred_ids, truth_ids, counts)
}

fn check_pair(pred: &[u32], truth: &[u32]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Parameter("clustering metrics need at least one item".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Parameter(format!(
            "got {} cluster labels for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Best one-to-one matching of clusters to classes.
#[derive(Debug, Clone)]
pub struct HungarianResult<T> {
    pub acc: T,
    /// (cluster id, class id) pairs of the optimal matching.
    pub mapping: Vec<(u32, u32)>,
}

/// Clustering accuracy under the optimal cluster-to-class assignment; the
/// smaller side of the confusion matrix is padded with zero-count dummies.
pub fn hungarian_accuracy<T: Scalar>(pred: &[u32], truth: &[u32]) -> Result<HungarianResult<T>> {
    check_pair(pred, truth)?;
    let (pred_ids, truth_ids, counts) = contingency(pred, truth);
    let side = pred_ids.len().max(truth_ids.len());
    // Maximizing matches = minimizing negated counts.
    let cost: Vec<Vec<i64>> = (0..side)
        .map(|i| {
            (0..side)
                .map(|j| {
                    if i < pred_ids.len() && j < truth_ids.len() {
                        -(counts[i][j] as i64)
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let row_to_col = min_cost_assignment(&cost);
    let mut matched = 0u64;
    let mut mapping = Vec::new();
    for (i, &j) in row_to_col.iter().enumerate() {
        if i < pred_ids.len() && j < truth_ids.len() {
            matched += counts[i][j];
            mapping.push((pred_ids[i], truth_ids[j]));
        }
    }
    let acc = T::from_usize_near(matched as usize) / T::from_usize_near(pred.len());
    Ok(HungarianResult { acc, mapping })
}

/// Normalized mutual information with arithmetic-mean normalization,
/// 2I / (H_pred + H_truth). Two trivial single-cluster partitions score 1;
/// if only one side is trivial the score is 0.
pub fn nmi<T: Scalar>(pred: &[u32], truth: &[u32]) -> Result<T> {
    check_pair(pred, truth)?;
    let (pred_ids, truth_ids, counts) = contingency(pred, truth);
    let n = pred.len() as f64;
    let a: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let mut b = vec![0u64; truth_ids.len()];
    for row in &counts {
        for (j, &c) in row.iter().enumerate() {
            b[j] += c;
        }
    }
    let entropy = |marg: &[u64]| -> f64 {
        marg.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&a);
    let h_truth = entropy(&b);
    if h_pred == 0.0 && h_truth == 0.0 {
        return Ok(T::one());
    }
    let mut info = 0.0f64;
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                info += p * ((n * c as f64) / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    let _ = pred_ids;
    let value = (2.0 * info / (h_pred + h_truth)).clamp(0.0, 1.0);
    Ok(T::from_f64_near(value))
}

fn pairs(c: u64) -> i128 {
    let c = c as i128;
    c * (c - 1) / 2
}

fn same_partition(pred: &[u32], truth: &[u32]) -> bool {
    let (_, p) = compact_ids(pred);
    let (_, t) = compact_ids(truth);
    let mut p_to_t: BTreeMap<usize, usize> = BTreeMap::new();
    let mut t_to_p: BTreeMap<usize, usize> = BTreeMap::new();
    for (&pc, &tc) in p.iter().zip(t.iter()) {
        if *p_to_t.entry(pc).or_insert(tc) != tc || *t_to_p.entry(tc).or_insert(pc) != pc {
            return false;
        }
    }
    true
}

/// Adjusted Rand index via exact pair counting. A degenerate denominator
/// (both partitions trivial in the same way) scores 1 when the partitions
/// are identical and 0 otherwise.
pub fn ari<T: Scalar>(pred: &[u32], truth: &[u32]) -> Result<T> {
    check_pair(pred, truth)?;
    let (_, _, counts) = contingency(pred, truth);
    let a: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let mut b = vec![0u64; counts.first().map_or(0, |r| r.len())];
    for row in &counts {
        for (j, &c) in row.iter().enumerate() {
            b[j] += c;
        }
    }
    let sum_ab: i128 = counts.iter().flatten().map(|&c| pairs(c)).sum();
    let sum_a: i128 = a.iter().map(|&c| pairs(c)).sum();
    let sum_b: i128 = b.iter().map(|&c| pairs(c)).sum();
    let total = pairs(pred.len() as u64);
    // ARI = (sum_ab - sum_a*sum_b/total) / ((sum_a+sum_b)/2 - sum_a*sum_b/total),
    // scaled by 2*total to stay in integers.
    let num = 2 * total * sum_ab - 2 * sum_a * sum_b;
    let den = total * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(if same_partition(pred, truth) { T::one() } else { T::zero() });
    }
    Ok(T::from_f64_near(num as f64 / den as f64))
}

/// Metrics of one evaluation scope.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScopeMetrics<T> {
    pub acc: T,
    pub nmi: T,
    pub ari: T,
    pub count: usize,
}

/// Seen/unseen/total breakdown; scopes without items are omitted.
#[derive(Debug, Clone, Serialize)]
pub struct OpenSetMetrics<T> {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seen: Option<ScopeMetrics<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen: Option<ScopeMetrics<T>>,
    pub total: ScopeMetrics<T>,
}

fn scope_metrics<T: Scalar>(
    pred: &[u32],
    truth: &[u32],
    idx: &[usize],
    class_of: &BTreeMap<u32, u32>,
) -> Result<ScopeMetrics<T>> {
    let sub_pred: Vec<u32> = idx.iter().map(|&i| pred[i]).collect();
    let sub_truth: Vec<u32> = idx.iter().map(|&i| truth[i]).collect();
    let correct = idx
        .iter()
        .filter(|&&i| class_of.get(&pred[i]).is_some_and(|&c| c == truth[i]))
        .count();
    Ok(ScopeMetrics {
        acc: T::from_usize_near(correct) / T::from_usize_near(idx.len()),
        nmi: nmi(&sub_pred, &sub_truth)?,
        ari: ari(&sub_pred, &sub_truth)?,
        count: idx.len(),
    })
}

/// Clusters the embeddings into k groups and scores them against the ground
/// truth, splitting by whether an item's true class is a seen class.
pub fn eval_open_set<T: Scalar>(
    embeddings: &[Vec<T>],
    truth: &[u32],
    seen_classes: &BTreeSet<u32>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<OpenSetMetrics<T>> {
    if embeddings.is_empty() {
        return Err(Error::Parameter("open-set evaluation needs at least one item".into()));
    }
    if embeddings.len() != truth.len() {
        return Err(Error::Parameter(format!(
            "got {} embeddings for {} labels",
            embeddings.len(),
            truth.len()
        )));
    }
    let cfg = KMeansConfig {
        max_iter: 300,
        tol: 1e-6,
        restarts,
        empty_policy: EmptyClusterPolicy::ReseedFarthest,
    };
    let mut rng = stream_rng(seed, Stream::EvalKmeans);
    let clustering = kmeans_with(embeddings, k, &cfg, &mut rng)?;
    let pred = clustering.assignments;
    let hung = hungarian_accuracy::<T>(&pred, truth)?;
    let class_of: BTreeMap<u32, u32> = hung.mapping.iter().copied().collect();
    let all: Vec<usize> = (0..truth.len()).collect();
    let seen_idx: Vec<usize> = all.iter().copied().filter(|&i| seen_classes.contains(&truth[i])).collect();
    let unseen_idx: Vec<usize> = all.iter().copied().filter(|&i| !seen_classes.contains(&truth[i])).collect();
    let total = scope_metrics(&pred, truth, &all, &class_of)?;
    let seen = if seen_idx.is_empty() {
        None
    } else {
        Some(scope_metrics(&pred, truth, &seen_idx, &class_of)?)
    };
    let unseen = if unseen_idx.is_empty() {
        None
    } else {
        Some(scope_metrics(&pred, truth, &unseen_idx, &class_of)?)
    };
    Ok(OpenSetMetrics { seen, unseen, total })
}
