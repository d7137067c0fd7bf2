//! Meta-class scheme construction.
//!
//! Each of the M meta-class sets partitions the seen classes by k-means over
//! class embeddings projected onto a seeded random subspace of Q coordinates.
//! Class embeddings are encoder outputs of the labeled data, summarized per
//! class either by the weight rows of a small linear classifier trained on
//! them (default) or by normalized class means (fallback).

use crate::dataset::{FeatureTable, OpenSetSplit};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_with, EmptyClusterPolicy, KMeansConfig};
use crate::model::Encoder;
use crate::rng::{stream_rng, substream_rng, Stream};
use crate::scalar::Scalar;
use crate::vecmath::{dot, l2_norm, l2_normalize, l2_normalize_backward, softmax_in_place, MIN_NORM};
use rand::seq::index::sample;
use std::fmt::Write as _;
use std::path::Path;

/// One l2-normalized embedding row per seen class, indexed by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddingMatrix<T> {
    pub dim: usize,
    pub rows: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Weight rows of a linear normalized-softmax classifier trained on
    /// encoder outputs of the labeled items.
    ClassifierWeights,
    /// Normalized per-class means of encoder outputs.
    ClassMeans,
}

/// Classifier-mode training constants. The geometry only needs rows that
/// point toward their class; a short full-batch schedule is enough.
const CLASSIFIER_STEPS: usize = 200;
const CLASSIFIER_LR: f64 = 1.0;
const CLASSIFIER_TAU: f64 = 0.1;

fn train_classifier_rows<T: Scalar>(
    z_hats: &[Vec<T>],
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    let d1 = z_hats[0].len();
    let tau = T::from_f64_near(CLASSIFIER_TAU);
    let lr = T::from_f64_near(CLASSIFIER_LR);
    let w_item = T::one() / T::from_usize_near(z_hats.len());
    let mut rng = stream_rng(seed, Stream::ClassEmbed);
    let scale = T::one() / T::from_usize_near(d1).sqrt();
    let mut w: Vec<Vec<T>> = (0..n_classes)
        .map(|_| (0..d1).map(|_| T::standard_normal(&mut rng) * scale).collect())
        .collect();
    for _ in 0..CLASSIFIER_STEPS {
        let mut units = Vec::with_capacity(n_classes);
        let mut norms = Vec::with_capacity(n_classes);
        for row in &w {
            let norm = l2_norm(row);
            if norm < T::from_f64_near(MIN_NORM) {
                return Err(Error::Numeric("classifier weight row collapsed to zero norm".into()));
            }
            norms.push(norm);
            units.push(row.iter().map(|&v| v / norm).collect::<Vec<T>>());
        }
        let mut d_w = vec![vec![T::zero(); d1]; n_classes];
        for (z_hat, &label) in z_hats.iter().zip(labels.iter()) {
            let mut probs: Vec<T> = units.iter().map(|u| dot(u, z_hat) / tau).collect();
            softmax_in_place(&mut probs);
            for c in 0..n_classes {
                let mut dl = probs[c];
                if c == label {
                    dl -= T::one();
                }
                dl = dl * w_item / tau;
                let d_unit: Vec<T> = z_hat.iter().map(|&v| dl * v).collect();
                l2_normalize_backward(&units[c], norms[c], &d_unit, &mut d_w[c]);
            }
        }
        for c in 0..n_classes {
            for (wv, gv) in w[c].iter_mut().zip(d_w[c].iter()) {
                *wv -= lr * *gv;
            }
        }
    }
    w.iter().map(|row| l2_normalize(row)).collect()
}

/// Builds one embedding row per seen class from the encoder outputs of the
/// labeled items. Every seen class needs at least one labeled example.
pub fn class_embeddings<T: Scalar>(
    table: &FeatureTable,
    split: &OpenSetSplit,
    encoder: &Encoder<T>,
    mode: EmbeddingMode,
    seed: u64,
) -> Result<ClassEmbeddingMatrix<T>> {
    split.validate_against(table)?;
    let n_seen = split.num_seen();
    let index = table.id_index_map();
    let mut zs: Vec<Vec<T>> = Vec::with_capacity(split.labeled_ids.len());
    let mut labels: Vec<usize> = Vec::with_capacity(split.labeled_ids.len());
    for &id in &split.labeled_ids {
        let rec = &table.records[index[&id]];
        let label = rec.label.expect("labeled ids carry labels after validation") as usize;
        let x: Vec<T> = rec.features.iter().map(|&f| T::from_f32_exact(f)).collect();
        zs.push(encoder.encode(&x)?);
        labels.push(label);
    }
    let mut counts = vec![0usize; n_seen];
    for &l in &labels {
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("seen class {missing} has no labeled examples")));
    }
    let d1 = encoder.out_dim();
    let rows = match mode {
        EmbeddingMode::ClassMeans => {
            let mut sums = vec![vec![T::zero(); d1]; n_seen];
            for (z, &l) in zs.iter().zip(labels.iter()) {
                for (s, &v) in sums[l].iter_mut().zip(z.iter()) {
                    *s += v;
                }
            }
            let mut rows = Vec::with_capacity(n_seen);
            for (c, sum) in sums.into_iter().enumerate() {
                let inv = T::one() / T::from_usize_near(counts[c]);
                let mean: Vec<T> = sum.into_iter().map(|v| v * inv).collect();
                rows.push(l2_normalize(&mean)?);
            }
            rows
        }
        EmbeddingMode::ClassifierWeights => {
            let z_hats: Vec<Vec<T>> = zs.iter().map(|z| l2_normalize(z)).collect::<Result<_>>()?;
            train_classifier_rows(&z_hats, &labels, n_seen, seed)?
        }
    };
    Ok(ClassEmbeddingMatrix { dim: d1, rows })
}

/// A frozen partition family: for each of the M sets, a total assignment of
/// seen classes to meta-classes, plus the sampled subspace that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaScheme {
    pub sizes: Vec<usize>,
    pub q: usize,
    pub seed: u64,
    /// assignments[m][class_id] = meta-class index in set m.
    pub assignments: Vec<Vec<u32>>,
    /// subspaces[m] = the Q coordinate indices sampled for set m, ascending.
    pub subspaces: Vec<Vec<u32>>,
}

const MAX_CLUSTER_ATTEMPTS: u32 = 32;

/// Bits needed to store one index in 0..k.
pub fn bit_width(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        (k - 1).ilog2() + 1
    }
}

/// Builds M meta-class sets of Km clusters each over the class embeddings.
/// Every set projects the rows onto Q freshly sampled distinct coordinates;
/// a clustering with an empty cluster is retried under an incremented
/// sub-seed, up to 32 attempts per set.
pub fn build_scheme<T: Scalar>(
    embs: &ClassEmbeddingMatrix<T>,
    num_sets: usize,
    k_per_set: usize,
    q: usize,
    seed: u64,
) -> Result<MetaScheme> {
    let n_classes = embs.rows.len();
    if num_sets < 1 {
        return Err(Error::Parameter("need at least one meta-class set".into()));
    }
    if k_per_set < 1 || k_per_set > n_classes {
        return Err(Error::Parameter(format!(
            "meta-class count {k_per_set} must be in 1..={n_classes} (the seen-class count)"
        )));
    }
    if q < 1 || q > embs.dim {
        return Err(Error::Parameter(format!("subspace size {q} must be in 1..={}", embs.dim)));
    }
    let cfg = KMeansConfig {
        max_iter: 100,
        tol: 1e-6,
        restarts: 1,
        empty_policy: EmptyClusterPolicy::Fail,
    };
    let mut assignments = Vec::with_capacity(num_sets);
    let mut subspaces = Vec::with_capacity(num_sets);
    for m in 0..num_sets {
        let mut done = false;
        for attempt in 0..MAX_CLUSTER_ATTEMPTS {
            let mut coord_rng = substream_rng(seed, Stream::SchemeSubspace, m as u64, attempt as u64);
            let mut coords: Vec<usize> = sample(&mut coord_rng, embs.dim, q).into_vec();
            coords.sort_unstable();
            let points: Vec<Vec<T>> = embs
                .rows
                .iter()
                .map(|row| coords.iter().map(|&c| row[c]).collect())
                .collect();
            let mut km_rng = substream_rng(seed, Stream::SchemeKmeans, m as u64, attempt as u64);
            match kmeans_with(&points, k_per_set, &cfg, &mut km_rng) {
                Ok(result) => {
                    assignments.push(result.assignments);
                    subspaces.push(coords.into_iter().map(|c| c as u32).collect());
                    done = true;
                    break;
                }
                Err(Error::EmptyCluster) => continue,
                Err(e) => return Err(e),
            }
        }
        if !done {
            return Err(Error::Construction(format!(
                "set {m}: no clustering with {k_per_set} nonempty clusters in {MAX_CLUSTER_ATTEMPTS} attempts"
            )));
        }
    }
    let scheme = MetaScheme { sizes: vec![k_per_set; num_sets], q, seed, assignments, subspaces };
    scheme.validate()?;
    Ok(scheme)
}

impl MetaScheme {
    pub fn num_sets(&self) -> usize {
        self.sizes.len()
    }

    pub fn n_classes(&self) -> usize {
        self.assignments.first().map_or(0, |a| a.len())
    }

    /// Meta-class of `class_id` in set `m`.
    pub fn meta_label(&self, m: usize, class_id: u32) -> Result<u32> {
        if m >= self.num_sets() {
            return Err(Error::Parameter(format!("set index {m} out of range for {} sets", self.num_sets())));
        }
        self.assignments[m]
            .get(class_id as usize)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("class {class_id} is not a seen class")))
    }

    /// Meta-classes of `class_id` across all sets.
    pub fn meta_labels_for(&self, class_id: u32) -> Result<Vec<u32>> {
        (0..self.num_sets()).map(|m| self.meta_label(m, class_id)).collect()
    }

    /// Storage cost of one combinatorial code in bits.
    pub fn code_bits(&self) -> u32 {
        self.sizes.iter().map(|&k| bit_width(k)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.sizes.len();
        if m == 0 {
            return Err(Error::Construction("scheme has no meta-class sets".into()));
        }
        if self.assignments.len() != m || self.subspaces.len() != m {
            return Err(Error::Construction("scheme arrays disagree on the number of sets".into()));
        }
        let n = self.n_classes();
        if n == 0 {
            return Err(Error::Construction("scheme covers no classes".into()));
        }
        for (i, a) in self.assignments.iter().enumerate() {
            if a.len() != n {
                return Err(Error::Construction(format!("set {i} assigns {} classes, set 0 assigns {n}", a.len())));
            }
            let k = self.sizes[i];
            let mut seen = vec![false; k];
            for &v in a {
                if v as usize >= k {
                    return Err(Error::Construction(format!("set {i}: meta-class {v} out of range for size {k}")));
                }
                seen[v as usize] = true;
            }
            if !seen.iter().all(|&s| s) {
                return Err(Error::Construction(format!("set {i}: some meta-class has no base classes")));
            }
        }
        for (i, s) in self.subspaces.iter().enumerate() {
            if s.len() != self.q {
                return Err(Error::Construction(format!("set {i}: subspace has {} coords, expected {}", s.len(), self.q)));
            }
            if s.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Construction(format!("set {i}: subspace coords not strictly ascending")));
            }
        }
        Ok(())
    }

    /// Checks shape agreement with a model's meta heads.
    pub fn validate_against_sizes(&self, model_sizes: &[usize]) -> Result<()> {
        if self.sizes != model_sizes {
            return Err(Error::Config(format!(
                "scheme sizes {:?} do not match model meta-head sizes {:?}",
                self.sizes, model_sizes
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.num_sets(), self.q, self.seed).unwrap();
        let sizes: Vec<String> = self.sizes.iter().map(|k| k.to_string()).collect();
        writeln!(out, "{}", sizes.join(" ")).unwrap();
        for a in &self.assignments {
            let row: Vec<String> = a.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        for s in &self.subspaces {
            let row: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        let parse_row = |lineno: usize, expect: Option<usize>, what: &str| -> Result<Vec<u64>> {
            let line = lines
                .get(lineno - 1)
                .ok_or_else(|| Error::format_at(path, lineno, format!("missing {what} line")))?;
            let vals: Vec<u64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<u64>()
                        .map_err(|_| Error::format_at(path, lineno, format!("bad {what} value {tok:?}")))
                })
                .collect::<Result<_>>()?;
            if let Some(n) = expect {
                if vals.len() != n {
                    return Err(Error::format_at(
                        path,
                        lineno,
                        format!("expected {n} {what} values, got {}", vals.len()),
                    ));
                }
            }
            if vals.is_empty() {
                return Err(Error::format_at(path, lineno, format!("empty {what} line")));
            }
            Ok(vals)
        };
        let header = parse_row(1, Some(3), "header")?;
        let (m, q, seed) = (header[0] as usize, header[1] as usize, header[2]);
        if m < 1 {
            return Err(Error::format_at(path, 1, "scheme must have at least one set"));
        }
        let sizes: Vec<usize> = parse_row(2, Some(m), "size")?.into_iter().map(|v| v as usize).collect();
        let expected_lines = 2 + 2 * m;
        if lines.len() != expected_lines {
            return Err(Error::format_in(path, format!("expected {expected_lines} lines, found {}", lines.len())));
        }
        let mut assignments = Vec::with_capacity(m);
        let mut n_classes = None;
        for i in 0..m {
            let row = parse_row(3 + i, n_classes, "assignment")?;
            n_classes.get_or_insert(row.len());
            assignments.push(row.into_iter().map(|v| v as u32).collect());
        }
        let mut subspaces = Vec::with_capacity(m);
        for i in 0..m {
            let row = parse_row(3 + m + i, Some(q), "subspace")?;
            subspaces.push(row.into_iter().map(|v| v as u32).collect());
        }
        let scheme = MetaScheme { sizes, q, seed, assignments, subspaces };
        scheme.validate().map_err(|e| Error::format_in(path, e.to_string()))?;
        Ok(scheme)
    }
}
