//! Feature tables, synthetic data generation, and open-set splits.
//!
//! A feature table is a list of (id, optional class label, feature vector)
//! records with a common dimension. Tables travel either as text
//! (`id,label,f0,...` per line, label -1 meaning unlabeled) or as the binary
//! `CEFT` format. Splits partition a fully labeled table into seen/novel
//! classes and labeled/unlabeled record ids.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, substream_rng, Stream};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

pub const CEFT_MAGIC: &[u8; 4] = b"CEFT";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: i64,
    pub label: Option<u32>,
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub records: Vec<FeatureRecord>,
}

impl FeatureTable {
    /// Builds a table after checking dimensions, id uniqueness, and finiteness.
    pub fn new(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Parameter(format!("feature dimension must be >= 1, got {dim}")));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (row, rec) in records.iter().enumerate() {
            if rec.features.len() != dim {
                return Err(Error::Data(format!(
                    "record {row} (id {}) has {} features, expected {dim}",
                    rec.id,
                    rec.features.len()
                )));
            }
            if rec.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("record {row} (id {}) has a non-finite feature", rec.id)));
            }
            if !seen.insert(rec.id) {
                return Err(Error::Data(format!("duplicate record id {}", rec.id)));
            }
        }
        Ok(FeatureTable { dim, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn id_index_map(&self) -> HashMap<i64, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.id, i)).collect()
    }

    pub fn distinct_labels(&self) -> BTreeSet<u32> {
        self.records.iter().filter_map(|r| r.label).collect()
    }

    pub fn fully_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    pub fn features_as<T: Scalar>(&self, index: usize) -> Vec<T> {
        self.records[index].features.iter().map(|&v| T::from_f32_exact(v)).collect()
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("id,label");
        for j in 0..self.dim {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for rec in &self.records {
            let label = rec.label.map(|l| l as i64).unwrap_or(-1);
            out.push_str(&format!("{},{}", rec.id, label));
            for &v in &rec.features {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format_in(path, "empty table file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
            return Err(Error::format_at(path, 1, "header must be id,label,f0,..."));
        }
        let dim = cols.len() - 2;
        for (j, col) in cols[2..].iter().enumerate() {
            if *col != format!("f{j}") {
                return Err(Error::format_at(path, 1, format!("feature column {j} is named {col:?}")));
            }
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != dim + 2 {
                return Err(Error::format_at(
                    path,
                    lineno,
                    format!("expected {} fields, found {}", dim + 2, parts.len()),
                ));
            }
            let id: i64 = parts[0]
                .parse()
                .map_err(|_| Error::format_at(path, lineno, format!("bad id {:?}", parts[0])))?;
            let raw_label: i64 = parts[1]
                .parse()
                .map_err(|_| Error::format_at(path, lineno, format!("bad label {:?}", parts[1])))?;
            let label = decode_label(raw_label)
                .map_err(|e| Error::format_at(path, lineno, e.to_string()))?;
            let mut features = Vec::with_capacity(dim);
            for part in &parts[2..] {
                let v: f32 = part
                    .parse()
                    .map_err(|_| Error::format_at(path, lineno, format!("bad feature value {part:?}")))?;
                if !v.is_finite() {
                    return Err(Error::format_at(path, lineno, "non-finite feature value"));
                }
                features.push(v);
            }
            records.push(FeatureRecord { id, label, features });
        }
        FeatureTable::new(dim, records).map_err(|e| Error::format_in(path, e.to_string()))
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(12 + self.records.len() * (12 + 4 * self.dim));
        buf.extend_from_slice(CEFT_MAGIC);
        buf.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for rec in &self.records {
            buf.extend_from_slice(&rec.id.to_le_bytes());
            let label: i32 = rec.label.map(|l| l as i32).unwrap_or(-1);
            buf.extend_from_slice(&label.to_le_bytes());
            for &v in &rec.features {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor::new(path, &bytes);
        let magic = cur.take(4, "magic")?;
        if magic != CEFT_MAGIC {
            return Err(Error::format_in(path, "bad magic, expected CEFT"));
        }
        let n = cur.u32("record count")? as usize;
        let dim = cur.u32("dimension")? as usize;
        let mut records = Vec::with_capacity(n);
        for row in 0..n {
            let id = cur.i64(&format!("record {row} id"))?;
            let raw_label = cur.i32(&format!("record {row} label"))?;
            let label = decode_label(raw_label as i64).map_err(|e| Error::format_in(path, e.to_string()))?;
            let mut features = Vec::with_capacity(dim);
            for j in 0..dim {
                let v = cur.f32(&format!("record {row} feature {j}"))?;
                if !v.is_finite() {
                    return Err(Error::format_in(path, format!("record {row} feature {j} is not finite")));
                }
                features.push(v);
            }
            records.push(FeatureRecord { id, label, features });
        }
        cur.finish()?;
        FeatureTable::new(dim, records).map_err(|e| Error::format_in(path, e.to_string()))
    }

    /// Loads either format, sniffing the binary magic.
    pub fn load(path: &Path) -> Result<Self> {
        let mut head = [0u8; 4];
        let mut file = std::fs::File::open(path)?;
        let got = file.read(&mut head)?;
        drop(file);
        if got == 4 && &head == CEFT_MAGIC {
            Self::load_binary(path)
        } else {
            Self::load_text(path)
        }
    }
}

fn decode_label(raw: i64) -> Result<Option<u32>> {
    if raw == -1 {
        Ok(None)
    } else if (0..=u32::MAX as i64).contains(&raw) {
        Ok(Some(raw as u32))
    } else {
        Err(Error::Data(format!("label {raw} out of range (use -1 for unlabeled)")))
    }
}

/// Little-endian reader over a byte slice with offset-aware errors.
struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Cursor { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format_in(
                self.path,
                format!("truncated while reading {what} at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i64(&mut self, what: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format_in(
                self.path,
                format!("{} trailing bytes after offset {}", self.bytes.len() - self.pos, self.pos),
            ));
        }
        Ok(())
    }
}

/// True class means used by [`generate_synthetic`]: unit directions scaled so
/// the smallest pairwise distance lands just above `separation`.
pub fn synthetic_class_means(
    n_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_classes < 2 {
        return Err(Error::Parameter(format!("need >= 2 classes, got {n_classes}")));
    }
    if dim < 2 {
        return Err(Error::Parameter(format!("need dimension >= 2, got {dim}")));
    }
    if !(separation > 0.0) {
        return Err(Error::Parameter(format!("separation must be > 0, got {separation}")));
    }
    let mut rng = stream_rng(seed, Stream::DataMeans);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while dirs.len() < n_classes {
        let mut attempts = 0;
        loop {
            let v: Vec<f64> = (0..dim).map(|_| f64::standard_normal(&mut rng)).collect();
            let norm = crate::vecmath::l2_norm(&v);
            let ok = norm > 1e-9
                && dirs
                    .iter()
                    .all(|d| crate::vecmath::squared_distance(d, &v.iter().map(|x| x / norm).collect::<Vec<_>>()) > 1e-12);
            if ok {
                dirs.push(v.iter().map(|x| x / norm).collect());
                break;
            }
            attempts += 1;
            if attempts > 64 {
                return Err(Error::Construction("could not sample distinct class directions".into()));
            }
        }
    }
    let mut min_dist = f64::INFINITY;
    for i in 0..n_classes {
        for j in (i + 1)..n_classes {
            min_dist = min_dist.min(crate::vecmath::squared_distance(&dirs[i], &dirs[j]).sqrt());
        }
    }
    let radius = separation * (1.0 + 1e-9) / min_dist;
    Ok(dirs
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * radius).collect())
        .collect())
}

/// Gaussian mixture with one component per class: means from
/// [`synthetic_class_means`], isotropic noise of scale `noise_sigma`. Records
/// are laid out class-major with sequential ids starting at 0.
pub fn generate_synthetic(
    n_classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<FeatureTable> {
    if n_per_class < 1 {
        return Err(Error::Parameter(format!("need >= 1 example per class, got {n_per_class}")));
    }
    if !(noise_sigma > 0.0) {
        return Err(Error::Parameter(format!("noise sigma must be > 0, got {noise_sigma}")));
    }
    let means = synthetic_class_means(n_classes, dim, separation, seed)?;
    let mut rng = stream_rng(seed, Stream::DataNoise);
    let mut records = Vec::with_capacity(n_classes * n_per_class);
    let mut id: i64 = 0;
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            let features: Vec<f32> = mean
                .iter()
                .map(|&m| (m + noise_sigma * f64::standard_normal(&mut rng)) as f32)
                .collect();
            records.push(FeatureRecord { id, label: Some(c as u32), features });
            id += 1;
        }
    }
    FeatureTable::new(dim, records)
}

/// Relabels classes by a seeded permutation of 0..K-1. Ids and features are
/// untouched; only labels move. The table must be fully labeled with
/// contiguous class indices.
pub fn permute_classes(table: &FeatureTable, seed: u64) -> Result<FeatureTable> {
    let k = contiguous_class_count(table)?;
    let mut perm: Vec<u32> = (0..k as u32).collect();
    perm.shuffle(&mut stream_rng(seed, Stream::Permute));
    let records = table
        .records
        .iter()
        .map(|r| FeatureRecord {
            id: r.id,
            label: r.label.map(|l| perm[l as usize]),
            features: r.features.clone(),
        })
        .collect();
    FeatureTable::new(table.dim, records)
}

fn contiguous_class_count(table: &FeatureTable) -> Result<usize> {
    if !table.fully_labeled() {
        return Err(Error::Data("table contains unlabeled records".into()));
    }
    if table.is_empty() {
        return Err(Error::Data("table has no records".into()));
    }
    let labels = table.distinct_labels();
    let k = labels.len();
    let contiguous = labels.iter().copied().eq(0..k as u32);
    if !contiguous {
        return Err(Error::Data(format!(
            "class labels must be contiguous 0..{}, found {:?}",
            k,
            labels.iter().take(8).collect::<Vec<_>>()
        )));
    }
    Ok(k)
}

/// Open-set division of a fully labeled table: the lowest ⌊seen_fraction·K⌋
/// classes are seen, the rest novel. Within every seen class a seeded choice
/// of ⌊labeled_fraction·n_c⌋ records keeps its label during training; all
/// remaining records (including every novel-class record) are unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenSetSplit {
    pub seen_classes: BTreeSet<u32>,
    pub novel_classes: BTreeSet<u32>,
    pub labeled_ids: BTreeSet<i64>,
    pub unlabeled_ids: BTreeSet<i64>,
}

impl OpenSetSplit {
    pub fn num_seen(&self) -> usize {
        self.seen_classes.len()
    }

    pub fn is_seen(&self, class: u32) -> bool {
        self.seen_classes.contains(&class)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (name, set) in [("seen", &self.seen_classes), ("novel", &self.novel_classes)] {
            out.push_str(name);
            out.push(':');
            for v in set {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        for (name, set) in [("labeled", &self.labeled_ids), ("unlabeled", &self.unlabeled_ids)] {
            out.push_str(name);
            out.push(':');
            for v in set {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        for (idx, line) in lines.iter().enumerate().skip(4) {
            if !line.trim().is_empty() {
                return Err(Error::format_at(path, idx + 1, "unexpected trailing line"));
            }
        }
        if lines.len() < 4 {
            return Err(Error::format_in(path, "split file needs 4 lines: seen, novel, labeled, unlabeled"));
        }
        let seen_classes = parse_id_line::<u32>(path, 1, lines[0], "seen")?;
        let novel_classes = parse_id_line::<u32>(path, 2, lines[1], "novel")?;
        let labeled_ids = parse_id_line::<i64>(path, 3, lines[2], "labeled")?;
        let unlabeled_ids = parse_id_line::<i64>(path, 4, lines[3], "unlabeled")?;
        let split = OpenSetSplit { seen_classes, novel_classes, labeled_ids, unlabeled_ids };
        split.validate()?;
        Ok(split)
    }

    fn validate(&self) -> Result<()> {
        if !self.seen_classes.is_disjoint(&self.novel_classes) {
            return Err(Error::Data("seen and novel class sets overlap".into()));
        }
        if !self.labeled_ids.is_disjoint(&self.unlabeled_ids) {
            return Err(Error::Data("labeled and unlabeled id sets overlap".into()));
        }
        if self.seen_classes.is_empty() {
            return Err(Error::Data("split has no seen classes".into()));
        }
        Ok(())
    }

    /// Checks that the split matches a table: every record id is covered
    /// exactly once, labeled ids carry seen-class labels, and novel-class
    /// records are all unlabeled.
    pub fn validate_against(&self, table: &FeatureTable) -> Result<()> {
        self.validate()?;
        if self.labeled_ids.len() + self.unlabeled_ids.len() != table.len() {
            return Err(Error::Data(format!(
                "split covers {} ids but the table has {} records",
                self.labeled_ids.len() + self.unlabeled_ids.len(),
                table.len()
            )));
        }
        for rec in &table.records {
            let labeled = self.labeled_ids.contains(&rec.id);
            let unlabeled = self.unlabeled_ids.contains(&rec.id);
            if !(labeled ^ unlabeled) {
                return Err(Error::Data(format!("record id {} is not covered exactly once by the split", rec.id)));
            }
            match rec.label {
                Some(c) if self.novel_classes.contains(&c) && labeled => {
                    return Err(Error::Data(format!("novel-class record id {} is marked labeled", rec.id)));
                }
                Some(c) if labeled && !self.seen_classes.contains(&c) => {
                    return Err(Error::Data(format!("labeled record id {} has class {} outside the seen set", rec.id, c)));
                }
                None if labeled => {
                    return Err(Error::Data(format!("record id {} is marked labeled but has no label", rec.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn parse_id_line<T: std::str::FromStr + Ord>(
    path: &Path,
    lineno: usize,
    line: &str,
    name: &str,
) -> Result<BTreeSet<T>> {
    let rest = line
        .strip_prefix(name)
        .and_then(|r| r.strip_prefix(':'))
        .ok_or_else(|| Error::format_at(path, lineno, format!("expected line to start with {name:?}")))?;
    let mut out = BTreeSet::new();
    for tok in rest.split_whitespace() {
        let v: T = tok
            .parse()
            .map_err(|_| Error::format_at(path, lineno, format!("bad value {tok:?} in {name} line")))?;
        if !out.insert(v) {
            return Err(Error::format_at(path, lineno, format!("duplicate value {tok:?} in {name} line")));
        }
    }
    Ok(out)
}

/// Builds an open-set split of a fully labeled table with contiguous classes.
pub fn make_open_set_split(
    table: &FeatureTable,
    seen_fraction: f64,
    labeled_fraction: f64,
    seed: u64,
) -> Result<OpenSetSplit> {
    if !(seen_fraction > 0.0 && seen_fraction <= 1.0) {
        return Err(Error::Parameter(format!("seen fraction must be in (0, 1], got {seen_fraction}")));
    }
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::Parameter(format!("labeled fraction must be in (0, 1], got {labeled_fraction}")));
    }
    let k = contiguous_class_count(table)?;
    let n_seen = ((seen_fraction * k as f64).floor() as usize).max(1).min(k);
    let seen_classes: BTreeSet<u32> = (0..n_seen as u32).collect();
    let novel_classes: BTreeSet<u32> = (n_seen as u32..k as u32).collect();

    let mut labeled_ids = BTreeSet::new();
    let mut unlabeled_ids = BTreeSet::new();
    for c in 0..n_seen as u32 {
        let ids: Vec<i64> = table
            .records
            .iter()
            .filter(|r| r.label == Some(c))
            .map(|r| r.id)
            .collect();
        let take = (labeled_fraction * ids.len() as f64).floor() as usize;
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut substream_rng(seed, Stream::SplitLabeled, c as u64, 0));
        for (i, id) in shuffled.into_iter().enumerate() {
            if i < take {
                labeled_ids.insert(id);
            } else {
                unlabeled_ids.insert(id);
            }
        }
    }
    for rec in &table.records {
        if rec.label.map(|c| c >= n_seen as u32).unwrap_or(false) {
            unlabeled_ids.insert(rec.id);
        }
    }
    let split = OpenSetSplit { seen_classes, novel_classes, labeled_ids, unlabeled_ids };
    split.validate_against(table)?;
    Ok(split)
}

/// Samples record indices of a pool with replacement.
pub fn sample_with_replacement(pool: &[usize], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..count).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_table() -> FeatureTable {
        generate_synthetic(4, 8, 10, 1.0, 0.1, 42).unwrap()
    }

    #[test]
    fn generation_counts_and_layout() {
        let t = generate_synthetic(10, 16, 50, 1.0, 0.1, 7).unwrap();
        assert_eq!(t.len(), 500);
        assert_eq!(t.dim, 16);
        for (i, rec) in t.records.iter().enumerate() {
            assert_eq!(rec.id, i as i64);
            assert_eq!(rec.label, Some((i / 50) as u32));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(5, 12, 9, 2.0, 0.3, 99).unwrap();
        let b = generate_synthetic(5, 12, 9, 2.0, 0.3, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(5, 12, 9, 2.0, 0.3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_means_respect_separation_floor() {
        for seed in [1u64, 2, 3] {
            let means = synthetic_class_means(8, 6, 2.5, seed).unwrap();
            for i in 0..means.len() {
                for j in (i + 1)..means.len() {
                    let d = crate::vecmath::squared_distance(&means[i], &means[j]).sqrt();
                    assert!(d >= 2.5, "seed {seed}: pair ({i},{j}) at distance {d}");
                }
            }
        }
    }

    // Oracle: with a separation of 10 noise sigmas, classifying every record by
    // its nearest empirical class mean must recover almost all labels.
    #[test]
    fn nearest_mean_oracle_on_well_separated_classes() {
        let sigma = 0.1;
        let t = generate_synthetic(10, 64, 50, 10.0 * sigma, sigma, 123).unwrap();
        let k = 10usize;
        let mut sums = vec![vec![0.0f64; t.dim]; k];
        let mut counts = vec![0usize; k];
        for rec in &t.records {
            let c = rec.label.unwrap() as usize;
            counts[c] += 1;
            for (j, &v) in rec.features.iter().enumerate() {
                sums[c][j] += v as f64;
            }
        }
        let means: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
            .collect();
        let mut correct = 0usize;
        for rec in &t.records {
            let x: Vec<f64> = rec.features.iter().map(|&v| v as f64).collect();
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, m) in means.iter().enumerate() {
                let d = crate::vecmath::squared_distance(&x, m);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if best == rec.label.unwrap() as usize {
                correct += 1;
            }
        }
        let acc = correct as f64 / t.len() as f64;
        assert!(acc >= 0.99, "nearest-mean accuracy {acc}");
    }

    #[test]
    fn bad_generation_parameters_are_rejected() {
        assert!(generate_synthetic(1, 8, 10, 1.0, 0.1, 0).is_err());
        assert!(generate_synthetic(4, 1, 10, 1.0, 0.1, 0).is_err());
        assert!(generate_synthetic(4, 8, 0, 1.0, 0.1, 0).is_err());
        assert!(generate_synthetic(4, 8, 10, 0.0, 0.1, 0).is_err());
        assert!(generate_synthetic(4, 8, 10, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let t = small_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.save_text(&path).unwrap();
        let back = FeatureTable::load_text(&path).unwrap();
        assert_eq!(t, back);
        let sniffed = FeatureTable::load(&path).unwrap();
        assert_eq!(t, sniffed);
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let mut t = small_table();
        t.records[3].label = None;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ceft");
        t.save_binary(&path).unwrap();
        let back = FeatureTable::load_binary(&path).unwrap();
        assert_eq!(t, back);
        let sniffed = FeatureTable::load(&path).unwrap();
        assert_eq!(t, sniffed);
    }

    #[test]
    fn unlabeled_marker_roundtrips_in_text() {
        let mut t = small_table();
        t.records[0].label = None;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.save_text(&path).unwrap();
        let back = FeatureTable::load_text(&path).unwrap();
        assert_eq!(back.records[0].label, None);
    }

    #[test]
    fn wrong_arity_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "id,label,f0,f1,f2,f3\n0,1,0.5,0.25,0.125\n").unwrap();
        let err = FeatureTable::load_text(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "error should carry the line: {msg}");
        assert!(msg.contains("expected 6 fields"), "{msg}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let recs = vec![
            FeatureRecord { id: 5, label: Some(0), features: vec![0.0, 1.0] },
            FeatureRecord { id: 5, label: Some(1), features: vec![1.0, 0.0] },
        ];
        assert!(FeatureTable::new(2, recs).is_err());
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let t = small_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ceft");
        t.save_binary(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        let err = FeatureTable::load_binary(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn split_sizes_match_the_fractions() {
        let t = generate_synthetic(10, 8, 100, 1.0, 0.1, 5).unwrap();
        let s = make_open_set_split(&t, 0.75, 0.5, 11).unwrap();
        assert_eq!(s.seen_classes.len(), 7);
        assert_eq!(s.novel_classes.len(), 3);
        assert_eq!(s.labeled_ids.len(), 7 * 50);
        assert_eq!(s.unlabeled_ids.len(), 7 * 50 + 3 * 100);
        s.validate_against(&t).unwrap();
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let t = generate_synthetic(6, 8, 20, 1.0, 0.1, 5).unwrap();
        let a = make_open_set_split(&t, 0.5, 0.5, 3).unwrap();
        let b = make_open_set_split(&t, 0.5, 0.5, 3).unwrap();
        let c = make_open_set_split(&t, 0.5, 0.5, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.labeled_ids, c.labeled_ids);
        assert_eq!(a.seen_classes, c.seen_classes);
    }

    #[test]
    fn split_rejects_unlabeled_tables() {
        let mut t = small_table();
        t.records[1].label = None;
        assert!(make_open_set_split(&t, 0.5, 0.5, 0).is_err());
    }

    #[test]
    fn split_roundtrips_through_file() {
        let t = generate_synthetic(5, 8, 12, 1.0, 0.1, 5).unwrap();
        let s = make_open_set_split(&t, 0.6, 0.5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.txt");
        s.save(&path).unwrap();
        let back = OpenSetSplit::load(&path).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn permutation_relabels_consistently() {
        let t = small_table();
        let p = permute_classes(&t, 13).unwrap();
        assert_eq!(permute_classes(&t, 13).unwrap(), p);
        assert_eq!(t.distinct_labels(), p.distinct_labels());
        // Same-label groups must map to same-label groups.
        let mut mapping = std::collections::HashMap::new();
        for (a, b) in t.records.iter().zip(&p.records) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.features, b.features);
            let prev = mapping.insert(a.label.unwrap(), b.label.unwrap());
            if let Some(prev) = prev {
                assert_eq!(prev, b.label.unwrap());
            }
        }
    }
}
