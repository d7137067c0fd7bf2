//! Compact-code retrieval.
//!
//! Database items are stored as M meta-class indices (the argmax prototype of
//! each embedding slice), bit-packed. Queries stay in embedding space and are
//! scored against codes by the asymmetric distance: the sum over slices of
//! one minus the cosine between the raw query slice and the coded prototype.

use crate::error::{Error, Result};
use crate::metascheme::bit_width;
use crate::model::{MetaHeads, Model};
use crate::scalar::Scalar;
use crate::vecmath::{argmax, dot, l2_norm, MIN_NORM};
use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

pub const CECD_MAGIC: &[u8; 4] = b"CECD";

/// One coded database item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeRecord {
    pub id: i64,
    /// Ground-truth label when known; evaluation only.
    pub label: Option<u32>,
    pub code: Vec<u32>,
}

/// In-memory search index: the model's prototype matrices plus coded items.
#[derive(Debug, Clone)]
pub struct CodeIndex<T> {
    pub heads: MetaHeads<T>,
    pub records: Vec<CodeRecord>,
}

/// Meta-class code of an embedding: per slice, the prototype of maximal
/// cosine similarity, ties to the lowest index.
pub fn code_from_embedding<T: Scalar>(heads: &MetaHeads<T>, z: &[T]) -> Result<Vec<u32>> {
    if z.len() != heads.d1() {
        return Err(Error::Shape(format!("embedding has {} dims, heads expect {}", z.len(), heads.d1())));
    }
    let mut code = Vec::with_capacity(heads.num_sets());
    for (m, mat) in heads.mats.iter().enumerate() {
        let slice = heads.slice(z, m);
        let sims: Vec<T> = (0..mat.k)
            .map(|j| {
                let proto = mat.proto(j);
                let pnorm = l2_norm(proto);
                if pnorm < T::from_f64_near(MIN_NORM) {
                    return Err(Error::Numeric(format!("prototype {j} of set {m} has zero norm")));
                }
                Ok(dot(slice, proto) / pnorm)
            })
            .collect::<Result<_>>()?;
        code.push(argmax(&sims) as u32);
    }
    Ok(code)
}

/// Encodes raw features through the model into a meta-class code.
pub fn encode_item<T: Scalar>(model: &Model<T>, x: &[T]) -> Result<Vec<u32>> {
    code_from_embedding(&model.heads, &model.encode(x)?)
}

/// Sum over slices of (1 - cos(query slice, coded prototype)); in [0, 2M].
pub fn asymmetric_distance<T: Scalar>(heads: &MetaHeads<T>, z_q: &[T], code: &[u32]) -> Result<T> {
    if z_q.len() != heads.d1() {
        return Err(Error::Shape(format!("query has {} dims, heads expect {}", z_q.len(), heads.d1())));
    }
    if code.len() != heads.num_sets() {
        return Err(Error::Code(format!("code has {} entries, expected {}", code.len(), heads.num_sets())));
    }
    let mut dist = T::zero();
    for (m, mat) in heads.mats.iter().enumerate() {
        let j = code[m] as usize;
        if j >= mat.k {
            return Err(Error::Code(format!("code entry {j} out of range for set {m} of size {}", mat.k)));
        }
        let slice = heads.slice(z_q, m);
        dist += T::one() - slice_proto_cosine(slice, mat.proto(j))?;
    }
    Ok(dist)
}

fn slice_proto_cosine<T: Scalar>(slice: &[T], proto: &[T]) -> Result<T> {
    let snorm = l2_norm(slice);
    if snorm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Normalization("query slice has near-zero norm".into()));
    }
    let pnorm = l2_norm(proto);
    if pnorm < T::from_f64_near(MIN_NORM) {
        return Err(Error::Numeric("prototype has near-zero norm".into()));
    }
    Ok(dot(slice, proto) / (snorm * pnorm))
}

impl<T: Scalar> CodeIndex<T> {
    /// Encodes the table's items (optionally restricted to `ids`) in record
    /// order, keeping their ids and labels.
    pub fn build(
        model: &Model<T>,
        table: &crate::dataset::FeatureTable,
        ids: Option<&BTreeSet<i64>>,
    ) -> Result<Self> {
        let mut records = Vec::new();
        for rec in &table.records {
            if let Some(filter) = ids {
                if !filter.contains(&rec.id) {
                    continue;
                }
            }
            let x: Vec<T> = rec.features.iter().map(|&f| T::from_f32_exact(f)).collect();
            records.push(CodeRecord { id: rec.id, label: rec.label, code: encode_item(model, &x)? });
        }
        Ok(CodeIndex { heads: model.heads.clone(), records })
    }

    pub fn from_parts(heads: MetaHeads<T>, records: Vec<CodeRecord>) -> Result<Self> {
        let sizes = heads.sizes();
        for rec in &records {
            if rec.code.len() != sizes.len() {
                return Err(Error::Code(format!(
                    "item {}: code has {} entries, expected {}",
                    rec.id,
                    rec.code.len(),
                    sizes.len()
                )));
            }
            for (m, (&v, &k)) in rec.code.iter().zip(sizes.iter()).enumerate() {
                if v as usize >= k {
                    return Err(Error::Code(format!("item {}: entry {v} out of range for set {m}", rec.id)));
                }
            }
        }
        Ok(CodeIndex { heads, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices sorted by ascending asymmetric distance, ties by
    /// ascending item id. Scoring uses one M x Km distance table per query.
    pub fn ranked_records(&self, z_q: &[T]) -> Result<Vec<usize>> {
        if self.records.is_empty() {
            return Err(Error::Parameter("cannot search an empty index".into()));
        }
        if z_q.len() != self.heads.d1() {
            return Err(Error::Shape(format!(
                "query has {} dims, index expects {}",
                z_q.len(),
                self.heads.d1()
            )));
        }
        let mut table: Vec<Vec<T>> = Vec::with_capacity(self.heads.num_sets());
        for (m, mat) in self.heads.mats.iter().enumerate() {
            let slice = self.heads.slice(z_q, m);
            let row: Vec<T> = (0..mat.k)
                .map(|j| Ok(T::one() - slice_proto_cosine(slice, mat.proto(j))?))
                .collect::<Result<_>>()?;
            table.push(row);
        }
        let mut scored: Vec<(T, i64, usize)> = Vec::with_capacity(self.records.len());
        for (idx, rec) in self.records.iter().enumerate() {
            let mut dist = T::zero();
            for (m, &c) in rec.code.iter().enumerate() {
                let row = &table[m];
                let j = c as usize;
                if j >= row.len() {
                    return Err(Error::Code(format!("item {}: entry {j} out of range for set {m}", rec.id)));
                }
                dist += row[j];
            }
            if !dist.is_finite() {
                return Err(Error::Numeric(format!("non-finite distance for item {}", rec.id)));
            }
            scored.push((dist, rec.id, idx));
        }
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().map(|(_, _, idx)| idx).collect())
    }

    /// Top-k item ids by ascending distance.
    pub fn search(&self, z_q: &[T], topk: usize) -> Result<Vec<i64>> {
        let ranked = self.ranked_records(z_q)?;
        Ok(ranked.into_iter().take(topk).map(|idx| self.records[idx].id).collect())
    }
}

/// Mean precision at the relevant ranks of a full ranking; 0 when nothing is
/// relevant.
pub fn average_precision<T: Scalar>(relevance: &[bool]) -> T {
    let mut hits = 0usize;
    let mut acc = T::zero();
    for (rank0, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            acc += T::from_usize_near(hits) / T::from_usize_near(rank0 + 1);
        }
    }
    if hits == 0 {
        T::zero()
    } else {
        acc / T::from_usize_near(hits)
    }
}

/// One retrieval query: the item's id (used to drop its own database entry
/// when `exclude_query_id` is set), its class, and its embedding.
#[derive(Debug, Clone)]
pub struct Query<T> {
    pub id: i64,
    pub class: u32,
    pub z: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct MapReport<T> {
    pub map: T,
    pub num_queries: usize,
}

/// Mean AP over queries against the full ranking; an item is relevant when
/// its stored label equals the query class.
pub fn mean_average_precision<T: Scalar>(
    index: &CodeIndex<T>,
    queries: &[Query<T>],
    exclude_query_id: bool,
) -> Result<MapReport<T>> {
    if queries.is_empty() {
        return Err(Error::Parameter("retrieval evaluation needs at least one query".into()));
    }
    let mut acc = T::zero();
    for q in queries {
        let ranked = index.ranked_records(&q.z)?;
        let relevance: Vec<bool> = ranked
            .into_iter()
            .filter(|&idx| !(exclude_query_id && index.records[idx].id == q.id))
            .map(|idx| index.records[idx].label == Some(q.class))
            .collect();
        acc += average_precision::<T>(&relevance);
    }
    Ok(MapReport { map: acc / T::from_usize_near(queries.len()), num_queries: queries.len() })
}

/// Packed size in bytes of one code under the given set sizes.
pub fn packed_len(sizes: &[usize]) -> usize {
    let bits: u32 = sizes.iter().map(|&k| bit_width(k)).sum();
    (bits as usize).div_ceil(8)
}

/// Packs indices in set order, each in ceil(log2 Km) bits, least-significant
/// bit first within little-endian bytes; final byte zero-padded.
pub fn pack_code(code: &[u32], sizes: &[usize]) -> Result<Vec<u8>> {
    if code.len() != sizes.len() {
        return Err(Error::Code(format!("code has {} entries, expected {}", code.len(), sizes.len())));
    }
    let mut bytes = vec![0u8; packed_len(sizes)];
    let mut cursor = 0usize;
    for (&v, &k) in code.iter().zip(sizes.iter()) {
        if v as usize >= k {
            return Err(Error::Code(format!("code entry {v} out of range for set of size {k}")));
        }
        let width = bit_width(k);
        for bit in 0..width {
            if (v >> bit) & 1 == 1 {
                bytes[cursor / 8] |= 1 << (cursor % 8);
            }
            cursor += 1;
        }
    }
    Ok(bytes)
}

pub fn unpack_code(bytes: &[u8], sizes: &[usize]) -> Result<Vec<u32>> {
    if bytes.len() != packed_len(sizes) {
        return Err(Error::Code(format!("packed code has {} bytes, expected {}", bytes.len(), packed_len(sizes))));
    }
    let mut code = Vec::with_capacity(sizes.len());
    let mut cursor = 0usize;
    for &k in sizes {
        let width = bit_width(k);
        let mut v = 0u32;
        for bit in 0..width {
            if (bytes[cursor / 8] >> (cursor % 8)) & 1 == 1 {
                v |= 1 << bit;
            }
            cursor += 1;
        }
        if v as usize >= k {
            return Err(Error::Code(format!("decoded entry {v} out of range for set of size {k}")));
        }
        code.push(v);
    }
    Ok(code)
}

/// Writes a code file: magic, little-endian u32 n and M, u32 K_1..K_M, then
/// per item an i64 id, an i32 label (-1 for none), and the packed code.
pub fn save_codes(path: &Path, sizes: &[usize], records: &[CodeRecord]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CECD_MAGIC);
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &k in sizes {
        buf.extend_from_slice(&(k as u32).to_le_bytes());
    }
    for rec in records {
        buf.extend_from_slice(&rec.id.to_le_bytes());
        let label: i32 = match rec.label {
            Some(l) => l as i32,
            None => -1,
        };
        buf.extend_from_slice(&label.to_le_bytes());
        buf.extend_from_slice(&pack_code(&rec.code, sizes)?);
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_codes(path: &Path) -> Result<(Vec<usize>, Vec<CodeRecord>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format_in(path, format!("truncated at offset {}", *pos)));
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    if take(&mut pos, 4)? != CECD_MAGIC {
        return Err(Error::format_in(path, "bad magic, expected CECD"));
    }
    let u32_at = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let n = u32_at(&mut pos)? as usize;
    let m = u32_at(&mut pos)? as usize;
    if m == 0 {
        return Err(Error::format_in(path, "code file declares zero meta-class sets"));
    }
    let mut sizes = Vec::with_capacity(m);
    for _ in 0..m {
        let k = u32_at(&mut pos)? as usize;
        if k == 0 {
            return Err(Error::format_in(path, "meta-class set of size 0"));
        }
        sizes.push(k);
    }
    let code_len = packed_len(&sizes);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let id = i64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let raw_label = i32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let label = if raw_label < 0 { None } else { Some(raw_label as u32) };
        let code = unpack_code(take(&mut pos, code_len)?, &sizes)
            .map_err(|e| Error::format_in(path, e.to_string()))?;
        records.push(CodeRecord { id, label, code });
    }
    if pos != bytes.len() {
        return Err(Error::format_in(path, format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((sizes, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyperparams, ProtoMat};
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn axis_heads() -> MetaHeads<f64> {
        // Two sets of two axis-aligned prototypes in 2-d slices.
        let mat = ProtoMat { d2: 2, k: 2, data: vec![1.0, 0.0, 0.0, 1.0] };
        MetaHeads { d2: 2, mats: vec![mat.clone(), mat] }
    }

    #[test]
    fn slice_equal_to_a_prototype_codes_to_it() {
        let heads = axis_heads();
        let code = code_from_embedding(&heads, &[0.0, 2.0, 5.0, 0.0]).unwrap();
        assert_eq!(code, vec![1, 0]);
    }

    #[test]
    fn exact_tie_takes_the_lower_index() {
        let heads = axis_heads();
        let code = code_from_embedding(&heads, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(code, vec![0, 0]);
    }

    #[test]
    fn coding_matches_brute_force_argmax() {
        let model =
            Model::<f64>::init(6, 8, 3, &[4, 4, 4], Hyperparams::default(), 77).unwrap();
        let mut rng = stream_rng(123, Stream::Sample);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let z = model.encode(&x).unwrap();
            let code = encode_item(&model, &x).unwrap();
            for (m, mat) in model.heads.mats.iter().enumerate() {
                let slice = model.heads.slice(&z, m);
                let mut best = 0;
                let mut best_sim = f64::NEG_INFINITY;
                for j in 0..mat.k {
                    let sim = dot(slice, mat.proto(j))
                        / (l2_norm(slice) * l2_norm(mat.proto(j)));
                    if sim > best_sim {
                        best_sim = sim;
                        best = j;
                    }
                }
                assert_eq!(code[m] as usize, best);
            }
        }
    }

    #[test]
    fn distance_to_own_prototypes_is_zero() {
        let heads = axis_heads();
        let d = asymmetric_distance(&heads, &[1.0, 0.0, 0.0, 3.0], &[0, 1]).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_single_set_distance_is_one() {
        let mat = ProtoMat { d2: 2, k: 2, data: vec![1.0, 0.0, 0.0, 1.0] };
        let heads = MetaHeads { d2: 2, mats: vec![mat] };
        let d: f64 = asymmetric_distance(&heads, &[1.0, 0.0], &[1]).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_set_distance_is_the_sum_of_per_set_cosine_distances() {
        let heads = axis_heads();
        let z = [0.6, 0.8, -0.3, 0.4];
        let d = asymmetric_distance(&heads, &z, &[0, 1]).unwrap();
        let d0 = 1.0 - 0.6;
        let d1 = 1.0 - 0.4 / (0.09f64 + 0.16).sqrt();
        assert!((d - (d0 + d1)).abs() < 1e-12, "{d} vs {}", d0 + d1);
    }

    #[test]
    fn out_of_range_code_is_a_code_error() {
        let heads = axis_heads();
        assert!(matches!(
            asymmetric_distance(&heads, &[1.0, 0.0, 0.0, 1.0], &[0, 2]).unwrap_err(),
            Error::Code(_)
        ));
        assert!(asymmetric_distance(&heads, &[1.0, 0.0, 0.0, 1.0], &[0]).is_err());
    }

    #[test]
    fn search_ranks_by_distance_then_id() {
        let heads = axis_heads();
        let records = vec![
            CodeRecord { id: 30, label: Some(0), code: vec![0, 0] },
            CodeRecord { id: 10, label: Some(1), code: vec![1, 1] },
            CodeRecord { id: 20, label: Some(0), code: vec![0, 0] },
        ];
        let index = CodeIndex::from_parts(heads, records).unwrap();
        let ids = index.search(&[1.0, 0.0, 1.0, 0.0], 3).unwrap();
        // Items 30 and 20 share distance 0; the tie resolves by id.
        assert_eq!(ids, vec![20, 30, 10]);
        assert!(index.search(&[1.0, 0.0, 1.0, 0.0], 0).unwrap().is_empty());
        let top1 = index.search(&[1.0, 0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(top1, vec![20]);
    }

    #[test]
    fn searching_an_empty_index_fails() {
        let index = CodeIndex::from_parts(axis_heads(), vec![]).unwrap();
        assert!(index.search(&[1.0, 0.0, 1.0, 0.0], 5).is_err());
    }

    #[test]
    fn ranking_equals_naive_per_item_scoring() {
        let model =
            Model::<f64>::init(5, 8, 3, &[4, 2, 3], Hyperparams::default(), 42).unwrap();
        let mut rng = stream_rng(99, Stream::Sample);
        let mut records = Vec::new();
        for id in 0..200i64 {
            let code: Vec<u32> = model
                .sizes()
                .iter()
                .map(|&k| rng.gen_range(0..k as u32))
                .collect();
            records.push(CodeRecord { id, label: None, code });
        }
        let index = CodeIndex::from_parts(model.heads.clone(), records).unwrap();
        for _ in 0..5 {
            let z: Vec<f64> = (0..model.d1()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let ranked = index.ranked_records(&z).unwrap();
            let mut naive: Vec<(f64, i64, usize)> = index
                .records
                .iter()
                .enumerate()
                .map(|(idx, rec)| {
                    (asymmetric_distance(&index.heads, &z, &rec.code).unwrap(), rec.id, idx)
                })
                .collect();
            naive.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let naive_idx: Vec<usize> = naive.into_iter().map(|(_, _, idx)| idx).collect();
            assert_eq!(ranked, naive_idx);
        }
    }

    #[test]
    fn average_precision_hand_cases() {
        assert_eq!(average_precision::<f64>(&[true, true, false]), 1.0);
        let ap = average_precision::<f64>(&[false, true, true]);
        assert!((ap - 7.0 / 12.0).abs() < 1e-12);
        assert_eq!(average_precision::<f64>(&[false, false]), 0.0);
        assert_eq!(average_precision::<f64>(&[]), 0.0);
    }

    #[test]
    fn map_excludes_the_query_item_when_asked() {
        let heads = axis_heads();
        let records = vec![
            CodeRecord { id: 0, label: Some(5), code: vec![0, 0] },
            CodeRecord { id: 1, label: Some(5), code: vec![1, 1] },
            CodeRecord { id: 2, label: Some(6), code: vec![0, 1] },
        ];
        let index = CodeIndex::from_parts(heads, records).unwrap();
        let q = Query { id: 0, class: 5, z: vec![1.0, 0.0, 1.0, 0.0] };
        // With the query item in the ranking it sits first at distance 0 and
        // the other relevant item ranks third: AP = (1/1 + 2/3) / 2 = 5/6.
        let incl = mean_average_precision(&index, &[q.clone()], false).unwrap();
        assert_eq!(incl.num_queries, 1);
        assert!((incl.map - 5.0 / 6.0).abs() < 1e-12, "{}", incl.map);
        // Excluded, the remaining relevant item ranks last: AP = 1/2.
        let excl = mean_average_precision(&index, &[q], true).unwrap();
        assert!((excl.map - 0.5).abs() < 1e-12, "{}", excl.map);
    }

    #[test]
    fn empty_query_set_is_a_parameter_error() {
        let index = CodeIndex::from_parts(axis_heads(), vec![]).unwrap();
        assert!(matches!(
            mean_average_precision::<f64>(&index, &[], false).unwrap_err(),
            Error::Parameter(_)
        ));
    }

    #[test]
    fn pack_roundtrip_across_set_sizes() {
        let sizes = vec![2usize, 4, 8, 16, 4, 2];
        let mut rng = stream_rng(7, Stream::Sample);
        for _ in 0..200 {
            let code: Vec<u32> = sizes.iter().map(|&k| rng.gen_range(0..k as u32)).collect();
            let packed = pack_code(&code, &sizes).unwrap();
            assert_eq!(unpack_code(&packed, &sizes).unwrap(), code);
        }
    }

    #[test]
    fn packed_sizes_match_the_bit_budget() {
        assert_eq!(packed_len(&[4; 6]), 2); // 12 bits
        assert_eq!(packed_len(&[4; 12]), 3); // 24 bits
        assert_eq!(packed_len(&[4; 24]), 6); // 48 bits
        assert_eq!(packed_len(&[2]), 1); // 1 bit
        assert_eq!(packed_len(&[1]), 0); // 0 bits
    }

    #[test]
    fn pack_rejects_out_of_range_entries() {
        assert!(pack_code(&[4], &[4]).is_err());
        assert!(pack_code(&[0, 0], &[4]).is_err());
        // 3 encodes in 2 bits but only values < 3 are valid for k = 3.
        let bytes = pack_code(&[2], &[4]).unwrap();
        assert!(unpack_code(&bytes, &[3]).is_ok());
        let bytes = pack_code(&[3], &[4]).unwrap();
        assert!(unpack_code(&bytes, &[3]).is_err());
    }

    #[test]
    fn code_file_roundtrip_is_byte_stable() {
        let sizes = vec![4usize, 4, 2];
        let records = vec![
            CodeRecord { id: 5, label: Some(2), code: vec![3, 0, 1] },
            CodeRecord { id: -1, label: None, code: vec![0, 3, 0] },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("c1.cecd");
        let p2 = dir.path().join("c2.cecd");
        save_codes(&p1, &sizes, &records).unwrap();
        let (sizes2, records2) = load_codes(&p1).unwrap();
        assert_eq!(sizes2, sizes);
        assert_eq!(records2, records);
        save_codes(&p2, &sizes2, &records2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_code_files_are_rejected() {
        let sizes = vec![4usize];
        let records = vec![CodeRecord { id: 1, label: None, code: vec![2] }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cecd");
        save_codes(&path, &sizes, &records).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        let err = load_codes(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(load_codes(&path).is_err());
    }
}
