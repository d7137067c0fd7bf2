//! Exhaustive-scan oracle for the code index.
//!
//! The index answers queries from a per-query score table; the oracle below
//! scores every record directly from the distance definition. On 1000 items
//! the two rankings must agree exactly.

use combem::model::{MetaHeads, ProtoMat};
use combem::retrieval::{
    code_from_embedding, pack_code, packed_len, unpack_code, CodeIndex, CodeRecord,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn random_heads(rng: &mut ChaCha8Rng, d2: usize, sizes: &[usize]) -> MetaHeads<f64> {
    let mats = sizes
        .iter()
        .map(|&k| ProtoMat {
            d2,
            k,
            data: (0..k * d2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    MetaHeads { d2, mats }
}

fn naive_code(heads: &MetaHeads<f64>, z: &[f64]) -> Vec<u32> {
    let d2 = heads.d2;
    heads
        .mats
        .iter()
        .enumerate()
        .map(|(m, mat)| {
            let slice = &z[m * d2..(m + 1) * d2];
            let mut best = 0usize;
            let mut best_sim = f64::NEG_INFINITY;
            for j in 0..mat.k {
                let proto = &mat.data[j * d2..(j + 1) * d2];
                let sim = dot(slice, proto) / norm(proto);
                if sim > best_sim {
                    best_sim = sim;
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

fn naive_distance(heads: &MetaHeads<f64>, z_q: &[f64], code: &[u32]) -> f64 {
    let d2 = heads.d2;
    let mut dist = 0.0;
    for (m, mat) in heads.mats.iter().enumerate() {
        let slice = &z_q[m * d2..(m + 1) * d2];
        let proto = &mat.data[code[m] as usize * d2..(code[m] as usize + 1) * d2];
        dist += 1.0 - dot(slice, proto) / (norm(slice) * norm(proto));
    }
    dist
}

#[test]
fn index_ranking_equals_exhaustive_scan_on_1000_items() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let d2 = 4;
    let sizes = [4usize, 3, 5];
    let heads = random_heads(&mut rng, d2, &sizes);
    let d1 = d2 * sizes.len();

    let embeddings: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..d1).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let records: Vec<CodeRecord> = embeddings
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let code = code_from_embedding(&heads, z).unwrap();
            assert_eq!(code, naive_code(&heads, z), "item {i}: coding disagrees");
            CodeRecord { id: i as i64, label: Some((i % 7) as u32), code }
        })
        .collect();
    let index = CodeIndex::from_parts(heads.clone(), records.clone()).unwrap();

    for q in 0..5 {
        let z_q: Vec<f64> = (0..d1).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = index.search(&z_q, records.len()).unwrap();
        let mut expected: Vec<(f64, i64)> = records
            .iter()
            .map(|rec| (naive_distance(&heads, &z_q, &rec.code), rec.id))
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected_ids: Vec<i64> = expected.iter().map(|&(_, id)| id).collect();
        assert_eq!(got, expected_ids, "query {q}: rankings differ");
    }
}

#[test]
fn topk_prefixes_the_full_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let heads = random_heads(&mut rng, 3, &[2, 2]);
    let records: Vec<CodeRecord> = (0..40)
        .map(|i| {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            CodeRecord { id: i, label: None, code: code_from_embedding(&heads, &z).unwrap() }
        })
        .collect();
    let index = CodeIndex::from_parts(heads, records).unwrap();
    let z_q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let full = index.search(&z_q, 40).unwrap();
    for k in [0usize, 1, 7, 40] {
        assert_eq!(index.search(&z_q, k).unwrap(), full[..k.min(40)]);
    }
}

proptest! {
    #[test]
    fn packing_roundtrips_for_arbitrary_codes(
        sizes in prop::collection::vec(1usize..40, 1..10),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code: Vec<u32> = sizes.iter().map(|&k| rng.gen_range(0..k as u32)).collect();
        let bytes = pack_code(&code, &sizes).unwrap();
        prop_assert_eq!(bytes.len(), packed_len(&sizes));
        let back = unpack_code(&bytes, &sizes).unwrap();
        prop_assert_eq!(back, code);
    }
}
