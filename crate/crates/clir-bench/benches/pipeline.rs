//! Criterion benchmarks for the pipeline hot paths: min-hash signatures,
//! brute-force ranking, NDCG scoring and checkpoint merging.

use std::collections::BTreeMap;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use clir_core::dedup::{signature, DedupConfig};
use clir_core::evaluator::ndcg_at_k;
use clir_core::ingest::emb1::EmbeddingMatrix;
use clir_core::ingest::tensors::{Tensor, TensorArchive};
use clir_core::merger::{merge_archives, MergeSpec};
use clir_core::miner::rank_documents;

fn random_text(rng: &mut ChaCha20Rng, words: usize) -> String {
    (0..words)
        .map(|_| {
            let len = rng.gen_range(4..=9);
            (0..len)
                .map(|_| (b'a' + rng.gen_range(0..26u8)) as char)
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn bench_minhash_signature(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let cfg = DedupConfig::default();
    let mut group = c.benchmark_group("minhash_signature");
    for words in [10usize, 50, 200] {
        let text = random_text(&mut rng, words);
        group.throughput(Throughput::Bytes(text.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(words), &text, |b, text| {
            b.iter(|| signature(black_box(text), &cfg).unwrap());
        });
    }
    group.finish();
}

fn bench_rank_documents(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let dim = 256;
    let mut group = c.benchmark_group("rank_documents");
    for n in [1_000usize, 10_000] {
        let ids: Vec<String> = (0..n).map(|i| format!("d{i:06}")).collect();
        let vectors: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let docs = EmbeddingMatrix::new(ids, vectors, dim, false).unwrap();
        let query: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &docs, |b, docs| {
            b.iter(|| rank_documents(black_box(&query), docs).unwrap());
        });
    }
    group.finish();
}

fn bench_ndcg(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let ranked: Vec<String> = (0..1_000).map(|i| format!("d{i:04}")).collect();
    let mut qrels = BTreeMap::new();
    for _ in 0..20 {
        qrels.insert(format!("d{:04}", rng.gen_range(0..1_000)), rng.gen_range(1..=3u32));
    }
    c.bench_function("ndcg_at_10_pool_1000", |b| {
        b.iter(|| ndcg_at_k(black_box(&ranked), &qrels, 10).unwrap());
    });
}

fn bench_merge(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut build = |params: usize| {
        let mut archive = TensorArchive::new();
        let values: Vec<f32> = (0..params).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
        archive.insert("w", Tensor::from_f32(vec![params], &values).unwrap());
        archive
    };
    let spec = MergeSpec::new("a", "b", 0.5).unwrap();
    let mut group = c.benchmark_group("merge_archives");
    for params in [100_000usize, 1_000_000] {
        let a = build(params);
        let b_archive = build(params);
        group.throughput(Throughput::Elements(params as u64));
        group.bench_with_input(BenchmarkId::from_parameter(params), &params, |b, _| {
            b.iter(|| merge_archives(black_box(&a), black_box(&b_archive), &spec).unwrap());
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_minhash_signature,
    bench_rank_documents,
    bench_ndcg,
    bench_merge
);
criterion_main!(benches);
