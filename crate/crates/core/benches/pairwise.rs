use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use edda::metrics::{levenshtein, pairwise_within, HashedNgramEmbedder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 16] = [
    "the", "plan", "would", "help", "hurt", "families", "voters", "tax", "policy", "never", "always", "senate",
    "climate", "rights", "women", "change",
];

fn texts(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(12..30);
            (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

fn pairwise(c: &mut Criterion) {
    let ep = HashedNgramEmbedder::default();
    let mut group = c.benchmark_group("pairwise_within");
    group.sample_size(10);
    for n in [100, 300] {
        let owned = texts(n, 1);
        let refs: Vec<&str> = owned.iter().map(String::as_str).collect();
        for (name, parallel) in [("sequential", false), ("parallel", true)] {
            group.bench_with_input(BenchmarkId::new(name, n), &refs, |b, refs| {
                b.iter(|| pairwise_within(black_box(refs), &ep, parallel).unwrap())
            });
        }
    }
    group.finish();
}

fn edit_distance(c: &mut Criterion) {
    let owned = texts(2, 2);
    c.bench_function("levenshtein", |b| b.iter(|| levenshtein(black_box(&owned[0]), black_box(&owned[1]))));
}

criterion_group!(benches, pairwise, edit_distance);
criterion_main!(benches);
