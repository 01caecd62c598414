//! Compares the data-parallel map path against the sequential fallback on
//! the two hot corpus loops: tokenizing articles into chunks and counting
//! n-grams. With `--no-default-features` both sides run serially.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use am_forge::dataset::stats::words;
use am_forge::par;
use am_forge::tokenizer::{train_subword, TokenizerModel};

fn synthetic_corpus(articles: usize, sentences: usize) -> Vec<String> {
    let lexicon = [
        "laser", "powder", "bed", "fusion", "melt", "pool", "depth", "width", "layer",
        "anomaly", "spatter", "defect", "warping", "manufacturing", "additive", "process",
    ];
    (0..articles)
        .map(|a| {
            let mut text = String::new();
            for s in 0..sentences {
                for w in 0..12 {
                    text.push_str(lexicon[(a * 31 + s * 7 + w) % lexicon.len()]);
                    text.push(' ');
                }
                text.push('\n');
            }
            text
        })
        .collect()
}

fn tokenizer() -> TokenizerModel {
    let corpus: Vec<(&str, u64)> = [
        ("laser", 9),
        ("powder", 8),
        ("melt", 8),
        ("pool", 7),
        ("layer", 6),
        ("process", 5),
    ]
    .to_vec();
    TokenizerModel::with_default_specials(train_subword(corpus, 60))
}

fn bench_encode_map(c: &mut Criterion) {
    let articles = synthetic_corpus(64, 120);
    let model = tokenizer();
    let mut group = c.benchmark_group("encode_articles");
    group.bench_function("data_parallel", |b| {
        b.iter_batched(
            || articles.clone(),
            |articles| par::map(&articles, |text| model.encode(text)),
            BatchSize::SmallInput,
        )
    });
    group.bench_function("serial", |b| {
        b.iter_batched(
            || articles.clone(),
            |articles| par::map_serial(&articles, |text| model.encode(text)),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn count_bigrams(text: &str) -> usize {
    let tokens = words(text);
    tokens.windows(2).count()
}

fn bench_ngram_map(c: &mut Criterion) {
    let articles = synthetic_corpus(128, 200);
    let mut group = c.benchmark_group("bigram_counts");
    group.bench_function("data_parallel", |b| {
        b.iter(|| par::map(&articles, |text| count_bigrams(text)))
    });
    group.bench_function("serial", |b| {
        b.iter(|| par::map_serial(&articles, |text| count_bigrams(text)))
    });
    group.finish();
}

criterion_group!(benches, bench_encode_map, bench_ngram_map);
criterion_main!(benches);
