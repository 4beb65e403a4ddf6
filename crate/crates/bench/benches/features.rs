use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use depscreen_core::embeddings::stub_embed;
use depscreen_core::lexicon::Lexicon;
use depscreen_core::pipeline::BUILTIN_LEXICON_TEXT;
use depscreen_core::{synthetic, TaskKind};

fn posts() -> Vec<String> {
    let dir = std::env::temp_dir().join(format!("depscreen-bench-{}", std::process::id()));
    let specs = synthetic::write_fixture(&dir, TaskKind::Severity, 100, 7).unwrap();
    let mut texts = Vec::new();
    for spec in specs.values() {
        let mut r = csv::Reader::from_path(&spec.path).unwrap();
        texts.extend(r.records().map(|rec| rec.unwrap()[1].to_string()));
    }
    let _ = std::fs::remove_dir_all(&dir);
    texts
}

fn features(c: &mut Criterion) {
    let texts = posts();
    let lex = Lexicon::parse(BUILTIN_LEXICON_TEXT).unwrap();
    let mut group = c.benchmark_group("features");
    group.throughput(Throughput::Elements(texts.len() as u64));
    group.bench_function("lexicon_extract", |b| {
        b.iter(|| texts.iter().map(|t| lex.extract_features(t)).collect::<Vec<_>>())
    });
    group.bench_function("stub_embed_768", |b| b.iter(|| texts.iter().map(|t| stub_embed(t, 768)).collect::<Vec<_>>()));
    group.finish();
    c.bench_function("lexicon_parse", |b| b.iter(|| Lexicon::parse(BUILTIN_LEXICON_TEXT).unwrap()));
}

criterion_group!(benches, features);
criterion_main!(benches);
