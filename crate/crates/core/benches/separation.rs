use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use latsep::checks::Instance;
use latsep::experiment::{CodecSettings, Models, PriorSettings};
use latsep::oracle::exact_posterior;
use latsep::synth::{generate_dataset, Generator, SourceSpec};
use latsep::{build_counts, encode, separate, Sampler, SeparationConfig, Signal};

fn specs() -> (SourceSpec, SourceSpec) {
    let levels = SourceSpec {
        class_name: "levels".into(),
        generator: Generator::MarkovLevels { levels: vec![-0.8, -0.4, 0.0, 0.4, 0.8] },
        persistence: 0.97,
        amplitude: 1.0,
        seed: 1,
    };
    let tones = SourceSpec {
        class_name: "tones".into(),
        generator: Generator::ToneBank { frequencies: vec![1.0 / 64.0, 1.0 / 32.0], voices: 1 },
        persistence: 0.995,
        amplitude: 0.8,
        seed: 2,
    };
    (levels, tones)
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1-thread", one), ("default", all)]
}

fn benches(c: &mut Criterion) {
    let (a, b) = specs();
    let train = generate_dataset(&a, &b, 200, 256, 1).unwrap();
    let models = Models::train(
        &train,
        &CodecSettings { k: 64, p: 4, seed: 7 },
        &PriorSettings { order: 3, delta: 0.1, shared: false },
    )
    .unwrap();
    let priors = models.priors().unwrap();
    let (x1, x2) = &generate_dataset(&a, &b, 1, 256, 2).unwrap()[0];
    let y = latsep::metrics::mix(x1, x2).unwrap();
    let cfg = SeparationConfig::new(1.0, Sampler::Topk { k: 32 }).with_candidates(64).with_seed(7);
    let inst = Instance::random(0, 3, 4, 2, 0.1).unwrap();
    let corpus: Vec<Signal> = train.iter().map(|(x, _)| x.clone()).collect();

    let mut group = c.benchmark_group("parallel_vs_single");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("separate_topk_64", name), |bench| {
            bench.iter(|| pool.install(|| separate(black_box(&y), priors, &models.likelihood, &models.codec, &cfg).unwrap()))
        });
        group.bench_function(BenchmarkId::new("build_counts_200", name), |bench| {
            bench.iter(|| pool.install(|| build_counts(black_box(&train), &models.codec).unwrap()))
        });
        group.bench_function(BenchmarkId::new("exact_posterior_k3_s4", name), |bench| {
            bench.iter(|| pool.install(|| exact_posterior(&inst.m, inst.priors(), &inst.likelihood, 1.0).unwrap()))
        });
        group.bench_function(BenchmarkId::new("encode_corpus", name), |bench| {
            bench.iter(|| {
                pool.install(|| corpus.iter().map(|x| encode(&models.codec, black_box(x)).unwrap()).collect::<Vec<_>>())
            })
        });
    }
    group.finish();
}

criterion_group!(separation, benches);
criterion_main!(separation);
