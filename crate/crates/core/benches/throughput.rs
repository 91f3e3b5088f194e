//! Parallel-vs-sequential throughput over the three data-parallel hot paths:
//! synthetic sample rendering, one training epoch, and per-pair evaluation
//! scoring.
//!
//! The default build fans the `map` entries out over rayon; the `seq`
//! entries always run the sequential twin, so one report shows the speedup
//! directly. Building with `--no-default-features` makes both identical.

use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use styleseg_core::data::{generate_annotated_sample, Corpus, StyleParams, SynthConfig};
use styleseg_core::evaluation;
use styleseg_core::exec;
use styleseg_core::losses::SelectionRule;
use styleseg_core::training::{self, TrainConfig, TrainMode};

fn synth_cfg(n: usize) -> SynthConfig {
    SynthConfig {
        n_images: n,
        resolution: 64,
        master_seed: 5,
        styles: vec![
            StyleParams {
                margin: 4,
                seed: 1,
                ..StyleParams::identity()
            },
            StyleParams {
                margin: -4,
                seed: 2,
                ..StyleParams::identity()
            },
        ],
        coverage_p: 1.0,
        per_style_coverage: None,
        split_fractions: [0.8, 0.2, 0.0],
        noise_sigma: 0.05,
    }
}

fn memory_corpus(n: usize) -> Corpus {
    let cfg = synth_cfg(n);
    Corpus {
        samples: (0..n).map(|i| generate_annotated_sample(&cfg, i)).collect(),
        manifest: Default::default(),
        warnings: Vec::new(),
        root: PathBuf::new(),
    }
}

fn train_cfg(mode: TrainMode, m: usize) -> TrainConfig {
    TrainConfig {
        mode,
        m,
        epochs: 1,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 1,
        loss_weights: [1.0, 1.0, 1.0],
        mhp_eps: 0.05,
        smooth: 1.0,
        selection: SelectionRule::Soft,
        warmup_epochs: 0,
        resolution: 64,
        base_width: 8,
        n_stages: 3,
        cls_base_width: 8,
        cls_n_stages: 3,
        checkpoint_dir: PathBuf::new(),
    }
}

fn bench_generation(c: &mut Criterion) {
    let cfg = synth_cfg(16);
    let mut group = c.benchmark_group("synthetic_generation");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("map", exec::thread_count()), |b| {
        b.iter(|| exec::map_range(16, |i| generate_annotated_sample(&cfg, i)))
    });
    group.bench_function(BenchmarkId::new("seq", 1), |b| {
        b.iter(|| exec::map_range_seq(16, |i| generate_annotated_sample(&cfg, i)))
    });
    group.finish();
}

fn bench_training_epoch(c: &mut Criterion) {
    let corpus = memory_corpus(16);
    let cfg = train_cfg(TrainMode::StyleSeg, 2);
    let mut group = c.benchmark_group("train_epoch");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("map", exec::thread_count()), |b| {
        b.iter(|| training::train(&corpus, &cfg).unwrap())
    });
    group.finish();
}

fn bench_evaluation(c: &mut Criterion) {
    let corpus = memory_corpus(32);
    let (ckpt, _) = training::train(&corpus, &train_cfg(TrainMode::Naive, 1)).unwrap();
    let samples: Vec<_> = corpus.samples.iter().collect();
    let mut group = c.benchmark_group("evaluate_corpus");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("map", exec::thread_count()), |b| {
        b.iter(|| evaluation::evaluate_corpus(&ckpt.seg, &samples, 0.5).unwrap())
    });
    group.bench_function(BenchmarkId::new("seq", 1), |b| {
        b.iter(|| {
            exec::map_range_seq(samples.len(), |i| {
                let stack = ckpt.seg.forward(samples[i].image.pixels()).unwrap();
                evaluation::records_for_stack(samples[i], &stack, 0.5).unwrap()
            })
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_generation,
    bench_training_epoch,
    bench_evaluation
);
criterion_main!(benches);
