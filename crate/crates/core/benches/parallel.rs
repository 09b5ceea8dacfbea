use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use perishability::config::Config;
use perishability::corpus::{slice_periods, PeriodId};
use perishability::pipeline::{prepare_topic, run_training_grid};
use perishability::synth::{generate_corpus, CorpusSpec, DriftProcess, RandomChain};
use perishability::theory::{offload_ordering_property, EquivalenceModel, TrialConfig};
use perishability::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn training_grid(c: &mut Criterion) {
    let cfg = Config {
        min_period_words: 40_000,
        dev_min_words: 5_000,
        test_min_words: 5_000,
        ladder_top: 24_000,
        ladder_floor: 3_000,
        ..Config::default()
    };
    let first: PeriodId = "2012-10".parse().unwrap();
    let spec = CorpusSpec {
        topic: "bench".into(),
        periods: (0..4).map(|k| first.offset(k)).collect(),
        words_per_period: 40_000,
        words_per_document: 200,
    };
    let process = DriftProcess::random(&RandomChain::default(), 0.5, 1).unwrap();
    let buckets = slice_periods(generate_corpus(&process, &spec), cfg.min_period_words).unwrap();
    let prepared = prepare_topic("bench", &buckets, &cfg).unwrap();

    let mut group = c.benchmark_group("training_grid");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_training_grid(&prepared, &cfg, exec))
        });
    }
    group.finish();
}

fn ordering_trials(c: &mut Criterion) {
    let high = EquivalenceModel::exponential(0.3);
    let low = EquivalenceModel::exponential(0.1);
    let cfg = TrialConfig {
        trials: 500,
        ..TrialConfig::default()
    };
    let mut group = c.benchmark_group("ordering_trials");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| offload_ordering_property(&high, &low, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, training_grid, ordering_trials);
criterion_main!(benches);
