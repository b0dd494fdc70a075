//! Single-thread against the default pool for the data-parallel hot paths.
//! Built without the `parallel` feature, only the sequential path is timed.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ucahar::synth::{cross_user_benchmark, SynthSpec};
use ucahar::training::{grid_search, GridSpec, SplitSpec, TrainConfig};
use ucahar::model::Model;

fn setup() -> (ucahar::synth::Benchmark, TrainConfig) {
    let spec = SynthSpec::standard(4, 4, 2, 64, 11);
    let bench = cross_user_benchmark(&spec, &SplitSpec::default(), 11).unwrap();
    let cfg = TrainConfig { hidden_size: 32, d_t: 32, max_epochs: 2, batch_size: 64, ..TrainConfig::default() };
    (bench, cfg)
}

fn run_in(threads: Option<usize>, f: impl FnOnce() + Send) {
    #[cfg(feature = "parallel")]
    {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().unwrap().install(f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f();
    }
}

fn pools() -> Vec<(&'static str, Option<usize>)> {
    if ucahar::par::is_parallel() {
        vec![("one_thread", Some(1)), ("default_pool", None)]
    } else {
        vec![("sequential", None)]
    }
}

fn forward_backward(c: &mut Criterion) {
    let (bench, cfg) = setup();
    let model = Model::new(cfg.model_config(&bench.schema, &bench.train[0])).unwrap();
    let batch: Vec<_> = bench.train.iter().take(128).collect();
    let mut g = c.benchmark_group("forward_backward_128");
    for (name, threads) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                run_in(threads, || {
                    let (out, tape) = model.forward_with_tape(&batch).unwrap();
                    std::hint::black_box(model.backward(&tape, out.fused.view(), &out.logits));
                })
            })
        });
    }
    g.finish();
}

fn grid(c: &mut Criterion) {
    let (bench, cfg) = setup();
    let spec = GridSpec { alpha: vec![0.1, 0.5], gamma1: vec![1.0], gamma2: vec![0.5, 1.0], learning_rate: vec![0.03], d_t: vec![16] };
    let mut g = c.benchmark_group("grid_4_trials");
    g.sample_size(10);
    for (name, threads) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_in(threads, || { std::hint::black_box(grid_search(&cfg, &spec, &bench.schema, &bench.train, &bench.val).unwrap()); }))
        });
    }
    g.finish();
}

criterion_group!(benches, forward_backward, grid);
criterion_main!(benches);
