//! Tree building and forest scoring on the data-parallel core.
//!
//! Each workload runs on the active backend (`par::MODE`). With the
//! `parallel` feature it also runs inside a one-thread pool, which is the
//! baseline the rayon numbers are compared against. Build with
//! `--no-default-features` to time the sequential fallback itself.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use consistency_checker::exec::{ExecHarness, WorkerCommand};
use consistency_checker::gateway::HashedBowEmbedder;
use consistency_checker::par;
use consistency_checker::scoring::{MetricKind, Scorer, SimilarityMetric};
use consistency_checker::transform::{MockChannel, MockTransformer};
use consistency_checker::tree::build_tree;
use consistency_checker::{Anchor, Forest, Node, OperationPair, TaskKind};

const TREES: usize = 10;
const DEPTH: usize = 4;

fn pairs() -> Vec<OperationPair> {
    (0..3)
        .map(|i| OperationPair::new(format!("op{i}"), format!("do {i}"), format!("undo {i}")))
        .collect()
}

fn roots() -> Vec<Node> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    (0..TREES)
        .map(|_| {
            let words: Vec<String> = (0..120).map(|_| format!("w{}", rng.gen_range(0..400))).collect();
            Node::root(words.join(" "), vec![])
        })
        .collect()
}

fn build_forest(roots: &[Node], transformer: &MockTransformer) -> Forest {
    let trees = par::map(roots, |r| {
        build_tree(r.clone(), &pairs(), DEPTH, TaskKind::Translation, transformer).expect("valid tree")
    });
    Forest::new(TaskKind::Translation, trees).expect("uniform forest")
}

fn score_forest(forest: &Forest, metric: MetricKind) -> f64 {
    // translation content never reaches the worker
    let harness = ExecHarness::new(WorkerCommand::new("unused"), Duration::from_secs(2), 1).expect("harness");
    let embedder = HashedBowEmbedder;
    let scorer = Scorer::new(&harness, Some(&embedder));
    let table = scorer
        .forest_table(forest, 3, Anchor::AllChains, SimilarityMetric::new(metric))
        .expect("scores");
    table.forest.iter().sum()
}

/// A place to run a workload, labelled for comparison.
struct Backend {
    label: &'static str,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Backend {
    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(f);
        }
        f()
    }
}

fn backends() -> Vec<Backend> {
    #[cfg_attr(not(feature = "parallel"), allow(unused_mut))]
    let mut out = vec![Backend {
        label: par::MODE,
        #[cfg(feature = "parallel")]
        pool: None,
    }];
    #[cfg(feature = "parallel")]
    out.push(Backend {
        label: "rayon-1-thread",
        pool: Some(rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool")),
    });
    out
}

fn bench_build(c: &mut Criterion) {
    let roots = roots();
    let transformer = MockTransformer::uniform(MockChannel::SeededWordDropout { rate: 0.05, seed: 1 });
    let mut group = c.benchmark_group("build_forest");
    for backend in backends() {
        group.bench_function(BenchmarkId::from_parameter(backend.label), |b| {
            b.iter(|| backend.run(|| black_box(build_forest(&roots, &transformer))))
        });
    }
    group.finish();
}

fn bench_score(c: &mut Criterion) {
    let transformer = MockTransformer::uniform(MockChannel::SeededWordDropout { rate: 0.05, seed: 1 });
    let forest = build_forest(&roots(), &transformer);
    for metric in MetricKind::ALL {
        let mut group = c.benchmark_group(format!("score_forest/{metric}"));
        group.sample_size(10);
        for backend in backends() {
            group.bench_function(BenchmarkId::from_parameter(backend.label), |b| {
                b.iter(|| backend.run(|| black_box(score_forest(&forest, metric))))
            });
        }
        group.finish();
    }
}

criterion_group!(benches, bench_build, bench_score);
criterion_main!(benches);
