//! Parallel vs sequential collection throughput.
//!
//! The work item is the real hot loop: generate a module from its seed and
//! roll four policies over it. `map_ordered` uses the rayon pool (with the
//! default `parallel` feature), `map_ordered_seq` is the reference path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bcmax::baselines::{AlwaysInline, NeverInline, SmallCallee, UniqueCallee};
use bcmax::mdp::{rollout, Context, CorpusSpec, Policy};
use bcmax::par;
use bcmax::sim::{EnvParams, InlineSim};

fn collect_sizes(contexts: &[Context], env: &InlineSim, parallel: bool) -> f64 {
    let small = SmallCallee { threshold: 6.0 };
    let policies: [&(dyn Policy + Sync); 4] = [&NeverInline, &AlwaysInline, &small, &UniqueCallee];
    let per_context = |ctx: &Context| -> f64 {
        policies
            .iter()
            .map(|p| rollout(env, *p, ctx).size)
            .fold(f64::INFINITY, f64::min)
    };
    let best = if parallel {
        par::map_ordered(contexts, per_context)
    } else {
        par::map_ordered_seq(contexts, per_context)
    };
    best.iter().sum()
}

fn bench_collection(c: &mut Criterion) {
    let spec = CorpusSpec {
        n_contexts: 256,
        master_seed: 2024,
        env: EnvParams {
            function_count: (8, 24),
            ..EnvParams::default()
        },
    };
    let env = InlineSim::new(spec.env.clone()).unwrap();
    let contexts = spec.contexts();

    let mut group = c.benchmark_group("collect_best_of_roster");
    for (label, parallel) in [("parallel", true), ("sequential", false)] {
        group.bench_with_input(
            BenchmarkId::from_parameter(label),
            &parallel,
            |b, &parallel| b.iter(|| collect_sizes(&contexts, &env, parallel)),
        );
    }
    group.finish();
}

criterion_group!(benches, bench_collection);
criterion_main!(benches);
