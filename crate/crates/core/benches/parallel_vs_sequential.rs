use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pkcp_core::cohort::{generate_phantom_cohort, PhantomSpec};
use pkcp_core::diagnosis::{composite_sample, extract_features};
use pkcp_core::pkcp::{enumerate_cohort, ExpansionPolicy};
use pkcp_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn spec() -> PhantomSpec {
    PhantomSpec {
        height: 48,
        width: 48,
        radius_max: 12.0,
        ..PhantomSpec::with_counts([20, 20, 20, 20])
    }
}

fn phantom(c: &mut Criterion) {
    let mut g = c.benchmark_group("phantom_generation");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_phantom_cohort(&spec(), exec).unwrap())
        });
    }
    g.finish();
}

fn enumeration(c: &mut Criterion) {
    let cohort = generate_phantom_cohort(&spec(), Execution::Parallel).unwrap();
    let policy = ExpansionPolicy::all_minority();
    let mut g = c.benchmark_group("pkcp_enumeration");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| enumerate_cohort(&cohort.grids, &policy, exec).unwrap())
        });
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let cohort = generate_phantom_cohort(&spec(), Execution::Parallel).unwrap();
    let composites = enumerate_cohort(&cohort.grids, &ExpansionPolicy::default(), Execution::Parallel).unwrap();
    let samples: Vec<_> = composites
        .iter()
        .map(|c| composite_sample(c, 2, c.label.clone()))
        .collect();
    let mut g = c.benchmark_group("feature_extraction");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&samples, extract_features))
        });
    }
    g.finish();
}

criterion_group!(benches, phantom, enumeration, features);
criterion_main!(benches);
