use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ecasim::engine::ScenarioConfig;
use ecasim::mac::ProtocolVariant;
use ecasim::replicate::{replication_configs, run_all, Execution};

fn replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for (name, variant, n) in [
        ("ca-32", ProtocolVariant::csma_ca(), 32),
        ("eca-hys-fs-32", ProtocolVariant::eca_hys_fs(), 32),
    ] {
        let base = ScenarioConfig {
            duration_s: 5.0,
            ..ScenarioConfig::homogeneous(n, variant)
        };
        let configs = replication_configs(&base, 8);
        for (mode, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(mode, name), &configs, |b, configs| {
                b.iter(|| run_all(configs, execution))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
