use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use pathcache::delivery::{transfer_time, LinkRate};
use pathcache::{run_scenario, DeploymentMode, NodeId};
use pathcache_bench::{preset, ref60};

fn full_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("run_scenario");
    g.sample_size(10);
    for mode in [DeploymentMode::Legacy, DeploymentMode::EdgeOnly, DeploymentMode::EdgePlusCore] {
        let cfg = preset(mode, 1000);
        g.bench_with_input(BenchmarkId::from_parameter(mode.as_str()), &cfg, |b, cfg| {
            b.iter(|| run_scenario(black_box(cfg)).unwrap())
        });
    }
    g.finish();
}

fn routing(c: &mut Criterion) {
    let t = ref60();
    let clients = t.clients();
    let gw = t.gateway();
    c.bench_function("route_all_clients", |b| {
        b.iter(|| {
            clients
                .iter()
                .map(|&n| t.route(black_box(n), gw).unwrap().hops())
                .sum::<usize>()
        })
    });
    c.bench_function("route_single", |b| b.iter(|| t.route(black_box(NodeId(30)), gw).unwrap()));
}

fn transfers(c: &mut Criterion) {
    let links: Vec<LinkRate> = [1e9, 1e8, 1e8, 1e7]
        .iter()
        .map(|&rate| LinkRate { rate, latency: 0.001 })
        .collect();
    c.bench_function("transfer_time", |b| {
        b.iter(|| transfer_time(black_box(4_000_000), black_box(&links), 1e9).unwrap())
    });
}

criterion_group!(benches, full_runs, routing, transfers);
criterion_main!(benches);
