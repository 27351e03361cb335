//! Sequential vs rayon-parallel throughput of the two hot loops:
//! encoding users and propagating embeddings over the graph.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use wsfe::synthetic::{gaussian_features, PlantedClusters};
use wsfe::{
    propagate, EmbeddingTable, Encoder, Exec, Layout, Normalization, NormalizedAdjacency, ProjectionSet,
    ReferenceSet,
};

fn modes() -> Vec<(&'static str, Exec)> {
    let mut modes = vec![("sequential", Exec::Sequential)];
    if cfg!(feature = "parallel") {
        modes.push(("parallel", Exec::Parallel));
    }
    modes
}

fn bench_encode(c: &mut Criterion) {
    let (depth, dim, slices) = (3, 64, 64);
    let reference = ReferenceSet::gaussian(depth, dim, 2, 1.0).unwrap();
    let proj = ProjectionSet::sample(slices, dim, 3);
    let encoder = Encoder::new(reference, proj, Layout::Concat, Normalization::Isometric).unwrap();
    let mut group = c.benchmark_group("encode_all");
    for users in [1_000, 10_000] {
        let feats = gaussian_features(users, depth + 1, dim, 1).unwrap();
        group.throughput(Throughput::Elements(users as u64));
        for (name, exec) in modes() {
            group.bench_with_input(BenchmarkId::new(name, users), &feats, |b, f| {
                b.iter(|| encoder.encode_all(f, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_propagate(c: &mut Criterion) {
    let graph = PlantedClusters {
        num_users: 5_000,
        num_items: 2_000,
        clusters: 10,
        p_in: 0.02,
        p_out: 0.002,
        activity_spread: 0.5,
    }
    .generate(4)
    .unwrap();
    let adj = NormalizedAdjacency::new(&graph);
    let emb = EmbeddingTable::gaussian(graph.num_users() + graph.num_items(), 64, 0.1, 5).unwrap();
    let mut group = c.benchmark_group("propagate");
    group.throughput(Throughput::Elements(graph.num_edges() as u64));
    for (name, exec) in modes() {
        group.bench_function(name, |b| b.iter(|| propagate(&emb, &adj, 3, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_encode, bench_propagate);
criterion_main!(benches);
