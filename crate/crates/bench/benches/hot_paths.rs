use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use pac_core::env::{coverage_cost, voronoi_assign, LocalMaps};
use pac_core::gcnn::{local_round, ShapeRow};
use pac_core::netsim::{decode_message, encode_message};
use pac_core::policies::build_policy_input;
use pac_core::{AggregatedMessage, Architecture, CommGraph, FeatureVec, IdfSpec, Normalization, PolicyModel, ShapeOperator, Vec2, World};

fn swarm(n: usize, side: f64, seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec2::new(rng.random_range(0.0..side), rng.random_range(0.0..side)))
        .collect()
}

fn coverage(c: &mut Criterion) {
    let world = World::generate(0, &IdfSpec::default()).unwrap();
    let pos = swarm(32, world.side(), 1);
    c.bench_function("coverage_cost 1024x1024, 32 robots", |b| {
        b.iter(|| coverage_cost(black_box(&pos), &world))
    });
    c.bench_function("voronoi_assign 1024x1024, 32 robots", |b| {
        b.iter(|| voronoi_assign(black_box(&pos), &world, None))
    });
}

fn gnn(c: &mut Criterion) {
    let arch = Architecture::default();
    let model = PolicyModel::random(&arch, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let pos = swarm(32, 400.0, 2);
    let graph = CommGraph::build(&pos, 128.0).unwrap();
    let s = ShapeOperator::new(&graph, Normalization::Symmetric);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let feats: Vec<FeatureVec> = (0..32)
        .map(|_| FeatureVec::from_slice(&(0..34).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect();
    let i = (0..32).max_by_key(|&i| graph.degree(i)).unwrap();
    let inbox: Vec<AggregatedMessage> = graph
        .neighbors(i)
        .iter()
        .map(|&j| AggregatedMessage::seed(&model.gnn, &feats[j], j as u32, 0))
        .collect();
    let row = ShapeRow::from_operator(&s, i);
    c.bench_function(&format!("local_round, {} neighbors", inbox.len()), |b| {
        b.iter(|| local_round(&model.gnn, black_box(&feats[i]), &inbox, &row, i as u32, 1).unwrap())
    });

    let msg = local_round(&model.gnn, &feats[i], &inbox, &row, i as u32, 1).unwrap().message;
    let bytes = encode_message(&msg, 0).unwrap();
    c.bench_function("wire encode 870 values", |b| b.iter(|| encode_message(black_box(&msg), 0).unwrap()));
    c.bench_function("wire decode 870 values", |b| b.iter(|| decode_message(black_box(&bytes)).unwrap()));

    let world = World::generate(0, &IdfSpec::default()).unwrap();
    let mut maps = LocalMaps::new(&world);
    let p = Vec2::new(300.0, 300.0);
    maps.sense(p, &world);
    let offsets: Vec<Vec2> = graph.neighbors(i).iter().map(|&j| pos[j] - pos[i]).collect();
    let input = build_policy_input(p, &maps, &world, &offsets, 128.0);
    c.bench_function("policy input 32x32", |b| {
        b.iter(|| build_policy_input(black_box(p), &maps, &world, &offsets, 128.0))
    });
    c.bench_function("cnn_forward 4x32x32", |b| b.iter(|| model.cnn_forward(black_box(&input)).unwrap()));
}

criterion_group!(benches, coverage, gnn);
criterion_main!(benches);
