use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use panda_core::auditor::{allocation_count, square_query};
use panda_core::binning::{create_bins, BinMode, Permutation, WorkloadProfile};
use panda_core::cloudstore::{outsource, Owner, OwnerKey};
use panda_core::gen::{generate, GenConfig};
use panda_core::join::{build_join_relations, execute_join, outsource_join, JoinMode};
use panda_core::par;
use panda_core::partitioner::PartitionedRelation;
use panda_core::retrieval::{execute_batch, plan_query};

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn lineitem(rows: usize) -> PartitionedRelation {
    generate(&GenConfig {
        lineitems: rows,
        sensitivity_pct: 20.0,
        ..GenConfig::default()
    })
    .unwrap()
    .lineitem
}

fn outsourcing(c: &mut Criterion) {
    let rel = lineitem(20_000);
    let hist = rel.histogram().unwrap();
    let layout = create_bins(
        &hist,
        BinMode::Base,
        Permutation::Seeded(1),
        &WorkloadProfile::default(),
        false,
    )
    .unwrap();
    let mut g = c.benchmark_group("outsource_20k");
    g.sample_size(10);
    for (name, on) in MODES {
        g.bench_function(name, |b| {
            par::set_parallel(on);
            b.iter(|| {
                let mut l = layout.clone();
                let mut owner = Owner::new(OwnerKey::from_master([1; 32]));
                outsource(&mut owner, &rel, &mut [&mut l]).unwrap()
            })
        });
    }
    g.finish();
}

fn selections(c: &mut Criterion) {
    let rel = lineitem(20_000);
    let hist = rel.histogram().unwrap();
    let mut layout = create_bins(
        &hist,
        BinMode::Base,
        Permutation::Seeded(1),
        &WorkloadProfile::default(),
        false,
    )
    .unwrap();
    let mut owner = Owner::new(OwnerKey::from_master([2; 32]));
    let store = outsource(&mut owner, &rel, &mut [&mut layout]).unwrap();
    let plans: Vec<_> = hist
        .entries
        .keys()
        .take(200)
        .map(|w| plan_query(&owner, &rel.name, &layout, w).unwrap())
        .collect();
    let mut g = c.benchmark_group("select_batch_200");
    g.sample_size(10);
    for (name, on) in MODES {
        g.bench_function(name, |b| {
            par::set_parallel(on);
            b.iter(|| execute_batch(&plans, &store, &owner))
        });
    }
    g.finish();
}

fn allocations(c: &mut Criterion) {
    let q = square_query(9).unwrap();
    let mut g = c.benchmark_group("allocation_count_n9");
    g.sample_size(10);
    for (name, on) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &q, |b, q| {
            par::set_parallel(on);
            b.iter(|| allocation_count(9, std::slice::from_ref(q)).unwrap())
        });
    }
    g.finish();
}

fn joins(c: &mut Criterion) {
    let data = generate(&GenConfig {
        lineitems: 20_000,
        sensitivity_pct: 20.0,
        ..GenConfig::default()
    })
    .unwrap();
    let parts = build_join_relations(
        &data.orders,
        &data.lineitem,
        "o_orderkey",
        "l_orderkey",
        JoinMode::ForeignKey,
    )
    .unwrap();
    let mut owner = Owner::new(OwnerKey::from_master([3; 32]));
    let mut store = owner.create_store().unwrap();
    let tables = outsource_join(&mut owner, &mut store, &parts).unwrap();
    let mut g = c.benchmark_group("join_orders_lineitem_20k");
    g.sample_size(10);
    for (name, on) in MODES {
        g.bench_function(name, |b| {
            par::set_parallel(on);
            b.iter(|| execute_join(&tables, &store, &owner, None).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, outsourcing, selections, allocations, joins);
criterion_main!(benches);
