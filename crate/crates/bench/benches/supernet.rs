use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kshot_core::data::DataSpec;
use kshot_core::simplex::{generate_code, SimplexNetParams};
use kshot_core::space::{ArchEncoding, ChannelEncoding};
use kshot_core::supernet::{forward, materialize};
use kshot_core::{SimplexCode, SpaceSpec, Subnet, WeightDictionary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn subnet() -> Subnet {
    Subnet::new(ArchEncoding::new(vec![2, 1, 2]), ChannelEncoding::new(vec![1.0, 0.5, 1.0]))
}

fn merge(c: &mut Criterion) {
    let space = SpaceSpec::default();
    let s = subnet();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("materialize");
    for k in [1, 4, 8, 12] {
        let dict = WeightDictionary::new(&space, k, 0).unwrap();
        let code = SimplexCode::sample_uniform(k, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| materialize(&dict, &space, &s, &code).unwrap())
        });
    }
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let space = SpaceSpec::default();
    let s = subnet();
    let val = DataSpec {
        train_size: 64,
        val_size: 1024,
        ..DataSpec::default()
    }
    .generate()
    .unwrap()
    .1;
    let mut group = c.benchmark_group("code_merge_forward_1024");
    for k in [1, 4, 8] {
        let dict = WeightDictionary::new(&space, k, 0).unwrap();
        let net = SimplexNetParams::new(&space, k, 32, true, 0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| {
                let code = generate_code(&net, &space, &s).unwrap();
                let merged = materialize(&dict, &space, &s, &code).unwrap();
                forward(&merged, &val.x).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, merge, evaluate);
criterion_main!(benches);
