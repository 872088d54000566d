//! Sequential vs. rayon execution of the data-parallel hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use freemark_core::attacks::{forge_keys_with, forged_key_bers, ForgedAlpha, ForgedKeySpec};
use freemark_core::host::{mean_activation_with, HostConfig};
use freemark_core::keygen::{generate_keys, KeyGenConfig, WatermarkVector};
use freemark_core::numeric::SeededRng;
use freemark_core::par::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench(c: &mut Criterion) {
    let host = HostConfig::default().build().unwrap();
    let model = &host.trained.checkpoint;
    let b = WatermarkVector::random(512, &mut SeededRng::new(1)).unwrap();
    let keys = generate_keys(model, &host.trigger, 1, &b, &KeyGenConfig::default())
        .unwrap()
        .keys;
    let spec = ForgedKeySpec {
        count: 200,
        seed: 5,
        bits: keys.bits(),
        width: keys.width(),
    };
    let forged = forge_keys_with(Exec::Sequential, &spec).unwrap();

    let mut g = c.benchmark_group("forge_keys");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| forge_keys_with(exec, &spec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("forged_key_bers");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| {
                forged_key_bers(model, &host.trigger, &keys, &b, &forged, ForgedAlpha::Genuine, exec).unwrap()
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("mean_activation");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| mean_activation_with(exec, model, &host.trigger, 1).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
