use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diffkit::potentials::fundamental_solutions;
use diffkit::simulate::{euler_paths, SimConfig, SimModel};
use diffkit::transforms::recurrent_alpha_atom;
use diffkit::{expand_family, ModelFamily, ScaleSpeed};

// Same ensemble under the rayon pool and forced onto one thread. With
// `--no-default-features` both rows run the sequential fallback.
fn ensembles(c: &mut Criterion) {
    let spec = expand_family(&ModelFamily::Brownian).unwrap();
    let ss = Arc::new(ScaleSpeed::new(&spec).unwrap());
    let fp = Arc::new(fundamental_solutions(&spec, &ss, 0.5).unwrap());
    let t = recurrent_alpha_atom(&spec, &ss, &fp, 0.0).unwrap();
    let models = [("bm", SimModel::from_spec(&spec, &ss)), ("alpha-atom", SimModel::from_transform(&t))];

    let mut group = c.benchmark_group("euler_paths");
    group.sample_size(10);
    for (name, model) in &models {
        for (label, threads) in [("parallel", None), ("sequential", Some(1))] {
            let cfg = SimConfig {
                dt: 1e-3,
                n_paths: 2_000,
                seed: 5,
                threads,
                ..SimConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(*name, label), &cfg, |b, cfg| {
                b.iter(|| euler_paths(model, 0.0, 1.0, &[0.0], cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ensembles);
criterion_main!(benches);
