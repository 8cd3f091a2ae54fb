//! Trial fan-out on the rayon pool against the plain loop, on the per-trial
//! workload of the cost estimator.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ppot::parallel::{map_trials, map_trials_sequential};
use ppot::processes::ProcessModel;
use ppot::transport::{matching_cost, sample_coupled, CostParams, CouplingKind};
use ppot::{BoxSpec, RngStream};

fn trial(i: usize, bx: &BoxSpec) -> f64 {
    let a = ProcessModel::LatticeGrid { stationarized: true };
    let b = ProcessModel::poisson(1.0);
    let params = CostParams::default();
    let mut rng = RngStream::new(1, 0).substream(i as u64).rng();
    let m = sample_coupled(&a, &b, CouplingKind::Independent, bx, &params, &mut rng).expect("sampling succeeds");
    matching_cost(&m, &params, bx)
}

fn fan_out(c: &mut Criterion) {
    let mut g = c.benchmark_group("cost_trials");
    g.sample_size(10);
    for side in [4.0, 6.0] {
        let bx = BoxSpec::centered(side, 2);
        let trials = 64;
        g.bench_with_input(BenchmarkId::new("sequential", side), &bx, |b, bx| {
            b.iter(|| map_trials_sequential(trials, |i| trial(i, bx)))
        });
        g.bench_with_input(BenchmarkId::new("parallel", side), &bx, |b, bx| b.iter(|| map_trials(trials, |i| trial(i, bx))));
    }
    g.finish();
}

criterion_group!(benches, fan_out);
criterion_main!(benches);
