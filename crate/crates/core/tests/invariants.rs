//! Property tests across module boundaries.

use proptest::prelude::*;

use ppot::dynamics::{evolve_reflected, heated_entropy_1d, ParticleDensity, PdeSettings};
use ppot::geodesics::displacement_interpolate;
use ppot::heat::{heat_neumann_solve, DensityGrid};
use ppot::modification::{boundary_cells, modified_log_density_correction, modify_pair, CrossingRule};
use ppot::parallel::{map_trials, map_trials_sequential, with_workers};
use ppot::processes::{DensityFamily, ProcessModel};
use ppot::transport::{
    clip_to_box, matching_cost, optimal_matching, optimal_partial_matching, sample_coupled, swap_audit, CostParams,
    CouplingKind,
};
use ppot::{BoxSpec, Configuration, RngStream, Window};

fn config(d: usize, coords: Vec<f64>) -> Configuration {
    Configuration::from_flat(d, coords, Window::WholeSpace).unwrap()
}

fn points(d: usize, k: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, d * k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_matchings_admit_no_improving_swap(k in 1usize..7, seed in any::<u64>(), p in 1.0..3.0f64) {
        let mut rng = RngStream::new(seed, 0).rng();
        let bx = BoxSpec::centered(3.0, 2);
        let xi = ProcessModel::Binomial { side: 3.0, k }.sample_with(&bx, &mut rng).unwrap();
        let eta = ProcessModel::Binomial { side: 3.0, k }.sample_with(&bx, &mut rng).unwrap();
        let params = CostParams::new(p).unwrap();
        let m = optimal_matching(&xi, &eta, &params).unwrap();
        prop_assert_eq!(m.len(), k);
        prop_assert_eq!(swap_audit(&m, &params, 1e-9), 0);
        // never worse than pairing in input order
        let naive: f64 = xi.points().zip(eta.points()).map(|(x, y)| params.cost(x, y)).sum();
        prop_assert!(m.total_cost(&params) <= naive + 1e-9);
    }

    #[test]
    fn clipping_shortens_every_pair(xs in points(2, 5, -1.0, 1.0), ys in points(2, 8, -4.0, 4.0)) {
        let params = CostParams::default();
        let bx = BoxSpec::centered(2.0, 2);
        let m = optimal_partial_matching(&config(2, xs), &config(2, ys), &params).unwrap();
        let (c, eta_n) = clip_to_box(&m, &bx).unwrap();
        prop_assert_eq!(eta_n.len(), 5);
        prop_assert!(eta_n.points().all(|z| bx.grown(1e-9).contains(z)));
        for i in 0..m.len() {
            prop_assert!(params.cost(c.source(i), c.target(i)) <= params.cost(m.source(i), m.target(i)) + 1e-12);
        }
    }

    #[test]
    fn interpolation_hits_both_ends(xs in points(2, 4, -2.0, 2.0), ys in points(2, 4, -2.0, 2.0), t in 0.0..=1.0f64) {
        let params = CostParams::default();
        let m = optimal_matching(&config(2, xs), &config(2, ys), &params).unwrap();
        let at = |s: f64| displacement_interpolate(&m, s).unwrap();
        prop_assert_eq!(at(0.0).into_coords(), m.source_config().into_coords());
        prop_assert_eq!(at(1.0).into_coords(), m.target_config().into_coords());
        // the cost from the start grows like t^p along the interpolation
        let mid = at(t);
        let c: f64 = m.source_config().points().zip(mid.points()).map(|(x, z)| params.cost(x, z)).sum();
        prop_assert!((c - t * t * m.total_cost(&params)).abs() <= 1e-9 * (1.0 + c));
    }

    #[test]
    fn reflected_motion_stays_in_box(seed in any::<u64>(), t in 0.0..5.0f64, side in 0.5..4.0f64) {
        let bx = BoxSpec::centered(side, 2);
        let mut rng = RngStream::new(seed, 1).rng();
        let c = ProcessModel::poisson(2.0).sample_with(&bx, &mut rng).unwrap();
        let e = evolve_reflected(&c, &bx, t, &mut rng).unwrap();
        prop_assert_eq!(e.len(), c.len());
        prop_assert!(e.points().all(|p| bx.grown(1e-9).contains(p)));
    }

    #[test]
    fn modification_balances_counts(n in 2usize..5, seed in any::<u64>()) {
        let layer = boundary_cells(n, 2).unwrap();
        let a = ProcessModel::LatticeGrid { stationarized: true };
        let b = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 1.0 }, true);
        let params = CostParams::default();
        let mut rng = RngStream::new(seed, 2).rng();
        let big = BoxSpec::centered(n as f64 + 2.0, 2);
        let m = sample_coupled(&a, &b, CouplingKind::SharedGrid, &big, &params, &mut rng).unwrap();
        for rule in [CrossingRule::First, CrossingRule::Last] {
            let r = modify_pair(&m.source_config(), &m.target_config(), &m, &layer, rule, &params, &mut rng).unwrap();
            let outer = layer.outer();
            prop_assert_eq!(r.xi_tilde.len(), r.crossings.l);
            prop_assert_eq!(r.eta_tilde.len(), r.crossings.l);
            prop_assert!(r.xi_tilde.points().all(|p| outer.grown(1e-9).contains(p)));
            prop_assert!(r.eta_tilde.points().all(|p| outer.grown(1e-9).contains(p)));
            let inner = layer.inner();
            let cr = &r.crossings;
            prop_assert_eq!(cr.interior.len() + cr.k_prime.iter().sum::<usize>(), m.source_config().count_in(&inner));
            prop_assert_eq!(cr.interior.len() + cr.k.iter().sum::<usize>(), m.target_config().count_in(&inner));
        }
    }

    #[test]
    fn density_correction_with_unit_cells(k in prop::collection::vec(0usize..4, 1..8), prob in 0.01..1.0f64) {
        let got = modified_log_density_correction(&k, prob, 1.0).unwrap();
        let lf: f64 = k.iter().map(|&j| (1..=j).map(|i| (i as f64).ln()).sum::<f64>()).sum();
        prop_assert!((got - (k.len() as f64 + lf + prob.ln())).abs() < 1e-10);
    }

    #[test]
    fn heat_flow_keeps_mass_and_lowers_entropy(sigma in 0.05..0.3f64, t in 0.001..0.2f64) {
        let f = DensityFamily::TruncatedGaussian { sigma };
        let bx = BoxSpec::centered(1.0, 1);
        let g = DensityGrid::from_marginal_cdfs(&bx, 200, &[&|x| f.cdf(x)]).unwrap();
        let h = heat_neumann_solve(&g, t, 1e-3).unwrap();
        prop_assert!((h.mass() - 1.0).abs() < 1e-9);
        prop_assert!(h.entropy_wrt_uniform() <= g.entropy_wrt_uniform() + 1e-12);
    }
}

#[test]
fn trial_order_and_values_do_not_depend_on_workers() {
    let bx = BoxSpec::centered(3.0, 2);
    let s = RngStream::new(3, 3);
    let run = |i: usize| {
        let mut rng = s.substream(i as u64).rng();
        let m = sample_coupled(&ProcessModel::poisson(1.0), &ProcessModel::poisson(1.0), CouplingKind::Independent, &bx, &CostParams::default(), &mut rng)
            .unwrap();
        matching_cost(&m, &CostParams::default(), &bx)
    };
    let seq = map_trials_sequential(30, run);
    for w in [1, 2, 5] {
        assert_eq!(with_workers(w, || map_trials(30, run)), seq);
    }
}

#[test]
fn heated_entropy_is_zero_for_uniform() {
    let u = ParticleDensity::uniform(2.0);
    assert!(heated_entropy_1d(&u, 0.1, &PdeSettings::default()).unwrap().abs() < 1e-10);
}
