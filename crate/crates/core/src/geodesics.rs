//! Displacement interpolation of matchings and constant-speed diagnostics.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{geo_unchecked, BoxSpec, Configuration, Window};
use crate::parallel::map_trials;
use crate::processes::ProcessModel;
use crate::rng::RngStream;
use crate::stats::mean_se;
use crate::transport::{optimal_matching, optimal_partial_matching, sample_coupled, CostParams, CouplingKind, Matching};

/// `{(1-t)x + t y : (x, y) in m}`, one point per pair, in pair order.
pub fn displacement_interpolate(m: &Matching, t: f64) -> Result<Configuration> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    let mut coords = Vec::with_capacity(m.len() * m.dim());
    for (x, y) in m.pairs() {
        coords.extend_from_slice(&geo_unchecked(x, y, t));
    }
    Ok(Configuration::from_flat_unchecked(m.dim(), coords, Window::WholeSpace))
}

/// Interpolants of one matching at several times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSample {
    pub times: Vec<f64>,
    pub configs: Vec<Configuration>,
    pub matching: Matching,
}

pub fn geodesic_sample(m: &Matching, times: &[f64]) -> Result<GeodesicSample> {
    let configs = times.iter().map(|&t| displacement_interpolate(m, t)).collect::<Result<_>>()?;
    Ok(GeodesicSample { times: times.to_vec(), configs, matching: m.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicRow {
    pub s: f64,
    pub t: f64,
    pub w_hat: f64,
    pub expected: f64,
    pub abs_gap: f64,
    pub std_error: f64,
}

/// Cost per volume of an optimal matching of the points of `from` inside
/// `bx` into `to`.
fn windowed_cost(from: &Configuration, to: &Configuration, bx: &BoxSpec, params: &CostParams) -> Result<f64> {
    let src = from.restrict(bx);
    let m = optimal_partial_matching(&src, to, params)?;
    Ok(m.total_cost(params) / bx.volume())
}

/// `Ŵ_p(P_s, P_t)` from one coupled realization per trial, interpolated at
/// every time and rematched optimally for every pair of times, against
/// `(t - s)·Ŵ_p(P_0, P_1)`. Rows cover all `s < t` in `times`.
#[allow(clippy::too_many_arguments)]
pub fn constant_speed_profile(
    a: &ProcessModel,
    b: &ProcessModel,
    coupling: CouplingKind,
    times: &[f64],
    n: f64,
    d: usize,
    params: &CostParams,
    trials: usize,
    stream: &RngStream,
) -> Result<Vec<GeodesicRow>> {
    let mut ts = times.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if !ts.contains(&0.0) || !ts.contains(&1.0) {
        return Err(invalid("times must include 0 and 1"));
    }
    let bx = BoxSpec::centered(n, d);
    // partners of box points stay within a couple of cells for grid couplings
    let big = bx.grown(4.0);
    let pairs: Vec<(usize, usize)> = (0..ts.len()).flat_map(|i| (i + 1..ts.len()).map(move |j| (i, j))).collect();
    let per_trial: Result<Vec<Vec<f64>>> = map_trials(trials, |trial| {
        let mut rng: ChaCha8Rng = stream.substream(trial as u64).rng();
        let m = sample_coupled(a, b, coupling, &big, params, &mut rng)?;
        let g = geodesic_sample(&m, &ts)?;
        pairs.iter().map(|&(i, j)| windowed_cost(&g.configs[i], &g.configs[j], &bx, params)).collect()
    })
    .into_iter()
    .collect();
    let per_trial = per_trial?;
    let col = |k: usize| -> Vec<f64> { per_trial.iter().map(|r| r[k]).collect() };
    let w_of = |k: usize| {
        let ms = mean_se(&col(k));
        let w = ms.mean.max(0.0).powf(1.0 / params.p);
        let se = if w > 0.0 { ms.se * w / (params.p * ms.mean) } else { 0.0 };
        (w, se)
    };
    let k01 = pairs.iter().position(|&(i, j)| ts[i] == 0.0 && ts[j] == 1.0).expect("0 and 1 present");
    let (w01, se01) = w_of(k01);
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let (w, se) = w_of(k);
            let expected = (ts[j] - ts[i]) * w01;
            GeodesicRow {
                s: ts[i],
                t: ts[j],
                w_hat: w,
                expected,
                abs_gap: (w - expected).abs(),
                std_error: se.hypot((ts[j] - ts[i]) * se01),
            }
        })
        .collect())
}

/// Largest distance from a midpoint to the point at ratio `t` on the segment
/// of its chain, over chains `x -> z -> w` built from optimal matchings
/// `P_0 -> P_t` and `P_t -> P_1` of the interpolants of `m`.
pub fn midpoint_collinearity(m: &Matching, t: f64, params: &CostParams) -> Result<f64> {
    let c0 = m.source_config();
    let ct = displacement_interpolate(m, t)?;
    let c1 = m.target_config();
    let first = optimal_matching(&c0, &ct, params)?;
    let second = optimal_matching(&ct, &c1, params)?;
    // index the second leg by its source
    let mut order: Vec<usize> = (0..second.len()).collect();
    order.sort_by(|&i, &j| crate::geometry::lex_cmp(second.source(i), second.source(j)));
    let find = |z: &[f64]| -> Option<usize> {
        order
            .binary_search_by(|&i| crate::geometry::lex_cmp(second.source(i), z))
            .ok()
            .map(|k| order[k])
    };
    let mut worst: f64 = 0.0;
    for (x, z) in first.pairs() {
        let k = find(z).ok_or_else(|| invalid("midpoint missing from the second leg"))?;
        let w = second.target(k);
        let on = geo_unchecked(x, w, t);
        worst = worst.max(crate::geometry::dist(z, &on));
    }
    Ok(worst)
}
