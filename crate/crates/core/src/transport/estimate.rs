use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{boundary_partial_matching, matching_cost, matching_cost_incoming, CostParams, Matching};
use crate::error::{Error, Result};
use crate::geometry::{BoxSpec, Window};
use crate::parallel::map_trials;
use crate::processes::{sample_grid_pair, ProcessModel};
use crate::rng::RngStream;
use crate::stats::{mean_se, MeanSe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// Independent samples, matched optimally after boundary clipping.
    Independent,
    /// Both grids share the lattice shift and are matched cell by cell.
    SharedGrid,
    /// One realization used for both sides (requires equal models).
    Comonotone,
}

impl std::fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Independent => "independent",
            Self::SharedGrid => "shared_grid",
            Self::Comonotone => "comonotone",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub per_volume_mean: f64,
    pub std_error: f64,
    pub trials: usize,
    pub box_side: f64,
    pub p: f64,
}

impl CostEstimate {
    pub fn from_samples(samples: &[f64], box_side: f64, p: f64) -> Self {
        let m = mean_se(samples);
        Self { per_volume_mean: m.mean, std_error: m.se, trials: samples.len(), box_side, p }
    }

    /// `W_p = mean^(1/p)` with a delta-method standard error.
    pub fn w(&self) -> (f64, f64) {
        let w = self.per_volume_mean.max(0.0).powf(1.0 / self.p);
        let se = if w > 0.0 { self.std_error * w / (self.p * self.per_volume_mean) } else { self.std_error.powf(1.0 / self.p) };
        (w, se)
    }
}

/// Estimates along a sequence of boxes, with monotonicity flags (no single
/// limit is chosen).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub coupling: CouplingKind,
    pub estimates: Vec<CostEstimate>,
    pub nonincreasing: bool,
    pub nondecreasing: bool,
}

impl CostProfile {
    fn new(coupling: CouplingKind, estimates: Vec<CostEstimate>) -> Self {
        let v: Vec<f64> = estimates.iter().map(|e| e.per_volume_mean).collect();
        Self {
            coupling,
            nonincreasing: v.windows(2).all(|w| w[1] <= w[0]),
            nondecreasing: v.windows(2).all(|w| w[1] >= w[0]),
            estimates,
        }
    }
}

/// One coupled realization on `b`: every source in `b` with its partner.
pub fn sample_coupled(
    a: &ProcessModel,
    b_model: &ProcessModel,
    coupling: CouplingKind,
    b: &BoxSpec,
    params: &CostParams,
    rng: &mut ChaCha8Rng,
) -> Result<Matching> {
    let d = b.dim();
    match coupling {
        CouplingKind::Comonotone => {
            if a != b_model {
                return Err(Error::IncompatibleCoupling {
                    coupling: coupling.to_string(),
                    reason: "comonotone coupling needs identical models".into(),
                });
            }
            let c = a.sample_with(b, rng)?;
            let coords = c.coords().to_vec();
            Matching::new(d, coords.clone(), coords, Window::Box(b.clone()), Window::Box(b.clone()))
        }
        CouplingKind::SharedGrid => {
            let (xs, ys) = sample_grid_pair(a, b_model, b, rng)?;
            Matching::new(d, xs, ys, Window::Box(b.clone()), Window::WholeSpace)
        }
        CouplingKind::Independent => {
            let xi = a.sample_with(b, rng)?;
            let mut margin = 1.0;
            loop {
                let big = b.grown(2.0 * margin);
                let eta = b_model.sample_with(&big, rng)?;
                match boundary_partial_matching(&xi, &eta, b, params) {
                    Ok((m, _)) => return Ok(m),
                    Err(Error::TooSparse { .. }) if margin < 64.0 * b.side.max(1.0) => margin *= 2.0,
                    Err(e) => return Err(e),
                }
            }
        }
    }
}

/// Monte Carlo cost per volume of a constructed coupling along `boxes`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost_per_volume(
    a: &ProcessModel,
    b: &ProcessModel,
    coupling: CouplingKind,
    boxes: &[f64],
    d: usize,
    params: &CostParams,
    trials: usize,
    stream: &RngStream,
) -> Result<CostProfile> {
    let sampler = |bx: &BoxSpec, rng: &mut ChaCha8Rng| sample_coupled(a, b, coupling, bx, params, rng);
    let est = estimate_with_sampler(&sampler, boxes, d, params, trials, stream)?;
    Ok(CostProfile::new(coupling, est))
}

/// Per-volume cost of matchings drawn by `sampler` on each box.
pub fn estimate_with_sampler<F>(
    sampler: &F,
    boxes: &[f64],
    d: usize,
    params: &CostParams,
    trials: usize,
    stream: &RngStream,
) -> Result<Vec<CostEstimate>>
where
    F: Fn(&BoxSpec, &mut ChaCha8Rng) -> Result<Matching> + Sync,
{
    boxes
        .iter()
        .enumerate()
        .map(|(bi, &n)| {
            let bx = BoxSpec::centered(n, d);
            let fam = stream.substream(bi as u64);
            let vals: Result<Vec<f64>> = map_trials(trials, |t| {
                let mut rng = fam.substream(t as u64).rng();
                let m = sampler(&bx, &mut rng)?;
                Ok(matching_cost(&m, params, &bx) / bx.volume())
            })
            .into_iter()
            .collect();
            Ok(CostEstimate::from_samples(&vals?, n, params.p))
        })
        .collect()
}

/// Glues i.i.d. box matchings along `n Z^d`, shifts by a uniform vector of Λ_n
/// and keeps the pairs with an endpoint in `target`. `sampler` must return
/// matchings whose sources lie in the centred box Λ_n.
pub fn tile_and_shift_coupling<F, R>(sampler: &F, n: f64, target: &BoxSpec, rng: &mut R) -> Result<Matching>
where
    F: Fn(&BoxSpec, &mut R) -> Result<Matching>,
    R: Rng,
{
    let d = target.dim();
    let u: Vec<f64> = (0..d).map(|_| n * (rng.random::<f64>() - 0.5)).collect();
    let tile = BoxSpec::centered(n, d);
    // one spare tile on each side catches targets arriving from outside
    let ranges: Vec<(i64, i64)> = (0..d)
        .map(|i| {
            let lo = ((target.lo(i) - u[i]) / n - 0.5).floor() as i64 - 1;
            let hi = ((target.hi(i) - u[i]) / n + 0.5).ceil() as i64 + 1;
            (lo, hi)
        })
        .collect();
    let mut out = Matching::empty(d);
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        let off: Vec<f64> = (0..d).map(|i| idx[i] as f64 * n + u[i]).collect();
        let m = sampler(&tile, rng)?.translated(&off);
        for (x, y) in m.pairs() {
            if target.contains(x) || target.contains(y) {
                out.push(x, y);
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                out.source_window = Window::Box(target.clone());
                out.target_window = Window::Box(target.clone());
                return Ok(out);
            }
            idx[i] += 1;
            if idx[i] <= ranges[i].1 {
                break;
            }
            idx[i] = ranges[i].0;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtpReport {
    pub outgoing: CostEstimate,
    pub incoming: CostEstimate,
    pub sources_in_window: MeanSe,
    pub targets_in_window: MeanSe,
}

impl MtpReport {
    /// |outgoing - incoming| in units of the combined standard error.
    pub fn z_cost(&self) -> f64 {
        z_score(self.outgoing.per_volume_mean, self.outgoing.std_error, self.incoming.per_volume_mean, self.incoming.std_error)
    }

    pub fn z_count(&self) -> f64 {
        z_score(self.sources_in_window.mean, self.sources_in_window.se, self.targets_in_window.mean, self.targets_in_window.se)
    }
}

pub(crate) fn z_score(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let se = (sa * sa + sb * sb).sqrt();
    if se == 0.0 {
        if a == b { 0.0 } else { f64::INFINITY }
    } else {
        (a - b).abs() / se
    }
}

/// Mass sent out of `window` vs mass received by it, over an ensemble of
/// matchings drawn from a stationary coupling. The two sides are per-trial
/// paired, but reported separately.
pub fn mtp_symmetry(ensemble: &[Matching], window: &BoxSpec, params: &CostParams) -> MtpReport {
    let v = window.volume();
    let out: Vec<f64> = ensemble.iter().map(|m| matching_cost(m, params, window) / v).collect();
    let inc: Vec<f64> = ensemble.iter().map(|m| matching_cost_incoming(m, params, window) / v).collect();
    let ns: Vec<f64> = ensemble.iter().map(|m| m.pairs().filter(|(x, _)| window.contains(x)).count() as f64).collect();
    let nt: Vec<f64> = ensemble.iter().map(|m| m.pairs().filter(|(_, y)| window.contains(y)).count() as f64).collect();
    MtpReport {
        outgoing: CostEstimate::from_samples(&out, window.side, params.p),
        incoming: CostEstimate::from_samples(&inc, window.side, params.p),
        sources_in_window: mean_se(&ns),
        targets_in_window: mean_se(&nt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::DensityFamily;

    #[test]
    fn comonotone_is_zero() {
        let a = ProcessModel::poisson(1.0);
        let prof = estimate_cost_per_volume(&a, &a, CouplingKind::Comonotone, &[2.0, 4.0], 2, &CostParams::default(), 20, &RngStream::new(1, 0)).unwrap();
        for e in &prof.estimates {
            assert_eq!((e.per_volume_mean, e.std_error), (0.0, 0.0));
        }
        let b = ProcessModel::poisson(2.0);
        assert!(estimate_cost_per_volume(&a, &b, CouplingKind::Comonotone, &[2.0], 2, &CostParams::default(), 2, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn shared_grid_second_moment() {
        let a = ProcessModel::LatticeGrid { stationarized: true };
        let b = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 0.5 }, true);
        let prof = estimate_cost_per_volume(&a, &b, CouplingKind::SharedGrid, &[8.0], 1, &CostParams::default(), 4000, &RngStream::new(3, 0)).unwrap();
        let e = prof.estimates[0];
        assert!((e.per_volume_mean - 0.25 / 12.0).abs() < 4.0 * e.std_error, "{e:?}");
        assert!(estimate_cost_per_volume(&a, &ProcessModel::poisson(1.0), CouplingKind::SharedGrid, &[2.0], 1, &CostParams::default(), 2, &RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn independent_is_finite_and_positive() {
        let a = ProcessModel::poisson(1.0);
        let b = ProcessModel::grid(DensityFamily::CosineBump, true);
        let prof = estimate_cost_per_volume(&a, &b, CouplingKind::Independent, &[3.0, 4.0], 2, &CostParams::default(), 30, &RngStream::new(5, 0)).unwrap();
        for e in &prof.estimates {
            assert!(e.per_volume_mean.is_finite() && e.per_volume_mean > 0.0);
        }
    }

    #[test]
    fn tiled_deterministic_pair() {
        // one pair (centre, centre + 0.3 e1) per tile of side 2: per volume cost 0.09 / 2^2
        let sampler = |b: &BoxSpec, _: &mut ChaCha8Rng| {
            let mut m = Matching::empty(2);
            m.push(&[b.center[0], b.center[1]], &[b.center[0] + 0.3, b.center[1]]);
            Ok(m)
        };
        let target = BoxSpec::centered(6.0, 2);
        let mut rng = RngStream::new(0, 0).rng();
        let m = tile_and_shift_coupling(&sampler, 2.0, &target, &mut rng).unwrap();
        let c = matching_cost(&m, &CostParams::default(), &target);
        // 3x3 tiles of side 2 tile the target exactly: 9 sources inside whatever the shift
        assert!((c / target.volume() - 0.09 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn tiled_cost_matches_box_cost() {
        let p2 = CostParams::default();
        let a = ProcessModel::poisson(1.0);
        let b = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 1.0 }, false);
        let n = 2.0;
        let sampler = |bx: &BoxSpec, rng: &mut ChaCha8Rng| sample_coupled(&a, &b, CouplingKind::Independent, bx, &p2, rng);
        let fam = RngStream::new(21, 0);
        let direct: Vec<f64> = (0..1000)
            .map(|t| {
                let mut rng = fam.substream(t).rng();
                let bx = BoxSpec::centered(n, 2);
                matching_cost(&sampler(&bx, &mut rng).unwrap(), &p2, &bx) / bx.volume()
            })
            .collect();
        let target = BoxSpec::centered(1.0, 2);
        let tiled: Vec<f64> = (0..1000)
            .map(|t| {
                let mut rng = fam.substream(10_000 + t).rng();
                matching_cost(&tile_and_shift_coupling(&sampler, n, &target, &mut rng).unwrap(), &p2, &target)
            })
            .collect();
        let (x, y) = (mean_se(&direct), mean_se(&tiled));
        assert!(z_score(x.mean, x.se, y.mean, y.se) < 4.0, "{x:?} {y:?}");
    }

    #[test]
    fn mtp_on_comonotone_is_zero() {
        let p2 = CostParams::default();
        let m = Matching::new(1, vec![0.1, 0.2], vec![0.1, 0.2], Window::WholeSpace, Window::WholeSpace).unwrap();
        let r = mtp_symmetry(&[m.clone(), m], &BoxSpec::centered(1.0, 1), &p2);
        assert_eq!(r.outgoing.per_volume_mean, 0.0);
        assert_eq!(r.incoming.per_volume_mean, 0.0);
    }

    #[test]
    fn w_delta_method() {
        let e = CostEstimate { per_volume_mean: 4.0, std_error: 0.4, trials: 10, box_side: 1.0, p: 2.0 };
        let (w, se) = e.w();
        assert_eq!(w, 2.0);
        assert!((se - 0.1).abs() < 1e-15);
    }
}
