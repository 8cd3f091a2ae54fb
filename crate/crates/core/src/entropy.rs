//! Relative entropy and Fisher information with respect to the Poisson process.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::BoxSpec;
use crate::heat::DensityGrid;
use crate::parallel::map_trials;
use crate::processes::{CountLaw, DensityFamily, LogDensity, ProcessModel};
use crate::quadrature::{adaptive_simpson, tensor_integrate};
use crate::rng::RngStream;
use crate::stats::{mean_se, MeanSe};

const SIMPSON_TOL: f64 = 1e-10;

/// `∫ g log g` over one coordinate.
pub fn g_log_g(f: &DensityFamily) -> f64 {
    match *f {
        DensityFamily::UniformCell { epsilon } => -epsilon.ln(),
        _ => adaptive_simpson(
            &|x| {
                let g = f.g(x);
                if g > 0.0 { g * g.ln() } else { 0.0 }
            },
            -0.5,
            0.5,
            SIMPSON_TOL,
        ),
    }
}

/// `g'^2 / g` with the removable singularity at zeros of `g` taken as a limit.
fn score_density_1d(f: &DensityFamily, x: f64) -> f64 {
    let eval = |x: f64| {
        let g = f.g(x);
        let dg = f.dg(x).unwrap_or(f64::NAN);
        dg * dg / g
    };
    let v = eval(x);
    if v.is_finite() {
        return v;
    }
    let inward = x - 1e-7 * x.signum();
    eval(inward)
}

/// One-coordinate Fisher information `∫ g'^2 / g`.
pub fn fisher_1d(f: &DensityFamily) -> Result<f64> {
    if !f.is_smooth() {
        return Err(Error::NotDifferentiable(format!("{f:?}")));
    }
    Ok(adaptive_simpson(&|x| score_density_1d(f, x), -0.5, 0.5, SIMPSON_TOL))
}

/// `∫_{Λ_1} |∇f|^2 / f` for the product density in dimension `d`.
pub fn fisher_closed_form_grid(f: &DensityFamily, d: usize) -> Result<f64> {
    Ok(d as f64 * fisher_1d(f)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMethod {
    ClosedForm,
    Quadrature,
    KSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherEstimate {
    pub box_side: f64,
    pub fisher_per_volume: f64,
    pub method: FisherMethod,
}

/// Box Fisher information per volume from the count disintegration
/// `Σ_k p_n(k) I(ν_n^k | Leb)`. For the lattice-aligned grid the count is fixed
/// and `ν` is a product over cells, so each cell contributes the tensor
/// quadrature of `|∇f|^2 / f` over Λ_1^d.
pub fn fisher_box(model: &ProcessModel, n: f64, d: usize) -> Result<FisherEstimate> {
    let bx = BoxSpec::centered(n, d);
    let value = match model {
        // the density is constant given the count
        ProcessModel::Poisson { .. } => 0.0,
        ProcessModel::PerturbedGrid { density, .. } => {
            if !density.is_smooth() {
                return Err(Error::NotDifferentiable(format!("{density:?}")));
            }
            let law = model.clone_aligned().count_law(&bx)?;
            let CountLaw::Fixed(k) = law else {
                return Err(invalid("grid count law must be deterministic"));
            };
            let (panels, order) = match d {
                1 => (256, 8),
                2 => (64, 8),
                _ => (32, 8),
            };
            let cell = tensor_integrate(
                &|x| {
                    let f = density.pdf(x);
                    if f <= 0.0 {
                        return 0.0;
                    }
                    let g = density.grad(x).unwrap_or_default();
                    g.iter().map(|v| v * v).sum::<f64>() / f
                },
                d,
                -0.5,
                0.5,
                panels,
                order,
            );
            k as f64 * cell / bx.volume()
        }
        _ => return Err(Error::NotDifferentiable(format!("no Fisher representation for {model:?}"))),
    };
    Ok(FisherEstimate { box_side: n, fisher_per_volume: value, method: FisherMethod::KSum })
}

impl ProcessModel {
    /// The lattice-aligned version used for densities (identity for other models).
    pub fn clone_aligned(&self) -> ProcessModel {
        match self {
            ProcessModel::PerturbedGrid { density, .. } => ProcessModel::grid(*density, false),
            ProcessModel::LatticeGrid { .. } => ProcessModel::LatticeGrid { stationarized: false },
            m => m.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub box_side: f64,
    pub ent_per_volume: f64,
    pub std_error: f64,
    pub trials: usize,
}

fn log_density_samples(model: &ProcessModel, n: f64, d: usize, trials: usize, stream: &RngStream) -> Result<Vec<(usize, f64)>> {
    if !model.has_analytic_density() {
        return Err(Error::NoAnalyticDensity(format!("{model:?}")));
    }
    let m = model.clone_aligned();
    let bx = BoxSpec::centered(n, d);
    map_trials(trials, |t| {
        let c = m.sample(&bx, &stream.substream(t as u64))?;
        match m.log_density_wrt_poisson(&c, &bx)? {
            LogDensity::Finite(v) => Ok((c.len(), v)),
            LogDensity::OutOfSupport => Err(invalid("model sample fell outside its own support")),
        }
    })
    .into_iter()
    .collect()
}

/// Monte Carlo `Ent(P_Λn | Poi_Λn) / n^d`.
pub fn rel_entropy_box(model: &ProcessModel, n: f64, d: usize, trials: usize, stream: &RngStream) -> Result<EntropyEstimate> {
    let bx = BoxSpec::centered(n, d);
    let vals: Vec<f64> = log_density_samples(model, n, d, trials, stream)?
        .into_iter()
        .map(|(_, v)| v / bx.volume())
        .collect();
    let m = mean_se(&vals);
    Ok(EntropyEstimate { box_side: n, ent_per_volume: m.mean, std_error: m.se, trials })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub estimates: Vec<EntropyEstimate>,
    /// running maximum (the supremum form)
    pub running_max: Vec<f64>,
}

pub fn specific_entropy_profile(model: &ProcessModel, boxes: &[f64], d: usize, trials: usize, stream: &RngStream) -> Result<EntropyProfile> {
    let estimates = boxes
        .iter()
        .enumerate()
        .map(|(i, &n)| rel_entropy_box(model, n, d, trials, &stream.substream(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let running_max = estimates
        .iter()
        .scan(f64::NEG_INFINITY, |m, e| {
            *m = m.max(e.ent_per_volume);
            Some(*m)
        })
        .collect();
    Ok(EntropyProfile { estimates, running_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disintegration {
    /// `KL(count law | Poisson(n^d)) / n^d`, exact
    pub number_part: f64,
    /// mean conditional entropy given the count, per volume
    pub conditional_part: MeanSe,
    /// direct estimate of the whole, per volume
    pub total: MeanSe,
}

/// Splits the box entropy into the count part and the conditional part.
pub fn entropy_disintegrate(model: &ProcessModel, n: f64, d: usize, trials: usize, stream: &RngStream) -> Result<Disintegration> {
    let bx = BoxSpec::centered(n, d);
    let law = model.clone_aligned().count_law(&bx)?;
    let poi = CountLaw::Poisson(bx.volume());
    let samples = log_density_samples(model, n, d, trials, stream)?;
    let vol = bx.volume();
    let cond: Vec<f64> = samples
        .iter()
        .map(|&(k, v)| (v - (law.ln_pmf(k) - poi.ln_pmf(k))) / vol)
        .collect();
    let tot: Vec<f64> = samples.iter().map(|&(_, v)| v / vol).collect();
    Ok(Disintegration {
        number_part: law.kl_to_poisson(vol) / vol,
        conditional_part: mean_se(&cond),
        total: mean_se(&tot),
    })
}

/// Per-volume entropy of the mixture `Σ w_i P_i` on Λ_n (models with analytic
/// densities), estimated by sampling the mixture.
pub fn mixture_entropy_box(models: &[ProcessModel], weights: &[f64], n: f64, d: usize, trials: usize, stream: &RngStream) -> Result<EntropyEstimate> {
    if models.len() != weights.len() || models.is_empty() {
        return Err(invalid("one weight per mixture component"));
    }
    let bx = BoxSpec::centered(n, d);
    let vals: Result<Vec<f64>> = map_trials(trials, |t| {
        let s = stream.substream(t as u64);
        let mut rng = s.rng();
        let u: f64 = rand::Rng::random(&mut rng);
        let mut acc = 0.0;
        let j = weights.iter().position(|w| {
            acc += w;
            u < acc
        });
        let j = j.unwrap_or(weights.len() - 1);
        let c = models[j].clone_aligned().sample_with(&bx, &mut rng)?;
        // log Σ w_i exp(l_i), stable
        let ls: Vec<f64> = models
            .iter()
            .zip(weights)
            .map(|(m, w)| Ok(w.ln() + m.clone_aligned().log_density_wrt_poisson(&c, &bx)?.value()))
            .collect::<Result<_>>()?;
        let top = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + ls.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        Ok(lse / bx.volume())
    })
    .into_iter()
    .collect();
    let m = mean_se(&vals?);
    Ok(EntropyEstimate { box_side: n, ent_per_volume: m.mean, std_error: m.se, trials })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarizationBound {
    /// specific entropy of the stationarized model (closed form)
    pub stationarized: f64,
    /// `Ent(base | Poi_Λn) / n^d`
    pub base_per_volume: EntropyEstimate,
}

/// Both sides of `𝓔(stationarized) <= n^{-d} Ent(base | Poi_Λn)` where the
/// left side has a closed form (Poisson bases, lattice-aligned grid bases).
pub fn stationarization_bound(base: &ProcessModel, side: f64, d: usize, trials: usize, stream: &RngStream) -> Result<StationarizationBound> {
    let lhs = match base {
        ProcessModel::Poisson { .. } => base.analytic_specific_entropy(d)?,
        ProcessModel::PerturbedGrid { stationarized: false, .. } if (side - side.round()).abs() < 1e-12 => {
            base.analytic_specific_entropy(d)?
        }
        _ => return Err(Error::NoAnalyticDensity(format!("stationarized {base:?}"))),
    };
    Ok(StationarizationBound { stationarized: lhs, base_per_volume: rel_entropy_box(base, side, d, trials, stream)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// second differences of consecutive triples (uniform time grids)
    pub second_differences: Vec<f64>,
}

/// Entropy relative to the uniform law along the 1D displacement interpolation
/// of two cell-averaged densities on the same interval (quantile transport).
pub fn entropy_along_interpolation_1p(rho0: &DensityGrid, rho1: &DensityGrid, times: &[f64]) -> Result<EntropyCurve> {
    if rho0.dim() != 1 || rho1.dim() != 1 || rho0.lo != rho1.lo || (rho0.volume() - rho1.volume()).abs() > 1e-12 {
        return Err(invalid("interpolation needs two 1D densities on the same interval"));
    }
    rho0.check_normalized()?;
    rho1.check_normalized()?;
    if rho0.values.iter().chain(&rho1.values).any(|&v| v <= 0.0) {
        return Err(invalid("densities must be positive"));
    }
    let length = rho0.volume();
    // Both quantile maps are piecewise linear; between merged CDF breakpoints
    // each density is constant, so the u-integral is an exact finite sum.
    let cums = |g: &DensityGrid| -> Vec<f64> {
        let mut acc = 0.0;
        let mut out: Vec<f64> = g.values.iter().map(|v| { acc += v * g.h; acc }).collect();
        if let Some(last) = out.last_mut() {
            *last = 1.0;
        }
        out
    };
    let (c0, c1) = (cums(rho0), cums(rho1));
    let mut pieces = Vec::new(); // (width in u, ρ0 value, ρ1 value)
    let (mut i, mut j, mut u) = (0usize, 0usize, 0.0f64);
    while i < c0.len() && j < c1.len() {
        let next = c0[i].min(c1[j]);
        if next > u {
            pieces.push((next - u, rho0.values[i], rho1.values[j]));
            u = next;
        }
        if c0[i] <= next {
            i += 1;
        }
        if c1[j] <= next {
            j += 1;
        }
    }
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        // T_t'(u) = (1-t)/ρ0(Q0(u)) + t/ρ1(Q1(u)); Ent = -∫ log T_t' du + log L
        let terms: Vec<f64> = pieces.iter().map(|&(w, a, b)| w * ((1.0 - t) / a + t / b).ln()).collect();
        values.push(-crate::stats::pairwise_sum(&terms) + length.ln());
    }
    let second_differences = values.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
    Ok(EntropyCurve { times: times.to_vec(), values, second_differences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn closed_forms() {
        // ∫(2π sin)^2/(1+cos) = 4π² ∫(1 - cos) = 4π²
        assert!((fisher_closed_form_grid(&DensityFamily::CosineBump, 1).unwrap() - 4.0 * PI * PI).abs() < 1e-7);
        assert!(fisher_closed_form_grid(&DensityFamily::UniformCell { epsilon: 1.0 }, 1).is_err());
        let s = 0.05;
        let gauss = fisher_closed_form_grid(&DensityFamily::TruncatedGaussian { sigma: s }, 1).unwrap();
        assert!((gauss * s * s - 1.0).abs() < 0.02);
        assert_eq!(g_log_g(&DensityFamily::UniformCell { epsilon: 1.0 }), 0.0);
        // ∫(1+cos)log(1+cos) = 1 - log 2 over a period
        assert!((g_log_g(&DensityFamily::CosineBump) - (1.0 - 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn fisher_box_agrees_with_closed_form() {
        for f in [DensityFamily::CosineBump, DensityFamily::TruncatedGaussian { sigma: 0.1 }] {
            for d in 1..=2 {
                let m = ProcessModel::grid(f, true);
                let a = fisher_box(&m, 3.0, d).unwrap().fisher_per_volume;
                let b = fisher_closed_form_grid(&f, d).unwrap();
                assert!((a / b - 1.0).abs() < 5e-3, "{f:?} d={d}: {a} vs {b}");
            }
        }
        assert_eq!(fisher_box(&ProcessModel::poisson(1.0), 4.0, 2).unwrap().fisher_per_volume, 0.0);
        assert!(fisher_box(&ProcessModel::grid(DensityFamily::UniformCell { epsilon: 1.0 }, true), 2.0, 1).is_err());
    }

    #[test]
    fn poisson_entropies() {
        let s = RngStream::new(1, 0);
        let e = rel_entropy_box(&ProcessModel::poisson(1.0), 4.0, 2, 100, &s).unwrap();
        assert_eq!(e.ent_per_volume, 0.0);
        let e = rel_entropy_box(&ProcessModel::poisson(2.0), 4.0, 2, 2000, &s).unwrap();
        assert!((e.ent_per_volume - (2.0 * 2f64.ln() - 1.0)).abs() < 4.0 * e.std_error);
    }

    #[test]
    fn grid_entropy_constant_in_n() {
        let s = RngStream::new(2, 0);
        let m = ProcessModel::grid(DensityFamily::CosineBump, true);
        let want = 1.0 + (1.0 - 2f64.ln());
        let prof = specific_entropy_profile(&m, &[1.0, 2.0, 4.0], 1, 2000, &s).unwrap();
        for e in &prof.estimates {
            assert!((e.ent_per_volume - want).abs() < 4.0 * e.std_error, "{e:?}");
        }
        assert!(prof.running_max.windows(2).all(|w| w[1] >= w[0]));
        let u = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 1.0 }, true);
        let e = rel_entropy_box(&u, 3.0, 2, 10, &s).unwrap();
        assert!((e.ent_per_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disintegration_poisson2() {
        let s = RngStream::new(3, 0);
        let r = entropy_disintegrate(&ProcessModel::poisson(2.0), 1.0, 1, 4000, &s).unwrap();
        assert!((r.number_part - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-12);
        assert!(r.conditional_part.mean.abs() < 1e-12);
        let r = entropy_disintegrate(&ProcessModel::poisson(1.0), 2.0, 1, 10, &s).unwrap();
        assert_eq!((r.number_part, r.conditional_part.mean), (0.0, 0.0));
    }

    #[test]
    fn disintegration_sums_for_grid() {
        let s = RngStream::new(4, 0);
        let m = ProcessModel::grid(DensityFamily::TruncatedGaussian { sigma: 0.2 }, false);
        let r = entropy_disintegrate(&m, 3.0, 2, 3000, &s).unwrap();
        let sum = r.number_part + r.conditional_part.mean;
        assert!((sum - r.total.mean).abs() < 3.0 * r.total.se.max(1e-12) + 1e-9);
        // count part: fixed 9 points vs Poisson(9)
        let want = -crate::processes::poisson_ln_pmf(9.0, 9) / 9.0;
        assert!((r.number_part - want).abs() < 1e-12);
    }

    #[test]
    fn mixture_affinity() {
        let s = RngStream::new(5, 0);
        let models = [ProcessModel::poisson(1.0), ProcessModel::poisson(2.0)];
        let lin = 0.5 * 0.0 + 0.5 * (2.0 * 2f64.ln() - 1.0);
        let mut prev = f64::INFINITY;
        for n in [2.0, 4.0, 8.0] {
            let e = mixture_entropy_box(&models, &[0.5, 0.5], n, 1, 4000, &s.substream(n as u64)).unwrap();
            let gap = lin - e.ent_per_volume;
            // 0 <= lin - mix <= log 2 / n^d
            assert!(gap > -4.0 * e.std_error && gap < 2f64.ln() / n + 4.0 * e.std_error, "n={n} gap={gap}");
            assert!(gap < prev + 4.0 * e.std_error);
            prev = gap;
        }
    }

    #[test]
    fn stationarization_bounds() {
        let s = RngStream::new(6, 0);
        let r = stationarization_bound(&ProcessModel::poisson(2.0), 2.0, 2, 3000, &s).unwrap();
        assert!(r.stationarized <= r.base_per_volume.ent_per_volume + 4.0 * r.base_per_volume.std_error);
        let g = ProcessModel::grid(DensityFamily::CosineBump, false);
        let r = stationarization_bound(&g, 2.0, 1, 3000, &s).unwrap();
        assert!(r.stationarized <= r.base_per_volume.ent_per_volume + 4.0 * r.base_per_volume.std_error);
    }

    fn cosine_grid(cells: usize) -> DensityGrid {
        let f = DensityFamily::CosineBump;
        DensityGrid::from_marginal_cdfs(&BoxSpec::centered(1.0, 1), cells, &[&|x| f.cdf(x)]).unwrap()
    }

    #[test]
    fn interpolation_entropy() {
        let u = DensityGrid::uniform(&BoxSpec::centered(1.0, 1), 500).unwrap();
        let c = cosine_grid(500);
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let flat = entropy_along_interpolation_1p(&c, &c, &times).unwrap();
        assert!(flat.values.iter().all(|v| (v - flat.values[0]).abs() < 1e-12));
        let curve = entropy_along_interpolation_1p(&u, &c, &times).unwrap();
        assert!(curve.values[0].abs() < 1e-12);
        assert!((curve.values[10] - c.entropy_wrt_uniform()).abs() < 1e-12);
        assert!(curve.second_differences.iter().all(|&s| s >= -1e-3));
        assert!(curve.values[5] <= 0.5 * (curve.values[0] + curve.values[10]));
    }
}
