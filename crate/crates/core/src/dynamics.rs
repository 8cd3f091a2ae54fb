//! Brownian dynamics of configurations, free and reflected in a box, and the
//! checks built on them: EVI on fixed-k boxes and at the stationary level,
//! entropy decay, contraction and HWI.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::entropy::fisher_closed_form_grid;
use crate::error::{invalid, Error, Result};
use crate::geometry::{dist_sq, fold_reflect, BoxSpec, Configuration, Window};
use crate::heat::{heat_neumann_solve, DensityGrid};
use crate::parallel::map_trials;
use crate::processes::{heat_margin, DensityFamily, ProcessModel};
use crate::rng::RngStream;
use crate::stats::{mean_se, MeanSe};
use crate::transport::assignment;
use crate::transport::{
    boundary_partial_matching, estimate_cost_per_volume, matching_cost, optimal_partial_matching, sample_coupled,
    CostEstimate, CostParams, CouplingKind, Matching,
};

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange(t))
    }
}

fn gaussian_shift<R: Rng + ?Sized>(coords: &mut [f64], t: f64, rng: &mut R) {
    let s = t.sqrt();
    for x in coords {
        let z: f64 = StandardNormal.sample(rng);
        *x += s * z;
    }
}

/// Moves every point by an independent centred Gaussian with coordinate variance `t`.
pub fn evolve_free<R: Rng + ?Sized>(c: &Configuration, t: f64, rng: &mut R) -> Result<Configuration> {
    check_time(t)?;
    let mut coords = c.coords().to_vec();
    if t > 0.0 {
        gaussian_shift(&mut coords, t, rng);
    }
    Ok(Configuration::from_flat_unchecked(c.dim(), coords, Window::WholeSpace))
}

/// Copy of `bx` (translated along `side·Z^d`) that contains `x`, as an offset.
fn anchor_of(bx: &BoxSpec, x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| bx.side * ((xi - bx.center[i]) / bx.side).round())
        .collect()
}

/// Brownian motion reflected in the copy of `bx` holding each point: the
/// free endpoint is folded back, which gives the reflected law at time `t`
/// exactly.
pub fn evolve_reflected<R: Rng + ?Sized>(c: &Configuration, bx: &BoxSpec, t: f64, rng: &mut R) -> Result<Configuration> {
    check_time(t)?;
    if c.dim() != bx.dim() {
        return Err(Error::DimensionMismatch { expected: bx.dim(), got: c.dim() });
    }
    let d = c.dim();
    let mut out = Vec::with_capacity(c.coords().len());
    let mut p = vec![0.0; d];
    for x in c.points() {
        let anchor = anchor_of(bx, x);
        p.copy_from_slice(x);
        if t > 0.0 {
            gaussian_shift(&mut p, t, rng);
        }
        out.extend_from_slice(&fold_reflect(bx, &anchor, &p)?);
    }
    let window = if c.points().all(|x| bx.contains(x)) { Window::Box(bx.clone()) } else { Window::WholeSpace };
    Ok(Configuration::from_flat_unchecked(d, out, window))
}

fn reflect_coords(bx: &BoxSpec, coords: &mut [f64], noise: &[f64], scale: f64) {
    let d = bx.dim();
    for (p, z) in coords.chunks_exact_mut(d).zip(noise.chunks_exact(d)) {
        for i in 0..d {
            let c = bx.center[i];
            p[i] = c + crate::geometry::triangle_wave(p[i] + scale * z[i] - c, bx.side);
        }
    }
}

/// One coordinate of a single-particle density on the centred box Λ_side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Uniform,
    /// `family` on the unit cell starting `offset` above the lower wall.
    OnCell { family: DensityFamily, offset: f64 },
}

/// Product density of one particle in Λ_side with the same marginal on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleDensity {
    pub side: f64,
    pub marginal: Marginal,
}

impl ParticleDensity {
    pub fn uniform(side: f64) -> Self {
        Self { side, marginal: Marginal::Uniform }
    }

    pub fn on_cell(side: f64, family: DensityFamily, offset: f64) -> Self {
        Self { side, marginal: Marginal::OnCell { family, offset } }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side > 0.0) || !self.side.is_finite() {
            return Err(invalid(format!("box side must be positive, got {}", self.side)));
        }
        if let Marginal::OnCell { family, offset } = self.marginal {
            family.validate()?;
            if !(0.0..=self.side - 1.0).contains(&offset) {
                return Err(invalid(format!("cell offset {offset} does not fit in a box of side {}", self.side)));
            }
        }
        Ok(())
    }

    pub fn bx(&self, d: usize) -> BoxSpec {
        BoxSpec::centered(self.side, d)
    }

    fn lo(&self) -> f64 {
        -0.5 * self.side
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self.marginal {
            Marginal::Uniform => ((x - self.lo()) / self.side).clamp(0.0, 1.0),
            Marginal::OnCell { family, offset } => family.cdf(x - (self.lo() + offset + 0.5)),
        }
    }

    fn sample_coord<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.marginal {
            Marginal::Uniform => self.lo() + self.side * rng.random::<f64>(),
            Marginal::OnCell { family, offset } => self.lo() + offset + 0.5 + family.sample_coord(rng),
        }
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, d: usize, rng: &mut R, out: &mut Vec<f64>) {
        for _ in 0..d {
            out.push(self.sample_coord(rng));
        }
    }

    /// Cell averages of the one-axis marginal.
    pub fn grid_1d(&self, cells: usize) -> Result<DensityGrid> {
        self.validate()?;
        DensityGrid::from_marginal_cdfs(&self.bx(1), cells, &[&|x| self.cdf(x)])
    }
}

/// Numerical settings of the heat-equation oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeSettings {
    /// cells per unit length
    pub cells_per_unit: usize,
    pub dt: f64,
}

impl Default for PdeSettings {
    fn default() -> Self {
        Self { cells_per_unit: 1000, dt: 1e-4 }
    }
}

impl PdeSettings {
    fn cells(&self, side: f64) -> usize {
        ((side * self.cells_per_unit as f64).round() as usize).max(2)
    }
}

/// `Ent(ρ_t | uniform)` of the one-axis marginal after reflected heat flow.
pub fn heated_entropy_1d(p: &ParticleDensity, t: f64, pde: &PdeSettings) -> Result<f64> {
    check_time(t)?;
    let g = p.grid_1d(pde.cells(p.side))?;
    Ok(heat_neumann_solve(&g, t, pde.dt)?.entropy_wrt_uniform())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    HoldsWithinCi,
    Violated,
}

impl Verdict {
    /// Violated only below `-4` standard errors.
    pub fn from_slack(slack: f64, se: f64) -> Self {
        if slack >= 0.0 {
            Self::Holds
        } else if slack >= -4.0 * se {
            Self::HoldsWithinCi
        } else {
            Self::Violated
        }
    }

    pub fn is_violated(&self) -> bool {
        matches!(self, Self::Violated)
    }
}

/// One time of a fixed-k EVI check. Quantities are per box (not per volume).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EviReport {
    pub t: f64,
    pub w2_before: MeanSe,
    pub w2_after: MeanSe,
    pub ent_source_after: MeanSe,
    pub ent_target: MeanSe,
    /// `2t(Ent(R) - Ent(S_t P)) - (W²_after - W²_before)`, paired per trial
    pub slack: MeanSe,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EviSettings {
    /// configurations per empirical measure
    pub samples: usize,
    pub trials: usize,
    pub pde: PdeSettings,
}

impl Default for EviSettings {
    fn default() -> Self {
        Self { samples: 256, trials: 100, pde: PdeSettings::default() }
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Squared cost between two unlabeled k-point configurations.
fn config_cost(x: &[f64], y: &[f64], d: usize, perms: &[Vec<usize>]) -> f64 {
    perms
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist_sq(&x[i * d..(i + 1) * d], &y[j * d..(j + 1) * d])).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Empirical `W²` between two equal-size samples of k-point configurations.
fn empirical_w2(a: &[f64], b: &[f64], k: usize, d: usize, perms: &[Vec<usize>]) -> Result<f64> {
    let stride = k * d;
    let m = a.len() / stride;
    if k == 1 && d == 1 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / m as f64);
    }
    let mut cost = Vec::with_capacity(m * m);
    for x in a.chunks_exact(stride) {
        for y in b.chunks_exact(stride) {
            cost.push(config_cost(x, y, d, perms));
        }
    }
    let cols = assignment::solve(&cost, m, m, m.max(assignment::DEFAULT_CAP))?;
    Ok(cols.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum::<f64>() / m as f64)
}

/// EVI between the laws of `k` i.i.d. particles with densities `p` and `r`
/// in the box, under reflected Brownian motion. Both transport terms use the
/// same samples at every time; entropies come from the heat-equation oracle.
pub fn evi_check_box_k(
    p: &ParticleDensity,
    r: &ParticleDensity,
    k: usize,
    d: usize,
    times: &[f64],
    settings: &EviSettings,
    stream: &RngStream,
) -> Result<Vec<EviReport>> {
    p.validate()?;
    r.validate()?;
    if p.side != r.side {
        return Err(invalid("source and reference densities live on different boxes"));
    }
    if !(1..=5).contains(&k) {
        return Err(invalid(format!("k must lie in 1..=5, got {k}")));
    }
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    for &t in times {
        check_time(t)?;
    }
    let bx = p.bx(d);
    let m = settings.samples;
    let perms = permutations(k);
    let per_trial: Result<Vec<(f64, Vec<f64>)>> = map_trials(settings.trials, |trial| {
        let mut rng = stream.substream(trial as u64).rng();
        let mut xs = Vec::with_capacity(m * k * d);
        let mut ys = Vec::with_capacity(m * k * d);
        for _ in 0..m * k {
            p.sample_point(d, &mut rng, &mut xs);
        }
        for _ in 0..m * k {
            r.sample_point(d, &mut rng, &mut ys);
        }
        let noise: Vec<f64> = (0..xs.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let before = empirical_w2(&xs, &ys, k, d, &perms)?;
        let after = times
            .iter()
            .map(|&t| {
                let mut h = xs.clone();
                reflect_coords(&bx, &mut h, &noise, t.sqrt());
                empirical_w2(&h, &ys, k, d, &perms)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((before, after))
    })
    .into_iter()
    .collect();
    let per_trial = per_trial?;
    let scale = (k * d) as f64;
    let ent_r = match r.marginal {
        Marginal::Uniform => 0.0,
        _ => scale * heated_entropy_1d(r, 0.0, &settings.pde)?,
    };
    let before: Vec<f64> = per_trial.iter().map(|(b, _)| *b).collect();
    times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let ent_p = scale * heated_entropy_1d(p, t, &settings.pde)?;
            let after: Vec<f64> = per_trial.iter().map(|(_, a)| a[ti]).collect();
            let slack: Vec<f64> = per_trial
                .iter()
                .map(|(b, a)| 2.0 * t * (ent_r - ent_p) - (a[ti] - b))
                .collect();
            let s = mean_se(&slack);
            Ok(EviReport {
                t,
                w2_before: mean_se(&before),
                w2_after: mean_se(&after),
                ent_source_after: MeanSe::exact(ent_p),
                ent_target: MeanSe::exact(ent_r),
                slack: s,
                verdict: Verdict::from_slack(s.mean, s.se),
            })
        })
        .collect()
}

/// Entropy of the one-axis marginal along the reflected heat flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub nonincreasing: bool,
    /// strictly decreasing while above the rounding floor `1e-10`
    pub strictly_decreasing: bool,
    /// `-(log e_j - log e_{j-1}) / (t_j - t_{j-1})` over the last two positive values
    pub late_rate: Option<f64>,
}

pub fn entropy_decay_curve(p: &ParticleDensity, times: &[f64], pde: &PdeSettings) -> Result<DecayCurve> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times must be strictly increasing"));
    }
    let mut g = p.grid_1d(pde.cells(p.side))?;
    let mut now = 0.0;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        check_time(t)?;
        g = heat_neumann_solve(&g, t - now, pde.dt)?;
        now = t;
        values.push(g.entropy_wrt_uniform());
    }
    let nonincreasing = values.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let strictly_decreasing = values.windows(2).all(|w| w[1] < w[0] || w[0] < 1e-10);
    let pos: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 1e-13).collect();
    let late_rate = match pos.as_slice() {
        [.., a, b] => Some(-(values[*b].ln() - values[*a].ln()) / (times[*b] - times[*a])),
        _ => None,
    };
    Ok(DecayCurve { times: times.to_vec(), values, nonincreasing, strictly_decreasing, late_rate })
}

/// Observed order of the heat solver from three meshes refined by 2 with
/// `dt` proportional to `h`: `log2(|u_h - u_{h/2}| / |u_{h/2} - u_{h/4}|)`,
/// differences taken on the coarsest mesh.
pub fn pde_self_convergence(p: &ParticleDensity, t: f64, coarse_cells: usize) -> Result<f64> {
    check_time(t)?;
    let sols = (0..3)
        .map(|j| {
            let cells = coarse_cells << j;
            let h = p.side / cells as f64;
            heat_neumann_solve(&p.grid_1d(cells)?, t, h)
        })
        .collect::<Result<Vec<_>>>()?;
    let e1 = sols[0].l1_distance(&sols[1].coarsen(2)?)?;
    let e2 = sols[0].l1_distance(&sols[2].coarsen(4)?)? - e1;
    let e2 = e2.abs().max(sols[1].coarsen(2)?.l1_distance(&sols[2].coarsen(4)?)?);
    if !(e1 > 0.0) || !(e2 > 0.0) {
        return Err(invalid("self-convergence differences vanished"));
    }
    Ok((e1 / e2).log2())
}

/// L¹ distance between the histogram of reflected single-particle samples
/// and the heat-equation solution, both on `bins` equal bins.
pub fn reflected_marginal_l1(p: &ParticleDensity, t: f64, samples: usize, bins: usize, pde: &PdeSettings, stream: &RngStream) -> Result<f64> {
    let bx = p.bx(1);
    let cells = pde.cells(p.side);
    let exact = heat_neumann_solve(&p.grid_1d(cells)?, t, pde.dt)?.rebin_1d(bins)?;
    const CHUNK: usize = 10_000;
    let chunks = samples.div_ceil(CHUNK);
    let counts: Vec<Vec<u64>> = map_trials(chunks, |c| {
        let mut rng = stream.substream(c as u64).rng();
        let size = CHUNK.min(samples - c * CHUNK);
        let mut xs = Vec::with_capacity(size);
        for _ in 0..size {
            p.sample_point(1, &mut rng, &mut xs);
        }
        let noise: Vec<f64> = (0..size).map(|_| StandardNormal.sample(&mut rng)).collect();
        reflect_coords(&bx, &mut xs, &noise, t.sqrt());
        let mut h = vec![0u64; bins];
        for x in xs {
            let j = (((x - bx.lo(0)) / p.side) * bins as f64).floor() as usize;
            h[j.min(bins - 1)] += 1;
        }
        h
    });
    let width = p.side / bins as f64;
    let l1 = (0..bins)
        .map(|j| {
            let c: u64 = counts.iter().map(|h| h[j]).sum();
            (c as f64 / (samples as f64 * width) - exact[j]).abs() * width
        })
        .sum();
    Ok(l1)
}

/// How the two marginals of a coupling are driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    /// matched points share their Brownian increments
    #[default]
    Synchronous,
    /// independent increments, then an optimal rematch
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub t: f64,
    pub box_side: f64,
    pub noise: NoiseCoupling,
    pub before: CostEstimate,
    pub after: CostEstimate,
    /// per-trial `after - before`
    pub difference: MeanSe,
    pub verdict: Verdict,
}

/// Transport cost per volume of a coupling before and after running both
/// marginals for time `t`. Synchronous noise keeps the pairs of the coupling
/// (indexed by their sources in the box); independent noise rematches.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check(
    a: &ProcessModel,
    b: &ProcessModel,
    coupling: CouplingKind,
    noise: NoiseCoupling,
    t: f64,
    boxes: &[f64],
    d: usize,
    params: &CostParams,
    trials: usize,
    stream: &RngStream,
) -> Result<Vec<ContractionReport>> {
    check_time(t)?;
    boxes
        .iter()
        .enumerate()
        .map(|(bi, &n)| {
            let bx = BoxSpec::centered(n, d);
            let fam = stream.substream(bi as u64);
            let vals: Result<Vec<(f64, f64)>> = map_trials(trials, |trial| {
                let mut rng = fam.substream(trial as u64).rng();
                contraction_trial(a, b, coupling, noise, t, &bx, params, &mut rng)
            })
            .into_iter()
            .collect();
            let vals = vals?;
            let before: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let after: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let diff: Vec<f64> = vals.iter().map(|v| v.1 - v.0).collect();
            let difference = mean_se(&diff);
            Ok(ContractionReport {
                t,
                box_side: n,
                noise,
                before: CostEstimate::from_samples(&before, n, params.p),
                after: CostEstimate::from_samples(&after, n, params.p),
                difference,
                verdict: Verdict::from_slack(-difference.mean, difference.se),
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn contraction_trial(
    a: &ProcessModel,
    b: &ProcessModel,
    coupling: CouplingKind,
    noise: NoiseCoupling,
    t: f64,
    bx: &BoxSpec,
    params: &CostParams,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let d = bx.dim();
    let vol = bx.volume();
    match noise {
        NoiseCoupling::Synchronous => {
            let m = sample_coupled(a, b, coupling, bx, params, rng)?;
            let before = matching_cost(&m, params, bx) / vol;
            let mut after = Matching::empty(d);
            let mut z = vec![0.0; d];
            for (x, y) in m.pairs() {
                z.iter_mut().for_each(|v| *v = 0.0);
                gaussian_shift(&mut z, t, rng);
                if bx.contains(x) {
                    let xs: Vec<f64> = x.iter().zip(&z).map(|(p, q)| p + q).collect();
                    let ys: Vec<f64> = y.iter().zip(&z).map(|(p, q)| p + q).collect();
                    after.push(&xs, &ys);
                }
            }
            Ok((before, after.total_cost(params) / vol))
        }
        NoiseCoupling::Independent => {
            let margin = heat_margin(t) + 1.0;
            let big = bx.grown(2.0 * margin);
            let m = sample_coupled(a, b, coupling, &big, params, rng)?;
            let before = matching_cost(&m, params, bx) / vol;
            let xs = evolve_free(&m.source_config(), t, rng)?;
            let ys = evolve_free(&m.target_config(), t, rng)?;
            let xi = xs.restrict(bx);
            let (mm, _) = boundary_partial_matching(&xi, &ys, bx, params)?;
            Ok((before, matching_cost(&mm, params, bx) / vol))
        }
    }
}

/// `Ŵ²(P, S_t P)` per volume through the synchronous coupling `x -> x + B_t`.
pub fn w2_continuity(model: &ProcessModel, t: f64, n: f64, d: usize, trials: usize, stream: &RngStream) -> Result<CostEstimate> {
    check_time(t)?;
    let bx = BoxSpec::centered(n, d);
    let vals: Result<Vec<f64>> = map_trials(trials, |trial| {
        let mut rng = stream.substream(trial as u64).rng();
        let c = model.sample_with(&bx, &mut rng)?;
        let h = evolve_free(&c, t, &mut rng)?;
        let cost: f64 = c.points().zip(h.points()).map(|(x, y)| dist_sq(x, y)).sum();
        Ok(cost / bx.volume())
    })
    .into_iter()
    .collect();
    Ok(CostEstimate::from_samples(&vals?, n, 2.0))
}

/// One time of the stationary-level check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryEviRow {
    pub t: f64,
    pub cost: Vec<CostEstimate>,
    /// `𝓔(S_t P)` when known in closed form
    pub ent_source_after: Option<f64>,
    pub ent_target: f64,
    /// EVI slack against `t = 0` (worst box), when the entropy path is available
    pub slack: Option<MeanSe>,
    /// largest per-box increase of the cost over the previous time, in
    /// standard errors of the paired per-trial differences
    pub increase_z: Option<f64>,
    pub verdict: Verdict,
}

/// How heated samples are coupled to the reference in the stationary check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatCoupling {
    /// fresh heated sample at every time, matched to an independent reference sample
    Independent,
    /// reference matched at time 0; matched points then share Brownian paths
    /// and the pair is rematched optimally at every time
    #[default]
    Synchronous,
}

fn is_unit_poisson(m: &ProcessModel) -> bool {
    matches!(m, ProcessModel::Poisson { intensity } if *intensity == 1.0)
}

/// Per-volume costs of one trial at every time.
#[allow(clippy::too_many_arguments)]
fn stationary_trial(
    p: &ProcessModel,
    r: &ProcessModel,
    coupling: HeatCoupling,
    times: &[f64],
    bx: &BoxSpec,
    params: &CostParams,
    trial: &RngStream,
) -> Result<Vec<f64>> {
    let vol = bx.volume();
    match coupling {
        HeatCoupling::Independent => times
            .iter()
            .map(|&t| {
                let heated = if t == 0.0 { p.clone() } else { ProcessModel::Heated { base: Box::new(p.clone()), time: t } };
                let mut rng = trial.rng();
                let m = sample_coupled(&heated, r, CouplingKind::Independent, bx, params, &mut rng)?;
                Ok(matching_cost(&m, params, bx) / vol)
            })
            .collect(),
        HeatCoupling::Synchronous => {
            let mut rng = trial.rng();
            let d = bx.dim();
            let xi = p.sample_with(bx, &mut rng)?;
            let mut margin = 1.0;
            let (eta, m0) = loop {
                let eta = r.sample_with(&bx.grown(2.0 * margin), &mut rng)?;
                match optimal_partial_matching(&xi, &eta, params) {
                    Ok(m) => break (eta, m),
                    Err(Error::TooSparse { .. }) if margin < 64.0 * bx.side.max(1.0) => margin *= 2.0,
                    Err(e) => return Err(e),
                }
            };
            // one Brownian path per reference point; sources ride on their partner's path
            let partner: Vec<usize> = m0
                .pairs()
                .map(|(_, y)| eta.points().position(|q| q == y).expect("target drawn from eta"))
                .collect();
            let mut xs = xi.coords().to_vec();
            let mut ys = eta.coords().to_vec();
            let mut now = 0.0;
            let mut out = Vec::with_capacity(times.len());
            for &t in times {
                if t > now {
                    let mut inc = vec![0.0; ys.len()];
                    gaussian_shift(&mut inc, t - now, &mut rng);
                    for (y, z) in ys.iter_mut().zip(&inc) {
                        *y += z;
                    }
                    for (i, &j) in partner.iter().enumerate() {
                        for k in 0..d {
                            xs[i * d + k] += inc[j * d + k];
                        }
                    }
                    now = t;
                }
                let src = Configuration::from_flat_unchecked(d, xs.clone(), Window::WholeSpace);
                let tgt = Configuration::from_flat_unchecked(d, ys.clone(), Window::WholeSpace);
                out.push(optimal_partial_matching(&src, &tgt, params)?.total_cost(params) / vol);
            }
            Ok(out)
        }
    }
}

/// Stationary EVI along the heat flow of `p`. Heated entropies are only known
/// for Poisson sources; otherwise (with a unit Poisson reference) the
/// monotonicity of `Ŵ²(S_t P, Poi)` in `t` is checked instead and the
/// entropy fields stay empty. Times must be increasing and start at 0.
#[allow(clippy::too_many_arguments)]
pub fn evi_check_stationary(
    p: &ProcessModel,
    r: &ProcessModel,
    coupling: HeatCoupling,
    times: &[f64],
    boxes: &[f64],
    d: usize,
    params: &CostParams,
    trials: usize,
    stream: &RngStream,
) -> Result<Vec<StationaryEviRow>> {
    let ent_r = r.analytic_specific_entropy(d);
    let entropy_path = matches!(p, ProcessModel::Poisson { .. }) && ent_r.is_ok();
    if !entropy_path && !is_unit_poisson(r) {
        return Err(Error::NoAnalyticDensity(
            "heated entropy unavailable and the reference is not the unit Poisson process".into(),
        ));
    }
    if times.first() != Some(&0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times must start at 0 and increase"));
    }
    for &t in times {
        check_time(t)?;
    }
    let ent_r = ent_r.unwrap_or(0.0);
    let ent_p = if entropy_path { Some(p.analytic_specific_entropy(d)?) } else { None };
    // costs[box][trial][time]
    let costs = boxes
        .iter()
        .enumerate()
        .map(|(bi, &n)| {
            let bx = BoxSpec::centered(n, d);
            let fam = stream.substream(bi as u64);
            map_trials(trials, |trial| stationary_trial(p, r, coupling, times, &bx, params, &fam.substream(trial as u64)))
                .into_iter()
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let paired = |bi: usize, f: &dyn Fn(&[f64]) -> f64| mean_se(&costs[bi].iter().map(|c| f(c)).collect::<Vec<_>>());
    let worst = |v: Vec<MeanSe>| {
        v.into_iter()
            .max_by(|a, b| z_of(a).total_cmp(&z_of(b)))
            .unwrap_or(MeanSe::exact(0.0))
    };
    Ok(times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let cost: Vec<CostEstimate> = boxes
                .iter()
                .enumerate()
                .map(|(bi, &n)| CostEstimate::from_samples(&costs[bi].iter().map(|c| c[ti]).collect::<Vec<_>>(), n, params.p))
                .collect();
            let slack = ent_p.map(|ep| {
                let inc = worst((0..boxes.len()).map(|bi| paired(bi, &|c| c[ti] - c[0])).collect());
                MeanSe { mean: 2.0 * t * (ent_r - ep) - inc.mean, se: inc.se, n: trials }
            });
            let increase_z = (ti > 0).then(|| z_of(&worst((0..boxes.len()).map(|bi| paired(bi, &|c| c[ti] - c[ti - 1])).collect())));
            let verdict = match (slack, increase_z) {
                (Some(s), _) => Verdict::from_slack(s.mean, s.se),
                (None, Some(z)) => Verdict::from_slack(-z, 1.0),
                (None, None) => Verdict::Holds,
            };
            StationaryEviRow { t, cost, ent_source_after: ent_p, ent_target: ent_r, slack, increase_z, verdict }
        })
        .collect())
}

fn z_of(m: &MeanSe) -> f64 {
    if m.se > 0.0 {
        m.mean / m.se
    } else if m.mean.abs() <= 1e-12 {
        0.0
    } else {
        m.mean.signum() * f64::INFINITY
    }
}

/// `L(f) = E exp(-w·N(Λ_1))` for `f = w·1_{Λ_1}`.
pub fn laplace_functional(model: &ProcessModel, weight: f64, d: usize, trials: usize, stream: &RngStream) -> Result<MeanSe> {
    let unit = BoxSpec::centered(1.0, d);
    let vals: Result<Vec<f64>> = map_trials(trials, |trial| {
        let mut rng = stream.substream(trial as u64).rng();
        let c = model.sample_with(&unit, &mut rng)?;
        Ok((-weight * c.len() as f64).exp())
    })
    .into_iter()
    .collect();
    Ok(mean_se(&vals?))
}

/// Laplace functional of the unit Poisson process at `w·1_{Λ_1}`.
pub fn laplace_poisson(weight: f64) -> f64 {
    (-(1.0 - (-weight).exp())).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceGapRow {
    pub t: f64,
    pub value: MeanSe,
    pub poisson: f64,
    pub gap: f64,
}

/// `|L_{S_t P}(f) - L_Poi(f)|` along `times` (same stream at every time).
pub fn laplace_gap_curve(p: &ProcessModel, weight: f64, times: &[f64], d: usize, trials: usize, stream: &RngStream) -> Result<Vec<LaplaceGapRow>> {
    let lp = laplace_poisson(weight);
    times
        .iter()
        .map(|&t| {
            check_time(t)?;
            let m = if t == 0.0 { p.clone() } else { ProcessModel::Heated { base: Box::new(p.clone()), time: t } };
            let value = laplace_functional(&m, weight, d, trials, stream)?;
            Ok(LaplaceGapRow { t, value, poisson: lp, gap: (value.mean - lp).abs() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwiReport {
    pub box_side: f64,
    /// `𝓔(P) - 𝓔(Poi)`
    pub lhs: f64,
    pub w2: MeanSe,
    pub fisher: f64,
    pub rhs: MeanSe,
    pub slack: MeanSe,
    pub verdict: Verdict,
}

/// `𝓔(P) ≤ Ŵ₂(P, Poi)·√𝓘(P)` for a perturbed grid with a smooth density.
pub fn hwi_check(p: &ProcessModel, boxes: &[f64], d: usize, trials: usize, stream: &RngStream) -> Result<Vec<HwiReport>> {
    let (lhs, fisher) = match p {
        ProcessModel::Poisson { intensity } if *intensity == 1.0 => (0.0, 0.0),
        ProcessModel::PerturbedGrid { density, .. } => (p.analytic_specific_entropy(d)?, fisher_closed_form_grid(density, d)?),
        _ => return Err(Error::NotDifferentiable(format!("no specific Fisher information for {p:?}"))),
    };
    let params = CostParams::default();
    let prof = estimate_cost_per_volume(p, &ProcessModel::poisson(1.0), CouplingKind::Independent, boxes, d, &params, trials, stream)?;
    Ok(prof
        .estimates
        .iter()
        .map(|e| {
            let (w, se) = e.w();
            let rf = fisher.sqrt();
            let rhs = MeanSe { mean: w * rf, se: se * rf, n: e.trials };
            let slack = MeanSe { mean: rhs.mean - lhs, se: rhs.se, n: e.trials };
            HwiReport {
                box_side: e.box_side,
                lhs,
                w2: MeanSe { mean: w, se, n: e.trials },
                fisher,
                rhs,
                slack,
                verdict: Verdict::from_slack(slack.mean, slack.se),
            }
        })
        .collect())
}
