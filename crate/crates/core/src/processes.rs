//! Point process models, their samplers, and analytic densities with respect
//! to the unit-intensity Poisson process.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson as PoissonDist};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{BoxSpec, Configuration, Window};
use crate::rng::RngStream;
use crate::stats::ln_factorial;

/// Product densities `f(x) = prod_i g(x_i)` supported in Λ_1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityFamily {
    /// Uniform on `[-ε/2, ε/2]` per coordinate; ε = 0 is the unperturbed lattice.
    UniformCell { epsilon: f64 },
    /// `g(x) = 1 + cos(2πx)`.
    CosineBump,
    /// Centred normal with deviation σ, truncated to `[-1/2, 1/2]`.
    TruncatedGaussian { sigma: f64 },
}

impl DensityFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::UniformCell { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                Err(invalid(format!("uniform_cell epsilon must lie in [0,1], got {epsilon}")))
            }
            Self::TruncatedGaussian { sigma } if !(sigma > 0.0) || !sigma.is_finite() => {
                Err(invalid(format!("truncated_gaussian sigma must be positive, got {sigma}")))
            }
            _ => Ok(()),
        }
    }

    fn gauss_norm(sigma: f64) -> f64 {
        statrs::function::erf::erf(0.5 / (sigma * std::f64::consts::SQRT_2))
    }

    /// One-coordinate density.
    pub fn g(&self, x: f64) -> f64 {
        if !(-0.5..=0.5).contains(&x) {
            return 0.0;
        }
        match *self {
            Self::UniformCell { epsilon } => {
                if epsilon > 0.0 && x.abs() <= 0.5 * epsilon {
                    1.0 / epsilon
                } else {
                    0.0
                }
            }
            Self::CosineBump => 1.0 + (2.0 * std::f64::consts::PI * x).cos(),
            Self::TruncatedGaussian { sigma } => {
                let z = x / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt() * Self::gauss_norm(sigma))
            }
        }
    }

    /// Derivative of `g`; `None` where the family is not differentiable.
    pub fn dg(&self, x: f64) -> Option<f64> {
        match *self {
            Self::UniformCell { .. } => None,
            Self::CosineBump => Some(-2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x).sin()),
            Self::TruncatedGaussian { sigma } => Some(-x / (sigma * sigma) * self.g(x)),
        }
    }

    /// One-coordinate CDF on `[-1/2, 1/2]`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -0.5 {
            return 0.0;
        }
        if x >= 0.5 {
            return 1.0;
        }
        match *self {
            Self::UniformCell { epsilon } => {
                if epsilon == 0.0 {
                    if x >= 0.0 { 1.0 } else { 0.0 }
                } else {
                    ((x + 0.5 * epsilon) / epsilon).clamp(0.0, 1.0)
                }
            }
            Self::CosineBump => {
                x + 0.5 + (2.0 * std::f64::consts::PI * x).sin() / (2.0 * std::f64::consts::PI)
            }
            Self::TruncatedGaussian { sigma } => {
                let e = |u: f64| statrs::function::erf::erf(u / (sigma * std::f64::consts::SQRT_2));
                0.5 + 0.5 * e(x) / Self::gauss_norm(sigma)
            }
        }
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| self.g(xi)).product()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        x.iter().map(|&xi| self.g(xi).ln()).sum()
    }

    /// Full gradient of `f`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let gs: Vec<f64> = x.iter().map(|&xi| self.g(xi)).collect();
        x.iter()
            .enumerate()
            .map(|(i, &xi)| {
                let d = self.dg(xi).ok_or_else(|| Error::NotDifferentiable(format!("{self:?}")))?;
                Ok(d * gs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).product::<f64>())
            })
            .collect()
    }

    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::UniformCell { .. })
    }

    /// Draws one coordinate.
    pub fn sample_coord<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::UniformCell { epsilon } => epsilon * (rng.random::<f64>() - 0.5),
            Self::CosineBump => loop {
                // g <= 2 on [-1/2,1/2]
                let x = rng.random::<f64>() - 0.5;
                if 2.0 * rng.random::<f64>() <= self.g(x) {
                    return x;
                }
            },
            Self::TruncatedGaussian { sigma } => {
                if sigma <= 1.0 {
                    let n = Normal::new(0.0, sigma).expect("sigma validated");
                    loop {
                        let x: f64 = n.sample(rng);
                        if x.abs() <= 0.5 {
                            return x;
                        }
                    }
                } else {
                    let peak = self.g(0.0);
                    loop {
                        let x = rng.random::<f64>() - 0.5;
                        if peak * rng.random::<f64>() <= self.g(x) {
                            return x;
                        }
                    }
                }
            }
        }
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, d: usize, rng: &mut R, out: &mut Vec<f64>) {
        for _ in 0..d {
            out.push(self.sample_coord(rng));
        }
    }
}

/// Declarative description of a point process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessModel {
    Poisson {
        #[serde(default = "one")]
        intensity: f64,
    },
    /// The unit lattice; with `stationarized` it is shifted by a uniform vector.
    LatticeGrid {
        #[serde(default = "yes")]
        stationarized: bool,
    },
    /// One point `z + X_z` per lattice cell with `X_z ~ density`; with
    /// `stationarized` every point is further shifted by a common uniform `Y`.
    PerturbedGrid {
        density: DensityFamily,
        #[serde(default = "yes")]
        stationarized: bool,
    },
    /// `k` i.i.d. uniform points on Λ_side.
    Binomial { side: f64, k: usize },
    /// Independent copies of `base` on Λ_side glued along `side·Z^d`.
    Tiled { base: Box<ProcessModel>, side: f64 },
    /// `Tiled` shifted by a uniform vector of Λ_side.
    Stationarized { base: Box<ProcessModel>, side: f64 },
    /// `base` after free Brownian motion run for `time`.
    Heated { base: Box<ProcessModel>, time: f64 },
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// `log(dP/dPoi)` on a box, or the explicit out-of-support value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LogDensity {
    Finite(f64),
    OutOfSupport,
}

impl LogDensity {
    pub fn value(&self) -> f64 {
        match *self {
            Self::Finite(v) => v,
            Self::OutOfSupport => f64::NEG_INFINITY,
        }
    }
}

impl ProcessModel {
    pub fn poisson(intensity: f64) -> Self {
        Self::Poisson { intensity }
    }

    pub fn grid(density: DensityFamily, stationarized: bool) -> Self {
        Self::PerturbedGrid { density, stationarized }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Poisson { intensity } if !(*intensity > 0.0) || !intensity.is_finite() => {
                Err(invalid(format!("poisson intensity must be positive, got {intensity}")))
            }
            Self::PerturbedGrid { density, .. } => density.validate(),
            Self::Binomial { side, .. } if !(*side > 0.0) => Err(invalid("binomial side must be positive")),
            Self::Tiled { base, side } | Self::Stationarized { base, side } => {
                if !(*side > 0.0) {
                    return Err(invalid("tile side must be positive"));
                }
                base.validate()
            }
            Self::Heated { base, time } => {
                if !(*time >= 0.0) {
                    return Err(invalid(format!("heating time must be nonnegative, got {time}")));
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }

    /// Mean number of points per unit volume.
    pub fn intensity(&self, d: usize) -> f64 {
        match self {
            Self::Poisson { intensity } => *intensity,
            Self::LatticeGrid { .. } | Self::PerturbedGrid { .. } => 1.0,
            Self::Binomial { side, k } => *k as f64 / side.powi(d as i32),
            Self::Tiled { base, side } | Self::Stationarized { base, side } => {
                base.expected_count(&BoxSpec::centered(*side, d)) / side.powi(d as i32)
            }
            Self::Heated { base, .. } => base.intensity(d),
        }
    }

    fn expected_count(&self, b: &BoxSpec) -> f64 {
        match self {
            Self::Binomial { side, k } => {
                let own = BoxSpec::centered(*side, b.dim());
                *k as f64 * overlap_volume(&own, b) / own.volume()
            }
            _ => self.intensity(b.dim()) * b.volume(),
        }
    }

    /// True for models whose law is invariant under all shifts.
    pub fn is_stationary(&self) -> bool {
        match self {
            Self::Poisson { .. } | Self::Stationarized { .. } => true,
            Self::LatticeGrid { stationarized } | Self::PerturbedGrid { stationarized, .. } => *stationarized,
            Self::Binomial { .. } | Self::Tiled { .. } => false,
            Self::Heated { base, .. } => base.is_stationary(),
        }
    }

    pub fn has_analytic_density(&self) -> bool {
        match self {
            Self::Poisson { .. } | Self::Binomial { .. } => true,
            Self::PerturbedGrid { density, .. } => {
                !matches!(density, DensityFamily::UniformCell { epsilon } if *epsilon == 0.0)
            }
            Self::Tiled { base, .. } => base.has_analytic_density(),
            _ => false,
        }
    }

    pub fn has_fisher(&self) -> bool {
        match self {
            Self::Poisson { .. } => true,
            Self::PerturbedGrid { density, .. } => density.is_smooth(),
            _ => false,
        }
    }

    /// Per-volume entropy with respect to the unit Poisson process, where a
    /// closed form exists. Perturbed grids use the lattice-aligned version.
    pub fn analytic_specific_entropy(&self, d: usize) -> Result<f64> {
        match self {
            Self::Poisson { intensity: l } => Ok(l * l.ln() - l + 1.0),
            Self::PerturbedGrid { density, .. } if self.has_analytic_density() => {
                Ok(1.0 + d as f64 * crate::entropy::g_log_g(density))
            }
            Self::Tiled { base, .. } | Self::Stationarized { base, .. } if matches!(**base, Self::Poisson { .. }) => {
                base.analytic_specific_entropy(d)
            }
            _ => Err(Error::NoAnalyticDensity(format!("{self:?}"))),
        }
    }

    /// Draws a configuration on `window` from `stream`.
    pub fn sample(&self, window: &BoxSpec, stream: &RngStream) -> Result<Configuration> {
        let mut rng = stream.rng();
        self.sample_with(window, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, window: &BoxSpec, rng: &mut R) -> Result<Configuration> {
        self.validate()?;
        let d = window.dim();
        let mut coords = Vec::new();
        self.sample_into(window, rng, &mut coords)?;
        Ok(Configuration::from_flat_unchecked(d, coords, Window::Box(window.clone())))
    }

    /// Appends the points inside `window` to `out`.
    fn sample_into<R: Rng + ?Sized>(&self, window: &BoxSpec, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        let d = window.dim();
        match self {
            Self::Poisson { intensity } => {
                sample_poisson_into(window, *intensity, rng, out);
            }
            Self::LatticeGrid { stationarized } => {
                let g = DensityFamily::UniformCell { epsilon: 0.0 };
                sample_grid_into(window, &g, *stationarized, rng, out);
            }
            Self::PerturbedGrid { density, stationarized } => {
                sample_grid_into(window, density, *stationarized, rng, out);
            }
            Self::Binomial { side, k } => {
                let own = BoxSpec::centered(*side, d);
                let mut pts = Vec::with_capacity(k * d);
                sample_uniform_points(&own, *k, rng, &mut pts);
                out.extend(pts.chunks_exact(d).filter(|p| window.contains(p)).flatten());
            }
            Self::Tiled { base, side } => {
                sample_tiled_into(base, *side, window, &vec![0.0; d], rng, out)?;
            }
            Self::Stationarized { base, side } => {
                let u: Vec<f64> = (0..d).map(|_| side * (rng.random::<f64>() - 0.5)).collect();
                sample_tiled_into(base, *side, window, &u, rng, out)?;
            }
            Self::Heated { base, time } => {
                let margin = heat_margin(*time);
                let big = window.grown(2.0 * margin);
                let mut pts = Vec::new();
                base.sample_into(&big, rng, &mut pts)?;
                let s = time.sqrt();
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                for p in pts.chunks_exact_mut(d) {
                    for x in p.iter_mut() {
                        *x += s * normal.sample(rng);
                    }
                    if window.contains(p) {
                        out.extend_from_slice(p);
                    }
                }
            }
        }
        Ok(())
    }

    /// Law of the point count in `b`, for models where it is known in closed form.
    pub fn count_law(&self, b: &BoxSpec) -> Result<CountLaw> {
        match self {
            Self::Poisson { intensity } => Ok(CountLaw::Poisson(intensity * b.volume())),
            Self::PerturbedGrid { stationarized: false, .. } | Self::LatticeGrid { stationarized: false } => {
                cells_of(b).map(|c| CountLaw::Fixed(c.len()))
            }
            Self::Binomial { side, k } if BoxSpec::centered(*side, b.dim()) == *b => Ok(CountLaw::Fixed(*k)),
            _ => Err(Error::NoAnalyticDensity(format!("count law of {self:?}"))),
        }
    }

    /// `log(dP_Λ/dPoi_Λ)(config)` on the box `b`.
    pub fn log_density_wrt_poisson(&self, config: &Configuration, b: &BoxSpec) -> Result<LogDensity> {
        if config.dim() != b.dim() {
            return Err(Error::DimensionMismatch { expected: b.dim(), got: config.dim() });
        }
        if config.points().any(|p| !b.contains(p)) {
            return Err(Error::OutsideBox);
        }
        let n = config.len() as f64;
        match self {
            Self::Poisson { intensity: l } => Ok(LogDensity::Finite((1.0 - l) * b.volume() + n * l.ln())),
            Self::PerturbedGrid { density, .. } if self.has_analytic_density() => {
                grid_log_density(density, config, b)
            }
            Self::Binomial { side, k } => {
                if BoxSpec::centered(*side, b.dim()) != *b {
                    return Err(Error::NoAnalyticDensity("binomial density is only defined on its own box".into()));
                }
                if config.len() != *k {
                    return Ok(LogDensity::OutOfSupport);
                }
                let v = b.volume();
                Ok(LogDensity::Finite(v - n * v.ln() + ln_factorial(*k as u64)))
            }
            Self::Tiled { base, side } => {
                let tiles = tiles_of(b, *side)?;
                let mut total = 0.0;
                for t in &tiles {
                    let local = shift_config(&config.restrict(t), &t.center, -1.0);
                    match base.log_density_wrt_poisson(&local, &BoxSpec::centered(*side, b.dim()))? {
                        LogDensity::Finite(v) => total += v,
                        LogDensity::OutOfSupport => return Ok(LogDensity::OutOfSupport),
                    }
                }
                Ok(LogDensity::Finite(total))
            }
            _ => Err(Error::NoAnalyticDensity(format!("{self:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountLaw {
    Poisson(f64),
    Fixed(usize),
}

impl CountLaw {
    pub fn ln_pmf(&self, k: usize) -> f64 {
        match *self {
            Self::Poisson(m) => poisson_ln_pmf(m, k),
            Self::Fixed(j) => {
                if j == k { 0.0 } else { f64::NEG_INFINITY }
            }
        }
    }

    /// `KL(self || Poisson(mean))`.
    pub fn kl_to_poisson(&self, mean: f64) -> f64 {
        match *self {
            Self::Poisson(m) => m * (m / mean).ln() - m + mean,
            Self::Fixed(j) => -poisson_ln_pmf(mean, j),
        }
    }
}

pub fn poisson_ln_pmf(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -mean + k as f64 * mean.ln() - ln_factorial(k as u64)
}

/// Boundary margin used when sampling a heated model on a box.
pub fn heat_margin(t: f64) -> f64 {
    (6.0 * t.sqrt()).ceil()
}

fn overlap_volume(a: &BoxSpec, b: &BoxSpec) -> f64 {
    (0..a.dim())
        .map(|i| (a.hi(i).min(b.hi(i)) - a.lo(i).max(b.lo(i))).max(0.0))
        .product()
}

fn shift_config(c: &Configuration, v: &[f64], sign: f64) -> Configuration {
    let d = c.dim();
    let coords = c
        .coords()
        .chunks_exact(d)
        .flat_map(|p| p.iter().zip(v).map(move |(x, o)| x + sign * o))
        .collect();
    Configuration::from_flat_unchecked(d, coords, Window::WholeSpace)
}

pub(crate) fn sample_uniform_points<R: Rng + ?Sized>(b: &BoxSpec, k: usize, rng: &mut R, out: &mut Vec<f64>) {
    for _ in 0..k {
        for i in 0..b.dim() {
            out.push(b.lo(i) + b.side * rng.random::<f64>());
        }
    }
}

fn sample_poisson_into<R: Rng + ?Sized>(b: &BoxSpec, intensity: f64, rng: &mut R, out: &mut Vec<f64>) {
    let mean = intensity * b.volume();
    let count = if mean > 0.0 {
        PoissonDist::new(mean).map_or(0, |p| p.sample(rng) as usize)
    } else {
        0
    };
    sample_uniform_points(b, count, rng, out);
}

/// Poisson sample on a box.
pub fn sample_poisson(b: &BoxSpec, intensity: f64, stream: &RngStream) -> Result<Configuration> {
    ProcessModel::poisson(intensity).sample(b, stream)
}

/// `k` i.i.d. uniform points on a box.
pub fn sample_binomial(b: &BoxSpec, k: usize, stream: &RngStream) -> Configuration {
    let mut rng = stream.rng();
    let mut coords = Vec::with_capacity(k * b.dim());
    sample_uniform_points(b, k, &mut rng, &mut coords);
    Configuration::from_flat_unchecked(b.dim(), coords, Window::Box(b.clone()))
}

/// Lattice phase for the non-stationarized grid: cell centres sit at
/// `corner + 1/2 + Z^d`, so unit cells tile any box of integer side.
pub fn lattice_phase(b: &BoxSpec) -> Vec<f64> {
    (0..b.dim()).map(|i| (b.lo(i) + 0.5).rem_euclid(1.0)).collect()
}

/// Lattice cell centres `c` (in the lattice with the given phase) whose cell
/// `c + Λ_1` meets the box grown by `margin`.
pub(crate) fn lattice_centres(b: &BoxSpec, phase: &[f64], margin: f64) -> Vec<f64> {
    let d = b.dim();
    let ranges: Vec<(i64, i64)> = (0..d)
        .map(|i| {
            let lo = ((b.lo(i) - margin - phase[i] - 0.5).floor()) as i64;
            let hi = ((b.hi(i) + margin - phase[i] + 0.5).ceil()) as i64;
            (lo, hi)
        })
        .collect();
    let mut out = Vec::new();
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        for i in 0..d {
            out.push(idx[i] as f64 + phase[i]);
        }
        let mut i = 0;
        loop {
            if i == d {
                return out;
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

/// Unit cells tiling a box of integer side (aligned with its corner).
pub fn cells_of(b: &BoxSpec) -> Result<Vec<BoxSpec>> {
    tiles_of(b, 1.0)
}

/// Sub-boxes of side `side` tiling `b` from its corner; `b.side` must be a multiple.
pub fn tiles_of(b: &BoxSpec, side: f64) -> Result<Vec<BoxSpec>> {
    let m = (b.side / side).round();
    if (m * side - b.side).abs() > 1e-9 * b.side.max(1.0) || m < 1.0 {
        return Err(invalid(format!("box side {} is not a multiple of {side}", b.side)));
    }
    let m = m as usize;
    let d = b.dim();
    let mut out = Vec::with_capacity(m.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        let c: Vec<f64> = (0..d).map(|i| b.lo(i) + (idx[i] as f64 + 0.5) * side).collect();
        out.push(BoxSpec { side, center: c.into() });
        let mut i = 0;
        loop {
            if i == d {
                return Ok(out);
            }
            idx[i] += 1;
            if idx[i] < m {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

fn sample_grid_into<R: Rng + ?Sized>(
    window: &BoxSpec,
    density: &DensityFamily,
    stationarized: bool,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    let d = window.dim();
    let (phase, shift) = if stationarized {
        let y: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        (vec![0.0; d], y)
    } else {
        (lattice_phase(window), vec![0.0; d])
    };
    let centres = lattice_centres(window, &phase, 1.0);
    let mut p = Vec::with_capacity(d);
    for c in centres.chunks_exact(d) {
        p.clear();
        density.sample_point(d, rng, &mut p);
        for i in 0..d {
            p[i] += c[i] + shift[i];
        }
        if window.contains(&p) {
            out.extend_from_slice(&p);
        }
    }
}

/// Cell-matched pairs of two grid models sharing the lattice and the global
/// shift. Returns `(sources, targets)` for every cell whose source lies in
/// `window`; targets may leave the window.
pub fn sample_grid_pair<R: Rng + ?Sized>(
    a: &ProcessModel,
    b: &ProcessModel,
    window: &BoxSpec,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = |m: &ProcessModel| -> Result<(DensityFamily, bool)> {
        match m {
            ProcessModel::LatticeGrid { stationarized } => Ok((DensityFamily::UniformCell { epsilon: 0.0 }, *stationarized)),
            ProcessModel::PerturbedGrid { density, stationarized } => Ok((*density, *stationarized)),
            _ => Err(Error::IncompatibleCoupling {
                coupling: "shared_grid".into(),
                reason: format!("{m:?} is not a grid model"),
            }),
        }
    };
    let (fa, sa) = grid(a)?;
    let (fb, sb) = grid(b)?;
    if sa != sb {
        return Err(Error::IncompatibleCoupling {
            coupling: "shared_grid".into(),
            reason: "both grids must agree on stationarization".into(),
        });
    }
    let d = window.dim();
    let (phase, shift) = if sa {
        let y: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        (vec![0.0; d], y)
    } else {
        (lattice_phase(window), vec![0.0; d])
    };
    let centres = lattice_centres(window, &phase, 1.0);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let (mut p, mut q) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for c in centres.chunks_exact(d) {
        p.clear();
        q.clear();
        fa.sample_point(d, rng, &mut p);
        fb.sample_point(d, rng, &mut q);
        for i in 0..d {
            p[i] += c[i] + shift[i];
            q[i] += c[i] + shift[i];
        }
        if window.contains(&p) {
            xs.extend_from_slice(&p);
            ys.extend_from_slice(&q);
        }
    }
    Ok((xs, ys))
}

fn sample_tiled_into<R: Rng + ?Sized>(
    base: &ProcessModel,
    side: f64,
    window: &BoxSpec,
    offset: &[f64],
    rng: &mut R,
    out: &mut Vec<f64>,
) -> Result<()> {
    let d = window.dim();
    // tile centres are side*Z^d + offset
    let ranges: Vec<(i64, i64)> = (0..d)
        .map(|i| {
            let lo = ((window.lo(i) - offset[i]) / side - 0.5).floor() as i64;
            let hi = ((window.hi(i) - offset[i]) / side + 0.5).ceil() as i64;
            (lo, hi)
        })
        .collect();
    let tile = BoxSpec::centered(side, d);
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    let mut pts = Vec::new();
    loop {
        let c: Vec<f64> = (0..d).map(|i| idx[i] as f64 * side + offset[i]).collect();
        let placed = tile.translated(&c);
        if (0..d).all(|i| placed.hi(i) >= window.lo(i) && placed.lo(i) <= window.hi(i)) {
            pts.clear();
            base.sample_into(&tile, rng, &mut pts)?;
            for p in pts.chunks_exact(d) {
                let q: Vec<f64> = p.iter().zip(&c).map(|(x, o)| x + o).collect();
                if window.contains(&q) {
                    out.extend_from_slice(&q);
                }
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                return Ok(());
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

fn grid_log_density(density: &DensityFamily, config: &Configuration, b: &BoxSpec) -> Result<LogDensity> {
    let cells = cells_of(b)?;
    let d = b.dim();
    let mut occupied = vec![usize::MAX; cells.len()];
    let m = b.side.round() as usize;
    for (j, p) in config.points().enumerate() {
        // cell index from the box corner; points on shared faces go to the lower cell
        let mut flat = 0usize;
        let mut stride = 1usize;
        for i in 0..d {
            let u = ((p[i] - b.lo(i)).floor() as isize).clamp(0, m as isize - 1) as usize;
            flat += u * stride;
            stride *= m;
        }
        if occupied[flat] != usize::MAX {
            return Ok(LogDensity::OutOfSupport);
        }
        occupied[flat] = j;
    }
    if occupied.contains(&usize::MAX) {
        return Ok(LogDensity::OutOfSupport);
    }
    let mut total = 0.0;
    for (cell, &j) in cells.iter().zip(&occupied) {
        let rel: Vec<f64> = config.point(j).iter().zip(cell.center.iter()).map(|(x, c)| x - c).collect();
        let f = density.pdf(&rel);
        if !(f > 0.0) {
            return Ok(LogDensity::OutOfSupport);
        }
        total += 1.0 + f.ln();
    }
    Ok(LogDensity::Finite(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::stats::{chi_square_independence, ks_two_sample, mean_se};

    fn stream(i: u64) -> RngStream {
        RngStream::new(2024, i)
    }

    #[test]
    fn densities_integrate_to_one() {
        for f in [
            DensityFamily::UniformCell { epsilon: 0.5 },
            DensityFamily::CosineBump,
            DensityFamily::TruncatedGaussian { sigma: 0.1 },
            DensityFamily::TruncatedGaussian { sigma: 3.0 },
        ] {
            let z = crate::quadrature::adaptive_simpson(&|x| f.g(x), -0.5, 0.5, 1e-12);
            assert!((z - 1.0).abs() < 1e-8, "{f:?}: {z}");
            // CDF is the running integral
            for x in [-0.3, 0.0, 0.21] {
                let c = crate::quadrature::adaptive_simpson(&|u| f.g(u), -0.5, x, 1e-12);
                assert!((f.cdf(x) - c).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let f = DensityFamily::CosineBump;
        let x = [0.1, -0.23];
        let g = f.grad(&x).unwrap();
        for i in 0..2 {
            let mut a = x;
            let mut b = x;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            assert!(((f.pdf(&a) - f.pdf(&b)) / 2e-6 - g[i]).abs() < 1e-6);
        }
        assert!(DensityFamily::UniformCell { epsilon: 1.0 }.grad(&x).is_err());
    }

    #[test]
    fn samplers_follow_cdf() {
        let mut rng = stream(0).rng();
        for f in [DensityFamily::CosineBump, DensityFamily::TruncatedGaussian { sigma: 0.2 }] {
            let xs: Vec<f64> = (0..20_000).map(|_| f.sample_coord(&mut rng)).collect();
            let (_, p) = crate::stats::ks_one_sample(&xs, |x| f.cdf(x));
            assert!(p > 1e-3, "{f:?} p={p}");
        }
    }

    #[test]
    fn poisson_count_mean_and_fano() {
        let b = BoxSpec::centered(4.0, 2);
        let counts: Vec<f64> = (0..10_000)
            .map(|i| sample_poisson(&b, 1.0, &stream(i)).unwrap().len() as f64)
            .collect();
        let m = mean_se(&counts);
        assert!((m.mean - 16.0).abs() < 3.0 * 4.0 / 100.0 + 3.0 * m.se, "{m:?}");
        let var = crate::stats::variance(&counts);
        // Fano factor; the sample variance of Poisson(16) has sd ~ 16*sqrt(2/n)*...
        assert!((var / m.mean - 1.0).abs() < 0.06, "fano {}", var / m.mean);
        assert!(sample_poisson(&b, 0.0, &stream(0)).is_err());
    }

    #[test]
    fn poisson_laplace_functional() {
        // f = 0.5 on Λ_1 inside Λ_2
        let b = BoxSpec::centered(2.0, 2);
        let unit = BoxSpec::centered(1.0, 2);
        let vals: Vec<f64> = (0..20_000)
            .map(|i| (-0.5 * sample_poisson(&b, 1.0, &stream(i)).unwrap().count_in(&unit) as f64).exp())
            .collect();
        let m = mean_se(&vals);
        let want = (-(1.0 - (-0.5f64).exp())).exp();
        assert!((m.mean - want).abs() < 4.0 * m.se, "{} vs {want}", m.mean);
    }

    #[test]
    fn lattice_grid_is_exact_lattice() {
        let b = BoxSpec::centered(4.0, 2);
        let m = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 0.0 }, false);
        let c = m.sample(&b, &stream(1)).unwrap();
        assert_eq!(c.len(), 16);
        for p in c.points() {
            for &x in p {
                assert!(((x - 0.5).rem_euclid(1.0)).abs() < 1e-12);
            }
        }
        // stationarized lattice: all points share one offset
        let m = ProcessModel::LatticeGrid { stationarized: true };
        let c = m.sample(&b, &stream(2)).unwrap();
        let off: Vec<f64> = c.point(0).iter().map(|x| x.rem_euclid(1.0)).collect();
        for p in c.points() {
            for (x, o) in p.iter().zip(&off) {
                let r = (x.rem_euclid(1.0) - o).abs();
                assert!(r < 1e-9 || (r - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grid_one_point_per_cell() {
        let b = BoxSpec::centered(5.0, 2);
        let m = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 0.9 }, false);
        for i in 0..50 {
            let c = m.sample(&b, &stream(i)).unwrap();
            assert_eq!(c.len(), 25);
            for cell in cells_of(&b).unwrap() {
                assert_eq!(c.count_in(&cell), 1);
            }
        }
    }

    // oracle: a cell's point lands in Λ_n iff its centre offset plus the
    // perturbation stays inside; for the stationarized uniform grid the count
    // deviates from n^d by at most the number of cells meeting the boundary
    #[test]
    fn stationarized_grid_count_bound() {
        let n = 6.0;
        let b = BoxSpec::centered(n, 2);
        let m = ProcessModel::grid(DensityFamily::CosineBump, true);
        let mut counts = Vec::new();
        for i in 0..500 {
            let c = m.sample(&b, &stream(i)).unwrap();
            let k = c.len() as f64;
            assert!((k - n * n).abs() <= 4.0 * (n + 1.0));
            counts.push(k);
        }
        let ms = mean_se(&counts);
        assert!((ms.mean - 36.0).abs() < 4.0 * ms.se + 1e-9);
    }

    #[test]
    fn tiled_single_point_is_lattice() {
        let base = ProcessModel::Binomial { side: 1e-9, k: 1 };
        let m = ProcessModel::Tiled { base: Box::new(base), side: 2.0 };
        let b = BoxSpec::centered(6.0, 2);
        let c = m.sample(&b, &stream(0)).unwrap();
        // side-2 lattice in [-3,3]^2 centred at 0: {-2,0,2}^2
        assert_eq!(c.len(), 9);
        for p in c.points() {
            for &x in p {
                assert!(((x / 2.0).round() * 2.0 - x).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tiled_poisson_laplace_and_independence() {
        let base = ProcessModel::poisson(1.0);
        let m = ProcessModel::Tiled { base: Box::new(base), side: 1.0 };
        let b = BoxSpec::centered(2.0, 2);
        let unit = BoxSpec::centered(1.0, 2);
        let mut vals = Vec::new();
        let mut table = vec![vec![0.0; 4]; 4];
        let left = BoxSpec::new(1.0, Point::new(&[-0.5, 0.5])).unwrap();
        let right = BoxSpec::new(1.0, Point::new(&[0.5, 0.5])).unwrap();
        for i in 0..20_000 {
            let c = m.sample(&b, &stream(i)).unwrap();
            vals.push((-0.5 * c.count_in(&unit) as f64).exp());
            let a = c.count_in(&left).min(3);
            let r = c.count_in(&right).min(3);
            table[a][r] += 1.0;
        }
        let ms = mean_se(&vals);
        let want = (-(1.0 - (-0.5f64).exp())).exp();
        assert!((ms.mean - want).abs() < 4.0 * ms.se);
        let (_, _, p) = chi_square_independence(&table);
        assert!(p > 1e-3, "p={p}");
    }

    #[test]
    fn stationarized_shift_invariance() {
        let base = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 0.3 }, false);
        let m = ProcessModel::Stationarized { base: Box::new(base), side: 2.0 };
        let b = BoxSpec::centered(6.0, 1);
        let w0 = BoxSpec::centered(1.0, 1);
        let w1 = BoxSpec::new(1.0, Point::new(&[0.37])).unwrap();
        let (mut a, mut c) = (Vec::new(), Vec::new());
        for i in 0..4000 {
            let x = m.sample(&b, &stream(2 * i)).unwrap();
            let y = m.sample(&b, &stream(2 * i + 1)).unwrap();
            a.push(x.count_in(&w0) as f64);
            c.push(y.count_in(&w1) as f64);
        }
        let ma = mean_se(&a);
        // base has 2 points per tile of side 2: intensity 1
        assert!((ma.mean - 1.0).abs() < 4.0 * ma.se + 1e-9);
        // discrete counts: compare distributions by a chi-square on the count histogram
        let mut table = vec![vec![0.0; 3]; 2];
        for &v in &a {
            table[0][(v as usize).min(2)] += 1.0;
        }
        for &v in &c {
            table[1][(v as usize).min(2)] += 1.0;
        }
        let (_, _, p) = chi_square_independence(&table);
        assert!(p > 1e-3, "p={p}");
        let _ = ks_two_sample;
    }

    #[test]
    fn binomial_examples() {
        let b = BoxSpec::centered(2.0, 2);
        assert!(sample_binomial(&b, 0, &stream(0)).is_empty());
        let xs: Vec<f64> = (0..5000).map(|i| sample_binomial(&b, 1, &stream(i)).point(0)[0]).collect();
        let (_, p) = crate::stats::ks_one_sample(&xs, |x| ((x + 1.0) / 2.0).clamp(0.0, 1.0));
        assert!(p > 1e-3);
    }

    // oracle: Poisson samples rejected unless the count equals k
    #[test]
    fn binomial_matches_conditioned_poisson() {
        let b = BoxSpec::centered(1.0, 1);
        let mut rej = Vec::new();
        let mut i = 0;
        while rej.len() < 4000 {
            let c = sample_poisson(&b, 2.0, &RngStream::new(9, i)).unwrap();
            i += 1;
            if c.len() == 2 {
                let mut v: Vec<f64> = c.points().map(|p| p[0]).collect();
                v.sort_by(f64::total_cmp);
                rej.push(v[0]);
            }
        }
        let bin: Vec<f64> = (0..4000)
            .map(|j| {
                let c = sample_binomial(&b, 2, &RngStream::new(10, j));
                c.point(0)[0].min(c.point(1)[0])
            })
            .collect();
        let (_, p) = ks_two_sample(&rej, &bin);
        assert!(p > 1e-3, "p={p}");
    }

    #[test]
    fn log_density_examples() {
        let b = BoxSpec::centered(3.0, 2);
        let c = sample_poisson(&b, 1.0, &stream(3)).unwrap();
        assert_eq!(ProcessModel::poisson(1.0).log_density_wrt_poisson(&c, &b).unwrap(), LogDensity::Finite(0.0));
        let LogDensity::Finite(v) = ProcessModel::poisson(2.0).log_density_wrt_poisson(&c, &b).unwrap() else {
            panic!()
        };
        assert!((v - (-9.0 + c.len() as f64 * 2f64.ln())).abs() < 1e-12);
        let g = ProcessModel::grid(DensityFamily::UniformCell { epsilon: 1.0 }, false);
        let c = g.sample(&b, &stream(4)).unwrap();
        assert_eq!(g.log_density_wrt_poisson(&c, &b).unwrap(), LogDensity::Finite(9.0));
        let empty = Configuration::empty(2, Window::Box(b.clone()));
        assert_eq!(g.log_density_wrt_poisson(&empty, &b).unwrap(), LogDensity::OutOfSupport);
        assert!(ProcessModel::LatticeGrid { stationarized: true }.log_density_wrt_poisson(&empty, &b).is_err());
    }

    // E_Poi[dP/dPoi] = 1, importance-sampled from P for the thin grid support
    #[test]
    fn log_density_normalizes() {
        let b = BoxSpec::centered(2.0, 1);
        let m = ProcessModel::poisson(1.7);
        let vals: Vec<f64> = (0..40_000)
            .map(|i| {
                let c = sample_poisson(&b, 1.0, &stream(i)).unwrap();
                m.log_density_wrt_poisson(&c, &b).unwrap().value().exp()
            })
            .collect();
        let ms = mean_se(&vals);
        assert!((ms.mean - 1.0).abs() < 3.0 * ms.se, "{ms:?}");
        // grid: E_P[1/(dP/dPoi)] = Poi(support) <= 1, and equals the Poisson probability of
        // one point per cell times 1 (the density integrates to 1 on each cell)
        let g = ProcessModel::grid(DensityFamily::CosineBump, false);
        let inv: Vec<f64> = (0..40_000)
            .map(|i| (-g.log_density_wrt_poisson(&g.sample(&b, &stream(i)).unwrap(), &b).unwrap().value()).exp())
            .collect();
        let ms = mean_se(&inv);
        let want = (-2.0f64).exp();
        assert!((ms.mean - want).abs() < 3.0 * ms.se, "{ms:?} vs {want}");
    }

    #[test]
    fn heated_keeps_intensity() {
        let m = ProcessModel::Heated { base: Box::new(ProcessModel::LatticeGrid { stationarized: true }), time: 0.1 };
        let b = BoxSpec::centered(4.0, 2);
        let counts: Vec<f64> = (0..2000).map(|i| m.sample(&b, &stream(i)).unwrap().len() as f64).collect();
        let ms = mean_se(&counts);
        assert!((ms.mean - 16.0).abs() < 4.0 * ms.se);
    }

    #[test]
    fn model_json_roundtrip() {
        let m: ProcessModel =
            serde_json::from_str(r#"{"kind":"perturbed_grid","density":{"kind":"cosine_bump"},"stationarized":true}"#)
                .unwrap();
        assert_eq!(m, ProcessModel::grid(DensityFamily::CosineBump, true));
        let p: ProcessModel = serde_json::from_str(r#"{"kind":"poisson"}"#).unwrap();
        assert_eq!(p, ProcessModel::poisson(1.0));
    }

    #[test]
    fn determinism() {
        let m = ProcessModel::grid(DensityFamily::CosineBump, true);
        let b = BoxSpec::centered(4.0, 3);
        assert_eq!(m.sample(&b, &stream(7)).unwrap(), m.sample(&b, &stream(7)).unwrap());
    }
}
