use anyhow::{bail, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use ppot::dynamics::{
    contraction_check, entropy_decay_curve, evi_check_box_k, evi_check_stationary, evolve_free, evolve_reflected,
    hwi_check, EviSettings, HeatCoupling, NoiseCoupling, PdeSettings, Verdict,
};
use ppot::entropy::{fisher_box, fisher_closed_form_grid, specific_entropy_profile};
use ppot::geodesics::constant_speed_profile;
use ppot::modification::{modification_ensemble, CrossingRule};
use ppot::parallel::map_trials;
use ppot::processes::ProcessModel;
use ppot::transport::{estimate_cost_per_volume, CostParams, CouplingKind};
use ppot::validation::{run_criterion, CRITERIA};
use ppot::{BoxSpec, Configuration, RngStream};

use crate::models::{model_hash, parse_model, particle_density, MODEL_HELP};
use crate::output::{num, opt, snake, Payload, Table};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingArg {
    Independent,
    SharedGrid,
    Comonotone,
}

impl From<CouplingArg> for CouplingKind {
    fn from(c: CouplingArg) -> Self {
        match c {
            CouplingArg::Independent => Self::Independent,
            CouplingArg::SharedGrid => Self::SharedGrid,
            CouplingArg::Comonotone => Self::Comonotone,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseArg {
    Synchronous,
    Independent,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleArg {
    First,
    Last,
}

fn params(p: f64) -> Result<CostParams> {
    Ok(CostParams::new(p)?)
}

fn stream(seed: u64, tag: &str) -> RngStream {
    RngStream::tagged(seed, tag)
}

fn any_violated<'a>(v: impl IntoIterator<Item = &'a Verdict>) -> bool {
    v.into_iter().any(Verdict::is_violated)
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long, help = MODEL_HELP)]
    pub model: String,
    /// side of the centred box
    #[arg(long = "box", default_value_t = 4.0)]
    pub box_side: f64,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

fn config_rows(columns_d: usize, configs: &[Configuration]) -> Table {
    let mut cols = vec!["trial_id".to_string(), "point_index".to_string()];
    cols.extend((1..=columns_d).map(|i| format!("x_{i}")));
    let mut t = Table { columns: cols, rows: Vec::new() };
    for (trial, c) in configs.iter().enumerate() {
        for (i, p) in c.points().enumerate() {
            let mut row = vec![trial.to_string(), i.to_string()];
            row.extend(p.iter().map(|&x| num(x)));
            t.push(row);
        }
    }
    t
}

fn configs_json(configs: &[Configuration]) -> serde_json::Value {
    json!(configs.iter().map(|c| c.points().map(|p| p.to_vec()).collect::<Vec<_>>()).collect::<Vec<_>>())
}

pub fn sample(a: &SampleArgs, seed: u64) -> Result<Payload> {
    let m = parse_model(&a.model)?;
    let bx = BoxSpec::centered(a.box_side, a.dim);
    let s = stream(seed, "sample");
    let configs = map_trials(a.trials, |t| m.sample(&bx, &s.substream(t as u64)))
        .into_iter()
        .collect::<ppot::Result<Vec<_>>>()?;
    Ok(Payload {
        data: json!({ "model": m, "box_side": a.box_side, "configurations": configs_json(&configs) }),
        table: config_rows(a.dim, &configs),
        violated: false,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct CostArgs {
    #[arg(long, help = MODEL_HELP)]
    pub a: String,
    #[arg(long, help = MODEL_HELP)]
    pub b: String,
    #[arg(long, value_enum, default_value_t = CouplingArg::Independent)]
    pub coupling: CouplingArg,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0, 8.0])]
    pub boxes: Vec<f64>,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

pub fn cost(a: &CostArgs, seed: u64) -> Result<Payload> {
    let (ma, mb) = (parse_model(&a.a)?, parse_model(&a.b)?);
    let prof = estimate_cost_per_volume(&ma, &mb, a.coupling.into(), &a.boxes, a.dim, &params(a.p)?, a.trials, &stream(seed, "cost"))?;
    let mut t = Table::new(&["box_side", "trials", "p", "coupling", "cost_per_volume", "std_error"]);
    for e in &prof.estimates {
        t.push(vec![num(e.box_side), e.trials.to_string(), num(e.p), prof.coupling.to_string(), num(e.per_volume_mean), num(e.std_error)]);
    }
    Ok(Payload { data: json!({ "a": ma, "b": mb, "profile": prof }), table: t, violated: false })
}

#[derive(Debug, Args, Serialize)]
pub struct GeodesicArgs {
    #[arg(long, help = MODEL_HELP)]
    pub a: String,
    #[arg(long, help = MODEL_HELP)]
    pub b: String,
    #[arg(long, value_enum, default_value_t = CouplingArg::SharedGrid)]
    pub coupling: CouplingArg,
    /// interpolation times; must include 0 and 1
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
    pub times: Vec<f64>,
    #[arg(long = "box", default_value_t = 4.0)]
    pub box_side: f64,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
}

/// Violated when some `|Ŵ(P_s,P_t) - (t-s)Ŵ(P_0,P_1)|` exceeds 4 combined SE.
pub fn geodesic(a: &GeodesicArgs, seed: u64) -> Result<Payload> {
    let (ma, mb) = (parse_model(&a.a)?, parse_model(&a.b)?);
    let rows = constant_speed_profile(
        &ma,
        &mb,
        a.coupling.into(),
        &a.times,
        a.box_side,
        a.dim,
        &params(a.p)?,
        a.trials,
        &stream(seed, "geodesic"),
    )?;
    let mut t = Table::new(&["s", "t", "W_hat", "expected", "abs_gap", "std_error"]);
    for r in &rows {
        t.push(vec![num(r.s), num(r.t), num(r.w_hat), num(r.expected), num(r.abs_gap), num(r.std_error)]);
    }
    let violated = rows.iter().any(|r| r.abs_gap > 4.0 * r.std_error + 1e-12);
    Ok(Payload { data: json!({ "a": ma, "b": mb, "rows": rows }), table: t, violated })
}

#[derive(Debug, Args, Serialize)]
pub struct ModifyArgs {
    #[arg(long, default_value = "lattice", help = MODEL_HELP)]
    pub a: String,
    #[arg(long, default_value = "grid-uniform", help = MODEL_HELP)]
    pub b: String,
    #[arg(long, value_enum, default_value_t = CouplingArg::SharedGrid)]
    pub coupling: CouplingArg,
    /// box index: the layer is Λ_n minus Λ_{n-1}
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::Last)]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

pub fn modify(a: &ModifyArgs, seed: u64) -> Result<Payload> {
    let (ma, mb) = (parse_model(&a.a)?, parse_model(&a.b)?);
    let rule = match a.rule {
        RuleArg::First => CrossingRule::First,
        RuleArg::Last => CrossingRule::Last,
    };
    let rep = modification_ensemble(&ma, &mb, a.coupling.into(), a.n, a.dim, rule, &params(a.p)?, a.trials, &stream(seed, "modify"))?;
    let mut t = Table::new(&["quantity", "key", "value"]);
    t.push(vec!["n".into(), String::new(), rep.n.to_string()]);
    t.push(vec!["N".into(), String::new(), rep.cells.to_string()]);
    t.push(vec!["cost_before".into(), String::new(), num(rep.cost_before)]);
    t.push(vec!["cost_after".into(), String::new(), num(rep.cost_after)]);
    for (l, count) in &rep.l_histogram {
        t.push(vec!["l_histogram".into(), l.to_string(), count.to_string()]);
    }
    for (cell, k) in rep.k_totals.iter().enumerate() {
        t.push(vec!["k_totals".into(), cell.to_string(), k.to_string()]);
    }
    Ok(Payload { data: serde_json::to_value(&rep)?, table: t, violated: false })
}

#[derive(Debug, Args, Serialize)]
pub struct EntropyArgs {
    #[arg(long, help = MODEL_HELP)]
    pub model: String,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0, 8.0])]
    pub boxes: Vec<f64>,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
}

pub fn entropy(a: &EntropyArgs, seed: u64) -> Result<Payload> {
    let m = parse_model(&a.model)?;
    let prof = specific_entropy_profile(&m, &a.boxes, a.dim, a.trials, &stream(seed, "entropy"))?;
    let hash = model_hash(&m);
    let mut t = Table::new(&["model_hash", "n", "ent_per_volume", "se"]);
    for e in &prof.estimates {
        t.push(vec![hash.clone(), num(e.box_side), num(e.ent_per_volume), num(e.std_error)]);
    }
    let sup = prof.running_max.last().copied();
    let analytic = m.analytic_specific_entropy(a.dim).ok();
    Ok(Payload {
        data: json!({ "model": m, "model_hash": hash, "profile": prof, "sup": sup, "analytic": analytic }),
        table: t,
        violated: false,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct FisherArgs {
    #[arg(long, help = MODEL_HELP)]
    pub model: String,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0])]
    pub boxes: Vec<f64>,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
}

pub fn fisher(a: &FisherArgs) -> Result<Payload> {
    let m = parse_model(&a.model)?;
    let closed = match &m {
        ProcessModel::PerturbedGrid { density, .. } => Some(fisher_closed_form_grid(density, a.dim)?),
        _ => None,
    };
    let hash = model_hash(&m);
    let ests = a.boxes.iter().map(|&n| fisher_box(&m, n, a.dim)).collect::<ppot::Result<Vec<_>>>()?;
    let mut t = Table::new(&["model_hash", "n", "fisher_per_volume", "method", "closed_form"]);
    for e in &ests {
        t.push(vec![hash.clone(), num(e.box_side), num(e.fisher_per_volume), snake(&e.method), opt(closed)]);
    }
    Ok(Payload { data: json!({ "model": m, "model_hash": hash, "estimates": ests, "closed_form": closed }), table: t, violated: false })
}

#[derive(Debug, Args, Serialize)]
pub struct EvolveArgs {
    #[arg(long, help = MODEL_HELP)]
    pub model: String,
    #[arg(long = "box", default_value_t = 4.0)]
    pub box_side: f64,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    /// run time (Brownian motion with variance t per coordinate)
    #[arg(long, short)]
    pub t: f64,
    /// reflect at the walls of the box instead of running freely
    #[arg(long)]
    pub reflected: bool,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

pub fn evolve(a: &EvolveArgs, seed: u64) -> Result<Payload> {
    let m = parse_model(&a.model)?;
    let bx = BoxSpec::centered(a.box_side, a.dim);
    let s = stream(seed, "evolve");
    let configs = map_trials(a.trials, |t| {
        let fam = s.substream(t as u64);
        let c = m.sample(&bx, &fam.substream(0))?;
        let mut rng = fam.substream(1).rng();
        if a.reflected {
            evolve_reflected(&c, &bx, a.t, &mut rng)
        } else {
            evolve_free(&c, a.t, &mut rng)
        }
    })
    .into_iter()
    .collect::<ppot::Result<Vec<_>>>()?;
    Ok(Payload {
        data: json!({ "model": m, "box_side": a.box_side, "t": a.t, "reflected": a.reflected, "configurations": configs_json(&configs) }),
        table: config_rows(a.dim, &configs),
        violated: false,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct EviArgs {
    #[command(subcommand)]
    pub level: EviLevel,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EviLevel {
    /// k particles in a box against the uniform reference
    Box(EviBoxArgs),
    /// Stationary processes against a reference process
    Stationary(EviStationaryArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EviBoxArgs {
    /// one-particle density: uniform-box, uniform[:ε], cosine or gauss:<σ>
    #[arg(long, default_value = "cosine")]
    pub density: String,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    /// distance from the lower wall to the cell carrying the density
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, short, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05, 0.1])]
    pub times: Vec<f64>,
    /// configurations per empirical measure
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct EviStationaryArgs {
    #[arg(long, help = MODEL_HELP)]
    pub p: String,
    #[arg(long, default_value = "poisson", help = MODEL_HELP)]
    pub r: String,
    #[arg(long, value_enum, default_value_t = NoiseArg::Synchronous)]
    pub heat_coupling: NoiseArg,
    /// times, starting at 0
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.05, 0.1, 0.2])]
    pub times: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [4.0])]
    pub boxes: Vec<f64>,
    #[arg(long, short, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

pub fn evi(a: &EviArgs, seed: u64) -> Result<Payload> {
    match &a.level {
        EviLevel::Box(b) => {
            let p = particle_density(&b.density, b.side, b.offset)?;
            let r = particle_density("uniform-box", b.side, 0.0)?;
            let settings = EviSettings { samples: b.samples, trials: b.trials, pde: PdeSettings::default() };
            let reps = evi_check_box_k(&p, &r, b.k, b.dim, &b.times, &settings, &stream(seed, "evi-box"))?;
            let mut t = Table::new(&["t", "w2_before", "w2_after", "ent_source_after", "ent_target", "slack", "se", "verdict"]);
            for r in &reps {
                t.push(vec![
                    num(r.t),
                    num(r.w2_before.mean),
                    num(r.w2_after.mean),
                    num(r.ent_source_after.mean),
                    num(r.ent_target.mean),
                    num(r.slack.mean),
                    num(r.slack.se),
                    snake(&r.verdict),
                ]);
            }
            let violated = any_violated(reps.iter().map(|r| &r.verdict));
            Ok(Payload { data: json!({ "source": p, "reference": r, "reports": reps }), table: t, violated })
        }
        EviLevel::Stationary(s) => {
            let (p, r) = (parse_model(&s.p)?, parse_model(&s.r)?);
            let coupling = match s.heat_coupling {
                NoiseArg::Synchronous => HeatCoupling::Synchronous,
                NoiseArg::Independent => HeatCoupling::Independent,
            };
            let rows = evi_check_stationary(
                &p,
                &r,
                coupling,
                &s.times,
                &s.boxes,
                s.dim,
                &CostParams::default(),
                s.trials,
                &stream(seed, "evi-stationary"),
            )?;
            let mut t = Table::new(&["t", "box_side", "cost", "se", "slack", "slack_se", "increase_z", "verdict"]);
            for row in &rows {
                for c in &row.cost {
                    t.push(vec![
                        num(row.t),
                        num(c.box_side),
                        num(c.per_volume_mean),
                        num(c.std_error),
                        opt(row.slack.map(|s| s.mean)),
                        opt(row.slack.map(|s| s.se)),
                        opt(row.increase_z),
                        snake(&row.verdict),
                    ]);
                }
            }
            let mode = if rows.iter().any(|r| r.slack.is_some()) { "evi" } else { "monotonicity of the cost to the reference" };
            let violated = any_violated(rows.iter().map(|r| &r.verdict));
            Ok(Payload { data: json!({ "p": p, "r": r, "checked": mode, "rows": rows }), table: t, violated })
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ContractionArgs {
    #[arg(long, help = MODEL_HELP)]
    pub a: String,
    #[arg(long, help = MODEL_HELP)]
    pub b: String,
    #[arg(long, value_enum, default_value_t = CouplingArg::SharedGrid)]
    pub coupling: CouplingArg,
    #[arg(long, value_enum, default_value_t = NoiseArg::Synchronous)]
    pub noise: NoiseArg,
    #[arg(long, short, default_value_t = 0.1)]
    pub t: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [4.0])]
    pub boxes: Vec<f64>,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

pub fn contraction(a: &ContractionArgs, seed: u64) -> Result<Payload> {
    let (ma, mb) = (parse_model(&a.a)?, parse_model(&a.b)?);
    let noise = match a.noise {
        NoiseArg::Synchronous => NoiseCoupling::Synchronous,
        NoiseArg::Independent => NoiseCoupling::Independent,
    };
    let reps = contraction_check(
        &ma,
        &mb,
        a.coupling.into(),
        noise,
        a.t,
        &a.boxes,
        a.dim,
        &params(a.p)?,
        a.trials,
        &stream(seed, "contraction"),
    )?;
    let mut t = Table::new(&["t", "box_side", "noise", "before", "before_se", "after", "after_se", "difference", "difference_se", "verdict"]);
    for r in &reps {
        t.push(vec![
            num(r.t),
            num(r.box_side),
            snake(&r.noise),
            num(r.before.per_volume_mean),
            num(r.before.std_error),
            num(r.after.per_volume_mean),
            num(r.after.std_error),
            num(r.difference.mean),
            num(r.difference.se),
            snake(&r.verdict),
        ]);
    }
    // independent noise is a diagnostic; only the synchronous coupling is judged
    let violated = matches!(noise, NoiseCoupling::Synchronous) && any_violated(reps.iter().map(|r| &r.verdict));
    Ok(Payload { data: json!({ "a": ma, "b": mb, "reports": reps }), table: t, violated })
}

#[derive(Debug, Args, Serialize)]
pub struct HwiArgs {
    #[arg(long, default_value = "grid-cosine", help = MODEL_HELP)]
    pub model: String,
    #[arg(long, value_delimiter = ',', default_values_t = [3.0, 4.0])]
    pub boxes: Vec<f64>,
    #[arg(long, short, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
}

pub fn hwi(a: &HwiArgs, seed: u64) -> Result<Payload> {
    let m = parse_model(&a.model)?;
    let reps = hwi_check(&m, &a.boxes, a.dim, a.trials, &stream(seed, "hwi"))?;
    let mut t = Table::new(&["box_side", "lhs", "w2", "w2_se", "fisher", "rhs", "rhs_se", "slack", "slack_se", "verdict"]);
    for r in &reps {
        t.push(vec![
            num(r.box_side),
            num(r.lhs),
            num(r.w2.mean),
            num(r.w2.se),
            num(r.fisher),
            num(r.rhs.mean),
            num(r.rhs.se),
            num(r.slack.mean),
            num(r.slack.se),
            snake(&r.verdict),
        ]);
    }
    let violated = any_violated(reps.iter().map(|r| &r.verdict));
    Ok(Payload { data: json!({ "model": m, "reports": reps }), table: t, violated })
}

#[derive(Debug, Args, Serialize)]
pub struct DecayArgs {
    /// one-particle density: uniform-box, uniform[:ε], cosine or gauss:<σ>
    #[arg(long, default_value = "cosine")]
    pub density: String,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    #[arg(long, default_value_t = 0.0)]
    pub offset: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5])]
    pub times: Vec<f64>,
}

/// Violated when the entropy curve increases anywhere.
pub fn decay(a: &DecayArgs) -> Result<Payload> {
    let p = particle_density(&a.density, a.side, a.offset)?;
    let curve = entropy_decay_curve(&p, &a.times, &PdeSettings::default())?;
    let mut t = Table::new(&["t", "value", "se"]);
    for (&time, &v) in curve.times.iter().zip(&curve.values) {
        t.push(vec![num(time), num(v), num(0.0)]);
    }
    let violated = !curve.nonincreasing;
    Ok(Payload { data: json!({ "density": p, "curve": curve }), table: t, violated })
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    /// subset of criteria to run (default: all)
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<u8>,
}

pub fn validate(a: &ValidateArgs, seed: u64) -> Result<Payload> {
    let ids: Vec<u8> = if a.criteria.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { a.criteria.clone() };
    if let Some(bad) = ids.iter().find(|id| !CRITERIA.iter().any(|c| c.0 == **id)) {
        bail!("unknown criterion {bad}");
    }
    let outcomes: Vec<_> = ids.iter().map(|&id| run_criterion(id, seed)).collect();
    for o in &outcomes {
        eprintln!("{}", o.line());
    }
    let mut t = Table::new(&["id", "name", "pass", "seconds", "budget_seconds", "details"]);
    for o in &outcomes {
        t.push(vec![
            o.id.to_string(),
            o.name.to_string(),
            o.pass.to_string(),
            format!("{:.1}", o.seconds),
            opt(o.budget_seconds),
            o.details.join("; "),
        ]);
    }
    let violated = outcomes.iter().any(|o| !o.pass);
    Ok(Payload { data: json!({ "outcomes": outcomes }), table: t, violated })
}
