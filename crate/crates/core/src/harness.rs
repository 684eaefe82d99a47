//! Experiment sweeps over `eps`: configuration, per-cell execution, CSV
//! output and log-log scaling fits.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::caps::{grid_size, SizeCaps};
use crate::cost::{cost_model, trajectory_norm_ratio, CostMethod};
use crate::deterministic::{solve_cg, solve_fft, solve_timestepping, CgOptions};
use crate::error::{invalid, Error, Result};
use crate::montecarlo::{estimate_heat_mc, McMode, McOptions, RngStream};
use crate::operators::{assemble_block_system, SolutionField};
use crate::problem::{
    exact_integral, plan_discretization, Alignment, DiscretizationPlan, InitialCondition, ProblemSpec, Region,
};
use crate::quadrature::{integrate, RuleKind};

/// CSV column order.
pub const CSV_COLUMNS: [&str; 9] = ["method", "d", "eps", "rep", "value", "error", "wall_ns", "count", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub alpha: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    Uniform,
    Point { origin: Vec<usize> },
    Cosine { modes: Vec<u32> },
}

impl InitialConfig {
    pub fn to_condition(&self) -> InitialCondition {
        match self {
            Self::Uniform => InitialCondition::Uniform,
            Self::Point { origin } => InitialCondition::PointSource { origin: origin.clone() },
            Self::Cosine { modes } => InitialCondition::CosineModes { modes: modes.clone() },
        }
    }
}

/// Geometric `eps` range from `max` down to `min`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EpsSweep {
    pub max: f64,
    pub min: f64,
    pub points: usize,
}

impl EpsSweep {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.max];
        }
        let ratio = (self.min / self.max).ln() / (self.points - 1) as f64;
        (0..self.points)
            .map(|k| match k {
                0 => self.max,
                k if k + 1 == self.points => self.min,
                k => self.max * (ratio * k as f64).exp(),
            })
            .collect()
    }
}

fn default_reps() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_threads() -> usize {
    1
}
fn default_region() -> Vec<(f64, f64)> {
    vec![(0.0, 0.5)]
}

/// TOML experiment description.
///
/// ```toml
/// methods = ["step", "fft", "fast_rw"]
/// reps = 3
/// seed = 7
///
/// [problem]
/// d = 1
/// L = 1.0
/// T = 1.0
/// alpha = 1.0
/// zeta = 3.0
///
/// [initial]
/// kind = "cosine"
/// modes = [1]
///
/// [sweep]
/// max = 0.1
/// min = 0.01
/// points = 5
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub initial: InitialConfig,
    pub methods: Vec<String>,
    pub sweep: EpsSweep,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Integration box as fractions of `[0, L]`; one pair applies to every dimension.
    #[serde(default = "default_region")]
    pub region: Vec<(f64, f64)>,
    /// When false every `wall_ns` is written as 0 and no warm-up runs are made.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Worker threads used inside the Monte Carlo estimators.
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// One cap for every resource; falls back to `HEATBENCH_SIZE_CAP` and then the defaults.
    #[serde(default)]
    pub size_cap: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(invalid("reps", "must be at least 1"));
        }
        if self.sweep.points < 3 {
            return Err(invalid("sweep.points", "a slope fit needs at least 3 points"));
        }
        if !(self.sweep.max < 1.0 && self.sweep.min > 0.0 && self.sweep.min <= self.sweep.max) {
            return Err(invalid("sweep", "need 0 < min <= max < 1"));
        }
        for m in &self.methods {
            m.parse::<CostMethod>()?;
        }
        self.spec(self.sweep.max)?;
        Ok(())
    }

    pub fn spec(&self, eps: f64) -> Result<ProblemSpec> {
        let p = &self.problem;
        ProblemSpec::new(p.d, p.l, p.t, p.alpha, p.zeta, eps)
    }

    pub fn caps(&self) -> SizeCaps {
        match self.size_cap {
            Some(c) => SizeCaps::uniform(c as u128),
            None => SizeCaps::from_env(),
        }
    }
}

/// The `[problem]` and `[initial]` tables of a config file, plus an optional
/// top-level `eps`. Other keys are ignored, so an experiment file can be
/// reused for single solves.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ProblemFile {
    pub problem: ProblemConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub sweep: Option<EpsSweep>,
}

impl ProblemFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| text[..s.start].lines().count().max(1)).unwrap_or(0),
            reason: e.message().to_string(),
        })
    }

    /// `eps`, else the coarse end of the sweep.
    pub fn default_eps(&self) -> Option<f64> {
        self.eps.or(self.sweep.map(|s| s.max))
    }
}

/// One CSV line. Cost-only methods store the model cost in `value` and
/// NaN in `error`; failed cells store NaN in both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub d: usize,
    pub eps: f64,
    pub rep: usize,
    pub value: f64,
    pub error: f64,
    pub wall_ns: u64,
    pub count: u64,
    pub seed: u64,
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Config {
            line: 1,
            reason: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one `(method, eps index, rep)` cell, independent of the other cells.
pub fn cell_seed(seed: u64, method: &str, eps_index: usize, rep: usize) -> u64 {
    let tag = method
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    splitmix(splitmix(splitmix(seed ^ tag) ^ eps_index as u64) ^ rep as u64)
}

struct Outcome {
    value: f64,
    reference: Option<f64>,
    count: u64,
}

fn reference(ic: &InitialCondition, region: &Region, spec: &ProblemSpec) -> Option<f64> {
    exact_integral(ic, region.intervals(), spec.t, spec).ok()
}

fn check_grid(plan: &DiscretizationPlan, caps: &SizeCaps) -> Result<()> {
    SizeCaps::check(grid_size(plan.n(), plan.d()), caps.grid)
}

fn run_cell(
    method: CostMethod,
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    ic: &InitialCondition,
    caps: &SizeCaps,
    seed: u64,
) -> Result<Outcome> {
    let grid_solve = |plan: &DiscretizationPlan| -> Result<(Region, SolutionField)> {
        check_grid(plan, caps)?;
        let region = Region::from_fractions(plan, Alignment::GridCorners, &cfg.region)?;
        Ok((region, ic.grid_field(plan)?))
    };
    match method {
        CostMethod::Step | CostMethod::Fft | CostMethod::Cg => {
            let plan = plan_discretization(spec)?;
            let (region, u0) = grid_solve(&plan)?;
            let (field, count) = match method {
                CostMethod::Step => (
                    solve_timestepping(&plan, &u0, plan.m())?,
                    plan.m() as u64 * grid_size(plan.n(), plan.d()) as u64,
                ),
                CostMethod::Fft => (solve_fft(&plan, &u0, plan.m())?, grid_size(plan.n(), plan.d()) as u64),
                _ => {
                    let system = assemble_block_system(&plan, &u0, caps)?;
                    let sol = solve_cg(&system, &CgOptions::default())?;
                    let it = sol.iterations as u64;
                    (sol.fields.into_iter().last().expect("m >= 1"), it)
                }
            };
            Ok(Outcome {
                value: integrate(&field, &plan, &region, RuleKind::Simpson)?,
                reference: reference(ic, &region, spec),
                count,
            })
        }
        CostMethod::Rw | CostMethod::FastRw => {
            let plan = crate::problem::plan_discretization_midpoint(spec)?;
            let region = Region::from_fractions(&plan, Alignment::HalfShifted, &cfg.region)?;
            let mode = if method == CostMethod::Rw { McMode::Naive } else { McMode::Fast };
            let opts = McOptions {
                samples: None,
                threads: cfg.threads,
            };
            let est = estimate_heat_mc(spec, ic, &region, spec.t, mode, &opts, &mut RngStream::new(seed))?;
            Ok(Outcome {
                value: est.value,
                reference: reference(ic, &region, spec),
                count: est.samples,
            })
        }
        _ => {
            let g = if method == CostMethod::OdeBerry {
                let plan = plan_discretization(spec)?;
                match grid_solve(&plan) {
                    Ok((_, u0)) => Some(trajectory_norm_ratio(&plan, &u0)?),
                    Err(Error::SizeCap { .. }) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            let report = cost_model(method, spec, g)?;
            Ok(Outcome {
                value: report.value(),
                reference: None,
                count: report.value().ceil().min(u64::MAX as f64) as u64,
            })
        }
    }
}

/// Run every `(method, eps, rep)` cell in order. Cells that hit a size cap
/// are written with NaN value and error and a warning on stderr.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let caps = cfg.caps();
    let ic = cfg.initial.to_condition();
    let methods = cfg
        .methods
        .iter()
        .map(|m| m.parse::<CostMethod>())
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (&method, tag) in methods.iter().zip(&cfg.methods) {
        for (k, eps) in cfg.sweep.values().into_iter().enumerate() {
            let spec = cfg.spec(eps)?;
            if cfg.timing {
                // Warm-up; a failure here resurfaces in the timed runs.
                let _ = run_cell(method, cfg, &spec, &ic, &caps, cell_seed(cfg.seed, tag, k, usize::MAX));
            }
            for rep in 0..cfg.reps {
                let seed = cell_seed(cfg.seed, method.tag(), k, rep);
                let start = Instant::now();
                let result = run_cell(method, cfg, &spec, &ic, &caps, seed);
                let wall = start.elapsed().as_nanos() as u64;
                let row = match result {
                    Ok(o) => ResultRow {
                        method: method.tag().to_string(),
                        d: spec.d,
                        eps,
                        rep,
                        value: o.value,
                        error: o.reference.map_or(f64::NAN, |r| (o.value - r).abs()),
                        wall_ns: if cfg.timing { wall } else { 0 },
                        count: o.count,
                        seed,
                    },
                    Err(e @ Error::SizeCap { .. }) => {
                        eprintln!("warning: {} at eps = {eps:e}, rep {rep}: {e}", method.tag());
                        ResultRow {
                            method: method.tag().to_string(),
                            d: spec.d,
                            eps,
                            rep,
                            value: f64::NAN,
                            error: f64::NAN,
                            wall_ns: 0,
                            count: 0,
                            seed,
                        }
                    }
                    Err(e) => return Err(e),
                };
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Quantity regressed against `log(1/eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMetric {
    WallTime,
    Count,
    Value,
}

impl FitMetric {
    /// Wall time for classical methods, the model cost for quantum ones.
    pub fn default_for(method: &str) -> Self {
        match method.parse::<CostMethod>() {
            Ok(m) if m.is_quantum() || m == CostMethod::OdeBerry => Self::Value,
            _ => Self::WallTime,
        }
    }

    fn of(self, row: &ResultRow) -> f64 {
        match self {
            Self::WallTime => row.wall_ns as f64,
            Self::Count => row.count as f64,
            Self::Value => row.value,
        }
    }
}

impl std::str::FromStr for FitMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wall" | "wall_ns" => Ok(Self::WallTime),
            "count" => Ok(Self::Count),
            "value" | "cost" => Ok(Self::Value),
            other => Err(invalid("metric", format!("expected wall, count or value, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    pub method: String,
    /// Exponent `s` in `metric ~ eps^-s`.
    pub slope: f64,
    pub std_error: f64,
    pub points: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Least-squares slope of `log(median metric)` against `log(1/eps)`, one
/// point per distinct `eps`. Non-finite and non-positive medians are skipped.
pub fn fit_scaling(rows: &[ResultRow], method: &str, metric: FitMetric) -> Result<ScalingFit> {
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.method == method) {
        let v = metric.of(row);
        if v.is_finite() {
            groups.entry(row.eps.to_bits()).or_default().push(v);
        }
    }
    let points: Vec<(f64, f64)> = groups
        .into_iter()
        .filter_map(|(eps, mut v)| {
            let m = median(&mut v);
            (m > 0.0).then(|| (-f64::from_bits(eps).ln(), m.ln()))
        })
        .collect();
    let k = points.len();
    if k < 3 {
        return Err(Error::InsufficientRows {
            method: method.to_string(),
            needed: 3,
            got: k,
        });
    }
    let kf = k as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / kf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(invalid("eps", "all points share one eps"));
    }
    let slope = sxy / sxx;
    let ssr: f64 = points.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    Ok(ScalingFit {
        method: method.to_string(),
        slope,
        std_error: (ssr / (kf - 2.0) / sxx).sqrt(),
        points: k,
    })
}

/// Largest pairwise disagreement between the given methods at each `(eps, rep)`.
pub fn cross_check(rows: &[ResultRow], methods: &[&str]) -> Vec<(f64, usize, f64)> {
    let mut cells: BTreeMap<(u64, usize), Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| methods.contains(&r.method.as_str())) {
        cells.entry((row.eps.to_bits(), row.rep)).or_default().push(row.value);
    }
    cells
        .into_iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|((eps, rep), v)| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (f64::from_bits(eps), rep, hi - lo)
        })
        .collect()
}
