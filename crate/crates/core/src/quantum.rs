//! Exact classical simulation of the quantum estimators that admit one:
//! Fourier-space postselection, amplitude estimation through its outcome
//! distribution, and numerical integration against a weight state.

use std::f64::consts::PI;

use rand::Rng;

use crate::caps::{grid_size, SizeCaps};
use crate::deterministic::{fourier_power, solve_timestepping};
use crate::error::{invalid, Error, Result};
use crate::montecarlo::{McMode, RngStream};
use crate::operators::SolutionField;
use crate::problem::{plan_discretization_midpoint, DiscretizationPlan, InitialCondition, ProblemSpec, Region};
use crate::quadrature::{integrate, region_axes, weight_field, RuleKind};

/// Independent amplitude-estimation runs whose median is reported. Each run
/// succeeds with probability at least `8 / pi^2`; the median of 25 fails with
/// probability below 0.01.
pub const AE_MEDIAN_RUNS: usize = 25;

/// Amplitude-estimation grid size factor: `M = 2 ceil(pi / eps)`, which keeps
/// `pi / M + (pi / M)^2 <= eps` and makes `M` even so that `a = 1` is exact.
pub const AE_GRID_FACTOR: f64 = PI;

/// Largest `M` for which the full outcome pmf is tabulated before sampling.
const AE_TABLE_LIMIT: u64 = 1 << 12;

/// Repetition constant `c` in `k = ceil(c B)` for quantum integration.
pub const Q_INTEGRATE_REPETITION_CONSTANT: f64 = 8.0 * PI;

/// Unit vector over the `n^d` grid basis.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<f64>,
    n: usize,
    d: usize,
}

impl QuantumState {
    /// Normalise `v`; fails on the zero vector.
    pub fn from_vector(v: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("state", "cannot normalise a zero or non-finite vector"));
        }
        Ok(Self {
            amplitudes: v.into_iter().map(|x| x / norm).collect(),
            n,
            d,
        })
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a * b).sum()
    }
}

/// Normalised `L^i u0` computed through the Fourier basis, together with the
/// probability `||L^i u0||^2 / ||u0||^2` that the eigenvalue postselection succeeds.
pub fn simulate_postselection(
    plan: &DiscretizationPlan,
    u0: &SolutionField,
    i: usize,
    caps: &SizeCaps,
) -> Result<(QuantumState, f64)> {
    u0.check_plan(plan)?;
    SizeCaps::check(grid_size(plan.n(), plan.d()), caps.state_vector)?;
    if i > plan.m() {
        return Err(Error::OutOfRange {
            index: i,
            limit: plan.m() + 1,
        });
    }
    let start = QuantumState::from_vector(u0.values().to_vec(), plan.n(), plan.d())?;
    let evolved: Vec<f64> = fourier_power(plan, start.amplitudes(), i as u64)
        .into_iter()
        .map(|z| z.re)
        .collect();
    let prob = evolved.iter().map(|x| x * x).sum::<f64>();
    Ok((QuantumState::from_vector(evolved, plan.n(), plan.d())?, prob))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AeConfig {
    /// Number of phase-estimation grid points (oracle queries per run).
    pub m: u64,
}

impl AeConfig {
    pub fn new(m: u64) -> Result<Self> {
        if m < 2 {
            return Err(invalid("M", format!("must be >= 2, got {m}")));
        }
        Ok(Self { m })
    }

    /// Grid size reaching additive error `eps` on a probability.
    pub fn for_eps(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(invalid("eps", "must be > 0"));
        }
        Self::new(2 * (AE_GRID_FACTOR / eps).ceil() as u64)
    }
}

/// Fejer kernel `sin^2(pi x) / (M^2 sin^2(pi x / M))`, equal to 1 when `x` is a multiple of `M`.
fn fejer(x: f64, m: u64) -> f64 {
    let mf = m as f64;
    let r = x.rem_euclid(mf);
    if r == 0.0 {
        return 1.0;
    }
    let s = (PI * r / mf).sin();
    if s == 0.0 {
        return 1.0;
    }
    let num = (PI * r).sin();
    num * num / (mf * mf * s * s)
}

/// Phase offset `omega = M arcsin(a) / pi`, snapped to an integer when within rounding.
fn phase_offset(a: f64, m: u64) -> f64 {
    let w = m as f64 * a.asin() / PI;
    let r = w.round();
    if (w - r).abs() <= 1e-9 * w.abs().max(1.0) {
        r
    } else {
        w
    }
}

/// Probability of outcome `y` when estimating amplitude `a` on an `M`-point grid.
pub fn ae_outcome_pmf(a: f64, m: u64, y: u64) -> f64 {
    let w = phase_offset(a, m);
    0.5 * (fejer(y as f64 - w, m) + fejer(y as f64 + w, m))
}

fn sample_outcome<R: Rng + ?Sized>(a: f64, m: u64, rng: &mut R) -> u64 {
    let w = phase_offset(a, m);
    if m <= AE_TABLE_LIMIT {
        let u = rng.random::<f64>();
        let mut acc = 0.0;
        for y in 0..m {
            acc += 0.5 * (fejer(y as f64 - w, m) + fejer(y as f64 + w, m));
            if u < acc {
                return y;
            }
        }
        return m - 1;
    }
    // Pick a branch of the mixture, then walk outward from its peak.
    let centre = if rng.random::<bool>() { w } else { -w };
    let base = centre.round();
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut k: i64 = 0;
    let limit = m as i64;
    while k < limit {
        let y = base + k as f64;
        acc += fejer(y - centre, m);
        if u < acc {
            return (y as i64).rem_euclid(limit) as u64;
        }
        k = if k > 0 { -k } else { -k + 1 };
    }
    (base as i64).rem_euclid(limit) as u64
}

/// One amplitude-estimation run: draws the phase-estimation outcome `y` and
/// returns `sin^2(pi y / M)`, an estimate of `a^2`.
pub fn simulate_amplitude_estimation<R: Rng + ?Sized>(a: f64, cfg: &AeConfig, rng: &mut R) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(invalid("a", format!("must lie in [0, 1], got {a}")));
    }
    let y = sample_outcome(a, cfg.m, rng);
    let s = (PI * y as f64 / cfg.m as f64).sin();
    Ok(s * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeEstimate {
    pub value: f64,
    /// Grid size `M` of each run.
    pub m: u64,
    pub runs: usize,
    /// Total oracle queries, `M * runs`.
    pub queries: u64,
    /// Classical walk steps per oracle call (naive) or its `d log` equivalent (fast).
    pub walk_cost_per_query: f64,
}

/// Median of `runs` independent estimates of `a^2`.
pub fn ae_median<R: Rng + ?Sized>(a: f64, cfg: &AeConfig, runs: usize, rng: &mut R) -> Result<f64> {
    if runs == 0 {
        return Err(invalid("runs", "must be at least 1"));
    }
    let mut v = (0..runs)
        .map(|_| simulate_amplitude_estimation(a, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    v.sort_by(f64::total_cmp);
    Ok(v[runs / 2])
}

/// Amplitude-estimation version of the random-walk estimator. The hit
/// probability is computed exactly on the midpoint grid and fed to the
/// simulated estimator as `a = sqrt(p)`.
pub fn estimate_heat_ae(
    spec: &ProblemSpec,
    ic: &InitialCondition,
    region: &Region,
    t: f64,
    mode: McMode,
    eps: f64,
    rng: &mut RngStream,
) -> Result<AeEstimate> {
    let plan = plan_discretization_midpoint(spec)?;
    let step = plan.step_index(t)?;
    let u0 = ic.grid_field(&plan)?;
    let field = solve_timestepping(&plan, &u0, step)?;
    let mut p = integrate(&field, &plan, region, RuleKind::Midpoint)?;
    if (p - 1.0).abs() < 1e-12 {
        p = 1.0;
    }
    let p = p.clamp(0.0, 1.0);
    let cfg = AeConfig::for_eps(eps)?;
    let value = ae_median(p.sqrt(), &cfg, AE_MEDIAN_RUNS, rng)?;
    let walk_cost_per_query = match mode {
        McMode::Naive => step as f64,
        McMode::Fast => plan.d() as f64 * ((step + 2) as f64).log2(),
    };
    Ok(AeEstimate {
        value,
        m: cfg.m,
        runs: AE_MEDIAN_RUNS,
        queries: cfg.m * AE_MEDIAN_RUNS as u64,
        walk_cost_per_query,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QIntegrateOptions {
    /// Relative error injected into the norm estimate; defaults to `1 / (4 B)`.
    pub gamma: Option<f64>,
    /// Amplitude-estimation grid size; defaults to the repetition count `k`.
    pub ae_m: Option<u64>,
    pub runs: usize,
}

impl Default for QIntegrateOptions {
    fn default() -> Self {
        Self {
            gamma: None,
            ae_m: None,
            runs: AE_MEDIAN_RUNS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QIntegrateResult {
    pub value: f64,
    /// `B = (sqrt(10) L / 3)^d ||u_i||_2 / (eps n^(d/2))`.
    pub b: f64,
    /// Repetition count `ceil(c B)`.
    pub k: u64,
    pub gamma: f64,
    pub ae_m: u64,
    pub norm_estimate: f64,
    pub inner_estimate: f64,
    /// Classical Simpson value the estimator targets.
    pub classical: f64,
}

/// Simpson integral of `L^i u0` over the region estimated as
/// `dx^d ||w|| ||u_i|| <w|u_i>`: the norm is perturbed by a relative error of
/// at most `gamma`, and the overlap is read from a Hadamard test through
/// amplitude estimation.
#[allow(clippy::too_many_arguments)]
pub fn quantum_integrate(
    plan: &DiscretizationPlan,
    u0: &SolutionField,
    i: usize,
    region: &Region,
    eps: f64,
    opts: &QIntegrateOptions,
    caps: &SizeCaps,
    rng: &mut RngStream,
) -> Result<QIntegrateResult> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be > 0"));
    }
    let (state, prob) = simulate_postselection(plan, u0, i, caps)?;
    let u_norm = u0.norm2() * prob.sqrt();
    let axes = region_axes(region, plan, RuleKind::Simpson)?;
    let weights = QuantumState::from_vector(weight_field(&axes, plan.n()), plan.n(), plan.d())?;
    let w_norm = axes
        .iter()
        .map(|(_, w)| w.iter().map(|x| x * x).sum::<f64>().sqrt())
        .product::<f64>();
    let overlap = weights.inner(&state);
    let scale = plan.dx().powi(plan.d() as i32) * w_norm;

    let (d, n, l) = (plan.d() as i32, plan.n() as f64, plan.l());
    let b = (10f64.sqrt() * l / 3.0).powi(d) * u_norm / (eps * n.powf(plan.d() as f64 / 2.0));
    let k = (Q_INTEGRATE_REPETITION_CONSTANT * b).ceil().max(2.0) as u64;
    let gamma = opts.gamma.unwrap_or(1.0 / (4.0 * b));
    let ae_m = opts.ae_m.unwrap_or(k);

    let xi: f64 = rng.random_range(-1.0..=1.0);
    let norm_estimate = u_norm * (1.0 + gamma * xi);
    let hadamard = ((1.0 + overlap) / 2.0).clamp(0.0, 1.0);
    let p_est = ae_median(hadamard.sqrt(), &AeConfig::new(ae_m)?, opts.runs, rng)?;
    let inner_estimate = 2.0 * p_est - 1.0;

    Ok(QIntegrateResult {
        value: scale * norm_estimate * inner_estimate,
        b,
        k,
        gamma,
        ae_m,
        norm_estimate,
        inner_estimate,
        classical: scale * u_norm * overlap,
    })
}
