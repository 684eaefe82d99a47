//! Random-walk estimators of `int_S u(x, t) dx`, with exact samplers for the
//! initial distribution, the walk itself and binomial step counts.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{invalid, Error, Result};
use crate::problem::{plan_discretization_midpoint, DiscretizationPlan, InitialCondition, ProblemSpec, Region};
use crate::quadrature::{region_axes, RuleKind};

/// Chebyshev with variance at most 1/4 and failure probability 0.01:
/// `k >= 1 / (4 * 0.01 * eps^2) = 25 / eps^2` samples.
pub const CHEBYSHEV_SAMPLE_CONSTANT: f64 = 25.0;

/// Samples handed to one substream; fixed so results do not depend on the thread count.
const CHUNK: u64 = 1 << 14;

/// Below this many trials the binomial sampler inverts the pmf directly.
const INVERSION_LIMIT: u64 = 64;

pub fn mc_sample_count(eps: f64) -> u64 {
    (CHEBYSHEV_SAMPLE_CONSTANT / (eps * eps)).ceil() as u64
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 stream identified by `(seed, stream)` that counts the words it hands out.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    draws: u64,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            draws: 0,
        }
    }

    /// Independent stream keyed by `index`, unaffected by how far `self` has advanced.
    pub fn substream(&self, index: u64) -> Self {
        Self::with_stream(self.seed, splitmix(self.stream ^ splitmix(index.wrapping_add(1))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn stream(&self) -> u64 {
        self.stream
    }
    /// 32- or 64-bit words consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.draws += dst.len().div_ceil(8) as u64;
        self.inner.fill_bytes(dst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkerState {
    pub position: Vec<usize>,
    pub steps: u64,
}

impl WalkerState {
    pub fn at(position: Vec<usize>) -> Self {
        Self { position, steps: 0 }
    }
}

/// Grid point distributed as `dx^d u0`, located by bisecting each dimension
/// in turn with closed-form box sums.
pub fn sample_initial<R: Rng + ?Sized>(ic: &InitialCondition, plan: &DiscretizationPlan, rng: &mut R) -> Vec<usize> {
    let (n, d, l) = (plan.n(), plan.d(), plan.l());
    let mut lo = vec![0usize; d];
    let mut hi = vec![n; d];
    for k in 0..d {
        let (mut a, mut b) = (0usize, n);
        while b - a > 1 {
            let mid = (a + b) / 2;
            lo[k] = a;
            hi[k] = mid;
            let left = ic.rect_sum(&lo, &hi, n, l);
            lo[k] = mid;
            hi[k] = b;
            let right = ic.rect_sum(&lo, &hi, n, l);
            let total = left + right;
            if rng.random::<f64>() * total < left {
                b = mid;
            } else {
                a = mid;
            }
        }
        lo[k] = a;
        hi[k] = a + 1;
    }
    lo
}

/// Advance `k` steps of the walk generated by `L`: hold with probability
/// `1 - 2 d r`, otherwise move to a uniformly chosen neighbour.
pub fn walk_steps<R: Rng + ?Sized>(mut state: WalkerState, k: u64, plan: &DiscretizationPlan, rng: &mut R) -> WalkerState {
    let (n, d) = (plan.n(), plan.d());
    let hold = plan.hold_probability();
    for _ in 0..k {
        if hold > 0.0 && rng.random::<f64>() < hold {
            continue;
        }
        let dir = rng.random_range(0..2 * d);
        let pos = &mut state.position[dir / 2];
        *pos = if dir % 2 == 0 {
            if *pos + 1 == n { 0 } else { *pos + 1 }
        } else if *pos == 0 {
            n - 1
        } else {
            *pos - 1
        };
    }
    state.steps += k;
    state
}

fn binomial_inversion<R: Rng + ?Sized>(l: u64, p: f64, rng: &mut R) -> u64 {
    if p > 0.5 {
        return l - binomial_inversion(l, 1.0 - p, rng);
    }
    let q = 1.0 - p;
    let odds = p / q;
    let mut pmf = q.powi(l as i32);
    let mut cdf = pmf;
    let u = rng.random::<f64>();
    let mut k = 0;
    while u >= cdf && k < l {
        pmf *= (l - k) as f64 / (k + 1) as f64 * odds;
        k += 1;
        cdf += pmf;
    }
    k
}

/// Exact `Binomial(l, p)` draw. Small `l` inverts the cdf; larger `l` splits
/// on the median order statistic of `l` uniforms (a Beta variate), which
/// halves the remaining trials per level.
pub fn sample_binomial<R: Rng + ?Sized>(l: u64, p: f64, rng: &mut R) -> u64 {
    let (mut l, mut p) = (l, p);
    let mut acc = 0;
    loop {
        if l == 0 || p <= 0.0 {
            return acc;
        }
        if p >= 1.0 {
            return acc + l;
        }
        if l <= INVERSION_LIMIT {
            return acc + binomial_inversion(l, p, rng);
        }
        let k = l / 2 + 1;
        let x = Beta::new(k as f64, (l - k + 1) as f64)
            .expect("positive shape parameters")
            .sample(rng);
        if x <= p {
            // The k smallest uniforms fall below p; the rest are uniform on (x, 1).
            acc += k;
            l -= k;
            p = (p - x) / (1.0 - x);
        } else {
            // Only the k - 1 uniforms below x can fall below p.
            l = k - 1;
            p /= x;
        }
    }
}

/// Number of steps each dimension receives out of `m` walk steps: moving
/// steps are `Binomial(m, 1 - hold)`, then dimension `i` takes
/// `Binomial(remaining, 1 / (d - i))` in turn.
pub fn dimension_step_counts<R: Rng + ?Sized>(m: u64, d: usize, hold: f64, rng: &mut R) -> Vec<u64> {
    let mut remaining = if hold > 0.0 {
        sample_binomial(m, 1.0 - hold, rng)
    } else {
        m
    };
    let mut counts = Vec::with_capacity(d);
    for i in 0..d {
        let s = if i + 1 == d {
            remaining
        } else {
            sample_binomial(remaining, 1.0 / (d - i) as f64, rng)
        };
        counts.push(s);
        remaining -= s;
    }
    counts
}

/// Displacement (mod `n` per dimension) after `m` walk steps, drawn in
/// `O(d log m)` uniform variates instead of `O(m)`.
pub fn fast_walk_endpoint<R: Rng + ?Sized>(m: u64, plan: &DiscretizationPlan, rng: &mut R) -> Vec<usize> {
    let n = plan.n() as u64;
    dimension_step_counts(m, plan.d(), plan.hold_probability(), rng)
        .into_iter()
        .map(|s| {
            let ups = sample_binomial(s, 0.5, rng);
            // 2 ups - s, taken mod n without leaving unsigned arithmetic.
            let down = s - ups;
            ((ups % n + n - down % n) % n) as usize
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum McMode {
    Naive,
    Fast,
}

impl fmt::Display for McMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Naive => "naive",
            Self::Fast => "fast",
        })
    }
}

impl FromStr for McMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Self::Naive),
            "fast" => Ok(Self::Fast),
            other => Err(invalid("mode", format!("expected naive or fast, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    /// Overrides the Chebyshev sample count.
    pub samples: Option<u64>,
    /// Worker threads; results are identical for every value.
    pub threads: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            samples: None,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub hits: u64,
    pub samples: u64,
    pub step: usize,
    pub plan: DiscretizationPlan,
}

/// Estimate `int_S u(x, t) dx` on the midpoint-rule grid for `spec`. The
/// region must be half-shifted-aligned on that grid and `t` a multiple of `dt`.
pub fn estimate_heat_mc(
    spec: &ProblemSpec,
    ic: &InitialCondition,
    region: &Region,
    t: f64,
    mode: McMode,
    opts: &McOptions,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    let plan = plan_discretization_midpoint(spec)?;
    let step = plan.step_index(t)?;
    let samples = opts.samples.unwrap_or_else(|| mc_sample_count(spec.eps));
    estimate_on_plan(&plan, ic, region, step, samples, mode, opts.threads, rng)
}

/// Fraction of `samples` walkers started from `dx^d u0` that lie in the region after `step` steps.
#[allow(clippy::too_many_arguments)]
pub fn estimate_on_plan(
    plan: &DiscretizationPlan,
    ic: &InitialCondition,
    region: &Region,
    step: usize,
    samples: u64,
    mode: McMode,
    threads: usize,
    rng: &mut RngStream,
) -> Result<McEstimate> {
    ic.validate(plan.d(), plan.n())?;
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    if step > plan.m() {
        return Err(Error::OutOfRange {
            index: step,
            limit: plan.m() + 1,
        });
    }
    let n = plan.n();
    let inside: Vec<Vec<bool>> = region_axes(region, plan, RuleKind::Midpoint)?
        .into_iter()
        .map(|(nodes, _)| {
            let mut mask = vec![false; n];
            for j in nodes {
                mask[j] = true;
            }
            mask
        })
        .collect();

    let key = rng.next_u64();
    let chunks = samples.div_ceil(CHUNK);
    let run_chunk = |c: u64| -> u64 {
        let mut local = RngStream::with_stream(key, c);
        let count = CHUNK.min(samples - c * CHUNK);
        let mut hits = 0;
        for _ in 0..count {
            let start = sample_initial(ic, plan, &mut local);
            let end = match mode {
                McMode::Naive => walk_steps(WalkerState::at(start), step as u64, plan, &mut local).position,
                McMode::Fast => {
                    let disp = fast_walk_endpoint(step as u64, plan, &mut local);
                    start.iter().zip(&disp).map(|(&a, &b)| (a + b) % n).collect()
                }
            };
            if end.iter().zip(&inside).all(|(&j, mask)| mask[j]) {
                hits += 1;
            }
        }
        hits
    };

    let threads = threads.max(1).min(chunks as usize);
    let hits: u64 = if threads == 1 {
        (0..chunks).map(run_chunk).sum()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|w| {
                    let run_chunk = &run_chunk;
                    scope.spawn(move || {
                        (w..chunks)
                            .step_by(threads)
                            .map(run_chunk)
                            .sum::<u64>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).sum()
        })
    };

    Ok(McEstimate {
        value: hits as f64 / samples as f64,
        hits,
        samples,
        step,
        plan: plan.clone(),
    })
}
