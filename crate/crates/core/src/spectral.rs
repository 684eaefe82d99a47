//! Closed-form spectral facts about the walk operator and the space-time
//! system: singular values, conditioning, return probabilities and norms.

use std::f64::consts::PI;

use crate::caps::{grid_size, SizeCaps};
use crate::deterministic::pow_u64;
use crate::error::{invalid, Error, Result};
use crate::operators::{apply_walk_into, SolutionField, SpectralData};
use crate::problem::{increment, DiscretizationPlan};

/// Samples per singular value used to bracket roots of the secular equation.
const BRACKETS_PER_ROOT: usize = 16;
const ROOT_TOL: f64 = 1e-13;

/// Singular values `2 cos(k pi / (2m + 1))`, `k = 1..m`, of the `m x m`
/// bidiagonal matrix with ones on the diagonal and minus ones below it.
pub fn singular_values_t(m: usize) -> Vec<f64> {
    (1..=m)
        .map(|k| 2.0 * (k as f64 * PI / (2 * m + 1) as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    pub gamma: f64,
    pub m: usize,
    /// Descending.
    pub values: Vec<f64>,
}

impl SingularSpectrum {
    pub fn max(&self) -> f64 {
        self.values[0]
    }
    pub fn min(&self) -> f64 {
        *self.values.last().expect("m >= 1")
    }
}

/// Singular values of the `m x m` block for one Fourier mode: ones on the
/// diagonal, `-(1 - gamma)` below. With `c = 1 - gamma` they are
/// `sqrt(c^2 + 2c cos(theta) + 1)` over the `m` roots of
/// `c sin(m theta) + sin((m + 1) theta)` in `(0, pi)`.
pub fn singular_values_block(gamma: f64, m: usize) -> Result<SingularSpectrum> {
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    if !(0.0..=2.0).contains(&gamma) {
        return Err(invalid("gamma", format!("must lie in [0, 2], got {gamma}")));
    }
    let c = 1.0 - gamma;
    if c == 0.0 {
        return Ok(SingularSpectrum {
            gamma,
            m,
            values: vec![1.0; m],
        });
    }
    let mf = m as f64;
    let f = |t: f64| c * (mf * t).sin() + ((mf + 1.0) * t).sin();
    let samples = BRACKETS_PER_ROOT * m;
    let h = PI / samples as f64;
    let mut roots = Vec::with_capacity(m);
    let mut prev_t = h * 0.5;
    let mut prev = f(prev_t);
    for k in 1..samples {
        let t = (k as f64 + 0.5) * h;
        let v = f(t);
        if prev == 0.0 {
            roots.push(prev_t);
        } else if prev.signum() != v.signum() && v != 0.0 {
            let (mut lo, mut hi, mut flo) = (prev_t, t, prev);
            while hi - lo > ROOT_TOL {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_t = t;
        prev = v;
    }
    if roots.len() != m {
        return Err(Error::RootFinding {
            gamma,
            expected: m,
            found: roots.len(),
            brackets: format!("{samples} samples of width {h:.3e} on (0, pi)"),
        });
    }
    let mut values: Vec<f64> = roots
        .iter()
        .map(|&t| (c * c + 2.0 * c * t.cos() + 1.0).max(0.0).sqrt())
        .collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(SingularSpectrum { gamma, m, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub kappa: f64,
    /// Distinct per-mode `gamma` values examined.
    pub modes: usize,
    /// True when only the extremal `gamma` values were examined.
    pub sampled: bool,
}

/// Distinct `gamma` values over all mode index vectors, using that `gamma`
/// depends only on the multiset of folded indices `min(j, n - j)`.
fn distinct_gammas(plan: &DiscretizationPlan, limit: u128) -> Option<Vec<f64>> {
    let (n, d) = (plan.n(), plan.d());
    let spectral = SpectralData::new(n);
    let r = plan.ratio();
    let half = n / 2;
    let mut idx = vec![0usize; d];
    let mut out = Vec::new();
    loop {
        if out.len() as u128 >= limit {
            return None;
        }
        let gamma = -r * idx.iter().map(|&j| spectral.table()[j]).sum::<f64>();
        out.push(gamma.clamp(0.0, 2.0));
        // Next nondecreasing sequence over 0..=half.
        let mut k = d;
        loop {
            if k == 0 {
                out.sort_by(f64::total_cmp);
                out.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
                return Some(out);
            }
            k -= 1;
            if idx[k] < half {
                let v = idx[k] + 1;
                for slot in &mut idx[k..] {
                    *slot = v;
                }
                break;
            }
        }
    }
}

/// Extremal singular values of the space-time system. Every distinct mode is
/// examined unless that exceeds the enumeration cap, in which case only the
/// extremal `gamma` values (where `|1 - gamma|` is largest) are used if
/// `allow_sampling` is set.
pub fn condition_number(plan: &DiscretizationPlan, caps: &SizeCaps, allow_sampling: bool) -> Result<ConditionReport> {
    let (gammas, sampled) = match distinct_gammas(plan, caps.enumeration) {
        Some(g) => (g, false),
        None if allow_sampling => {
            let spectral = SpectralData::new(plan.n());
            let top = -plan.ratio() * plan.d() as f64 * spectral.table()[plan.n() / 2];
            (vec![0.0, top.min(2.0)], true)
        }
        None => {
            return Err(Error::SizeCap {
                size: grid_size(plan.n() / 2 + 1, plan.d()),
                cap: caps.enumeration,
            })
        }
    };
    let mut sigma_max: f64 = 0.0;
    let mut sigma_min = f64::INFINITY;
    for &g in &gammas {
        let s = singular_values_block(g, plan.m())?;
        sigma_max = sigma_max.max(s.max());
        sigma_min = sigma_min.min(s.min());
    }
    Ok(ConditionReport {
        sigma_max,
        sigma_min,
        kappa: sigma_max / sigma_min,
        modes: gammas.len(),
        sampled,
    })
}

/// `||L u||_2^2 / ||u||_2^2` for a nonnegative nonzero field; at least `1/(2d)`.
pub fn check_positive_conditioning(u: &SolutionField, plan: &DiscretizationPlan) -> Result<f64> {
    u.check_plan(plan)?;
    if let Some((index, &value)) = u.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeEntry { index, value });
    }
    let denom: f64 = u.values().iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(invalid("u", "must be nonzero"));
    }
    let mut out = vec![0.0; u.values().len()];
    apply_walk_into(u.values(), &mut out, plan.n(), plan.d(), plan.ratio(), plan.hold_probability());
    let ratio = out.iter().map(|v| v * v).sum::<f64>() / denom;
    debug_assert!(ratio >= 1.0 / (2.0 * plan.d() as f64) - 1e-12);
    Ok(ratio)
}

/// Probability that the simple random walk on `Z_n^d` is back at the origin
/// after `2 tau` steps, `n^-d sum_y ((1/d) sum_i cos(2 pi y_i / n))^(2 tau)`.
pub fn return_probability(d: usize, n: usize, tau: u64, caps: &SizeCaps) -> Result<f64> {
    if d == 0 || n < 2 {
        return Err(invalid("d/n", "need d >= 1 and n >= 2"));
    }
    let size = grid_size(n, d);
    SizeCaps::check(size, caps.enumeration)?;
    let cos: Vec<f64> = (0..n).map(|y| crate::problem::grid_cos(1, y, n)).collect();
    let mut idx = vec![0usize; d];
    let mut sum = 0.0;
    for _ in 0..size {
        let mean = idx.iter().map(|&y| cos[y]).sum::<f64>() / d as f64;
        sum += pow_u64(mean * mean, tau);
        increment(&mut idx, n);
    }
    Ok(sum / size as f64)
}

/// Lower and upper bounds on [`return_probability`] for `tau >= 1`. In one
/// dimension the sharper pair `max(1/n, 1/(2 sqrt tau))`, `4/n + 1/sqrt(pi tau)`
/// is returned.
pub fn l2_bounds(d: usize, n: usize, tau: u64) -> Result<(f64, f64)> {
    if tau == 0 {
        return Err(invalid("tau", "must be at least 1"));
    }
    if d == 0 || n < 2 {
        return Err(invalid("d/n", "need d >= 1 and n >= 2"));
    }
    let (df, nf, t) = (d as f64, n as f64, tau as f64);
    if d == 1 {
        let lower = (1.0 / nf).max(1.0 / (2.0 * t.sqrt()));
        let upper = 4.0 / nf + 1.0 / (PI * t).sqrt();
        return Ok((lower, upper));
    }
    let di = d as i32;
    let lower = nf.powi(-di).max((4.0 * t.sqrt()).powi(-di));
    let upper = df * (-t / (4.0 * df)).exp() + (4.0 / nf + (df / (PI * t)).sqrt()).powi(di);
    Ok((lower, upper))
}

fn binom(n: u32, k: u32) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of length-`steps` sequences over `d` dimensions in which every
/// dimension occurs an even number of times.
pub fn even_step_count(d: usize, steps: u32) -> u128 {
    let mut table: Vec<u128> = (0..=steps).map(|s| u128::from(s % 2 == 0)).collect();
    for _ in 1..d {
        table = (0..=steps)
            .map(|s| (0..=s / 2).map(|i| binom(s, 2 * i) * table[(s - 2 * i) as usize]).sum())
            .collect();
    }
    table[steps as usize]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeNorm {
    /// `sqrt(sum_{i=0..m} ||L^i u0||_2^2)`.
    pub value: f64,
    /// `sqrt(m + 1) ||u0||_1`.
    pub simple_bound: f64,
    /// Dimension-specific leading-order bound with unit constant.
    pub refined_bound: f64,
}

pub fn spacetime_l2_norm(plan: &DiscretizationPlan, u0: &SolutionField, caps: &SizeCaps) -> Result<SpacetimeNorm> {
    u0.check_plan(plan)?;
    SizeCaps::check(grid_size(plan.n(), plan.d()) * (plan.m() as u128 + 1), caps.block_system)?;
    let mut cur = u0.values().to_vec();
    let mut next = vec![0.0; cur.len()];
    let mut total: f64 = cur.iter().map(|v| v * v).sum();
    for _ in 0..plan.m() {
        apply_walk_into(&cur, &mut next, plan.n(), plan.d(), plan.ratio(), plan.hold_probability());
        std::mem::swap(&mut cur, &mut next);
        total += cur.iter().map(|v| v * v).sum::<f64>();
    }
    let l1: f64 = u0.values().iter().map(|v| v.abs()).sum();
    let (n, m, l, d) = (plan.n() as f64, plan.m() as f64, plan.l(), plan.d());
    let refined_bound = match d {
        1 => (n.powf(1.5) + (m * n).sqrt()) / l,
        2 => n * n * n.ln().sqrt() / (l * l),
        _ => (2f64.sqrt() * (d as f64).powf(0.25) * n / (PI.powf(0.25) * l)).powi(d as i32),
    };
    Ok(SpacetimeNorm {
        value: total.sqrt(),
        simple_bound: (m + 1.0).sqrt() * l1,
        refined_bound,
    })
}
