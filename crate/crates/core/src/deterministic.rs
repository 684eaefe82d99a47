//! Time stepping, conjugate gradients on the space-time system, and the
//! Fourier-diagonalised solver.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::operators::{apply_walk_into, SolutionField, SparseBlockSystem, SpectralData};
use crate::problem::{increment, DiscretizationPlan};

fn check_step(plan: &DiscretizationPlan, i: usize) -> Result<()> {
    if i > plan.m() {
        return Err(Error::OutOfRange {
            index: i,
            limit: plan.m() + 1,
        });
    }
    Ok(())
}

/// `L^i u0` by repeated application of the step operator.
pub fn solve_timestepping(plan: &DiscretizationPlan, u0: &SolutionField, i: usize) -> Result<SolutionField> {
    u0.check_plan(plan)?;
    check_step(plan, i)?;
    let mut cur = u0.values().to_vec();
    let mut next = vec![0.0; cur.len()];
    let (r, hold) = (plan.ratio(), plan.hold_probability());
    for _ in 0..i {
        apply_walk_into(&cur, &mut next, plan.n(), plan.d(), r, hold);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(SolutionField::new(cur, plan.n(), plan.d())?.with_step(i))
}

/// Every iterate `u_0, ..., u_m`.
pub fn timestepping_iterates(plan: &DiscretizationPlan, u0: &SolutionField) -> Result<Vec<SolutionField>> {
    u0.check_plan(plan)?;
    let mut out = Vec::with_capacity(plan.m() + 1);
    out.push(u0.clone());
    let (r, hold) = (plan.ratio(), plan.hold_probability());
    for k in 1..=plan.m() {
        let mut next = vec![0.0; u0.values().len()];
        apply_walk_into(out[k - 1].values(), &mut next, plan.n(), plan.d(), r, hold);
        out.push(SolutionField::new(next, plan.n(), plan.d())?.with_step(k));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop once `||b - A x||_2 <= tol ||b||_2`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

impl CgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    /// `u_1, ..., u_m`.
    pub fields: Vec<SolutionField>,
    pub iterations: usize,
    /// Relative residual `||b - A x|| / ||b||` after each iteration.
    pub residuals: Vec<f64>,
}

impl CgSolution {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients on the normal equations `A^T A x = A^T b` (CGLS),
/// which is well defined for the nonsymmetric block system.
pub fn solve_cg(system: &SparseBlockSystem, opts: &CgOptions) -> Result<CgSolution> {
    opts.validate()?;
    let dim = system.dim();
    let b = system.rhs();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; dim];
    let mut residuals = Vec::new();
    let mut iterations = 0;

    if b_norm > 0.0 {
        let target = opts.tol * b_norm;
        let mut r = b.to_vec();
        let mut s = vec![0.0; dim];
        let mut q = vec![0.0; dim];
        let mut restarts = 0;
        // Outer loop restarts from the true residual if the recurrence drifted.
        'outer: loop {
            system.apply_transpose(&r, &mut s);
            let mut p = s.clone();
            let mut gamma = dot(&s, &s);
            loop {
                if iterations >= opts.max_iter {
                    return Err(Error::NonConvergence {
                        iterations,
                        residual: residuals.last().copied().unwrap_or(1.0),
                    });
                }
                system.apply(&p, &mut q);
                let qq = dot(&q, &q);
                if qq == 0.0 {
                    break;
                }
                let step = gamma / qq;
                for ((xi, ri), (pi, qi)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&q)) {
                    *xi += step * pi;
                    *ri -= step * qi;
                }
                iterations += 1;
                let res = dot(&r, &r).sqrt();
                residuals.push(res / b_norm);
                if res <= target {
                    break;
                }
                system.apply_transpose(&r, &mut s);
                let gamma_next = dot(&s, &s);
                let beta = gamma_next / gamma;
                gamma = gamma_next;
                for (pi, si) in p.iter_mut().zip(&s) {
                    *pi = si + beta * *pi;
                }
            }
            system.apply(&x, &mut q);
            for ((ri, bi), qi) in r.iter_mut().zip(b).zip(&q) {
                *ri = bi - qi;
            }
            let true_res = dot(&r, &r).sqrt();
            if let Some(last) = residuals.last_mut() {
                *last = true_res / b_norm;
            }
            if true_res <= target {
                break 'outer;
            }
            restarts += 1;
            if restarts > 16 {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: true_res / b_norm,
                });
            }
        }
    }

    let plan = system.plan();
    let block = system.block_len();
    let fields = x
        .chunks_exact(block)
        .enumerate()
        .map(|(k, c)| Ok(SolutionField::new(c.to_vec(), plan.n(), plan.d())?.with_step(k + 1)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CgSolution {
        fields,
        iterations,
        residuals,
    })
}

/// `lambda^tau` together with the propagated bound `tau * delta` on the error
/// caused by an input error of `delta` in `lambda`.
pub fn eigenpower(lambda: f64, tau: u64, delta: f64) -> Result<(f64, f64)> {
    if !(lambda.abs() <= 1.0) {
        return Err(invalid("lambda", format!("|lambda| must be <= 1, got {lambda}")));
    }
    Ok((pow_u64(lambda, tau), tau as f64 * delta))
}

pub(crate) fn pow_u64(mut base: f64, mut exp: u64) -> f64 {
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

/// In-place multidimensional transform over a row-major `n^d` buffer.
pub(crate) fn fft_nd(buf: &mut [Complex64], n: usize, d: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let len = buf.len();
    let mut stride = len;
    for _ in 0..d {
        let outer = stride;
        stride /= n;
        for base in (0..len).step_by(outer) {
            for inner in 0..stride {
                for (c, slot) in line.iter_mut().enumerate() {
                    *slot = buf[base + c * stride + inner];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (c, v) in line.iter().enumerate() {
                    buf[base + c * stride + inner] = *v;
                }
            }
        }
    }
}

/// Apply `L^i` in the Fourier basis, returning complex values before taking
/// the real part.
pub(crate) fn fourier_power(plan: &DiscretizationPlan, values: &[f64], i: u64) -> Vec<Complex64> {
    let (n, d) = (plan.n(), plan.d());
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft(n, FftDirection::Forward);
    let inverse = planner.plan_fft(n, FftDirection::Inverse);
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut buf, n, d, &forward);

    let spectral = SpectralData::new(n);
    let r = plan.ratio();
    let mut idx = vec![0usize; d];
    let scale = 1.0 / buf.len() as f64;
    for z in buf.iter_mut() {
        let lam = 1.0 + r * idx.iter().map(|&j| spectral.table()[j]).sum::<f64>();
        *z *= pow_u64(lam, i) * scale;
        increment(&mut idx, n);
    }
    fft_nd(&mut buf, n, d, &inverse);
    buf
}

/// `L^i u0` via the d-dimensional FFT and powered eigenvalues.
pub fn solve_fft(plan: &DiscretizationPlan, u0: &SolutionField, i: usize) -> Result<SolutionField> {
    u0.check_plan(plan)?;
    check_step(plan, i)?;
    let out = fourier_power(plan, u0.values(), i as u64);
    Ok(SolutionField::new(out.iter().map(|z| z.re).collect(), plan.n(), plan.d())?.with_step(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caps::SizeCaps;
    use crate::operators::assemble_block_system;
    use crate::problem::{discretization_error_bound, exact_solution, InitialCondition, ProblemSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn field(vals: Vec<f64>, n: usize, d: usize) -> SolutionField {
        SolutionField::new(vals, n, d).unwrap()
    }

    #[test]
    fn two_steps_of_a_point_mass() {
        let plan = DiscretizationPlan::saturated(1, 4, 2, 1.0, 1.0).unwrap();
        let u0 = field(vec![2.0, 0.0, 0.0, 0.0], 4, 1);
        assert_eq!(solve_timestepping(&plan, &u0, 0).unwrap().values(), u0.values());
        assert_eq!(solve_timestepping(&plan, &u0, 2).unwrap().values(), &[1.0, 0.0, 1.0, 0.0]);
        assert!(solve_timestepping(&plan, &u0, 3).is_err());
    }

    #[test]
    fn timestepping_tracks_the_analytic_solution() {
        let spec = ProblemSpec::new(1, 1.0, 0.1, 1.0, 1.0, 0.2).unwrap();
        let ic = InitialCondition::CosineModes { modes: vec![1] };
        let zeta = ic.smoothness(1.0).unwrap().fourth;
        let spec = spec.with_zeta(zeta).unwrap();
        let plan = crate::problem::plan_discretization(&spec).unwrap();
        let u0 = ic.grid_field(&plan).unwrap();
        let u = solve_timestepping(&plan, &u0, plan.m()).unwrap();
        let bound = discretization_error_bound(&plan, &spec);
        for (j, v) in u.values().iter().enumerate() {
            let exact = exact_solution(&ic, &[j as f64 * plan.dx()], plan.t(), &spec).unwrap();
            assert!((v - exact).abs() <= bound);
        }
    }

    #[test]
    fn cg_on_identity_takes_one_iteration() {
        let plan = DiscretizationPlan::saturated(1, 4, 1, 1.0, 1.0).unwrap();
        let u0 = field(vec![1.0, 2.0, 0.0, 5.0], 4, 1);
        let sys = assemble_block_system(&plan, &u0, &SizeCaps::default()).unwrap();
        let sol = solve_cg(&sys, &CgOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.fields[0].values(), sys.rhs());
    }

    #[test]
    fn cg_matches_timestepping_stack() {
        for (m, n) in [(2, 4), (5, 6), (8, 8)] {
            let plan = DiscretizationPlan::saturated(1, n, m, 1.0, 1.0).unwrap();
            let u0 = field((0..n).map(|j| ((j * 7) % 5) as f64).collect(), n, 1);
            let sys = assemble_block_system(&plan, &u0, &SizeCaps::default()).unwrap();
            let opts = CgOptions { tol: 1e-10, max_iter: 10_000 };
            let sol = solve_cg(&sys, &opts).unwrap();
            assert!(sol.final_residual() <= opts.tol);
            let stack = timestepping_iterates(&plan, &u0).unwrap();
            let err: f64 = sol
                .fields
                .iter()
                .zip(&stack[1..])
                .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)))
                .sum::<f64>()
                .sqrt();
            let b_norm = sys.rhs().iter().map(|v| v * v).sum::<f64>().sqrt();
            // Forward error is at most kappa times the relative residual; kappa is O(m).
            assert!(err <= 10.0 * opts.tol * b_norm * m as f64, "m={m} n={n} err={err}");
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let plan = DiscretizationPlan::saturated(1, 8, 16, 1.0, 1.0).unwrap();
        let u0 = field((0..8).map(|j| j as f64).collect(), 8, 1);
        let sys = assemble_block_system(&plan, &u0, &SizeCaps::default()).unwrap();
        let r = solve_cg(&sys, &CgOptions { tol: 1e-14, max_iter: 2 });
        assert!(matches!(r, Err(Error::NonConvergence { iterations: 2, .. })));
    }

    #[test]
    fn eigenpower_examples() {
        assert_eq!(eigenpower(1.0, 1_000_000_000_000, 1e-3).unwrap().0, 1.0);
        assert_eq!(eigenpower(0.0, 3, 0.0).unwrap().0, 0.0);
        let (v, bound) = eigenpower(0.5, 10, 1e-3).unwrap();
        assert_eq!(v, 0.5f64.powi(10));
        assert!((bound - 1e-2).abs() < 1e-15);
        assert!(eigenpower(1.5, 2, 0.0).is_err());
        assert_eq!(eigenpower(-1.0, 3, 0.0).unwrap().0, -1.0);
    }

    #[test]
    fn fft_round_trip_and_agreement() {
        let plan = DiscretizationPlan::saturated(1, 8, 5, 1.0, 1.0).unwrap();
        let u0 = field(vec![0.3, 1.2, 0.0, 4.0, 2.2, 0.9, 0.1, 3.3], 8, 1);
        let same = solve_fft(&plan, &u0, 0).unwrap();
        assert!(same.max_abs_diff(&u0) < 1e-12);
        let a = solve_fft(&plan, &u0, 5).unwrap();
        let b = solve_timestepping(&plan, &u0, 5).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn fft_scales_eigenmodes() {
        let n = 16;
        let plan = DiscretizationPlan::saturated(2, n, 7, 1.0, 1.0).unwrap();
        let j = [3usize, 5];
        let mut vals = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                vals[a * n + b] = (2.0 * PI * ((a * j[0] + b * j[1]) as f64) / n as f64).cos();
            }
        }
        let u0 = field(vals, n, 2);
        let lam = crate::operators::walk_eigenvalue(&j, &plan).unwrap();
        let out = solve_fft(&plan, &u0, 7).unwrap();
        for (o, v) in out.values().iter().zip(u0.values()) {
            assert!((o - lam.powi(7) * v).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        // Naive O(n^2) transform as an independent check of the rustfft path.
        let n = 12;
        let vals: Vec<f64> = (0..n).map(|j| ((j * j) % 7) as f64).collect();
        let mut buf: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let fft = FftPlanner::new().plan_fft(n, FftDirection::Forward);
        fft_nd(&mut buf, n, 1, &fft);
        for (k, z) in buf.iter().enumerate() {
            let direct: Complex64 = vals
                .iter()
                .enumerate()
                .map(|(j, &v)| Complex64::from_polar(v, -2.0 * PI * (j * k) as f64 / n as f64))
                .sum();
            assert!((z - direct).norm() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn solvers_conserve_mass(vals in proptest::collection::vec(0.0f64..1.0, 64), i in 0usize..=16) {
            let plan = DiscretizationPlan::saturated(2, 8, 16, 1.0, 1.0).unwrap();
            let u0 = field(vals, 8, 2);
            let total = u0.sum();
            for f in [solve_timestepping(&plan, &u0, i).unwrap(), solve_fft(&plan, &u0, i).unwrap()] {
                prop_assert!((f.sum() - total).abs() <= 1e-10 * total.max(1e-300));
            }
        }
    }
}
