//! The one-step FTCS operator, its Fourier spectrum and the implicit
//! space-time block system built from it.

use std::f64::consts::PI;
use std::io::Write;

use crate::caps::{grid_size, SizeCaps};
use crate::error::{Error, Result};
use crate::problem::{increment, DiscretizationPlan, InitialCondition};

/// Values on the `n^d` periodic grid at one time index, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    values: Vec<f64>,
    n: usize,
    d: usize,
    step: usize,
}

impl SolutionField {
    pub fn new(values: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        let expected = grid_size(n, d);
        if values.len() as u128 != expected {
            return Err(Error::DimensionMismatch {
                expected: expected.min(usize::MAX as u128) as usize,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(crate::error::invalid(
                "field",
                format!("entry {i} is not finite"),
            ));
        }
        Ok(Self {
            values,
            n,
            d,
            step: 0,
        })
    }

    pub fn with_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn d(&self) -> usize {
        self.d
    }
    /// Time index this field belongs to.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_plan(&self, plan: &DiscretizationPlan) -> Result<()> {
        if self.d != plan.d() {
            return Err(Error::DimensionMismatch {
                expected: plan.d(),
                got: self.d,
            });
        }
        if self.n != plan.n() {
            return Err(Error::DimensionMismatch {
                expected: plan.n(),
                got: self.n,
            });
        }
        Ok(())
    }

    /// Write `x0,..,x{d-1},value` rows with physical grid coordinates.
    pub fn write_csv<W: Write>(&self, out: W, l: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.d).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        let dx = l / self.n as f64;
        let mut idx = vec![0usize; self.d];
        for v in &self.values {
            let mut rec: Vec<String> = idx.iter().map(|&j| (j as f64 * dx).to_string()).collect();
            rec.push(v.to_string());
            w.write_record(&rec)?;
            increment(&mut idx, self.n);
        }
        w.flush()?;
        Ok(())
    }
}

/// `out = L * input` for the plan's step ratio. Buffers must not alias.
pub(crate) fn apply_walk_into(input: &[f64], out: &mut [f64], n: usize, d: usize, ratio: f64, hold: f64) {
    debug_assert_eq!(input.len(), out.len());
    for (o, &v) in out.iter_mut().zip(input) {
        *o = hold * v;
    }
    let mut stride = input.len();
    for _ in 0..d {
        let outer_len = stride;
        stride /= n;
        for block in input.chunks_exact(outer_len).zip(out.chunks_exact_mut(outer_len)) {
            let (src, dst) = block;
            for c in 0..n {
                let up = if c + 1 == n { 0 } else { c + 1 };
                let down = if c == 0 { n - 1 } else { c - 1 };
                let row = &mut dst[c * stride..(c + 1) * stride];
                let a = &src[up * stride..(up + 1) * stride];
                let b = &src[down * stride..(down + 1) * stride];
                for ((r, &x), &y) in row.iter_mut().zip(a).zip(b) {
                    *r += ratio * (x + y);
                }
            }
        }
    }
}

/// One FTCS step, `L u`.
pub fn apply_walk(field: &SolutionField, plan: &DiscretizationPlan) -> Result<SolutionField> {
    field.check_plan(plan)?;
    let mut out = vec![0.0; field.values.len()];
    apply_walk_into(
        &field.values,
        &mut out,
        plan.n(),
        plan.d(),
        plan.ratio(),
        plan.hold_probability(),
    );
    Ok(SolutionField {
        values: out,
        n: field.n,
        d: field.d,
        step: field.step + 1,
    })
}

/// Per-dimension eigenvalues `-4 sin^2(j pi / n)` of the periodic second difference.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    n: usize,
    table: Vec<f64>,
}

impl SpectralData {
    pub fn new(n: usize) -> Self {
        let table = (0..n)
            .map(|j| {
                // sin(j pi / n) with j reduced to [0, n/2] keeps the table exactly symmetric.
                let jj = j.min(n - j);
                let s = (jj as f64 * PI / n as f64).sin();
                -4.0 * s * s
            })
            .collect();
        Self { n, table }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Eigenvalue of `L` for the mode `j`, `1 + ratio * sum_i lambda_{j_i}`.
    pub fn walk_eigenvalue(&self, j: &[usize], ratio: f64) -> Result<f64> {
        let mut sum = 0.0;
        for &ji in j {
            if ji >= self.n {
                return Err(Error::OutOfRange {
                    index: ji,
                    limit: self.n,
                });
            }
            sum += self.table[ji];
        }
        Ok(1.0 + ratio * sum)
    }

    /// `gamma = -ratio * sum_i lambda_{j_i}`, so that the eigenvalue is `1 - gamma`.
    pub fn gamma(&self, j: &[usize], ratio: f64) -> Result<f64> {
        Ok(1.0 - self.walk_eigenvalue(j, ratio)?)
    }
}

pub fn walk_eigenvalue(j: &[usize], plan: &DiscretizationPlan) -> Result<f64> {
    if j.len() != plan.d() {
        return Err(Error::DimensionMismatch {
            expected: plan.d(),
            got: j.len(),
        });
    }
    SpectralData::new(plan.n()).walk_eigenvalue(j, plan.ratio())
}

/// Implicit matrix with identity diagonal blocks and `-L` on the block
/// subdiagonal, acting on `m` stacked grid vectors `u_1..u_m`. The right-hand
/// side holds `L u_0` in its first block.
#[derive(Debug, Clone)]
pub struct SparseBlockSystem {
    plan: DiscretizationPlan,
    block: usize,
    rhs: Vec<f64>,
}

pub fn assemble_block_system(
    plan: &DiscretizationPlan,
    u0: &SolutionField,
    caps: &SizeCaps,
) -> Result<SparseBlockSystem> {
    u0.check_plan(plan)?;
    let block = u0.values.len();
    let dim = block as u128 * plan.m() as u128;
    SizeCaps::check(dim, caps.block_system)?;
    let mut rhs = vec![0.0; dim as usize];
    apply_walk_into(
        &u0.values,
        &mut rhs[..block],
        plan.n(),
        plan.d(),
        plan.ratio(),
        plan.hold_probability(),
    );
    Ok(SparseBlockSystem {
        plan: plan.clone(),
        block,
        rhs,
    })
}

impl SparseBlockSystem {
    /// Convenience wrapper building `u0` from an initial condition.
    pub fn from_initial(plan: &DiscretizationPlan, ic: &InitialCondition, caps: &SizeCaps) -> Result<Self> {
        SizeCaps::check(grid_size(plan.n(), plan.d()), caps.grid)?;
        let u0 = ic.grid_field(plan)?;
        assemble_block_system(plan, &u0, caps)
    }

    pub fn plan(&self) -> &DiscretizationPlan {
        &self.plan
    }
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }
    pub fn block_len(&self) -> usize {
        self.block
    }
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    fn walk(&self, x: &[f64], out: &mut [f64]) {
        apply_walk_into(
            x,
            out,
            self.plan.n(),
            self.plan.d(),
            self.plan.ratio(),
            self.plan.hold_probability(),
        );
    }

    /// `out = A x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let b = self.block;
        out[..b].copy_from_slice(&x[..b]);
        let mut tmp = vec![0.0; b];
        for k in 1..self.plan.m() {
            self.walk(&x[(k - 1) * b..k * b], &mut tmp);
            for ((o, &xi), &t) in out[k * b..(k + 1) * b].iter_mut().zip(&x[k * b..(k + 1) * b]).zip(&tmp) {
                *o = xi - t;
            }
        }
    }

    /// `out = A^T x`. `L` is symmetric, so the transpose only moves `-L` above the diagonal.
    pub fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        let b = self.block;
        let m = self.plan.m();
        out[(m - 1) * b..].copy_from_slice(&x[(m - 1) * b..]);
        let mut tmp = vec![0.0; b];
        for k in 0..m - 1 {
            self.walk(&x[(k + 1) * b..(k + 2) * b], &mut tmp);
            for ((o, &xi), &t) in out[k * b..(k + 1) * b].iter_mut().zip(&x[k * b..(k + 1) * b]).zip(&tmp) {
                *o = xi - t;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan1(n: usize, m: usize) -> DiscretizationPlan {
        DiscretizationPlan::saturated(1, n, m, 1.0, 1.0).unwrap()
    }

    /// Dense `L` for small grids, built entry by entry from the neighbour rule.
    fn dense_walk(plan: &DiscretizationPlan) -> nalgebra::DMatrix<f64> {
        let (n, d) = (plan.n(), plan.d());
        let len = n.pow(d as u32);
        let r = plan.ratio();
        let mut a = nalgebra::DMatrix::zeros(len, len);
        let mut idx = vec![0usize; d];
        for row in 0..len {
            a[(row, row)] += plan.hold_probability();
            for k in 0..d {
                for delta in [1, n - 1] {
                    let mut nb = idx.clone();
                    nb[k] = (nb[k] + delta) % n;
                    let col = nb.iter().fold(0, |acc, &j| acc * n + j);
                    a[(row, col)] += r;
                }
            }
            increment(&mut idx, n);
        }
        a
    }

    #[test]
    fn point_mass_spreads_to_neighbours() {
        let plan = plan1(4, 1);
        let f = SolutionField::new(vec![2.0, 0.0, 0.0, 0.0], 4, 1).unwrap();
        assert_eq!(apply_walk(&f, &plan).unwrap().values(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn uniform_field_is_fixed_and_mass_is_conserved() {
        let plan = DiscretizationPlan::saturated(2, 6, 1, 1.0, 1.0).unwrap();
        let f = SolutionField::new(vec![0.7; 36], 6, 2).unwrap();
        assert_eq!(apply_walk(&f, &plan).unwrap().values(), f.values());

        let plan = plan1(4, 1);
        let f = SolutionField::new(vec![1.0, 2.0, 3.0, 4.0], 4, 1).unwrap();
        assert!((apply_walk(&f, &plan).unwrap().sum() - 10.0).abs() < 1e-14);
    }

    #[test]
    fn mismatched_field_is_rejected() {
        let f = SolutionField::new(vec![0.0; 8], 8, 1).unwrap();
        assert!(apply_walk(&f, &plan1(4, 1)).is_err());
        assert!(SolutionField::new(vec![0.0; 7], 8, 1).is_err());
    }

    #[test]
    fn eigenvalue_examples() {
        let plan = plan1(4, 1);
        assert_eq!(walk_eigenvalue(&[0], &plan).unwrap(), 1.0);
        assert!(walk_eigenvalue(&[1], &plan).unwrap().abs() < 1e-15);
        assert_eq!(walk_eigenvalue(&[2], &plan).unwrap(), -1.0);
        assert!(walk_eigenvalue(&[4], &plan).is_err());
    }

    #[test]
    fn cosine_modes_are_eigenvectors() {
        for d in 1..=2usize {
            for n in [4usize, 6, 8, 16, 32] {
                let plan = DiscretizationPlan::saturated(d, n, 1, 1.0, 1.0).unwrap();
                let spec = SpectralData::new(n);
                let len = n.pow(d as u32);
                for k in 0..n {
                    let j: Vec<usize> = (0..d).map(|i| (k + i) % n).collect();
                    let mut idx = vec![0usize; d];
                    let mut vals = vec![0.0; len];
                    for v in vals.iter_mut() {
                        let phase: f64 = idx.iter().zip(&j).map(|(&x, &jj)| (x * jj) as f64).sum();
                        *v = (2.0 * PI * phase / n as f64).cos();
                        increment(&mut idx, n);
                    }
                    let f = SolutionField::new(vals, n, d).unwrap();
                    let out = apply_walk(&f, &plan).unwrap();
                    let lam = spec.walk_eigenvalue(&j, plan.ratio()).unwrap();
                    for (a, b) in out.values().iter().zip(f.values()) {
                        assert!((a - lam * b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn matches_dense_operator_for_lazy_plans() {
        let plan = DiscretizationPlan::new(2, 4, 10, 1.0, 0.01, 1.0).unwrap();
        assert!(!plan.is_saturated());
        let a = dense_walk(&plan);
        let vals: Vec<f64> = (0..16).map(|i| (i * i % 7) as f64).collect();
        let f = SolutionField::new(vals.clone(), 4, 2).unwrap();
        let want = &a * nalgebra::DVector::from_vec(vals);
        let got = apply_walk(&f, &plan).unwrap();
        for (g, w) in got.values().iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-13);
        }
    }

    #[test]
    fn block_system_structure() {
        let plan = plan1(2, 2);
        let u0 = SolutionField::new(vec![2.0, 0.0], 2, 1).unwrap();
        let sys = assemble_block_system(&plan, &u0, &SizeCaps::default()).unwrap();
        assert_eq!(sys.dim(), 4);
        let walk = dense_walk(&plan);
        let mut dense = nalgebra::DMatrix::<f64>::identity(4, 4);
        for r in 0..2 {
            for c in 0..2 {
                dense[(2 + r, c)] = -walk[(r, c)];
            }
        }
        for col in 0..4 {
            let mut e = vec![0.0; 4];
            e[col] = 1.0;
            let mut out = vec![0.0; 4];
            sys.apply(&e, &mut out);
            for row in 0..4 {
                assert_eq!(out[row], dense[(row, col)]);
            }
            sys.apply_transpose(&e, &mut out);
            for row in 0..4 {
                assert_eq!(out[row], dense[(col, row)]);
            }
        }
        assert_eq!(sys.rhs(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn block_system_single_step_is_identity() {
        let plan = plan1(4, 1);
        let u0 = SolutionField::new(vec![1.0, 0.0, 3.0, 0.0], 4, 1).unwrap();
        let sys = assemble_block_system(&plan, &u0, &SizeCaps::default()).unwrap();
        let x = [0.3, 0.1, 0.4, 0.1];
        let mut out = [0.0; 4];
        sys.apply(&x, &mut out);
        assert_eq!(out, x);
        assert_eq!(sys.rhs(), apply_walk(&u0, &plan).unwrap().values());
    }

    #[test]
    fn stacked_iterates_satisfy_the_system() {
        let plan = DiscretizationPlan::saturated(2, 4, 5, 1.0, 1.0).unwrap();
        let u0 = SolutionField::new((0..16).map(|i| (i % 5) as f64).collect(), 4, 2).unwrap();
        let sys = assemble_block_system(&plan, &u0, &SizeCaps::default()).unwrap();
        let mut stack = Vec::new();
        let mut cur = u0;
        for _ in 0..plan.m() {
            cur = apply_walk(&cur, &plan).unwrap();
            stack.extend_from_slice(cur.values());
        }
        let mut out = vec![0.0; sys.dim()];
        sys.apply(&stack, &mut out);
        for (a, b) in out.iter().zip(sys.rhs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_system_respects_cap() {
        let plan = plan1(8, 8);
        let u0 = SolutionField::new(vec![1.0; 8], 8, 1).unwrap();
        assert!(matches!(
            assemble_block_system(&plan, &u0, &SizeCaps::uniform(63)),
            Err(Error::SizeCap { .. })
        ));
    }

    proptest! {
        #[test]
        fn walk_preserves_mass_and_sign(vals in proptest::collection::vec(0.0f64..10.0, 64), d in 1usize..=3) {
            let n: usize = match d { 1 => 64, 2 => 8, _ => 4 };
            let len = n.pow(d as u32);
            let plan = DiscretizationPlan::saturated(d, n, 1, 1.0, 1.0).unwrap();
            let f = SolutionField::new(vals[..len].to_vec(), n, d).unwrap();
            let out = apply_walk(&f, &plan).unwrap();
            prop_assert!(out.values().iter().all(|&v| v >= 0.0));
            prop_assert!((out.sum() - f.sum()).abs() <= 1e-12 * f.sum().max(1.0));
            let ratio = out.norm2().powi(2) / f.norm2().powi(2);
            if f.norm2() > 0.0 {
                prop_assert!(ratio >= 1.0 / (2.0 * d as f64) - 1e-12);
            }
        }

        #[test]
        fn eigenvalues_are_symmetric_and_bounded(n in (1usize..20).prop_map(|h| 2 * h), j in 0usize..40) {
            let j = j % n;
            let plan = DiscretizationPlan::saturated(1, n, 1, 1.0, 1.0).unwrap();
            let a = walk_eigenvalue(&[j], &plan).unwrap();
            let b = walk_eigenvalue(&[(n - j) % n], &plan).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }
}
