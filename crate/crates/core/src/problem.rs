//! Continuous problem description, initial conditions and the grid planner.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::operators::SolutionField;

/// Relative slack used when checking `dt <= dx^2 / (2 d alpha)` and grid
/// alignment of user-supplied coordinates.
pub(crate) const REL_TOL: f64 = 1e-12;
const ALIGN_TOL: f64 = 1e-9;

/// Physical parameters of the periodic heat problem on `[0, L]^d x [0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub d: usize,
    pub l: f64,
    pub t: f64,
    pub alpha: f64,
    /// Bound on fourth (and, rescaled by powers of `L`, lower) spatial derivatives.
    pub zeta: f64,
    pub eps: f64,
}

impl ProblemSpec {
    pub fn new(d: usize, l: f64, t: f64, alpha: f64, zeta: f64, eps: f64) -> Result<Self> {
        let spec = Self {
            d,
            l,
            t,
            alpha,
            zeta,
            eps,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        for (name, v) in [
            ("L", self.l),
            ("T", self.t),
            ("alpha", self.alpha),
            ("zeta", self.zeta),
            ("eps", self.eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.eps >= 1.0 {
            return Err(invalid("eps", format!("must be < 1, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let mut s = self.clone();
        s.eps = eps;
        s.validate()?;
        Ok(s)
    }

    pub fn with_zeta(&self, zeta: f64) -> Result<Self> {
        let mut s = self.clone();
        s.zeta = zeta;
        s.validate()?;
        Ok(s)
    }
}

/// Grid counts and spacings for the forward-time centred-space scheme.
///
/// `n` points per dimension (periodic, so index `n` is index `0`), `m` time
/// steps of length `dt = T / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationPlan {
    d: usize,
    n: usize,
    m: usize,
    l: f64,
    t: f64,
    alpha: f64,
}

impl DiscretizationPlan {
    pub fn new(d: usize, n: usize, m: usize, l: f64, t: f64, alpha: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if n < 2 || !n.is_multiple_of(2) {
            return Err(invalid("n", format!("must be even and >= 2, got {n}")));
        }
        if m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        for (name, v) in [("L", l), ("T", t), ("alpha", alpha)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        let plan = Self {
            d,
            n,
            m,
            l,
            t,
            alpha,
        };
        let limit = plan.stability_limit();
        if plan.dt() > limit * (1.0 + REL_TOL) {
            return Err(Error::Unstable {
                dt: plan.dt(),
                limit,
            });
        }
        Ok(plan)
    }

    /// Plan whose step size sits exactly on the stability limit, so that one
    /// time step is a simple random walk on `Z_n^d`. `T` is derived from `m`.
    pub fn saturated(d: usize, n: usize, m: usize, l: f64, alpha: f64) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(invalid("d/n", "must be positive"));
        }
        let dx = l / n as f64;
        let t = m as f64 * dx * dx / (2.0 * d as f64 * alpha);
        Self::new(d, n, m, l, t, alpha)
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn dt(&self) -> f64 {
        self.t / self.m as f64
    }
    pub fn dx(&self) -> f64 {
        self.l / self.n as f64
    }

    pub fn stability_limit(&self) -> f64 {
        let dx = self.dx();
        dx * dx / (2.0 * self.d as f64 * self.alpha)
    }

    /// `alpha dt / dx^2`, snapped to exactly `1/(2d)` when within rounding of it.
    pub fn ratio(&self) -> f64 {
        let dx = self.dx();
        let r = self.alpha * self.dt() / (dx * dx);
        let sat = 1.0 / (2.0 * self.d as f64);
        if (r - sat).abs() <= sat * REL_TOL || r > sat {
            sat
        } else {
            r
        }
    }

    pub fn is_saturated(&self) -> bool {
        self.ratio() == 1.0 / (2.0 * self.d as f64)
    }

    /// Probability that one step of the associated walk stays put.
    pub fn hold_probability(&self) -> f64 {
        if self.is_saturated() {
            0.0
        } else {
            (1.0 - 2.0 * self.d as f64 * self.ratio()).max(0.0)
        }
    }

    /// Number of spatial grid points, `n^d`, or `None` on overflow.
    pub fn grid_len(&self) -> Option<usize> {
        checked_pow(self.n, self.d)
    }

    /// Time index `i` with `t = i dt`, rejecting times off the time grid.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        let dt = self.dt();
        let x = t / dt;
        let i = x.round();
        if !(t >= 0.0) || (x - i).abs() > ALIGN_TOL * x.abs().max(1.0) || i as usize > self.m {
            return Err(Error::MisalignedTime { t, dt });
        }
        Ok(i as usize)
    }
}

pub(crate) fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base)?;
    }
    Some(acc)
}

fn ceil_tol(x: f64) -> f64 {
    (x * (1.0 - REL_TOL)).ceil()
}

fn count_from(name: &'static str, x: f64) -> Result<usize> {
    if !x.is_finite() || x > 1e15 {
        return Err(invalid(name, format!("grid count {x} is not representable")));
    }
    Ok(x.max(1.0) as usize)
}

fn finish_plan(spec: &ProblemSpec, m_raw: f64, n_raw: f64) -> Result<DiscretizationPlan> {
    spec.validate()?;
    let mut n = count_from("n", ceil_tol(n_raw))?.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let (d, l, t, alpha) = (spec.d as f64, spec.l, spec.t, spec.alpha);
    let m_stable = ceil_tol(2.0 * d * alpha * t * (n * n) as f64 / (l * l));
    let mut m = count_from("m", ceil_tol(m_raw))?.max(count_from("m", m_stable)?);
    loop {
        match DiscretizationPlan::new(spec.d, n, m, l, t, alpha) {
            Ok(p) => return Ok(p),
            Err(Error::Unstable { .. }) => m += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Grid sized for Simpson post-processing: `m = 2 T^2 d^2 alpha^2 zeta / (3 eps)`,
/// `n = L sqrt(d alpha zeta T / (3 eps))`, `n` rounded up to even and `m`
/// raised until the step is stable.
pub fn plan_discretization(spec: &ProblemSpec) -> Result<DiscretizationPlan> {
    spec.validate()?;
    let (d, l, t, a, z, e) = (
        spec.d as f64,
        spec.l,
        spec.t,
        spec.alpha,
        spec.zeta,
        spec.eps,
    );
    let m = 2.0 * t * t * d * d * a * a * z / (3.0 * e);
    let n = l * (d * a * z * t / (3.0 * e)).sqrt();
    finish_plan(spec, m, n)
}

/// Grid sized for midpoint-rule post-processing (used by the random-walk
/// estimators): `alpha T` is replaced by `alpha T + L^2` in one factor.
pub fn plan_discretization_midpoint(spec: &ProblemSpec) -> Result<DiscretizationPlan> {
    spec.validate()?;
    let (d, l, t, a, z, e) = (
        spec.d as f64,
        spec.l,
        spec.t,
        spec.alpha,
        spec.zeta,
        spec.eps,
    );
    let spread = a * t + l * l;
    let m = 2.0 * t * a * d * d * z * spread / (3.0 * e);
    let n = l * (d * z * spread / (3.0 * e)).sqrt();
    finish_plan(spec, m, n)
}

/// `zeta alpha d T L^-d (alpha d dt / 2 + dx^2 / 12)`: sup-norm distance between
/// the FTCS iterate and the true solution. Geometry comes from `plan`, the
/// smoothness bound from `spec`.
pub fn discretization_error_bound(plan: &DiscretizationPlan, spec: &ProblemSpec) -> f64 {
    let d = plan.d as f64;
    let dx = plan.dx();
    spec.zeta * plan.alpha * d * plan.t * plan.l.powi(-(plan.d as i32))
        * (plan.alpha * d * plan.dt() / 2.0 + dx * dx / 12.0)
}

/// Derivative bounds of an initial condition in the normalisation used by
/// [`ProblemSpec::zeta`]: `|d^4 u| <= fourth / L^d`, `|d^2 u| <= second / L^(d-2)`,
/// `|d u| <= first / L^(d-3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessConstants {
    pub fourth: f64,
    pub second: f64,
    pub first: f64,
}

impl SmoothnessConstants {
    pub fn max(&self) -> f64 {
        self.fourth.max(self.second).max(self.first)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// `u0 = L^-d`.
    Uniform,
    /// Grid mass `(n/L)^d` at one grid point, zero elsewhere.
    PointSource { origin: Vec<usize> },
    /// `u0(x) = L^-d prod_i (1 + cos(2 pi k_i x_i / L))`, `k_i >= 1`.
    CosineModes { modes: Vec<u32> },
}

impl InitialCondition {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::PointSource { .. } => "point",
            Self::CosineModes { .. } => "cosine",
        }
    }

    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        match self {
            Self::Uniform => Ok(()),
            Self::PointSource { origin } => {
                if origin.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: origin.len(),
                    });
                }
                if let Some(&o) = origin.iter().find(|&&o| o >= n) {
                    return Err(Error::OutOfRange { index: o, limit: n });
                }
                Ok(())
            }
            Self::CosineModes { modes } => {
                if modes.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: modes.len(),
                    });
                }
                if modes.contains(&0) {
                    return Err(invalid("ic.modes", "mode indices must be >= 1"));
                }
                // A mode that aliases to zero on the grid breaks the l1 normalisation.
                if n > 0 && modes.iter().any(|&k| (k as usize).is_multiple_of(n)) {
                    return Err(invalid(
                        "ic.modes",
                        format!("mode aliases to the constant mode on an n = {n} grid"),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Value at grid index `idx` on an `n`-point-per-dimension grid of side `l`.
    pub fn grid_value(&self, idx: &[usize], n: usize, l: f64) -> f64 {
        let d = idx.len() as i32;
        match self {
            Self::Uniform => l.powi(-d),
            Self::PointSource { origin } => {
                if origin.as_slice() == idx {
                    (n as f64 / l).powi(d)
                } else {
                    0.0
                }
            }
            Self::CosineModes { modes } => {
                let mut v = l.powi(-d);
                for (&k, &j) in modes.iter().zip(idx) {
                    v *= 1.0 + grid_cos(k as usize, j, n);
                }
                v
            }
        }
    }

    /// Continuous point evaluation (not defined for a point source).
    pub fn value_at(&self, x: &[f64], l: f64) -> Result<f64> {
        let d = x.len() as i32;
        match self {
            Self::Uniform => Ok(l.powi(-d)),
            Self::PointSource { .. } => Err(Error::NoClosedForm("point")),
            Self::CosineModes { modes } => Ok(modes
                .iter()
                .zip(x)
                .fold(l.powi(-d), |acc, (&k, &xi)| {
                    acc * (1.0 + (2.0 * PI * k as f64 * xi / l).cos())
                })),
        }
    }

    /// Sum of grid values over the index box `lo[i] <= j_i < hi[i]`.
    pub fn rect_sum(&self, lo: &[usize], hi: &[usize], n: usize, l: f64) -> f64 {
        self.rect_sum_impl(lo, hi, n, l, false)
    }

    /// Sum of squared grid values over the index box `lo[i] <= j_i < hi[i]`.
    pub fn rect_sum_sq(&self, lo: &[usize], hi: &[usize], n: usize, l: f64) -> f64 {
        self.rect_sum_impl(lo, hi, n, l, true)
    }

    fn rect_sum_impl(&self, lo: &[usize], hi: &[usize], n: usize, l: f64, squared: bool) -> f64 {
        debug_assert_eq!(lo.len(), hi.len());
        let d = lo.len() as i32;
        if lo.iter().zip(hi).any(|(a, b)| a >= b) {
            return 0.0;
        }
        let p = if squared { 2 } else { 1 };
        match self {
            Self::Uniform => {
                let count: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a) as f64).product();
                count * l.powi(-d * p)
            }
            Self::PointSource { origin } => {
                let inside = origin
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(&o, (&a, &b))| a <= o && o < b);
                if inside {
                    (n as f64 / l).powi(d * p)
                } else {
                    0.0
                }
            }
            Self::CosineModes { modes } => {
                let mut acc = l.powi(-d * p);
                for (&k, (&a, &b)) in modes.iter().zip(lo.iter().zip(hi)) {
                    let count = b - a;
                    let s1 = cos_run_sum(k as usize, a, count, n);
                    acc *= if squared {
                        // (1 + c)^2 = 3/2 + 2c + cos(2 theta j) / 2
                        1.5 * count as f64 + 2.0 * s1 + 0.5 * cos_run_sum(2 * k as usize, a, count, n)
                    } else {
                        count as f64 + s1
                    };
                }
                acc
            }
        }
    }

    /// Grid vector `u0` on the plan's grid, row-major over dimensions.
    pub fn grid_field(&self, plan: &DiscretizationPlan) -> Result<SolutionField> {
        self.validate(plan.d(), plan.n())?;
        let (n, d, l) = (plan.n(), plan.d(), plan.l());
        let len = plan.grid_len().ok_or(Error::SizeCap {
            size: u128::MAX,
            cap: usize::MAX as u128,
        })?;
        let mut values = vec![0.0; len];
        let mut idx = vec![0usize; d];
        for v in values.iter_mut() {
            *v = self.grid_value(&idx, n, l);
            increment(&mut idx, n);
        }
        SolutionField::new(values, n, d)
    }

    /// True derivative constants for closed-form initial conditions.
    pub fn smoothness(&self, l: f64) -> Option<SmoothnessConstants> {
        match self {
            Self::Uniform => Some(SmoothnessConstants {
                fourth: 0.0,
                second: 0.0,
                first: 0.0,
            }),
            Self::PointSource { .. } => None,
            Self::CosineModes { modes } => {
                let d = modes.len() as i32;
                let kmax = *modes.iter().max()? as f64;
                let kappa = 2.0 * PI * kmax / l;
                let c = 2f64.powi(d - 1);
                Some(SmoothnessConstants {
                    fourth: c * kappa.powi(4),
                    second: c * kappa * kappa * l * l,
                    first: c * kappa * l.powi(3),
                })
            }
        }
    }
}

/// `cos(2 pi k j / n)` with the angle reduced in integer arithmetic.
pub(crate) fn grid_cos(k: usize, j: usize, n: usize) -> f64 {
    let r = (k as u128 * j as u128 % n as u128) as f64;
    (2.0 * PI * r / n as f64).cos()
}

/// `sum_{j=a}^{a+count-1} cos(2 pi k j / n)` in closed form.
fn cos_run_sum(k: usize, a: usize, count: usize, n: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    if k.is_multiple_of(n) {
        return count as f64;
    }
    let theta = 2.0 * PI * (k % n) as f64 / n as f64;
    let half = theta / 2.0;
    let centre = a as f64 + (count as f64 - 1.0) / 2.0;
    (count as f64 * half).sin() / half.sin() * (theta * centre).cos()
}

/// Advance a row-major multi-index (last dimension fastest).
pub(crate) fn increment(idx: &mut [usize], n: usize) {
    for slot in idx.iter_mut().rev() {
        *slot += 1;
        if *slot < n {
            return;
        }
        *slot = 0;
    }
}

/// Analytic solution for closed-form initial conditions on the periodic box.
pub fn exact_solution(ic: &InitialCondition, x: &[f64], t: f64, spec: &ProblemSpec) -> Result<f64> {
    if x.len() != spec.d {
        return Err(Error::DimensionMismatch {
            expected: spec.d,
            got: x.len(),
        });
    }
    let l = spec.l;
    match ic {
        InitialCondition::Uniform => Ok(l.powi(-(spec.d as i32))),
        InitialCondition::PointSource { .. } => Err(Error::NoClosedForm("point")),
        InitialCondition::CosineModes { modes } => {
            ic.validate(spec.d, 0)?;
            Ok(modes.iter().zip(x).fold(l.powi(-(spec.d as i32)), |acc, (&k, &xi)| {
                let kappa = 2.0 * PI * k as f64 / l;
                let decay = (-spec.alpha * kappa * kappa * t).exp();
                acc * (1.0 + decay * (kappa * xi).cos())
            }))
        }
    }
}

/// Analytic `int_S u(x, t) dx` over the box `S = prod [a_i, b_i]`.
pub fn exact_integral(
    ic: &InitialCondition,
    bounds: &[(f64, f64)],
    t: f64,
    spec: &ProblemSpec,
) -> Result<f64> {
    if bounds.len() != spec.d {
        return Err(Error::DimensionMismatch {
            expected: spec.d,
            got: bounds.len(),
        });
    }
    let l = spec.l;
    let scale = l.powi(-(spec.d as i32));
    match ic {
        InitialCondition::Uniform => Ok(bounds.iter().map(|(a, b)| b - a).product::<f64>() * scale),
        InitialCondition::PointSource { .. } => Err(Error::NoClosedForm("point")),
        InitialCondition::CosineModes { modes } => {
            ic.validate(spec.d, 0)?;
            Ok(modes.iter().zip(bounds).fold(scale, |acc, (&k, &(a, b))| {
                let kappa = 2.0 * PI * k as f64 / l;
                let decay = (-spec.alpha * kappa * kappa * t).exp();
                acc * ((b - a) + decay * ((kappa * b).sin() - (kappa * a).sin()) / kappa)
            }))
        }
    }
}

/// How region corners sit relative to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Corners are integer multiples of `dx` (Simpson, left Riemann).
    GridCorners,
    /// Corners are integer multiples of `dx` shifted by `dx/2` (midpoint).
    HalfShifted,
}

/// Axis-aligned box `prod_i [a_i, b_i]` in physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    intervals: Vec<(f64, f64)>,
    alignment: Alignment,
}

/// A region resolved against a grid, per dimension: the region spans
/// `cells` grid spacings starting at `first` (in units of `dx`, before the
/// half shift for [`Alignment::HalfShifted`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpan {
    pub first: i64,
    pub cells: usize,
}

impl Region {
    pub fn new(intervals: Vec<(f64, f64)>, alignment: Alignment) -> Result<Self> {
        if intervals.is_empty() {
            return Err(invalid("region", "needs at least one interval"));
        }
        if let Some((a, b)) = intervals.iter().find(|(a, b)| !(a < b)) {
            return Err(invalid("region", format!("interval [{a}, {b}] is empty")));
        }
        Ok(Self {
            intervals,
            alignment,
        })
    }

    /// Region covering `[lo_i, hi_i]` grid cells: `[lo dx, hi dx]` for grid
    /// corners, `[(lo + 1/2) dx, (hi + 1/2) dx]` when half-shifted.
    pub fn from_cells(
        plan: &DiscretizationPlan,
        alignment: Alignment,
        lo: &[i64],
        hi: &[i64],
    ) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let dx = plan.dx();
        let shift = match alignment {
            Alignment::GridCorners => 0.0,
            Alignment::HalfShifted => 0.5,
        };
        let intervals = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| ((a as f64 + shift) * dx, (b as f64 + shift) * dx))
            .collect();
        Self::new(intervals, alignment)
    }

    /// Snap per-dimension fractions of the box (each in `[0, 1]`) to the
    /// nearest aligned cells. A single pair is broadcast to every dimension.
    /// Grid-corner regions get an even cell count so Simpson's rule applies.
    pub fn from_fractions(
        plan: &DiscretizationPlan,
        alignment: Alignment,
        fractions: &[(f64, f64)],
    ) -> Result<Self> {
        let d = plan.d();
        if fractions.len() != 1 && fractions.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: fractions.len(),
            });
        }
        let n = plan.n() as i64;
        let (offset, step) = match alignment {
            Alignment::GridCorners => (0, 2),
            Alignment::HalfShifted => (1, 1),
        };
        let (mut lo, mut hi) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for k in 0..d {
            let (a, b) = fractions[if fractions.len() == 1 { 0 } else { k }];
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || !(a < b) {
                return Err(invalid("region", format!("fractions ({a}, {b}) must satisfy 0 <= a < b <= 1")));
            }
            let cells = (((b - a) * n as f64 / step as f64).round() as i64).max(1) * step;
            let first = ((a * n as f64).round() as i64).min(n - cells);
            lo.push(first - offset);
            hi.push(first + cells - offset);
        }
        Self::from_cells(plan, alignment, &lo, &hi)
    }

    /// The whole periodic box, aligned for the requested rule.
    pub fn full(plan: &DiscretizationPlan, alignment: Alignment) -> Self {
        let n = plan.n() as i64;
        let (lo, hi) = match alignment {
            Alignment::GridCorners => (0, n),
            Alignment::HalfShifted => (-1, n - 1),
        };
        Self::from_cells(plan, alignment, &vec![lo; plan.d()], &vec![hi; plan.d()])
            .expect("full box is well formed")
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn alignment(&self) -> Alignment {
        self.alignment
    }

    pub fn d(&self) -> usize {
        self.intervals.len()
    }

    /// Resolve corners to grid cells, rejecting misaligned or out-of-box regions.
    pub fn cell_spans(&self, plan: &DiscretizationPlan) -> Result<Vec<CellSpan>> {
        if self.d() != plan.d() {
            return Err(Error::DimensionMismatch {
                expected: plan.d(),
                got: self.d(),
            });
        }
        let dx = plan.dx();
        let n = plan.n() as i64;
        let shift = match self.alignment {
            Alignment::GridCorners => 0.0,
            Alignment::HalfShifted => 0.5,
        };
        let snap = |x: f64| -> Result<i64> {
            let c = x / dx - shift;
            let r = c.round();
            if (c - r).abs() > ALIGN_TOL * c.abs().max(1.0) {
                return Err(Error::Misaligned(format!(
                    "coordinate {x} is not on the {:?} grid with dx = {dx}",
                    self.alignment
                )));
            }
            Ok(r as i64)
        };
        self.intervals
            .iter()
            .map(|&(a, b)| {
                let (ia, ib) = (snap(a)?, snap(b)?);
                let (min, max) = match self.alignment {
                    Alignment::GridCorners => (0, n),
                    Alignment::HalfShifted => (-1, n),
                };
                if ia < min || ib > max || ib - ia > n {
                    return Err(Error::Misaligned(format!(
                        "interval [{a}, {b}] leaves the box [0, {}]",
                        plan.l()
                    )));
                }
                Ok(CellSpan {
                    first: ia,
                    cells: (ib - ia) as usize,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_matches_closed_form_examples() {
        let spec = ProblemSpec::new(1, 4.0, 1.0, 1.0, 3.0, 1.0 - 1e-15).unwrap();
        let p = plan_discretization(&spec).unwrap();
        assert_eq!((p.m(), p.n()), (2, 4));

        let spec = ProblemSpec::new(2, 1.0, 2.0, 0.5, 6.0, 1.0 - 1e-15).unwrap();
        let p = plan_discretization(&spec).unwrap();
        assert_eq!((p.m(), p.n()), (16, 2));
    }

    #[test]
    fn eps_of_one_is_rejected() {
        assert!(ProblemSpec::new(1, 4.0, 1.0, 1.0, 3.0, 1.0).is_err());
        assert!(ProblemSpec::new(1, -4.0, 1.0, 1.0, 3.0, 0.5).is_err());
        assert!(ProblemSpec::new(0, 4.0, 1.0, 1.0, 3.0, 0.5).is_err());
    }

    #[test]
    fn planned_grids_are_stable_and_even() {
        for &(d, eps) in &[(1, 0.3), (2, 0.01), (3, 0.07), (1, 1e-4)] {
            let spec = ProblemSpec::new(d, 1.7, 0.9, 0.3, 5.0, eps).unwrap();
            for p in [
                plan_discretization(&spec).unwrap(),
                plan_discretization_midpoint(&spec).unwrap(),
            ] {
                assert_eq!(p.n() % 2, 0);
                assert!(p.dt() <= p.stability_limit() * (1.0 + REL_TOL));
            }
        }
    }

    #[test]
    fn error_bound_substitution() {
        // d = 1, alpha = T = L = zeta = 1, dt = 0.01, dx = 0.2
        let plan = DiscretizationPlan::new(1, 5 * 2, 100, 2.0, 1.0, 1.0).unwrap();
        assert!((plan.dx() - 0.2).abs() < 1e-15);
        let spec = ProblemSpec::new(1, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        // L enters as L^-d; the plan has L = 2, so rescale the expectation.
        let got = discretization_error_bound(&plan, &spec) * 2.0;
        assert!((got - (0.005 + 0.04 / 12.0)).abs() < 1e-15, "{got}");
    }

    #[test]
    fn error_bound_scales_quadratically() {
        let a = DiscretizationPlan::saturated(1, 16, 64, 1.0, 1.0).unwrap();
        let b = DiscretizationPlan::saturated(1, 8, 16, 1.0, 1.0).unwrap();
        assert!((a.t() - b.t()).abs() < 1e-15);
        let spec = ProblemSpec::new(1, 1.0, a.t(), 1.0, 1.0, 0.5).unwrap();
        let ratio = discretization_error_bound(&b, &spec) / discretization_error_bound(&a, &spec);
        assert!((ratio - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_solution_examples() {
        let spec = ProblemSpec::new(1, 1.0, 1.0, 1.0 / (4.0 * PI * PI), 1.0, 0.5).unwrap();
        let ic = InitialCondition::CosineModes { modes: vec![1] };
        let v = exact_solution(&ic, &[0.0], 1.0, &spec).unwrap();
        assert!((v - (1.0 + (-1f64).exp())).abs() < 1e-12);
        assert!((v - 1.367879).abs() < 1e-6);

        let x = [0.3];
        assert_eq!(exact_solution(&ic, &x, 0.0, &spec).unwrap(), ic.value_at(&x, 1.0).unwrap());
        let late = exact_solution(&ic, &x, 1e6, &spec).unwrap();
        assert!((late - 1.0).abs() < 1e-12);
        assert!(exact_solution(&InitialCondition::PointSource { origin: vec![0] }, &x, 0.0, &spec).is_err());
    }

    #[test]
    fn l1_normalisation_holds() {
        let ics = |d: usize| {
            vec![
                InitialCondition::Uniform,
                InitialCondition::PointSource { origin: vec![1; d] },
                InitialCondition::CosineModes { modes: (1..=d as u32).collect() },
            ]
        };
        for d in 1..=3 {
            for n in (4usize..=64).step_by(2) {
                if n.pow(d as u32) > 1 << 15 {
                    continue;
                }
                let plan = DiscretizationPlan::saturated(d, n, 1, 2.5, 1.0).unwrap();
                for ic in ics(d) {
                    if ic.validate(d, n).is_err() {
                        continue;
                    }
                    let f = ic.grid_field(&plan).unwrap();
                    let target = (n as f64 / 2.5).powi(d as i32);
                    let sum: f64 = f.values().iter().sum();
                    assert!((sum / target - 1.0).abs() < 1e-12, "{ic:?} n={n} d={d}");
                    assert!(f.values().iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn prefix_sums_match_direct_summation() {
        for d in 1..=2usize {
            for n in [2usize, 4, 6, 8, 10, 16] {
                let ics = [
                    InitialCondition::Uniform,
                    InitialCondition::PointSource { origin: vec![n / 2; d] },
                    InitialCondition::CosineModes { modes: vec![1; d] },
                    InitialCondition::CosineModes { modes: vec![3; d] },
                ];
                let boxes: Vec<(usize, usize)> =
                    (0..n).flat_map(|a| (a + 1..=n).map(move |b| (a, b))).collect();
                for ic in ics.iter().filter(|ic| ic.validate(d, n).is_ok()) {
                    let direct = |lo: &[usize], hi: &[usize], sq: bool| {
                        let mut s = 0.0;
                        let mut idx = vec![0; d];
                        for _ in 0..n.pow(d as u32) {
                            if idx.iter().zip(lo.iter().zip(hi)).all(|(&j, (&a, &b))| a <= j && j < b) {
                                let v = ic.grid_value(&idx, n, 1.5);
                                s += if sq { v * v } else { v };
                            }
                            increment(&mut idx, n);
                        }
                        s
                    };
                    let check = |lo: &[usize], hi: &[usize]| {
                        for sq in [false, true] {
                            let want = direct(lo, hi, sq);
                            let got = if sq {
                                ic.rect_sum_sq(lo, hi, n, 1.5)
                            } else {
                                ic.rect_sum(lo, hi, n, 1.5)
                            };
                            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{ic:?} {lo:?} {hi:?}");
                        }
                    };
                    if d == 1 {
                        for &(a, b) in &boxes {
                            check(&[a], &[b]);
                        }
                    } else {
                        for &(a0, b0) in &boxes {
                            for &(a1, b1) in &boxes {
                                check(&[a0, a1], &[b0, b1]);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn regions_resolve_to_cells() {
        let plan = DiscretizationPlan::saturated(1, 8, 4, 2.0, 1.0).unwrap();
        let r = Region::new(vec![(0.5, 1.5)], Alignment::GridCorners).unwrap();
        assert_eq!(r.cell_spans(&plan).unwrap(), vec![CellSpan { first: 2, cells: 4 }]);
        let r = Region::new(vec![(0.6, 1.5)], Alignment::GridCorners).unwrap();
        assert!(matches!(r.cell_spans(&plan), Err(Error::Misaligned(_))));
        let full = Region::full(&plan, Alignment::HalfShifted);
        assert_eq!(full.cell_spans(&plan).unwrap(), vec![CellSpan { first: -1, cells: 8 }]);
        let r = Region::new(vec![(0.0, 2.5)], Alignment::GridCorners).unwrap();
        assert!(r.cell_spans(&plan).is_err());
    }

    #[test]
    fn step_index_requires_grid_times() {
        let plan = DiscretizationPlan::saturated(1, 4, 8, 1.0, 1.0).unwrap();
        assert_eq!(plan.step_index(plan.dt() * 3.0).unwrap(), 3);
        assert!(plan.step_index(plan.dt() * 2.5).is_err());
        assert!(plan.step_index(plan.dt() * 9.0).is_err());
    }
}
