//! Simpson, midpoint and left Riemann rules on the solver grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::operators::SolutionField;
use crate::problem::{Alignment, CellSpan, DiscretizationPlan, ProblemSpec, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Simpson,
    Midpoint,
    LeftRiemann,
}

impl RuleKind {
    pub fn alignment(self) -> Alignment {
        match self {
            Self::Simpson | Self::LeftRiemann => Alignment::GridCorners,
            Self::Midpoint => Alignment::HalfShifted,
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Simpson => "simpson",
            Self::Midpoint => "midpoint",
            Self::LeftRiemann => "left",
        })
    }
}

impl FromStr for RuleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simpson" => Ok(Self::Simpson),
            "midpoint" => Ok(Self::Midpoint),
            "left" | "leftriemann" | "left-riemann" => Ok(Self::LeftRiemann),
            other => Err(invalid("rule", format!("unknown rule {other:?}"))),
        }
    }
}

/// A rule together with the 1-d weights for a given interval count.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(kind: RuleKind, intervals: usize) -> Result<Self> {
        Ok(Self {
            kind,
            weights: weights(kind, intervals)?,
        })
    }

    pub fn alignment(&self) -> Alignment {
        self.kind.alignment()
    }
}

/// 1-d weights: `(1,4,2,...,4,1)/3` for Simpson (`intervals + 1` nodes), all
/// ones for the midpoint and left rules (`intervals` nodes).
pub fn weights(kind: RuleKind, intervals: usize) -> Result<Vec<f64>> {
    match kind {
        RuleKind::Simpson => {
            if intervals < 2 || !intervals.is_multiple_of(2) {
                return Err(invalid(
                    "intervals",
                    format!("Simpson needs an even count >= 2, got {intervals}"),
                ));
            }
            Ok((0..=intervals)
                .map(|k| {
                    if k == 0 || k == intervals {
                        1.0 / 3.0
                    } else if k % 2 == 1 {
                        4.0 / 3.0
                    } else {
                        2.0 / 3.0
                    }
                })
                .collect())
        }
        RuleKind::Midpoint | RuleKind::LeftRiemann => {
            if intervals == 0 {
                return Err(invalid("intervals", "must be at least 1"));
            }
            Ok(vec![1.0; intervals])
        }
    }
}

/// Grid nodes (reduced mod `n`) and weights of one dimension of a region.
pub(crate) fn axis_nodes(kind: RuleKind, span: CellSpan, n: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let w = weights(kind, span.cells)?;
    let start = match kind {
        RuleKind::Simpson | RuleKind::LeftRiemann => span.first,
        RuleKind::Midpoint => span.first + 1,
    };
    let nodes = (0..w.len() as i64)
        .map(|k| (start + k).rem_euclid(n as i64) as usize)
        .collect();
    Ok((nodes, w))
}

pub(crate) fn region_axes(
    region: &Region,
    plan: &DiscretizationPlan,
    kind: RuleKind,
) -> Result<Vec<(Vec<usize>, Vec<f64>)>> {
    if region.alignment() != kind.alignment() {
        return Err(Error::Misaligned(format!(
            "{kind} rule needs {:?} corners, region has {:?}",
            kind.alignment(),
            region.alignment()
        )));
    }
    region
        .cell_spans(plan)?
        .into_iter()
        .map(|s| axis_nodes(kind, s, plan.n()))
        .collect()
}

/// Tensor-product weight vector over the whole grid (zero outside the region),
/// row-major like [`SolutionField`].
pub(crate) fn weight_field(axes: &[(Vec<usize>, Vec<f64>)], n: usize) -> Vec<f64> {
    let mut dense: Vec<f64> = vec![1.0];
    for (nodes, w) in axes {
        let mut axis = vec![0.0; n];
        for (&j, &wj) in nodes.iter().zip(w) {
            axis[j] += wj;
        }
        dense = dense
            .iter()
            .flat_map(|&a| axis.iter().map(move |&b| a * b))
            .collect();
    }
    dense
}

/// `dx^d sum_{x in S} w(x) u(x)` with tensor-product weights.
pub fn integrate(
    field: &SolutionField,
    plan: &DiscretizationPlan,
    region: &Region,
    kind: RuleKind,
) -> Result<f64> {
    field.check_plan(plan)?;
    let axes = region_axes(region, plan, kind)?;
    let n = plan.n();
    let values = field.values();
    // Contract one axis at a time, innermost last, so the cost stays linear in the box size.
    let mut acc = 0.0;
    let mut stack = vec![(0usize, 0usize, 1.0f64)];
    let d = axes.len();
    while let Some((depth, offset, w)) = stack.pop() {
        let (nodes, ws) = &axes[depth];
        if depth + 1 == d {
            for (&j, &wj) in nodes.iter().zip(ws) {
                acc += w * wj * values[offset * n + j];
            }
        } else {
            for (&j, &wj) in nodes.iter().zip(ws) {
                stack.push((depth + 1, offset * n + j, w * wj));
            }
        }
    }
    Ok(acc * plan.dx().powi(d as i32))
}

/// Integration error bound for the discrete solution: discretisation error
/// carried through the weights plus the rule's own truncation error,
/// `zeta alpha d T (alpha d dt / 2 + dx^2 / 12) + d L^(d-1) E` with
/// `E = L dx^4 zeta / (180 L^d)`, `L dx^2 zeta / (24 L^(d-2))` or
/// `L dx zeta / (2 L^(d-3))` for Simpson, midpoint and left Riemann.
pub fn quadrature_error_bound(kind: RuleKind, plan: &DiscretizationPlan, spec: &ProblemSpec) -> f64 {
    let d = plan.d() as f64;
    let di = plan.d() as i32;
    let (l, dx, z) = (plan.l(), plan.dx(), spec.zeta);
    // (dx ||w||_1)^d <= L^d for every aligned region, which cancels the L^-d of the pointwise bound.
    let carried = z * plan.alpha() * d * plan.t() * (plan.alpha() * d * plan.dt() / 2.0 + dx * dx / 12.0);
    let rule = match kind {
        RuleKind::Simpson => l * dx.powi(4) * z / 180.0 * l.powi(-di),
        RuleKind::Midpoint => l * dx * dx * z / 24.0 * l.powi(2 - di),
        RuleKind::LeftRiemann => l * dx * z / 2.0 * l.powi(3 - di),
    };
    carried + d * l.powi(di - 1) * rule
}
