//! Euclidean projection onto `{w : cost(w - center) <= B, lower <= w <= upper}`.
//!
//! The set is a box intersected with an asymmetric weighted L1 ball around
//! the center. Locked directions (infinite cost) become half-space clamps on
//! the box. When the clipped point overspends, the minimizer has the form
//! `w_j(λ) = center_j + clip(shrink(z_j - center_j, λ c_j))` and the spent
//! cost is non-increasing in λ, so λ is found by bisection.

use super::cost::{BudgetSpec, CostModel};
use crate::error::{Error, Result};

const BUDGET_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;

pub fn project(
    cost_model: &CostModel,
    budget: &BudgetSpec,
    center: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    let n = cost_model.len();
    for len in [center.len(), z.len(), budget.bounds.len()] {
        if len != n {
            return Err(Error::Dimension {
                expected: n,
                got: len,
            });
        }
    }
    if budget.budget.is_nan() || budget.budget < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "budget must be non-negative, got {}",
            budget.budget
        )));
    }
    budget.bounds.validate()?;
    if !budget.bounds.contains(center) {
        return Err(Error::Infeasible(
            "current values lie outside their bounds".into(),
        ));
    }
    if z.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("projection input"));
    }

    let (lo, hi) = effective_box(cost_model, budget, center);
    let clipped: Vec<f64> = z
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(&v, (&l, &u))| v.clamp(l, u))
        .collect();
    if spent(cost_model, center, &clipped) <= budget.budget {
        return Ok(clipped);
    }

    let shrunk = |lambda: f64| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let d = z[j] - center[j];
                let step = if d > 0.0 {
                    (d - lambda * cost_model.up[j]).max(0.0)
                } else if d < 0.0 {
                    (d + lambda * cost_model.down[j]).min(0.0)
                } else {
                    0.0
                };
                (center[j] + step).clamp(lo[j], hi[j])
            })
            .collect()
    };

    // Past lambda_max every costed coordinate sits at the center, so the
    // spend is zero and the right end of the bracket is feasible.
    let lambda_max = (0..n)
        .filter_map(|j| {
            let d = z[j] - center[j];
            let c = if d > 0.0 { cost_model.up[j] } else { cost_model.down[j] };
            (d != 0.0 && c > 0.0 && c.is_finite()).then(|| d.abs() / c)
        })
        .fold(0.0_f64, f64::max);
    let mut hi_lambda = lambda_max * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    let mut best = shrunk(hi_lambda);
    if budget.budget == 0.0 {
        return Ok(best);
    }
    let mut lo_lambda = 0.0;
    for _ in 0..MAX_BISECTIONS {
        let used = spent(cost_model, center, &best);
        if budget.budget - used <= BUDGET_TOL {
            break;
        }
        let mid = 0.5 * (lo_lambda + hi_lambda);
        if mid <= lo_lambda || mid >= hi_lambda {
            break;
        }
        let w = shrunk(mid);
        if spent(cost_model, center, &w) <= budget.budget {
            hi_lambda = mid;
            best = w;
        } else {
            lo_lambda = mid;
        }
    }
    Ok(best)
}

/// Box with locked directions folded in as clamps at the center.
fn effective_box(cost_model: &CostModel, budget: &BudgetSpec, center: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = center.len();
    let mut lo = budget.bounds.lower.clone();
    let mut hi = budget.bounds.upper.clone();
    for j in 0..n {
        if cost_model.up[j].is_infinite() {
            hi[j] = center[j];
        }
        if cost_model.down[j].is_infinite() {
            lo[j] = center[j];
        }
    }
    (lo, hi)
}

fn spent(cost_model: &CostModel, center: &[f64], w: &[f64]) -> f64 {
    let delta: Vec<f64> = w.iter().zip(center).map(|(a, b)| a - b).collect();
    cost_model.cost_unchecked(&delta)
}
