//! Projected gradient descent on predicted risk over the directly
//! changeable features.
//!
//! The decision variable is the standardized change `w`, with
//! `x_D = x̄_D + s ⊙ w` and `s` the classifier's per-feature scale. Costs and
//! the budget apply to `w`; raw-unit bounds are mapped into the same
//! coordinates. `w = 0` is the patient's current state, so a zero budget
//! projects every iterate back to exactly no change.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::cost::{BudgetSpec, Bounds, CostModel};
use super::project::project;
use crate::error::{Error, Result};
use crate::indirect::IndirectEstimator;
use crate::models::ProbabilisticClassifier;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once an accepted step lowers the objective by less than this.
    pub tol: f64,
    pub initial_step: f64,
    /// Each line search starts from the previous accepted step times this
    /// (capped at `max_step`); 1 restarts from `initial_step` every time.
    pub grow: f64,
    pub max_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Round relaxed binary features at 0.5 after solving.
    pub round_binary: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-8,
            initial_step: 1.0,
            grow: 2.0,
            max_step: 1e6,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
            round_binary: false,
        }
    }
}

/// `f(x_U, H(x_U, x_D), x_D)` for one patient row, as a function of `x_D`.
///
/// Positions index into the classifier's input row. `context` feeds `H`
/// together with the direct block and is never modified.
#[derive(Clone, Debug)]
pub struct CompositeObjective<'a> {
    pub classifier: &'a ProbabilisticClassifier,
    pub indirect: Option<&'a IndirectEstimator>,
    pub row: Array1<f64>,
    pub direct: Vec<usize>,
    pub direct_names: Vec<String>,
    pub direct_binary: Vec<bool>,
    pub indirect_positions: Vec<usize>,
    pub context: Vec<usize>,
}

impl CompositeObjective<'_> {
    pub fn validate(&self) -> Result<()> {
        let n = self.classifier.n_features();
        if self.row.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.row.len(),
            });
        }
        let d = self.direct.len();
        if self.direct_names.len() != d || self.direct_binary.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.direct_names.len().min(self.direct_binary.len()),
            });
        }
        let all = self.direct.iter().chain(&self.indirect_positions).chain(&self.context);
        if let Some(&bad) = all.clone().find(|&&p| p >= n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad + 1,
            });
        }
        if let Some(h) = self.indirect {
            if h.n_context != self.context.len()
                || h.n_direct != d
                || h.n_outputs() != self.indirect_positions.len()
            {
                return Err(Error::Dimension {
                    expected: h.n_context + h.n_direct,
                    got: self.context.len() + d,
                });
            }
        }
        if self.row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patient row"));
        }
        Ok(())
    }

    pub fn current_direct(&self) -> Vec<f64> {
        self.direct.iter().map(|&p| self.row[p]).collect()
    }

    /// Standardization scale of each direct feature.
    pub fn scales(&self) -> Vec<f64> {
        self.direct.iter().map(|&p| self.classifier.scale(p)).collect()
    }

    fn context_values(&self) -> Array1<f64> {
        self.context.iter().map(|&p| self.row[p]).collect()
    }

    /// Full classifier input with `x_D` substituted and `x_I = H(.)`.
    pub fn assemble(&self, x_direct: &[f64]) -> Result<Array1<f64>> {
        Ok(self.assemble_with_jacobian(x_direct, false)?.0)
    }

    fn assemble_with_jacobian(
        &self,
        x_direct: &[f64],
        with_jacobian: bool,
    ) -> Result<(Array1<f64>, Option<ndarray::Array2<f64>>)> {
        if x_direct.len() != self.direct.len() {
            return Err(Error::Dimension {
                expected: self.direct.len(),
                got: x_direct.len(),
            });
        }
        let mut x = self.row.clone();
        for (&p, &v) in self.direct.iter().zip(x_direct) {
            x[p] = v;
        }
        let mut jac = None;
        if let Some(h) = self.indirect {
            let ctx = self.context_values();
            let xd = Array1::from_vec(x_direct.to_vec());
            let est = if with_jacobian {
                let (est, j) = h.predict_and_jacobian(ctx.view(), xd.view())?;
                jac = Some(j);
                est
            } else {
                h.predict(ctx.view(), xd.view())?
            };
            for (&p, &v) in self.indirect_positions.iter().zip(est.iter()) {
                x[p] = v;
            }
        }
        Ok((x, jac))
    }

    pub fn value(&self, x_direct: &[f64]) -> Result<f64> {
        self.classifier.predict_proba(self.assemble(x_direct)?.view())
    }

    /// Objective and its gradient with respect to raw `x_D`:
    /// `∂f/∂x_D + J_Hᵀ ∂f/∂x_I`.
    pub fn value_and_grad(&self, x_direct: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (x, jac) = self.assemble_with_jacobian(x_direct, true)?;
        let (p, g) = self.classifier.proba_and_grad(x.view())?;
        let mut grad: Vec<f64> = self.direct.iter().map(|&q| g[q]).collect();
        if let Some(jac) = jac {
            for (k, &q) in self.indirect_positions.iter().enumerate() {
                for (j, gj) in grad.iter_mut().enumerate() {
                    *gj += jac[[k, j]] * g[q];
                }
            }
        }
        if !p.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective gradient"));
        }
        Ok((p, grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureChange {
    pub name: String,
    pub before_raw: f64,
    pub after_raw: f64,
    pub delta_std: f64,
    pub cost_spent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub visit: usize,
    pub baseline: f64,
    pub optimized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub budget: f64,
    pub features: Vec<FeatureChange>,
    /// Optimized direct values in raw units.
    pub x_direct: Vec<f64>,
    /// `x_direct - x̄_D` in raw units.
    pub delta: Vec<f64>,
    pub delta_std: Vec<f64>,
    pub cost_spent: f64,
    /// `H` at the optimum, in the order of the indirect positions.
    pub indirect_after: Vec<f64>,
    pub before_probability: f64,
    pub after_probability: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Raw bounds mapped to standardized-change coordinates around `x̄`.
fn standardized_bounds(bounds: &Bounds, x_bar: &[f64], s: &[f64]) -> Result<Bounds> {
    if bounds.len() != x_bar.len() {
        return Err(Error::Dimension {
            expected: x_bar.len(),
            got: bounds.len(),
        });
    }
    if !bounds.contains(x_bar) {
        return Err(Error::Infeasible(
            "current direct values lie outside their bounds".into(),
        ));
    }
    let lower = (0..x_bar.len()).map(|j| (bounds.lower[j] - x_bar[j]) / s[j]).collect();
    let upper = (0..x_bar.len()).map(|j| (bounds.upper[j] - x_bar[j]) / s[j]).collect();
    Bounds::new(lower, upper)
}

struct Problem<'o, 'a> {
    objective: &'o CompositeObjective<'a>,
    cost_model: &'o CostModel,
    x_bar: Vec<f64>,
    s: Vec<f64>,
    raw_bounds: &'o Bounds,
    feasible: BudgetSpec,
}

impl Problem<'_, '_> {
    fn to_raw(&self, w: &[f64]) -> Vec<f64> {
        (0..w.len())
            .map(|j| {
                (self.x_bar[j] + self.s[j] * w[j])
                    .clamp(self.raw_bounds.lower[j], self.raw_bounds.upper[j])
            })
            .collect()
    }

    fn eval(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, g) = self.objective.value_and_grad(&self.to_raw(w))?;
        Ok((f, g.iter().zip(&self.s).map(|(gj, sj)| gj * sj).collect()))
    }

    fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        let center = vec![0.0; z.len()];
        project(self.cost_model, &self.feasible, &center, z)
    }
}

pub fn optimize(
    objective: &CompositeObjective<'_>,
    cost_model: &CostModel,
    budget: &BudgetSpec,
    opts: &SolverOptions,
) -> Result<Recommendation> {
    optimize_from(objective, cost_model, budget, opts, None)
}

/// Like [`optimize`], starting from the standardized change `start` (which
/// must already be feasible, e.g. an optimum at a smaller budget).
pub fn optimize_from(
    objective: &CompositeObjective<'_>,
    cost_model: &CostModel,
    budget: &BudgetSpec,
    opts: &SolverOptions,
    start: Option<&[f64]>,
) -> Result<Recommendation> {
    objective.validate()?;
    let d = objective.direct.len();
    if cost_model.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: cost_model.len(),
        });
    }
    if !(opts.shrink > 0.0 && opts.shrink < 1.0)
        || !(opts.initial_step > 0.0)
        || !(opts.grow >= 1.0)
        || !(opts.max_step >= opts.initial_step)
    {
        return Err(Error::InvalidParameter("invalid line-search settings".into()));
    }
    let x_bar = objective.current_direct();
    let s = objective.scales();
    let feasible = BudgetSpec::new(
        budget.budget,
        standardized_bounds(&budget.bounds, &x_bar, &s)?,
    )?;
    let problem = Problem {
        objective,
        cost_model,
        x_bar,
        s,
        raw_bounds: &budget.bounds,
        feasible,
    };

    let origin = vec![0.0; d];
    let (before, g0) = problem.eval(&origin)?;
    let (mut w, mut f, mut g) = (origin, before, g0);
    if let Some(start) = start {
        let w0 = problem.project(start)?;
        let (f0, g0) = problem.eval(&w0)?;
        if f0 <= f {
            (w, f, g) = (w0, f0, g0);
        }
    }

    let mut trace = vec![f];
    let mut iterations = 0;
    let mut step = opts.initial_step;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let z: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - t * gi).collect();
            let cand = problem.project(&z)?;
            let moved: f64 = cand.iter().zip(&w).zip(&g).map(|((c, wi), gi)| gi * (c - wi)).sum();
            if cand == w {
                break;
            }
            let (fc, gc) = problem.eval(&cand)?;
            if fc <= f + opts.armijo * moved && fc <= f {
                accepted = Some((cand, fc, gc));
                step = (t * opts.grow).clamp(opts.initial_step.min(t), opts.max_step);
                break;
            }
            t *= opts.shrink;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let decrease = f - fc;
        (w, f, g) = (cand, fc, gc);
        trace.push(f);
        if decrease < opts.tol {
            break;
        }
    }

    if opts.round_binary {
        let rounded = round_binary(&problem, w.clone())?;
        let fr = problem.objective.value(&problem.to_raw(&rounded))?;
        if fr <= before {
            (w, f) = (rounded, fr);
        }
    }
    finish(&problem, w, before, f, trace, iterations, budget.budget)
}

/// Rounds relaxed binary features at 0.5, keeping the current value for any
/// feature whose rounding would overspend the budget.
fn round_binary(problem: &Problem<'_, '_>, mut w: Vec<f64>) -> Result<Vec<f64>> {
    for j in 0..w.len() {
        if !problem.objective.direct_binary[j] {
            continue;
        }
        let raw = problem.x_bar[j] + problem.s[j] * w[j];
        let rounded = if raw >= 0.5 { 1.0 } else { 0.0 };
        let mut trial = w.clone();
        trial[j] = (rounded - problem.x_bar[j]) / problem.s[j];
        let ok = problem.cost_model.cost_unchecked(&trial) <= problem.feasible.budget
            && problem.feasible.bounds.contains(&trial);
        w[j] = if ok { trial[j] } else { 0.0 };
    }
    Ok(w)
}

fn finish(
    problem: &Problem<'_, '_>,
    w: Vec<f64>,
    before: f64,
    after: f64,
    trace: Vec<f64>,
    iterations: usize,
    budget: f64,
) -> Result<Recommendation> {
    let x_direct = problem.to_raw(&w);
    let delta: Vec<f64> = x_direct.iter().zip(&problem.x_bar).map(|(a, b)| a - b).collect();
    let features = (0..w.len())
        .map(|j| FeatureChange {
            name: problem.objective.direct_names[j].clone(),
            before_raw: problem.x_bar[j],
            after_raw: x_direct[j],
            delta_std: w[j],
            cost_spent: term_cost(problem.cost_model, j, w[j]),
        })
        .collect();
    let assembled = problem.objective.assemble(&x_direct)?;
    let indirect_after = problem
        .objective
        .indirect_positions
        .iter()
        .map(|&p| assembled[p])
        .collect();
    Ok(Recommendation {
        budget,
        features,
        cost_spent: problem.cost_model.cost_unchecked(&w),
        x_direct,
        delta,
        delta_std: w,
        indirect_after,
        before_probability: before,
        after_probability: after,
        objective_trace: trace,
        iterations,
        trajectory: Vec::new(),
    })
}

fn term_cost(cost_model: &CostModel, j: usize, z: f64) -> f64 {
    if z > 0.0 {
        cost_model.up[j] * z
    } else if z < 0.0 {
        cost_model.down[j] * -z
    } else {
        0.0
    }
}

/// One recommendation per budget, each warm-started from the previous
/// optimum so the optimal values are non-increasing in the budget.
pub fn sweep_budget(
    objective: &CompositeObjective<'_>,
    cost_model: &CostModel,
    bounds: &Bounds,
    budgets: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<Recommendation>> {
    if budgets.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::InvalidParameter("budgets must be sorted ascending".into()));
    }
    let mut out: Vec<Recommendation> = Vec::with_capacity(budgets.len());
    for &b in budgets {
        let spec = BudgetSpec::new(b, bounds.clone())?;
        let start = out.last().map(|r| r.delta_std.clone());
        let rec = optimize_from(objective, cost_model, &spec, opts, start.as_deref())?;
        out.push(rec);
    }
    Ok(out)
}
