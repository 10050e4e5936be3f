//! Per-patient risk trajectories under a recommendation strategy, and the
//! single-patient queries built on them.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::train::TrainedModels;
use crate::cohort::{Cohort, FeatureSchema, PartitionTag};
use crate::error::{Error, Result};
use crate::inverse_opt::{
    optimize, sweep_budget, BudgetSpec, Bounds, CostModel, Recommendation, SolverOptions,
    TrajectoryPoint,
};
use crate::missing_features::enrich;

/// How a change recommended at one visit reaches later visits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarryMode {
    /// Later visits keep their observed direct values shifted by the
    /// accumulated change (clamped to bounds).
    #[default]
    Delta,
    /// Later visits take the optimized direct values verbatim.
    Overwrite,
}

/// A patient's enriched visit rows, one per visit attended.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientHistory {
    pub id: String,
    pub bases: Vec<Array1<f64>>,
}

pub fn histories(models: &TrainedModels, cohort: &Cohort, ids: &[String]) -> Result<Vec<PatientHistory>> {
    let mut out: Vec<PatientHistory> = ids
        .iter()
        .map(|id| PatientHistory {
            id: id.clone(),
            bases: Vec::new(),
        })
        .collect();
    let v1 = cohort.visit(1)?;
    if let Some(id) = ids.iter().find(|id| v1.row_of(id).is_none()) {
        return Err(Error::UnknownId(id.clone()));
    }
    for k in 1..=models.n_visits() {
        let visit = cohort.visit(k)?;
        let index = visit.id_index();
        let (who, rows): (Vec<usize>, Vec<usize>) = out
            .iter()
            .enumerate()
            .filter(|(_, h)| h.bases.len() == k - 1)
            .filter_map(|(i, h)| index.get(h.id.as_str()).map(|&r| (i, r)))
            .unzip();
        if who.is_empty() {
            break;
        }
        let enriched = enrich(&models.plans[k - 1], &visit.subset_rows(&rows))?;
        for (j, &i) in who.iter().enumerate() {
            out[i].bases.push(enriched.row(j).to_owned());
        }
    }
    Ok(out)
}

/// What to do along a trajectory.
#[derive(Clone, Debug)]
pub struct Strategy<'a> {
    /// Visits at which to optimize, ascending.
    pub optimize_at: Vec<usize>,
    pub budget: f64,
    pub cost_model: &'a CostModel,
    pub bounds: &'a Bounds,
    pub carry: CarryMode,
    pub solver: &'a SolverOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathResult {
    /// Predicted risk at each visit attended.
    pub probabilities: Vec<f64>,
    pub recommendations: Vec<(usize, Recommendation)>,
}

fn clamp_direct(values: &[f64], bounds: &Bounds) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(j, v)| v.clamp(bounds.lower[j], bounds.upper[j]))
        .collect()
}

/// Walks the patient's visits. At each one the direct features follow the
/// strategy, the indirect features come from that visit's estimator, and the
/// risk columns hold the risks computed earlier along the same path.
pub fn simulate(
    models: &TrainedModels,
    schema: &FeatureSchema,
    history: &PatientHistory,
    strategy: &Strategy<'_>,
) -> Result<PathResult> {
    let mut risks: Vec<f64> = Vec::with_capacity(history.bases.len());
    let mut recommendations = Vec::new();
    let n_direct = strategy.cost_model.len();
    let mut shift = vec![0.0; n_direct];
    let mut adopted: Option<Vec<f64>> = None;
    for (k0, base) in history.bases.iter().enumerate() {
        let k = k0 + 1;
        let layout = &models.layouts[k0];
        let mut row = Array1::<f64>::zeros(layout.width());
        row.slice_mut(ndarray::s![..layout.n_base]).assign(base);
        for (c, &r) in risks.iter().enumerate() {
            row[layout.n_base + c] = r;
        }
        let observed: Vec<f64> = layout.direct.iter().map(|&p| base[p]).collect();
        let mut x_d = match (strategy.carry, &adopted) {
            (CarryMode::Overwrite, Some(values)) => values.clone(),
            _ => {
                let shifted: Vec<f64> = observed.iter().zip(&shift).map(|(o, s)| o + s).collect();
                clamp_direct(&shifted, strategy.bounds)
            }
        };
        for (&p, &v) in layout.direct.iter().zip(&x_d) {
            row[p] = v;
        }
        let objective = models.objective(schema, k, row);
        if strategy.optimize_at.contains(&k) {
            let spec = BudgetSpec::new(strategy.budget, strategy.bounds.clone())?;
            let rec = optimize(&objective, strategy.cost_model, &spec, strategy.solver)?;
            for j in 0..n_direct {
                shift[j] += rec.x_direct[j] - x_d[j];
            }
            x_d = rec.x_direct.clone();
            adopted = Some(x_d.clone());
            recommendations.push((k, rec));
        }
        risks.push(objective.value(&x_d)?);
    }
    Ok(PathResult {
        probabilities: risks,
        recommendations,
    })
}

fn single_history(models: &TrainedModels, cohort: &Cohort, id: &str) -> Result<PatientHistory> {
    Ok(histories(models, cohort, &[id.to_string()])?.remove(0))
}

/// Optimizes `id` at visit 1 and attaches the risk trajectory with and
/// without the change.
#[allow(clippy::too_many_arguments)]
pub fn recommend_patient(
    models: &TrainedModels,
    cohort: &Cohort,
    id: &str,
    budget: f64,
    cost_model: &CostModel,
    bounds: &Bounds,
    carry: CarryMode,
    solver: &SolverOptions,
) -> Result<Recommendation> {
    let history = single_history(models, cohort, id)?;
    let mut strategy = Strategy {
        optimize_at: Vec::new(),
        budget,
        cost_model,
        bounds,
        carry,
        solver,
    };
    let baseline = simulate(models, &cohort.schema, &history, &strategy)?;
    strategy.optimize_at = vec![1];
    let acted = simulate(models, &cohort.schema, &history, &strategy)?;
    let (_, mut rec) = acted.recommendations.into_iter().next().expect("optimized at visit 1");
    rec.trajectory = baseline
        .probabilities
        .iter()
        .zip(&acted.probabilities)
        .enumerate()
        .map(|(k, (&b, &o))| TrajectoryPoint {
            visit: k + 1,
            baseline: b,
            optimized: o,
        })
        .collect();
    Ok(rec)
}

/// Visit-1 recommendations for ascending `budgets`, warm-started.
pub fn sweep_patient(
    models: &TrainedModels,
    cohort: &Cohort,
    id: &str,
    budgets: &[f64],
    cost_model: &CostModel,
    bounds: &Bounds,
    solver: &SolverOptions,
) -> Result<Vec<Recommendation>> {
    let history = single_history(models, cohort, id)?;
    let layout = &models.layouts[0];
    let mut row = history.bases[0].clone();
    let observed: Vec<f64> = layout.direct.iter().map(|&p| row[p]).collect();
    for (&p, v) in layout.direct.iter().zip(clamp_direct(&observed, bounds)) {
        row[p] = v;
    }
    let objective = models.objective(&cohort.schema, 1, row);
    sweep_budget(&objective, cost_model, bounds, budgets, solver)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub name: String,
    pub partition: PartitionTag,
    pub value: f64,
    /// `false` when the value was estimated because the visit lacked it.
    pub measured: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitSummary {
    pub visit: usize,
    /// Risk predicted from the recorded (and estimated) features.
    pub risk: f64,
    pub features: Vec<FeatureValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub id: String,
    pub test_split: bool,
    pub visits: Vec<VisitSummary>,
}

pub fn patient_summary(models: &TrainedModels, cohort: &Cohort, id: &str) -> Result<PatientSummary> {
    let history = single_history(models, cohort, id)?;
    let p = &cohort.partition;
    let tag = |f: usize| {
        if p.direct.contains(&f) {
            PartitionTag::Direct
        } else if p.indirect.contains(&f) {
            PartitionTag::Indirect
        } else {
            PartitionTag::Unchangeable
        }
    };
    let mut visits = Vec::with_capacity(history.bases.len());
    for (k0, base) in history.bases.iter().enumerate() {
        let k = k0 + 1;
        let x = models.inputs(cohort, k, &[id.to_string()])?;
        let risk = models.classifiers[k0].predict_proba(x.row(0))?;
        let present = &cohort.visits[k0].present;
        visits.push(VisitSummary {
            visit: k,
            risk,
            features: (0..cohort.schema.len())
                .map(|f| FeatureValue {
                    name: cohort.schema.name(f).to_string(),
                    partition: tag(f),
                    value: base[f],
                    measured: present.binary_search(&f).is_ok(),
                })
                .collect(),
        });
    }
    Ok(PatientSummary {
        id: id.to_string(),
        test_split: models.split.is_test(id),
        visits,
    })
}
