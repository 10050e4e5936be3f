use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::{ExperimentReport, Metric, SeriesPoint};
use super::trajectory::{histories, simulate, sweep_patient, CarryMode, PathResult, Strategy};
use super::train::{restrict_ids, split_ids, ModelConfig, TrainedModels};
use crate::cohort::{Cohort, FeatureKind};
use crate::error::{Error, Result};
use crate::missing_features::{evaluate_estimators, ImputerKind};
use crate::models::{auc, fit_baseline, Estimator, EstimatorKind, Target};
use crate::risk_features::augment_with_carryforward;

/// Tolerance on the budget when auditing recommendations.
pub const BUDGET_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment1Config {
    pub visit: usize,
    /// Features to treat as missing; empty picks them at random.
    pub holdouts: Vec<String>,
    /// Continuous I features drawn when `holdouts` is empty. Every binary I
    /// feature measured at the visit is added as well.
    pub random_continuous: usize,
    pub kinds: Vec<ImputerKind>,
}

impl Default for Experiment1Config {
    fn default() -> Self {
        Self {
            visit: 2,
            holdouts: Vec::new(),
            random_continuous: 3,
            kinds: EstimatorKind::ALL.iter().map(|&k| ImputerKind::Model(k)).collect(),
        }
    }
}

/// Holdout features for the imputation experiment, in schema order.
pub fn choose_holdouts(cohort: &Cohort, cfg: &Experiment1Config, seed: u64) -> Result<Vec<String>> {
    if !cfg.holdouts.is_empty() {
        return Ok(cfg.holdouts.clone());
    }
    let visit = cohort.visit(cfg.visit)?;
    let measured_i: Vec<usize> = cohort
        .partition
        .indirect
        .iter()
        .copied()
        .filter(|&f| visit.column_of(f).is_some())
        .collect();
    let mut continuous: Vec<usize> = measured_i
        .iter()
        .copied()
        .filter(|&f| cohort.schema.kind(f) == FeatureKind::Continuous)
        .collect();
    continuous.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x4011_d0u64));
    continuous.truncate(cfg.random_continuous);
    continuous.extend(
        measured_i
            .iter()
            .filter(|&&f| cohort.schema.kind(f) == FeatureKind::Binary),
    );
    continuous.sort_unstable();
    Ok(continuous.iter().map(|&f| cohort.schema.name(f).to_string()).collect())
}

/// Missing-feature estimators against carry-forward on features hidden at
/// a later visit.
pub fn experiment1(
    cohort: &Cohort,
    cfg: &Experiment1Config,
    model: &ModelConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    let split = split_ids(cohort, model.test_fraction, seed)?;
    let holdouts = choose_holdouts(cohort, cfg, seed)?;
    let table = evaluate_estimators(
        cohort,
        cfg.visit,
        &holdouts,
        &cfg.kinds,
        &model.hyper,
        Some(&split.test_set),
    )?;
    let mut metrics = Vec::new();
    let mut wins = 0;
    let mut continuous = 0;
    for row in &table.rows {
        let carry = row.cells.iter().find(|c| c.kind == "carry").and_then(|c| c.value);
        let learned = row
            .cells
            .iter()
            .filter(|c| !matches!(c.kind.as_str(), "carry" | "oracle" | "constant"))
            .filter_map(|c| c.value);
        let best = match row.feature_kind {
            FeatureKind::Continuous => learned.fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.min(v)))),
            FeatureKind::Binary => learned.fold(None, |b: Option<f64>, v| Some(b.map_or(v, |b| b.max(v)))),
        };
        metrics.push(Metric::new(format!("best_learned:{}", row.feature), None, best));
        if row.feature_kind == FeatureKind::Continuous {
            continuous += 1;
            if let (Some(b), Some(c)) = (best, carry) {
                if b < c {
                    wins += 1;
                }
            }
        }
    }
    metrics.push(Metric::new("continuous_holdouts", None, Some(continuous as f64)));
    metrics.push(Metric::new("learned_beats_carry", None, Some(wins as f64)));
    Ok(ExperimentReport {
        experiment: 1,
        seed,
        config: json!({
            "experiment": cfg,
            "holdouts": holdouts,
            "model": model,
            "cohort": cohort_shape(cohort),
        }),
        scores: Some(table),
        metrics,
        series: Vec::new(),
        notes: Vec::new(),
    })
}

fn cohort_shape(cohort: &Cohort) -> serde_json::Value {
    json!({
        "features": cohort.schema.len(),
        "visits": cohort.visits.iter().map(|v| json!({
            "visit": v.visit,
            "instances": v.n(),
            "measured": v.present.len(),
            "events": v.y_next.iter().filter(|&&y| y == 1).count(),
        })).collect::<Vec<_>>(),
    })
}

fn try_auc(scores: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    match auc(scores, labels) {
        Ok(a) => Ok(Some(a)),
        Err(Error::SingleClass) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Held-out AUC of the risk-column classifiers against classifiers fed the
/// concatenated history of raw feature vectors.
pub fn experiment2(cohort: &Cohort, models: &TrainedModels, seed: u64) -> Result<ExperimentReport> {
    if cohort.n_visits() < 2 {
        return Err(Error::Config("experiment 2 needs at least two visits".into()));
    }
    let cfg = &models.config;
    let mut metrics = Vec::new();
    let mut series = Vec::new();
    let mut notes = Vec::new();
    for v in 2..=cohort.n_visits() {
        let visit = cohort.visit(v)?;
        let test_rows: Vec<usize> = (0..visit.n()).filter(|&i| models.split.is_test(&visit.ids[i])).collect();
        let test = visit.subset_rows(&test_rows);
        let x_risk = models.inputs(cohort, v, &test.ids)?;
        let p_risk = models.classifiers[v - 1].predict_proba_rows(x_risk.view())?;

        let wide = augment_with_carryforward(cohort, v)?;
        let (train_rows, test_rows): (Vec<usize>, Vec<usize>) =
            (0..wide.ids.len()).partition(|&i| !models.split.is_test(&wide.ids[i]));
        let x_train = wide.x.select(ndarray::Axis(0), &train_rows);
        let y_train: Vec<u8> = train_rows.iter().map(|&i| wide.y_next[i]).collect();
        let clf = match fit_baseline(cfg.classifier, x_train.view(), &wide.binary, Target::Binary(&y_train), &cfg.hyper)
            .map_err(|e| e.at_visit(v))?
        {
            Estimator::Classifier(c) => c,
            Estimator::Regressor(_) => unreachable!("binary targets always yield classifiers"),
        };
        let x_test = wide.x.select(ndarray::Axis(0), &test_rows);
        let p_carry = clf.predict_proba_rows(x_test.view())?;

        let a_risk = try_auc(&p_risk, &test.y_next)?;
        let a_carry = try_auc(&p_carry, &test.y_next)?;
        if a_risk.is_none() {
            notes.push(format!("visit {v}: held-out outcomes are single-class; AUC undefined"));
        }
        let n = test.n();
        let events = test.y_next.iter().filter(|&&y| y == 1).count();
        for (arm, value) in [("risk_features", a_risk), ("carry_forward", a_carry)] {
            if let Some(value) = value {
                series.push(SeriesPoint {
                    visit: v,
                    arm: arm.into(),
                    value,
                    n,
                });
            }
        }
        metrics.push(Metric::new("auc_risk_features", Some(v), a_risk));
        metrics.push(Metric::new("auc_carry_forward", Some(v), a_carry));
        metrics.push(Metric::new(
            "auc_gap",
            Some(v),
            a_risk.zip(a_carry).map(|(a, b)| a - b),
        ));
        metrics.push(Metric::new("test_instances", Some(v), Some(n as f64)));
        metrics.push(Metric::new("test_events", Some(v), Some(events as f64)));
        metrics.push(Metric::new("carry_forward_width", Some(v), Some(wide.columns.len() as f64)));
    }
    Ok(ExperimentReport {
        experiment: 2,
        seed,
        config: json!({ "model": cfg, "cohort": cohort_shape(cohort) }),
        scores: None,
        metrics,
        series,
        notes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment3Config {
    pub budget: f64,
    pub carry: CarryMode,
    /// Visit of the second optimization in strategy (b).
    pub reoptimize_visit: usize,
}

impl Default for Experiment3Config {
    fn default() -> Self {
        Self {
            budget: 2.0,
            carry: CarryMode::Delta,
            reoptimize_visit: 2,
        }
    }
}

pub const ARM_BASELINE: &str = "baseline";
pub const ARM_A: &str = "strategy_a";
pub const ARM_B: &str = "strategy_b";

fn audit(path: &PathResult, budget: f64, cohort: &Cohort) -> usize {
    path.recommendations
        .iter()
        .filter(|(_, r)| !(r.cost_spent <= budget + BUDGET_SLACK && cohort.bounds.contains(&r.x_direct)))
        .count()
}

/// Mean held-out risk per visit with no action, acting at visit 1 only
/// (a), and acting again at a later visit (b).
pub fn experiment3(
    cohort: &Cohort,
    models: &TrainedModels,
    cfg: &Experiment3Config,
    seed: u64,
) -> Result<ExperimentReport> {
    if cohort.n_visits() < 2 || cfg.reoptimize_visit < 2 || cfg.reoptimize_visit > cohort.n_visits() {
        return Err(Error::Config(format!(
            "experiment 3 needs a re-optimization visit in 2..={}",
            cohort.n_visits()
        )));
    }
    if !(cfg.budget >= 0.0) {
        return Err(Error::Config(format!("budget must be non-negative, got {}", cfg.budget)));
    }
    let patients = histories(models, cohort, &models.split.test)?;
    let strategy = |optimize_at: Vec<usize>| Strategy {
        optimize_at,
        budget: cfg.budget,
        cost_model: &cohort.cost_model,
        bounds: &cohort.bounds,
        carry: cfg.carry,
        solver: &models.config.solver,
    };
    let arms = [
        (ARM_BASELINE, strategy(Vec::new())),
        (ARM_A, strategy(vec![1])),
        (ARM_B, strategy(vec![1, cfg.reoptimize_visit])),
    ];
    let paths: Vec<Vec<PathResult>> = patients
        .par_iter()
        .map(|h| {
            arms.iter()
                .map(|(_, s)| simulate(models, &cohort.schema, h, s))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let n_visits = cohort.n_visits();
    let mut series = Vec::new();
    let mut metrics = Vec::new();
    let mut means = vec![[0.0; 3]; n_visits];
    for (arm_idx, (arm, _)) in arms.iter().enumerate() {
        for v in 1..=n_visits {
            let values: Vec<f64> = paths
                .iter()
                .filter_map(|p| p[arm_idx].probabilities.get(v - 1).copied())
                .collect();
            if values.is_empty() {
                continue;
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            means[v - 1][arm_idx] = mean;
            series.push(SeriesPoint {
                visit: v,
                arm: (*arm).into(),
                value: mean,
                n: values.len(),
            });
        }
    }
    for v in 1..=n_visits {
        let n = paths.iter().filter(|p| p[0].probabilities.len() >= v).count();
        if n == 0 {
            continue;
        }
        metrics.push(Metric::new("population", Some(v), Some(n as f64)));
        metrics.push(Metric::new("gap_a_minus_baseline", Some(v), Some(means[v - 1][1] - means[v - 1][0])));
        metrics.push(Metric::new("gap_b_minus_a", Some(v), Some(means[v - 1][2] - means[v - 1][1])));
    }
    let violations: usize = paths.iter().map(|p| audit(&p[1], cfg.budget, cohort) + audit(&p[2], cfg.budget, cohort)).sum();
    let optimizations: usize = paths.iter().map(|p| p[1].recommendations.len() + p[2].recommendations.len()).sum();
    let mean_spent = {
        let spent: Vec<f64> = paths
            .iter()
            .flat_map(|p| p[1].recommendations.iter().map(|(_, r)| r.cost_spent))
            .collect();
        (!spent.is_empty()).then(|| spent.iter().sum::<f64>() / spent.len() as f64)
    };
    metrics.push(Metric::new("optimizations", None, Some(optimizations as f64)));
    metrics.push(Metric::new("feasibility_violations", None, Some(violations as f64)));
    metrics.push(Metric::new("mean_cost_spent_visit1", None, mean_spent));
    Ok(ExperimentReport {
        experiment: 3,
        seed,
        config: json!({ "experiment": cfg, "model": models.config, "cohort": cohort_shape(cohort) }),
        scores: None,
        metrics,
        series,
        notes: Vec::new(),
    })
}

/// Imputation experiment with oracle and constant columns added, used for
/// sanity checks of the score table.
pub fn experiment1_with_references(
    cohort: &Cohort,
    cfg: &Experiment1Config,
    model: &ModelConfig,
    seed: u64,
) -> Result<ExperimentReport> {
    let mut cfg = cfg.clone();
    for extra in [ImputerKind::Oracle, ImputerKind::Constant] {
        if !cfg.kinds.contains(&extra) {
            cfg.kinds.push(extra);
        }
    }
    experiment1(cohort, &cfg, model, seed)
}

/// Training-split view of a cohort, exposed for hygiene checks.
pub fn training_cohort(cohort: &Cohort, models: &TrainedModels) -> Cohort {
    restrict_ids(cohort, |id| !models.split.is_test(id))
}

/// Adds the mean visit-1 risk over held-out patients at each of `budgets`,
/// warm-started per patient. The sweep is checked to be non-increasing.
pub fn attach_sweep(
    report: &mut ExperimentReport,
    cohort: &Cohort,
    models: &TrainedModels,
    budgets: &[f64],
) -> Result<()> {
    let finals: Vec<Vec<f64>> = models
        .split
        .test
        .par_iter()
        .map(|id| {
            let recs = sweep_patient(
                models,
                cohort,
                id,
                budgets,
                &cohort.cost_model,
                &cohort.bounds,
                &models.config.solver,
            )?;
            Ok(recs.iter().map(|r| r.after_probability).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let increases = finals
        .iter()
        .filter(|f| f.windows(2).any(|w| w[1] > w[0]))
        .count();
    for (b, &budget) in budgets.iter().enumerate() {
        let mean = finals.iter().map(|f| f[b]).sum::<f64>() / finals.len().max(1) as f64;
        report
            .metrics
            .push(Metric::new(format!("sweep_mean_risk:{budget}"), Some(1), Some(mean)));
    }
    report
        .metrics
        .push(Metric::new("sweep_non_monotone_patients", None, Some(increases as f64)));
    Ok(())
}
