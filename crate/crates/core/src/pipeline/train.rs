use std::collections::HashSet;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FeatureKind, FeatureSchema};
use crate::error::{Error, Result};
use crate::indirect::{fit_indirect, Bandwidth, IndirectEstimator};
use crate::inverse_opt::{CompositeObjective, SolverOptions};
use crate::missing_features::{fit_plan, EstimatorChoice, MissingFeaturePlan};
use crate::models::{fit_baseline, Estimator, EstimatorKind, Hyper, ProbabilisticClassifier, Target};
use crate::risk_features::{history_inputs, risk_column_name};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Model family of the per-visit risk classifiers.
    pub classifier: EstimatorKind,
    pub hyper: Hyper,
    pub estimators: EstimatorChoice,
    pub bandwidth: Bandwidth,
    /// Fraction of visit-1 ids held out for evaluation.
    pub test_fraction: f64,
    pub solver: SolverOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classifier: EstimatorKind::RbfSvm,
            hyper: Hyper::default(),
            estimators: EstimatorChoice::default(),
            bandwidth: Bandwidth::Auto,
            test_fraction: 0.3,
            solver: SolverOptions::default(),
        }
    }
}

/// Train/test partition of the visit-1 ids, applied at every visit.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Held-out ids in visit-1 order.
    pub test: Vec<String>,
    pub test_set: HashSet<String>,
}

impl Split {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_set.contains(id)
    }
}

pub fn split_ids(cohort: &Cohort, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let v1 = cohort.visit(1)?;
    let n_test = (v1.n() as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..v1.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen: Vec<usize> = order[..n_test].to_vec();
    chosen.sort_unstable();
    let test: Vec<String> = chosen.iter().map(|&i| v1.ids[i].clone()).collect();
    let test_set = test.iter().cloned().collect();
    Ok(Split { test, test_set })
}

/// The cohort restricted to ids accepted by `keep`, at every visit.
pub fn restrict_ids(cohort: &Cohort, keep: impl Fn(&str) -> bool) -> Cohort {
    let visits = cohort
        .visits
        .iter()
        .map(|v| {
            let rows: Vec<usize> = (0..v.n()).filter(|&i| keep(&v.ids[i])).collect();
            v.subset_rows(&rows)
        })
        .collect();
    Cohort {
        visits,
        ..cohort.clone()
    }
}

/// Column layout of the classifier input at one visit: every visit-1
/// feature in schema order, then one risk column per earlier visit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub visit: usize,
    pub n_base: usize,
    pub n_risk: usize,
    pub direct: Vec<usize>,
    pub indirect: Vec<usize>,
    /// Inputs of `H` besides the direct block: U features and risk columns.
    pub context: Vec<usize>,
    pub binary: Vec<bool>,
}

impl Layout {
    pub fn new(cohort: &Cohort, v: usize) -> Self {
        let n_base = cohort.schema.len();
        let n_risk = v - 1;
        let mut context = cohort.partition.unchangeable.clone();
        context.extend(n_base..n_base + n_risk);
        let mut binary: Vec<bool> = (0..n_base)
            .map(|f| cohort.schema.kind(f) == FeatureKind::Binary)
            .collect();
        binary.extend(std::iter::repeat_n(false, n_risk));
        Self {
            visit: v,
            n_base,
            n_risk,
            direct: cohort.partition.direct.clone(),
            indirect: cohort.partition.indirect.clone(),
            context,
            binary,
        }
    }

    pub fn width(&self) -> usize {
        self.n_base + self.n_risk
    }

    pub fn column_names(&self, schema: &FeatureSchema) -> Vec<String> {
        (0..self.n_base)
            .map(|f| schema.name(f).to_string())
            .chain((1..=self.n_risk).map(risk_column_name))
            .collect()
    }

    fn pick(&self, x: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
        x.select(Axis(1), cols)
    }
}

/// Everything fitted for one cohort: per-visit missing-feature plans, risk
/// classifiers and indirect-feature estimators.
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub config: ModelConfig,
    pub split: Split,
    pub layouts: Vec<Layout>,
    pub plans: Vec<MissingFeaturePlan>,
    pub classifiers: Vec<ProbabilisticClassifier>,
    pub indirect: Vec<Option<IndirectEstimator>>,
}

impl TrainedModels {
    pub fn n_visits(&self) -> usize {
        self.classifiers.len()
    }

    /// Classifier inputs at visit `v` for `ids`.
    pub fn inputs(&self, cohort: &Cohort, v: usize, ids: &[String]) -> Result<Array2<f64>> {
        let (base, risk) = history_inputs(cohort, &self.plans, &self.classifiers[..v - 1], v, ids)?;
        Ok(concatenate(Axis(1), &[base.view(), risk.view()]).expect("row counts agree"))
    }

    /// The risk objective at visit `v` for one assembled input row.
    pub fn objective<'a>(
        &'a self,
        schema: &FeatureSchema,
        v: usize,
        row: Array1<f64>,
    ) -> CompositeObjective<'a> {
        let layout = &self.layouts[v - 1];
        CompositeObjective {
            classifier: &self.classifiers[v - 1],
            indirect: self.indirect[v - 1].as_ref(),
            row,
            direct: layout.direct.clone(),
            direct_names: layout.direct.iter().map(|&f| schema.name(f).to_string()).collect(),
            direct_binary: layout.direct.iter().map(|&f| layout.binary[f]).collect(),
            indirect_positions: if self.indirect[v - 1].is_some() {
                layout.indirect.clone()
            } else {
                Vec::new()
            },
            context: layout.context.clone(),
        }
    }
}

fn fit_classifier(kind: EstimatorKind, x: &Array2<f64>, binary: &[bool], y: &[u8], hyper: &Hyper) -> Result<ProbabilisticClassifier> {
    match fit_baseline(kind, x.view(), binary, Target::Binary(y), hyper)? {
        Estimator::Classifier(c) => Ok(c),
        Estimator::Regressor(_) => unreachable!("binary targets always yield classifiers"),
    }
}

/// Fits every visit in order; visit `v` needs `f_1..f_{v-1}` for its risk
/// columns. Only training-split rows are used.
pub fn train_all(cohort: &Cohort, config: &ModelConfig, seed: u64) -> Result<TrainedModels> {
    let split = split_ids(cohort, config.test_fraction, seed)?;
    let train = restrict_ids(cohort, |id| !split.is_test(id));
    let mut models = TrainedModels {
        config: config.clone(),
        split,
        layouts: Vec::new(),
        plans: Vec::new(),
        classifiers: Vec::new(),
        indirect: Vec::new(),
    };
    for v in 1..=cohort.n_visits() {
        let layout = Layout::new(cohort, v);
        let plan = if v == 1 {
            MissingFeaturePlan::empty(1, &cohort.schema)
        } else {
            fit_plan(&train, v, &config.estimators, &config.hyper).map_err(|e| e.at_visit(v))?
        };
        models.plans.push(plan);
        let visit = train.visit(v)?;
        let x = models.inputs(&train, v, &visit.ids).map_err(|e| e.at_visit(v))?;
        let clf = fit_classifier(config.classifier, &x, &layout.binary, &visit.y_next, &config.hyper)
            .map_err(|e| e.at_visit(v))?;
        let h = if layout.indirect.is_empty() {
            None
        } else {
            let ctx = layout.pick(&x, &layout.context);
            let dir = layout.pick(&x, &layout.direct);
            let tgt = layout.pick(&x, &layout.indirect);
            let mask: Vec<bool> = layout
                .context
                .iter()
                .chain(&layout.direct)
                .map(|&c| layout.binary[c])
                .collect();
            Some(
                fit_indirect(ctx.view(), dir.view(), tgt.view(), &mask, config.bandwidth)
                    .map_err(|e| e.at_visit(v))?,
            )
        };
        models.classifiers.push(clf);
        models.indirect.push(h);
        models.layouts.push(layout);
    }
    Ok(models)
}
