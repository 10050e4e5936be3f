//! Estimating visit-1 features that are no longer measured at a later
//! visit, the carry-forward baseline, and the score table comparing them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::cohort::{missing_feature_set, Cohort, FeatureKind, FeatureSchema, VisitDataset};
use crate::error::{Error, Result};
use crate::models::{auc, fit_baseline, mse, Estimator, EstimatorKind, Hyper, Target};

/// Which model family estimates each missing feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorChoice {
    pub continuous: EstimatorKind,
    pub binary: EstimatorKind,
    /// Per-feature overrides by name.
    pub overrides: BTreeMap<String, EstimatorKind>,
}

impl Default for EstimatorChoice {
    fn default() -> Self {
        Self {
            continuous: EstimatorKind::Ridge,
            binary: EstimatorKind::Logistic,
            overrides: BTreeMap::new(),
        }
    }
}

impl EstimatorChoice {
    pub fn kind_for(&self, name: &str, kind: FeatureKind) -> EstimatorKind {
        if let Some(k) = self.overrides.get(name) {
            return *k;
        }
        match kind {
            FeatureKind::Continuous => self.continuous,
            FeatureKind::Binary => self.binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEstimator {
    pub feature: usize,
    pub name: String,
    pub kind: EstimatorKind,
    pub binary: bool,
    pub estimator: Estimator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissingFeaturePlan {
    pub visit: usize,
    /// Schema indices each estimator reads, ascending.
    pub consumed: Vec<usize>,
    /// One estimator per missing feature, ascending by schema index.
    pub estimators: Vec<FeatureEstimator>,
    pub n_features: usize,
}

impl MissingFeaturePlan {
    pub fn empty(visit: usize, schema: &FeatureSchema) -> Self {
        Self {
            visit,
            consumed: (0..schema.len()).collect(),
            estimators: Vec::new(),
            n_features: schema.len(),
        }
    }

    pub fn missing(&self) -> Vec<usize> {
        self.estimators.iter().map(|e| e.feature).collect()
    }
}

fn binary_mask(schema: &FeatureSchema, features: &[usize]) -> Vec<bool> {
    features
        .iter()
        .map(|&f| schema.kind(f) == FeatureKind::Binary)
        .collect()
}

/// Visit-1 columns `features` of `v1`, in the given order.
fn select_columns(v1: &VisitDataset, features: &[usize]) -> Result<Array2<f64>> {
    let cols = features
        .iter()
        .map(|&f| {
            v1.column_of(f)
                .ok_or_else(|| Error::Schema(format!("feature {f} absent at visit {}", v1.visit)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(v1.x.select(ndarray::Axis(1), &cols))
}

/// Trains one estimator per feature in `targets` on visit-1 rows restricted
/// to `inputs`, predicting the visit-1 value of the target.
fn fit_estimators(
    cohort: &Cohort,
    inputs: &[usize],
    targets: &[usize],
    choice: &dyn Fn(usize) -> EstimatorKind,
    hyper: &Hyper,
) -> Result<Vec<FeatureEstimator>> {
    let v1 = cohort.visit(1)?;
    let x = select_columns(v1, inputs)?;
    let mask = binary_mask(&cohort.schema, inputs);
    targets
        .iter()
        .map(|&m| {
            let name = cohort.schema.name(m).to_string();
            let col = v1.x.column(v1.column_of(m).ok_or_else(|| {
                Error::Schema(format!("feature {name:?} absent at visit 1"))
            })?);
            let binary = cohort.schema.kind(m) == FeatureKind::Binary;
            let kind = choice(m);
            let estimator = if binary {
                let y: Vec<u8> = col.iter().map(|&v| v as u8).collect();
                fit_baseline(kind, x.view(), &mask, Target::Binary(&y), hyper)
            } else {
                let t = col.to_vec();
                fit_baseline(kind, x.view(), &mask, Target::Continuous(&t), hyper)
            }
            .map_err(|e| e.for_feature(&name))?;
            Ok(FeatureEstimator {
                feature: m,
                name,
                kind,
                binary,
                estimator,
            })
        })
        .collect()
}

/// One estimator per feature missing at visit `v`, trained on visit-1 rows
/// restricted to the features measured at `v`.
pub fn fit_plan(
    cohort: &Cohort,
    v: usize,
    choice: &EstimatorChoice,
    hyper: &Hyper,
) -> Result<MissingFeaturePlan> {
    let visit = cohort.visit(v)?;
    if let Some(&f) = visit.present.iter().find(|&&f| f >= cohort.schema.len()) {
        return Err(Error::Schema(format!(
            "visit {v} measures feature {f} outside the visit-1 feature set"
        )));
    }
    let missing = missing_feature_set(cohort, v)?;
    let schema = &cohort.schema;
    let pick = |m: usize| choice.kind_for(schema.name(m), schema.kind(m));
    let estimators = fit_estimators(cohort, &visit.present, &missing, &pick, hyper)?;
    Ok(MissingFeaturePlan {
        visit: v,
        consumed: visit.present.clone(),
        estimators,
        n_features: schema.len(),
    })
}

/// Raw estimator outputs per missing feature: probabilities for binary
/// features, values for continuous ones.
pub fn estimate_missing(plan: &MissingFeaturePlan, dataset: &VisitDataset) -> Result<Vec<Vec<f64>>> {
    let cols = plan
        .consumed
        .iter()
        .map(|&f| {
            dataset.column_of(f).ok_or_else(|| {
                Error::Schema(format!(
                    "visit {}: estimator input feature {f} not measured",
                    dataset.visit
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x = dataset.x.select(ndarray::Axis(1), &cols);
    plan.estimators
        .iter()
        .map(|e| {
            x.rows()
                .into_iter()
                .map(|r| e.estimator.score(r))
                .collect::<Result<Vec<f64>>>()
                .map_err(|err| err.for_feature(&e.name))
        })
        .collect()
}

/// Full visit-1 layout for every row: measured values copied, missing ones
/// estimated (binary estimates thresholded at 0.5).
pub fn enrich(plan: &MissingFeaturePlan, dataset: &VisitDataset) -> Result<Array2<f64>> {
    let estimates = estimate_missing(plan, dataset)?;
    let mut out = Array2::<f64>::zeros((dataset.n(), plan.n_features));
    for (c, &f) in dataset.present.iter().enumerate() {
        if f >= plan.n_features {
            return Err(Error::Schema(format!("feature index {f} outside the schema")));
        }
        out.column_mut(f).assign(&dataset.x.column(c));
    }
    for (e, values) in plan.estimators.iter().zip(estimates) {
        let col = values
            .into_iter()
            .map(|v| if e.binary { f64::from(u8::from(v >= 0.5)) } else { v });
        out.column_mut(e.feature).assign(&Array1::from_iter(col));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("enriched features"));
    }
    Ok(out)
}

/// Single-row variant of [`enrich`].
pub fn enrich_row(plan: &MissingFeaturePlan, present: &[usize], row: ArrayView1<f64>) -> Result<Array1<f64>> {
    let ds = VisitDataset {
        visit: plan.visit,
        ids: vec![String::new()],
        x: row.to_owned().insert_axis(ndarray::Axis(0)),
        y_next: vec![0],
        present: present.to_vec(),
    };
    Ok(enrich(plan, &ds)?.row(0).to_owned())
}

/// Visit-`v` values of the features missing at `v`, filled with each
/// instance's own visit-1 values. Columns ascend by schema index.
pub fn carry_forward(cohort: &Cohort, v: usize) -> Result<Array2<f64>> {
    let missing = missing_feature_set(cohort, v)?;
    carry_columns(cohort, v, &missing)
}

fn carry_columns(cohort: &Cohort, v: usize, features: &[usize]) -> Result<Array2<f64>> {
    let visit = cohort.visit(v)?;
    let v1 = cohort.visit(1)?;
    let index = v1.id_index();
    let mut out = Array2::<f64>::zeros((visit.n(), features.len()));
    for (i, id) in visit.ids.iter().enumerate() {
        let r = *index.get(id.as_str()).ok_or_else(|| Error::ContinuityViolated {
            visit: v,
            prev: 1,
            id: id.clone(),
        })?;
        for (c, &f) in features.iter().enumerate() {
            let col = v1.column_of(f).ok_or_else(|| {
                Error::Schema(format!("feature {f} absent at visit 1"))
            })?;
            out[[i, c]] = v1.x[[r, col]];
        }
    }
    Ok(out)
}

/// Full visit-1 layout at visit `v` with missing features carried forward.
pub fn carry_forward_enrich(cohort: &Cohort, v: usize) -> Result<Array2<f64>> {
    let visit = cohort.visit(v)?;
    let missing = missing_feature_set(cohort, v)?;
    let carried = carry_columns(cohort, v, &missing)?;
    let mut out = Array2::<f64>::zeros((visit.n(), cohort.schema.len()));
    for (c, &f) in visit.present.iter().enumerate() {
        out.column_mut(f).assign(&visit.x.column(c));
    }
    for (c, &f) in missing.iter().enumerate() {
        out.column_mut(f).assign(&carried.column(c));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Score table

/// A column of the score table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ImputerKind {
    /// Each instance's own visit-1 value.
    Carry,
    Model(EstimatorKind),
    /// Returns the observed truth; a sanity upper bound.
    Oracle,
    /// Visit-1 mean (continuous) or base rate (binary).
    Constant,
}

impl TryFrom<String> for ImputerKind {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "carry" => Ok(ImputerKind::Carry),
            "oracle" => Ok(ImputerKind::Oracle),
            "constant" => Ok(ImputerKind::Constant),
            _ => EstimatorKind::ALL
                .iter()
                .find(|k| k.name() == s)
                .map(|&k| ImputerKind::Model(k))
                .ok_or_else(|| format!("unknown estimator {s:?}")),
        }
    }
}

impl From<ImputerKind> for String {
    fn from(k: ImputerKind) -> String {
        k.to_string()
    }
}

impl fmt::Display for ImputerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImputerKind::Carry => f.write_str("carry"),
            ImputerKind::Model(k) => f.write_str(k.name()),
            ImputerKind::Oracle => f.write_str("oracle"),
            ImputerKind::Constant => f.write_str("constant"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub kind: String,
    /// `None` where the estimator does not apply to the feature type.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub feature: String,
    pub feature_kind: FeatureKind,
    pub metric_name: String,
    pub cells: Vec<ScoreCell>,
    pub winner: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub visit: usize,
    pub columns: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn cell(&self, feature: &str, kind: &str) -> Option<f64> {
        let row = self.rows.iter().find(|r| r.feature == feature)?;
        row.cells.iter().find(|c| c.kind == kind)?.value
    }

    /// `(feature, kind, metric_name, value)` rows; inapplicable cells are
    /// written as `NA`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Csv {
            path: "<score table>".into(),
            message: e.to_string(),
        };
        w.write_record(["feature", "kind", "metric_name", "value"]).map_err(csv_err)?;
        for row in &self.rows {
            for cell in &row.cells {
                let value = cell.value.map_or_else(|| "NA".to_string(), |v| v.to_string());
                w.write_record([row.feature.as_str(), &cell.kind, &row.metric_name, &value])
                    .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

fn applies(kind: ImputerKind, binary: bool) -> bool {
    match kind {
        ImputerKind::Model(k) if binary => k.supports_binary(),
        ImputerKind::Model(k) => k.supports_continuous(),
        _ => true,
    }
}

/// Treats each of `holdout_features` as missing at visit `v`, estimates it
/// with every kind in `kinds` plus carry-forward, and scores against the
/// observed values (AUC for binary, MSE for continuous).
///
/// With `test_ids`, estimators train on visit-1 rows outside it and are
/// scored on visit-`v` rows inside it; otherwise all rows serve both roles.
pub fn evaluate_estimators(
    cohort: &Cohort,
    v: usize,
    holdout_features: &[String],
    kinds: &[ImputerKind],
    hyper: &Hyper,
    test_ids: Option<&HashSet<String>>,
) -> Result<ScoreTable> {
    let visit = cohort.visit(v)?;
    let schema = &cohort.schema;
    let holdouts = holdout_features
        .iter()
        .map(|name| {
            let f = schema
                .index_of(name)
                .ok_or_else(|| Error::Schema(format!("unknown holdout feature {name:?}")))?;
            if visit.column_of(f).is_none() {
                return Err(Error::Schema(format!(
                    "holdout feature {name:?} is not measured at visit {v}"
                )));
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut columns = vec![ImputerKind::Carry];
    for &k in kinds {
        if !columns.contains(&k) {
            columns.push(k);
        }
    }

    let train_cohort;
    let fit_on = match test_ids {
        Some(test) => {
            train_cohort = restrict_visit1(cohort, |id| !test.contains(id))?;
            &train_cohort
        }
        None => cohort,
    };
    let eval_rows: Vec<usize> = match test_ids {
        Some(test) => (0..visit.n()).filter(|&i| test.contains(&visit.ids[i])).collect(),
        None => (0..visit.n()).collect(),
    };
    let eval = visit.subset_rows(&eval_rows);
    let inputs: Vec<usize> = visit
        .present
        .iter()
        .copied()
        .filter(|f| !holdouts.contains(f))
        .collect();
    let input_cols: Vec<usize> = inputs.iter().map(|&f| eval.column_of(f).unwrap()).collect();
    let x_eval = eval.x.select(ndarray::Axis(1), &input_cols);
    let carried = {
        let sub = Cohort {
            visits: vec![cohort.visits[0].clone(), eval.clone()],
            ..cohort.clone()
        };
        carry_columns_unchecked(&sub, &holdouts)?
    };
    let v1_train = fit_on.visit(1)?;

    let mut rows = Vec::with_capacity(holdouts.len());
    for (h, &m) in holdouts.iter().enumerate() {
        let name = schema.name(m).to_string();
        let binary = schema.kind(m) == FeatureKind::Binary;
        let truth: Vec<f64> = eval.x.column(eval.column_of(m).unwrap()).to_vec();
        let labels: Vec<u8> = truth.iter().map(|&t| t as u8).collect();
        let score = |pred: &[f64]| -> Result<f64> {
            if binary {
                auc(pred, &labels)
            } else {
                mse(pred, &truth)
            }
        };
        let mut cells = Vec::with_capacity(columns.len());
        for &kind in &columns {
            if !applies(kind, binary) {
                cells.push(ScoreCell {
                    kind: kind.to_string(),
                    value: None,
                });
                continue;
            }
            let pred: Vec<f64> = match kind {
                ImputerKind::Carry => carried.column(h).to_vec(),
                ImputerKind::Oracle => truth.clone(),
                ImputerKind::Constant => {
                    let col = v1_train.x.column(v1_train.column_of(m).unwrap());
                    vec![col.mean().unwrap_or(0.0); truth.len()]
                }
                ImputerKind::Model(k) => {
                    let est = fit_estimators(fit_on, &inputs, &[m], &|_| k, hyper)?.remove(0);
                    x_eval
                        .rows()
                        .into_iter()
                        .map(|r| est.estimator.score(r))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| e.for_feature(&name))?
                }
            };
            cells.push(ScoreCell {
                kind: kind.to_string(),
                value: Some(score(&pred).map_err(|e| e.for_feature(&name))?),
            });
        }
        let winner = pick_winner(&cells, binary);
        rows.push(ScoreRow {
            feature: name,
            feature_kind: schema.kind(m),
            metric_name: if binary { "auc" } else { "mse" }.into(),
            cells,
            winner,
        });
    }
    Ok(ScoreTable {
        visit: v,
        columns: columns.iter().map(ToString::to_string).collect(),
        rows,
    })
}

/// Best cell; ties go to the earlier column.
fn pick_winner(cells: &[ScoreCell], higher_is_better: bool) -> String {
    let mut best: Option<(&str, f64)> = None;
    for c in cells {
        let Some(v) = c.value else { continue };
        let better = match best {
            None => true,
            Some((_, b)) if higher_is_better => v > b,
            Some((_, b)) => v < b,
        };
        if better {
            best = Some((&c.kind, v));
        }
    }
    best.map(|(k, _)| k.to_string()).unwrap_or_default()
}

/// Copies of the visit-2 rows' visit-1 values for `features`, where
/// `cohort.visits = [visit 1, evaluation rows]`.
fn carry_columns_unchecked(cohort: &Cohort, features: &[usize]) -> Result<Array2<f64>> {
    let v1 = &cohort.visits[0];
    let target = &cohort.visits[1];
    let index = v1.id_index();
    let mut out = Array2::<f64>::zeros((target.n(), features.len()));
    for (i, id) in target.ids.iter().enumerate() {
        let r = *index.get(id.as_str()).ok_or_else(|| Error::ContinuityViolated {
            visit: target.visit,
            prev: 1,
            id: id.clone(),
        })?;
        for (c, &f) in features.iter().enumerate() {
            out[[i, c]] = v1.x[[r, v1.column_of(f).unwrap()]];
        }
    }
    Ok(out)
}

/// The cohort with its visit-1 rows filtered by `keep`; later visits are
/// untouched, so continuity is not rechecked.
fn restrict_visit1(cohort: &Cohort, keep: impl Fn(&str) -> bool) -> Result<Cohort> {
    let v1 = cohort.visit(1)?;
    let rows: Vec<usize> = (0..v1.n()).filter(|&i| keep(&v1.ids[i])).collect();
    let mut visits = cohort.visits.clone();
    visits[0] = v1.subset_rows(&rows);
    Ok(Cohort {
        visits,
        ..cohort.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn winner_prefers_earlier_column_on_ties() {
        let cells = vec![
            ScoreCell { kind: "carry".into(), value: Some(0.0) },
            ScoreCell { kind: "ridge".into(), value: Some(0.0) },
            ScoreCell { kind: "logistic".into(), value: None },
        ];
        assert_eq!(pick_winner(&cells, false), "carry");
        assert_eq!(pick_winner(&cells, true), "carry");
    }
}
