//! Historical-risk augmentation: each later visit gains one column per
//! earlier visit holding that visit's predicted risk for the same instance.
//! Also the concatenated-history baseline.

use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::cohort::{Cohort, FeatureSchema, VisitDataset, ID_COLUMN, OUTCOME_COLUMN};
use crate::error::{Error, Result};
use crate::missing_features::{enrich, MissingFeaturePlan};
use crate::models::ProbabilisticClassifier;

pub fn risk_column_name(k: usize) -> String {
    format!("risk_from_v{k}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskAugmentedDataset {
    pub base: VisitDataset,
    /// `n × (v - 1)`; column `k - 1` holds the visit-`k` classifier's risk.
    pub risk: Array2<f64>,
    /// Identifier of the classifier behind each risk column.
    pub sources: Vec<String>,
}

impl RiskAugmentedDataset {
    /// Base features followed by the risk columns.
    pub fn combined(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.base.x.view(), self.risk.view()]).expect("row counts agree")
    }

    /// Writes the visit-file layout with the risk columns appended.
    pub fn write_csv(&self, path: &Path, schema: &FeatureSchema) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec![ID_COLUMN.to_string()];
        header.extend(self.base.present.iter().map(|&f| schema.name(f).to_string()));
        header.extend((1..=self.risk.ncols()).map(risk_column_name));
        header.push(OUTCOME_COLUMN.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.base.n() {
            let mut rec = vec![self.base.ids[i].clone()];
            rec.extend(self.base.x.row(i).iter().map(f64::to_string));
            rec.extend(self.risk.row(i).iter().map(f64::to_string));
            rec.push(self.base.y_next[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Predicted probability per row of `x`.
pub fn estimate_risk(clf: &ProbabilisticClassifier, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    if x.ncols() != clf.n_features() {
        return Err(Error::Dimension {
            expected: clf.n_features(),
            got: x.ncols(),
        });
    }
    clf.predict_proba_rows(x)
}

pub fn risk_source_tag(visit: usize, clf: &ProbabilisticClassifier) -> String {
    format!("v{visit}:{}", clf.kind_name())
}

/// Classifier inputs at visit `v` for `ids`: the visit-`k` enriched rows of
/// the same instances, with risk columns built recursively from `f_1..f_{k-1}`.
///
/// `plans[k - 1]` enriches visit `k`; `classifiers[k - 1]` is `f_k`. Returns
/// the enriched visit-`v` rows and the `n × (v - 1)` risk matrix.
pub fn history_inputs(
    cohort: &Cohort,
    plans: &[MissingFeaturePlan],
    classifiers: &[ProbabilisticClassifier],
    v: usize,
    ids: &[String],
) -> Result<(Array2<f64>, Array2<f64>)> {
    cohort.check_visit(v)?;
    if plans.len() < v || classifiers.len() < v - 1 {
        return Err(Error::InvalidParameter(format!(
            "visit {v} needs {v} plans and {} classifiers (got {}, {})",
            v - 1,
            plans.len(),
            classifiers.len()
        )));
    }
    let n = ids.len();
    let mut risk = Array2::<f64>::zeros((n, v - 1));
    let mut enriched_v = None;
    for k in 1..=v {
        let visit = cohort.visit(k)?;
        let index = visit.id_index();
        let rows = ids
            .iter()
            .map(|id| {
                index.get(id.as_str()).copied().ok_or_else(|| Error::ContinuityViolated {
                    visit: v,
                    prev: k,
                    id: id.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let enriched = enrich(&plans[k - 1], &visit.subset_rows(&rows))?;
        if k == v {
            enriched_v = Some(enriched);
            break;
        }
        let input = concatenate(Axis(1), &[enriched.view(), risk.slice(ndarray::s![.., ..k - 1])])
            .expect("row counts agree");
        let r = estimate_risk(&classifiers[k - 1], input.view())?;
        risk.column_mut(k - 1).assign(&ndarray::Array1::from_vec(r));
    }
    Ok((enriched_v.expect("loop reaches v"), risk))
}

/// Visit `v` with one risk column per earlier visit, computed from each
/// instance's own earlier rows.
pub fn augment_with_risk(
    cohort: &Cohort,
    plans: &[MissingFeaturePlan],
    classifiers: &[ProbabilisticClassifier],
    v: usize,
) -> Result<RiskAugmentedDataset> {
    if v < 2 {
        return Err(Error::VisitOutOfRange { visit: v, max: cohort.n_visits() });
    }
    let base = cohort.visit(v)?.clone();
    let (_, risk) = history_inputs(cohort, plans, classifiers, v, &base.ids)?;
    let sources = (1..v).map(|k| risk_source_tag(k, &classifiers[k - 1])).collect();
    Ok(RiskAugmentedDataset {
        base,
        risk,
        sources,
    })
}

/// Visit-`v` rows preceded by the same instances' full rows from visits
/// `1..v-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatenatedDataset {
    pub visit: usize,
    pub ids: Vec<String>,
    pub x: Array2<f64>,
    pub y_next: Vec<u8>,
    /// `v{k}:{feature}` per column.
    pub columns: Vec<String>,
    pub binary: Vec<bool>,
}

pub fn augment_with_carryforward(cohort: &Cohort, v: usize) -> Result<ConcatenatedDataset> {
    if v < 2 {
        return Err(Error::VisitOutOfRange { visit: v, max: cohort.n_visits() });
    }
    let target = cohort.visit(v)?;
    let mut blocks = Vec::with_capacity(v);
    let mut columns = Vec::new();
    let mut binary = Vec::new();
    for k in 1..=v {
        let visit = cohort.visit(k)?;
        let index = visit.id_index();
        let rows = target
            .ids
            .iter()
            .map(|id| {
                index.get(id.as_str()).copied().ok_or_else(|| Error::ContinuityViolated {
                    visit: v,
                    prev: k,
                    id: id.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        blocks.push(visit.x.select(Axis(0), &rows));
        for &f in &visit.present {
            columns.push(format!("v{k}:{}", cohort.schema.name(f)));
            binary.push(cohort.schema.kind(f) == crate::cohort::FeatureKind::Binary);
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ConcatenatedDataset {
        visit: v,
        ids: target.ids.clone(),
        x: concatenate(Axis(1), &views).expect("row counts agree"),
        y_next: target.y_next.clone(),
        columns,
        binary,
    })
}
