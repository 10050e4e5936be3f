use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{check_inputs, check_two_classes, ClassifierModel, ProbabilisticClassifier, Regressor, RegressorModel, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::linalg::sq_dist;

/// Mean target of the `k` nearest standardized training rows; distance ties
/// go to the earlier row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub points: Array2<f64>,
    pub targets: Array1<f64>,
}

impl KnnModel {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .points
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (sq_dist(r, x), i))
            .collect();
        let k = self.k.min(d.len());
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d[..k].iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / k as f64
    }
}

fn build(x: ArrayView2<f64>, binary: &[bool], targets: Vec<f64>, k: usize) -> Result<(Standardizer, KnnModel)> {
    if k == 0 {
        return Err(Error::InvalidParameter("kNN requires k >= 1".into()));
    }
    let standardizer = Standardizer::fit(x, binary);
    let points = standardizer.transform_rows(x);
    Ok((
        standardizer,
        KnnModel {
            k,
            points,
            targets: Array1::from_vec(targets),
        },
    ))
}

pub(crate) fn fit_knn_classifier(
    x: ArrayView2<f64>,
    binary: &[bool],
    y: &[u8],
    k: usize,
) -> Result<ProbabilisticClassifier> {
    check_inputs(x, y.len())?;
    check_two_classes(y)?;
    let (standardizer, model) = build(x, binary, y.iter().map(|&v| v as f64).collect(), k)?;
    Ok(ProbabilisticClassifier {
        format_version: FORMAT_VERSION,
        standardizer,
        model: ClassifierModel::Knn(model),
        platt: None,
    })
}

pub(crate) fn fit_knn_regressor(
    x: ArrayView2<f64>,
    binary: &[bool],
    t: &[f64],
    k: usize,
) -> Result<Regressor> {
    check_inputs(x, t.len())?;
    let (standardizer, model) = build(x, binary, t.to_vec(), k)?;
    Ok(Regressor {
        format_version: FORMAT_VERSION,
        standardizer,
        model: RegressorModel::Knn(model),
    })
}
