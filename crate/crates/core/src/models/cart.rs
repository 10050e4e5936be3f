//! Axis-aligned regression/classification trees. Splits are chosen on raw
//! values: a per-feature affine standardization leaves the split structure
//! unchanged, so the tree skips it.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{check_inputs, check_two_classes, ClassifierModel, ProbabilisticClassifier, Regressor, RegressorModel, FORMAT_VERSION};
use crate::error::{Error, Result};

const GAIN_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CartTask {
    /// Gini impurity, leaves hold the positive fraction.
    Classification,
    /// Squared error, leaves hold the mean.
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartModel {
    pub task: CartTask,
    pub nodes: Vec<Node>,
}

impl CartModel {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Split thresholds in depth-first order.
    pub fn thresholds(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Split {
                    feature, threshold, ..
                } => Some((feature, threshold)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn fit(x: ArrayView2<f64>, targets: &[f64], task: CartTask, params: &CartParams) -> Result<Self> {
        if params.max_depth == 0 {
            return Err(Error::InvalidParameter("CART requires max_depth >= 1".into()));
        }
        let mut model = Self {
            task,
            nodes: Vec::new(),
        };
        let rows: Vec<usize> = (0..targets.len()).collect();
        model.grow(x, targets, rows, 0, params.max_depth, params.min_leaf.max(1));
        Ok(model)
    }

    fn impurity(&self, n: f64, sum: f64, sum_sq: f64) -> f64 {
        if n == 0.0 {
            return 0.0;
        }
        match self.task {
            CartTask::Regression => (sum_sq - sum * sum / n).max(0.0),
            CartTask::Classification => {
                let p = sum / n;
                2.0 * n * p * (1.0 - p)
            }
        }
    }

    fn grow(
        &mut self,
        x: ArrayView2<f64>,
        t: &[f64],
        rows: Vec<usize>,
        depth: usize,
        max_depth: usize,
        min_leaf: usize,
    ) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| t[r]).sum();
        let sum_sq: f64 = rows.iter().map(|&r| t[r] * t[r]).sum();
        self.nodes.push(Node::Leaf { value: sum / n });
        let parent = self.impurity(n, sum, sum_sq);
        if depth >= max_depth || rows.len() < 2 * min_leaf || parent <= GAIN_EPS {
            return id;
        }

        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.clone();
        for f in 0..x.ncols() {
            order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
            let (mut ls, mut lq) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let r = order[k];
                ls += t[r];
                lq += t[r] * t[r];
                let nl = k + 1;
                let nr = order.len() - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let (a, b) = (x[[r, f]], x[[order[k + 1], f]]);
                if a == b {
                    continue;
                }
                let gain = parent
                    - self.impurity(nl as f64, ls, lq)
                    - self.impurity(nr as f64, sum - ls, sum_sq - lq);
                if gain > GAIN_EPS && best.is_none_or(|(g, _, _)| gain > g + GAIN_EPS) {
                    best = Some((gain, f, 0.5 * (a + b)));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| x[[r, feature]] <= threshold);
        let left = self.grow(x, t, left_rows, depth + 1, max_depth, min_leaf);
        let right = self.grow(x, t, right_rows, depth + 1, max_depth, min_leaf);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

pub(crate) fn fit_cart_classifier(
    x: ArrayView2<f64>,
    _binary: &[bool],
    y: &[u8],
    params: &CartParams,
) -> Result<ProbabilisticClassifier> {
    check_inputs(x, y.len())?;
    check_two_classes(y)?;
    let t: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let model = CartModel::fit(x, &t, CartTask::Classification, params)?;
    Ok(ProbabilisticClassifier {
        format_version: FORMAT_VERSION,
        standardizer: Standardizer::identity(x.ncols()),
        model: ClassifierModel::Cart(model),
        platt: None,
    })
}

pub(crate) fn fit_cart_regressor(
    x: ArrayView2<f64>,
    _binary: &[bool],
    t: &[f64],
    params: &CartParams,
) -> Result<Regressor> {
    check_inputs(x, t.len())?;
    let model = CartModel::fit(x, t, CartTask::Regression, params)?;
    Ok(Regressor {
        format_version: FORMAT_VERSION,
        standardizer: Standardizer::identity(x.ncols()),
        model: RegressorModel::Cart(model),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn pure_node_is_a_leaf() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let m = CartModel::fit(x.view(), &[3.0; 20], CartTask::Regression, &CartParams::default()).unwrap();
        assert_eq!(m.nodes.len(), 1);
    }

    #[test]
    fn zero_depth_rejected() {
        let x = Array2::zeros((4, 1));
        let p = CartParams {
            max_depth: 0,
            min_leaf: 1,
        };
        assert!(CartModel::fit(x.view(), &[0.0; 4], CartTask::Regression, &p).is_err());
    }
}
