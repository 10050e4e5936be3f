use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{check_inputs, check_two_classes, ClassifierModel, ProbabilisticClassifier, Regressor, RegressorModel, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, sigmoid};

/// `w · x + b` over standardized inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn linear(&self, x: ArrayView1<f64>) -> f64 {
        self.weights.dot(&x) + self.intercept
    }
}

/// Design matrix with a trailing column of ones.
fn with_intercept(xs: &Array2<f64>) -> Array2<f64> {
    let (n, p) = xs.dim();
    let mut a = Array2::<f64>::ones((n, p + 1));
    a.slice_mut(ndarray::s![.., ..p]).assign(xs);
    a
}

fn split(theta: &Array1<f64>) -> LinearModel {
    let p = theta.len() - 1;
    LinearModel {
        weights: theta.slice(ndarray::s![..p]).to_owned(),
        intercept: theta[p],
    }
}

/// L2-penalized logistic regression (intercept unpenalized), fitted by
/// damped Newton iterations.
pub fn fit_logistic(
    x: ArrayView2<f64>,
    binary: &[bool],
    y: &[u8],
    l2: f64,
) -> Result<ProbabilisticClassifier> {
    check_inputs(x, y.len())?;
    check_two_classes(y)?;
    if !(l2 > 0.0) || !l2.is_finite() {
        return Err(Error::InvalidParameter(format!("l2 penalty must be positive, got {l2}")));
    }
    let standardizer = Standardizer::fit(x, binary);
    let a = with_intercept(&standardizer.transform_rows(x));
    let (n, q) = a.dim();
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let penalty = |j: usize| if j + 1 < q { l2 } else { 1e-10 };
    let objective = |theta: &Array1<f64>| -> f64 {
        let eta = a.dot(theta);
        let nll: f64 = eta
            .iter()
            .zip(&yf)
            .map(|(&e, &t)| {
                let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                softplus - t * e
            })
            .sum();
        nll + 0.5 * (0..q - 1).map(|j| l2 * theta[j] * theta[j]).sum::<f64>()
    };
    let mut theta = Array1::<f64>::zeros(q);
    let mut f = objective(&theta);
    for _ in 0..100 {
        let eta = a.dot(&theta);
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let mut grad = Array1::<f64>::zeros(q);
        let mut hess = Array2::<f64>::zeros((q, q));
        for i in 0..n {
            let r = p[i] - yf[i];
            let w = p[i] * (1.0 - p[i]);
            let row = a.row(i);
            for j in 0..q {
                grad[j] += r * row[j];
                let wj = w * row[j];
                for k in 0..=j {
                    hess[[j, k]] += wj * row[k];
                }
            }
        }
        for j in 0..q {
            grad[j] += if j + 1 < q { l2 * theta[j] } else { 0.0 };
            hess[[j, j]] += penalty(j);
            for k in 0..j {
                hess[[k, j]] = hess[[j, k]];
            }
        }
        let step = cholesky_solve(&hess, &grad)?;
        let decrement = grad.dot(&step);
        if decrement.abs() < 1e-14 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let cand = &theta - &(&step * t);
            let fc = objective(&cand);
            if fc <= f - 1e-4 * t * decrement {
                theta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || (t * step.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) < 1e-10 {
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic coefficients"));
    }
    Ok(ProbabilisticClassifier {
        format_version: FORMAT_VERSION,
        standardizer,
        model: ClassifierModel::Logistic(split(&theta)),
        platt: None,
    })
}

/// Closed-form ridge regression with an unpenalized intercept.
pub fn fit_ridge(x: ArrayView2<f64>, binary: &[bool], t: &[f64], alpha: f64) -> Result<Regressor> {
    check_inputs(x, t.len())?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge regularization must be positive, got {alpha}"
        )));
    }
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression targets"));
    }
    let standardizer = Standardizer::fit(x, binary);
    let a = with_intercept(&standardizer.transform_rows(x));
    let q = a.ncols();
    let mut gram = a.t().dot(&a);
    for j in 0..q - 1 {
        gram[[j, j]] += alpha;
    }
    let rhs = a.t().dot(&Array1::from_vec(t.to_vec()));
    let theta = cholesky_solve(&gram, &rhs)?;
    Ok(Regressor {
        format_version: FORMAT_VERSION,
        standardizer,
        model: RegressorModel::Ridge(split(&theta)),
    })
}
