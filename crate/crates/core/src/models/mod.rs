//! Predictive model zoo: SMO-trained SVMs with Platt scaling, logistic and
//! ridge regression, kNN, CART, plus the AUC/MSE metrics.
//!
//! Every model stores its own train-split standardization and is queried in
//! raw feature units; gradients are returned with respect to raw inputs.

mod cart;
mod knn;
mod linear;
mod metrics;
mod platt;
mod smo;
mod standardize;
mod svm;

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use cart::{CartModel, CartParams, CartTask};
pub use knn::KnnModel;
pub use linear::{fit_logistic, fit_ridge, LinearModel};
pub use metrics::{auc, mse};
pub use platt::Platt;
pub use smo::{DualProblem, DualSolution, SmoParams};
pub use standardize::Standardizer;
pub use svm::{
    class_bounds, fit_svm, fit_svr, median_gamma, train_svc_dual, train_svc_dual_bounded, Gamma, Kernel, SvmModel,
    SvmParams,
};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Knn,
    Cart,
    Logistic,
    Ridge,
    LinearSvm,
    RbfSvm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::RbfSvm,
        EstimatorKind::LinearSvm,
        EstimatorKind::Cart,
        EstimatorKind::Knn,
        EstimatorKind::Logistic,
        EstimatorKind::Ridge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Knn => "knn",
            EstimatorKind::Cart => "cart",
            EstimatorKind::Logistic => "logistic",
            EstimatorKind::Ridge => "ridge",
            EstimatorKind::LinearSvm => "linear_svm",
            EstimatorKind::RbfSvm => "rbf_svm",
        }
    }

    pub fn supports_binary(self) -> bool {
        self != EstimatorKind::Ridge
    }

    pub fn supports_continuous(self) -> bool {
        self != EstimatorKind::Logistic
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub svm: SvmParams,
    pub svr_epsilon: f64,
    pub logistic_l2: f64,
    pub ridge_alpha: f64,
    pub knn_k: usize,
    pub cart: CartParams,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            svm: SvmParams::default(),
            svr_epsilon: 0.1,
            logistic_l2: 1.0,
            ridge_alpha: 1.0,
            knn_k: 5,
            cart: CartParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    Svm(SvmModel),
    Logistic(LinearModel),
    Knn(KnnModel),
    Cart(CartModel),
    Constant { probability: f64 },
}

/// A trained binary classifier producing probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticClassifier {
    pub format_version: u32,
    pub standardizer: Standardizer,
    pub model: ClassifierModel,
    /// Present when the base score is a margin rather than a probability.
    pub platt: Option<Platt>,
}

impl ProbabilisticClassifier {
    pub fn constant(probability: f64, n_features: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            standardizer: Standardizer::identity(n_features),
            model: ClassifierModel::Constant {
                probability: probability.clamp(0.0, 1.0),
            },
            platt: None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.model {
            ClassifierModel::Svm(m) => match m.kernel {
                Kernel::Rbf { .. } => "rbf_svm",
                Kernel::Linear => "linear_svm",
            },
            ClassifierModel::Logistic(_) => "logistic",
            ClassifierModel::Knn(_) => "knn",
            ClassifierModel::Cart(_) => "cart",
            ClassifierModel::Constant { .. } => "constant",
        }
    }

    pub fn n_features(&self) -> usize {
        self.standardizer.len()
    }

    /// Standard deviation used to scale feature `j` (1 for binary features).
    pub fn scale(&self, j: usize) -> f64 {
        self.standardizer.scale[j]
    }

    fn check(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Raw score before calibration: SVM margin, logistic logit, or the
    /// probability itself for kNN, CART and constant models.
    pub fn decision_value(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check(x)?;
        let xs = self.standardizer.transform(x);
        Ok(match &self.model {
            ClassifierModel::Svm(m) => m.decision(xs.view()),
            ClassifierModel::Logistic(m) => m.linear(xs.view()),
            ClassifierModel::Knn(m) => m.predict(xs.view()),
            ClassifierModel::Cart(m) => m.predict(x),
            ClassifierModel::Constant { probability } => *probability,
        })
    }

    pub fn predict_proba(&self, x: ArrayView1<f64>) -> Result<f64> {
        let d = self.decision_value(x)?;
        Ok(self.calibrate(d))
    }

    fn calibrate(&self, d: f64) -> f64 {
        match (&self.model, &self.platt) {
            (ClassifierModel::Logistic(_), _) => crate::linalg::sigmoid(d),
            (_, Some(p)) => p.probability(d),
            (_, None) => d.clamp(0.0, 1.0),
        }
    }

    pub fn predict_proba_rows(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.predict_proba(r)).collect()
    }

    /// Gradient of the probability with respect to the raw input.
    pub fn grad_proba(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.proba_and_grad(x)?.1)
    }

    pub fn proba_and_grad(&self, x: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
        self.check(x)?;
        let xs = self.standardizer.transform(x);
        let (d, mut g) = match &self.model {
            ClassifierModel::Svm(m) => m.decision_and_grad(xs.view()),
            ClassifierModel::Logistic(m) => (m.linear(xs.view()), m.weights.clone()),
            ClassifierModel::Constant { probability } => {
                (*probability, Array1::zeros(self.n_features()))
            }
            ClassifierModel::Knn(_) => return Err(Error::UnsupportedGradient("knn")),
            ClassifierModel::Cart(_) => return Err(Error::UnsupportedGradient("cart")),
        };
        let (p, slope) = match (&self.model, &self.platt) {
            (ClassifierModel::Constant { .. }, _) => (d, 0.0),
            (ClassifierModel::Logistic(_), _) => {
                let p = crate::linalg::sigmoid(d);
                (p, p * (1.0 - p))
            }
            (_, Some(platt)) => platt.probability_and_slope(d),
            (_, None) => (d.clamp(0.0, 1.0), 1.0),
        };
        g.mapv_inplace(|v| v * slope);
        self.standardizer.chain_to_raw(&mut g);
        Ok((p, g))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorModel {
    Ridge(LinearModel),
    Knn(KnnModel),
    Cart(CartModel),
    Svr(SvmModel),
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub format_version: u32,
    pub standardizer: Standardizer,
    pub model: RegressorModel,
}

impl Regressor {
    pub fn constant(value: f64, n_features: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            standardizer: Standardizer::identity(n_features),
            model: RegressorModel::Constant { value },
        }
    }

    pub fn n_features(&self) -> usize {
        self.standardizer.len()
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        let xs = self.standardizer.transform(x);
        Ok(match &self.model {
            RegressorModel::Ridge(m) => m.linear(xs.view()),
            RegressorModel::Knn(m) => m.predict(xs.view()),
            RegressorModel::Cart(m) => m.predict(x),
            RegressorModel::Svr(m) => m.decision(xs.view()),
            RegressorModel::Constant { value } => *value,
        })
    }

    /// Ridge coefficients mapped back to raw feature units.
    pub fn raw_coefficients(&self) -> Option<Array1<f64>> {
        match &self.model {
            RegressorModel::Ridge(m) => {
                let mut w = m.weights.clone();
                self.standardizer.chain_to_raw(&mut w);
                Some(w)
            }
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

/// Training target for [`fit_baseline`].
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Binary(&'a [u8]),
    Continuous(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    Classifier(ProbabilisticClassifier),
    Regressor(Regressor),
}

impl Estimator {
    /// Probability for classifiers, value for regressors.
    pub fn score(&self, x: ArrayView1<f64>) -> Result<f64> {
        match self {
            Estimator::Classifier(c) => c.predict_proba(x),
            Estimator::Regressor(r) => r.predict(x),
        }
    }
}

pub(crate) fn check_inputs(x: ArrayView2<f64>, n_targets: usize) -> Result<()> {
    if x.nrows() != n_targets {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: n_targets,
        });
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training inputs"));
    }
    Ok(())
}

pub(crate) fn check_two_classes(y: &[u8]) -> Result<()> {
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidParameter("labels must be 0/1".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Trains any model of the zoo. Classifiers require binary targets and
/// regressors continuous ones; `binary` flags columns that skip
/// standardization.
pub fn fit_baseline(
    kind: EstimatorKind,
    x: ArrayView2<f64>,
    binary: &[bool],
    target: Target<'_>,
    hyper: &Hyper,
) -> Result<Estimator> {
    match target {
        Target::Binary(y) => {
            let clf = match kind {
                EstimatorKind::RbfSvm => {
                    let p = SvmParams { rbf: true, ..hyper.svm.clone() };
                    fit_svm(x, binary, y, &p)?
                }
                EstimatorKind::LinearSvm => {
                    let p = SvmParams { rbf: false, ..hyper.svm.clone() };
                    fit_svm(x, binary, y, &p)?
                }
                EstimatorKind::Logistic => fit_logistic(x, binary, y, hyper.logistic_l2)?,
                EstimatorKind::Knn => knn::fit_knn_classifier(x, binary, y, hyper.knn_k)?,
                EstimatorKind::Cart => cart::fit_cart_classifier(x, binary, y, &hyper.cart)?,
                EstimatorKind::Ridge => {
                    return Err(Error::InvalidParameter(
                        "ridge is a regressor; binary targets need a classifier".into(),
                    ))
                }
            };
            Ok(Estimator::Classifier(clf))
        }
        Target::Continuous(t) => {
            let reg = match kind {
                EstimatorKind::Ridge => fit_ridge(x, binary, t, hyper.ridge_alpha)?,
                EstimatorKind::Knn => knn::fit_knn_regressor(x, binary, t, hyper.knn_k)?,
                EstimatorKind::Cart => cart::fit_cart_regressor(x, binary, t, &hyper.cart)?,
                EstimatorKind::RbfSvm => {
                    let p = SvmParams { rbf: true, ..hyper.svm.clone() };
                    fit_svr(x, binary, t, &p, hyper.svr_epsilon)?
                }
                EstimatorKind::LinearSvm => {
                    let p = SvmParams { rbf: false, ..hyper.svm.clone() };
                    fit_svr(x, binary, t, &p, hyper.svr_epsilon)?
                }
                EstimatorKind::Logistic => {
                    return Err(Error::InvalidParameter(
                        "logistic regression needs binary targets".into(),
                    ))
                }
            };
            Ok(Estimator::Regressor(reg))
        }
    }
}
