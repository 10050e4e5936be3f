use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::platt::Platt;
use super::smo::{DualProblem, DualSolution, SmoParams};
use super::standardize::Standardizer;
use super::{check_inputs, check_two_classes, ClassifierModel, ProbabilisticClassifier, Regressor, RegressorModel, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::linalg::{median, sq_dist};

const GAMMA_SUBSAMPLE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma {
    /// `1 / median pairwise squared distance` of a seeded subsample.
    Auto,
    Fixed(f64),
}

/// Kernel with its bandwidth resolved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
            Kernel::Linear => a.dot(&b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    /// `true` for the RBF kernel, `false` for linear.
    pub rbf: bool,
    /// Soft-margin penalty. Below 1 so the per-visit risk models, which see
    /// few positives at later visits, stay smooth.
    pub c: f64,
    /// Scales `c` per class by `n / (2 n_class)` so a rare class is not
    /// traded away for margin.
    pub balanced: bool,
    pub gamma: Gamma,
    pub smo: SmoParams,
    pub platt_folds: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            rbf: true,
            c: 0.5,
            balanced: true,
            gamma: Gamma::Auto,
            smo: SmoParams::default(),
            platt_folds: 3,
            seed: 0x5eed,
        }
    }
}

/// Kernel expansion `Σ coef_i K(sv_i, x) + bias` over standardized inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support: Array2<f64>,
    pub coef: Array1<f64>,
    pub bias: f64,
    /// Collapsed primal weights for the linear kernel.
    pub weights: Option<Array1<f64>>,
}

impl SvmModel {
    fn from_dual(kernel: Kernel, xs: ArrayView2<f64>, index: &[usize], coef_all: &[f64], rho: f64) -> Self {
        let keep: Vec<usize> = (0..coef_all.len()).filter(|&t| coef_all[t] != 0.0).collect();
        let rows: Vec<usize> = keep.iter().map(|&t| index[t]).collect();
        let support = xs.select(Axis(0), &rows);
        let coef = Array1::from_iter(keep.iter().map(|&t| coef_all[t]));
        let weights = match kernel {
            Kernel::Linear => Some(support.t().dot(&coef)),
            Kernel::Rbf { .. } => None,
        };
        Self {
            kernel,
            support,
            coef,
            bias: -rho,
            weights,
        }
    }

    pub fn n_support(&self) -> usize {
        self.coef.len()
    }

    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        if let Some(w) = &self.weights {
            return w.dot(&x) + self.bias;
        }
        let mut s = self.bias;
        for (sv, c) in self.support.rows().into_iter().zip(self.coef.iter()) {
            s += c * self.kernel.eval(sv, x);
        }
        s
    }

    /// Decision value and its gradient in standardized coordinates.
    pub fn decision_and_grad(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        if let Some(w) = &self.weights {
            return (w.dot(&x) + self.bias, w.clone());
        }
        let gamma = match self.kernel {
            Kernel::Rbf { gamma } => gamma,
            Kernel::Linear => unreachable!("linear models carry weights"),
        };
        let mut s = self.bias;
        let mut g = Array1::<f64>::zeros(x.len());
        for (sv, c) in self.support.rows().into_iter().zip(self.coef.iter()) {
            let k = (-gamma * sq_dist(sv, x)).exp();
            s += c * k;
            let scale = -2.0 * gamma * c * k;
            for (gj, (xj, sj)) in g.iter_mut().zip(x.iter().zip(sv.iter())) {
                *gj += scale * (xj - sj);
            }
        }
        (s, g)
    }
}

/// Median-heuristic RBF bandwidth over a seeded subsample of rows.
pub fn median_gamma(xs: ArrayView2<f64>, seed: u64) -> f64 {
    let n = xs.nrows();
    let rows: Vec<usize> = if n > GAMMA_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, GAMMA_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            d.push(sq_dist(xs.row(i), xs.row(j)));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let m = median(&mut d);
    if m > 0.0 && m.is_finite() {
        1.0 / m
    } else {
        1.0
    }
}

impl SvmParams {
    fn kernel_for(&self, xs: ArrayView2<f64>) -> Result<Kernel> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidParameter(format!("C must be positive, got {}", self.c)));
        }
        if !self.rbf {
            return Ok(Kernel::Linear);
        }
        let gamma = match self.gamma {
            Gamma::Auto => median_gamma(xs, self.seed),
            Gamma::Fixed(g) if g > 0.0 && g.is_finite() => g,
            Gamma::Fixed(g) => {
                return Err(Error::InvalidParameter(format!("gamma must be positive, got {g}")))
            }
        };
        Ok(Kernel::Rbf { gamma })
    }
}

pub(crate) fn kernel_matrix(kernel: Kernel, xs: ArrayView2<f64>) -> Array2<f64> {
    let n = xs.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| kernel.eval(xs.row(i), xs.row(j))).collect())
        .collect();
    Array2::from_shape_vec((n, n), rows.into_iter().flatten().collect())
        .expect("square kernel matrix")
}

fn signed(y: &[u8]) -> Vec<f64> {
    y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect()
}

/// Solves the soft-margin classification dual on the rows `index` of a
/// precomputed kernel matrix.
pub fn train_svc_dual(
    k: &Array2<f64>,
    index: &[usize],
    y: &[u8],
    c: f64,
    smo: &SmoParams,
) -> Result<DualSolution> {
    train_svc_dual_bounded(k, index, y, vec![c; index.len()], smo)
}

/// Dual with a per-row upper bound on `alpha`.
pub fn train_svc_dual_bounded(
    k: &Array2<f64>,
    index: &[usize],
    y: &[u8],
    upper: Vec<f64>,
    smo: &SmoParams,
) -> Result<DualSolution> {
    let labels = signed(y);
    let problem = DualProblem {
        kernel: k,
        index: index.to_vec(),
        y: index.iter().map(|&i| labels[i]).collect(),
        p: vec![-1.0; index.len()],
        upper,
    };
    problem.solve(smo)
}

/// Box bound per row of `index`.
pub fn class_bounds(index: &[usize], y: &[u8], c: f64, balanced: bool) -> Vec<f64> {
    if !balanced {
        return vec![c; index.len()];
    }
    let n = index.len() as f64;
    let pos = index.iter().filter(|&&i| y[i] == 1).count() as f64;
    let neg = n - pos;
    index
        .iter()
        .map(|&i| {
            let m = if y[i] == 1 { pos } else { neg };
            if m > 0.0 {
                c * n / (2.0 * m)
            } else {
                c
            }
        })
        .collect()
}

fn svc_on_rows(
    kernel: Kernel,
    k: &Array2<f64>,
    xs: ArrayView2<f64>,
    index: &[usize],
    y: &[u8],
    params: &SvmParams,
) -> Result<SvmModel> {
    let upper = class_bounds(index, y, params.c, params.balanced);
    let sol = train_svc_dual_bounded(k, index, y, upper, &params.smo)?;
    let labels = signed(y);
    let coef: Vec<f64> = index
        .iter()
        .zip(&sol.alpha)
        .map(|(&i, &a)| a * labels[i])
        .collect();
    Ok(SvmModel::from_dual(kernel, xs, index, &coef, sol.rho))
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub(crate) fn stratified_folds(y: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        members.shuffle(&mut rng);
        for (r, &i) in members.iter().enumerate() {
            fold[i] = r % folds;
        }
    }
    fold
}

/// Trains a soft-margin SVM and fits Platt scaling on cross-validated
/// decision values.
pub fn fit_svm(
    x: ArrayView2<f64>,
    binary: &[bool],
    y: &[u8],
    params: &SvmParams,
) -> Result<ProbabilisticClassifier> {
    check_inputs(x, y.len())?;
    check_two_classes(y)?;
    if x.nrows() < 2 {
        return Err(Error::InvalidParameter("need at least 2 rows".into()));
    }
    let standardizer = Standardizer::fit(x, binary);
    let xs = standardizer.transform_rows(x);
    let kernel = params.kernel_for(xs.view())?;
    let k = kernel_matrix(kernel, xs.view());
    let all: Vec<usize> = (0..y.len()).collect();
    let model = svc_on_rows(kernel, &k, xs.view(), &all, y, params)?;

    let folds = params.platt_folds.max(2);
    let assignment = stratified_folds(y, folds, params.seed);
    let mut decisions = vec![0.0; y.len()];
    let mut cross_validated = true;
    for f in 0..folds {
        let train: Vec<usize> = all.iter().copied().filter(|&i| assignment[i] != f).collect();
        let has_both = train.iter().any(|&i| y[i] == 1) && train.iter().any(|&i| y[i] == 0);
        if !has_both {
            cross_validated = false;
            break;
        }
        let fold_model = svc_on_rows(kernel, &k, xs.view(), &train, y, params)?;
        for i in all.iter().copied().filter(|&i| assignment[i] == f) {
            decisions[i] = fold_model.decision(xs.row(i));
        }
    }
    if !cross_validated {
        for i in 0..y.len() {
            decisions[i] = model.decision(xs.row(i));
        }
    }
    let platt = Platt::fit(&decisions, y)?;
    Ok(ProbabilisticClassifier {
        format_version: FORMAT_VERSION,
        standardizer,
        model: ClassifierModel::Svm(model),
        platt: Some(platt),
    })
}

/// ε-insensitive support vector regression sharing the classification
/// solver (two dual variables per sample).
pub fn fit_svr(
    x: ArrayView2<f64>,
    binary: &[bool],
    t: &[f64],
    params: &SvmParams,
    epsilon: f64,
) -> Result<Regressor> {
    check_inputs(x, t.len())?;
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression targets"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let standardizer = Standardizer::fit(x, binary);
    let xs = standardizer.transform_rows(x);
    let kernel = params.kernel_for(xs.view())?;
    let k = kernel_matrix(kernel, xs.view());
    let n = t.len();
    let problem = DualProblem {
        kernel: &k,
        index: (0..n).chain(0..n).collect(),
        y: std::iter::repeat(1.0).take(n).chain(std::iter::repeat(-1.0).take(n)).collect(),
        p: t.iter()
            .map(|v| epsilon - v)
            .chain(t.iter().map(|v| epsilon + v))
            .collect(),
        upper: vec![params.c; 2 * n],
    };
    let sol = problem.solve(&params.smo)?;
    let coef: Vec<f64> = (0..n).map(|i| sol.alpha[i] - sol.alpha[i + n]).collect();
    let index: Vec<usize> = (0..n).collect();
    let model = SvmModel::from_dual(kernel, xs.view(), &index, &coef, sol.rho);
    Ok(Regressor {
        format_version: FORMAT_VERSION,
        standardizer,
        model: RegressorModel::Svr(model),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn median_gamma_on_unit_square() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        // squared distances: four of 1, two of 2 -> median 1
        assert_eq!(median_gamma(x.view(), 0), 1.0);
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<u8> = (0..30).map(|i| (i % 5 == 0) as u8).collect();
        let f = stratified_folds(&y, 3, 1);
        for fold in 0..3 {
            let pos = (0..30).filter(|&i| f[i] == fold && y[i] == 1).count();
            assert_eq!(pos, 2);
        }
    }
}
