//! Nadaraya-Watson estimate of the indirectly changeable features from the
//! context (unchangeable and historical-risk) and directly changeable
//! features, with an analytic Jacobian in the direct block.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{median_gamma, Standardizer, FORMAT_VERSION};

/// Kernel mass below which the estimate falls back to the target mean.
pub const FAR_FIELD_MASS: f64 = 1e-12;

const GAMMA_SEED: u64 = 0x6e77;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median pairwise-distance heuristic on standardized inputs.
    Auto,
    /// Gaussian standard deviation in standardized units.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndirectEstimator {
    pub format_version: u32,
    pub kind: String,
    pub n_context: usize,
    pub n_direct: usize,
    pub standardizer: Standardizer,
    /// Standardized `[context | direct]` training rows.
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub target_mean: Array1<f64>,
    /// Kernel `exp(-gamma ‖a - b‖²)` on standardized inputs.
    pub gamma: f64,
}

struct Weights {
    w: Vec<f64>,
    total: f64,
}

impl IndirectEstimator {
    pub fn n_outputs(&self) -> usize {
        self.targets.ncols()
    }

    fn query(&self, x_context: ArrayView1<f64>, x_direct: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x_context.len() != self.n_context {
            return Err(Error::Dimension {
                expected: self.n_context,
                got: x_context.len(),
            });
        }
        if x_direct.len() != self.n_direct {
            return Err(Error::Dimension {
                expected: self.n_direct,
                got: x_direct.len(),
            });
        }
        let q = concatenate(Axis(0), &[x_context, x_direct]).expect("1-d concat");
        Ok(self.standardizer.transform(q.view()))
    }

    /// Relative kernel weights (max weight 1) or `None` in the far field.
    fn weights(&self, q: ArrayView1<f64>) -> Option<Weights> {
        let log_k: Vec<f64> = self
            .inputs
            .rows()
            .into_iter()
            .map(|r| -self.gamma * crate::linalg::sq_dist(r, q))
            .collect();
        let m = log_k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_k.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = w.iter().sum();
        if !(m.exp() * total >= FAR_FIELD_MASS) {
            return None;
        }
        Some(Weights { w, total })
    }

    pub fn predict(&self, x_context: ArrayView1<f64>, x_direct: ArrayView1<f64>) -> Result<Array1<f64>> {
        let q = self.query(x_context, x_direct)?;
        Ok(match self.weights(q.view()) {
            None => self.target_mean.clone(),
            Some(wt) => self.weighted_mean(&wt),
        })
    }

    fn weighted_mean(&self, wt: &Weights) -> Array1<f64> {
        let mut out = Array1::<f64>::zeros(self.n_outputs());
        for (wi, row) in wt.w.iter().zip(self.targets.rows()) {
            out.scaled_add(*wi, &row);
        }
        out / wt.total
    }

    /// `|I| x |D|` Jacobian with respect to the raw direct features.
    pub fn jacobian(&self, x_context: ArrayView1<f64>, x_direct: ArrayView1<f64>) -> Result<Array2<f64>> {
        Ok(self.predict_and_jacobian(x_context, x_direct)?.1)
    }

    pub fn predict_and_jacobian(
        &self,
        x_context: ArrayView1<f64>,
        x_direct: ArrayView1<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let q = self.query(x_context, x_direct)?;
        let mut jac = Array2::<f64>::zeros((self.n_outputs(), self.n_direct));
        let Some(wt) = self.weights(q.view()) else {
            return Ok((self.target_mean.clone(), jac));
        };
        let h = self.weighted_mean(&wt);
        // dH/dq_j = Σ_i w_i (-2γ)(q_j - x_ij)(y_i - H) / Σ_i w_i
        for ((wi, xi), yi) in wt.w.iter().zip(self.inputs.rows()).zip(self.targets.rows()) {
            if *wi == 0.0 {
                continue;
            }
            let c = -2.0 * self.gamma * wi / wt.total;
            for j in 0..self.n_direct {
                let col = self.n_context + j;
                let dj = c * (q[col] - xi[col]);
                for k in 0..self.n_outputs() {
                    jac[[k, j]] += dj * (yi[k] - h[k]);
                }
            }
        }
        for j in 0..self.n_direct {
            let s = self.standardizer.scale[self.n_context + j];
            jac.column_mut(j).mapv_inplace(|v| v / s);
        }
        Ok((h, jac))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format_version != FORMAT_VERSION || m.kind != "nw_kernel" {
            return Err(Error::Serde(format!(
                "unsupported indirect estimator {:?} v{}",
                m.kind, m.format_version
            )));
        }
        Ok(m)
    }
}

/// Fits the kernel regression `(context, direct) -> indirect`. `binary`
/// flags input columns (context first, then direct) that skip
/// standardization.
pub fn fit_indirect(
    x_context: ArrayView2<f64>,
    x_direct: ArrayView2<f64>,
    x_indirect: ArrayView2<f64>,
    binary: &[bool],
    bandwidth: Bandwidth,
) -> Result<IndirectEstimator> {
    let n = x_direct.nrows();
    if x_context.nrows() != n || x_indirect.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x_context.nrows().min(x_indirect.nrows()),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter(
            "indirect estimator needs at least 2 rows".into(),
        ));
    }
    if x_context.iter().chain(x_direct.iter()).chain(x_indirect.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("indirect estimator training data"));
    }
    let raw = concatenate(Axis(1), &[x_context, x_direct]).expect("row counts checked");
    let standardizer = Standardizer::fit(raw.view(), binary);
    let inputs = standardizer.transform_rows(raw.view());
    let gamma = match bandwidth {
        Bandwidth::Auto => median_gamma(inputs.view(), GAMMA_SEED),
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => 1.0 / (2.0 * h * h),
        Bandwidth::Fixed(h) => {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
    };
    let target_mean = x_indirect
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x_indirect.ncols()));
    Ok(IndirectEstimator {
        format_version: FORMAT_VERSION,
        kind: "nw_kernel".into(),
        n_context: x_context.ncols(),
        n_direct: x_direct.ncols(),
        standardizer,
        inputs,
        targets: x_indirect.to_owned(),
        target_mean,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn constant_targets_give_constant_output_and_zero_jacobian() {
        let ctx = Array2::from_shape_fn((30, 1), |(i, _)| (i % 7) as f64);
        let d = Array2::from_shape_fn((30, 2), |(i, j)| (i * (j + 1)) as f64 * 0.1);
        let t = Array2::from_elem((30, 1), 5.0);
        let h = fit_indirect(ctx.view(), d.view(), t.view(), &[], Bandwidth::Auto).unwrap();
        let (p, jac) = h
            .predict_and_jacobian(array![2.5].view(), array![0.3, -1.0].view())
            .unwrap();
        assert!((p[0] - 5.0).abs() < 1e-12);
        assert!(jac.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(jac.dim(), (1, 2));
    }

    #[test]
    fn identical_rows_give_shared_target() {
        let ctx = Array2::from_elem((4, 1), 1.0);
        let d = Array2::from_elem((4, 1), 2.0);
        let t = Array2::from_elem((4, 2), 3.0);
        let h = fit_indirect(ctx.view(), d.view(), t.view(), &[], Bandwidth::Fixed(0.5)).unwrap();
        let p = h.predict(array![1.0].view(), array![2.0].view()).unwrap();
        assert_eq!(p, array![3.0, 3.0]);
    }

    #[test]
    fn far_query_returns_target_mean() {
        let ctx = array![[0.0], [1.0], [2.0]];
        let d = array![[0.0], [1.0], [3.0]];
        let t = array![[1.0], [2.0], [6.0]];
        let h = fit_indirect(ctx.view(), d.view(), t.view(), &[], Bandwidth::Auto).unwrap();
        let (p, jac) = h
            .predict_and_jacobian(array![1e6].view(), array![-1e6].view())
            .unwrap();
        assert!((p[0] - 3.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        assert_eq!(jac[[0, 0]], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = array![[0.0], [1.0]];
        assert!(fit_indirect(a.view(), a.view(), a.view(), &[], Bandwidth::Fixed(0.0)).is_err());
        let one = array![[0.0]];
        assert!(fit_indirect(one.view(), one.view(), one.view(), &[], Bandwidth::Auto).is_err());
        let h = fit_indirect(a.view(), a.view(), a.view(), &[], Bandwidth::Auto).unwrap();
        assert!(h.predict(array![0.0, 1.0].view(), array![0.0].view()).is_err());
    }
}
