//! Sequential minimal optimization for the box-constrained dual
//!
//! ```text
//! min ½ αᵀQα + pᵀα   s.t.  yᵀα = 0,  0 ≤ α_t ≤ C_t,   Q_ts = y_t y_s K(t, s)
//! ```
//!
//! Working pairs are chosen by maximal violation for the first index and
//! second-order gain for the second. Both classification (one variable per
//! sample) and ε-regression (two variables per sample, sharing kernel rows)
//! reduce to this form.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoParams {
    /// Stop when the maximal KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

pub struct DualProblem<'a> {
    /// Kernel matrix over the base samples.
    pub kernel: &'a Array2<f64>,
    /// Base sample used by each dual variable.
    pub index: Vec<usize>,
    /// Signs in `{-1, +1}`.
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Offset such that the decision function is `Σ y_t α_t K(t, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    pub violation: f64,
}

impl DualProblem<'_> {
    fn q(&self, t: usize, s: usize) -> f64 {
        self.y[t] * self.y[s] * self.kernel[[self.index[t], self.index[s]]]
    }

    pub fn solve(&self, params: &SmoParams) -> Result<DualSolution> {
        let n = self.y.len();
        if self.index.len() != n || self.p.len() != n || self.upper.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.index.len().min(self.p.len()).min(self.upper.len()),
            });
        }
        let qd: Vec<f64> = (0..n)
            .map(|t| self.kernel[[self.index[t], self.index[t]]])
            .collect();
        let mut alpha = vec![0.0; n];
        let mut grad = self.p.clone();
        let mut iterations = 0;
        let mut q_i = vec![0.0; n];
        let mut q_j = vec![0.0; n];

        let violation = loop {
            let (gap, pair) = self.select_working_set(&alpha, &grad, &qd);
            let Some((i, j)) = pair.filter(|_| gap >= params.tol) else {
                break gap;
            };
            iterations += 1;
            if iterations > params.max_iter {
                return Err(Error::NoConvergence {
                    iterations: params.max_iter,
                    violation: gap,
                });
            }
            for t in 0..n {
                q_i[t] = self.q(i, t);
                q_j[t] = self.q(j, t);
            }
            let (c_i, c_j) = (self.upper[i], self.upper[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            if self.y[i] != self.y[j] {
                let mut quad = qd[i] + qd[j] + 2.0 * q_i[j];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > c_i - c_j {
                    if alpha[i] > c_i {
                        alpha[i] = c_i;
                        alpha[j] = c_i - diff;
                    }
                } else if alpha[j] > c_j {
                    alpha[j] = c_j;
                    alpha[i] = c_j + diff;
                }
            } else {
                let mut quad = qd[i] + qd[j] - 2.0 * q_i[j];
                if quad <= 0.0 {
                    quad = TAU;
                }
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c_i {
                    if alpha[i] > c_i {
                        alpha[i] = c_i;
                        alpha[j] = sum - c_i;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c_j {
                    if alpha[j] > c_j {
                        alpha[j] = c_j;
                        alpha[i] = sum - c_j;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (da_i, da_j) = (alpha[i] - old_i, alpha[j] - old_j);
            for t in 0..n {
                grad[t] += q_i[t] * da_i + q_j[t] * da_j;
            }
        };

        let rho = self.rho(&alpha, &grad);
        Ok(DualSolution {
            alpha,
            rho,
            iterations,
            violation,
        })
    }

    fn at_upper(&self, alpha: &[f64], t: usize) -> bool {
        alpha[t] >= self.upper[t]
    }

    fn at_lower(alpha: &[f64], t: usize) -> bool {
        alpha[t] <= 0.0
    }

    /// Returns the current maximal violation and the next working pair.
    fn select_working_set(
        &self,
        alpha: &[f64],
        grad: &[f64],
        qd: &[f64],
    ) -> (f64, Option<(usize, usize)>) {
        let n = alpha.len();
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if self.y[t] > 0.0 {
                if !self.at_upper(alpha, t) && -grad[t] >= g_max {
                    g_max = -grad[t];
                    i_sel = Some(t);
                }
            } else if !Self::at_lower(alpha, t) && grad[t] >= g_max {
                g_max = grad[t];
                i_sel = Some(t);
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..n {
                let q_it = self.q(i, t);
                if self.y[t] > 0.0 {
                    if !Self::at_lower(alpha, t) {
                        let grad_diff = g_max + grad[t];
                        if grad[t] >= g_max2 {
                            g_max2 = grad[t];
                        }
                        if grad_diff > 0.0 {
                            let quad = qd[i] + qd[t] - 2.0 * self.y[i] * q_it;
                            let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                            if obj <= best_obj {
                                best_obj = obj;
                                j_sel = Some(t);
                            }
                        }
                    }
                } else if !self.at_upper(alpha, t) {
                    let grad_diff = g_max - grad[t];
                    if -grad[t] >= g_max2 {
                        g_max2 = -grad[t];
                    }
                    if grad_diff > 0.0 {
                        let quad = qd[i] + qd[t] + 2.0 * self.y[i] * q_it;
                        let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= best_obj {
                            best_obj = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            }
        }
        let gap = g_max + g_max2;
        (gap, i_sel.zip(j_sel))
    }

    fn rho(&self, alpha: &[f64], grad: &[f64]) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut n_free = 0usize;
        let mut sum_free = 0.0;
        for t in 0..alpha.len() {
            let yg = self.y[t] * grad[t];
            if self.at_upper(alpha, t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if Self::at_lower(alpha, t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            0.5 * (ub + lb)
        }
    }
}
