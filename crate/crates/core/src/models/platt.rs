use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sigmoid;

/// Smallest slope kept after fitting; the map must stay strictly increasing.
const MIN_SLOPE: f64 = 1e-8;

/// Sigmoid calibration `p = σ(slope · d + intercept)` of a decision value `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub slope: f64,
    pub intercept: f64,
}

impl Platt {
    pub fn probability(&self, d: f64) -> f64 {
        sigmoid(self.slope * d + self.intercept)
    }

    /// Probability and its derivative with respect to `d`.
    pub fn probability_and_slope(&self, d: f64) -> (f64, f64) {
        let p = self.probability(d);
        (p, self.slope * p * (1.0 - p))
    }

    /// Newton fit with backtracking on the regularized targets
    /// `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)`.
    pub fn fit(decisions: &[f64], labels: &[u8]) -> Result<Self> {
        if decisions.len() != labels.len() {
            return Err(Error::Dimension {
                expected: decisions.len(),
                got: labels.len(),
            });
        }
        if decisions.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("decision values"));
        }
        let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
        let n_neg = labels.len() as f64 - n_pos;
        let hi = (n_pos + 1.0) / (n_pos + 2.0);
        let lo = 1.0 / (n_neg + 2.0);
        let targets: Vec<f64> = labels.iter().map(|&y| if y == 1 { hi } else { lo }).collect();

        // Parameterized as P = 1 / (1 + exp(a d + b)); converted at the end.
        let mut a = 0.0;
        let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
        let objective = |a: f64, b: f64| -> f64 {
            decisions
                .iter()
                .zip(&targets)
                .map(|(&d, &t)| {
                    let f = d * a + b;
                    if f >= 0.0 {
                        t * f + (-f).exp().ln_1p()
                    } else {
                        (t - 1.0) * f + f.exp().ln_1p()
                    }
                })
                .sum()
        };
        let mut fval = objective(a, b);
        const SIGMA: f64 = 1e-12;
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
            for (&d, &t) in decisions.iter().zip(&targets) {
                let f = d * a + b;
                let (p, q) = if f >= 0.0 {
                    let e = (-f).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = f.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += d * d * d2;
                h22 += d2;
                h21 += d * d2;
                let d1 = t - p;
                g1 += d * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    break;
                }
                step /= 2.0;
            }
            if step < 1e-10 {
                break;
            }
        }
        Ok(Self {
            slope: (-a).max(MIN_SLOPE),
            intercept: -b,
        })
    }
}
