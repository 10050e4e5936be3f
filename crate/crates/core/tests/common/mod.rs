#![allow(dead_code)]

use longic::cohort::Cohort;
use longic::pipeline::{train_all, ModelConfig, TrainedModels};
use longic::synth::{default_spec, generate, GeneratorSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default feature set at a size and event rate that keeps tests quick and
/// every split two-class.
pub fn small_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        n1: 500,
        event_rate: 0.1,
        ..default_spec()
    }
}

pub fn small_cohort(seed: u64) -> Cohort {
    generate(&small_spec(seed)).unwrap()
}

pub fn small_models(seed: u64) -> (Cohort, TrainedModels) {
    let cohort = small_cohort(seed);
    let models = train_all(&cohort, &ModelConfig::default(), seed).unwrap();
    (cohort, models)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, p), |_| rng.random_range(lo..hi))
}

/// Relative error with an absolute floor so near-zero entries do not blow up.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// One random projection problem: `(costs, budget, center, z)`.
pub struct ProjectionCase {
    pub costs: longic::inverse_opt::CostModel,
    pub spec: longic::inverse_opt::BudgetSpec,
    pub center: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn projection_case(rng: &mut ChaCha8Rng) -> ProjectionCase {
    use longic::inverse_opt::{BudgetSpec, Bounds, CostModel};
    let d = rng.random_range(1..=6);
    let draw_cost = |rng: &mut ChaCha8Rng| {
        if rng.random::<f64>() < 0.1 {
            f64::INFINITY
        } else {
            rng.random_range(0.1..3.0)
        }
    };
    let up: Vec<f64> = (0..d).map(|_| draw_cost(rng)).collect();
    let down: Vec<f64> = (0..d).map(|_| draw_cost(rng)).collect();
    let center: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let lower: Vec<f64> = center
        .iter()
        .map(|c| if rng.random::<f64>() < 0.2 { f64::NEG_INFINITY } else { c - rng.random_range(0.0..3.0) })
        .collect();
    let upper: Vec<f64> = center
        .iter()
        .map(|c| if rng.random::<f64>() < 0.2 { f64::INFINITY } else { c + rng.random_range(0.0..3.0) })
        .collect();
    let budget = if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(0.0..4.0) };
    let z = center.iter().map(|c| c + rng.random_range(-5.0..5.0)).collect();
    ProjectionCase {
        costs: CostModel::new(up, down).unwrap(),
        spec: BudgetSpec::new(budget, Bounds::new(lower, upper).unwrap()).unwrap(),
        center,
        z,
    }
}

/// Exact projection by enumerating every KKT pattern: each coordinate sits
/// at the center, at a bound, or moves freely up or down, and the budget is
/// either slack or tight. The best feasible candidate is the minimizer.
pub fn projection_oracle(case: &ProjectionCase) -> Vec<f64> {
    let ProjectionCase { costs, spec, center, z } = case;
    let d = center.len();
    let budget = spec.budget;
    let lo: Vec<f64> = (0..d).map(|j| spec.bounds.lower[j] - center[j]).collect();
    let hi: Vec<f64> = (0..d).map(|j| spec.bounds.upper[j] - center[j]).collect();
    let dz: Vec<f64> = (0..d).map(|j| z[j] - center[j]).collect();
    let term = |j: usize, delta: f64| -> f64 {
        if delta > 0.0 {
            costs.up[j] * delta
        } else if delta < 0.0 {
            costs.down[j] * -delta
        } else {
            0.0
        }
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..5usize.pow(d as u32) {
        let states: Vec<usize> = (0..d).map(|j| (code / 5usize.pow(j as u32)) % 5).collect();
        if states.iter().zip(lo.iter().zip(&hi)).any(|(&s, (l, h))| (s == 3 && !l.is_finite()) || (s == 4 && !h.is_finite())) {
            continue;
        }
        for tight in [false, true] {
            // delta_j = dz_j - lambda * c_j on free-up, dz_j + lambda * c_j on free-down.
            let lambda = if tight {
                let mut fixed = 0.0;
                let mut base = 0.0;
                let mut slope = 0.0;
                for j in 0..d {
                    match states[j] {
                        1 => {
                            base += costs.up[j] * dz[j];
                            slope += costs.up[j] * costs.up[j];
                        }
                        2 => {
                            base -= costs.down[j] * dz[j];
                            slope += costs.down[j] * costs.down[j];
                        }
                        3 => fixed += term(j, lo[j]),
                        4 => fixed += term(j, hi[j]),
                        _ => {}
                    }
                }
                if !slope.is_finite() || slope == 0.0 {
                    continue;
                }
                (base + fixed - budget) / slope
            } else {
                0.0
            };
            if !(lambda >= 0.0) {
                continue;
            }
            let delta: Vec<f64> = (0..d)
                .map(|j| match states[j] {
                    1 => dz[j] - lambda * costs.up[j],
                    2 => dz[j] + lambda * costs.down[j],
                    3 => lo[j],
                    4 => hi[j],
                    _ => 0.0,
                })
                .collect();
            let ok = (0..d).all(|j| {
                let s = states[j];
                (s != 1 || delta[j] >= 0.0)
                    && (s != 2 || delta[j] <= 0.0)
                    && delta[j] >= lo[j] - 1e-12
                    && delta[j] <= hi[j] + 1e-12
                    && term(j, delta[j]).is_finite()
            });
            let spent: f64 = (0..d).map(|j| term(j, delta[j])).sum();
            if !ok || spent > budget + 1e-9 {
                continue;
            }
            let obj: f64 = (0..d).map(|j| (delta[j] - dz[j]).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, delta));
            }
        }
    }
    let (_, delta) = best.expect("the center is always feasible");
    (0..d).map(|j| center[j] + delta[j]).collect()
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Central differences of the composite objective in raw units, with the
/// step scaled to each feature's standardization.
pub fn fd_objective_grad(obj: &longic::inverse_opt::CompositeObjective<'_>, x: &[f64]) -> Vec<f64> {
    let s = obj.scales();
    (0..x.len())
        .map(|j| {
            let h = 1e-5 * s[j];
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            (obj.value(&a).unwrap() - obj.value(&b).unwrap()) / (2.0 * h)
        })
        .collect()
}
