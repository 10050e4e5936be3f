mod common;

use common::{fd_objective_grad, l2, projection_case, projection_oracle, rel_err, rng, small_models};
use longic::inverse_opt::*;
use longic::models::{fit_logistic, ProbabilisticClassifier};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn projection_matches_enumeration(seed in any::<u64>()) {
        let case = projection_case(&mut rng(seed));
        let got = project(&case.costs, &case.spec, &case.center, &case.z).unwrap();
        let want = projection_oracle(&case);
        prop_assert!(l2(&got, &want) < 1e-6, "{got:?} vs {want:?}");
    }

    #[test]
    fn projection_is_idempotent_and_feasible(seed in any::<u64>()) {
        let case = projection_case(&mut rng(seed));
        let p = project(&case.costs, &case.spec, &case.center, &case.z).unwrap();
        let delta: Vec<f64> = p.iter().zip(&case.center).map(|(a, b)| a - b).collect();
        prop_assert!(case.costs.cost(&delta).unwrap() <= case.spec.budget + 1e-9);
        prop_assert!(case.spec.bounds.contains(&p));
        let again = project(&case.costs, &case.spec, &case.center, &p).unwrap();
        prop_assert!(l2(&p, &again) < 1e-9);
    }
}

#[test]
fn one_dimensional_budget_moves_exactly_budget_over_cost() {
    let costs = CostModel::new(vec![2.5], vec![0.5]).unwrap();
    let spec = BudgetSpec::new(1.0, Bounds::unbounded(1)).unwrap();
    let up = project(&costs, &spec, &[0.0], &[10.0]).unwrap();
    assert!((up[0] - 1.0 / 2.5).abs() < 1e-9);
    let down = project(&costs, &spec, &[0.0], &[-10.0]).unwrap();
    assert!((down[0] + 1.0 / 0.5).abs() < 1e-9);
}

fn logistic_objective(clf: &ProbabilisticClassifier, row: Array1<f64>) -> CompositeObjective<'_> {
    CompositeObjective {
        classifier: clf,
        indirect: None,
        row,
        direct: vec![0, 1],
        direct_names: vec!["a".into(), "b".into()],
        direct_binary: vec![false, false],
        indirect_positions: vec![],
        context: vec![],
    }
}

fn toy_classifier() -> ProbabilisticClassifier {
    let mut r = rng(1);
    let x = Array2::from_shape_fn((300, 3), |_| r.random_range(-2.0..2.0));
    let y: Vec<u8> = x
        .rows()
        .into_iter()
        .map(|row| (row[0] + 0.5 * row[1] - 0.3 * row[2] + r.random_range(-0.5..0.5) > 0.0) as u8)
        .collect();
    fit_logistic(x.view(), &[false; 3], &y, 1.0).unwrap()
}

#[test]
fn zero_budget_leaves_the_patient_unchanged() {
    let clf = toy_classifier();
    let obj = logistic_objective(&clf, ndarray::arr1(&[1.0, 1.0, 0.0]));
    let costs = CostModel::symmetric(vec![1.0, 1.0]).unwrap();
    let spec = BudgetSpec::new(0.0, Bounds::unbounded(2)).unwrap();
    let rec = optimize(&obj, &costs, &spec, &SolverOptions::default()).unwrap();
    assert!(rec.delta.iter().all(|d| *d == 0.0));
    assert_eq!(rec.cost_spent, 0.0);
    assert_eq!(rec.after_probability, rec.before_probability);
}

#[test]
fn optimizer_spends_budget_on_the_cheaper_effective_direction() {
    let clf = toy_classifier();
    let obj = logistic_objective(&clf, ndarray::arr1(&[1.0, 1.0, 0.0]));
    let costs = CostModel::symmetric(vec![1.0, 1.0]).unwrap();
    let spec = BudgetSpec::new(1.0, Bounds::unbounded(2)).unwrap();
    let rec = optimize(&obj, &costs, &spec, &SolverOptions::default()).unwrap();
    assert!(rec.after_probability < rec.before_probability);
    assert!(rec.cost_spent <= 1.0 + 1e-9);
    // Feature 0 carries the larger weight, so lowering it is the whole answer.
    assert!(rec.delta[0] < 0.0 && rec.delta[1].abs() < 1e-6, "{:?}", rec.delta);
    assert!(rec.objective_trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn locked_feature_never_moves() {
    let clf = toy_classifier();
    let obj = logistic_objective(&clf, ndarray::arr1(&[1.0, 1.0, 0.0]));
    let costs = CostModel::new(vec![f64::INFINITY, 1.0], vec![f64::INFINITY, 1.0]).unwrap();
    let spec = BudgetSpec::new(3.0, Bounds::unbounded(2)).unwrap();
    let rec = optimize(&obj, &costs, &spec, &SolverOptions::default()).unwrap();
    assert_eq!(rec.delta[0], 0.0);
    assert!(rec.delta[1] < 0.0);
}

#[test]
fn bounds_clip_the_recommendation() {
    let clf = toy_classifier();
    let obj = logistic_objective(&clf, ndarray::arr1(&[1.0, 1.0, 0.0]));
    let costs = CostModel::symmetric(vec![0.1, 0.1]).unwrap();
    let bounds = Bounds::new(vec![0.5, 0.0], vec![2.0, 2.0]).unwrap();
    let spec = BudgetSpec::new(100.0, bounds.clone()).unwrap();
    let rec = optimize(&obj, &costs, &spec, &SolverOptions::default()).unwrap();
    assert!(bounds.contains(&rec.x_direct));
    assert!((rec.x_direct[0] - 0.5).abs() < 1e-9);
}

#[test]
fn sweep_is_non_increasing_and_rejects_unsorted_budgets() {
    let clf = toy_classifier();
    let obj = logistic_objective(&clf, ndarray::arr1(&[0.4, -0.2, 1.0]));
    let costs = CostModel::new(vec![1.0, 2.0], vec![3.0, 0.5]).unwrap();
    let bounds = Bounds::unbounded(2);
    let recs = sweep_budget(&obj, &costs, &bounds, &[0.0, 1.0, 2.0, 4.0], &SolverOptions::default()).unwrap();
    assert!(recs.windows(2).all(|w| w[1].after_probability <= w[0].after_probability));
    assert!(sweep_budget(&obj, &costs, &bounds, &[1.0, 0.0], &SolverOptions::default()).is_err());
}

#[test]
fn composite_gradient_matches_finite_differences() {
    let (cohort, models) = small_models(21);
    for v in 1..=cohort.n_visits() {
        let ids: Vec<String> = cohort.visit(v).unwrap().ids.iter().take(15).cloned().collect();
        let inputs = models.inputs(&cohort, v, &ids).unwrap();
        for row in inputs.rows() {
            let obj = models.objective(&cohort.schema, v, row.to_owned());
            let x = obj.current_direct();
            let (_, g) = obj.value_and_grad(&x).unwrap();
            let fd = fd_objective_grad(&obj, &x);
            let gs: Vec<f64> = g.iter().zip(obj.scales()).map(|(a, s)| a * s).collect();
            let fs: Vec<f64> = fd.iter().zip(obj.scales()).map(|(a, s)| a * s).collect();
            let norm = gs.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rel_err(norm, norm + l2(&gs, &fs), 1e-8) < 1e-4, "visit {v}: {gs:?} vs {fs:?}");
        }
    }
}

#[test]
fn cost_parsing_accepts_locked_words() {
    assert_eq!(cost_value::parse_word("locked"), Some(f64::INFINITY));
    assert_eq!(cost_value::parse_word("inf"), Some(f64::INFINITY));
    assert_eq!(cost_value::parse_word("1.5"), Some(1.5));
    assert_eq!(cost_value::parse_word("cheap"), None);
    assert!(CostModel::symmetric(vec![-1.0]).is_err());
}
