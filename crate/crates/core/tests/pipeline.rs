mod common;

use common::{small_models, small_spec};
use longic::pipeline::run::GeneratorSource;
use longic::pipeline::*;
use longic::Error;

fn small_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        generator: Some(GeneratorSource::Inline(Box::new(small_spec(seed)))),
        budgets: vec![0.0, 1.0],
        ..RunConfig::default()
    }
}

#[test]
fn reruns_write_identical_reports() {
    let cfg = small_config(41);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&cfg, a.path()).unwrap();
    run(&cfg, b.path()).unwrap();
    for e in 1..=3 {
        for file in ["report.json", "series.csv"] {
            let rel = format!("experiment{e}/{file}");
            let x = std::fs::read(a.path().join(&rel)).unwrap();
            let y = std::fs::read(b.path().join(&rel)).unwrap();
            assert!(x == y, "{rel} differs between runs");
        }
    }
    assert!(a.path().join("experiment1/scores.csv").exists());
    assert!(a.path().join("timing.json").exists());
    let snapshot = std::fs::read_to_string(a.path().join("run.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&snapshot).unwrap(), cfg);
}

#[test]
fn series_file_round_trips_with_one_row_per_arm_and_visit() {
    let (cohort, models) = small_models(42);
    let report = experiment3(&cohort, &models, &Experiment3Config::default(), 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    emit_series(&report, &path).unwrap();
    let rows = read_series(&path).unwrap();
    assert_eq!(rows.len(), 9);
    for (row, point) in rows.iter().zip(&report.series) {
        assert_eq!(row, &(point.visit, point.arm.clone(), point.value));
    }
    assert_eq!(report.metric("feasibility_violations", None), Some(0.0));
}

#[test]
fn zero_budget_makes_every_strategy_the_baseline() {
    let (cohort, models) = small_models(43);
    let cfg = Experiment3Config {
        budget: 0.0,
        ..Experiment3Config::default()
    };
    let report = experiment3(&cohort, &models, &cfg, 43).unwrap();
    for v in 1..=3 {
        let base = report.series_value(ARM_BASELINE, v).unwrap();
        assert_eq!(report.series_value(ARM_A, v), Some(base));
        assert_eq!(report.series_value(ARM_B, v), Some(base));
    }
}

#[test]
fn test_split_rows_never_reach_training() {
    let (cohort, models) = small_models(44);
    let mut tampered = cohort.clone();
    for visit in &mut tampered.visits {
        for i in 0..visit.n() {
            if models.split.is_test(&visit.ids[i]) {
                visit.x.row_mut(i).mapv_inplace(|v| v * 3.0 + 7.0);
                visit.y_next[i] = 1 - visit.y_next[i];
            }
        }
    }
    let again = train_all(&tampered, &ModelConfig::default(), 44).unwrap();
    assert_eq!(again.split.test, models.split.test);
    for (a, b) in again.classifiers.iter().zip(&models.classifiers) {
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
    for (a, b) in again.indirect.iter().zip(&models.indirect) {
        assert_eq!(a, b);
    }
}

#[test]
fn split_is_seeded_and_sized() {
    let (cohort, models) = small_models(45);
    let n = cohort.visit(1).unwrap().n();
    assert_eq!(models.split.test.len(), (n as f64 * ModelConfig::default().test_fraction).round() as usize);
    let same = split_ids(&cohort, ModelConfig::default().test_fraction, 45).unwrap();
    assert_eq!(same.test, models.split.test);
    let other = split_ids(&cohort, ModelConfig::default().test_fraction, 46).unwrap();
    assert_ne!(other.test, models.split.test);
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = RunConfig::default();
    cfg.experiments = vec![1, 3];
    cfg.overrides.costs.insert(
        "exercise_hours".into(),
        run::CostOverride::Split {
            up: Some(run::CostValue(0.5)),
            down: Some(run::CostValue(f64::INFINITY)),
        },
    );
    let text = cfg.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    let parsed = RunConfig::from_toml("seed = 7\nexperiments = [2]\n[costs]\nsmoking = \"locked\"\n").unwrap();
    assert_eq!(parsed.seed, 7);
    assert_eq!(parsed.experiments, vec![2]);
    assert!(matches!(parsed.overrides.costs["smoking"], run::CostOverride::Both(run::CostValue(c)) if c.is_infinite()));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = RunConfig {
        experiments: vec![4],
        ..RunConfig::default()
    };
    match bad.validate() {
        Err(Error::Config(msg)) => assert!(msg.contains("unknown experiment 4")),
        other => panic!("{other:?}"),
    }
    let both = RunConfig {
        cohort: Some("somewhere".into()),
        ..RunConfig::default()
    };
    assert!(matches!(both.validate(), Err(Error::Config(_))));
    let neither = RunConfig {
        generator: None,
        ..RunConfig::default()
    };
    assert!(matches!(neither.validate(), Err(Error::Config(_))));
    let unsorted = RunConfig {
        budgets: vec![2.0, 1.0],
        ..RunConfig::default()
    };
    assert!(unsorted.validate().is_err());
    assert!(RunConfig::from_toml("no_such_key = 1\n").is_err());
}

#[test]
fn overrides_reject_unknown_or_non_direct_features() {
    let cohort = common::small_cohort(46);
    let mut o = run::Overrides::default();
    o.costs.insert("nonexistent".into(), run::CostOverride::Both(run::CostValue(1.0)));
    assert!(matches!(o.apply(&cohort), Err(Error::Config(_))));
    let mut o = run::Overrides::default();
    o.costs.insert("age".into(), run::CostOverride::Both(run::CostValue(1.0)));
    assert!(matches!(o.apply(&cohort), Err(Error::Config(_))));
    let mut o = run::Overrides::default();
    o.bounds.insert(
        "sodium".into(),
        run::BoundOverride {
            lower: Some(5.0),
            upper: Some(1.0),
        },
    );
    assert!(o.apply(&cohort).is_err());
}

#[test]
fn documented_run_config_parses() {
    let readme = include_str!("../../../README.md");
    let section = &readme[readme.find("### Run config").unwrap()..];
    let start = section.find("```toml\n").unwrap() + "```toml\n".len();
    let block = &section[start..start + section[start..].find("```").unwrap()];
    let cfg = RunConfig::from_toml(block).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.model.hyper.svm.c, 0.5);
    assert_eq!(cfg.overrides.costs.len(), 2);
    let cohort = common::small_cohort(47);
    cfg.overrides.apply(&cohort).unwrap();
    let fixed = RunConfig::from_toml("[model]\nbandwidth = { fixed = 0.3 }\n").unwrap();
    assert_eq!(fixed.model.bandwidth, longic::indirect::Bandwidth::Fixed(0.3));
}
