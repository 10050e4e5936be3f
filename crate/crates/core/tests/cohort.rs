mod common;

use common::{rng, small_cohort};
use longic::cohort::*;
use longic::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn visit(v: usize, ids: &[&str], events: &[u8]) -> VisitDataset {
    VisitDataset {
        visit: v,
        ids: ids.iter().map(|s| s.to_string()).collect(),
        x: Array2::zeros((ids.len(), 1)),
        y_next: events.to_vec(),
        present: vec![0],
    }
}

#[test]
fn new_instance_at_a_later_visit_breaks_continuity() {
    let visits = [visit(1, &["a", "b"], &[0, 0]), visit(2, &["a", "c"], &[0, 0])];
    match check_longitudinal(&visits) {
        Err(Error::ContinuityViolated { visit: 2, id, .. }) => assert_eq!(id, "c"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn instance_after_its_event_breaks_exclusion() {
    let visits = [
        visit(1, &["a", "b"], &[1, 0]),
        visit(2, &["b"], &[0]),
        visit(3, &["a", "b"], &[0, 0]),
    ];
    assert!(matches!(
        check_longitudinal(&visits),
        Err(Error::ExclusionViolated { event_visit: 1, visit: 3, .. }) | Err(Error::ContinuityViolated { .. })
    ));
    let two = [visit(1, &["a", "b"], &[1, 0]), visit(2, &["a", "b"], &[0, 0])];
    assert!(matches!(check_longitudinal(&two), Err(Error::ExclusionViolated { event_visit: 1, visit: 2, .. })));
}

#[test]
fn exclusion_filter_drops_only_post_event_rows() {
    let visits = [
        visit(1, &["a", "b", "c"], &[1, 0, 0]),
        visit(2, &["a", "b", "c"], &[0, 1, 0]),
        visit(3, &["a", "b", "c"], &[0, 0, 0]),
    ];
    let out = enforce_exclusion(&visits);
    assert_eq!(out[0].ids, ["a", "b", "c"]);
    assert_eq!(out[1].ids, ["b", "c"]);
    assert_eq!(out[2].ids, ["c"]);
    check_longitudinal(&out).unwrap();
}

fn random_visits(seed: u64) -> Vec<VisitDataset> {
    let mut r = rng(seed);
    let n = r.random_range(1..30);
    let mut alive: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    let mut out = Vec::new();
    for v in 1..=r.random_range(1..5) {
        // Random attrition, and events that the filter has to clean up.
        alive.retain(|_| r.random::<f64>() < 0.85);
        let events: Vec<u8> = alive.iter().map(|_| (r.random::<f64>() < 0.3) as u8).collect();
        let ids: Vec<&str> = alive.iter().map(String::as_str).collect();
        out.push(visit(v, &ids, &events));
    }
    out
}

proptest! {
    #[test]
    fn exclusion_filter_is_idempotent_and_valid(seed in any::<u64>()) {
        let visits = random_visits(seed);
        let once = enforce_exclusion(&visits);
        prop_assert!(check_longitudinal(&once).is_ok());
        prop_assert_eq!(enforce_exclusion(&once), once.clone());
        for (a, b) in visits.iter().zip(&once) {
            prop_assert!(b.ids.iter().all(|id| a.ids.contains(id)));
        }
    }
}

#[test]
fn cohort_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = small_cohort(3);
    write_cohort_dir(dir.path(), &cohort).unwrap();
    let back = load_cohort_dir(dir.path()).unwrap();
    assert_eq!(back.visits, cohort.visits);
    assert_eq!(back.schema, cohort.schema);
    assert_eq!(back.cost_model, cohort.cost_model);
}

fn tamper(edit: impl Fn(&str) -> String, file: &str) -> Error {
    let dir = tempfile::tempdir().unwrap();
    write_cohort_dir(dir.path(), &small_cohort(4)).unwrap();
    let path = dir.path().join(file);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, edit(&text)).unwrap();
    load_cohort_dir(dir.path()).unwrap_err()
}

#[test]
fn loading_rejects_broken_files() {
    // An id that never appeared at visit 1.
    let err = tamper(
        |t| {
            let mut lines: Vec<String> = t.lines().map(String::from).collect();
            let first = lines[1].split_once(',').unwrap().1.to_string();
            lines[1] = format!("stranger,{first}");
            lines.join("\n") + "\n"
        },
        "visit_2.csv",
    );
    assert!(matches!(err, Error::ContinuityViolated { .. }), "{err}");

    let err = tamper(
        |t| {
            let mut lines: Vec<String> = t.lines().map(String::from).collect();
            lines[2] = lines[1].clone();
            lines.join("\n") + "\n"
        },
        "visit_1.csv",
    );
    assert!(matches!(err, Error::DuplicateId { .. }), "{err}");

    let err = tamper(
        |t| {
            let mut lines: Vec<String> = t.lines().map(String::from).collect();
            let (head, _) = lines[1].rsplit_once(',').unwrap();
            lines[1] = format!("{head},2");
            lines.join("\n") + "\n"
        },
        "visit_1.csv",
    );
    assert!(matches!(err, Error::NonBinary { .. } | Error::Csv { .. }), "{err}");
}

#[test]
fn missing_features_follow_the_schedule() {
    let cohort = small_cohort(5);
    assert!(missing_feature_set(&cohort, 1).unwrap().is_empty());
    let m2 = missing_feature_set(&cohort, 2).unwrap();
    let m3 = missing_feature_set(&cohort, 3).unwrap();
    assert_eq!(m2.len(), 4);
    assert_eq!(m3.len(), 8);
    assert!(m2.iter().all(|f| m3.contains(f)));
    for f in m3 {
        assert!(!cohort.partition.direct.contains(&f));
    }
}
