//! End-to-end acceptance checks on the default generator. Prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

mod common;

use std::time::Instant;

use common::{fd_objective_grad, l2, projection_case, projection_oracle, rng};
use longic::cohort::{check_longitudinal, enforce_exclusion, Cohort, PartitionTag};
use longic::inverse_opt::project;
use longic::pipeline::*;
use longic::synth::{default_spec, generate, GeneratorSpec};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

const DEFAULT_SEED: u64 = 20240601;

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Line {
    Line { name, pass, detail }
}

fn projection_oracle_check() -> Line {
    let start = Instant::now();
    let mut r = rng(0xacce);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let case = projection_case(&mut r);
        let got = project(&case.costs, &case.spec, &case.center, &case.z).expect("projection");
        worst = worst.max(l2(&got, &projection_oracle(&case)));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        "projection matches exhaustive oracle",
        worst < 1e-4 && secs < 60.0,
        format!("1000 instances, max l2 {worst:.2e}, {secs:.1} s"),
    )
}

fn gradient_check(cohort: &Cohort, models: &TrainedModels) -> Line {
    let start = Instant::now();
    let mut r = rng(0x9bad);
    let mut worst = 0.0_f64;
    let mut points = 0;
    for v in 1..=models.n_visits() {
        let mut ids = cohort.visit(v).unwrap().ids.clone();
        ids.shuffle(&mut r);
        ids.truncate(100);
        let inputs = models.inputs(cohort, v, &ids).unwrap();
        for row in inputs.rows() {
            let obj = models.objective(&cohort.schema, v, row.to_owned());
            let s = obj.scales();
            // Random direct values within one scale of the patient, kept in bounds.
            let x: Vec<f64> = obj
                .current_direct()
                .iter()
                .enumerate()
                .map(|(j, c)| (c + s[j] * r.random_range(-1.0..1.0)).clamp(cohort.bounds.lower[j], cohort.bounds.upper[j]))
                .collect();
            let (_, g) = obj.value_and_grad(&x).unwrap();
            let fd = fd_objective_grad(&obj, &x);
            let gs: Vec<f64> = g.iter().zip(&s).map(|(a, b)| a * b).collect();
            let fs: Vec<f64> = fd.iter().zip(&s).map(|(a, b)| a * b).collect();
            let norm = gs.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(l2(&gs, &fs) / norm.max(1e-10));
            points += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        "composite gradient matches finite differences",
        worst < 1e-4 && secs < 30.0,
        format!("{points} points over {} visit models, max relative error {worst:.2e}, {secs:.1} s", models.n_visits()),
    )
}

fn feasibility_and_monotonicity(cohort: &Cohort, models: &TrainedModels) -> (Line, Line) {
    let mut ids = cohort.visit(1).unwrap().ids.clone();
    ids.shuffle(&mut rng(0xfea5));
    ids.truncate(200);
    let solver = &models.config.solver;
    let mut violations = 0;
    let mut nonzero_at_zero = 0;
    let mut rising_traces = 0;
    let mut runs = 0;
    let mut rising_sweeps = 0;
    for id in &ids {
        for budget in [0.0, 0.5, 2.0] {
            let rec = recommend_patient(models, cohort, id, budget, &cohort.cost_model, &cohort.bounds, CarryMode::Delta, solver)
                .unwrap();
            let spent = cohort.cost_model.cost(&rec.delta_std).unwrap();
            if !(spent <= budget + 1e-9) || !cohort.bounds.contains(&rec.x_direct) {
                violations += 1;
            }
            if budget == 0.0 && rec.delta.iter().any(|d| *d != 0.0) {
                nonzero_at_zero += 1;
            }
            runs += 1;
            rising_traces += usize::from(rec.objective_trace.windows(2).any(|w| w[1] > w[0]));
        }
        let sweep = sweep_patient(models, cohort, id, &[0.0, 1.0, 2.0, 4.0], &cohort.cost_model, &cohort.bounds, solver).unwrap();
        runs += sweep.len();
        rising_traces += sweep.iter().filter(|r| r.objective_trace.windows(2).any(|w| w[1] > w[0])).count();
        rising_sweeps += usize::from(sweep.windows(2).any(|w| w[1].after_probability > w[0].after_probability));
    }
    (
        check(
            "recommendations respect budget and bounds",
            violations == 0 && nonzero_at_zero == 0,
            format!("{} patients x 3 budgets: {violations} violations, {nonzero_at_zero} non-zero moves at B=0", ids.len()),
        ),
        check(
            "descent traces and budget sweeps are monotone",
            rising_traces == 0 && rising_sweeps == 0,
            format!("{runs} optimizer runs with {rising_traces} rising traces; {rising_sweeps}/{} sweeps rising", ids.len()),
        ),
    )
}

fn stage_seconds(dir: &std::path::Path, stage: &str) -> f64 {
    let text = std::fs::read_to_string(dir.join(run::TIMING_FILE)).unwrap();
    let rows: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    rows.iter()
        .filter(|r| r["stage"] == stage)
        .map(|r| r["seconds"].as_f64().unwrap())
        .sum()
}

fn experiment1_check(report: &ExperimentReport, secs: f64) -> Line {
    let beats = report.metric("learned_beats_carry", None).unwrap_or(0.0);
    let continuous = report.metric("continuous_holdouts", None).unwrap_or(0.0);
    let scores = report.scores.as_ref().expect("score table");
    let binary: Vec<(String, f64)> = scores
        .rows
        .iter()
        .filter(|r| r.metric_name == "auc")
        .filter_map(|r| Some((r.feature.clone(), scores.cell(&r.feature, "logistic")?)))
        .collect();
    let best_binary = binary.iter().map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
    check(
        "imputation: learned estimators beat carry-forward",
        continuous == 3.0 && beats >= 2.0 && best_binary >= 0.8 && secs < 120.0,
        format!("{beats}/{continuous} continuous beaten, logistic AUC {binary:?}, {secs:.1} s"),
    )
}

fn experiment2_check(report: &ExperimentReport, secs: f64) -> Line {
    let g2 = report.metric("auc_gap", Some(2)).unwrap_or(f64::NAN);
    let g3 = report.metric("auc_gap", Some(3)).unwrap_or(f64::NAN);
    check(
        "risk columns match the concatenated history in AUC",
        g2.abs() < 0.05 && g3.abs() < 0.05 && secs < 300.0,
        format!("AUC gap v2 {g2:+.4}, v3 {g3:+.4}, {secs:.1} s including training"),
    )
}

fn experiment3_check(first: &ExperimentReport, first_secs: f64) -> Line {
    let start = Instant::now();
    let mut reports = vec![first.clone()];
    for seed in DEFAULT_SEED + 1..DEFAULT_SEED + 5 {
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let cohort = cfg.load_cohort().unwrap();
        let models = cfg.train(&cohort).unwrap();
        reports.push(experiment3(&cohort, &models, &cfg.experiment3, seed).unwrap());
    }
    let secs = first_secs + start.elapsed().as_secs_f64();
    let mean = |arm: &str, v: usize| reports.iter().map(|r| r.series_value(arm, v).unwrap()).sum::<f64>() / reports.len() as f64;
    let (b2, a2, s2) = (mean(ARM_BASELINE, 2), mean(ARM_A, 2), mean(ARM_B, 2));
    let (b3, a3, s3) = (mean(ARM_BASELINE, 3), mean(ARM_A, 3), mean(ARM_B, 3));
    let violations: f64 = reports.iter().filter_map(|r| r.metric("feasibility_violations", None)).sum();
    check(
        "acting lowers mean risk and re-acting helps",
        a2 < b2 && s2 < b2 && a3 < b3 && s3 < b3 && s2 <= a2 && s3 <= a3 + 0.01 && violations == 0.0 && secs < 600.0,
        format!(
            "5 seeds at B=2: v2 baseline {b2:.5} a {a2:.5} b {s2:.5}; v3 baseline {b3:.5} a {a3:.5} b {s3:.5}; {secs:.0} s"
        ),
    )
}

fn random_spec(r: &mut impl Rng, seed: u64) -> GeneratorSpec {
    let mut spec = GeneratorSpec {
        seed,
        n1: r.random_range(60..300),
        visits: r.random_range(2..=5),
        event_rate: r.random_range(0.03..0.3),
        drift: r.random_range(0.0..0.9),
        ..default_spec()
    };
    let mut droppable: Vec<String> = spec
        .features
        .iter()
        .filter(|f| f.partition != PartitionTag::Direct)
        .map(|f| f.name.clone())
        .collect();
    droppable.shuffle(r);
    let mut taken = 0;
    spec.missing = (2..=spec.visits)
        .map(|_| {
            taken = (taken + r.random_range(0..4)).min(droppable.len() - 1);
            droppable[..taken].to_vec()
        })
        .collect();
    spec
}

fn longitudinal_check() -> Line {
    let mut r = rng(0x1e9);
    let mut failures = Vec::new();
    for k in 0..50u64 {
        let spec = random_spec(&mut r, 1000 + k);
        let outcome = (|| -> Result<(), String> {
            spec.validate().map_err(|e| e.to_string())?;
            let cohort = generate(&spec).map_err(|e| e.to_string())?;
            cohort.validate().map_err(|e| e.to_string())?;
            check_longitudinal(&cohort.visits).map_err(|e| e.to_string())?;
            let filtered = enforce_exclusion(&cohort.visits);
            if filtered != cohort.visits {
                return Err("filter changed a valid cohort".into());
            }
            // Put post-event instances back into visit 2 and filter again.
            let mut dirty = cohort.visits.clone();
            let returning: Vec<String> = cohort.visits[0]
                .ids
                .iter()
                .zip(&cohort.visits[0].y_next)
                .filter(|(_, &y)| y == 1)
                .map(|(id, _)| id.clone())
                .collect();
            let v2 = &mut dirty[1];
            v2.ids.extend(returning.iter().cloned());
            v2.y_next.extend(std::iter::repeat_n(0, returning.len()));
            let width = v2.x.ncols();
            v2.x = ndarray::concatenate![ndarray::Axis(0), v2.x, Array2::zeros((returning.len(), width))];
            if !returning.is_empty() && check_longitudinal(&dirty).is_ok() {
                return Err("returning instances went unnoticed".into());
            }
            let once = enforce_exclusion(&dirty);
            check_longitudinal(&once).map_err(|e| e.to_string())?;
            if enforce_exclusion(&once) != once {
                return Err("filter is not idempotent".into());
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            failures.push(format!("spec {k}: {e}"));
        }
    }
    check(
        "continuity and exclusion hold on random specs",
        failures.is_empty(),
        if failures.is_empty() {
            "50 specs valid, filter idempotent".into()
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let mut lines = vec![projection_oracle_check()];
    println!("{}", render(lines.last().unwrap()));

    let cfg = RunConfig::default();
    let cohort = cfg.load_cohort().unwrap();
    let models = cfg.train(&cohort).unwrap();
    lines.push(gradient_check(&cohort, &models));
    println!("{}", render(lines.last().unwrap()));
    let (feasible, monotone) = feasibility_and_monotonicity(&cohort, &models);
    for l in [feasible, monotone] {
        println!("{}", render(&l));
        lines.push(l);
    }

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let outcome = run(&cfg, a.path()).unwrap();
    run(&cfg, b.path()).unwrap();
    let report = |e: u8| outcome.reports.iter().find(|r| r.experiment == e).unwrap();
    let train = stage_seconds(a.path(), "train");
    for l in [
        experiment1_check(report(1), stage_seconds(a.path(), "experiment1")),
        experiment2_check(report(2), train + stage_seconds(a.path(), "experiment2")),
        experiment3_check(report(3), train + stage_seconds(a.path(), "experiment3")),
        longitudinal_check(),
    ] {
        println!("{}", render(&l));
        lines.push(l);
    }

    let mut differing = Vec::new();
    for e in 1..=3 {
        for file in ["report.json", "series.csv"] {
            let rel = format!("experiment{e}/{file}");
            if std::fs::read(a.path().join(&rel)).unwrap() != std::fs::read(b.path().join(&rel)).unwrap() {
                differing.push(rel);
            }
        }
    }
    lines.push(check(
        "reruns are byte-identical",
        differing.is_empty(),
        if differing.is_empty() {
            "reports and series of experiments 1-3 identical across two runs".into()
        } else {
            format!("differing: {differing:?}")
        },
    ));
    println!("{}", render(lines.last().unwrap()));

    let failed = lines.iter().filter(|l| !l.pass).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn render(l: &Line) -> String {
    format!("{} {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.name, l.detail)
}
