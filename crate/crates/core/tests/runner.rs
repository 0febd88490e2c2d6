mod common;

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mock_endpoint::{MockEndpoint, Reply};
use promptjoule::metrics::{Normalization, ScoringConfig};
use promptjoule::prompt::{ConfigId, Pet};
use promptjoule::runner::{
    load_manifest, load_records, raw_answer_file, records_file, rescore, resume, run_experiment, RunError, RunState,
    MANIFEST_FILE,
};
use promptjoule::{RunOptions, RunStatus};

fn quick() -> RunOptions {
    RunOptions { retry_backoff: Some(Duration::from_millis(5)), ..RunOptions::default() }
}

#[test]
fn full_grid_for_one_snippet() {
    let tmp = tempfile::tempdir().unwrap();
    let server = common::mock();
    let trace = common::write_trace(tmp.path(), 50_000.0);
    let plan = common::plan(&server.base_url(), &trace, 1, 5);
    let out = tmp.path().join("run");
    let manifest = run_experiment(&plan, &out, &quick()).unwrap();
    assert_eq!(manifest.status, RunState::Complete);
    assert_eq!((manifest.planned_runs, manifest.ok_runs, manifest.failed_runs), (75, 75, 0));
    // warm-up plus every recorded run
    assert_eq!(server.requests(), 76);

    let records = load_records(&out).unwrap();
    assert_eq!(records.len(), 75);
    let keys: HashSet<_> = records.iter().map(|r| (r.pet, r.config, r.repetition)).collect();
    assert_eq!(keys.len(), 75);
    for (rec, cell) in records.iter().zip(plan.cells()) {
        assert_eq!((rec.pet, rec.config, rec.repetition), (cell.pet, cell.config, cell.repetition));
        assert_eq!(rec.status, RunStatus::Ok);
        assert_eq!(rec.question, plan.render(&cell).unwrap());
        let raw = std::fs::read_to_string(raw_answer_file(&out, &cell)).unwrap();
        assert_eq!(Some(&raw), rec.answer.as_ref());
        let m = rec.measurement.unwrap();
        assert!(m.duration > 0.0 && m.n_samples >= 1);
        // windows shorter than one sampling interval integrate to zero
        assert_eq!(m.gpu_energy > 0.0, m.n_samples >= 2);
        assert!(m.gpu_energy <= 50_000.0 * m.duration / 3.6e9 * (1.0 + 1e-12));
        assert!(rec.completed_at >= rec.dispatched_at);
    }
    let manifest = load_manifest(&out).unwrap();
    assert_eq!(manifest.plan, plan);
    assert_eq!(manifest.environment.model["id"], common::MODEL);
    assert!(manifest.environment.meter.gpu_source.contains("simulated"));
    assert!(records_file(&out, 0).exists());

    // the log shows the sent messages in plan order, after the warm-up
    let log = server.request_log();
    for (req, rec) in log[1..].iter().zip(&records) {
        let sent: Vec<_> = req.messages.iter().map(|m| m.content.as_str()).collect();
        let planned: Vec<_> = rec.question.messages.iter().map(|m| m.content.as_str()).collect();
        assert_eq!(sent, planned);
    }

    assert!(matches!(run_experiment(&plan, &out, &quick()), Err(RunError::AlreadyExists(_))));
}

#[test]
fn minimal_plan_runs_once() {
    let tmp = tempfile::tempdir().unwrap();
    let server = common::mock();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 1, 1);
    plan.pets = vec![Pet::zero_shot()];
    plan.configs = vec![ConfigId::C0];
    let out = tmp.path().join("run");
    let opts = RunOptions { warmup: false, ..quick() };
    let manifest = run_experiment(&plan, &out, &opts).unwrap();
    assert_eq!(manifest.status, RunState::Complete);
    assert_eq!(server.requests(), 1);
    let records = load_records(&out).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].scored.as_ref().unwrap().exact);
}

#[test]
fn pause_separates_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let server = common::mock();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 1, 2);
    plan.pets = vec![Pet::zero_shot()];
    plan.configs = vec![ConfigId::C0, ConfigId::C1];
    plan.pause = 0.2;
    let out = tmp.path().join("run");
    run_experiment(&plan, &out, &quick()).unwrap();
    let records = load_records(&out).unwrap();
    assert_eq!(records.len(), 4);
    for pair in records.windows(2) {
        let gap = (pair[1].dispatched_at - pair[0].completed_at).to_std().unwrap();
        assert!(gap >= Duration::from_millis(200), "gap {gap:?}");
    }
}

#[test]
fn resume_is_noop_when_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let server = common::mock();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 2, 1);
    plan.pets = vec![Pet::one_shot()];
    let out = tmp.path().join("run");
    run_experiment(&plan, &out, &quick()).unwrap();
    let before = server.requests();
    let records = std::fs::read(records_file(&out, 1)).unwrap();
    let manifest = resume(&out, None, &quick()).unwrap();
    assert_eq!(manifest.status, RunState::Complete);
    assert_eq!(server.requests(), before);
    assert_eq!(std::fs::read(records_file(&out, 1)).unwrap(), records);
}

#[test]
fn resume_reruns_missing_and_failed_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let fail = Arc::new(AtomicBool::new(true));
    let flag = fail.clone();
    // every 4th request fails while the flag is set
    let server = MockEndpoint::builder()
        .model(common::MODEL)
        .responder(move |req| {
            if flag.load(Ordering::SeqCst) && req.sequence % 4 == 0 {
                Reply::Status(500, "overloaded".into())
            } else {
                common::scripted(req)
            }
        })
        .spawn()
        .unwrap();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 3, 1);
    plan.pets = vec![Pet::zero_shot(), Pet::few_shot(5).unwrap()];
    let out = tmp.path().join("run");
    let first = run_experiment(&plan, &out, &quick()).unwrap();
    assert_eq!(first.status, RunState::Interrupted);
    assert!(first.failed_runs > 0);
    assert_eq!(first.ok_runs + first.failed_runs, 30);
    let failed: Vec<_> = load_records(&out).unwrap().into_iter().filter(|r| r.status == RunStatus::Failed).collect();
    assert!(failed.iter().all(|r| r.failure.as_deref().unwrap().contains("500") && r.measurement.is_none()));

    fail.store(false, Ordering::SeqCst);
    std::fs::remove_file(records_file(&out, 2)).unwrap();
    let resumed = resume(&out, None, &quick()).unwrap();
    assert_eq!(resumed.status, RunState::Complete);
    assert_eq!((resumed.ok_runs, resumed.failed_runs), (30, 0));
    let records = load_records(&out).unwrap();
    assert_eq!(records.len(), 30);
    let cells: HashSet<_> = records.iter().map(|r| (r.snippet_id.clone(), r.pet, r.config, r.repetition)).collect();
    assert_eq!(cells.len(), 30);
    assert!(records.iter().all(|r| r.status == RunStatus::Ok));
}

#[test]
fn tampered_plan_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let server = common::mock();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 1, 1);
    plan.configs = vec![ConfigId::C0];
    let out = tmp.path().join("run");
    run_experiment(&plan, &out, &quick()).unwrap();
    let path = out.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"repetitions\": 1", "\"repetitions\": 2", 1)).unwrap();
    assert_ne!(std::fs::read_to_string(&path).unwrap(), text, "edit must land");
    assert!(matches!(resume(&out, None, &quick()), Err(RunError::PlanMismatch(_))));
}

#[test]
fn foreign_records_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let server = common::mock();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 2, 1);
    plan.pets = vec![Pet::zero_shot()];
    let out = tmp.path().join("run");
    run_experiment(&plan, &out, &quick()).unwrap();
    // snippet 0's records filed under snippet 1
    std::fs::copy(records_file(&out, 0), records_file(&out, 1)).unwrap();
    assert!(matches!(resume(&out, None, &quick()), Err(RunError::PlanMismatch(_))));
}

#[test]
fn endpoint_down_aborts_with_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    let server = common::mock();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let plan = common::plan(&server.base_url(), &trace, 1, 2);
    let out = tmp.path().join("run");
    let killer = std::thread::spawn(move || {
        while server.requests() < 12 {
            std::thread::sleep(Duration::from_millis(1));
        }
        server.shutdown();
    });
    let mut opts = quick();
    opts.cancel = None;
    let plan2 = plan.clone();
    let err = run_experiment(&plan2, &out, &opts).unwrap_err();
    killer.join().unwrap();
    let RunError::EndpointDown { completed, planned, .. } = err else { panic!("{err}") };
    assert_eq!(planned, 30);
    assert!((10..30).contains(&completed), "completed {completed}");
    let manifest = load_manifest(&out).unwrap();
    assert_eq!(manifest.status, RunState::Aborted);
    let records = load_records(&out).unwrap();
    assert_eq!(records.iter().filter(|r| r.status == RunStatus::Ok).count(), completed);
}

#[test]
fn rescore_rewrites_scores_from_raw_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let server = MockEndpoint::builder()
        .model(common::MODEL)
        .responder(|_| Reply::Text("```java\npublic int getSize() {\n```".into()))
        .spawn()
        .unwrap();
    let trace = common::write_trace(tmp.path(), 10_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 1, 1);
    plan.pets = vec![Pet::zero_shot()];
    let out = tmp.path().join("run");
    run_experiment(&plan, &out, &quick()).unwrap();
    assert!(load_records(&out).unwrap().iter().all(|r| r.scored.as_ref().unwrap().exact));

    let strict = ScoringConfig {
        normalization: Normalization { strip_fences: false, ..Normalization::default() },
        ..ScoringConfig::default()
    };
    let summary = rescore(&out, &strict).unwrap();
    assert_eq!((summary.rescored, summary.changed), (5, 5));
    let records = load_records(&out).unwrap();
    assert!(records.iter().all(|r| !r.scored.as_ref().unwrap().exact));
    assert_eq!(load_manifest(&out).unwrap().scoring, strict);
    assert_eq!(rescore(&out, &strict).unwrap().changed, 0);
}

#[test]
fn real_window_matches_constant_power() {
    let tmp = tempfile::tempdir().unwrap();
    let server = MockEndpoint::builder()
        .model(common::MODEL)
        .responder(|req| Reply::Delayed(Duration::from_secs(1), Box::new(common::scripted(req))))
        .spawn()
        .unwrap();
    let trace = common::write_trace(tmp.path(), 100_000.0);
    let mut plan = common::plan(&server.base_url(), &trace, 1, 1);
    plan.pets = vec![Pet::zero_shot()];
    plan.configs = vec![ConfigId::C1];
    let out = tmp.path().join("run");
    run_experiment(&plan, &out, &RunOptions { warmup: false, ..quick() }).unwrap();
    let rec = &load_records(&out).unwrap()[0];
    let m = rec.measurement.unwrap();
    assert!((1.0..1.2).contains(&m.duration), "duration {}", m.duration);
    let expected = 100_000.0 * m.duration / 3.6e9;
    assert!((m.gpu_energy - expected).abs() <= 0.02 * expected, "{} vs {expected}", m.gpu_energy);
    assert!((m.gpu_energy - 2.78e-5).abs() <= 0.2 * 2.78e-5);
    assert!(m.n_samples >= 50);
    assert!(rec.latency.unwrap() <= m.duration + 0.05);
}
