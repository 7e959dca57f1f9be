mod common;

use std::collections::BTreeMap;
use std::fs;
use std::thread;
use std::time::Duration;

use locoplan_core::bt::{EventKind, RecoveryPolicy};
use locoplan_core::client::TranscriptClient;
use locoplan_core::sim::FailureInjection;
use locoplan_core::ErrorCategory;

use locoplan_gateway::runlog::{log_path, parse_log};
use locoplan_gateway::{GatewayError, RunOptions, RunState, SubmitRequest};

use common::*;

const LONG: Duration = Duration::from_secs(30);

fn request(auto_approve: bool) -> SubmitRequest {
    SubmitRequest {
        instruction: PICK_INSTRUCTION.into(),
        seed: 3,
        auto_approve,
        ..Default::default()
    }
}

fn slow(interval_ms: u64) -> SubmitRequest {
    SubmitRequest {
        options: RunOptions {
            tick_interval_ms: interval_ms,
            ..Default::default()
        },
        ..request(true)
    }
}

#[test]
fn auto_approved_run_reaches_a_terminal_state() {
    let gw = gateway_with(pick_client(1), no_failures(), None);
    let id = gw.submit_instruction(request(true)).unwrap();
    assert_eq!(gw.wait_terminal(&id, LONG).unwrap(), RunState::Succeeded);
    let run = gw.get_run(&id).unwrap();
    assert!(!run.events.is_empty());
    assert_eq!(run.dispatch_count(), 5);
    assert_eq!(run.planning.rounds, 1);
    assert_eq!(run.result.as_ref().unwrap().events, run.events);
}

#[test]
fn empty_instruction_creates_no_run() {
    let gw = gateway_with(pick_client(1), no_failures(), None);
    let req = SubmitRequest {
        instruction: "  \n".into(),
        ..request(true)
    };
    assert!(matches!(
        gw.submit_instruction(req),
        Err(GatewayError::EmptyInstruction)
    ));
    assert!(gw.list_runs().is_empty());
}

#[test]
fn unusable_model_output_fails_the_run_in_planning() {
    let client = TranscriptClient::from_responses(["no plan here", "still none", "```json\n{\"root\": 1}\n```"]);
    let gw = gateway_with(client, no_failures(), None);
    let id = gw.submit_instruction(request(true)).unwrap();
    let run = gw.get_run(&id).unwrap();
    assert_eq!(run.state, RunState::Failed);
    assert_eq!(run.planning.rounds, 3);
    assert!(!run.planning.issues.is_empty());
    assert!(run.graph.is_none());
    assert_eq!(run.dispatch_count(), 0);
    assert_eq!(run.failure_cause(), Some(ErrorCategory::Planning));
}

#[test]
fn approval_gate() {
    let gw = gateway_with(pick_client(1), no_failures(), None);
    let id = gw.submit_instruction(request(false)).unwrap();
    assert_eq!(gw.state(&id).unwrap(), RunState::AwaitingApproval);
    assert_eq!(gw.approve(&id).unwrap(), RunState::Executing);
    assert_eq!(gw.wait_terminal(&id, LONG).unwrap(), RunState::Succeeded);
    match gw.approve(&id) {
        Err(GatewayError::InvalidTransition { from, to }) => {
            assert_eq!((from, to), (RunState::Succeeded, RunState::Executing))
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(gw.abort(&id), Err(GatewayError::InvalidTransition { .. })));
    assert!(matches!(gw.approve("nope"), Err(GatewayError::UnknownRun(_))));
    assert!(matches!(gw.stream_events("nope", 0), Err(GatewayError::UnknownRun(_))));
}

#[test]
fn abort_before_approval() {
    let gw = gateway_with(pick_client(1), no_failures(), None);
    let id = gw.submit_instruction(request(false)).unwrap();
    assert_eq!(gw.abort(&id).unwrap(), RunState::Aborted);
    assert!(gw.get_run(&id).unwrap().events.is_empty());
    assert!(matches!(gw.approve(&id), Err(GatewayError::InvalidTransition { .. })));
}

#[test]
fn abort_mid_execution_stops_between_ticks() {
    let gw = gateway_with(pick_client(1), no_failures(), None);
    let id = gw.submit_instruction(slow(20)).unwrap();
    let mut cursor = gw.stream_events(&id, 0).unwrap();
    cursor.next_event().unwrap();
    assert_eq!(gw.abort(&id).unwrap(), RunState::Aborted);
    let run = gw.get_run(&id).unwrap();
    let result = run.result.as_ref().unwrap();
    assert!(run.dispatch_count() < 5);
    // Nothing was recorded after the tick at which the abort was seen.
    assert!(run.events.iter().all(|e| e.tick <= result.ticks_used));
    let log = gw.run_log(&id).unwrap();
    let last: Vec<&str> = log.lines().rev().take(2).collect();
    assert!(last[0].contains("\"aborted\""), "{}", last[0]);
    assert!(last[1].contains("\"record\":\"result\""), "{}", last[1]);
    thread::sleep(Duration::from_millis(60));
    assert_eq!(gw.get_run(&id).unwrap().events.len(), run.events.len());
}

#[test]
fn event_feed_replay_and_subscribers() {
    let gw = gateway_with(pick_client(1), no_failures(), None);
    let id = gw.submit_instruction(slow(2)).unwrap();
    let subscribers: Vec<_> = (0..2)
        .map(|_| {
            let cursor = gw.stream_events(&id, 0).unwrap();
            thread::spawn(move || cursor.collect::<Vec<_>>())
        })
        .collect();
    let seen: Vec<_> = subscribers.into_iter().map(|h| h.join().unwrap()).collect();
    let run = gw.get_run(&id).unwrap();
    assert_eq!(seen[0], run.events);
    assert_eq!(seen[1], run.events);

    let full: Vec<_> = gw.stream_events(&id, 0).unwrap().collect();
    assert_eq!(full, run.events);
    let tail: Vec<_> = gw.stream_events(&id, 3).unwrap().collect();
    assert_eq!(tail, run.events[3..]);
    assert_eq!(gw.stream_events(&id, run.events.len() + 10).unwrap().count(), 0);
}

#[test]
fn replan_escalation_replaces_the_graph_once() {
    let replacement = r#"```json
{"format_version": 1, "root": "home", "nodes": [
  {"id": "home", "kind": "action", "skill": "navigate_to", "args": {"target": [1.5, 1.0]}}]}
```"#;
    let mut t = transcript("pick_and_place");
    t.responses
        .push(locoplan_core::client::TranscriptEntry::Text(replacement.into()));
    let mut inj = FailureInjection::seeded(0).with_default_prob(0.0);
    inj.failure_prob.insert("place_object".into(), 1.0);
    let gw = gateway_with(TranscriptClient::new(t), inj, None);
    let req = SubmitRequest {
        options: RunOptions {
            recovery: Some(RecoveryPolicy::ReplanEscalation),
            ..Default::default()
        },
        ..request(true)
    };
    let id = gw.submit_instruction(req).unwrap();
    assert_eq!(gw.wait_terminal(&id, LONG).unwrap(), RunState::Succeeded);
    let run = gw.get_run(&id).unwrap();
    assert_eq!(run.replanned_graph.as_ref().unwrap().root, "home");
    let last = run
        .events
        .iter()
        .rev()
        .find(|e| e.event == EventKind::Completed)
        .unwrap();
    assert_eq!(last.node_id, "home");
    assert!(run.events.windows(2).all(|w| w[0].tick <= w[1].tick));
}

#[test]
fn replan_happens_at_most_once() {
    let mut inj = FailureInjection::seeded(0).with_default_prob(0.0);
    inj.failure_prob.insert("place_object".into(), 1.0);
    // The replacement retries the placement, which fails again.
    let replacement = r#"```json
{"format_version": 1, "root": "place", "nodes": [
  {"id": "place", "kind": "action", "skill": "place_object", "args": {"object": "box1", "surface": "table_b"}}]}
```"#;
    let mut t = transcript("pick_and_place");
    for _ in 0..2 {
        t.responses
            .push(locoplan_core::client::TranscriptEntry::Text(replacement.into()));
    }
    let gw = gateway_with(TranscriptClient::new(t), inj, None);
    let req = SubmitRequest {
        options: RunOptions {
            recovery: Some(RecoveryPolicy::ReplanEscalation),
            ..Default::default()
        },
        ..request(true)
    };
    let id = gw.submit_instruction(req).unwrap();
    assert_eq!(gw.wait_terminal(&id, LONG).unwrap(), RunState::Failed);
    let run = gw.get_run(&id).unwrap();
    assert_eq!(run.replanned_graph.as_ref().unwrap().root, "place");
    let escalations = run
        .events
        .iter()
        .filter(|e| e.event == EventKind::Dispatched && e.node_id.ends_with("replan"))
        .count();
    assert_eq!(escalations, 2);
    assert_eq!(run.failure_cause(), Some(ErrorCategory::ExecutionDynamics));
}

#[test]
fn logs_reload_to_the_same_records_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut inj = FailureInjection::seeded(0);
    inj.default_failure_prob = Some(0.3);
    let gw = gateway_with(pick_client(12), inj.clone(), Some(dir.path()));
    let mut ids = Vec::new();
    for seed in 0..10 {
        let req = SubmitRequest {
            seed,
            options: RunOptions {
                task: if seed % 2 == 0 { "even" } else { "odd" }.into(),
                recovery: None,
                ..Default::default()
            },
            ..request(true)
        };
        ids.push(gw.submit_instruction(req).unwrap());
    }
    ids.push(gw.submit_instruction(request(false)).unwrap());
    gw.abort(ids.last().unwrap()).unwrap();
    for id in &ids {
        gw.wait_terminal(id, LONG).unwrap();
    }
    let report = gw.report_metrics(None).unwrap();
    let states: BTreeMap<_, _> = gw.list_runs().into_iter().collect();
    assert!(states.values().any(|s| *s == RunState::Failed));

    let reopened = gateway_with(pick_client(0), inj, Some(dir.path()));
    assert_eq!(reopened.list_runs().len(), ids.len());
    for id in &ids {
        assert_eq!(reopened.get_run(id).unwrap(), gw.get_run(id).unwrap());
        let on_disk = fs::read_to_string(log_path(dir.path(), id)).unwrap();
        assert_eq!(on_disk, gw.run_log(id).unwrap());
        assert_eq!(parse_log(id, &on_disk).unwrap(), gw.get_run(id).unwrap());
    }
    assert_eq!(reopened.report_metrics(None).unwrap(), report);
    assert_eq!(reopened.report_metrics(Some("odd")).unwrap().tasks.len(), 1);
    let m = &report.tasks["even"];
    assert_eq!(m.failure_breakdown.values().sum::<u64>(), m.trials - m.successes);
}

#[test]
fn identical_inputs_give_identical_log_bytes() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut inj = FailureInjection::seeded(0);
        inj.default_failure_prob = Some(0.2);
        let gw = gateway_with(pick_client(1), inj, Some(dir.path()));
        let id = gw
            .submit_instruction(SubmitRequest {
                seed: 11,
                ..request(true)
            })
            .unwrap();
        gw.wait_terminal(&id, LONG).unwrap();
        fs::read(log_path(dir.path(), &id)).unwrap()
    };
    let a = run();
    assert!(!a.is_empty());
    assert_eq!(a, run());
}

#[test]
fn torn_last_line_is_ignored() {
    let gw = gateway_with(pick_client(1), no_failures(), None);
    let id = gw.submit_instruction(request(true)).unwrap();
    gw.wait_terminal(&id, LONG).unwrap();
    let log = gw.run_log(&id).unwrap();
    let cut = log.len() - 10;
    let partial = parse_log(&id, &log[..cut]).unwrap();
    assert_eq!(partial.state, RunState::Executing);
    assert!(partial.result.is_some());
    assert!(parse_log(&id, "").is_err());
    let doubled = format!("{log}{}", log.lines().next().unwrap());
    assert!(parse_log(&id, &format!("{doubled}\n")).is_err());
}

#[test]
fn reloaded_run_can_still_be_approved() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let gw = gateway_with(pick_client(1), no_failures(), Some(dir.path()));
        gw.submit_instruction(request(false)).unwrap()
    };
    let gw = gateway_with(pick_client(0), no_failures(), Some(dir.path()));
    assert_eq!(gw.state(&id).unwrap(), RunState::AwaitingApproval);
    gw.approve(&id).unwrap();
    assert_eq!(gw.wait_terminal(&id, LONG).unwrap(), RunState::Succeeded);
    let on_disk = fs::read_to_string(log_path(dir.path(), &id)).unwrap();
    assert_eq!(on_disk, gw.run_log(&id).unwrap());
    assert_eq!(parse_log(&id, &on_disk).unwrap(), gw.get_run(&id).unwrap());
}
