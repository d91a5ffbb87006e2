use std::sync::Arc;

use empower_core::corpus::{IoMode, Problem, TestCase};
use empower_core::simulator::{AssistantPolicy, PolicyError, PolicyInput, ScriptedAssistant, Suggestion};
use empower_service::events::load_log;
use empower_service::{
    study_report, Arm, ClientEvent, EventBody, ReportFilter, Service, ServiceError, ServiceSettings, SuggestRequest,
};
use empower_service::state::EventBatch;

fn problems() -> Vec<Problem> {
    vec![Problem {
        id: "two-sum".into(),
        statement: "Add two numbers.".into(),
        starter_code: "class Solution:\n".into(),
        io_mode: IoMode::Functional,
        testcases: vec![TestCase { input: "1 2\n".into(), output: "3\n".into() }],
    }]
}

struct Failing;
impl AssistantPolicy for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn suggest(&self, _: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
        Err(PolicyError::Transport("backend down".into()))
    }
}

fn arms() -> Vec<Arm> {
    vec![
        Arm {
            name: "empower-eta4-secretmodel".into(),
            policy: Arc::new(ScriptedAssistant::new("x", vec!["    def add(self):".into(), String::new()])),
        },
        Arm { name: "base20-othermodel".into(), policy: Arc::new(ScriptedAssistant::new("y", vec!["abcdefghijklmnopqrst".into()])) },
    ]
}

fn open(dir: &std::path::Path, seed: u64) -> Service {
    Service::open(ServiceSettings { seed, ..Default::default() }, arms(), problems(), &dir.join("events.jsonl")).unwrap()
}

fn ev(seq: u64, body: EventBody) -> ClientEvent {
    ClientEvent { seq, timestamp: 1_000 + seq, body }
}

fn label_for(svc: &Service, session_id: &str, arm: &str) -> String {
    let view = svc.session_view(session_id).unwrap();
    let order = svc.arm_order(&view.participant_label, &view.problem_id);
    let idx = order.iter().position(|a| a == arm).unwrap();
    view.labels[idx].clone()
}

#[test]
fn arm_order_is_replayable_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path(), 7);
    let a = svc.create_session("P01", "two-sum").unwrap();
    let b = svc.create_session("P01", "two-sum").unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(svc.arm_order("P01", "two-sum"), svc.arm_order("P01", "two-sum"));
    assert_eq!(a.labels, vec!["Assistant 1", "Assistant 2", "No Assistant"]);

    let n = 1000;
    let first = (0..n)
        .filter(|k| svc.arm_order(&format!("participant-{k}"), "two-sum")[0] == "empower-eta4-secretmodel")
        .count();
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((first as f64 - n as f64 / 2.0).abs() <= 3.0 * sigma, "{first} of {n}");
}

#[test]
fn unknown_problem_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path(), 0);
    assert!(matches!(svc.create_session("P", "nope"), Err(ServiceError::UnknownProblem(_))));
}

#[test]
fn suggestions_route_by_label_and_degrade_on_failure() {
    let dir = tempfile::tempdir().unwrap();
    let arms = vec![
        Arm { name: "ok".into(), policy: Arc::new(ScriptedAssistant::new("x", vec!["tail".into()])) },
        Arm { name: "broken".into(), policy: Arc::new(Failing) },
    ];
    let svc = Service::open(ServiceSettings::default(), arms, problems(), &dir.path().join("e.jsonl")).unwrap();
    let s = svc.create_session("P", "two-sum").unwrap();
    let req = |label: String| SuggestRequest { session_id: s.session_id.clone(), arm_label: label, buffer: "ab".into(), cursor: 2 };

    let ok = svc.suggest(&req(label_for(&svc, &s.session_id, "ok"))).unwrap();
    assert_eq!(ok.text, "tail");
    assert!(ok.suggestion_id.is_some());
    let broken = svc.suggest(&req(label_for(&svc, &s.session_id, "broken"))).unwrap();
    assert_eq!(broken.text, "");
    assert!(broken.suggestion_id.is_none());
    let none = svc.suggest(&req("No Assistant".into())).unwrap();
    assert!(none.text.is_empty());
    assert!(matches!(svc.suggest(&req("Assistant 9".into())), Err(ServiceError::UnknownArm(_))));

    let kinds: Vec<String> = load_log(svc.log_path())
        .unwrap()
        .iter()
        .filter_map(|r| match r {
            empower_service::LogRecord::Event(e) => Some(serde_json::to_value(&e.body).unwrap()["kind"].as_str().unwrap().to_string()),
            _ => None,
        })
        .collect();
    assert_eq!(kinds, vec!["SUGGESTION_SHOWN", "SUGGEST_ERROR"]);
    let report = svc.report(&ReportFilter::default()).unwrap();
    assert_eq!(report.arms["broken"].suggest_errors, 1);
}

#[test]
fn empty_suggestion_is_not_logged() {
    let dir = tempfile::tempdir().unwrap();
    let arms = vec![Arm { name: "quiet".into(), policy: Arc::new(ScriptedAssistant::new("q", vec![String::new()])) }];
    let svc = Service::open(ServiceSettings::default(), arms, problems(), &dir.path().join("e.jsonl")).unwrap();
    let s = svc.create_session("P", "two-sum").unwrap();
    let r = svc
        .suggest(&SuggestRequest { session_id: s.session_id, arm_label: "Assistant 1".into(), buffer: String::new(), cursor: 0 })
        .unwrap();
    assert!(r.text.is_empty());
    assert_eq!(svc.report(&ReportFilter::default()).unwrap().n_events, 0);
}

#[test]
fn cursor_mode_completes_before_cursor() {
    struct Echo;
    impl AssistantPolicy for Echo {
        fn name(&self) -> &str {
            "echo"
        }
        fn suggest(&self, input: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
            Ok(Suggestion::new(format!("<{}>", input.state)))
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let mk = |mode, file: &str| {
        let settings = ServiceSettings { completion_mode: mode, ..Default::default() };
        Service::open(settings, vec![Arm { name: "e".into(), policy: Arc::new(Echo) }], problems(), &dir.path().join(file)).unwrap()
    };
    for (mode, file, expect) in [
        (empower_service::CompletionMode::Cursor, "a.jsonl", "<hé>"),
        (empower_service::CompletionMode::EndOfBuffer, "b.jsonl", "<héllo>"),
    ] {
        let svc = mk(mode, file);
        let s = svc.create_session("P", "two-sum").unwrap();
        let r = svc
            .suggest(&SuggestRequest { session_id: s.session_id, arm_label: "Assistant 1".into(), buffer: "héllo".into(), cursor: 2 })
            .unwrap();
        assert_eq!(r.text, expect);
    }
}

#[test]
fn event_ingestion_is_idempotent_and_durable() {
    let dir = tempfile::tempdir().unwrap();
    let session_id;
    let suggestion_id;
    {
        let svc = open(dir.path(), 1);
        let s = svc.create_session("P", "two-sum").unwrap();
        session_id = s.session_id.clone();
        let label = label_for(&svc, &session_id, "base20-othermodel");
        let r = svc
            .suggest(&SuggestRequest { session_id: session_id.clone(), arm_label: label, buffer: String::new(), cursor: 0 })
            .unwrap();
        suggestion_id = r.suggestion_id.unwrap();
        let batch = EventBatch {
            session_id: session_id.clone(),
            events: vec![
                ev(1, EventBody::CharTyped { position: 0, text: "x".into() }),
                ev(2, EventBody::Accepted { suggestion_id: suggestion_id.clone(), position: Some(1) }),
            ],
        };
        assert_eq!(svc.record_events(&batch).unwrap().last_seq, 2);
        // Retried delivery of the same batch.
        assert_eq!(svc.record_events(&batch).unwrap().last_seq, 2);

        let conflicting = EventBatch { session_id: session_id.clone(), events: vec![ev(2, EventBody::TestsRun {})] };
        assert!(matches!(svc.record_events(&conflicting), Err(ServiceError::SeqRegression(_))));
        let unordered = EventBatch {
            session_id: session_id.clone(),
            events: vec![ev(5, EventBody::TestsRun {}), ev(4, EventBody::TestsRun {})],
        };
        assert!(matches!(svc.record_events(&unordered), Err(ServiceError::SeqRegression(_))));
        let dangling = EventBatch {
            session_id: session_id.clone(),
            events: vec![ev(3, EventBody::Rejected { suggestion_id: "nope".into(), implicit: false })],
        };
        assert!(matches!(svc.record_events(&dangling), Err(ServiceError::BadRequest(_))));
        let forged = EventBatch {
            session_id: session_id.clone(),
            events: vec![ev(3, EventBody::SuggestError { arm: "a".into(), message: "m".into() })],
        };
        assert!(svc.record_events(&forged).is_err());
        assert!(matches!(
            svc.record_events(&EventBatch { session_id: "ghost".into(), events: vec![] }),
            Err(ServiceError::UnknownSession(_))
        ));
    }

    // Restart: every acked event is reloaded and dedup state survives.
    let svc = open(dir.path(), 1);
    let again = EventBatch {
        session_id: session_id.clone(),
        events: vec![
            ev(2, EventBody::Accepted { suggestion_id: suggestion_id.clone(), position: Some(1) }),
            ev(3, EventBody::CharsDeleted { position: 1, count: 5 }),
        ],
    };
    assert_eq!(svc.record_events(&again).unwrap().last_seq, 3);
    let report = svc.report(&ReportFilter::default()).unwrap();
    let arm = &report.arms["base20-othermodel"];
    assert_eq!((arm.suggestions_shown, arm.accepted, arm.deleted_chars), (1, 1, 5));
    assert_eq!(report.n_events, 4);
}

fn shown(session: &str, id: &str, arm: &str, text: &str, cursor: usize) -> empower_service::LogRecord {
    empower_service::LogRecord::Event(empower_service::InteractionEvent {
        session_id: session.into(),
        origin: empower_service::events::Origin::Server,
        seq: 0,
        timestamp: 0,
        body: EventBody::SuggestionShown { suggestion_id: id.into(), arm: arm.into(), text: text.into(), cursor },
    })
}

fn client(session: &str, seq: u64, body: EventBody) -> empower_service::LogRecord {
    empower_service::LogRecord::Event(empower_service::InteractionEvent {
        session_id: session.into(),
        origin: empower_service::events::Origin::Client,
        seq,
        timestamp: seq,
        body,
    })
}

fn session(id: &str) -> empower_service::LogRecord {
    empower_service::LogRecord::Session(empower_service::Session {
        session_id: id.into(),
        participant_label: "P".into(),
        problem_id: "two-sum".into(),
        arm_order: vec!["a".into()],
        created_at: 0,
    })
}

#[test]
fn report_accept_rate_and_deleted_chars() {
    let mut log = vec![session("s")];
    for k in 0..100 {
        log.push(shown("s", &format!("id{k}"), "a", "xy", 0));
    }
    for k in 0..8 {
        log.push(client("s", k + 1, EventBody::Accepted { suggestion_id: format!("id{k}"), position: None }));
    }
    let r = study_report(&log, &ReportFilter::default());
    assert!((r.arms["a"].accept_rate - 0.08).abs() < 1e-12);
    assert_eq!(r.arms["a"].mean_suggestion_chars, 2.0);
}

#[test]
fn deleted_chars_inside_and_outside_spans() {
    let twenty = "abcdefghijklmnopqrst";
    let base = vec![
        session("s"),
        client("s", 1, EventBody::CharTyped { position: 0, text: "0123456789".into() }),
        shown("s", "g", "a", twenty, 10),
        client("s", 2, EventBody::Accepted { suggestion_id: "g".into(), position: None }),
    ];
    let mut inside = base.clone();
    inside.push(client("s", 3, EventBody::CharsDeleted { position: 25, count: 5 }));
    assert_eq!(study_report(&inside, &ReportFilter::default()).arms["a"].deleted_chars_per_accepted, 5.0);

    let mut outside = base.clone();
    outside.push(client("s", 3, EventBody::CharsDeleted { position: 0, count: 10 }));
    outside.push(client("s", 4, EventBody::CharTyped { position: 20, text: "zz".into() }));
    assert_eq!(study_report(&outside, &ReportFilter::default()).arms["a"].deleted_chars_per_accepted, 0.0);
}

#[test]
fn empty_log_gives_zeroed_report() {
    let r = study_report(&[], &ReportFilter::default());
    assert_eq!((r.n_sessions, r.n_events), (0, 0));
    assert!(r.arms.is_empty());
}

#[test]
fn report_is_a_pure_function_of_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path(), 3);
    for p in ["A", "B"] {
        let s = svc.create_session(p, "two-sum").unwrap();
        for label in ["Assistant 1", "Assistant 2"] {
            svc.suggest(&SuggestRequest { session_id: s.session_id.clone(), arm_label: label.into(), buffer: "x".into(), cursor: 1 })
                .unwrap();
        }
    }
    let live = svc.report(&ReportFilter::default()).unwrap();
    let replayed = study_report(&load_log(svc.log_path()).unwrap(), &ReportFilter::default());
    assert_eq!(live, replayed);
    let only_a = svc.report(&ReportFilter { participant: Some("A".into()), problem_id: None }).unwrap();
    assert_eq!(only_a.n_sessions, 1);
}
