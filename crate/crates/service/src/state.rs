//! Sessions, suggestion routing and event ingestion.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use empower_core::corpus::Problem;
use empower_core::simulator::{AssistantPolicy, PolicyInput};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::events::{now_millis, ClientEvent, EventBody, EventLog, InteractionEvent, LogRecord, Origin, Session};
use crate::report::{study_report, ReportFilter, StudyReport};
use crate::ServiceError;

pub const NO_ASSISTANT: &str = "No Assistant";

/// Label shown to participants for the arm at `index` of a session's order.
pub fn arm_label(index: usize) -> String {
    format!("Assistant {}", index + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionMode {
    /// Complete the text before the cursor; text after it is kept.
    #[default]
    Cursor,
    /// Always complete at the end of the buffer.
    EndOfBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSettings {
    pub seed: u64,
    #[serde(default)]
    pub completion_mode: CompletionMode,
    /// Command copied by the client's run-tests button; `{problem_id}` is substituted.
    #[serde(default = "default_test_command")]
    pub test_command: String,
}

fn default_test_command() -> String {
    "python3 run_tests.py --problem {problem_id}".into()
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self { seed: 0, completion_mode: CompletionMode::Cursor, test_command: default_test_command() }
    }
}

pub struct Arm {
    pub name: String,
    pub policy: Arc<dyn AssistantPolicy>,
}

/// What a client sees of a session: opaque labels only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_label: String,
    pub problem_id: String,
    pub labels: Vec<String>,
    pub completion_mode: CompletionMode,
    pub test_command: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestRequest {
    pub session_id: String,
    pub arm_label: String,
    pub buffer: String,
    /// Cursor offset in characters.
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub suggestion_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventBatch {
    pub session_id: String,
    pub events: Vec<ClientEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventAck {
    pub last_seq: u64,
}

/// Problem content for the editor; test cases are not exposed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemView {
    pub id: String,
    pub statement: String,
    pub starter_code: String,
    pub io_mode: empower_core::corpus::IoMode,
}

struct SessionState {
    session: Session,
    /// Client seq → canonical JSON of the stored event, for duplicate checks.
    client_events: BTreeMap<u64, String>,
    /// Suggestion id → arm name.
    shown: HashMap<String, String>,
    server_seq: u64,
    suggest_calls: usize,
}

impl SessionState {
    fn new(session: Session) -> Self {
        Self { session, client_events: BTreeMap::new(), shown: HashMap::new(), server_seq: 0, suggest_calls: 0 }
    }

    fn last_client_seq(&self) -> u64 {
        self.client_events.keys().next_back().copied().unwrap_or(0)
    }

    fn apply(&mut self, event: &InteractionEvent) {
        match event.origin {
            Origin::Client => {
                self.client_events.insert(event.seq, canonical(&event.body, event.timestamp));
            }
            Origin::Server => {
                self.server_seq = self.server_seq.max(event.seq);
                if let EventBody::SuggestionShown { suggestion_id, arm, .. } = &event.body {
                    self.shown.insert(suggestion_id.clone(), arm.clone());
                }
            }
        }
    }
}

fn canonical(body: &EventBody, timestamp: u64) -> String {
    serde_json::to_string(&(timestamp, body)).expect("event serializes")
}

pub struct Service {
    settings: ServiceSettings,
    arms: Vec<Arm>,
    problems: HashMap<String, Problem>,
    log: EventLog,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
}

impl Service {
    /// Opens the event log at `log_path`, replaying any existing sessions.
    pub fn open(
        settings: ServiceSettings,
        arms: Vec<Arm>,
        problems: Vec<Problem>,
        log_path: &Path,
    ) -> Result<Self, ServiceError> {
        if arms.is_empty() {
            return Err(ServiceError::Config("at least one assistant arm is required".into()));
        }
        let (log, records) = EventLog::open(log_path)?;
        let mut sessions: HashMap<String, SessionState> = HashMap::new();
        for record in records {
            match record {
                LogRecord::Session(s) => {
                    sessions.insert(s.session_id.clone(), SessionState::new(s));
                }
                LogRecord::Event(e) => match sessions.get_mut(&e.session_id) {
                    Some(state) => state.apply(&e),
                    None => log::warn!("event for unknown session {} in log", e.session_id),
                },
            }
        }
        Ok(Self {
            settings,
            arms,
            problems: problems.into_iter().map(|p| (p.id.clone(), p)).collect(),
            log,
            sessions: RwLock::new(sessions.into_iter().map(|(k, v)| (k, Arc::new(Mutex::new(v)))).collect()),
        })
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    pub fn log_path(&self) -> &Path {
        self.log.path()
    }

    /// Presentation order of arm names for a participant and problem.
    pub fn arm_order(&self, participant: &str, problem_id: &str) -> Vec<String> {
        let mut hasher = Sha256::new();
        for part in [&self.settings.seed.to_le_bytes()[..], participant.as_bytes(), problem_id.as_bytes()] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let mut names: Vec<String> = self.arms.iter().map(|a| a.name.clone()).collect();
        names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        names
    }

    fn view(&self, session: &Session) -> SessionView {
        let mut labels: Vec<String> = (0..session.arm_order.len()).map(arm_label).collect();
        labels.push(NO_ASSISTANT.to_string());
        SessionView {
            session_id: session.session_id.clone(),
            participant_label: session.participant_label.clone(),
            problem_id: session.problem_id.clone(),
            labels,
            completion_mode: self.settings.completion_mode,
            test_command: self.settings.test_command.replace("{problem_id}", &session.problem_id),
        }
    }

    pub fn create_session(&self, participant_label: &str, problem_id: &str) -> Result<SessionView, ServiceError> {
        if !self.problems.contains_key(problem_id) {
            return Err(ServiceError::UnknownProblem(problem_id.to_string()));
        }
        let session = Session {
            session_id: uuid::Uuid::new_v4().to_string(),
            participant_label: participant_label.to_string(),
            problem_id: problem_id.to_string(),
            arm_order: self.arm_order(participant_label, problem_id),
            created_at: now_millis(),
        };
        self.log.append(&[LogRecord::Session(session.clone())])?;
        let view = self.view(&session);
        self.sessions
            .write()
            .expect("session lock poisoned")
            .insert(session.session_id.clone(), Arc::new(Mutex::new(SessionState::new(session))));
        Ok(view)
    }

    pub fn session_view(&self, session_id: &str) -> Result<SessionView, ServiceError> {
        let state = self.session(session_id)?;
        let guard = state.lock().expect("session lock poisoned");
        Ok(self.view(&guard.session))
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<SessionState>>, ServiceError> {
        self.sessions
            .read()
            .expect("session lock poisoned")
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    pub fn problem(&self, id: &str) -> Result<ProblemView, ServiceError> {
        let p = self.problems.get(id).ok_or_else(|| ServiceError::UnknownProblem(id.to_string()))?;
        Ok(ProblemView {
            id: p.id.clone(),
            statement: p.statement.clone(),
            starter_code: p.starter_code.clone(),
            io_mode: p.io_mode,
        })
    }

    /// Routes a suggestion request to the session's arm. Blocking: the
    /// policy may call a remote model.
    pub fn suggest(&self, req: &SuggestRequest) -> Result<SuggestResponse, ServiceError> {
        let state = self.session(&req.session_id)?;
        if req.arm_label == NO_ASSISTANT {
            return Ok(SuggestResponse { suggestion_id: None, text: String::new() });
        }
        let (arm_name, problem_id, round) = {
            let mut guard = state.lock().expect("session lock poisoned");
            let index = (0..guard.session.arm_order.len())
                .find(|&i| arm_label(i) == req.arm_label)
                .ok_or_else(|| ServiceError::UnknownArm(req.arm_label.clone()))?;
            guard.suggest_calls += 1;
            (guard.session.arm_order[index].clone(), guard.session.problem_id.clone(), guard.suggest_calls - 1)
        };
        let arm = self.arms.iter().find(|a| a.name == arm_name).ok_or_else(|| {
            ServiceError::Config(format!("session references arm {arm_name} that is not configured"))
        })?;
        let problem = self
            .problems
            .get(&problem_id)
            .ok_or_else(|| ServiceError::UnknownProblem(problem_id.clone()))?;

        let cursor = match self.settings.completion_mode {
            CompletionMode::Cursor => req.cursor,
            CompletionMode::EndOfBuffer => req.buffer.chars().count(),
        };
        let byte_cursor = req
            .buffer
            .char_indices()
            .nth(cursor)
            .map(|(b, _)| b)
            .unwrap_or(req.buffer.len());
        if cursor > req.buffer.chars().count() {
            return Err(ServiceError::BadRequest(format!("cursor {cursor} is past the end of the buffer")));
        }
        let input = PolicyInput {
            problem,
            state: &req.buffer[..byte_cursor],
            round,
            seed: self.settings.seed ^ round as u64,
        };
        let outcome = arm.policy.suggest(&input);

        let mut guard = state.lock().expect("session lock poisoned");
        guard.server_seq += 1;
        let seq = guard.server_seq;
        let (body, response) = match outcome {
            Ok(s) if s.text.is_empty() => {
                guard.server_seq -= 1;
                return Ok(SuggestResponse { suggestion_id: None, text: String::new() });
            }
            Ok(s) => {
                let id = format!("{}-{seq}", req.session_id);
                (
                    EventBody::SuggestionShown {
                        suggestion_id: id.clone(),
                        arm: arm_name.clone(),
                        text: s.text.clone(),
                        cursor,
                    },
                    SuggestResponse { suggestion_id: Some(id), text: s.text },
                )
            }
            Err(e) => {
                log::warn!("arm {arm_name} failed: {e}");
                (
                    EventBody::SuggestError { arm: arm_name.clone(), message: e.to_string() },
                    SuggestResponse { suggestion_id: None, text: String::new() },
                )
            }
        };
        let event = InteractionEvent {
            session_id: req.session_id.clone(),
            origin: Origin::Server,
            seq,
            timestamp: now_millis(),
            body,
        };
        if let Err(e) = self.log.append(&[LogRecord::Event(event.clone())]) {
            guard.server_seq -= 1;
            return Err(e);
        }
        guard.apply(&event);
        Ok(response)
    }

    /// Appends a batch of client events. Events whose seq is already stored
    /// with identical content are skipped. The batch is rejected as a whole
    /// if seqs are not increasing, a stored seq is resubmitted with
    /// different content, or an event references an unknown suggestion.
    pub fn record_events(&self, batch: &EventBatch) -> Result<EventAck, ServiceError> {
        let state = self.session(&batch.session_id)?;
        let mut guard = state.lock().expect("session lock poisoned");
        let last = guard.last_client_seq();
        let mut fresh = Vec::new();
        let mut prev: Option<u64> = None;
        for ev in &batch.events {
            if ev.seq == 0 {
                return Err(ServiceError::SeqRegression("seq numbers start at 1".into()));
            }
            if prev.is_some_and(|p| ev.seq <= p) {
                return Err(ServiceError::SeqRegression(format!(
                    "seq {} follows {} within the batch",
                    ev.seq,
                    prev.unwrap()
                )));
            }
            prev = Some(ev.seq);
            if ev.body.is_server_only() {
                return Err(ServiceError::BadRequest("clients cannot submit server-origin events".into()));
            }
            if ev.seq <= last {
                match guard.client_events.get(&ev.seq) {
                    Some(stored) if *stored == canonical(&ev.body, ev.timestamp) => continue,
                    Some(_) => {
                        return Err(ServiceError::SeqRegression(format!(
                            "seq {} was already recorded with different content",
                            ev.seq
                        )))
                    }
                    None => {
                        return Err(ServiceError::SeqRegression(format!(
                            "seq {} is below the last recorded seq {last}",
                            ev.seq
                        )))
                    }
                }
            }
            if let EventBody::Accepted { suggestion_id, .. } | EventBody::Rejected { suggestion_id, .. } = &ev.body {
                if !guard.shown.contains_key(suggestion_id) {
                    return Err(ServiceError::BadRequest(format!("unknown suggestion id {suggestion_id}")));
                }
            }
            fresh.push(InteractionEvent {
                session_id: batch.session_id.clone(),
                origin: Origin::Client,
                seq: ev.seq,
                timestamp: ev.timestamp,
                body: ev.body.clone(),
            });
        }
        let records: Vec<LogRecord> = fresh.iter().cloned().map(LogRecord::Event).collect();
        self.log.append(&records)?;
        for e in &fresh {
            guard.apply(e);
        }
        Ok(EventAck { last_seq: guard.last_client_seq() })
    }

    pub fn report(&self, filter: &ReportFilter) -> Result<StudyReport, ServiceError> {
        Ok(study_report(&self.log.snapshot()?, filter))
    }
}
