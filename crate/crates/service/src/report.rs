//! Study report computed from the event log.
//!
//! Every accepted suggestion registers a live span of buffer characters.
//! Deletions that overlap a live span are attributed to its suggestion and
//! remove the overlap; edits at lower positions shift spans; insertions
//! strictly inside a span split it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::events::{EventBody, LogRecord};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFilter {
    #[serde(default)]
    pub participant: Option<String>,
    #[serde(default)]
    pub problem_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub suggestions_shown: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub implicit_rejections: usize,
    pub suggest_errors: usize,
    /// `accepted / suggestions_shown`; 0 when nothing was shown.
    pub accept_rate: f64,
    /// Mean length of shown suggestions in characters; 0 when nothing was shown.
    pub mean_suggestion_chars: f64,
    pub deleted_chars: usize,
    /// `deleted_chars / accepted`; 0 when nothing was accepted.
    pub deleted_chars_per_accepted: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub n_sessions: usize,
    pub n_events: usize,
    /// Keyed by arm name.
    pub arms: BTreeMap<String, ArmStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    owner: usize,
    start: usize,
    end: usize,
}

/// Live spans of accepted text in one session's buffer.
#[derive(Debug, Default)]
pub struct SpanTracker {
    spans: Vec<Span>,
}

impl SpanTracker {
    pub fn insert(&mut self, pos: usize, len: usize) {
        if len == 0 {
            return;
        }
        let mut out = Vec::with_capacity(self.spans.len() + 1);
        for s in &self.spans {
            if pos <= s.start {
                out.push(Span { start: s.start + len, end: s.end + len, ..*s });
            } else if pos < s.end {
                out.push(Span { end: pos, ..*s });
                out.push(Span { start: pos + len, end: s.end + len, ..*s });
            } else {
                out.push(*s);
            }
        }
        self.spans = out;
    }

    /// Registers `len` accepted characters at `pos` owned by `owner`.
    pub fn accept(&mut self, owner: usize, pos: usize, len: usize) {
        self.insert(pos, len);
        if len > 0 {
            self.spans.push(Span { owner, start: pos, end: pos + len });
        }
    }

    /// Removes `[pos, pos + count)` and returns `(owner, chars)` for every
    /// suggestion whose live spans it overlapped.
    pub fn delete(&mut self, pos: usize, count: usize) -> Vec<(usize, usize)> {
        let end = pos + count;
        let shift = |x: usize| {
            if x <= pos {
                x
            } else if x >= end {
                x - count
            } else {
                pos
            }
        };
        let mut hits = Vec::new();
        for s in &mut self.spans {
            let overlap = s.end.min(end).saturating_sub(s.start.max(pos));
            if overlap > 0 {
                match hits.iter_mut().find(|(o, _)| *o == s.owner) {
                    Some((_, n)) => *n += overlap,
                    None => hits.push((s.owner, overlap)),
                }
            }
            s.start = shift(s.start);
            s.end = shift(s.end);
        }
        self.spans.retain(|s| s.end > s.start);
        hits
    }
}

struct Shown {
    arm: String,
    chars: usize,
    cursor: usize,
}

/// Computes per-arm statistics from log records in file order.
pub fn study_report(records: &[LogRecord], filter: &ReportFilter) -> StudyReport {
    let mut included = HashMap::new();
    for r in records {
        if let LogRecord::Session(s) = r {
            let keep = filter.participant.as_ref().is_none_or(|p| *p == s.participant_label)
                && filter.problem_id.as_ref().is_none_or(|p| *p == s.problem_id);
            included.insert(s.session_id.clone(), keep);
        }
    }

    let mut report = StudyReport {
        n_sessions: included.values().filter(|&&k| k).count(),
        ..Default::default()
    };
    let mut shown: HashMap<(String, String), Shown> = HashMap::new();
    let mut owners: Vec<String> = Vec::new();
    let mut trackers: HashMap<String, SpanTracker> = HashMap::new();
    let mut suggestion_chars: BTreeMap<String, usize> = BTreeMap::new();

    for r in records {
        let LogRecord::Event(e) = r else { continue };
        if included.get(&e.session_id) != Some(&true) {
            continue;
        }
        report.n_events += 1;
        let key = |id: &str| (e.session_id.clone(), id.to_string());
        match &e.body {
            EventBody::SuggestionShown { suggestion_id, arm, text, cursor } => {
                let chars = text.chars().count();
                let stats = report.arms.entry(arm.clone()).or_default();
                stats.suggestions_shown += 1;
                *suggestion_chars.entry(arm.clone()).or_default() += chars;
                shown.insert(key(suggestion_id), Shown { arm: arm.clone(), chars, cursor: *cursor });
            }
            EventBody::SuggestError { arm, .. } => {
                report.arms.entry(arm.clone()).or_default().suggest_errors += 1;
            }
            EventBody::Accepted { suggestion_id, position } => {
                let Some(s) = shown.get(&key(suggestion_id)) else { continue };
                report.arms.entry(s.arm.clone()).or_default().accepted += 1;
                let owner = owners.len();
                owners.push(s.arm.clone());
                trackers
                    .entry(e.session_id.clone())
                    .or_default()
                    .accept(owner, position.unwrap_or(s.cursor), s.chars);
            }
            EventBody::Rejected { suggestion_id, implicit } => {
                let Some(s) = shown.get(&key(suggestion_id)) else { continue };
                let stats = report.arms.entry(s.arm.clone()).or_default();
                stats.rejected += 1;
                if *implicit {
                    stats.implicit_rejections += 1;
                }
            }
            EventBody::CharTyped { position, text } => {
                trackers.entry(e.session_id.clone()).or_default().insert(*position, text.chars().count());
            }
            EventBody::CharsDeleted { position, count } => {
                let hits = trackers.entry(e.session_id.clone()).or_default().delete(*position, *count);
                for (owner, chars) in hits {
                    report.arms.entry(owners[owner].clone()).or_default().deleted_chars += chars;
                }
            }
            EventBody::TestsRun {} | EventBody::BufferSnapshot { .. } => {}
        }
    }

    for (arm, stats) in report.arms.iter_mut() {
        if stats.suggestions_shown > 0 {
            stats.accept_rate = stats.accepted as f64 / stats.suggestions_shown as f64;
            stats.mean_suggestion_chars = suggestion_chars[arm] as f64 / stats.suggestions_shown as f64;
        }
        if stats.accepted > 0 {
            stats.deleted_chars_per_accepted = stats.deleted_chars as f64 / stats.accepted as f64;
        }
    }
    report
}
