//! Human review of generated candidates.
//!
//! All state changes are events appended to `events.jsonl` and fsynced before
//! they are acknowledged. State is the fold of the event log; a snapshot is
//! written every few events so reopening does not replay the full history.
//! Each seed may hold at most [`ACCEPT_QUOTA`] accepted candidates at any
//! time, and a (condition, group) scope can be exported only when every seed
//! in it holds exactly that many.

pub mod service;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genclient::{CandidateImage, RejectReason, ReviewState};
use crate::manifest::FstGroup;

/// Accepted candidates required per seed.
pub const ACCEPT_QUOTA: usize = 4;

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";
const DEFAULT_SNAPSHOT_EVERY: u64 = 64;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("unknown candidate `{0}`")]
    UnknownCandidate(String),
    #[error("unknown seed `{0}`")]
    UnknownSeed(String),
    #[error("unknown request `{0}`")]
    UnknownRequest(String),
    #[error("selection for {condition} / {group} is finalized")]
    ManifestFinalized { condition: String, group: FstGroup },
    #[error("seed `{seed}` already has {accepted} accepted candidates")]
    QuotaExceeded { seed: String, accepted: usize },
    #[error("rejecting candidate `{0}` requires a reason")]
    MissingReason(String),
    #[error("incomplete selection: {}", format_counts(.0))]
    IncompleteSelection(Vec<SeedCount>),
    #[error("no seeds registered for {condition} / {group}")]
    NoSeeds { condition: String, group: FstGroup },
    #[error("conflicting record: {0}")]
    Conflict(String),
    #[error("event log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_counts(counts: &[SeedCount]) -> String {
    counts
        .iter()
        .map(|c| format!("{} has {}/{}", c.seed_id, c.accepted, ACCEPT_QUOTA))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = CurationError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedCount {
    pub seed_id: String,
    pub accepted: usize,
}

/// Curated mapping from seed image to its accepted candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionManifest {
    pub condition: String,
    pub target_group: FstGroup,
    pub entries: BTreeMap<String, Vec<String>>,
    pub finalized: bool,
}

impl SelectionManifest {
    pub fn candidate_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn file_name(condition: &str, group: FstGroup) -> String {
        format!("selection.{}.{}.json", condition.replace(' ', "-"), group.key())
    }

    pub fn validate(&self) -> Result<()> {
        let mut all = BTreeSet::new();
        for (seed, ids) in &self.entries {
            if self.finalized && ids.len() != ACCEPT_QUOTA {
                return Err(CurationError::IncompleteSelection(vec![SeedCount {
                    seed_id: seed.clone(),
                    accepted: ids.len(),
                }]));
            }
            for id in ids {
                if !all.insert(id) {
                    return Err(CurationError::Conflict(format!("candidate `{id}` listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(Self::file_name(&self.condition, self.target_group));
        write_atomic(&path, &serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<SelectionManifest> {
        let manifest: SelectionManifest = serde_json::from_slice(&fs::read(path)?)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub candidate_id: String,
    pub decision: Decision,
    pub reason: Option<RejectReason>,
    pub reviewer: String,
    pub decided_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed_id: String,
    pub condition: String,
    pub group: FstGroup,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestEntry {
    pub request_id: String,
    pub seed_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CurationEvent {
    SeedRegistered(SeedEntry),
    RequestIssued(RequestEntry),
    CandidatesAdded { candidates: Vec<CandidateImage> },
    Reviewed(ReviewDecision),
    Finalized(SelectionManifest),
}

/// Per-prompt bookkeeping: requests issued and candidates accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStats {
    pub prompt: String,
    pub attempts: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed_id: String,
    pub condition: String,
    pub group: FstGroup,
    pub uri: String,
    pub candidates: usize,
    pub accepted: usize,
    pub finalized: bool,
}

fn scope_key(condition: &str, group: FstGroup) -> String {
    format!("{condition}|{}", group.key())
}

/// Fold of the event log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationState {
    pub seeds: BTreeMap<String, SeedEntry>,
    pub requests: BTreeMap<String, RequestEntry>,
    pub candidates: BTreeMap<String, CandidateImage>,
    pub finalized: BTreeMap<String, SelectionManifest>,
    pub events_applied: u64,
}

impl CurationState {
    pub fn accepted_for(&self, seed_id: &str) -> Vec<&CandidateImage> {
        let mut out: Vec<&CandidateImage> = self
            .candidates
            .values()
            .filter(|c| c.parent_seed_id == seed_id && c.review == ReviewState::Accepted)
            .collect();
        out.sort_by(|a, b| (&a.request_ref, a.index).cmp(&(&b.request_ref, b.index)));
        out
    }

    pub fn candidates_for(&self, seed_id: &str) -> Vec<&CandidateImage> {
        let mut out: Vec<&CandidateImage> = self
            .candidates
            .values()
            .filter(|c| c.parent_seed_id == seed_id)
            .collect();
        out.sort_by(|a, b| (&a.request_ref, a.index).cmp(&(&b.request_ref, b.index)));
        out
    }

    pub fn seeds_in(&self, condition: &str, group: FstGroup) -> Vec<&SeedEntry> {
        self.seeds
            .values()
            .filter(|s| s.condition == condition && s.group == group)
            .collect()
    }

    fn finalized_scope_of(&self, seed_id: &str) -> Option<&SelectionManifest> {
        let seed = self.seeds.get(seed_id)?;
        self.finalized.get(&scope_key(&seed.condition, seed.group))
    }

    /// Check an event against the current state. `Ok(false)` marks an
    /// idempotent repeat that need not be logged.
    pub fn validate(&self, event: &CurationEvent) -> Result<bool> {
        match event {
            CurationEvent::SeedRegistered(seed) => match self.seeds.get(&seed.seed_id) {
                Some(existing) if existing == seed => Ok(false),
                Some(_) => Err(CurationError::Conflict(format!("seed `{}` registered twice", seed.seed_id))),
                None => Ok(true),
            },
            CurationEvent::RequestIssued(req) => {
                if !self.seeds.contains_key(&req.seed_id) {
                    return Err(CurationError::UnknownSeed(req.seed_id.clone()));
                }
                match self.requests.get(&req.request_id) {
                    Some(existing) if existing == req => Ok(false),
                    Some(_) => Err(CurationError::Conflict(format!("request `{}` issued twice", req.request_id))),
                    None => Ok(true),
                }
            }
            CurationEvent::CandidatesAdded { candidates } => {
                let mut fresh = false;
                for c in candidates {
                    if !self.seeds.contains_key(&c.parent_seed_id) {
                        return Err(CurationError::UnknownSeed(c.parent_seed_id.clone()));
                    }
                    if !self.requests.contains_key(&c.request_ref) {
                        return Err(CurationError::UnknownRequest(c.request_ref.clone()));
                    }
                    if c.review != ReviewState::Pending {
                        return Err(CurationError::Conflict(format!("candidate `{}` is not pending", c.candidate_id)));
                    }
                    match self.candidates.get(&c.candidate_id) {
                        Some(existing) if existing.request_ref == c.request_ref && existing.payload_uri == c.payload_uri => {}
                        Some(_) => {
                            return Err(CurationError::Conflict(format!(
                                "candidate `{}` already registered from another request",
                                c.candidate_id
                            )))
                        }
                        None => fresh = true,
                    }
                }
                Ok(fresh)
            }
            CurationEvent::Reviewed(decision) => {
                let cand = self
                    .candidates
                    .get(&decision.candidate_id)
                    .ok_or_else(|| CurationError::UnknownCandidate(decision.candidate_id.clone()))?;
                if let Some(done) = self.finalized_scope_of(&cand.parent_seed_id) {
                    return Err(CurationError::ManifestFinalized {
                        condition: done.condition.clone(),
                        group: done.target_group,
                    });
                }
                match decision.decision {
                    Decision::Reject if decision.reason.is_none() => {
                        Err(CurationError::MissingReason(decision.candidate_id.clone()))
                    }
                    Decision::Reject => Ok(true),
                    Decision::Accept => {
                        let others = self
                            .accepted_for(&cand.parent_seed_id)
                            .into_iter()
                            .filter(|c| c.candidate_id != cand.candidate_id)
                            .count();
                        if others >= ACCEPT_QUOTA {
                            Err(CurationError::QuotaExceeded {
                                seed: cand.parent_seed_id.clone(),
                                accepted: others,
                            })
                        } else {
                            Ok(true)
                        }
                    }
                }
            }
            CurationEvent::Finalized(manifest) => {
                let key = scope_key(&manifest.condition, manifest.target_group);
                if let Some(existing) = self.finalized.get(&key) {
                    return if existing == manifest {
                        Ok(false)
                    } else {
                        Err(CurationError::ManifestFinalized {
                            condition: manifest.condition.clone(),
                            group: manifest.target_group,
                        })
                    };
                }
                let expected = self.build_selection(&manifest.condition, manifest.target_group)?;
                if &expected != manifest {
                    return Err(CurationError::Conflict("finalized manifest does not match store state".into()));
                }
                Ok(true)
            }
        }
    }

    /// Apply an already validated event.
    pub fn apply(&mut self, event: CurationEvent) {
        self.events_applied += 1;
        match event {
            CurationEvent::SeedRegistered(seed) => {
                self.seeds.insert(seed.seed_id.clone(), seed);
            }
            CurationEvent::RequestIssued(req) => {
                self.requests.insert(req.request_id.clone(), req);
            }
            CurationEvent::CandidatesAdded { candidates } => {
                for c in candidates {
                    self.candidates.entry(c.candidate_id.clone()).or_insert(c);
                }
            }
            CurationEvent::Reviewed(decision) => {
                if let Some(c) = self.candidates.get_mut(&decision.candidate_id) {
                    match decision.decision {
                        Decision::Accept => {
                            c.review = ReviewState::Accepted;
                            c.reject_reason = None;
                        }
                        Decision::Reject => {
                            c.review = ReviewState::Rejected;
                            c.reject_reason = decision.reason;
                        }
                    }
                }
            }
            CurationEvent::Finalized(manifest) => {
                self.finalized
                    .insert(scope_key(&manifest.condition, manifest.target_group), manifest);
            }
        }
    }

    /// Validate then apply; used for replay.
    pub fn apply_checked(&mut self, event: CurationEvent) -> Result<()> {
        if self.validate(&event)? {
            self.apply(event);
        }
        Ok(())
    }

    /// The finalized selection a scope would export right now.
    pub fn build_selection(&self, condition: &str, group: FstGroup) -> Result<SelectionManifest> {
        let seeds = self.seeds_in(condition, group);
        if seeds.is_empty() {
            return Err(CurationError::NoSeeds {
                condition: condition.to_string(),
                group,
            });
        }
        let mut entries = BTreeMap::new();
        let mut incomplete = Vec::new();
        for seed in seeds {
            let accepted = self.accepted_for(&seed.seed_id);
            if accepted.len() != ACCEPT_QUOTA {
                incomplete.push(SeedCount {
                    seed_id: seed.seed_id.clone(),
                    accepted: accepted.len(),
                });
            }
            entries.insert(
                seed.seed_id.clone(),
                accepted.into_iter().map(|c| c.candidate_id.clone()).collect(),
            );
        }
        if !incomplete.is_empty() {
            return Err(CurationError::IncompleteSelection(incomplete));
        }
        Ok(SelectionManifest {
            condition: condition.to_string(),
            target_group: group,
            entries,
            finalized: true,
        })
    }

    pub fn selection_stats(&self) -> Vec<PromptStats> {
        let mut stats: BTreeMap<&str, PromptStats> = BTreeMap::new();
        for req in self.requests.values() {
            stats
                .entry(req.prompt.as_str())
                .or_insert_with(|| PromptStats {
                    prompt: req.prompt.clone(),
                    attempts: 0,
                    selected: 0,
                })
                .attempts += 1;
        }
        for c in self.candidates.values().filter(|c| c.review == ReviewState::Accepted) {
            if let Some(s) = stats.get_mut(c.prompt.as_str()) {
                s.selected += 1;
            }
        }
        stats.into_values().collect()
    }

    pub fn seed_summaries(&self, condition: Option<&str>, group: Option<FstGroup>) -> Vec<SeedSummary> {
        self.seeds
            .values()
            .filter(|s| condition.is_none_or(|c| s.condition == c))
            .filter(|s| group.is_none_or(|g| s.group == g))
            .map(|s| SeedSummary {
                seed_id: s.seed_id.clone(),
                condition: s.condition.clone(),
                group: s.group,
                uri: s.uri.clone(),
                candidates: self.candidates_for(&s.seed_id).len(),
                accepted: self.accepted_for(&s.seed_id).len(),
                finalized: self.finalized_scope_of(&s.seed_id).is_some(),
            })
            .collect()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    /// Number of log lines folded into `state`.
    lines: u64,
    state: CurationState,
}

/// Read the event log, dropping a torn final line left by a crash.
fn read_events(path: &Path) -> Result<Vec<CurationEvent>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        match serde_json::from_str::<CurationEvent>(buf.trim_end()) {
            Ok(ev) if complete => {
                events.push(ev);
                good_len += n as u64;
            }
            Ok(_) | Err(_) if !complete => {
                tracing::warn!(line = line_no, "dropping torn tail of curation log");
                OpenOptions::new().write(true).open(path)?.set_len(good_len)?;
                break;
            }
            Err(e) => {
                return Err(CurationError::Corrupt {
                    line: line_no,
                    message: e.to_string(),
                })
            }
            Ok(_) => unreachable!(),
        }
    }
    Ok(events)
}

/// Single-writer persistent store.
pub struct CurationStore {
    dir: PathBuf,
    state: CurationState,
    log: File,
    lines: u64,
    snapshot_every: u64,
    since_snapshot: u64,
    clock: fn() -> DateTime<Utc>,
}

impl CurationStore {
    pub fn open(dir: &Path) -> Result<CurationStore> {
        fs::create_dir_all(dir)?;
        let events = read_events(&dir.join(EVENTS_FILE))?;
        let (mut state, skip) = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let snap: Snapshot = serde_json::from_slice(&bytes)?;
                if snap.lines as usize > events.len() {
                    return Err(CurationError::Corrupt {
                        line: events.len(),
                        message: "snapshot is ahead of the event log".into(),
                    });
                }
                (snap.state, snap.lines as usize)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (CurationState::default(), 0),
            Err(e) => return Err(e.into()),
        };
        let lines = events.len() as u64;
        for ev in events.into_iter().skip(skip) {
            state.apply_checked(ev)?;
        }
        let mut log = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS_FILE))?;
        log.seek(SeekFrom::End(0))?;
        Ok(CurationStore {
            dir: dir.to_path_buf(),
            state,
            log,
            lines,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            since_snapshot: 0,
            clock: Utc::now,
        })
    }

    pub fn with_snapshot_every(mut self, n: u64) -> Self {
        self.snapshot_every = n.max(1);
        self
    }

    pub fn with_clock(mut self, clock: fn() -> DateTime<Utc>) -> Self {
        self.clock = clock;
        self
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state(&self) -> &CurationState {
        &self.state
    }

    /// Rebuild state from the complete event log, ignoring any snapshot.
    pub fn replay(dir: &Path) -> Result<CurationState> {
        let mut state = CurationState::default();
        for ev in read_events(&dir.join(EVENTS_FILE))? {
            state.apply_checked(ev)?;
        }
        Ok(state)
    }

    fn commit(&mut self, event: CurationEvent) -> Result<()> {
        if !self.state.validate(&event)? {
            return Ok(());
        }
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        self.lines += 1;
        self.state.apply(event);
        self.since_snapshot += 1;
        if self.since_snapshot >= self.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    pub fn snapshot(&mut self) -> Result<()> {
        let snap = Snapshot {
            lines: self.lines,
            state: self.state.clone(),
        };
        write_atomic(&self.dir.join(SNAPSHOT_FILE), &serde_json::to_vec(&snap)?)?;
        self.since_snapshot = 0;
        Ok(())
    }

    pub fn register_seed(&mut self, seed: SeedEntry) -> Result<()> {
        self.commit(CurationEvent::SeedRegistered(seed))
    }

    pub fn record_request(&mut self, request: RequestEntry) -> Result<()> {
        self.commit(CurationEvent::RequestIssued(request))
    }

    pub fn add_candidates(&mut self, candidates: Vec<CandidateImage>) -> Result<()> {
        if candidates.is_empty() {
            return Ok(());
        }
        self.commit(CurationEvent::CandidatesAdded { candidates })
    }

    /// Record a decision; the write is durable before this returns.
    pub fn record_review(&mut self, decision: ReviewDecision) -> Result<CandidateImage> {
        let id = decision.candidate_id.clone();
        self.commit(CurationEvent::Reviewed(decision))?;
        Ok(self.state.candidates[&id].clone())
    }

    /// Finalize a scope. Repeated calls return the same manifest.
    pub fn export_selection(&mut self, condition: &str, group: FstGroup) -> Result<SelectionManifest> {
        if let Some(done) = self.state.finalized.get(&scope_key(condition, group)) {
            return Ok(done.clone());
        }
        let manifest = self.state.build_selection(condition, group)?;
        self.commit(CurationEvent::Finalized(manifest.clone()))?;
        Ok(manifest)
    }

    pub fn selection_stats(&self) -> Vec<PromptStats> {
        self.state.selection_stats()
    }

    /// Accept the first `ACCEPT_QUOTA` candidates of every seed in a scope,
    /// in (request, index) order. Used when no human reviewer is involved.
    pub fn auto_curate(&mut self, condition: &str, group: FstGroup, reviewer: &str) -> Result<()> {
        let seeds: Vec<String> = self
            .state
            .seeds_in(condition, group)
            .into_iter()
            .map(|s| s.seed_id.clone())
            .collect();
        for seed in seeds {
            let pending: Vec<String> = self
                .state
                .candidates_for(&seed)
                .into_iter()
                .filter(|c| c.review == ReviewState::Pending)
                .map(|c| c.candidate_id.clone())
                .collect();
            let have = self.state.accepted_for(&seed).len();
            for id in pending.into_iter().take(ACCEPT_QUOTA.saturating_sub(have)) {
                let decided_at = self.now();
                self.record_review(ReviewDecision {
                    candidate_id: id,
                    decision: Decision::Accept,
                    reason: None,
                    reviewer: reviewer.to_string(),
                    decided_at,
                })?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap()
    }

    fn cand(seed: &str, req: &str, i: u32) -> CandidateImage {
        CandidateImage {
            candidate_id: format!("{seed}-{req}-{i}"),
            request_ref: req.into(),
            parent_seed_id: seed.into(),
            prompt: format!("An image of psoriasis on the arm of a dark-skinned man {req}"),
            index: i,
            payload_uri: format!("candidates/{req}/{i}.png"),
            created_at: t0(),
            review: ReviewState::Pending,
            reject_reason: None,
        }
    }

    fn populated(dir: &Path, seeds: usize, per_seed: u32) -> CurationStore {
        let mut store = CurationStore::open(dir).unwrap().with_clock(t0).with_snapshot_every(5);
        for s in 0..seeds {
            let seed = format!("s{s}");
            store
                .register_seed(SeedEntry {
                    seed_id: seed.clone(),
                    condition: "psoriasis".into(),
                    group: FstGroup::V_VI,
                    uri: format!("img/{seed}.png"),
                })
                .unwrap();
            let req = format!("r{s}");
            store
                .record_request(RequestEntry {
                    request_id: req.clone(),
                    seed_id: seed.clone(),
                    prompt: format!("prompt {s}"),
                })
                .unwrap();
            store
                .add_candidates((0..per_seed).map(|i| cand(&seed, &req, i)).collect())
                .unwrap();
        }
        store
    }

    fn decide(id: &str, decision: Decision, reason: Option<RejectReason>) -> ReviewDecision {
        ReviewDecision {
            candidate_id: id.into(),
            decision,
            reason,
            reviewer: "tester".into(),
            decided_at: t0(),
        }
    }

    #[test]
    fn accept_pending_candidate() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(dir.path(), 1, 8);
        let c = store.record_review(decide("s0-r0-0", Decision::Accept, None)).unwrap();
        assert_eq!(c.review, ReviewState::Accepted);
    }

    #[test]
    fn reject_needs_reason() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(dir.path(), 1, 8);
        let err = store.record_review(decide("s0-r0-0", Decision::Reject, None)).unwrap_err();
        assert!(matches!(err, CurationError::MissingReason(_)));
        let c = store
            .record_review(decide("s0-r0-0", Decision::Reject, Some(RejectReason::AnatomyChange)))
            .unwrap();
        assert_eq!(c.reject_reason, Some(RejectReason::AnatomyChange));
    }

    #[test]
    fn fifth_accept_exceeds_quota() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(dir.path(), 1, 8);
        for i in 0..4 {
            store.record_review(decide(&format!("s0-r0-{i}"), Decision::Accept, None)).unwrap();
        }
        let err = store.record_review(decide("s0-r0-4", Decision::Accept, None)).unwrap_err();
        assert!(matches!(err, CurationError::QuotaExceeded { accepted: 4, .. }));
        // re-accepting an already accepted one is fine
        store.record_review(decide("s0-r0-3", Decision::Accept, None)).unwrap();
        // rejecting one frees a slot
        store
            .record_review(decide("s0-r0-0", Decision::Reject, Some(RejectReason::Artifact)))
            .unwrap();
        store.record_review(decide("s0-r0-4", Decision::Accept, None)).unwrap();
        assert_eq!(store.state().accepted_for("s0").len(), 4);
    }

    #[test]
    fn unknown_candidate() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(dir.path(), 1, 2);
        assert!(matches!(
            store.record_review(decide("nope", Decision::Accept, None)),
            Err(CurationError::UnknownCandidate(_))
        ));
    }

    #[test]
    fn export_requires_four_per_seed_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(dir.path(), 8, 8);
        for s in 0..8 {
            let take = if s == 5 { 3 } else { 4 };
            for i in 0..take {
                store
                    .record_review(decide(&format!("s{s}-r{s}-{i}"), Decision::Accept, None))
                    .unwrap();
            }
        }
        match store.export_selection("psoriasis", FstGroup::V_VI).unwrap_err() {
            CurationError::IncompleteSelection(counts) => {
                assert_eq!(counts, vec![SeedCount { seed_id: "s5".into(), accepted: 3 }]);
            }
            other => panic!("unexpected {other:?}"),
        }
        store.record_review(decide("s5-r5-7", Decision::Accept, None)).unwrap();
        let m = store.export_selection("psoriasis", FstGroup::V_VI).unwrap();
        assert!(m.finalized);
        assert_eq!(m.candidate_count(), 32);
        assert_eq!(store.export_selection("psoriasis", FstGroup::V_VI).unwrap(), m);

        let err = store
            .record_review(decide("s0-r0-5", Decision::Accept, None))
            .unwrap_err();
        assert!(matches!(err, CurationError::ManifestFinalized { .. }));

        let path = m.write(dir.path()).unwrap();
        assert!(path.ends_with("selection.psoriasis.V_VI.json"));
        assert_eq!(SelectionManifest::read(&path).unwrap(), m);
    }

    #[test]
    fn stats_count_attempts_and_selected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = populated(dir.path(), 1, 4);
        store
            .record_request(RequestEntry {
                request_id: "r0b".into(),
                seed_id: "s0".into(),
                prompt: "prompt 0".into(),
            })
            .unwrap();
        for i in 0..3 {
            store.record_review(decide(&format!("s0-r0-{i}"), Decision::Accept, None)).unwrap();
        }
        let mut c = cand("s0", "r0b", 0);
        c.prompt = "prompt 0".into();
        store.add_candidates(vec![c]).unwrap();
        let stats = store.selection_stats();
        assert_eq!(stats.len(), 1);
        // candidates from `populated` carry a different prompt text
        assert_eq!(stats[0].attempts, 2);
        assert!(stats.iter().all(|s| s.prompt != "never issued"));
    }

    #[test]
    fn replay_and_reopen_match_live_state() {
        let dir = tempfile::tempdir().unwrap();
        let live = {
            let mut store = populated(dir.path(), 3, 6);
            store.auto_curate("psoriasis", FstGroup::V_VI, "auto").unwrap();
            store
                .record_review(decide("s1-r1-5", Decision::Reject, Some(RejectReason::PathologyMisplaced)))
                .unwrap();
            store.export_selection("psoriasis", FstGroup::V_VI).unwrap();
            store.state().clone()
        };
        assert_eq!(CurationStore::replay(dir.path()).unwrap(), live);
        let reopened = CurationStore::open(dir.path()).unwrap();
        assert_eq!(reopened.state(), &live);
    }

    #[test]
    fn torn_tail_is_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let before = populated(dir.path(), 1, 2).state().clone();
        let mut f = OpenOptions::new().append(true).open(dir.path().join(EVENTS_FILE)).unwrap();
        f.write_all(br#"{"event":"reviewed","candidate_id":"s0-r"#).unwrap();
        drop(f);
        let store = CurationStore::open(dir.path()).unwrap();
        assert_eq!(store.state(), &before);
        let text = fs::read_to_string(dir.path().join(EVENTS_FILE)).unwrap();
        assert!(text.ends_with('\n'));
    }
}
